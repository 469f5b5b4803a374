// Copyright 2026 The recap Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "recap/gradcheck.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

#include "recap/errors.hpp"

namespace recap::num {

namespace {

double evaluate(const LossFn& loss, const ParamStore& params) {
    Graph g(&params, /*record=*/false);
    Var l = loss(g);
    if (l.value().size() != 1) throw ContractError("finite_diff_check: loss is not scalar");
    return l.value()[0];
}

}  // namespace

GradCheckReport finite_diff_check(const LossFn& loss, ParamStore& params, const GradCheckOptions& opts) {
    if (!(opts.eps > 0.0)) throw ContractError("finite_diff_check: eps must be positive");

    Gradients analytic;
    {
        Graph g(&params);
        analytic = g.backward(loss(g));
    }
    const double base1 = evaluate(loss, params);
    const double base2 = evaluate(loss, params);
    if (std::bit_cast<std::uint64_t>(base1) != std::bit_cast<std::uint64_t>(base2)) {
        throw ContractError("finite_diff_check: loss function is not deterministic");
    }

    GradCheckReport report;
    for (auto& [name, tensor] : params.all()) {
        const Tensor& ga = analytic.at(name);
        const std::size_t n = tensor.size();
        std::size_t stride = 1;
        if (opts.max_elements_per_param > 0 && n > opts.max_elements_per_param) {
            stride = (n + opts.max_elements_per_param - 1) / opts.max_elements_per_param;
        }
        double worst = 0.0;
        for (std::size_t i = 0; i < n; i += stride) {
            const double orig = tensor[i];
            tensor[i] = orig + opts.eps;
            const double up = evaluate(loss, params);
            tensor[i] = orig - opts.eps;
            const double down = evaluate(loss, params);
            tensor[i] = orig;
            const double numeric = (up - down) / (2.0 * opts.eps);
            const double a = ga[i];
            const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            worst = std::max(worst, rel);
            ++report.elements_checked;
        }
        report.max_rel_error[name] = worst;
        if (worst >= report.worst) {
            report.worst = worst;
            report.worst_param = name;
        }
    }
    return report;
}

}  // namespace recap::num
