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

#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>

#include "recap/autodiff.hpp"

namespace recap::num {

/// Builds a scalar loss inside the given graph. Must be deterministic.
using LossFn = std::function<Var(Graph&)>;

struct GradCheckOptions {
    double eps = 1e-5;
    /// Upper bound on checked elements per tensor; 0 checks all of them.
    /// Larger tensors are sampled at an even stride.
    std::size_t max_elements_per_param = 0;
};

struct GradCheckReport {
    std::map<std::string, double> max_rel_error;
    double worst = 0.0;
    std::string worst_param;
    std::size_t elements_checked = 0;
};

/// Compares analytic gradients against central finite differences.
/// Relative error per element is |a - n| / max(1e-8, |a| + |n|). `params` is
/// perturbed in place and restored before returning.
GradCheckReport finite_diff_check(const LossFn& loss, ParamStore& params, const GradCheckOptions& opts = {});

}  // namespace recap::num
