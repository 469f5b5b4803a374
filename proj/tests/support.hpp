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

#include <random>
#include <vector>

#include "oracle/scalar_transformer.hpp"
#include "recap/model.hpp"

namespace support {

using recap::model::ModelConfig;
using recap::model::Variant;

inline ModelConfig small_config(Variant v, std::size_t layers = 1) {
    ModelConfig c;
    c.d_model = 8;
    c.n_layers = layers;
    c.n_heads = 2;
    c.ffn_mult = 2;
    c.max_len = 8;
    c.variant = v;
    c.k_retrieved = 2;
    c.prefix_cap = 6;
    c.feature_dim = 5;
    c.vocab_size = 12;
    return c;
}

inline recap::num::Tensor random_grid(std::mt19937_64& rng, std::size_t cells, std::size_t dim) {
    std::normal_distribution<double> n(0.0, 1.0);
    recap::num::Tensor t(recap::num::Shape{cells, dim});
    for (double& x : t.data()) x = n(rng);
    return t;
}

/// `n` ids drawn from the non-special range [4, vocab).
inline std::vector<int> random_ids(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
    std::vector<int> out(n);
    for (int& x : out) x = 4 + static_cast<int>(rng() % (vocab - 4));
    return out;
}

/// BOS followed by n random ids.
inline std::vector<int> random_input(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
    std::vector<int> out{1};
    const auto ids = random_ids(rng, n, vocab);
    out.insert(out.end(), ids.begin(), ids.end());
    return out;
}

inline oracle::Mat to_mat(const recap::num::Tensor& t) {
    oracle::Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
    return m;
}

inline double max_abs_diff(const recap::num::Tensor& a, const oracle::Mat& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) worst = std::max(worst, std::abs(a.at(i, j) - b[i][j]));
    return worst;
}

inline double max_abs_diff(const recap::num::Tensor& a, const recap::num::Tensor& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

/// Copies the tensors a baseline model of the same shape uses.
inline recap::num::ParamStore baseline_subset(const recap::num::ParamStore& full, const ModelConfig& cfg) {
    ModelConfig b = cfg;
    b.variant = Variant::baseline;
    auto out = recap::model::init_params(b, 0);
    for (auto& [name, t] : out.all()) t = full.at(name);
    return out;
}

}  // namespace support
