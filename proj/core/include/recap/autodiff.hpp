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
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "recap/tensor.hpp"

namespace recap::num {

/// Named trainable tensors. Ordered by name so every traversal (init,
/// serialization, optimizer updates) is deterministic.
class ParamStore {
 public:
    void set(const std::string& name, Tensor value);
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    const std::map<std::string, Tensor>& all() const { return tensors_; }
    std::map<std::string, Tensor>& all() { return tensors_; }
    std::size_t size() const { return tensors_.size(); }
    /// Total number of scalar parameters.
    std::size_t numel() const;

    friend bool operator==(const ParamStore& a, const ParamStore& b) = default;

 private:
    std::map<std::string, Tensor> tensors_;
};

using Gradients = std::map<std::string, Tensor>;

/// Boolean attention mask, `allowed(i, j)` means query i may attend key j.
class Mask {
 public:
    Mask() = default;
    Mask(std::size_t n_q, std::size_t n_k, bool fill);
    static Mask causal(std::size_t n);

    std::size_t n_q() const { return n_q_; }
    std::size_t n_k() const { return n_k_; }
    bool allowed(std::size_t i, std::size_t j) const { return bits_[i * n_k_ + j] != 0; }
    void set(std::size_t i, std::size_t j, bool v) { bits_[i * n_k_ + j] = v ? 1 : 0; }

 private:
    std::size_t n_q_ = 0;
    std::size_t n_k_ = 0;
    std::vector<std::uint8_t> bits_;
};

class Graph;

/// Handle to a node of a Graph.
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Tape of recorded operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the tape is acyclic by
/// construction and reverse insertion order is a valid topological order.
/// A graph built with `record = false` keeps values only (inference mode).
class Graph {
 public:
    using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

    explicit Graph(const ParamStore* params = nullptr, bool record = true);
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    /// Leaf bound to `name` in the attached store; registered once per graph.
    Var param(const std::string& name);
    /// Trainable leaf that is not backed by a store.
    Var leaf(const std::string& name, Tensor value);

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    bool recording() const { return record_; }
    std::size_t node_count() const { return nodes_.size(); }
    const ParamStore* params() const { return params_; }

    /// Gradient of the scalar `loss` with respect to every trainable leaf and
    /// every tensor of the attached store. Store entries the loss does not
    /// touch get zero gradients of matching shape.
    Gradients backward(Var loss);

    // Op-implementation interface.
    Var record(std::string op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
    Var record(std::string op, Tensor value, std::span<const Var> inputs, BackwardFn fn);
    /// Gradient buffer of `v`, zero-initialized on first use. Only valid
    /// during backward() and only for nodes that require grad.
    Tensor& grad(Var v);

 private:
    struct Node {
        Tensor value;
        Tensor grad;
        BackwardFn backward;
        std::string param_name;
        bool requires_grad = false;
    };

    const ParamStore* params_;
    bool record_;
    std::vector<Node> nodes_;
    std::map<std::string, std::size_t> param_nodes_;
};

// ---- Operations -----------------------------------------------------------
// Every op checks shapes (DimensionError) and that its output is finite
// (NumericalError). Matrix ops work on the rows x cols view of a tensor.

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
/// Adds a vector of length cols to every row.
Var add_row(Var x, Var bias);
/// Scalar var times tensor.
Var scalar_mul(Var s, Var x);
Var sigmoid(Var x);
Var relu(Var x);
Var sum(Var x);
Var softmax_rows(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Row gather from an embedding table.
Var embedding(Var table, std::span<const int> ids);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var x, std::size_t begin, std::size_t end);

/// Scaled dot-product attention over `n_heads` column groups of q/k/v.
/// Scores are scaled by 1/sqrt(head_dim). A disallowed mask entry receives
/// -inf before the softmax; a query row with no allowed key is a ContractError.
Var attention(Var q, Var k, Var v, const Mask* mask, std::size_t n_heads);

/// Sum over rows t of weights[t] * -log softmax(logits[t])[targets[t]].
Var weighted_token_nll(Var logits, std::span<const int> targets, std::span<const double> weights);

// Plain tensor helpers without a tape.
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);

}  // namespace recap::num
