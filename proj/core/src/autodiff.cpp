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

#include "recap/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "recap/errors.hpp"

namespace recap::num {

// ---- ParamStore -----------------------------------------------------------

void ParamStore::set(const std::string& name, Tensor value) { tensors_[name] = std::move(value); }

Tensor& ParamStore::at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
}

std::size_t ParamStore::numel() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
}

// ---- Mask -----------------------------------------------------------------

Mask::Mask(std::size_t n_q, std::size_t n_k, bool fill)
    : n_q_(n_q), n_k_(n_k), bits_(n_q * n_k, fill ? 1 : 0) {}

Mask Mask::causal(std::size_t n) {
    Mask m(n, n, false);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) m.set(i, j, true);
    return m;
}

// ---- Graph ----------------------------------------------------------------

const Tensor& Var::value() const { return graph->value(*this); }

Graph::Graph(const ParamStore* params, bool record) : params_(params), record_(record) {}

Var Graph::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
    return Var{this, nodes_.size() - 1};
}

Var Graph::param(const std::string& name) {
    if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return Var{this, it->second};
    if (params_ == nullptr) throw ContractError("graph has no parameter store; cannot bind '" + name + "'");
    return leaf(name, params_->at(name));
}

Var Graph::leaf(const std::string& name, Tensor value) {
    if (param_nodes_.count(name)) throw ContractError("duplicate leaf '" + name + "'");
    nodes_.push_back(Node{std::move(value), {}, {}, name, record_});
    param_nodes_[name] = nodes_.size() - 1;
    return Var{this, nodes_.size() - 1};
}

Var Graph::record(std::string op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(op), std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(fn));
}

Var Graph::record(std::string op, Tensor value, std::span<const Var> inputs, BackwardFn fn) {
    value.check_finite(op + " output");
    bool needs = false;
    if (record_) {
        for (const Var& in : inputs) {
            if (in.graph != this) throw ContractError(op + ": input belongs to a different graph");
            needs = needs || nodes_[in.id].requires_grad;
        }
    }
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, {}, needs});
    return Var{this, nodes_.size() - 1};
}

Tensor& Graph::grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor::zeros_like(n.value);
    if (n.grad.shape() != n.value.shape()) n.grad = Tensor::zeros_like(n.value);
    return n.grad;
}

Gradients Graph::backward(Var loss) {
    if (!record_) throw ContractError("backward on a graph built without recording");
    if (loss.graph != this) throw ContractError("backward: loss belongs to a different graph");
    if (value(loss).size() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_string(value(loss).shape()));
    }
    if (nodes_[loss.id].requires_grad) {
        grad(loss)[0] = 1.0;
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
            // The closure may grow grad buffers of earlier nodes; keep a copy of
            // the incoming gradient so the reference stays valid.
            Tensor g = std::move(n.grad);
            BackwardFn fn = std::move(n.backward);
            fn(*this, g);
            n.grad = std::move(g);
        }
    }
    Gradients out;
    if (params_ != nullptr) {
        for (const auto& [name, t] : params_->all()) out[name] = Tensor::zeros_like(t);
    }
    for (const auto& [name, id] : param_nodes_) {
        const Node& n = nodes_[id];
        out[name] = n.grad.empty() ? Tensor::zeros_like(n.value) : n.grad;
    }
    for (const auto& [name, g] : out) g.check_finite("gradient of " + name);
    return out;
}

// ---- Ops ------------------------------------------------------------------

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw DimensionError(msg);
}

Graph& graph_of(Var a) {
    if (a.graph == nullptr) throw ContractError("operation on an unbound Var");
    return *a.graph;
}

Graph& graph_of(Var a, Var b) {
    Graph& g = graph_of(a);
    if (b.graph != &g) throw ContractError("operands belong to different graphs");
    return g;
}

bool wants(Graph& g, Var v) { return g.requires_grad(v); }

}  // namespace

Var matmul(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require(A.rank() == 2 && B.rank() == 2, "matmul: expects rank-2 tensors");
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    require(B.rows() == k, "matmul: inner dimensions differ " + shape_string(A.shape()) + " x " +
                               shape_string(B.shape()));
    Tensor out(Shape{m, n});
    gemm_nn(A.ptr(), B.ptr(), out.ptr(), m, k, n);
    return g.record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Graph& g, const Tensor& dy) {
        if (wants(g, a)) gemm_nt(dy.ptr(), b.value().ptr(), g.grad(a).ptr(), m, n, k);
        if (wants(g, b)) gemm_tn(a.value().ptr(), dy.ptr(), g.grad(b).ptr(), k, m, n);
    });
}

Var matmul_nt(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require(A.rank() == 2 && B.rank() == 2, "matmul_nt: expects rank-2 tensors");
    const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
    require(B.cols() == k, "matmul_nt: inner dimensions differ " + shape_string(A.shape()) + " x " +
                               shape_string(B.shape()) + "^T");
    Tensor out(Shape{m, n});
    gemm_nt(A.ptr(), B.ptr(), out.ptr(), m, k, n);
    return g.record("matmul_nt", std::move(out), {a, b}, [a, b, m, k, n](Graph& g, const Tensor& dy) {
        if (wants(g, a)) gemm_nn(dy.ptr(), b.value().ptr(), g.grad(a).ptr(), m, n, k);
        if (wants(g, b)) gemm_tn(dy.ptr(), a.value().ptr(), g.grad(b).ptr(), n, m, k);
    });
}

Var add(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require(A.same_shape(B), "add: shapes differ " + shape_string(A.shape()) + " vs " + shape_string(B.shape()));
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    return g.record("add", std::move(out), {a, b}, [a, b](Graph& g, const Tensor& dy) {
        for (Var v : {a, b}) {
            if (!wants(g, v)) continue;
            Tensor& gv = g.grad(v);
            for (std::size_t i = 0; i < dy.size(); ++i) gv[i] += dy[i];
        }
    });
}

Var sub(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require(A.same_shape(B), "sub: shapes differ " + shape_string(A.shape()) + " vs " + shape_string(B.shape()));
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
    return g.record("sub", std::move(out), {a, b}, [a, b](Graph& g, const Tensor& dy) {
        if (wants(g, a)) {
            Tensor& ga = g.grad(a);
            for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i];
        }
        if (wants(g, b)) {
            Tensor& gb = g.grad(b);
            for (std::size_t i = 0; i < dy.size(); ++i) gb[i] -= dy[i];
        }
    });
}

Var mul(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require(A.same_shape(B), "mul: shapes differ " + shape_string(A.shape()) + " vs " + shape_string(B.shape()));
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    return g.record("mul", std::move(out), {a, b}, [a, b](Graph& g, const Tensor& dy) {
        if (wants(g, a)) {
            Tensor& ga = g.grad(a);
            const Tensor& B = b.value();
            for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] * B[i];
        }
        if (wants(g, b)) {
            Tensor& gb = g.grad(b);
            const Tensor& A = a.value();
            for (std::size_t i = 0; i < dy.size(); ++i) gb[i] += dy[i] * A[i];
        }
    });
}

Var scale(Var x, double factor) {
    Graph& g = graph_of(x);
    Tensor out = x.value();
    for (double& v : out.data()) v *= factor;
    return g.record("scale", std::move(out), {x}, [x, factor](Graph& g, const Tensor& dy) {
        Tensor& gx = g.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i) gx[i] += dy[i] * factor;
    });
}

Var add_row(Var x, Var bias) {
    Graph& g = graph_of(x, bias);
    const Tensor& X = x.value();
    const Tensor& b = bias.value();
    const std::size_t r = X.rows(), c = X.cols();
    require(b.size() == c, "add_row: bias length " + std::to_string(b.size()) + " != cols " + std::to_string(c));
    Tensor out = X;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b[j];
    return g.record("add_row", std::move(out), {x, bias}, [x, bias, r, c](Graph& g, const Tensor& dy) {
        if (wants(g, x)) {
            Tensor& gx = g.grad(x);
            for (std::size_t i = 0; i < dy.size(); ++i) gx[i] += dy[i];
        }
        if (wants(g, bias)) {
            Tensor& gb = g.grad(bias);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gb[j] += dy[i * c + j];
        }
    });
}

Var scalar_mul(Var s, Var x) {
    Graph& g = graph_of(s, x);
    require(s.value().size() == 1, "scalar_mul: first operand must hold one value");
    const double sv = s.value()[0];
    Tensor out = x.value();
    for (double& v : out.data()) v *= sv;
    return g.record("scalar_mul", std::move(out), {s, x}, [s, x](Graph& g, const Tensor& dy) {
        const Tensor& X = x.value();
        if (wants(g, s)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < dy.size(); ++i) acc += dy[i] * X[i];
            g.grad(s)[0] += acc;
        }
        if (wants(g, x)) {
            const double sv = s.value()[0];
            Tensor& gx = g.grad(x);
            for (std::size_t i = 0; i < dy.size(); ++i) gx[i] += dy[i] * sv;
        }
    });
}

Var sigmoid(Var x) {
    Graph& g = graph_of(x);
    Tensor out = x.value();
    for (double& v : out.data()) v = 1.0 / (1.0 + std::exp(-v));
    auto y = std::make_shared<Tensor>(out);
    return g.record("sigmoid", std::move(out), {x}, [x, y](Graph& g, const Tensor& dy) {
        const Tensor& Y = *y;
        Tensor& gx = g.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i) gx[i] += dy[i] * Y[i] * (1.0 - Y[i]);
    });
}

Var relu(Var x) {
    Graph& g = graph_of(x);
    Tensor out = x.value();
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return g.record("relu", std::move(out), {x}, [x](Graph& g, const Tensor& dy) {
        const Tensor& X = x.value();
        Tensor& gx = g.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i)
            if (X[i] > 0.0) gx[i] += dy[i];
    });
}

Var sum(Var x) {
    Graph& g = graph_of(x);
    double acc = 0.0;
    for (double v : x.value().data()) acc += v;
    return g.record("sum", Tensor::scalar(acc), {x}, [x](Graph& g, const Tensor& dy) {
        Tensor& gx = g.grad(x);
        for (double& v : gx.data()) v += dy[0];
    });
}

namespace {

// Softmax over one row restricted to allowed entries (all when allow is null).
void softmax_row(const double* in, double* out, std::size_t n, const std::uint8_t* allow) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
        if (!allow || allow[j]) mx = std::max(mx, in[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        out[j] = (!allow || allow[j]) ? std::exp(in[j] - mx) : 0.0;
        denom += out[j];
    }
    const double inv = 1.0 / denom;
    for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
}

}  // namespace

Tensor softmax_rows(const Tensor& x) {
    if (x.empty() || x.cols() == 0) throw DimensionError("softmax_rows: empty tensor");
    Tensor out = Tensor::zeros_like(x);
    const std::size_t r = x.rows(), c = x.cols();
    for (std::size_t i = 0; i < r; ++i) softmax_row(x.ptr() + i * c, out.ptr() + i * c, c, nullptr);
    return out;
}

Tensor log_softmax_rows(const Tensor& x) {
    if (x.empty() || x.cols() == 0) throw DimensionError("log_softmax_rows: empty tensor");
    Tensor out = x;
    const std::size_t r = x.rows(), c = x.cols();
    for (std::size_t i = 0; i < r; ++i) {
        double* row = out.ptr() + i * c;
        const double mx = *std::max_element(row, row + c);
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
        const double lse = mx + std::log(denom);
        for (std::size_t j = 0; j < c; ++j) row[j] -= lse;
    }
    return out;
}

Var softmax_rows(Var x) {
    Graph& g = graph_of(x);
    Tensor out = softmax_rows(x.value());
    const std::size_t r = out.rows(), c = out.cols();
    auto probs = std::make_shared<Tensor>(out);
    return g.record("softmax_rows", std::move(out), {x}, [x, probs, r, c](Graph& g, const Tensor& dy) {
        Tensor& gx = g.grad(x);
        const Tensor& P = *probs;
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += dy[i * c + j] * P[i * c + j];
            for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += P[i * c + j] * (dy[i * c + j] - dot);
        }
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    Graph& g = graph_of(x, gain);
    if (bias.graph != &g) throw ContractError("layer_norm: operands belong to different graphs");
    const Tensor& X = x.value();
    const std::size_t r = X.rows(), c = X.cols();
    require(gain.value().size() == c && bias.value().size() == c,
            "layer_norm: gain/bias length must equal last dimension " + std::to_string(c));
    auto xhat = std::make_shared<Tensor>(Tensor::zeros_like(X));
    auto inv_std = std::make_shared<std::vector<double>>(r, 0.0);
    Tensor out = Tensor::zeros_like(X);
    const Tensor& G = gain.value();
    const Tensor& B = bias.value();
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = X.ptr() + i * c;
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += row[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(c);
        // A zero-variance row with eps == 0 normalizes to zeros (output = bias).
        const double inv = (var + eps) > 0.0 ? 1.0 / std::sqrt(var + eps) : 0.0;
        (*inv_std)[i] = inv;
        for (std::size_t j = 0; j < c; ++j) {
            const double h = (row[j] - mean) * inv;
            (*xhat)[i * c + j] = h;
            out[i * c + j] = G[j] * h + B[j];
        }
    }
    return g.record("layer_norm", std::move(out), {x, gain, bias},
                    [x, gain, bias, xhat, inv_std, r, c](Graph& g, const Tensor& dy) {
                        const Tensor& H = *xhat;
                        const Tensor& G = gain.value();
                        if (wants(g, gain)) {
                            Tensor& gg = g.grad(gain);
                            for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < c; ++j) gg[j] += dy[i * c + j] * H[i * c + j];
                        }
                        if (wants(g, bias)) {
                            Tensor& gb = g.grad(bias);
                            for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < c; ++j) gb[j] += dy[i * c + j];
                        }
                        if (!wants(g, x)) return;
                        Tensor& gx = g.grad(x);
                        const double n = static_cast<double>(c);
                        for (std::size_t i = 0; i < r; ++i) {
                            double mean_dh = 0.0, mean_dh_h = 0.0;
                            for (std::size_t j = 0; j < c; ++j) {
                                const double dh = dy[i * c + j] * G[j];
                                mean_dh += dh;
                                mean_dh_h += dh * H[i * c + j];
                            }
                            mean_dh /= n;
                            mean_dh_h /= n;
                            const double inv = (*inv_std)[i];
                            for (std::size_t j = 0; j < c; ++j) {
                                const double dh = dy[i * c + j] * G[j];
                                gx[i * c + j] += inv * (dh - mean_dh - H[i * c + j] * mean_dh_h);
                            }
                        }
                    });
}

Var embedding(Var table, std::span<const int> ids) {
    Graph& g = graph_of(table);
    const Tensor& T = table.value();
    require(T.rank() == 2, "embedding: table must be rank 2");
    const std::size_t vocab = T.rows(), c = T.cols();
    Tensor out(Shape{ids.size(), c});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw DimensionError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                                 std::to_string(vocab) + " rows");
        }
        std::copy_n(T.ptr() + static_cast<std::size_t>(ids[i]) * c, c, out.ptr() + i * c);
    }
    std::vector<int> idv(ids.begin(), ids.end());
    return g.record("embedding", std::move(out), {table}, [table, idv = std::move(idv), c](Graph& g, const Tensor& dy) {
        Tensor& gt = g.grad(table);
        for (std::size_t i = 0; i < idv.size(); ++i) {
            double* dst = gt.ptr() + static_cast<std::size_t>(idv[i]) * c;
            for (std::size_t j = 0; j < c; ++j) dst[j] += dy[i * c + j];
        }
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    Graph& g = graph_of(parts[0]);
    const std::size_t c = parts[0].value().cols();
    std::size_t total = 0;
    for (const Var& p : parts) {
        require(p.value().cols() == c, "concat_rows: column counts differ");
        total += p.value().rows();
    }
    Tensor out(Shape{total, c});
    std::size_t off = 0;
    for (const Var& p : parts) {
        std::copy_n(p.value().ptr(), p.value().size(), out.ptr() + off);
        off += p.value().size();
    }
    std::vector<Var> ins(parts.begin(), parts.end());
    return g.record("concat_rows", std::move(out), parts, [ins](Graph& g, const Tensor& dy) {
        std::size_t off = 0;
        for (const Var& p : ins) {
            const std::size_t n = p.value().size();
            if (wants(g, p)) {
                Tensor& gp = g.grad(p);
                for (std::size_t i = 0; i < n; ++i) gp[i] += dy[off + i];
            }
            off += n;
        }
    });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
    Graph& g = graph_of(x);
    const Tensor& X = x.value();
    const std::size_t c = X.cols();
    require(begin <= end && end <= X.rows(), "slice_rows: range out of bounds");
    Tensor out(Shape{end - begin, c});
    std::copy_n(X.ptr() + begin * c, (end - begin) * c, out.ptr());
    return g.record("slice_rows", std::move(out), {x}, [x, begin, c](Graph& g, const Tensor& dy) {
        Tensor& gx = g.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i) gx[begin * c + i] += dy[i];
    });
}

Var attention(Var q, Var k, Var v, const Mask* mask, std::size_t n_heads) {
    Graph& g = graph_of(q, k);
    if (v.graph != &g) throw ContractError("attention: operands belong to different graphs");
    const Tensor& Q = q.value();
    const Tensor& K = k.value();
    const Tensor& V = v.value();
    const std::size_t nq = Q.rows(), nk = K.rows(), d = Q.cols();
    require(K.cols() == d && V.cols() == d, "attention: q/k/v widths differ");
    require(V.rows() == nk, "attention: keys and values differ in count");
    require(n_heads >= 1 && d % n_heads == 0, "attention: width not divisible by head count");
    require(nk >= 1, "attention: no keys");
    if (mask) {
        require(mask->n_q() == nq && mask->n_k() == nk, "attention: mask shape mismatch");
    }
    const std::size_t dh = d / n_heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<std::uint8_t> allow;
    if (mask) {
        allow.resize(nq * nk);
        for (std::size_t i = 0; i < nq; ++i) {
            bool any = false;
            for (std::size_t j = 0; j < nk; ++j) {
                allow[i * nk + j] = mask->allowed(i, j) ? 1 : 0;
                any = any || allow[i * nk + j];
            }
            if (!any) throw ContractError("attention: query row " + std::to_string(i) + " has no attendable key");
        }
    }

    auto probs = std::make_shared<std::vector<double>>(n_heads * nq * nk);
    Tensor out(Shape{nq, d});
    std::vector<double> scores(nk);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < nq; ++i) {
            const double* qi = Q.ptr() + i * d + off;
            for (std::size_t j = 0; j < nk; ++j) {
                const double* kj = K.ptr() + j * d + off;
                double acc = 0.0;
                for (std::size_t t = 0; t < dh; ++t) acc += qi[t] * kj[t];
                scores[j] = acc * sc;
            }
            double* p = probs->data() + (h * nq + i) * nk;
            softmax_row(scores.data(), p, nk, mask ? allow.data() + i * nk : nullptr);
            double* oi = out.ptr() + i * d + off;
            for (std::size_t j = 0; j < nk; ++j) {
                const double pj = p[j];
                const double* vj = V.ptr() + j * d + off;
                for (std::size_t t = 0; t < dh; ++t) oi[t] += pj * vj[t];
            }
        }
    }

    return g.record("attention", std::move(out), {q, k, v},
                    [q, k, v, probs, nq, nk, d, dh, n_heads, sc](Graph& g, const Tensor& dy) {
                        const Tensor& Q = q.value();
                        const Tensor& K = k.value();
                        const Tensor& V = v.value();
                        const bool gq = wants(g, q), gk = wants(g, k), gv = wants(g, v);
                        Tensor* dQ = gq ? &g.grad(q) : nullptr;
                        Tensor* dK = gk ? &g.grad(k) : nullptr;
                        Tensor* dV = gv ? &g.grad(v) : nullptr;
                        std::vector<double> dp(nk);
                        for (std::size_t h = 0; h < n_heads; ++h) {
                            const std::size_t off = h * dh;
                            for (std::size_t i = 0; i < nq; ++i) {
                                const double* p = probs->data() + (h * nq + i) * nk;
                                const double* gi = dy.ptr() + i * d + off;
                                double dot = 0.0;
                                for (std::size_t j = 0; j < nk; ++j) {
                                    const double* vj = V.ptr() + j * d + off;
                                    double acc = 0.0;
                                    for (std::size_t t = 0; t < dh; ++t) acc += gi[t] * vj[t];
                                    dp[j] = acc;
                                    dot += acc * p[j];
                                    if (dV) {
                                        double* dvj = dV->ptr() + j * d + off;
                                        for (std::size_t t = 0; t < dh; ++t) dvj[t] += p[j] * gi[t];
                                    }
                                }
                                for (std::size_t j = 0; j < nk; ++j) {
                                    const double ds = p[j] * (dp[j] - dot) * sc;
                                    if (ds == 0.0) continue;
                                    if (dQ) {
                                        double* dqi = dQ->ptr() + i * d + off;
                                        const double* kj = K.ptr() + j * d + off;
                                        for (std::size_t t = 0; t < dh; ++t) dqi[t] += ds * kj[t];
                                    }
                                    if (dK) {
                                        double* dkj = dK->ptr() + j * d + off;
                                        const double* qi = Q.ptr() + i * d + off;
                                        for (std::size_t t = 0; t < dh; ++t) dkj[t] += ds * qi[t];
                                    }
                                }
                            }
                        }
                    });
}

Var weighted_token_nll(Var logits, std::span<const int> targets, std::span<const double> weights) {
    Graph& g = graph_of(logits);
    const Tensor& L = logits.value();
    const std::size_t r = L.rows(), c = L.cols();
    if (targets.size() != r || weights.size() != r) {
        throw ContractError("weighted_token_nll: " + std::to_string(r) + " logit rows but " +
                            std::to_string(targets.size()) + " targets and " + std::to_string(weights.size()) +
                            " weights");
    }
    double loss = 0.0;
    for (std::size_t t = 0; t < r; ++t) {
        if (weights[t] == 0.0) continue;
        if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= c) {
            throw DimensionError("weighted_token_nll: target " + std::to_string(targets[t]) + " out of range");
        }
        const double* row = L.ptr() + t * c;
        const double mx = *std::max_element(row, row + c);
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
        loss += weights[t] * (mx + std::log(denom) - row[targets[t]]);
    }
    std::vector<int> tv(targets.begin(), targets.end());
    std::vector<double> wv(weights.begin(), weights.end());
    return g.record("weighted_token_nll", Tensor::scalar(loss), {logits},
                    [logits, tv = std::move(tv), wv = std::move(wv), r, c](Graph& g, const Tensor& dy) {
                        const Tensor& L = logits.value();
                        Tensor& gl = g.grad(logits);
                        std::vector<double> p(c);
                        for (std::size_t t = 0; t < r; ++t) {
                            if (wv[t] == 0.0) continue;
                            softmax_row(L.ptr() + t * c, p.data(), c, nullptr);
                            const double w = wv[t] * dy[0];
                            double* dst = gl.ptr() + t * c;
                            for (std::size_t j = 0; j < c; ++j) dst[j] += w * p[j];
                            dst[tv[t]] -= w;
                        }
                    });
}

}  // namespace recap::num
