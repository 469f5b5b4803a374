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

#include "recap/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/core.h>

#include "recap/errors.hpp"

namespace recap::model {

using num::Graph;
using num::Mask;
using num::ParamStore;
using num::Shape;
using num::Tensor;
using num::Var;

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::baseline:
            return "baseline";
        case Variant::ra_ts:
            return "ra_ts";
        case Variant::ra_tx:
            return "ra_tx";
    }
    return "?";
}

Variant parse_variant(std::string_view s) {
    if (s == "baseline") return Variant::baseline;
    if (s == "ra_ts") return Variant::ra_ts;
    if (s == "ra_tx") return Variant::ra_tx;
    throw InputError("unknown variant '" + std::string(s) + "' (expected baseline, ra_ts or ra_tx)");
}

void ModelConfig::validate() const {
    const auto fail = [](const std::string& m) { throw ContractError("model config: " + m); };
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) fail("d_model must be a positive multiple of n_heads");
    if (ffn_mult == 0) fail("ffn_mult must be positive");
    if (max_len < 2) fail("max_len must be at least 2");
    if (feature_dim == 0) fail("feature_dim must be set");
    if (vocab_size < 5) fail("vocab_size must cover the special ids and at least one token");
}

namespace {

std::size_t to_size(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size() || v.find('-') != std::string::npos) throw std::invalid_argument(v);
        return static_cast<std::size_t>(x);
    } catch (const std::exception&) {
        throw InputError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw InputError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw InputError("config key '" + key + "': expected true or false, got '" + v + "'");
}

// Shortest text that reads back to the same double.
std::string fmt_double(double x) { return fmt::format("{}", x); }

}  // namespace

std::map<std::string, std::string> ModelConfig::to_kv() const {
    return {
        {"model.d_model", std::to_string(d_model)},
        {"model.n_layers", std::to_string(n_layers)},
        {"model.n_heads", std::to_string(n_heads)},
        {"model.ffn_mult", std::to_string(ffn_mult)},
        {"model.max_len", std::to_string(max_len)},
        {"model.variant", std::string(to_string(variant))},
        {"model.k_retrieved", std::to_string(k_retrieved)},
        {"model.prefix_cap", std::to_string(prefix_cap)},
        {"model.gate_init", fmt_double(gate_init)},
        {"model.shared_gate", shared_gate ? "true" : "false"},
        {"model.visual_positions", visual_positions ? "true" : "false"},
        {"model.feature_dim", std::to_string(feature_dim)},
        {"model.vocab_size", std::to_string(vocab_size)},
    };
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    for (const auto& [k, v] : kv) {
        if (k == "model.d_model") c.d_model = to_size(k, v);
        else if (k == "model.n_layers") c.n_layers = to_size(k, v);
        else if (k == "model.n_heads") c.n_heads = to_size(k, v);
        else if (k == "model.ffn_mult") c.ffn_mult = to_size(k, v);
        else if (k == "model.max_len") c.max_len = to_size(k, v);
        else if (k == "model.variant") c.variant = parse_variant(v);
        else if (k == "model.k_retrieved") c.k_retrieved = to_size(k, v);
        else if (k == "model.prefix_cap") c.prefix_cap = to_size(k, v);
        else if (k == "model.gate_init") c.gate_init = to_double(k, v);
        else if (k == "model.shared_gate") c.shared_gate = to_bool(k, v);
        else if (k == "model.visual_positions") c.visual_positions = to_bool(k, v);
        else if (k == "model.feature_dim") c.feature_dim = to_size(k, v);
        else if (k == "model.vocab_size") c.vocab_size = to_size(k, v);
    }
    return c;
}

// ---- Initialization ---------------------------------------------------------

namespace {

class Initializer {
 public:
    Initializer(ParamStore& store, std::uint64_t seed) : store_(store), rng_(seed) {}

    void uniform(const std::string& name, std::size_t rows, std::size_t cols, double limit) {
        Tensor t(Shape{rows, cols});
        // 53 random bits mapped to [-limit, limit); avoids distribution
        // objects whose output differs between standard libraries.
        for (double& x : t.data()) x = limit * (2.0 * static_cast<double>(rng_() >> 11) * 0x1.0p-53 - 1.0);
        store_.set(name, std::move(t));
    }
    void xavier(const std::string& name, std::size_t fan_in, std::size_t fan_out) {
        uniform(name, fan_in, fan_out, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
    }
    void fill(const std::string& name, std::size_t n, double v) { store_.set(name, Tensor(Shape{n}, v)); }
    void layer_norm(const std::string& name, std::size_t d) {
        fill(name + ".g", d, 1.0);
        fill(name + ".b", d, 0.0);
    }
    void attention(const std::string& p, std::size_t d, bool with_query = true) {
        if (with_query) xavier(p + ".wq", d, d);
        xavier(p + ".wk", d, d);
        xavier(p + ".wv", d, d);
        xavier(p + ".wo", d, d);
    }
    void ffn(const std::string& p, std::size_t d, std::size_t f) {
        xavier(p + ".w1", d, f);
        fill(p + ".b1", f, 0.0);
        xavier(p + ".w2", f, d);
        fill(p + ".b2", d, 0.0);
    }
    void encoder_layer(const std::string& p, std::size_t d, std::size_t f) {
        attention(p + ".attn", d);
        layer_norm(p + ".ln1", d);
        ffn(p + ".ffn", d, f);
        layer_norm(p + ".ln2", d);
    }

 private:
    ParamStore& store_;
    std::mt19937_64 rng_;
};

std::string layer_name(const char* stack, std::size_t l) { return std::string(stack) + "." + std::to_string(l); }

}  // namespace

std::string gate_param(const ModelConfig& cfg, std::size_t layer) {
    return cfg.shared_gate ? std::string("dec.gate") : layer_name("dec", layer) + ".gate";
}

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamStore store;
    Initializer init(store, seed);
    const std::size_t d = cfg.d_model, f = cfg.d_model * cfg.ffn_mult, v = cfg.vocab_size;
    const double emb_limit = std::sqrt(3.0 / static_cast<double>(d));

    init.uniform("embed.tokens", v, d, emb_limit);
    if (cfg.variant == Variant::ra_ts) init.uniform("embed.segment", 2, d, emb_limit);
    init.xavier("enc.in.w", cfg.feature_dim, d);
    init.fill("enc.in.b", d, 0.0);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) init.encoder_layer(layer_name("enc", l), d, f);
    if (cfg.variant == Variant::ra_tx) init.encoder_layer("ret.0", d, f);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = layer_name("dec", l);
        init.attention(p + ".self", d);
        init.layer_norm(p + ".ln_self", d);
        if (cfg.variant == Variant::ra_tx) {
            init.attention(p + ".knn", d, false);
            init.layer_norm(p + ".ln_knn", d);
            if (!cfg.shared_gate) init.fill(p + ".gate", 1, cfg.gate_init);
        }
        init.attention(p + ".cross", d);
        init.layer_norm(p + ".ln_cross", d);
        init.ffn(p + ".ffn", d, f);
        init.layer_norm(p + ".ln_ffn", d);
    }
    if (cfg.variant == Variant::ra_tx && cfg.shared_gate) init.fill("dec.gate", 1, cfg.gate_init);
    init.xavier("out.w", d, v);
    init.fill("out.b", v, 0.0);
    return store;
}

Tensor sinusoidal_positions(std::size_t n, std::size_t d) {
    Tensor pe(Shape{n, d});
    for (std::size_t pos = 0; pos < n; ++pos) {
        for (std::size_t i = 0; i < d; i += 2) {
            const double angle =
                static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
            pe.at(pos, i) = std::sin(angle);
            if (i + 1 < d) pe.at(pos, i + 1) = std::cos(angle);
        }
    }
    return pe;
}

Conditioning make_conditioning(const std::vector<std::string>& retrieved, const text::Vocabulary& vocab,
                               const text::StopWordList& stops, const ModelConfig& cfg) {
    Conditioning c;
    if (cfg.variant == Variant::ra_ts) {
        for (const auto& w : text::unique_words(retrieved, stops, cfg.prefix_cap)) {
            const auto ids = vocab.encode_word(w);
            if (c.prefix.size() + ids.size() > cfg.prefix_cap) break;
            c.prefix.insert(c.prefix.end(), ids.begin(), ids.end());
        }
    } else if (cfg.variant == Variant::ra_tx) {
        for (const auto& cap : retrieved) {
            auto ids = vocab.encode(cap).ids;
            if (ids.size() > cfg.max_len) ids.resize(cfg.max_len);
            if (!ids.empty()) c.captions.push_back(std::move(ids));
        }
    }
    return c;
}

// ---- Graph blocks -------------------------------------------------------------

namespace {

Var linear(Graph& g, Var x, const std::string& w, const std::string& b) {
    return num::add_row(num::matmul(x, g.param(w)), g.param(b));
}

Var norm(Graph& g, Var x, const std::string& p) { return num::layer_norm(x, g.param(p + ".g"), g.param(p + ".b")); }

Var ffn(Graph& g, Var x, const std::string& p) {
    return linear(g, num::relu(linear(g, x, p + ".w1", p + ".b1")), p + ".w2", p + ".b2");
}

// Attention given precomputed queries; keys, values and output use `p`.
Var attend(Graph& g, const std::string& p, Var q, Var kv, const Mask* mask, std::size_t heads) {
    const Var k = num::matmul(kv, g.param(p + ".wk"));
    const Var v = num::matmul(kv, g.param(p + ".wv"));
    return num::matmul(num::attention(q, k, v, mask, heads), g.param(p + ".wo"));
}

Var encoder_layer(Graph& g, const std::string& p, Var x, std::size_t heads) {
    const Var a = norm(g, num::add(x, attention_block(g, p + ".attn", x, x, nullptr, heads)), p + ".ln1");
    return norm(g, num::add(a, ffn(g, a, p + ".ffn")), p + ".ln2");
}

void check_ids(std::span<const int> ids, std::size_t vocab, const char* what) {
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= vocab)
            throw ContractError(std::string(what) + ": token id " + std::to_string(id) + " outside the vocabulary");
}

}  // namespace

Var attention_block(Graph& g, const std::string& prefix, Var x_q, Var kv, const Mask* mask, std::size_t n_heads) {
    const Var q = num::matmul(x_q, g.param(prefix + ".wq"));
    return attend(g, prefix, q, kv, mask, n_heads);
}

Var encode_image(Graph& g, const ModelConfig& cfg, const Tensor& grid) {
    if (grid.rank() != 2 || grid.cols() != cfg.feature_dim)
        throw DimensionError("encode_image: grid is " + num::shape_string(grid.shape()) + ", expected g x " +
                             std::to_string(cfg.feature_dim));
    if (grid.rows() == 0) throw DimensionError("encode_image: grid has no cells");
    Var x = linear(g, g.constant(grid), "enc.in.w", "enc.in.b");
    if (cfg.visual_positions) x = num::add(x, g.constant(sinusoidal_positions(grid.rows(), cfg.d_model)));
    for (std::size_t l = 0; l < cfg.n_layers; ++l) x = encoder_layer(g, layer_name("enc", l), x, cfg.n_heads);
    return x;
}

std::optional<Var> encode_retrieved(Graph& g, const ModelConfig& cfg, const std::vector<std::vector<int>>& captions) {
    std::vector<Var> parts;
    for (const auto& cap : captions) {
        if (cap.empty()) continue;
        if (cap.size() > cfg.max_len) throw ContractError("encode_retrieved: caption longer than max_len");
        check_ids(cap, cfg.vocab_size, "encode_retrieved");
        Var e = num::embedding(g.param("embed.tokens"), cap);
        e = num::add(e, g.constant(sinusoidal_positions(cap.size(), cfg.d_model)));
        parts.push_back(encoder_layer(g, "ret.0", e, cfg.n_heads));
    }
    if (parts.empty()) return std::nullopt;
    if (parts.size() == 1) return parts[0];
    return num::concat_rows(parts);
}

Var build_rats_input(Graph& g, const ModelConfig& cfg, std::span<const int> prefix, std::span<const int> tokens) {
    if (tokens.empty()) throw ContractError("build_rats_input: no caption tokens");
    if (prefix.size() + tokens.size() > cfg.prefix_cap + cfg.max_len || prefix.size() > cfg.prefix_cap ||
        tokens.size() > cfg.max_len)
        throw ContractError("build_rats_input: prefix of " + std::to_string(prefix.size()) + " and caption of " +
                            std::to_string(tokens.size()) + " tokens exceed the limits");
    check_ids(prefix, cfg.vocab_size, "build_rats_input");
    check_ids(tokens, cfg.vocab_size, "build_rats_input");
    const Var table = g.param("embed.tokens");
    const Var seg = g.param("embed.segment");
    Var cap = num::embedding(table, tokens);
    cap = num::add_row(cap, num::slice_rows(seg, 1, 2));
    cap = num::add(cap, g.constant(sinusoidal_positions(tokens.size(), cfg.d_model)));
    if (prefix.empty()) return cap;
    const Var pre = num::add_row(num::embedding(table, prefix), num::slice_rows(seg, 0, 1));
    const Var parts[] = {pre, cap};
    return num::concat_rows(parts);
}

Mask rats_mask(std::size_t n_prefix, std::size_t n_tokens) {
    const std::size_t n = n_prefix + n_tokens;
    Mask m(n, n, false);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t limit = i < n_prefix ? n_prefix : i + 1;
        for (std::size_t j = 0; j < limit; ++j) m.set(i, j, true);
    }
    return m;
}

Var decode(Graph& g, const ModelConfig& cfg, Var x_enc, const std::optional<Var>& pool, std::span<const int> prefix,
           std::span<const int> tokens, const ForwardOptions& opts) {
    if (tokens.empty()) throw ContractError("decode: empty input sequence");
    if (tokens.size() > cfg.max_len)
        throw ContractError("decode: input of " + std::to_string(tokens.size()) + " tokens exceeds max_len " +
                            std::to_string(cfg.max_len));
    const bool rats = cfg.variant == Variant::ra_ts;
    const bool ratx = cfg.variant == Variant::ra_tx;
    const std::size_t n_prefix = rats ? prefix.size() : 0;

    Var y;
    Mask mask;
    if (rats) {
        y = build_rats_input(g, cfg, prefix, tokens);
        mask = rats_mask(n_prefix, tokens.size());
    } else {
        check_ids(tokens, cfg.vocab_size, "decode");
        y = num::add(num::embedding(g.param("embed.tokens"), tokens),
                     g.constant(sinusoidal_positions(tokens.size(), cfg.d_model)));
        mask = Mask::causal(tokens.size());
    }

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = layer_name("dec", l);
        const Var q = num::matmul(y, g.param(p + ".self.wq"));
        Var j = norm(g, num::add(y, attend(g, p + ".self", q, y, &mask, cfg.n_heads)), p + ".ln_self");
        if (ratx && pool) {
            // The kNN branch reuses the self-attention queries.
            const Var m = norm(g, num::add(y, attend(g, p + ".knn", q, *pool, nullptr, cfg.n_heads)), p + ".ln_knn");
            Var alpha;
            if (opts.gate_override) {
                alpha = g.constant(Tensor(Shape{1}, *opts.gate_override));
            } else {
                alpha = num::sigmoid(g.param(gate_param(cfg, l)));
            }
            const Var beta = num::sub(g.constant(Tensor(Shape{1}, 1.0)), alpha);
            j = num::add(num::scalar_mul(alpha, j), num::scalar_mul(beta, m));
        }
        j = norm(g, num::add(j, attention_block(g, p + ".cross", j, x_enc, nullptr, cfg.n_heads)), p + ".ln_cross");
        y = norm(g, num::add(j, ffn(g, j, p + ".ffn")), p + ".ln_ffn");
    }
    if (n_prefix > 0) y = num::slice_rows(y, n_prefix, n_prefix + tokens.size());
    return linear(g, y, "out.w", "out.b");
}

Var forward(Graph& g, const ModelConfig& cfg, const Tensor& grid, const Conditioning& cond,
            std::span<const int> tokens, const ForwardOptions& opts) {
    const Var x = encode_image(g, cfg, grid);
    std::optional<Var> pool;
    if (cfg.variant == Variant::ra_tx) pool = encode_retrieved(g, cfg, cond.captions);
    return decode(g, cfg, x, pool, cond.prefix, tokens, opts);
}

double gate_alpha(const ParamStore& params, const ModelConfig& cfg, std::size_t layer) {
    const double p = params.at(gate_param(cfg, layer))[0];
    return 1.0 / (1.0 + std::exp(-p));
}

// ---- Beam search ------------------------------------------------------------

DecodeResult beam_search(const ParamStore& params, const ModelConfig& cfg, const Tensor& grid,
                         const Conditioning& cond, const BeamOptions& opts) {
    if (opts.beam < 1) throw ContractError("beam_search: beam must be at least 1");
    const text::SpecialIds sp;

    Tensor x_enc;
    std::optional<Tensor> pool;
    {
        Graph g(&params, false);
        x_enc = g.value(encode_image(g, cfg, grid));
        if (cfg.variant == Variant::ra_tx)
            if (auto p = encode_retrieved(g, cfg, cond.captions)) pool = g.value(*p);
    }

    struct Beam {
        Hypothesis hyp;
        double sum = 0.0;
        bool finished = false;
    };
    const auto rank_key = [&](const Beam& b) {
        if (opts.length_penalty == 0.0) return b.sum;
        return b.sum / std::pow(static_cast<double>(b.hyp.tokens.size()), opts.length_penalty);
    };
    const auto better = [&](const Beam& a, const Beam& b) {
        const double ka = rank_key(a), kb = rank_key(b);
        if (ka != kb) return ka > kb;
        return a.hyp.tokens < b.hyp.tokens;
    };

    std::vector<Beam> beams(1);
    for (std::size_t step = 0; step < cfg.max_len; ++step) {
        std::vector<Beam> cand;
        bool any_live = false;
        for (const Beam& b : beams) {
            if (b.finished) {
                cand.push_back(b);
                continue;
            }
            any_live = true;
            std::vector<int> input{sp.bos};
            input.insert(input.end(), b.hyp.tokens.begin(), b.hyp.tokens.end());
            Graph g(&params, false);
            const Var x = g.constant(x_enc);
            std::optional<Var> pv;
            if (pool) pv = g.constant(*pool);
            const Tensor& logits = g.value(decode(g, cfg, x, pv, cond.prefix, input, opts.forward));
            const std::size_t last = logits.rows() - 1, v = logits.cols();
            Tensor row(Shape{1, v});
            std::copy_n(logits.ptr() + last * v, v, row.ptr());
            const Tensor lp = num::log_softmax_rows(row);
            const bool force_eos = step + 1 == cfg.max_len;
            for (std::size_t t = 0; t < v; ++t) {
                const int id = static_cast<int>(t);
                if (id == sp.pad || id == sp.bos || id == sp.unk) continue;
                if (force_eos && id != sp.eos) continue;
                Beam nb = b;
                nb.hyp.tokens.push_back(id);
                nb.hyp.token_logprobs.push_back(lp[t]);
                nb.sum += lp[t];
                nb.finished = id == sp.eos;
                cand.push_back(std::move(nb));
            }
        }
        if (!any_live) break;
        const std::size_t keep = std::min(opts.beam, cand.size());
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), better);
        cand.resize(keep);
        beams = std::move(cand);
    }

    DecodeResult out;
    for (Beam& b : beams) {
        b.hyp.score = rank_key(b);
        out.sequences.push_back(std::move(b.hyp));
    }
    return out;
}

// ---- Captioner ----------------------------------------------------------------

std::vector<std::string> Captioner::retrieve(const memory::FeatureGrid& image,
                                             const std::optional<std::string>& exclude_id) const {
    if (cfg->variant == Variant::baseline || memory == nullptr || memory->size() == 0 || cfg->k_retrieved == 0)
        return {};
    return memory::retrieve_captions(*memory, image, cfg->k_retrieved, exclude_id, search);
}

Conditioning Captioner::condition(const memory::FeatureGrid& image,
                                  const std::optional<std::string>& exclude_id) const {
    return make_conditioning(retrieve(image, exclude_id), *vocab, *stops, *cfg);
}

DecodeResult Captioner::caption(const memory::FeatureGrid& image, const BeamOptions& opts,
                                const std::optional<std::string>& exclude_id) const {
    return beam_search(*params, *cfg, image.grid, condition(image, exclude_id), opts);
}

}  // namespace recap::model
