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

#include "recap/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <sstream>

#include <fmt/core.h>

#include "binary_io.hpp"
#include "recap/errors.hpp"

namespace recap::train {

using num::Graph;
using num::Gradients;
using num::ParamStore;
using num::Shape;
using num::Tensor;
using num::Var;

std::string_view to_string(Stage s) { return s == Stage::xent ? "xent" : "scst"; }

Stage parse_stage(std::string_view s) {
    if (s == "xent") return Stage::xent;
    if (s == "scst") return Stage::scst;
    throw InputError("unknown stage '" + std::string(s) + "' (expected xent or scst)");
}

// ---- Config -------------------------------------------------------------------

void TrainConfig::validate() const {
    const auto fail = [](const std::string& m) { throw ContractError("train config: " + m); };
    if (batch_size == 0) fail("batch_size must be positive");
    if (warmup == 0) fail("warmup must be at least 1");
    if (stage == Stage::scst && scst_k < 2) fail("scst_k must be at least 2");
    if (grad_accum == 0) fail("grad_accum must be positive");
    if (eval_beam == 0) fail("eval_beam must be positive");
    if (!(lr >= 0.0) || !(lr_scale > 0.0)) fail("lr must be non-negative and lr_scale positive");
}

namespace {

// Shortest text that reads back to the same double.
std::string num_str(double x) { return fmt::format("{}", x); }

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    std::istringstream in(v);
    T x{};
    in >> x;
    if (!in || !in.eof() || (std::is_unsigned_v<T> && v.find('-') != std::string::npos))
        throw InputError("config key '" + key + "': cannot parse '" + v + "'");
    return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw InputError("config key '" + key + "': expected true or false, got '" + v + "'");
}

}  // namespace

std::map<std::string, std::string> TrainConfig::to_kv() const {
    return {
        {"train.stage", std::string(to_string(stage))},
        {"train.batch_size", std::to_string(batch_size)},
        {"train.lr", num_str(lr)},
        {"train.warmup", std::to_string(warmup)},
        {"train.lr_scale", num_str(lr_scale)},
        {"train.scst_k", std::to_string(scst_k)},
        {"train.scst_sampling", scst_sampling ? "true" : "false"},
        {"train.seed", std::to_string(seed)},
        {"train.max_steps", std::to_string(max_steps)},
        {"train.eval_every", std::to_string(eval_every)},
        {"train.grad_accum", std::to_string(grad_accum)},
        {"train.eval_beam", std::to_string(eval_beam)},
        {"train.adam_beta1", num_str(adam_beta1)},
        {"train.adam_beta2", num_str(adam_beta2)},
        {"train.adam_eps", num_str(adam_eps)},
    };
}

TrainConfig TrainConfig::from_kv(const std::map<std::string, std::string>& kv) {
    TrainConfig c;
    for (const auto& [k, v] : kv) {
        if (k == "train.stage") c.stage = parse_stage(v);
        else if (k == "train.batch_size") c.batch_size = parse_number<std::size_t>(k, v);
        else if (k == "train.lr") c.lr = parse_number<double>(k, v);
        else if (k == "train.warmup") c.warmup = parse_number<std::size_t>(k, v);
        else if (k == "train.lr_scale") c.lr_scale = parse_number<double>(k, v);
        else if (k == "train.scst_k") c.scst_k = parse_number<std::size_t>(k, v);
        else if (k == "train.scst_sampling") c.scst_sampling = parse_bool(k, v);
        else if (k == "train.seed") c.seed = parse_number<std::uint64_t>(k, v);
        else if (k == "train.max_steps") c.max_steps = parse_number<std::size_t>(k, v);
        else if (k == "train.eval_every") c.eval_every = parse_number<std::size_t>(k, v);
        else if (k == "train.grad_accum") c.grad_accum = parse_number<std::size_t>(k, v);
        else if (k == "train.eval_beam") c.eval_beam = parse_number<std::size_t>(k, v);
        else if (k == "train.adam_beta1") c.adam_beta1 = parse_number<double>(k, v);
        else if (k == "train.adam_beta2") c.adam_beta2 = parse_number<double>(k, v);
        else if (k == "train.adam_eps") c.adam_eps = parse_number<double>(k, v);
    }
    return c;
}

TrainState TrainState::fresh(std::uint64_t seed) {
    TrainState s;
    std::ostringstream out;
    out << std::mt19937_64(seed);
    s.rng_state = out.str();
    return s;
}

// ---- Optimization -----------------------------------------------------------

double lr_schedule(std::size_t step, std::size_t warmup, std::size_t d_model) {
    if (step == 0) throw ContractError("lr_schedule: step counts from 1");
    if (warmup == 0) throw ContractError("lr_schedule: warmup must be at least 1");
    const double s = static_cast<double>(step);
    return std::pow(static_cast<double>(d_model), -0.5) *
           std::min(std::pow(s, -0.5), s * std::pow(static_cast<double>(warmup), -1.5));
}

void optimizer_step(ParamStore& params, const Gradients& grads, AdamState& state, double lr, const TrainConfig& cfg) {
    for (const auto& [name, p] : params.all()) {
        auto it = grads.find(name);
        if (it == grads.end()) throw ContractError("optimizer_step: no gradient for '" + name + "'");
        if (!it->second.same_shape(p)) throw ContractError("optimizer_step: gradient shape differs for '" + name + "'");
        for (double g : it->second.data())
            if (!std::isfinite(g)) throw NumericalError("optimizer_step: non-finite gradient for '" + name + "'");
    }
    ++state.t;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (auto& [name, p] : params.all()) {
        const Tensor& g = grads.at(name);
        auto [mi, m_new] = state.m.try_emplace(name, Tensor::zeros_like(p));
        auto [vi, v_new] = state.v.try_emplace(name, Tensor::zeros_like(p));
        Tensor& m = mi->second;
        Tensor& v = vi->second;
        bool all_zero = true;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            all_zero = all_zero && g[i] == 0.0;
        }
        if (all_zero) continue;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
    }
}

Var xent_loss(Var logits, std::span<const int> targets) {
    if (logits.value().rows() != targets.size())
        throw ContractError("xent_loss: " + std::to_string(logits.value().rows()) + " logit rows for " +
                            std::to_string(targets.size()) + " targets");
    const text::SpecialIds sp;
    const auto n = static_cast<double>(std::count_if(targets.begin(), targets.end(), [&](int t) { return t != sp.pad; }));
    if (n == 0.0) throw ContractError("xent_loss: every target is PAD");
    std::vector<double> w(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) w[i] = targets[i] == sp.pad ? 0.0 : 1.0 / n;
    return num::weighted_token_nll(logits, targets, w);
}

std::pair<std::vector<int>, std::vector<int>> shifted_pair(std::span<const int> caption, std::size_t max_len) {
    const text::SpecialIds sp;
    const std::size_t n = std::min(caption.size(), max_len - 1);
    std::vector<int> input{sp.bos}, target;
    input.insert(input.end(), caption.begin(), caption.begin() + static_cast<std::ptrdiff_t>(n));
    target.assign(caption.begin(), caption.begin() + static_cast<std::ptrdiff_t>(n));
    target.push_back(sp.eos);
    return {std::move(input), std::move(target)};
}

// ---- Data ---------------------------------------------------------------------

std::size_t TrainingData::pairs() const {
    std::size_t n = 0;
    for (const auto& c : captions) n += c.size();
    return n;
}

TrainingData TrainingData::prepare(std::vector<memory::CorpusRecord> records, const text::Vocabulary& vocab,
                                   const model::ModelConfig& cfg, const memory::ExternalMemory* memory,
                                   const memory::SearchOptions& search) {
    TrainingData d;
    model::Captioner cap;
    cap.cfg = &cfg;
    cap.vocab = &vocab;
    cap.memory = memory;
    cap.search = search;
    std::vector<std::vector<std::string>> refs;
    for (const auto& r : records) {
        d.conditioning.push_back(cap.condition(r.grid, r.image_id()));
        auto& caps = d.captions.emplace_back();
        for (const auto& c : r.captions) {
            auto ids = vocab.encode(c).ids;
            if (!ids.empty()) caps.push_back(std::move(ids));
        }
        refs.push_back(r.captions);
    }
    d.idf = metrics::CorpusIdf::from_references(refs);
    d.records = std::move(records);
    return d;
}

// ---- Gradients ----------------------------------------------------------------

namespace {

Var sum_all(Graph& g, const std::vector<Var>& terms) {
    if (terms.empty()) return g.constant(Tensor::scalar(0.0));
    Var total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) total = num::add(total, terms[i]);
    return total;
}

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

Gradients xent_gradients(const ParamStore& params, const model::ModelConfig& cfg, const TrainingData& data,
                         std::span<const std::pair<std::size_t, std::size_t>> pairs, StepStats& stats) {
    Graph g(&params);
    std::vector<Var> terms;
    const double scale = pairs.empty() ? 0.0 : 1.0 / static_cast<double>(pairs.size());
    for (const auto& [img, ci] : pairs) {
        const auto [input, target] = shifted_pair(data.captions[img][ci], cfg.max_len);
        const Var logits = model::forward(g, cfg, data.records[img].grid.grid, data.conditioning[img], input);
        terms.push_back(num::scale(xent_loss(logits, target), scale));
    }
    const Var loss = sum_all(g, terms);
    stats.loss = g.value(loss)[0];
    stats.images = pairs.size();
    return g.backward(loss);
}

std::vector<double> scst_advantages(std::span<const double> rewards) {
    std::vector<double> a(rewards.size(), 0.0);
    if (rewards.empty()) return a;
    if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; })) return a;
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(rewards.size());
    double partial = 0.0;
    for (std::size_t i = 0; i + 1 < rewards.size(); ++i) {
        a[i] = rewards[i] - mean;
        partial += a[i];
    }
    // Closing the sum exactly keeps Σ(r - b) = 0 despite rounding.
    a.back() = -partial;
    return a;
}

std::vector<model::Hypothesis> sample_sequences(const ParamStore& params, const model::ModelConfig& cfg,
                                                const Tensor& grid, const model::Conditioning& cond, std::size_t k,
                                                std::mt19937_64& rng) {
    const text::SpecialIds sp;
    Tensor x_enc;
    std::optional<Tensor> pool;
    {
        Graph g(&params, false);
        x_enc = g.value(model::encode_image(g, cfg, grid));
        if (cfg.variant == model::Variant::ra_tx)
            if (auto p = model::encode_retrieved(g, cfg, cond.captions)) pool = g.value(*p);
    }
    std::vector<model::Hypothesis> out;
    for (std::size_t s = 0; s < k; ++s) {
        model::Hypothesis h;
        while (h.tokens.empty() || h.tokens.back() != sp.eos) {
            std::vector<int> input{sp.bos};
            input.insert(input.end(), h.tokens.begin(), h.tokens.end());
            Graph g(&params, false);
            std::optional<Var> pv;
            if (pool) pv = g.constant(*pool);
            const Tensor& logits = g.value(model::decode(g, cfg, g.constant(x_enc), pv, cond.prefix, input));
            const std::size_t v = logits.cols(), last = logits.rows() - 1;
            Tensor row(Shape{1, v});
            std::copy_n(logits.ptr() + last * v, v, row.ptr());
            const Tensor lp = num::log_softmax_rows(row);
            int pick = sp.eos;
            if (input.size() < cfg.max_len) {
                double z = 0.0;
                for (std::size_t t = 0; t < v; ++t)
                    if (!(static_cast<int>(t) == sp.pad || static_cast<int>(t) == sp.bos || static_cast<int>(t) == sp.unk))
                        z += std::exp(lp[t]);
                double u = unit_uniform(rng) * z;
                for (std::size_t t = 0; t < v; ++t) {
                    const int id = static_cast<int>(t);
                    if (id == sp.pad || id == sp.bos || id == sp.unk) continue;
                    pick = id;
                    u -= std::exp(lp[t]);
                    if (u < 0.0) break;
                }
            }
            h.tokens.push_back(pick);
            h.token_logprobs.push_back(lp[static_cast<std::size_t>(pick)]);
            h.score += lp[static_cast<std::size_t>(pick)];
        }
        out.push_back(std::move(h));
    }
    return out;
}

Gradients scst_gradients(const ParamStore& params, const model::ModelConfig& cfg, const text::Vocabulary& vocab,
                         const TrainingData& data, std::span<const std::size_t> images, const TrainConfig& tcfg,
                         std::mt19937_64& rng, StepStats& stats) {
    struct Sampled {
        std::size_t image;
        std::vector<std::vector<int>> seqs;
        std::vector<double> adv;
    };
    std::vector<Sampled> batch;
    double reward_sum = 0.0, baseline_sum = 0.0, spread_sum = 0.0;
    std::size_t reward_count = 0;
    for (std::size_t img : images) {
        const auto& rec = data.records[img];
        if (rec.captions.empty()) {
            ++stats.skipped;
            continue;
        }
        std::vector<model::Hypothesis> hyps;
        if (tcfg.scst_sampling) {
            hyps = sample_sequences(params, cfg, rec.grid.grid, data.conditioning[img], tcfg.scst_k, rng);
        } else {
            model::BeamOptions bo;
            bo.beam = tcfg.scst_k;
            hyps = model::beam_search(params, cfg, rec.grid.grid, data.conditioning[img], bo).sequences;
        }
        Sampled s{img, {}, {}};
        std::vector<double> rewards;
        for (auto& h : hyps) {
            rewards.push_back(metrics::cider_d(vocab.decode(h.tokens), rec.captions, data.idf));
            s.seqs.push_back(std::move(h.tokens));
        }
        s.adv = scst_advantages(rewards);
        double mean = 0.0;
        for (double r : rewards) mean += r;
        mean /= static_cast<double>(rewards.size());
        reward_sum += mean * static_cast<double>(rewards.size());
        reward_count += rewards.size();
        baseline_sum += mean;
        spread_sum += *std::max_element(rewards.begin(), rewards.end()) -
                      *std::min_element(rewards.begin(), rewards.end());
        batch.push_back(std::move(s));
    }

    Graph g(&params);
    std::vector<Var> terms;
    const double per_image = batch.empty() ? 0.0 : 1.0 / static_cast<double>(batch.size());
    for (const auto& s : batch) {
        const double k = static_cast<double>(s.seqs.size());
        for (std::size_t i = 0; i < s.seqs.size(); ++i) {
            const auto& y = s.seqs[i];
            std::vector<int> input{text::SpecialIds{}.bos};
            input.insert(input.end(), y.begin(), y.end() - 1);
            const Var logits = model::forward(g, cfg, data.records[s.image].grid.grid, data.conditioning[s.image], input);
            const std::vector<double> w(y.size(), s.adv[i] / k * per_image);
            terms.push_back(num::weighted_token_nll(logits, y, w));
        }
    }
    const Var loss = sum_all(g, terms);
    stats.loss = g.value(loss)[0];
    stats.images = batch.size();
    if (!batch.empty()) {
        stats.mean_reward = reward_sum / static_cast<double>(reward_count);
        stats.baseline = baseline_sum / static_cast<double>(batch.size());
        stats.advantage_spread = spread_sum / static_cast<double>(batch.size());
    }
    return g.backward(loss);
}

metrics::EvalReport evaluate_model(const ParamStore& params, const model::ModelConfig& cfg,
                                   const text::Vocabulary& vocab, const TrainingData& data, std::size_t beam) {
    std::map<std::string, std::string> preds;
    std::map<std::string, std::vector<std::string>> gts;
    model::BeamOptions bo;
    bo.beam = beam;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& rec = data.records[i];
        const auto res = model::beam_search(params, cfg, rec.grid.grid, data.conditioning[i], bo);
        preds[rec.image_id()] = vocab.decode(res.sequences.front().tokens);
        gts[rec.image_id()] = rec.captions;
    }
    return metrics::evaluate(preds, gts);
}

// ---- Checkpoints ----------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'R', 'C', 'C', 'K'};

void put_tensor_map(io::BinaryWriter& w, const std::map<std::string, Tensor>& m) {
    w.put<std::uint64_t>(m.size());
    for (const auto& [name, t] : m) {
        w.put_string(name);
        w.put_vector(std::vector<std::uint64_t>(t.shape().begin(), t.shape().end()));
        w.put_vector(std::vector<double>(t.data().begin(), t.data().end()));
    }
}

std::map<std::string, Tensor> get_tensor_map(io::BinaryReader& r) {
    std::map<std::string, Tensor> m;
    const auto n = r.get_count(8);
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string name = r.get_string();
        const auto dims = r.get_vector<std::uint64_t>();
        auto data = r.get_vector<double>();
        const Shape shape(dims.begin(), dims.end());
        if (num::shape_numel(shape) != data.size())
            throw InputError("'" + r.path() + "': tensor '" + name + "' size does not match its shape");
        m.emplace(std::move(name), Tensor(shape, std::move(data)));
    }
    return m;
}

std::string kv_text(const std::map<std::string, std::string>& a, const std::map<std::string, std::string>& b) {
    std::string out;
    for (const auto& [k, v] : a) out += k + "=" + v + "\n";
    for (const auto& [k, v] : b) out += k + "=" + v + "\n";
    return out;
}

std::map<std::string, std::string> parse_kv_text(const std::string& s) {
    std::map<std::string, std::string> kv;
    std::istringstream in(s);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
    io::BinaryWriter w(path);
    w.put_bytes(kMagic, 4);
    w.put<std::uint32_t>(kFormatVersion);
    w.put_string(kv_text(model.to_kv(), train.to_kv()));
    put_tensor_map(w, params.all());
    w.put<std::uint64_t>(state.step);
    w.put<std::uint64_t>(state.adam.t);
    w.put<double>(state.best_cider);
    w.put_string(state.rng_state);
    put_tensor_map(w, state.adam.m);
    put_tensor_map(w, state.adam.v);
    w.put_string(vocab_json);
    w.finish();
}

Checkpoint Checkpoint::load(const std::string& path, const std::optional<model::ModelConfig>& expected) {
    io::BinaryReader r(path);
    char magic[4];
    r.get_bytes(magic, 4);
    if (!std::equal(magic, magic + 4, kMagic)) throw InputError("'" + path + "' is not a recap checkpoint");
    const auto version = r.get<std::uint32_t>();
    if (version != kFormatVersion)
        throw InputError("'" + path + "' has checkpoint version " + std::to_string(version) + ", expected " +
                         std::to_string(kFormatVersion));
    Checkpoint c;
    const auto kv = parse_kv_text(r.get_string());
    c.model = model::ModelConfig::from_kv(kv);
    c.train = TrainConfig::from_kv(kv);
    if (expected && !(*expected == c.model)) {
        const auto want = expected->to_kv(), have = c.model.to_kv();
        for (const auto& [k, v] : want)
            if (have.at(k) != v)
                throw InputError("'" + path + "': checkpoint has " + k + "=" + have.at(k) + " but " + v +
                                 " was requested");
    }
    for (auto& [name, t] : get_tensor_map(r)) c.params.set(name, std::move(t));
    c.state.step = r.get<std::uint64_t>();
    c.state.adam.t = r.get<std::uint64_t>();
    c.state.best_cider = r.get<double>();
    c.state.rng_state = r.get_string();
    c.state.adam.m = get_tensor_map(r);
    c.state.adam.v = get_tensor_map(r);
    c.vocab_json = r.get_string();
    if (r.remaining() != 0) throw InputError("'" + path + "' has trailing bytes");
    return c;
}

// ---- Trainer --------------------------------------------------------------------

Trainer::Trainer(model::ModelConfig mcfg, TrainConfig tcfg, ParamStore params, text::Vocabulary vocab,
                 TrainingData train, std::optional<TrainingData> val, std::optional<TrainState> state)
    : mcfg_(std::move(mcfg)),
      tcfg_(std::move(tcfg)),
      params_(std::move(params)),
      vocab_(std::move(vocab)),
      train_(std::move(train)),
      val_(std::move(val)),
      state_(state ? std::move(*state) : TrainState::fresh(tcfg_.seed)) {
    mcfg_.validate();
    tcfg_.validate();
    if (train_.size() == 0) throw InputError("training set is empty");
    if (tcfg_.stage == Stage::xent && train_.pairs() == 0) throw InputError("training set has no captions");
    std::istringstream in(state_.rng_state);
    in >> rng_;
    if (!in) throw InputError("training state has a corrupt random-generator state");
}

double Trainer::learning_rate() const {
    if (tcfg_.lr > 0.0) return tcfg_.lr;
    return tcfg_.lr_scale * lr_schedule(state_.step, tcfg_.warmup, mcfg_.d_model);
}

StepStats Trainer::step() {
    Gradients total;
    StepStats agg;
    std::vector<std::pair<std::size_t, std::size_t>> flat;
    if (tcfg_.stage == Stage::xent)
        for (std::size_t i = 0; i < train_.size(); ++i)
            for (std::size_t c = 0; c < train_.captions[i].size(); ++c) flat.emplace_back(i, c);

    for (std::size_t micro = 0; micro < tcfg_.grad_accum; ++micro) {
        StepStats s;
        Gradients g;
        if (tcfg_.stage == Stage::xent) {
            std::vector<std::pair<std::size_t, std::size_t>> batch;
            for (std::size_t b = 0; b < tcfg_.batch_size; ++b) batch.push_back(flat[rng_() % flat.size()]);
            g = xent_gradients(params_, mcfg_, train_, batch, s);
        } else {
            std::vector<std::size_t> images;
            for (std::size_t b = 0; b < tcfg_.batch_size; ++b) images.push_back(rng_() % train_.size());
            g = scst_gradients(params_, mcfg_, vocab_, train_, images, tcfg_, rng_, s);
        }
        const double w = 1.0 / static_cast<double>(tcfg_.grad_accum);
        for (auto& [name, t] : g) {
            auto [it, fresh] = total.try_emplace(name, Tensor::zeros_like(t));
            for (std::size_t i = 0; i < t.size(); ++i) it->second[i] += w * t[i];
        }
        agg.loss += w * s.loss;
        agg.mean_reward += w * s.mean_reward;
        agg.baseline += w * s.baseline;
        agg.advantage_spread += w * s.advantage_spread;
        agg.images += s.images;
        agg.skipped += s.skipped;
    }
    ++state_.step;
    optimizer_step(params_, total, state_.adam, learning_rate(), tcfg_);
    std::ostringstream out;
    out << rng_;
    state_.rng_state = out.str();
    return agg;
}

Checkpoint Trainer::checkpoint() const { return {mcfg_, tcfg_, params_, state_, vocab_.to_json()}; }

void Trainer::run(std::ostream* log, const std::optional<std::string>& out_dir) {
    double loss_sum = 0.0, reward_sum = 0.0;
    std::size_t n = 0;
    while (state_.step < tcfg_.max_steps) {
        const StepStats s = step();
        loss_sum += s.loss;
        reward_sum += s.mean_reward;
        ++n;
        const bool last = state_.step == tcfg_.max_steps;
        if (!last && (tcfg_.eval_every == 0 || state_.step % tcfg_.eval_every != 0)) continue;

        nlohmann::json rec;
        rec["step"] = state_.step;
        rec["stage"] = to_string(tcfg_.stage);
        rec["loss"] = loss_sum / static_cast<double>(n);
        rec["mean_reward"] = tcfg_.stage == Stage::scst ? nlohmann::json(reward_sum / static_cast<double>(n))
                                                        : nlohmann::json(nullptr);
        bool improved = false;
        if (val_ && val_->size() > 0) {
            const double cider = evaluate_model(params_, mcfg_, vocab_, *val_, tcfg_.eval_beam).corpus.cider;
            rec["cider_val"] = cider;
            if (cider > state_.best_cider) {
                state_.best_cider = cider;
                improved = true;
            }
        } else {
            rec["cider_val"] = nullptr;
        }
        if (log) *log << rec.dump() << "\n" << std::flush;
        if (out_dir) {
            std::filesystem::create_directories(*out_dir);
            const Checkpoint ck = checkpoint();
            ck.save((std::filesystem::path(*out_dir) / "last.rcck").string());
            if (improved) ck.save((std::filesystem::path(*out_dir) / "best.rcck").string());
        }
        loss_sum = reward_sum = 0.0;
        n = 0;
    }
}

}  // namespace recap::train
