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

#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <fmt/core.h>

#include "recap/corpus.hpp"
#include "recap/errors.hpp"
#include "recap/gradcheck.hpp"
#include "recap/metrics.hpp"
#include "recap/nn_quality.hpp"
#include "recap/tokenizer.hpp"
#include "recap/training.hpp"

namespace recap::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::size_t feature_dim_of(const std::vector<memory::CorpusRecord>& records, const std::string& path) {
    if (records.empty()) throw InputError("corpus '" + path + "' has no records");
    return records.front().grid.grid.shape()[1];
}

void ensure_parent(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

// Keys the user set explicitly under `prefix` must agree with the values a
// checkpoint dictates. Values are compared after a parse/print round trip so
// "0.9" and "0.90000000000000002" agree.
void check_against(const KeyValues& given, const KeyValues& fixed, const std::string& prefix,
                   const std::vector<std::string>& exempt, const std::string& what) {
    const KeyValues canon = RunConfig::from_kv(given).to_kv();
    for (const auto& [k, raw] : given) {
        if (!k.starts_with(prefix) || std::find(exempt.begin(), exempt.end(), k) != exempt.end()) continue;
        const auto it = fixed.find(k);
        if (it != fixed.end() && it->second != canon.at(k))
            throw InputError(fmt::format("{} has {} = {}, but {} was requested", what, k, it->second, raw));
    }
}

std::optional<memory::ExternalMemory> load_index(const std::string& path, std::size_t feature_dim) {
    if (path.empty()) return std::nullopt;
    auto mem = memory::ExternalMemory::load(path);
    if (mem.size() > 0 && mem.dim() != feature_dim)
        throw InputError(fmt::format("index '{}' has dimension {} but the model expects {}", path, mem.dim(),
                                     feature_dim));
    return mem;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    return json::parse(in, nullptr, false);
}

// Standard normal from the raw generator, independent of the library's
// distribution objects.
double normal(std::mt19937_64& rng) {
    const double u1 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
}

// Config checks raise ContractError inside the library; coming from a user's
// config file they are validation errors.
template <class Config>
void validate_user(const Config& c) {
    try {
        c.validate();
    } catch (const ContractError& e) {
        throw InputError(std::string("invalid configuration: ") + e.what());
    }
}

}  // namespace

int exit_code(const std::exception& e) {
    if (dynamic_cast<const InputError*>(&e)) return 2;
    if (dynamic_cast<const NumericalError*>(&e)) return 3;
    if (dynamic_cast<const std::logic_error*>(&e)) return 4;
    return 2;
}

json make_synthetic(const synth::SyntheticCorpusSpec& spec, const std::string& out) {
    if (out.empty()) throw InputError("make-synthetic: --out is required");
    const auto records = synth::make_synthetic(spec);
    ensure_parent(out);
    memory::write_corpus_file(out, records);
    return {{"images", records.size()},
            {"captions_per_image", spec.captions_per_image},
            {"d", spec.d},
            {"cells", spec.cells},
            {"seed", spec.seed},
            {"world_seed", spec.world_seed},
            {"out", out}};
}

json build_index(const BuildIndexArgs& args, std::ostream* log) {
    if (args.out.empty()) throw InputError("build-index: --out is required");
    const auto records = memory::read_corpus_file(args.corpus);
    const auto t0 = std::chrono::steady_clock::now();
    const auto mem = memory::build_memory(records, args.reducer, args.normalize, args.hnsw);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ensure_parent(args.out);
    mem.save(args.out);
    if (log) *log << fmt::format("built {} entries in {:.2f} s\n", mem.size(), secs);

    json report = {{"entries", mem.size()},
                   {"dim", mem.dim()},
                   {"reducer", memory::to_string(args.reducer)},
                   {"normalized", args.normalize},
                   {"M", args.hnsw.M},
                   {"ef_construction", args.hnsw.ef_construction},
                   {"seed", args.hnsw.seed},
                   {"max_level", mem.index().max_level()},
                   {"out", args.out}};
    if (args.self_test_queries == 0 || mem.size() == 0) return report;

    // Queries are stored embeddings pushed off their node by a random
    // direction of half their length, then scored against the exact oracle.
    std::mt19937_64 rng(args.hnsw.seed ^ 0x5eedULL);
    const std::size_t k = std::min<std::size_t>(10, mem.size());
    double recall = 0.0;
    for (std::size_t q = 0; q < args.self_test_queries; ++q) {
        std::vector<double> query = mem.entry(rng() % mem.size()).embedding;
        std::vector<double> dir(query.size());
        double norm = 0.0;
        for (double& x : dir) {
            x = normal(rng);
            norm += x * x;
        }
        for (std::size_t j = 0; j < query.size(); ++j) query[j] += 0.5 * dir[j] / std::sqrt(norm);
        if (mem.normalized()) memory::l2_normalize(query);
        recall += memory::recall_at_k(memory::hnsw_search(mem.index(), query, k, std::max(args.ef_search, k)),
                                      memory::exact_knn(mem, query, k));
    }
    report["self_test"] = {{"queries", args.self_test_queries},
                           {"k", k},
                           {"ef_search", args.ef_search},
                           {"recall", recall / static_cast<double>(args.self_test_queries)}};
    return report;
}

json train(const TrainArgs& args, std::ostream* log) {
    if (args.out_dir.empty()) throw InputError("train: --out-dir is required");
    RunConfig cfg = RunConfig::from_kv(args.kv);
    if (cfg.corpus.empty()) throw InputError("train: no training corpus (set data.corpus or --corpus)");
    auto records = memory::read_corpus_file(cfg.corpus);
    const std::size_t fdim = feature_dim_of(records, cfg.corpus);

    std::optional<train::Checkpoint> start;
    std::optional<train::TrainState> state;
    if (!args.resume.empty()) {
        start = train::Checkpoint::load(args.resume);
        check_against(args.kv, start->model.to_kv(), "model.", {}, "checkpoint '" + args.resume + "'");
        check_against(args.kv, start->train.to_kv(), "train.", {"train.max_steps", "train.eval_every"},
                      "checkpoint '" + args.resume + "'");
        const train::TrainConfig requested = cfg.train;
        cfg.train = start->train;
        if (args.kv.count("train.max_steps")) cfg.train.max_steps = requested.max_steps;
        if (args.kv.count("train.eval_every")) cfg.train.eval_every = requested.eval_every;
        cfg.model = start->model;
        state = start->state;
    } else if (!cfg.init.empty()) {
        start = train::Checkpoint::load(cfg.init);
        check_against(args.kv, start->model.to_kv(), "model.", {}, "checkpoint '" + cfg.init + "'");
        cfg.model = start->model;
    } else if (cfg.train.stage == train::Stage::scst) {
        throw InputError("train: stage scst starts from a trained model (set data.init or --init)");
    }

    text::Vocabulary vocab;
    num::ParamStore params;
    if (start) {
        vocab = text::Vocabulary::from_json(start->vocab_json);
        params = start->params;
    } else {
        std::vector<std::string> captions;
        for (const auto& r : records) captions.insert(captions.end(), r.captions.begin(), r.captions.end());
        vocab = text::train_bpe(captions, cfg.bpe_vocab).vocab;
        KeyValues derived = cfg.model.to_kv();
        derived["model.feature_dim"] = std::to_string(fdim);
        derived["model.vocab_size"] = std::to_string(vocab.size());
        check_against(args.kv, derived, "model.", {}, "corpus '" + cfg.corpus + "'");
        cfg.model.feature_dim = fdim;
        cfg.model.vocab_size = vocab.size();
        validate_user(cfg.model);
        params = model::init_params(cfg.model, cfg.train.seed);
    }
    if (cfg.model.feature_dim != fdim)
        throw InputError(fmt::format("corpus '{}' has feature dimension {} but the model expects {}", cfg.corpus, fdim,
                                     cfg.model.feature_dim));
    validate_user(cfg.train);

    auto mem = load_index(cfg.index, cfg.model.feature_dim);
    if (!mem && cfg.model.variant != model::Variant::baseline)
        mem = memory::build_memory(records, cfg.reducer, cfg.normalize, cfg.hnsw);
    const memory::ExternalMemory* mp = mem ? &*mem : nullptr;

    auto data = train::TrainingData::prepare(std::move(records), vocab, cfg.model, mp, cfg.search());
    std::optional<train::TrainingData> val;
    if (!cfg.val.empty()) {
        auto val_records = memory::read_corpus_file(cfg.val);
        if (feature_dim_of(val_records, cfg.val) != fdim)
            throw InputError("validation corpus '" + cfg.val + "' has a different feature dimension");
        val = train::TrainingData::prepare(std::move(val_records), vocab, cfg.model, mp, cfg.search());
    }

    const fs::path dir(args.out_dir);
    fs::create_directories(dir);
    cfg.write((dir / "config.txt").string());
    std::ofstream(dir / "vocab.json") << vocab.to_json();
    std::ofstream log_file(dir / "train.jsonl", args.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log_file) throw InputError("cannot write '" + (dir / "train.jsonl").string() + "'");

    const auto t0 = std::chrono::steady_clock::now();
    train::Trainer trainer(cfg.model, cfg.train, std::move(params), vocab, std::move(data), std::move(val), state);
    trainer.run(&log_file, dir.string());
    if (log)
        *log << fmt::format("trained to step {} in {:.1f} s\n", trainer.state().step,
                            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

    json report = {{"step", trainer.state().step},
                   {"stage", train::to_string(cfg.train.stage)},
                   {"variant", model::to_string(cfg.model.variant)},
                   {"checkpoint", (dir / "last.rcck").string()},
                   {"log", (dir / "train.jsonl").string()}};
    report["best_cider"] = trainer.state().best_cider >= 0 ? json(trainer.state().best_cider) : json(nullptr);
    return report;
}

json generate(const GenerateArgs& args) {
    const auto ck = train::Checkpoint::load(args.checkpoint);
    model::ModelConfig cfg = ck.model;
    if (args.variant && *args.variant != cfg.variant)
        throw InputError(fmt::format("checkpoint '{}' is a {} model, not {}", args.checkpoint,
                                     model::to_string(cfg.variant), model::to_string(*args.variant)));
    if (args.k) cfg.k_retrieved = *args.k;
    validate_user(cfg);
    if (args.beam == 0) throw InputError("generate: --beam must be positive");
    const auto vocab = text::Vocabulary::from_json(ck.vocab_json);
    const auto records = memory::read_corpus_file(args.images);
    const auto mem = load_index(args.index, cfg.feature_dim);

    model::Captioner cap;
    cap.params = &ck.params;
    cap.cfg = &cfg;
    cap.vocab = &vocab;
    cap.memory = mem ? &*mem : nullptr;
    cap.search.ef_search = args.ef_search;

    std::vector<const memory::CorpusRecord*> todo;
    json errors = json::array();
    if (args.ids.empty()) {
        for (const auto& r : records) todo.push_back(&r);
    } else {
        std::map<std::string, const memory::CorpusRecord*> by_id;
        for (const auto& r : records) by_id.emplace(r.image_id(), &r);
        for (const auto& id : args.ids) {
            const auto it = by_id.find(id);
            if (it == by_id.end()) errors.push_back({{"image_id", id}, {"error", "unknown image id"}});
            else todo.push_back(it->second);
        }
    }

    model::BeamOptions beam;
    beam.beam = args.beam;
    json captions = json::array();
    for (const auto* r : todo) {
        if (r->grid.grid.shape()[1] != cfg.feature_dim) {
            errors.push_back({{"image_id", r->image_id()},
                              {"error", fmt::format("feature dimension {} does not match the model's {}",
                                                    r->grid.grid.shape()[1], cfg.feature_dim)}});
            continue;
        }
        const std::optional<std::string> exclude =
            args.exclude_self ? std::optional<std::string>(r->image_id()) : std::nullopt;
        const auto retrieved = cap.retrieve(r->grid, exclude);
        const auto cond = model::make_conditioning(retrieved, vocab, *cap.stops, cfg);
        const auto best = model::beam_search(ck.params, cfg, r->grid.grid, cond, beam).sequences.front();
        double logp = 0.0;
        for (double x : best.token_logprobs) logp += x;
        std::string text = vocab.decode(best.tokens);
        while (!text.empty() && text.back() == ' ') text.pop_back();
        captions.push_back({{"image_id", r->image_id()},
                            {"caption", text},
                            {"tokens", best.tokens},
                            {"log_prob", logp},
                            {"retrieved", retrieved}});
    }
    return {{"variant", model::to_string(cfg.variant)},
            {"k", cfg.variant == model::Variant::baseline ? 0 : cfg.k_retrieved},
            {"beam", args.beam},
            {"captions", captions},
            {"errors", errors}};
}

metrics::EvalReport evaluate(const EvaluateArgs& args) {
    const json pj = read_json_file(args.predictions);
    std::map<std::string, std::string> preds;
    const auto bad_preds = [&] {
        return InputError("predictions '" + args.predictions +
                          "' must be a JSON object of id -> caption or the output of generate");
    };
    if (pj.is_object() && pj.contains("captions") && pj["captions"].is_array()) {
        for (const auto& c : pj["captions"]) {
            if (!c.is_object() || !c.contains("image_id") || !c.contains("caption") || !c["image_id"].is_string() ||
                !c["caption"].is_string())
                throw bad_preds();
            preds[c["image_id"].get<std::string>()] = c["caption"].get<std::string>();
        }
    } else if (pj.is_object()) {
        for (const auto& [id, c] : pj.items()) {
            if (!c.is_string()) throw bad_preds();
            preds[id] = c.get<std::string>();
        }
    } else {
        throw bad_preds();
    }

    std::map<std::string, std::vector<std::string>> gts;
    const json gj = read_json_file(args.gts);
    bool is_map = gj.is_object() && !gj.empty();
    if (is_map)
        for (const auto& [id, caps] : gj.items()) {
            if (!caps.is_array()) is_map = false;
            else
                for (const auto& c : caps) is_map = is_map && c.is_string();
        }
    if (is_map) {
        for (const auto& [id, caps] : gj.items()) gts[id] = caps.get<std::vector<std::string>>();
    } else {
        for (auto& r : memory::read_corpus_file(args.gts)) gts[r.image_id()] = std::move(r.captions);
    }

    std::size_t shared = 0;
    for (const auto& [id, c] : preds) shared += gts.count(id);
    if (shared == 0)
        throw InputError("no prediction id in '" + args.predictions + "' has ground truth in '" + args.gts + "'");
    return metrics::evaluate(preds, gts);
}

metrics::NnQualityReport nn_quality(const NnQualityArgs& args) {
    if (args.ks.empty()) throw InputError("nn-quality: --k needs at least one value");
    for (std::size_t k : args.ks)
        if (k == 0) throw InputError("nn-quality: k must be positive");
    if (args.reducers.empty() && args.indices.empty())
        throw InputError("nn-quality: give --corpus with --reducer, or --index");
    if (!args.reducers.empty() && args.corpus.empty())
        throw InputError("nn-quality: --reducer builds indices from --corpus, which is missing");
    const auto test = memory::read_corpus_file(args.testset);

    metrics::NnQualityOptions opts;
    opts.exclude_self = args.exclude_self;
    opts.search.ef_search = args.ef_search;
    metrics::NnQualityReport out;
    const auto add = [&](const memory::ExternalMemory& mem, const std::string& name) {
        opts.index_name = name;
        auto r = metrics::nn_quality(mem, test, args.ks, opts);
        out.cells.insert(out.cells.end(), r.cells.begin(), r.cells.end());
    };
    if (!args.reducers.empty()) {
        const auto records = memory::read_corpus_file(args.corpus);
        for (const auto red : args.reducers)
            add(memory::build_memory(records, red, true, args.hnsw), std::string(memory::to_string(red)));
    }
    for (const auto& path : args.indices) add(memory::ExternalMemory::load(path), fs::path(path).stem().string());
    return out;
}

json grad_check(const GradCheckArgs& args) {
    if (args.loss != "xent" && args.loss != "scst")
        throw InputError("grad-check: --loss must be xent or scst, not '" + args.loss + "'");
    model::ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_layers = args.layers;
    cfg.n_heads = 2;
    cfg.ffn_mult = 2;
    cfg.max_len = 8;
    cfg.variant = args.variant;
    cfg.k_retrieved = 2;
    cfg.prefix_cap = 6;
    cfg.feature_dim = 5;
    cfg.vocab_size = 12;
    validate_user(cfg);
    num::ParamStore params = model::init_params(cfg, args.seed);

    std::mt19937_64 rng(args.seed);
    num::Tensor grid(num::Shape{3, cfg.feature_dim});
    for (double& x : grid.data()) x = normal(rng);
    const auto ids = [&](std::size_t n) {
        std::vector<int> v(n);
        for (int& x : v) x = 4 + static_cast<int>(rng() % (cfg.vocab_size - 4));
        return v;
    };
    model::Conditioning cond;
    if (cfg.variant == model::Variant::ra_ts) cond.prefix = ids(3);
    if (cfg.variant == model::Variant::ra_tx) cond.captions = {ids(3), ids(2)};

    // Sequences end in EOS; the decoder reads BOS plus all but the last.
    std::vector<std::vector<int>> seqs;
    const std::size_t n_seq = args.loss == "xent" ? 1 : 3;
    for (std::size_t i = 0; i < n_seq; ++i) {
        auto s = ids(2 + i);
        s.push_back(2);
        seqs.push_back(std::move(s));
    }
    std::vector<double> weights(n_seq, 1.0);
    if (args.loss == "scst") {
        std::vector<double> rewards(n_seq);
        for (double& r : rewards) r = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        weights = train::scst_advantages(rewards);
        for (double& w : weights) w /= static_cast<double>(n_seq);
    }
    const num::LossFn loss = [&](num::Graph& g) {
        std::optional<num::Var> total;
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            std::vector<int> input{1};
            input.insert(input.end(), seqs[i].begin(), seqs[i].end() - 1);
            const num::Var logits = model::forward(g, cfg, grid, cond, input);
            const num::Var term = args.loss == "xent"
                                      ? train::xent_loss(logits, seqs[i])
                                      : num::weighted_token_nll(logits, seqs[i],
                                                                std::vector<double>(seqs[i].size(), weights[i]));
            total = total ? num::add(*total, term) : term;
        }
        return *total;
    };
    const auto rep = num::finite_diff_check(loss, params);
    return {{"variant", model::to_string(cfg.variant)},
            {"layers", cfg.n_layers},
            {"loss", args.loss},
            {"seed", args.seed},
            {"elements_checked", rep.elements_checked},
            {"worst_rel_error", rep.worst},
            {"worst_param", rep.worst_param},
            {"tolerance", args.tolerance},
            {"passed", rep.worst < args.tolerance}};
}

}  // namespace recap::cli
