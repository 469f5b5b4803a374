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

#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "commands.hpp"
#include "recap/errors.hpp"
#include "recap/metrics.hpp"
#include "recap/nn_quality.hpp"

namespace {

using recap::cli::KeyValues;

enum Exit { kOk = 0, kInput = 2, kNumerical = 3, kContract = 4 };

void emit(const std::string& text, const std::string& out) {
    if (out.empty()) {
        std::cout << text << '\n';
        return;
    }
    std::ofstream f(out);
    if (!f) throw recap::InputError("cannot write '" + out + "'");
    f << text << '\n';
}

// Config file first, then --set pairs, then dedicated flags.
KeyValues resolve(const std::string& config, const std::vector<std::string>& sets, const KeyValues& flags) {
    KeyValues kv = config.empty() ? KeyValues{} : recap::cli::read_kv_file(config);
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw recap::InputError("--set expects key=value, got '" + s + "'");
        kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
    for (const auto& [k, v] : flags) kv[k] = v;
    return kv;
}

template <class T>
void put(KeyValues& kv, const std::string& key, const std::optional<T>& v) {
    if (!v) return;
    if constexpr (std::is_same_v<T, std::string>) kv[key] = *v;
    else kv[key] = std::to_string(*v);
}

const std::vector<std::string> kReducers = {"mean", "max", "l2norm_sum"};
const std::vector<std::string> kVariants = {"baseline", "ra_ts", "ra_tx"};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"recap: retrieval-augmented image captioning"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "recap 0.1.0");

    // make-synthetic
    recap::synth::SyntheticCorpusSpec spec;
    std::string syn_out;
    auto* syn = app.add_subcommand("make-synthetic", "Write a templated synthetic corpus as JSON lines");
    syn->add_option("--out", syn_out, "Output corpus file")->required();
    syn->add_option("--n-images", spec.n_images)->capture_default_str();
    syn->add_option("--d", spec.d, "Feature dimension")->capture_default_str();
    syn->add_option("--cells", spec.cells, "Grid cells per image")->capture_default_str();
    syn->add_option("--captions", spec.captions_per_image, "Captions per image")->capture_default_str();
    syn->add_option("--objects", spec.n_objects, "Objects in use, at most 30")->capture_default_str();
    syn->add_option("--noise", spec.noise)->capture_default_str();
    syn->add_option("--seed", spec.seed, "Seed for the images")->capture_default_str();
    syn->add_option("--world-seed", spec.world_seed, "Seed for the concept prototypes")->capture_default_str();
    syn->add_option("--id-prefix", spec.id_prefix)->capture_default_str();

    // build-index
    recap::cli::BuildIndexArgs bi;
    bool bi_raw = false;
    auto* bix = app.add_subcommand("build-index", "Aggregate a corpus into an external memory with an HNSW index");
    bix->add_option("--corpus", bi.corpus)->required();
    bix->add_option("--out", bi.out)->required();
    std::string bi_reducer = "mean";
    bix->add_option("--reducer", bi_reducer)->check(CLI::IsMember(kReducers))->capture_default_str();
    bix->add_flag("--no-normalize", bi_raw, "Keep raw aggregated embeddings");
    bix->add_option("--M", bi.hnsw.M, "Links per vertex")->capture_default_str();
    bix->add_option("--ef-construction", bi.hnsw.ef_construction)->capture_default_str();
    bix->add_option("--seed", bi.hnsw.seed)->capture_default_str();
    bix->add_option("--ef-search", bi.ef_search, "Candidate width for the self-test")->capture_default_str();
    bix->add_option("--self-test", bi.self_test_queries, "Recall@10 self-test queries, 0 to skip")
        ->capture_default_str();

    // train
    std::string tr_config, tr_out, tr_resume;
    std::vector<std::string> tr_sets;
    std::optional<std::string> tr_corpus, tr_val, tr_index, tr_init, tr_stage, tr_variant, tr_reducer;
    std::optional<std::size_t> tr_k, tr_beam, tr_steps, tr_every, tr_batch;
    std::optional<std::uint64_t> tr_seed;
    std::optional<double> tr_lr;
    auto* trn = app.add_subcommand("train", "Train or fine-tune a captioning model");
    trn->add_option("--config", tr_config, "key=value config file");
    trn->add_option("--set", tr_sets, "Extra key=value overrides");
    trn->add_option("--out-dir", tr_out, "Run directory")->required();
    trn->add_option("--resume", tr_resume, "Continue from this checkpoint");
    trn->add_option("--corpus", tr_corpus);
    trn->add_option("--val", tr_val, "Validation corpus");
    trn->add_option("--index", tr_index, "Prebuilt memory; otherwise built from the corpus");
    trn->add_option("--init", tr_init, "Start from this checkpoint's weights");
    trn->add_option("--stage", tr_stage)->check(CLI::IsMember({"xent", "scst"}));
    trn->add_option("--variant", tr_variant)->check(CLI::IsMember(kVariants));
    trn->add_option("--reducer", tr_reducer)->check(CLI::IsMember(kReducers));
    trn->add_option("--k", tr_k, "Retrieved captions per image");
    trn->add_option("--beam", tr_beam, "Beam width for validation");
    trn->add_option("--steps", tr_steps);
    trn->add_option("--eval-every", tr_every);
    trn->add_option("--batch-size", tr_batch);
    trn->add_option("--lr", tr_lr, "Fixed learning rate; 0 uses the warmup schedule");
    trn->add_option("--seed", tr_seed);

    // generate
    recap::cli::GenerateArgs gen;
    std::string gen_out;
    std::optional<std::size_t> gen_k;
    std::optional<std::string> gen_variant;
    auto* gnr = app.add_subcommand("generate", "Caption images with a trained checkpoint");
    gnr->add_option("--checkpoint", gen.checkpoint)->required();
    gnr->add_option("--images", gen.images, "Corpus file with the images to caption")->required();
    gnr->add_option("--index", gen.index, "External memory (ignored by the baseline)");
    gnr->add_option("--ids", gen.ids, "Only these image ids");
    gnr->add_option("--k", gen_k);
    gnr->add_option("--beam", gen.beam)->capture_default_str();
    gnr->add_option("--variant", gen_variant, "Expected variant of the checkpoint")->check(CLI::IsMember(kVariants));
    gnr->add_flag("--exclude-self", gen.exclude_self, "Do not retrieve an image's own memory entry");
    gnr->add_option("--ef-search", gen.ef_search)->capture_default_str();
    gnr->add_option("--out", gen_out, "Output JSON file (default stdout)");

    // evaluate
    recap::cli::EvaluateArgs ev;
    std::string ev_out;
    bool ev_table = false;
    auto* evl = app.add_subcommand("evaluate", "Score predictions with CIDEr-D, BLEU and ROUGE-L");
    evl->add_option("--predictions", ev.predictions)->required();
    evl->add_option("--gts", ev.gts, "Ground truths: id -> [captions] JSON or a corpus file")->required();
    evl->add_option("--out", ev_out, "Output JSON file (default stdout)");
    evl->add_flag("--table", ev_table, "Also print a text table");

    // nn-quality
    recap::cli::NnQualityArgs nq;
    std::vector<std::string> nq_reducers;
    std::string nq_out;
    bool nq_table = false;
    auto* nnq = app.add_subcommand("nn-quality", "Score retrieved captions against ground truth (mean and oracle)");
    nnq->add_option("--corpus", nq.corpus, "Memory corpus; one index per reducer is built from it");
    nnq->add_option("--reducer", nq_reducers)->check(CLI::IsMember(kReducers));
    nnq->add_option("--index", nq.indices, "Prebuilt index files");
    nnq->add_option("--testset", nq.testset)->required();
    nnq->add_option("--k", nq.ks)->capture_default_str();
    nnq->add_flag("--exclude-self", nq.exclude_self);
    nnq->add_option("--M", nq.hnsw.M)->capture_default_str();
    nnq->add_option("--seed", nq.hnsw.seed)->capture_default_str();
    nnq->add_option("--ef-search", nq.ef_search)->capture_default_str();
    nnq->add_option("--out", nq_out, "Output JSON file (default stdout)");
    nnq->add_flag("--table", nq_table, "Also print a text table");

    // grad-check
    recap::cli::GradCheckArgs gc;
    auto* gck = app.add_subcommand("grad-check", "Compare analytic and finite-difference gradients");
    std::string gc_variant = "ra_tx";
    gck->add_option("--variant", gc_variant)->check(CLI::IsMember(kVariants))->capture_default_str();
    gck->add_option("--layers", gc.layers)->capture_default_str();
    gck->add_option("--seed", gc.seed)->capture_default_str();
    gck->add_option("--loss", gc.loss)->check(CLI::IsMember({"xent", "scst"}))->capture_default_str();
    gck->add_option("--tolerance", gc.tolerance)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kInput;
    }

    try {
        if (*syn) {
            emit(recap::cli::make_synthetic(spec, syn_out).dump(2), "");
        } else if (*bix) {
            bi.normalize = !bi_raw;
            bi.reducer = recap::memory::parse_reducer(bi_reducer);
            emit(recap::cli::build_index(bi, &std::cerr).dump(2), "");
        } else if (*trn) {
            KeyValues flags;
            put(flags, "data.corpus", tr_corpus);
            put(flags, "data.val", tr_val);
            put(flags, "data.index", tr_index);
            put(flags, "data.init", tr_init);
            put(flags, "train.stage", tr_stage);
            put(flags, "model.variant", tr_variant);
            put(flags, "memory.reducer", tr_reducer);
            put(flags, "model.k_retrieved", tr_k);
            put(flags, "train.eval_beam", tr_beam);
            put(flags, "train.max_steps", tr_steps);
            put(flags, "train.eval_every", tr_every);
            put(flags, "train.batch_size", tr_batch);
            put(flags, "train.seed", tr_seed);
            if (tr_lr) flags["train.lr"] = fmt::format("{}", *tr_lr);
            recap::cli::TrainArgs ta{resolve(tr_config, tr_sets, flags), tr_out, tr_resume};
            emit(recap::cli::train(ta, &std::cerr).dump(2), "");
        } else if (*gnr) {
            gen.k = gen_k;
            if (gen_variant) gen.variant = recap::model::parse_variant(*gen_variant);
            emit(recap::cli::generate(gen).dump(2), gen_out);
        } else if (*evl) {
            const auto report = recap::cli::evaluate(ev);
            emit(report.to_json(), ev_out);
            if (ev_table) std::cout << report.to_table();
        } else if (*nnq) {
            for (const auto& r : nq_reducers) nq.reducers.push_back(recap::memory::parse_reducer(r));
            const auto report = recap::cli::nn_quality(nq);
            emit(report.to_json(), nq_out);
            if (nq_table) std::cout << report.to_table();
        } else if (*gck) {
            gc.variant = recap::model::parse_variant(gc_variant);
            const auto report = recap::cli::grad_check(gc);
            emit(report.dump(2), "");
            if (!report["passed"].get<bool>()) return kNumerical;
        }
    } catch (const std::exception& e) {
        const int code = recap::cli::exit_code(e);
        const char* kind = code == kNumerical ? "numerical error" : code == kContract ? "contract violation" : "error";
        std::cerr << kind << ": " << e.what() << '\n';
        return code;
    }
    return kOk;
}
