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
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "recap/autodiff.hpp"
#include "recap/corpus.hpp"
#include "recap/memory.hpp"
#include "recap/metrics.hpp"
#include "recap/model.hpp"
#include "recap/tokenizer.hpp"

namespace recap::train {

enum class Stage { xent, scst };

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);

struct TrainConfig {
    Stage stage = Stage::xent;
    std::size_t batch_size = 10;
    /// Fixed learning rate when positive; otherwise the warmup schedule
    /// times lr_scale.
    double lr = 0.0;
    std::size_t warmup = 6000;
    double lr_scale = 1.0;
    std::size_t scst_k = 5;
    /// Draw SCST sequences by ancestral sampling instead of beam top-k.
    bool scst_sampling = false;
    std::uint64_t seed = 0;
    std::size_t max_steps = 1000;
    /// 0 disables periodic evaluation and checkpoints.
    std::size_t eval_every = 100;
    /// Micro-batches per optimizer step.
    std::size_t grad_accum = 1;
    std::size_t eval_beam = 5;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
    std::map<std::string, std::string> to_kv() const;
    static TrainConfig from_kv(const std::map<std::string, std::string>& kv);

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct AdamState {
    std::size_t t = 0;
    num::Gradients m;
    num::Gradients v;

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct TrainState {
    std::size_t step = 0;
    AdamState adam;
    /// Best validation CIDEr-D seen so far; negative before the first eval.
    double best_cider = -1.0;
    /// Serialized std::mt19937_64 used for batch sampling.
    std::string rng_state;

    static TrainState fresh(std::uint64_t seed);
    friend bool operator==(const TrainState&, const TrainState&) = default;
};

/// d^-0.5 * min(step^-0.5, step * warmup^-1.5). Step counts from 1.
double lr_schedule(std::size_t step, std::size_t warmup, std::size_t d_model);

/// Bias-corrected Adam. A tensor whose gradient is entirely zero keeps its
/// value; its moments still decay. Non-finite gradients raise
/// NumericalError naming the tensor before anything is modified.
void optimizer_step(num::ParamStore& params, const num::Gradients& grads, AdamState& state, double lr,
                    const TrainConfig& cfg);

/// Mean negative log-likelihood over the non-PAD targets.
num::Var xent_loss(num::Var logits, std::span<const int> targets);

/// Teacher-forcing pair for one caption: input is BOS plus the caption and
/// the target is the caption plus EOS, both cut to max_len.
std::pair<std::vector<int>, std::vector<int>> shifted_pair(std::span<const int> caption, std::size_t max_len);

/// Training images with their tokenized captions and fixed retrieval inputs.
struct TrainingData {
    std::vector<memory::CorpusRecord> records;
    std::vector<model::Conditioning> conditioning;
    std::vector<std::vector<std::vector<int>>> captions;
    /// Document frequencies over all ground-truth captions here.
    metrics::CorpusIdf idf;

    std::size_t size() const { return records.size(); }
    std::size_t pairs() const;

    /// Retrieves for every record (excluding the record's own id from the
    /// memory) and tokenizes every caption.
    static TrainingData prepare(std::vector<memory::CorpusRecord> records, const text::Vocabulary& vocab,
                                const model::ModelConfig& cfg, const memory::ExternalMemory* memory,
                                const memory::SearchOptions& search = {});
};

/// Per-image advantages r - mean(r). Uniform rewards give exact zeros and
/// the advantages always sum to exactly zero in index order.
std::vector<double> scst_advantages(std::span<const double> rewards);

struct StepStats {
    double loss = 0.0;
    double mean_reward = 0.0;
    double baseline = 0.0;
    /// Mean over images of max(r) - min(r).
    double advantage_spread = 0.0;
    std::size_t images = 0;
    std::size_t skipped = 0;
};

/// Gradient of the mean cross-entropy over the (image, caption) pairs.
num::Gradients xent_gradients(const num::ParamStore& params, const model::ModelConfig& cfg, const TrainingData& data,
                              std::span<const std::pair<std::size_t, std::size_t>> pairs, StepStats& stats);

/// Gradient of the SCST surrogate -(1/k) sum (r - b) log p(y), averaged over
/// images. Rewards are CIDEr-D against each image's ground truths with the
/// training idf. Images without ground truths are skipped.
num::Gradients scst_gradients(const num::ParamStore& params, const model::ModelConfig& cfg,
                              const text::Vocabulary& vocab, const TrainingData& data,
                              std::span<const std::size_t> images, const TrainConfig& tcfg, std::mt19937_64& rng,
                              StepStats& stats);

/// k sequences drawn token by token from the model (with replacement).
std::vector<model::Hypothesis> sample_sequences(const num::ParamStore& params, const model::ModelConfig& cfg,
                                                const num::Tensor& grid, const model::Conditioning& cond,
                                                std::size_t k, std::mt19937_64& rng);

/// Corpus CIDEr-D of beam-search captions against the data's ground truths.
metrics::EvalReport evaluate_model(const num::ParamStore& params, const model::ModelConfig& cfg,
                                   const text::Vocabulary& vocab, const TrainingData& data, std::size_t beam);

struct Checkpoint {
    static constexpr std::uint32_t kFormatVersion = 1;

    model::ModelConfig model;
    TrainConfig train;
    num::ParamStore params;
    TrainState state;
    std::string vocab_json;

    void save(const std::string& path) const;
    /// Rejects bad magic or version and, when given, a different model config.
    static Checkpoint load(const std::string& path,
                           const std::optional<model::ModelConfig>& expected = std::nullopt);

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

class Trainer {
 public:
    Trainer(model::ModelConfig mcfg, TrainConfig tcfg, num::ParamStore params, text::Vocabulary vocab,
            TrainingData train, std::optional<TrainingData> val = std::nullopt,
            std::optional<TrainState> state = std::nullopt);

    /// One optimizer step over grad_accum micro-batches.
    StepStats step();

    /// Steps until max_steps. Every eval_every steps, and after the final
    /// step, appends a JSON line to `log` and, when `out_dir` is set, writes
    /// last.rcck (and best.rcck on a new best validation CIDEr-D).
    void run(std::ostream* log = nullptr, const std::optional<std::string>& out_dir = std::nullopt);

    Checkpoint checkpoint() const;
    const num::ParamStore& params() const { return params_; }
    const TrainState& state() const { return state_; }
    const model::ModelConfig& model_config() const { return mcfg_; }
    const TrainConfig& train_config() const { return tcfg_; }

 private:
    double learning_rate() const;

    model::ModelConfig mcfg_;
    TrainConfig tcfg_;
    num::ParamStore params_;
    text::Vocabulary vocab_;
    TrainingData train_;
    std::optional<TrainingData> val_;
    TrainState state_;
    std::mt19937_64 rng_;
};

}  // namespace recap::train
