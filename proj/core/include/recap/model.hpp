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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "recap/autodiff.hpp"
#include "recap/memory.hpp"
#include "recap/tokenizer.hpp"

namespace recap::model {

enum class Variant { baseline, ra_ts, ra_tx };

std::string_view to_string(Variant v);
/// Throws InputError on an unknown name.
Variant parse_variant(std::string_view s);

struct ModelConfig {
    std::size_t d_model = 384;
    std::size_t n_layers = 3;
    std::size_t n_heads = 6;
    std::size_t ffn_mult = 4;
    /// Longest generated sequence, EOS included. The decoder input (BOS plus
    /// caption tokens) never exceeds this.
    std::size_t max_len = 40;
    Variant variant = Variant::ra_tx;
    std::size_t k_retrieved = 10;
    /// Word cap for the retrieved-word prefix; the prefix is also held to at
    /// most this many BPE tokens, cut at whole words.
    std::size_t prefix_cap = 60;
    /// Raw gate scalar p at initialization; alpha = sigmoid(p).
    double gate_init = 0.0;
    /// One gate for all decoder layers instead of one per layer.
    bool shared_gate = false;
    bool visual_positions = false;
    /// Channels of the input feature grid.
    std::size_t feature_dim = 0;
    std::size_t vocab_size = 0;

    /// Throws ContractError when a field is out of range.
    void validate() const;
    std::size_t head_dim() const { return d_model / n_heads; }

    std::map<std::string, std::string> to_kv() const;
    /// Reads the keys written by to_kv(); missing keys keep their defaults.
    static ModelConfig from_kv(const std::map<std::string, std::string>& kv);

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Seeded initialization of every tensor the configured variant uses.
num::ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Sinusoidal positional encodings for positions [0, n).
num::Tensor sinusoidal_positions(std::size_t n, std::size_t d);

/// Per-image retrieval inputs, already tokenized.
struct Conditioning {
    /// RA-T^S: BPE ids of the unique retrieved words.
    std::vector<int> prefix;
    /// RA-T^X: one BPE id sequence per retrieved caption.
    std::vector<std::vector<int>> captions;

    friend bool operator==(const Conditioning&, const Conditioning&) = default;
};

/// Tokenizes retrieved captions for `cfg.variant`. Baseline returns nothing.
Conditioning make_conditioning(const std::vector<std::string>& retrieved, const text::Vocabulary& vocab,
                               const text::StopWordList& stops, const ModelConfig& cfg);

struct ForwardOptions {
    /// Forces every layer's gate to this alpha (RA-T^X only).
    std::optional<double> gate_override;
};

// ---- Graph building blocks ------------------------------------------------
// All of them read parameters through the graph's attached ParamStore.

/// Multi-head attention with learned projections; K and V come from `kv`.
num::Var attention_block(num::Graph& g, const std::string& prefix, num::Var x_q, num::Var kv,
                         const num::Mask* mask, std::size_t n_heads);

/// Encoder over grid cells: input projection then n_layers of
/// LN(X + MHA(X)) and LN(J + FFN(J)).
num::Var encode_image(num::Graph& g, const ModelConfig& cfg, const num::Tensor& grid);

/// One bidirectional layer over each retrieved caption independently,
/// outputs stacked in input order. Empty input gives no pool.
std::optional<num::Var> encode_retrieved(num::Graph& g, const ModelConfig& cfg,
                                         const std::vector<std::vector<int>>& captions);

/// Decoder input rows for RA-T^S: prefix tokens carry segment A and no
/// position; caption tokens carry segment B and positions from 0.
num::Var build_rats_input(num::Graph& g, const ModelConfig& cfg, std::span<const int> prefix,
                          std::span<const int> tokens);

/// Attention mask for RA-T^S: the prefix attends itself, captions attend the
/// whole prefix and their own past.
num::Mask rats_mask(std::size_t n_prefix, std::size_t n_tokens);

/// Decoder logits for every caption input position (rows = tokens.size()).
/// `tokens` starts with BOS. `x_enc` is the encoded image and `pool` the
/// retrieved-caption encoding (RA-T^X).
num::Var decode(num::Graph& g, const ModelConfig& cfg, num::Var x_enc, const std::optional<num::Var>& pool,
                std::span<const int> prefix, std::span<const int> tokens, const ForwardOptions& opts = {});

/// encode_image, encode_retrieved and decode in one graph.
num::Var forward(num::Graph& g, const ModelConfig& cfg, const num::Tensor& grid, const Conditioning& cond,
                 std::span<const int> tokens, const ForwardOptions& opts = {});

/// alpha of decoder layer `layer` under the current parameters.
double gate_alpha(const num::ParamStore& params, const ModelConfig& cfg, std::size_t layer);
std::string gate_param(const ModelConfig& cfg, std::size_t layer);

// ---- Decoding ---------------------------------------------------------------

struct Hypothesis {
    /// Generated ids after BOS; the last one is EOS.
    std::vector<int> tokens;
    std::vector<double> token_logprobs;
    double score = 0.0;
};

struct DecodeResult {
    /// Ranked by non-increasing score.
    std::vector<Hypothesis> sequences;
};

struct BeamOptions {
    std::size_t beam = 5;
    /// Rank finished sequences by score / length^alpha when non-zero.
    double length_penalty = 0.0;
    ForwardOptions forward;
};

/// Length-synchronous beam search. Finished sequences stay in the beam and
/// compete with extensions; PAD, BOS and UNK are never emitted and EOS is
/// forced at max_len. Scores are sums of token log-probabilities.
DecodeResult beam_search(const num::ParamStore& params, const ModelConfig& cfg, const num::Tensor& grid,
                         const Conditioning& cond, const BeamOptions& opts = {});

/// Retrieval, conditioning and beam search for one image. `memory` may be
/// null for the baseline.
struct Captioner {
    const num::ParamStore* params = nullptr;
    const ModelConfig* cfg = nullptr;
    const text::Vocabulary* vocab = nullptr;
    const memory::ExternalMemory* memory = nullptr;
    const text::StopWordList* stops = &text::StopWordList::english();
    memory::SearchOptions search;

    std::vector<std::string> retrieve(const memory::FeatureGrid& image,
                                      const std::optional<std::string>& exclude_id = std::nullopt) const;
    Conditioning condition(const memory::FeatureGrid& image,
                           const std::optional<std::string>& exclude_id = std::nullopt) const;
    DecodeResult caption(const memory::FeatureGrid& image, const BeamOptions& opts = {},
                         const std::optional<std::string>& exclude_id = std::nullopt) const;
};

}  // namespace recap::model
