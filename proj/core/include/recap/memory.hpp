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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "recap/tensor.hpp"

namespace recap::memory {

/// Grid of visual features for one image: g cells x d channels.
struct FeatureGrid {
    std::string image_id;
    num::Tensor grid;

    std::size_t cells() const { return grid.rows(); }
    std::size_t dim() const { return grid.cols(); }
};

enum class Reducer { mean, max, l2norm_sum };

std::string_view to_string(Reducer r);
Reducer parse_reducer(std::string_view s);

/// Collapses a grid into one embedding. For l2norm_sum, zero cells are
/// skipped; when every cell is zero the result is the zero vector and
/// `degenerate` (if given) is set.
std::vector<double> aggregate(const FeatureGrid& grid, Reducer method, bool* degenerate = nullptr);

/// Inner-product relevance between two embeddings.
double relevance(std::span<const double> a, std::span<const double> b);

/// Scales to unit l2 norm; zero vectors are returned unchanged.
void l2_normalize(std::span<double> v);

struct Hit {
    std::size_t entry = 0;
    double score = 0.0;

    friend bool operator==(const Hit&, const Hit&) = default;
};

struct HnswParams {
    std::size_t M = 32;
    std::size_t ef_construction = 200;
    std::uint64_t seed = 0;

    friend bool operator==(const HnswParams&, const HnswParams&) = default;
};

/// Hierarchical navigable small-world graph over inner-product similarity.
/// Immutable after build; concurrent searches are safe.
class HnswIndex {
 public:
    HnswIndex() = default;

    /// `vectors` is n x d. Single-threaded and deterministic for a given seed.
    static HnswIndex build(num::Tensor vectors, const HnswParams& params = {});

    /// Approximate top-k by descending similarity. Requires ef_search >= k.
    std::vector<Hit> search(std::span<const double> query, std::size_t k, std::size_t ef_search) const;

    std::size_t size() const { return links_.size(); }
    std::size_t dim() const { return dim_; }
    const HnswParams& params() const { return params_; }
    const num::Tensor& vectors() const { return vectors_; }
    int max_level() const { return max_level_; }
    std::size_t entry_point() const { return entry_point_; }
    /// Level of node i (it is present on layers 0..level).
    int level(std::size_t i) const { return static_cast<int>(links_[i].size()) - 1; }
    const std::vector<std::uint32_t>& neighbors(std::size_t i, int layer) const {
        return links_[i][static_cast<std::size_t>(layer)];
    }
    std::size_t max_degree(int layer) const { return layer == 0 ? 2 * params_.M : params_.M; }

    friend bool operator==(const HnswIndex&, const HnswIndex&) = default;

 private:
    friend class IndexSerializer;

    using Candidate = std::pair<double, std::uint32_t>;

    double sim(std::span<const double> q, std::uint32_t i) const;
    std::uint32_t greedy(std::span<const double> q, std::uint32_t ep, int layer) const;
    std::vector<Candidate> search_layer(std::span<const double> q, const std::vector<std::uint32_t>& eps,
                                        std::size_t ef, int layer) const;
    std::vector<std::uint32_t> select_neighbors(const std::vector<Candidate>& sorted_desc, std::size_t m,
                                                bool keep_pruned) const;
    void insert(std::uint32_t i, int level);

    HnswParams params_;
    std::size_t dim_ = 0;
    num::Tensor vectors_;
    std::vector<std::vector<std::vector<std::uint32_t>>> links_;  // node -> layer -> neighbor ids
    int max_level_ = -1;
    std::size_t entry_point_ = 0;
};

struct MemoryEntry {
    std::string image_id;
    std::vector<double> embedding;
    std::vector<std::string> captions;
};

enum class SearchMethod { exact, hnsw };

struct SearchOptions {
    SearchMethod method = SearchMethod::hnsw;
    std::size_t ef_search = 64;
    /// Extra candidates fetched before dropping the excluded id.
    std::size_t exclusion_margin = 8;
};

/// The retrieval corpus: embeddings, captions and the index over them.
class ExternalMemory {
 public:
    static constexpr std::uint32_t kFormatVersion = 1;

    ExternalMemory() = default;
    ExternalMemory(std::vector<MemoryEntry> entries, Reducer reducer, bool normalized, const HnswParams& params);

    std::size_t size() const { return entries_.size(); }
    std::size_t dim() const { return dim_; }
    Reducer reducer() const { return reducer_; }
    bool normalized() const { return normalized_; }
    const MemoryEntry& entry(std::size_t i) const { return entries_[i]; }
    const std::vector<MemoryEntry>& entries() const { return entries_; }
    const HnswIndex& index() const { return index_; }

    /// Query embedding for a grid, using this memory's reducer and normalization.
    std::vector<double> embed(const FeatureGrid& grid) const;

    std::vector<Hit> search(std::span<const double> query, std::size_t k, const std::optional<std::string>& exclude_id,
                            const SearchOptions& opts = {}) const;

    void save(const std::string& path) const;
    /// Rejects bad magic, other format versions and, when given, a dimension
    /// different from `expected_dim`.
    static ExternalMemory load(const std::string& path, std::optional<std::size_t> expected_dim = std::nullopt);

    friend bool operator==(const ExternalMemory& a, const ExternalMemory& b);

 private:
    friend class IndexSerializer;

    std::vector<MemoryEntry> entries_;
    std::size_t dim_ = 0;
    Reducer reducer_ = Reducer::mean;
    bool normalized_ = true;
    HnswIndex index_;
};

/// Exhaustive top-k by descending relevance, ties by ascending image_id.
std::vector<Hit> exact_knn(const ExternalMemory& memory, std::span<const double> query, std::size_t k,
                           const std::optional<std::string>& exclude_id = std::nullopt);

std::vector<Hit> hnsw_search(const HnswIndex& index, std::span<const double> query, std::size_t k,
                             std::size_t ef_search);

/// Captions of the top-k entries for `image`, entry rank order then stored order.
std::vector<std::string> retrieve_captions(const ExternalMemory& memory, const FeatureGrid& image, std::size_t k,
                                           const std::optional<std::string>& exclude_id,
                                           const SearchOptions& opts = {});

/// Fraction of the exact top-k found by `approx`, averaged by the caller.
double recall_at_k(const std::vector<Hit>& approx, const std::vector<Hit>& exact);

}  // namespace recap::memory
