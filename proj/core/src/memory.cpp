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

#include "recap/memory.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <random>
#include <unordered_set>

#include "recap/errors.hpp"

namespace recap::memory {

std::string_view to_string(Reducer r) {
    switch (r) {
        case Reducer::mean:
            return "mean";
        case Reducer::max:
            return "max";
        case Reducer::l2norm_sum:
            return "l2norm_sum";
    }
    return "?";
}

Reducer parse_reducer(std::string_view s) {
    if (s == "mean") return Reducer::mean;
    if (s == "max") return Reducer::max;
    if (s == "l2norm_sum") return Reducer::l2norm_sum;
    throw InputError("unknown reducer '" + std::string(s) + "' (expected mean, max or l2norm_sum)");
}

void l2_normalize(std::span<double> v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    if (n == 0.0) return;
    const double inv = 1.0 / std::sqrt(n);
    for (double& x : v) x *= inv;
}

std::vector<double> aggregate(const FeatureGrid& grid, Reducer method, bool* degenerate) {
    const std::size_t g = grid.cells(), d = grid.dim();
    if (grid.grid.rank() != 2 || g == 0 || d == 0) {
        throw DimensionError("aggregate: grid of '" + grid.image_id + "' must be a non-empty g x d matrix");
    }
    grid.grid.check_finite("feature grid of '" + grid.image_id + "'");
    if (degenerate) *degenerate = false;
    std::vector<double> out(d, 0.0);
    switch (method) {
        case Reducer::mean: {
            for (std::size_t i = 0; i < g; ++i)
                for (std::size_t j = 0; j < d; ++j) out[j] += grid.grid.at(i, j);
            for (double& v : out) v /= static_cast<double>(g);
            break;
        }
        case Reducer::max: {
            auto first = grid.grid.row(0);
            std::copy(first.begin(), first.end(), out.begin());
            for (std::size_t i = 1; i < g; ++i)
                for (std::size_t j = 0; j < d; ++j) out[j] = std::max(out[j], grid.grid.at(i, j));
            break;
        }
        case Reducer::l2norm_sum: {
            std::vector<double> cell(d);
            bool any = false;
            for (std::size_t i = 0; i < g; ++i) {
                auto r = grid.grid.row(i);
                std::copy(r.begin(), r.end(), cell.begin());
                double n = 0.0;
                for (double x : cell) n += x * x;
                if (n == 0.0) continue;
                any = true;
                l2_normalize(cell);
                for (std::size_t j = 0; j < d; ++j) out[j] += cell[j];
            }
            if (!any && degenerate) *degenerate = true;
            l2_normalize(out);
            break;
        }
    }
    return out;
}

double relevance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimensionError("relevance: dimensions differ (" + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()) + ")");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double recall_at_k(const std::vector<Hit>& approx, const std::vector<Hit>& exact) {
    if (exact.empty()) return 1.0;
    std::unordered_set<std::size_t> truth;
    for (const Hit& h : exact) truth.insert(h.entry);
    std::size_t found = 0;
    for (const Hit& h : approx) found += truth.count(h.entry);
    return static_cast<double>(found) / static_cast<double>(exact.size());
}

// ---- HNSW -----------------------------------------------------------------

namespace {

// Higher similarity first, then lower id.
struct Better {
    bool operator()(const std::pair<double, std::uint32_t>& a, const std::pair<double, std::uint32_t>& b) const {
        return a.first > b.first || (a.first == b.first && a.second < b.second);
    }
};

int draw_level(std::mt19937_64& rng, double ml) {
    // Uniform in (0, 1] from the top 53 bits; avoids implementation-defined
    // distribution objects so files are identical across standard libraries.
    const double u = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
    return static_cast<int>(std::floor(-std::log(u) * ml));
}

}  // namespace

double HnswIndex::sim(std::span<const double> q, std::uint32_t i) const {
    const double* v = vectors_.ptr() + static_cast<std::size_t>(i) * dim_;
    double s = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) s += q[j] * v[j];
    return s;
}

std::uint32_t HnswIndex::greedy(std::span<const double> q, std::uint32_t ep, int layer) const {
    double best = sim(q, ep);
    bool moved = true;
    while (moved) {
        moved = false;
        for (std::uint32_t nb : neighbors(ep, layer)) {
            const double s = sim(q, nb);
            if (s > best || (s == best && nb < ep)) {
                best = s;
                ep = nb;
                moved = true;
            }
        }
    }
    return ep;
}

std::vector<HnswIndex::Candidate> HnswIndex::search_layer(std::span<const double> q,
                                                          const std::vector<std::uint32_t>& eps, std::size_t ef,
                                                          int layer) const {
    std::vector<char> visited(links_.size(), 0);
    // candidates: best on top; results: worst on top.
    auto worse = [](const Candidate& a, const Candidate& b) { return Better{}(b, a); };
    std::priority_queue<Candidate, std::vector<Candidate>, decltype(worse)> candidates(worse);
    std::priority_queue<Candidate, std::vector<Candidate>, Better> results;
    for (std::uint32_t e : eps) {
        if (visited[e]) continue;
        visited[e] = 1;
        const Candidate c{sim(q, e), e};
        candidates.push(c);
        results.push(c);
        if (results.size() > ef) results.pop();
    }
    while (!candidates.empty()) {
        const Candidate c = candidates.top();
        if (results.size() >= ef && Better{}(results.top(), c)) break;
        candidates.pop();
        for (std::uint32_t nb : neighbors(c.second, layer)) {
            if (visited[nb]) continue;
            visited[nb] = 1;
            const Candidate n{sim(q, nb), nb};
            if (results.size() < ef || Better{}(n, results.top())) {
                candidates.push(n);
                results.push(n);
                if (results.size() > ef) results.pop();
            }
        }
    }
    std::vector<Candidate> out;
    out.reserve(results.size());
    while (!results.empty()) {
        out.push_back(results.top());
        results.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
}

std::vector<std::uint32_t> HnswIndex::select_neighbors(const std::vector<Candidate>& sorted_desc, std::size_t m,
                                                       bool keep_pruned) const {
    // Keep a candidate only if it is more similar to the base point than to
    // any neighbor already kept; this spreads links across directions.
    std::vector<std::uint32_t> kept;
    std::vector<std::uint32_t> pruned;
    for (const Candidate& c : sorted_desc) {
        if (kept.size() >= m) break;
        const std::span<const double> cv(vectors_.ptr() + static_cast<std::size_t>(c.second) * dim_, dim_);
        bool good = true;
        for (std::uint32_t r : kept) {
            if (sim(cv, r) > c.first) {
                good = false;
                break;
            }
        }
        if (good) kept.push_back(c.second);
        else pruned.push_back(c.second);
    }
    if (keep_pruned) {
        for (std::size_t i = 0; i < pruned.size() && kept.size() < m; ++i) kept.push_back(pruned[i]);
    }
    return kept;
}

void HnswIndex::insert(std::uint32_t i, int level) {
    links_[i].assign(static_cast<std::size_t>(level) + 1, {});
    if (max_level_ < 0) {
        entry_point_ = i;
        max_level_ = level;
        return;
    }
    const std::span<const double> q(vectors_.ptr() + static_cast<std::size_t>(i) * dim_, dim_);
    auto ep = static_cast<std::uint32_t>(entry_point_);
    for (int layer = max_level_; layer > level; --layer) ep = greedy(q, ep, layer);

    std::vector<std::uint32_t> eps{ep};
    for (int layer = std::min(level, max_level_); layer >= 0; --layer) {
        auto found = search_layer(q, eps, params_.ef_construction, layer);
        // New nodes link up to the layer's degree cap (2M on layer 0).
        const std::size_t cap = max_degree(layer);
        auto chosen = select_neighbors(found, cap, /*keep_pruned=*/true);
        links_[i][static_cast<std::size_t>(layer)] = chosen;
        for (std::uint32_t nb : chosen) {
            auto& nl = links_[nb][static_cast<std::size_t>(layer)];
            nl.push_back(i);
            if (nl.size() <= cap) continue;
            const std::span<const double> nv(vectors_.ptr() + static_cast<std::size_t>(nb) * dim_, dim_);
            std::vector<Candidate> cands;
            cands.reserve(nl.size());
            for (std::uint32_t x : nl) cands.emplace_back(sim(nv, x), x);
            std::sort(cands.begin(), cands.end(), Better{});
            nl = select_neighbors(cands, cap, /*keep_pruned=*/false);
        }
        eps.clear();
        for (const Candidate& c : found) eps.push_back(c.second);
    }
    if (level > max_level_) {
        max_level_ = level;
        entry_point_ = i;
    }
}

HnswIndex HnswIndex::build(num::Tensor vectors, const HnswParams& params) {
    if (params.M < 2) throw ContractError("hnsw_build: M must be at least 2");
    if (params.ef_construction < 1) throw ContractError("hnsw_build: ef_construction must be positive");
    vectors.check_finite("hnsw vectors");
    HnswIndex idx;
    idx.params_ = params;
    idx.dim_ = vectors.cols();
    idx.vectors_ = std::move(vectors);
    const std::size_t n = idx.vectors_.rank() == 2 ? idx.vectors_.rows() : 0;
    idx.links_.resize(n);
    std::mt19937_64 rng(params.seed);
    const double ml = 1.0 / std::log(static_cast<double>(params.M));
    for (std::size_t i = 0; i < n; ++i) idx.insert(static_cast<std::uint32_t>(i), draw_level(rng, ml));
    return idx;
}

std::vector<Hit> HnswIndex::search(std::span<const double> query, std::size_t k, std::size_t ef_search) const {
    if (k == 0) throw ContractError("hnsw_search: k must be at least 1");
    if (ef_search < k) {
        throw ContractError("hnsw_search: ef_search (" + std::to_string(ef_search) + ") must be >= k (" +
                            std::to_string(k) + ")");
    }
    if (links_.empty()) return {};
    if (query.size() != dim_) {
        throw DimensionError("hnsw_search: query has " + std::to_string(query.size()) + " dims, index has " +
                             std::to_string(dim_));
    }
    auto ep = static_cast<std::uint32_t>(entry_point_);
    for (int layer = max_level_; layer > 0; --layer) ep = greedy(query, ep, layer);
    auto found = search_layer(query, {ep}, ef_search, 0);
    std::vector<Hit> out;
    for (std::size_t i = 0; i < found.size() && i < k; ++i) out.push_back({found[i].second, found[i].first});
    return out;
}

std::vector<Hit> hnsw_search(const HnswIndex& index, std::span<const double> query, std::size_t k,
                             std::size_t ef_search) {
    return index.search(query, k, ef_search);
}

// ---- ExternalMemory -------------------------------------------------------

ExternalMemory::ExternalMemory(std::vector<MemoryEntry> entries, Reducer reducer, bool normalized,
                               const HnswParams& params)
    : entries_(std::move(entries)), reducer_(reducer), normalized_(normalized) {
    dim_ = entries_.empty() ? 0 : entries_.front().embedding.size();
    num::Tensor vectors(num::Shape{entries_.size(), dim_});
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        auto& e = entries_[i];
        if (e.embedding.size() != dim_) {
            throw DimensionError("memory entry '" + e.image_id + "' has dimension " +
                                 std::to_string(e.embedding.size()) + ", expected " + std::to_string(dim_));
        }
        if (e.captions.empty()) throw InputError("memory entry '" + e.image_id + "' has no captions");
        if (normalized_) l2_normalize(e.embedding);
        std::copy(e.embedding.begin(), e.embedding.end(), vectors.ptr() + i * dim_);
    }
    index_ = HnswIndex::build(std::move(vectors), params);
}

std::vector<double> ExternalMemory::embed(const FeatureGrid& grid) const {
    auto v = aggregate(grid, reducer_);
    if (normalized_) l2_normalize(v);
    return v;
}

std::vector<Hit> ExternalMemory::search(std::span<const double> query, std::size_t k,
                                        const std::optional<std::string>& exclude_id,
                                        const SearchOptions& opts) const {
    if (k == 0) throw ContractError("search: k must be at least 1");
    if (opts.method == SearchMethod::exact) return exact_knn(*this, query, k, exclude_id);
    if (opts.ef_search < k) {
        throw ContractError("search: ef_search (" + std::to_string(opts.ef_search) + ") must be >= k (" +
                            std::to_string(k) + ")");
    }
    if (!exclude_id) return index_.search(query, k, opts.ef_search);
    const std::size_t fetch = k + opts.exclusion_margin;
    auto hits = index_.search(query, fetch, std::max(opts.ef_search, fetch));
    std::vector<Hit> out;
    for (const Hit& h : hits) {
        if (entries_[h.entry].image_id == *exclude_id) continue;
        out.push_back(h);
        if (out.size() == k) break;
    }
    return out;
}

std::vector<Hit> exact_knn(const ExternalMemory& memory, std::span<const double> query, std::size_t k,
                           const std::optional<std::string>& exclude_id) {
    if (k == 0) throw ContractError("exact_knn: k must be at least 1");
    std::vector<Hit> all;
    all.reserve(memory.size());
    const auto& vecs = memory.index().vectors();
    for (std::size_t i = 0; i < memory.size(); ++i) {
        if (exclude_id && memory.entry(i).image_id == *exclude_id) continue;
        all.push_back({i, relevance(query, vecs.row(i))});
    }
    auto cmp = [&](const Hit& a, const Hit& b) {
        if (a.score != b.score) return a.score > b.score;
        return memory.entry(a.entry).image_id < memory.entry(b.entry).image_id;
    };
    const std::size_t take = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(), cmp);
    all.resize(take);
    return all;
}

std::vector<std::string> retrieve_captions(const ExternalMemory& memory, const FeatureGrid& image, std::size_t k,
                                           const std::optional<std::string>& exclude_id,
                                           const SearchOptions& opts) {
    if (memory.size() == 0) return {};
    if (image.dim() != memory.dim()) {
        throw DimensionError("retrieve_captions: image '" + image.image_id + "' has dimension " +
                             std::to_string(image.dim()) + ", memory has " + std::to_string(memory.dim()));
    }
    const auto q = memory.embed(image);
    std::vector<std::string> out;
    for (const Hit& h : memory.search(q, k, exclude_id, opts)) {
        const auto& caps = memory.entry(h.entry).captions;
        out.insert(out.end(), caps.begin(), caps.end());
    }
    return out;
}

bool operator==(const ExternalMemory& a, const ExternalMemory& b) {
    if (a.size() != b.size() || a.dim_ != b.dim_ || a.reducer_ != b.reducer_ || a.normalized_ != b.normalized_)
        return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.entries_[i].image_id != b.entries_[i].image_id || a.entries_[i].captions != b.entries_[i].captions ||
            a.entries_[i].embedding != b.entries_[i].embedding)
            return false;
    }
    return a.index_ == b.index_;
}

}  // namespace recap::memory
