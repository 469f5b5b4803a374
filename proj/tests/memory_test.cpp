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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "recap/corpus.hpp"
#include "recap/errors.hpp"
#include "recap/memory.hpp"

using namespace recap::memory;
using recap::num::Shape;
using recap::num::Tensor;

namespace {

FeatureGrid grid_of(std::string id, std::size_t g, std::size_t d, std::initializer_list<double> v) {
    return FeatureGrid{std::move(id), Tensor(Shape{g, d}, std::vector<double>(v))};
}

std::vector<std::vector<double>> random_unit_vectors(std::size_t n, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist;
    std::vector<std::vector<double>> out(n, std::vector<double>(d));
    for (auto& v : out) {
        for (double& x : v) x = dist(rng);
        l2_normalize(v);
    }
    return out;
}

ExternalMemory memory_from(const std::vector<std::vector<double>>& vecs, const HnswParams& p = {},
                           bool normalized = true) {
    std::vector<MemoryEntry> entries;
    for (std::size_t i = 0; i < vecs.size(); ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "img%06zu", i);
        entries.push_back({id, vecs[i], {"caption of " + std::string(id), "second caption " + std::string(id)}});
    }
    return ExternalMemory(std::move(entries), Reducer::mean, normalized, p);
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("recap_memory_test_" + name)).string();
}

}  // namespace

TEST(Aggregate, MeanAndMax) {
    auto g = grid_of("x", 2, 2, {1, 2, 3, 4});
    EXPECT_EQ(aggregate(g, Reducer::mean), (std::vector<double>{2, 3}));
    EXPECT_EQ(aggregate(g, Reducer::max), (std::vector<double>{3, 4}));
}

TEST(Aggregate, L2NormSumOfOrthogonalCells) {
    auto v = aggregate(grid_of("x", 2, 2, {3, 0, 0, 4}), Reducer::l2norm_sum);
    EXPECT_NEAR(v[0], 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(v[1], 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(v[0], 0.70711, 5e-6);
}

TEST(Aggregate, L2NormSumSkipsZeroCellsAndFlagsAllZero) {
    bool degenerate = true;
    auto v = aggregate(grid_of("x", 3, 2, {0, 0, 2, 0, 0, 0}), Reducer::l2norm_sum, &degenerate);
    EXPECT_FALSE(degenerate);
    EXPECT_EQ(v, (std::vector<double>{1, 0}));
    v = aggregate(grid_of("z", 2, 2, {0, 0, 0, 0}), Reducer::l2norm_sum, &degenerate);
    EXPECT_TRUE(degenerate);
    EXPECT_EQ(v, (std::vector<double>{0, 0}));
}

TEST(Aggregate, PermutationInvariantAndUnitNormProperty) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> dist;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t g = 1 + rng() % 9, d = 1 + rng() % 12;
        Tensor t(Shape{g, d});
        for (double& x : t.data()) x = dist(rng);
        std::vector<std::size_t> perm(g);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Tensor p(Shape{g, d});
        for (std::size_t i = 0; i < g; ++i)
            for (std::size_t j = 0; j < d; ++j) p.at(i, j) = t.at(perm[i], j);
        for (Reducer r : {Reducer::mean, Reducer::max, Reducer::l2norm_sum}) {
            auto a = aggregate({"a", t}, r);
            auto b = aggregate({"b", p}, r);
            ASSERT_EQ(a.size(), d);
            for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(a[j], b[j], 1e-12);
            if (r == Reducer::l2norm_sum) EXPECT_NEAR(std::sqrt(relevance(a, a)), 1.0, 1e-10);
        }
    }
}

TEST(Relevance, InnerProduct) {
    EXPECT_EQ(relevance(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.0);
    EXPECT_EQ(relevance(std::vector<double>{0.6, 0.8}, std::vector<double>{0.6, 0.8}), 0.36 + 0.64);
    EXPECT_EQ(relevance(std::vector<double>{1, 2}, std::vector<double>{3, 4}), 11.0);
    EXPECT_THROW(relevance(std::vector<double>{1, 2}, std::vector<double>{3}), recap::DimensionError);
}

TEST(ExactKnn, SingleEntryAndExclusion) {
    auto m = memory_from({{1.0, 0.0}});
    auto hits = exact_knn(m, std::vector<double>{1, 0}, 1);
    ASSERT_EQ(hits.size(), 1u);
    EXPECT_EQ(m.entry(hits[0].entry).image_id, "img000000");
    EXPECT_TRUE(exact_knn(m, std::vector<double>{1, 0}, 1, std::string("img000000")).empty());
}

TEST(ExactKnn, EmptyMemoryGivesEmptyResult) {
    ExternalMemory empty({}, Reducer::mean, true, {});
    EXPECT_TRUE(exact_knn(empty, std::vector<double>{1, 0}, 3).empty());
    EXPECT_TRUE(empty.search(std::vector<double>{1, 0}, 3, std::nullopt).empty());
}

TEST(ExactKnn, MatchesBruteForceSort) {
    auto vecs = random_unit_vectors(1000, 16, 2);
    auto m = memory_from(vecs, {8, 40, 0});
    auto queries = random_unit_vectors(20, 16, 3);
    for (const auto& q : queries) {
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t i = 0; i < vecs.size(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 16; ++j) s += q[j] * m.entry(i).embedding[j];
            all.emplace_back(-s, i);
        }
        std::sort(all.begin(), all.end());
        for (std::size_t k : {1u, 5u, 10u, 40u}) {
            auto hits = exact_knn(m, q, k);
            ASSERT_EQ(hits.size(), k);
            for (std::size_t i = 0; i < k; ++i) {
                EXPECT_EQ(hits[i].entry, all[i].second);
                if (i) EXPECT_GE(hits[i - 1].score, hits[i].score);
            }
        }
    }
}

TEST(ExactKnn, TiesBrokenByImageId) {
    std::vector<MemoryEntry> e{{"b", {1, 0}, {"x"}}, {"a", {1, 0}, {"y"}}, {"c", {0, 1}, {"z"}}};
    ExternalMemory m(e, Reducer::mean, false, {});
    auto hits = exact_knn(m, std::vector<double>{1, 0}, 3);
    EXPECT_EQ(m.entry(hits[0].entry).image_id, "a");
    EXPECT_EQ(m.entry(hits[1].entry).image_id, "b");
    EXPECT_EQ(m.entry(hits[2].entry).image_id, "c");
}

TEST(Hnsw, SingleEntryHasNoEdges) {
    auto m = memory_from({{1.0, 0.0}});
    EXPECT_EQ(m.index().size(), 1u);
    EXPECT_TRUE(m.index().neighbors(0, 0).empty());
}

TEST(Hnsw, DegreeBoundsAndValidEdges) {
    auto m = memory_from(random_unit_vectors(100, 8, 4), {32, 200, 0});
    const auto& idx = m.index();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        for (int l = 0; l <= idx.level(i); ++l) {
            const auto& nb = idx.neighbors(i, l);
            EXPECT_LE(nb.size(), idx.max_degree(l));
            std::set<std::uint32_t> uniq(nb.begin(), nb.end());
            EXPECT_EQ(uniq.size(), nb.size());
            for (auto n : nb) {
                EXPECT_LT(n, idx.size());
                EXPECT_NE(n, i);
                EXPECT_GE(idx.level(n), l);
            }
        }
    }
    EXPECT_LE(idx.max_degree(0), 64u);
}

TEST(Hnsw, FullMemoryQueryReturnsEverything) {
    auto vecs = random_unit_vectors(200, 8, 5);
    auto m = memory_from(vecs, {8, 50, 0});
    auto q = random_unit_vectors(1, 8, 6)[0];
    auto approx = m.search(q, 200, std::nullopt, {SearchMethod::hnsw, 400});
    auto exact = exact_knn(m, q, 200);
    std::set<std::size_t> a, b;
    for (auto& h : approx) a.insert(h.entry);
    for (auto& h : exact) b.insert(h.entry);
    EXPECT_EQ(a.size(), 200u);
    EXPECT_EQ(a, b);
}

TEST(Hnsw, StoredVectorRanksFirst) {
    auto vecs = random_unit_vectors(2000, 16, 7);
    auto m = memory_from(vecs, {16, 100, 0});
    for (std::size_t i = 0; i < 2000; i += 97) {
        auto hits = m.search(vecs[i], 5, std::nullopt);
        ASSERT_FALSE(hits.empty());
        EXPECT_EQ(hits[0].entry, i);
    }
}

TEST(Hnsw, EfBelowKIsContractError) {
    auto m = memory_from(random_unit_vectors(10, 4, 8));
    EXPECT_THROW(m.index().search(std::vector<double>(4, 0.5), 10, 5), recap::ContractError);
    EXPECT_THROW(m.search(std::vector<double>(4, 0.5), 10, std::nullopt, {SearchMethod::hnsw, 5}),
                 recap::ContractError);
}

TEST(Hnsw, ResultsAreDistinctAndSorted) {
    auto m = memory_from(random_unit_vectors(500, 8, 9), {8, 64, 0});
    auto queries = random_unit_vectors(30, 8, 10);
    for (const auto& q : queries) {
        auto hits = m.search(q, 20, std::nullopt, {SearchMethod::hnsw, 32});
        std::set<std::size_t> seen;
        for (std::size_t i = 0; i < hits.size(); ++i) {
            EXPECT_TRUE(seen.insert(hits[i].entry).second);
            if (i) EXPECT_GE(hits[i - 1].score, hits[i].score);
        }
    }
}

TEST(Hnsw, DeterministicForSeed) {
    auto vecs = random_unit_vectors(300, 8, 11);
    EXPECT_EQ(memory_from(vecs, {8, 40, 3}).index(), memory_from(vecs, {8, 40, 3}).index());
}

// 10,000 unit vectors in 64-d, M=32, ef_construction=200, seed 0.
class HnswBenchmark : public ::testing::Test {
 protected:
    static void SetUpTestSuite() {
        vecs_ = new std::vector<std::vector<double>>(random_unit_vectors(10000, 64, 1234));
        mem_ = new ExternalMemory(memory_from(*vecs_, {32, 200, 0}));
        queries_ = new std::vector<std::vector<double>>(random_unit_vectors(100, 64, 4321));
    }
    static void TearDownTestSuite() {
        delete vecs_;
        delete mem_;
        delete queries_;
    }
    static double recall(std::size_t ef) {
        double total = 0.0;
        for (const auto& q : *queries_) {
            total += recall_at_k(mem_->search(q, 10, std::nullopt, {SearchMethod::hnsw, ef}), exact_knn(*mem_, q, 10));
        }
        return total / static_cast<double>(queries_->size());
    }
    static std::vector<std::vector<double>>* vecs_;
    static ExternalMemory* mem_;
    static std::vector<std::vector<double>>* queries_;
};
std::vector<std::vector<double>>* HnswBenchmark::vecs_ = nullptr;
ExternalMemory* HnswBenchmark::mem_ = nullptr;
std::vector<std::vector<double>>* HnswBenchmark::queries_ = nullptr;

TEST_F(HnswBenchmark, RecallAt10AboveThreshold) {
    const double r = recall(64);
    RecordProperty("recall_at_10", std::to_string(r));
    EXPECT_GE(r, 0.95);
}

TEST_F(HnswBenchmark, RecallNonDecreasingInEf) {
    double prev = 0.0;
    for (std::size_t ef : {10u, 16u, 32u, 64u, 128u, 256u}) {
        const double r = recall(ef);
        EXPECT_GE(r, prev) << "ef=" << ef;
        prev = r;
    }
}

TEST(RetrieveCaptions, SingleEntryReturnsStoredOrder) {
    std::vector<MemoryEntry> e{{"only", {1, 0}, {"c1", "c2", "c3", "c4", "c5"}}};
    ExternalMemory m(e, Reducer::mean, true, {});
    auto caps = retrieve_captions(m, grid_of("q", 1, 2, {1, 0}), 1, std::nullopt);
    EXPECT_EQ(caps, (std::vector<std::string>{"c1", "c2", "c3", "c4", "c5"}));
    EXPECT_TRUE(retrieve_captions(m, grid_of("only", 1, 2, {1, 0}), 1, std::string("only")).empty());
}

TEST(RetrieveCaptions, MatchesExactOracle) {
    std::vector<CorpusRecord> recs;
    std::mt19937_64 rng(12);
    std::normal_distribution<double> dist;
    for (int i = 0; i < 60; ++i) {
        CorpusRecord r;
        r.grid.image_id = "im" + std::to_string(100 + i);
        r.grid.grid = Tensor(Shape{4, 6});
        for (double& x : r.grid.grid.data()) x = dist(rng);
        r.captions = {"first " + std::to_string(i), "second " + std::to_string(i)};
        recs.push_back(r);
    }
    auto m = build_memory(recs, Reducer::mean, true, {8, 100, 0});
    for (int qi = 0; qi < 10; ++qi) {
        const auto& query = recs[static_cast<std::size_t>(qi * 5)];
        auto got = retrieve_captions(m, query.grid, 3, query.image_id());
        // Brute force: score every other record with the normalized mean embedding.
        auto qv = aggregate(query.grid, Reducer::mean);
        l2_normalize(qv);
        std::vector<std::pair<double, std::string>> scored;
        for (const auto& r : recs) {
            if (r.image_id() == query.image_id()) continue;
            auto v = aggregate(r.grid, Reducer::mean);
            l2_normalize(v);
            scored.emplace_back(-relevance(qv, v), r.image_id());
        }
        std::sort(scored.begin(), scored.end());
        std::vector<std::string> expected;
        for (int k = 0; k < 3; ++k) {
            const auto& id = scored[static_cast<std::size_t>(k)].second;
            for (const auto& r : recs)
                if (r.image_id() == id) expected.insert(expected.end(), r.captions.begin(), r.captions.end());
        }
        EXPECT_EQ(got, expected);
    }
}

TEST(IndexFile, RoundTripIsExactAndByteStable) {
    auto m = memory_from(random_unit_vectors(300, 8, 13), {8, 40, 0});
    const auto p1 = temp_path("a.rcix"), p2 = temp_path("b.rcix");
    m.save(p1);
    auto back = ExternalMemory::load(p1, 8);
    EXPECT_EQ(back, m);
    memory_from(random_unit_vectors(300, 8, 13), {8, 40, 0}).save(p2);
    std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_EQ(sa.str().substr(0, 4), "RCIX");
}

TEST(IndexFile, RejectsDimensionVersionAndMagicMismatch) {
    auto m = memory_from(random_unit_vectors(20, 4, 14));
    const auto p = temp_path("c.rcix");
    m.save(p);
    EXPECT_THROW(ExternalMemory::load(p, 5), recap::InputError);
    std::string bytes;
    {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        bytes = ss.str();
    }
    auto write = [&](const std::string& b) {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        out << b;
    };
    std::string bad_version = bytes;
    bad_version[4] = 7;
    write(bad_version);
    EXPECT_THROW(ExternalMemory::load(p), recap::InputError);
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    write(bad_magic);
    EXPECT_THROW(ExternalMemory::load(p), recap::InputError);
    write(bytes.substr(0, bytes.size() / 2));
    EXPECT_THROW(ExternalMemory::load(p), recap::InputError);
}

TEST(Corpus, ParsesAndReportsLineNumbers) {
    std::istringstream good(
        R"({"image_id":"a","grid":[[1,2],[3,4]],"captions":["x y"]})"
        "\n\n"
        R"({"image_id":"b","grid":[[0,1]],"captions":["z"]})"
        "\n");
    auto recs = read_corpus(good, "mem");
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_EQ(recs[0].grid.cells(), 2u);
    EXPECT_EQ(recs[1].captions, (std::vector<std::string>{"z"}));

    std::istringstream bad(R"({"image_id":"a","grid":[[1,2]],"captions":[]})"
                           "\n"
                           R"({"image_id":"b","grid":[[1,2,3]],"captions":["q"]})");
    try {
        read_corpus(bad, "mem");
        FAIL();
    } catch (const recap::InputError& e) {
        EXPECT_NE(std::string(e.what()).find("mem:2"), std::string::npos) << e.what();
    }
    std::istringstream broken("{not json}\n");
    EXPECT_THROW(read_corpus(broken, "mem"), recap::InputError);
}

TEST(Corpus, WriteReadRoundTrip) {
    std::vector<CorpusRecord> recs(1);
    recs[0].grid = grid_of("q", 2, 2, {0.1, -2.5e-7, 3.0, 1.0 / 3.0});
    recs[0].captions = {"hello world"};
    std::stringstream ss;
    write_corpus(ss, recs);
    auto back = read_corpus(ss);
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].grid.grid, recs[0].grid.grid);
    EXPECT_EQ(back[0].captions, recs[0].captions);
}
