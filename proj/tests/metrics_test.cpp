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

#include <cmath>
#include <map>
#include <random>

#include "recap/errors.hpp"
#include "recap/metrics.hpp"
#include "recap/nn_quality.hpp"
#include "recap/tokenizer.hpp"

using namespace recap::metrics;
using recap::memory::CorpusRecord;
using recap::memory::FeatureGrid;
using recap::memory::Reducer;
using recap::num::Shape;
using recap::num::Tensor;

namespace {

// Three single-reference images: df(a) = 2, every other n-gram has df 1.
CorpusIdf toy_idf() { return CorpusIdf::from_references({{"a b d"}, {"a e f"}, {"g h i"}}); }

const double L1 = std::log(1.5);
const double L3 = std::log(3.0);

std::string random_sentence(std::mt19937_64& rng, std::size_t vocab, std::size_t len) {
    std::string s;
    for (std::size_t i = 0; i < len; ++i) {
        if (i) s += ' ';
        s += "w" + std::to_string(rng() % vocab);
    }
    return s;
}

}  // namespace

TEST(CorpusIdf, DocumentFrequencyCountsImagesNotCaptions) {
    const auto idf = CorpusIdf::from_references({{"a b", "a b", "a c"}, {"a"}});
    EXPECT_EQ(idf.corpus_size(), 2u);
    EXPECT_EQ(idf.df("a"), 2u);
    EXPECT_EQ(idf.df("a b"), 1u);
    EXPECT_EQ(idf.df("zzz"), 0u);
    EXPECT_DOUBLE_EQ(idf.idf("a"), 0.0);
    EXPECT_DOUBLE_EQ(idf.idf("a b"), std::log(2.0));
    // Unseen n-grams are weighted as if df were 1.
    EXPECT_DOUBLE_EQ(idf.idf("zzz"), std::log(2.0));
}

TEST(CiderD, IdentityWithSingleReferenceIsTen) {
    const auto idf = CorpusIdf::from_references({{"a man rides a brown horse"}, {"two dogs play in snow"}, {"a red bus"}});
    EXPECT_NEAR(cider_d("a man rides a brown horse", {"a man rides a brown horse"}, idf), 10.0, 1e-12);
}

TEST(CiderD, DisjointVocabularyIsZero) {
    EXPECT_EQ(cider_d("x y z", {"a b d"}, toy_idf()), 0.0);
}

TEST(CiderD, EmptyCandidateIsZero) { EXPECT_EQ(cider_d("", {"a b d"}, toy_idf()), 0.0); }

TEST(CiderD, HandEvaluatedSubstitution) {
    // n=1: (L1^2 + L3^2) / (L1^2 + 2 L3^2); n=2: one of two bigrams shared -> 1/2.
    const double expected = 10.0 * ((L1 * L1 + L3 * L3) / (L1 * L1 + 2 * L3 * L3) + 0.5) / 4.0;
    EXPECT_NEAR(cider_d("a b c", {"a b d"}, toy_idf()), expected, 1e-6);
    EXPECT_NEAR(expected, 2.579705, 1e-6);
}

TEST(CiderD, HandEvaluatedShortCandidateLengthPenalty) {
    const double cos1 = std::sqrt(L1 * L1 + L3 * L3) / std::sqrt(L1 * L1 + 2 * L3 * L3);
    const double expected = 10.0 * std::exp(-1.0 / 72.0) * (cos1 + 1.0 / std::sqrt(2.0)) / 4.0;
    EXPECT_NEAR(cider_d("a b", {"a b d"}, toy_idf()), expected, 1e-6);
}

TEST(CiderD, HandEvaluatedClippingOverTwoReferences) {
    // tf(a) = 2 is clipped to the reference weight; both references score alike.
    const double cos1 = L1 / (2.0 * std::sqrt(L1 * L1 + 2 * L3 * L3));
    const double expected = 10.0 * std::exp(-1.0 / 72.0) * cos1 / 4.0;
    EXPECT_NEAR(cider_d("a a", {"a b d", "a e f"}, toy_idf()), expected, 1e-6);
}

TEST(CiderD, NormalizesCaseAndPunctuation) {
    const auto idf = toy_idf();
    EXPECT_EQ(cider_d("A, b c!", {"a b d."}, idf), cider_d("a b c", {"a b d"}, idf));
}

TEST(CiderD, RangeAndDeterminism) {
    std::mt19937_64 rng(5);
    std::vector<std::vector<std::string>> corpus;
    for (int i = 0; i < 30; ++i) {
        std::vector<std::string> refs;
        for (int j = 0; j < 5; ++j) refs.push_back(random_sentence(rng, 12, 3 + rng() % 6));
        corpus.push_back(refs);
    }
    const auto idf = CorpusIdf::from_references(corpus);
    for (int t = 0; t < 200; ++t) {
        const auto cand = random_sentence(rng, 12, 1 + rng() % 8);
        const auto& refs = corpus[rng() % corpus.size()];
        const double s = cider_d(cand, refs, idf);
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 10.0 + 1e-12);
        EXPECT_EQ(s, cider_d(cand, refs, idf));
    }
}

TEST(Bleu, IdentityIsOne) {
    EXPECT_DOUBLE_EQ(bleu_n("a man rides a horse", {"a man rides a horse"}, 4), 1.0);
    EXPECT_DOUBLE_EQ(bleu_n("a man rides a horse", {"a man rides a horse"}, 1), 1.0);
}

TEST(Bleu, ClippingExample) {
    EXPECT_NEAR(bleu_n("the the the", {"the cat"}, 1), 1.0 / 3.0, 1e-12);
}

TEST(Bleu, DisjointIsZero) { EXPECT_EQ(bleu_n("x y z", {"a b c"}, 1), 0.0); }

TEST(Bleu, BrevityPenaltyUsesClosestReference) {
    // c = 2, closest r = 3 (not 6): BP = exp(1 - 3/2), both unigrams match.
    EXPECT_NEAR(bleu_n("a b", {"a b c", "a b c d e f"}, 1), std::exp(1.0 - 1.5), 1e-12);
    // Equidistant references pick the shorter one: r = 2, BP = 1.
    EXPECT_NEAR(bleu_n("a b c", {"a b", "a b c d"}, 1), 1.0, 1e-12);
}

TEST(Bleu, ShortCandidateAndSmoothing) {
    EXPECT_EQ(bleu_n("a b", {"a b"}, 4), 0.0);
    // Add-one on orders 2..4: p = 1, 2/2, 1/1, 1/1.
    EXPECT_NEAR(bleu_n("a b", {"a b"}, 4, true), 1.0, 1e-12);
    EXPECT_THROW(bleu_n("a", {"a"}, 5), std::invalid_argument);
}

TEST(Bleu, HandEvaluatedBleu4) {
    // p1 = 5/5, p2 = 2/4, p3 = 1/3, p4 = 0 -> zero without smoothing.
    EXPECT_EQ(bleu_n("a b c d x", {"a b c x d"}, 4), 0.0);
    // Smoothed: p2 = 3/5, p3 = 2/4, p4 = 1/3; c = r so BP = 1.
    const double expected = std::pow(1.0 * 0.6 * 0.5 * (1.0 / 3.0), 0.25);
    EXPECT_NEAR(bleu_n("a b c d x", {"a b c x d"}, 4, true), expected, 1e-12);
}

TEST(Bleu, CorpusAggregatesCountsBeforeRatio) {
    // Sentence 1: 1/1 match, c=1, r=1. Sentence 2: 0/3 match, c=3, r=3.
    // Corpus p1 = 1/4 while the mean of sentence scores would be 1/2.
    EXPECT_NEAR(corpus_bleu({"a", "x y z"}, {{"a"}, {"p q r"}}, 1), 0.25, 1e-12);
    EXPECT_THROW(corpus_bleu({"a"}, {}, 1), std::invalid_argument);
}

TEST(RougeL, IdentityAndDisjoint) {
    EXPECT_DOUBLE_EQ(rouge_l("a man rides a horse", {"a man rides a horse"}), 1.0);
    EXPECT_EQ(rouge_l("x y", {"a b"}), 0.0);
    EXPECT_EQ(rouge_l("", {"a b"}), 0.0);
}

TEST(RougeL, HandEvaluatedSubsequence) {
    const double p = 1.0, r = 0.6, b2 = 1.44;
    const double expected = (1 + b2) * p * r / (r + b2 * p);
    EXPECT_NEAR(rouge_l("a c e", {"a b c d e"}), expected, 1e-12);
    EXPECT_NEAR(expected, 0.717647, 1e-6);
}

TEST(RougeL, MaxOverReferences) {
    EXPECT_DOUBLE_EQ(rouge_l("a c e", {"x y", "a b c d e", "a c e"}), 1.0);
}

TEST(Evaluate, EmptyPredictions) {
    const auto rep = evaluate({}, {{"i", {"a b"}}});
    EXPECT_EQ(rep.images(), 0u);
    EXPECT_TRUE(rep.skipped.empty());
}

TEST(Evaluate, MissingGroundTruthIsSkipped) {
    const auto rep = evaluate({{"i", "a b c d"}, {"j", "x"}}, {{"i", {"a b c d"}}, {"k", {"q"}}});
    EXPECT_EQ(rep.images(), 1u);
    ASSERT_EQ(rep.skipped.size(), 1u);
    EXPECT_EQ(rep.skipped[0], "j");
}

TEST(Evaluate, ReferencePredictionsGiveMaximalCider) {
    std::map<std::string, std::vector<std::string>> gts = {
        {"a", {"a man rides a brown horse", "someone on a horse"}},
        {"b", {"two dogs play in the snow", "dogs in snow"}},
        {"c", {"a red bus on a city street", "a bus"}},
    };
    std::map<std::string, std::string> preds;
    for (const auto& [id, refs] : gts) preds[id] = refs[0];
    const auto rep = evaluate(preds, gts);
    EXPECT_EQ(rep.images(), 3u);
    // Identity against one of several references is not 10, so compare
    // against the per-image upper bound: each prediction scored against itself.
    std::map<std::string, std::vector<std::string>> self;
    for (const auto& [id, refs] : gts) self[id] = {refs[0]};
    const auto rep_self = evaluate(preds, self);
    EXPECT_NEAR(rep_self.corpus.cider, 10.0, 1e-12);
    EXPECT_NEAR(rep_self.corpus.bleu4, 1.0, 1e-12);
    EXPECT_NEAR(rep_self.corpus.rouge_l, 1.0, 1e-12);
}

TEST(Evaluate, MatchesComposedPerOperationOracle) {
    std::mt19937_64 rng(11);
    std::map<std::string, std::vector<std::string>> gts;
    std::map<std::string, std::string> preds;
    for (int i = 0; i < 20; ++i) {
        const std::string id = "img" + std::to_string(i);
        for (int j = 0; j < 5; ++j) gts[id].push_back(random_sentence(rng, 15, 4 + rng() % 5));
        preds[id] = random_sentence(rng, 15, 3 + rng() % 6);
    }
    const auto rep = evaluate(preds, gts);
    ASSERT_EQ(rep.images(), 20u);

    std::vector<std::vector<std::string>> all;
    for (const auto& [_, r] : gts) all.push_back(r);
    const auto idf = CorpusIdf::from_references(all);
    double cider_sum = 0, rouge_sum = 0;
    // Corpus BLEU-1 by direct count aggregation.
    double clipped = 0, total = 0, c_len = 0, r_len = 0;
    for (const auto& [id, cand] : preds) {
        const auto& refs = gts[id];
        const auto& s = rep.per_image.at(id);
        EXPECT_EQ(s.cider, cider_d(cand, refs, idf));
        EXPECT_EQ(s.bleu1, bleu_n(cand, refs, 1));
        EXPECT_EQ(s.bleu4, bleu_n(cand, refs, 4));
        EXPECT_EQ(s.rouge_l, rouge_l(cand, refs));
        cider_sum += s.cider;
        rouge_sum += s.rouge_l;

        const auto cw = recap::text::words(cand);
        std::map<std::string, int> cc, mx;
        for (const auto& w : cw) ++cc[w];
        std::size_t best = 0;
        long best_diff = -1;
        for (const auto& r : refs) {
            const auto rw = recap::text::words(r);
            std::map<std::string, int> rc;
            for (const auto& w : rw) ++rc[w];
            for (const auto& [w, n] : rc) mx[w] = std::max(mx[w], n);
            const long diff = std::labs(static_cast<long>(rw.size()) - static_cast<long>(cw.size()));
            if (best_diff < 0 || diff < best_diff || (diff == best_diff && rw.size() < best)) {
                best_diff = diff;
                best = rw.size();
            }
        }
        for (const auto& [w, n] : cc) clipped += std::min(n, mx[w]);
        total += static_cast<double>(cw.size());
        c_len += static_cast<double>(cw.size());
        r_len += static_cast<double>(best);
    }
    EXPECT_NEAR(rep.corpus.cider, cider_sum / 20.0, 1e-12);
    EXPECT_NEAR(rep.corpus.rouge_l, rouge_sum / 20.0, 1e-12);
    const double bp = c_len >= r_len ? 1.0 : std::exp(1.0 - r_len / c_len);
    EXPECT_NEAR(rep.corpus.bleu1, bp * clipped / total, 1e-12);
}

TEST(Evaluate, JsonHasCorpusAndPerImage) {
    const auto rep = evaluate({{"i", "a b c d"}}, {{"i", {"a b c d"}}});
    const auto js = rep.to_json();
    EXPECT_NE(js.find("\"CIDEr-D\""), std::string::npos);
    EXPECT_NE(js.find("\"per_image\""), std::string::npos);
    EXPECT_NE(rep.to_table().find("B-4"), std::string::npos);
}

namespace {

CorpusRecord record(const std::string& id, std::vector<double> v, std::vector<std::string> caps) {
    const std::size_t d = v.size();
    return {FeatureGrid{id, Tensor(Shape{1, d}, std::move(v))}, std::move(caps)};
}

// Memory of 60 images in 6 visual clusters whose captions share the cluster's noun.
std::vector<CorpusRecord> clustered(std::size_t n, std::uint64_t seed, const std::string& prefix) {
    static const char* nouns[] = {"horse", "dog", "bus", "pizza", "boat", "clock"};
    static const char* verbs[] = {"stands", "runs", "waits", "sits", "rests"};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.3);
    std::vector<CorpusRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % 6;
        std::vector<double> v(8, 0.0);
        for (auto& x : v) x = noise(rng);
        v[c] += 2.0;
        std::vector<std::string> caps;
        for (int j = 0; j < 5; ++j)
            caps.push_back(std::string("a ") + nouns[c] + " " + verbs[rng() % 5] + " near the " + nouns[rng() % 6]);
        out.push_back(record(prefix + std::to_string(i), v, caps));
    }
    return out;
}

}  // namespace

TEST(NnQuality, OracleDominatesMeanAndGrowsWithK) {
    const auto mem = recap::memory::build_memory(clustered(60, 1, "m"), Reducer::mean);
    const auto test = clustered(12, 2, "t");
    const auto rep = nn_quality(mem, test, {5, 10, 20, 40});
    ASSERT_EQ(rep.cells.size(), 4u);
    for (std::size_t i = 0; i < rep.cells.size(); ++i) {
        const auto& c = rep.cells[i];
        EXPECT_EQ(c.images, 12u);
        EXPECT_EQ(c.index, "mean");
        EXPECT_GE(c.oracle.cider, c.mean.cider);
        EXPECT_GE(c.oracle.bleu1, c.mean.bleu1);
        EXPECT_GE(c.oracle.bleu4, c.mean.bleu4);
        EXPECT_GE(c.oracle.rouge_l, c.mean.rouge_l);
        if (i > 0) {
            const auto& p = rep.cells[i - 1];
            EXPECT_GE(c.oracle.cider, p.oracle.cider);
            EXPECT_GE(c.oracle.bleu1, p.oracle.bleu1);
            EXPECT_GE(c.oracle.bleu4, p.oracle.bleu4);
            EXPECT_GE(c.oracle.rouge_l, p.oracle.rouge_l);
        }
    }
    const auto table = rep.to_table();
    EXPECT_NE(table.find("max"), std::string::npos);
    EXPECT_NE(rep.to_json().find("\"oracle\""), std::string::npos);
}

TEST(NnQuality, StoredGroundTruthGivesPerfectOracle) {
    auto records = clustered(30, 3, "m");
    auto test = clustered(6, 4, "t");
    // One ground truth per image; CIDEr-D averages over references.
    for (auto& r : test) r.captions.resize(1);
    // Put the test images and their captions into memory verbatim.
    records.insert(records.end(), test.begin(), test.end());
    const auto mem = recap::memory::build_memory(records, Reducer::mean);
    const auto rep = nn_quality(mem, test, {1});
    EXPECT_NEAR(rep.cells[0].oracle.cider, 10.0, 1e-9);
    // With self-exclusion the verbatim copy is gone.
    NnQualityOptions opts;
    opts.exclude_self = true;
    EXPECT_LT(nn_quality(mem, test, {1}, opts).cells[0].oracle.cider, 10.0);
}

TEST(NnQuality, RejectsEmptyK) {
    const auto mem = recap::memory::build_memory(clustered(6, 1, "m"), Reducer::mean);
    EXPECT_THROW(nn_quality(mem, clustered(2, 2, "t"), {}), recap::ContractError);
    EXPECT_THROW(nn_quality(mem, clustered(2, 2, "t"), {0}), recap::ContractError);
}
