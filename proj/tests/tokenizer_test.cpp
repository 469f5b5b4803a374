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

#include <random>
#include <set>

#include "recap/errors.hpp"
#include "recap/tokenizer.hpp"

using namespace recap::text;

namespace {

const std::vector<std::string> kObjects{"dog", "cat", "horse", "bicycle", "pizza", "giraffe", "train", "kite"};
const std::vector<std::string> kPlaces{"park", "kitchen", "street", "beach", "field", "station"};
const std::vector<std::string> kVerbs{"sitting", "running", "standing", "parked", "lying", "flying"};

std::vector<std::string> synthetic_captions(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto pick = [&](const std::vector<std::string>& v) { return v[rng() % v.size()]; };
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back("A " + pick(kObjects) + " is " + pick(kVerbs) + " in the " + pick(kPlaces) + ".");
    }
    return out;
}

}  // namespace

TEST(Normalize, LowercasesStripsPunctuationCollapsesSpace) {
    EXPECT_EQ(normalize("  A Dog,  runs!\tHOME. "), "a dog runs home");
    EXPECT_EQ(normalize(""), "");
    EXPECT_EQ(normalize("..."), "");
    EXPECT_EQ(words("The cat's toy"), (std::vector<std::string>{"the", "cats", "toy"}));
}

TEST(TrainBpe, SingleDominantPair) {
    // base symbols: 4 specials + </w> + {a, b}
    auto r = train_bpe({"aaab"}, 8);
    ASSERT_EQ(r.vocab.merges().size(), 1u);
    EXPECT_EQ(r.vocab.merges()[0], (std::pair<std::string, std::string>{"a", "a"}));
    EXPECT_FALSE(r.target_unreachable);
}

TEST(TrainBpe, RepeatedWordBecomesOneToken) {
    auto r = train_bpe({"ab", "ab"}, 9);
    EXPECT_EQ(r.vocab.encode("ab").ids.size(), 1u);
}

TEST(TrainBpe, TargetBelowBaseIsContractError) {
    EXPECT_THROW(train_bpe({"abc"}, 8), recap::ContractError);
    EXPECT_THROW(train_bpe({}, 100), recap::ContractError);
}

TEST(TrainBpe, SmallCorpusFlagsUnreachableTarget) {
    auto r = train_bpe({"ab"}, 500);
    EXPECT_TRUE(r.target_unreachable);
    EXPECT_LT(r.vocab.size(), 500u);
    EXPECT_EQ(r.vocab.encode("ab").ids.size(), 1u);
}

TEST(TrainBpe, DeterministicForIdenticalCorpus) {
    auto corpus = synthetic_captions(100, 1);
    EXPECT_EQ(train_bpe(corpus, 120).vocab.merges(), train_bpe(corpus, 120).vocab.merges());
}

TEST(Encode, EmptyStringGivesNoIds) {
    auto v = train_bpe(synthetic_captions(20, 2), 60).vocab;
    EXPECT_TRUE(v.encode("").ids.empty());
    EXPECT_EQ(v.decode({}), "");
}

TEST(Encode, RoundTripOnSyntheticCorpus) {
    auto corpus = synthetic_captions(100, 3);
    auto v = train_bpe(corpus, 300).vocab;
    for (const auto& s : corpus) EXPECT_EQ(v.decode(v.encode(s).ids), normalize(s)) << s;
}

TEST(Encode, OutOfAlphabetCharacterBecomesUnk) {
    auto v = train_bpe({"abc abc cab"}, 12).vocab;
    auto seq = v.encode("abz ab");
    EXPECT_NE(std::find(seq.ids.begin(), seq.ids.end(), v.specials().unk), seq.ids.end());
    EXPECT_EQ(v.decode(seq.ids), "ab<unk> ab");
}

TEST(Encode, SpecialsNeverProducedByEncoding) {
    auto corpus = synthetic_captions(50, 4);
    auto v = train_bpe(corpus, 200).vocab;
    for (const auto& s : corpus)
        for (int id : v.encode(s).ids) EXPECT_FALSE(v.is_special(id));
}

TEST(Encode, LengthIsSubadditiveOverWordConcatenation) {
    auto corpus = synthetic_captions(100, 5);
    auto v = train_bpe(corpus, 150).vocab;
    std::mt19937_64 rng(6);
    for (int i = 0; i < 200; ++i) {
        const auto& a = corpus[rng() % corpus.size()];
        const auto& b = corpus[rng() % corpus.size()];
        EXPECT_LE(v.encode(a + " " + b).ids.size(), v.encode(a).ids.size() + v.encode(b).ids.size() + 1);
    }
}

TEST(Vocabulary, JsonRoundTrip) {
    auto v = train_bpe(synthetic_captions(60, 7), 150).vocab;
    auto back = Vocabulary::from_json(v.to_json());
    EXPECT_EQ(back, v);
    EXPECT_EQ(back.size(), v.size());
    for (int id = 0; id < static_cast<int>(v.size()); ++id) EXPECT_EQ(back.token(id), v.token(id));
}

TEST(Vocabulary, RejectsWrongVersion) {
    EXPECT_THROW(Vocabulary::from_json(R"({"version":99,"alphabet":[],"merges":[],"specials":{}})"),
                 recap::InputError);
    EXPECT_THROW(Vocabulary::from_json("not json"), recap::InputError);
}

TEST(UniqueWords, DropsStopWordsAndDuplicates) {
    StopWordList stops("test", {"a", "the"});
    EXPECT_EQ(unique_words({"a dog runs", "the dog sleeps"}, stops), (std::vector<std::string>{"dog", "runs", "sleeps"}));
}

TEST(UniqueWords, AllStopWordsGivesEmpty) {
    EXPECT_TRUE(unique_words({"a the", "of in on"}, StopWordList::english()).empty());
}

TEST(UniqueWords, CapKeepsRankOrder) {
    StopWordList stops("test", {"x"});
    EXPECT_EQ(unique_words({"one two", "three four"}, stops, 3), (std::vector<std::string>{"one", "two", "three"}));
}

TEST(UniqueWords, MatchesBruteForceSetOracle) {
    const auto& stops = StopWordList::english();
    std::vector<std::string> retrieved{
        "A man riding a wave on top of a surfboard.",      "A surfer rides a large wave in the ocean.",
        "A person on a surfboard riding a wave.",          "The man is surfing on the big wave.",
        "Someone surfing in the blue water of the ocean.", "A dog sits on the beach next to a surfboard.",
        "Two people carrying surfboards on the beach.",    "A man in a wetsuit holds his board.",
        "Surfer catching a wave near the shore.",          "A big wave crashing over a surfer."};
    auto out = unique_words(retrieved, stops, 60);

    std::set<std::string> all_words;
    for (const auto& c : retrieved)
        for (const auto& w : words(c)) all_words.insert(w);
    std::set<std::string> expected;
    for (const auto& w : all_words)
        if (!stops.contains(w)) expected.insert(w);
    EXPECT_EQ(std::set<std::string>(out.begin(), out.end()), expected);
    EXPECT_EQ(out.size(), expected.size());
}

TEST(UniqueWords, DuplicateFreeAndStopFreeProperty) {
    const auto& stops = StopWordList::english();
    std::vector<std::string> pool{"the", "a", "dog", "cat", "on", "red", "Dog", "is", "ball", "of", "grass", "Red!"};
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::string> caps(1 + rng() % 6);
        for (auto& c : caps) {
            const std::size_t n = rng() % 8;
            for (std::size_t i = 0; i < n; ++i) c += pool[rng() % pool.size()] + " ";
        }
        const std::size_t cap = rng() % 10;
        auto out = unique_words(caps, stops, cap);
        EXPECT_LE(out.size(), cap);
        std::set<std::string> seen;
        for (const auto& w : out) {
            EXPECT_FALSE(stops.contains(w));
            EXPECT_TRUE(seen.insert(w).second) << "duplicate " << w;
        }
    }
}

TEST(StopWords, BundledListIsVersionedAndNormalized) {
    const auto& s = StopWordList::english();
    EXPECT_EQ(s.version(), "recap-en-1");
    for (const auto& w : s.words()) EXPECT_EQ(normalize(w), w);
    EXPECT_TRUE(s.contains("the"));
    EXPECT_FALSE(s.contains("dog"));
}
