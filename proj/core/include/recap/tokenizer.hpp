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
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace recap::text {

/// Lowercase ASCII letters, replace ASCII punctuation with nothing, collapse
/// runs of whitespace to one space and trim. Applied before BPE, before word
/// cleaning and by every metric.
std::string normalize(std::string_view s);

/// normalize() then split on spaces.
std::vector<std::string> words(std::string_view s);

class StopWordList {
 public:
    StopWordList(std::string version, std::set<std::string> words);

    /// The list bundled with the library (common English function words,
    /// stored in normalized form).
    static const StopWordList& english();

    const std::string& version() const { return version_; }
    bool contains(const std::string& w) const { return words_.count(w) != 0; }
    const std::set<std::string>& words() const { return words_; }

 private:
    std::string version_;
    std::set<std::string> words_;
};

/// Words of `captions` (already in retrieval-rank order) with stop words
/// removed and only the first occurrence of each word kept, truncated to
/// `cap` words.
std::vector<std::string> unique_words(const std::vector<std::string>& captions, const StopWordList& stops,
                                      std::size_t cap = 60);

struct SpecialIds {
    int pad = 0;
    int bos = 1;
    int eos = 2;
    int unk = 3;
};

struct TokenSequence {
    std::vector<int> ids;
    std::string text;
};

/// Byte-pair-encoding vocabulary over characters of normalized text.
///
/// Every word is split into characters followed by an end-of-word symbol
/// "</w>"; merges are learned greedily and applied in training order. Ids
/// are dense: the four specials, then "</w>", then the base alphabet in
/// sorted order, then one id per merge.
class Vocabulary {
 public:
    static constexpr std::string_view kEndOfWord = "</w>";
    static constexpr std::string_view kUnknownMarker = "<unk>";
    static constexpr int kFormatVersion = 1;

    Vocabulary() = default;
    Vocabulary(std::vector<std::string> alphabet, std::vector<std::pair<std::string, std::string>> merges);

    std::size_t size() const { return id_to_token_.size(); }
    const SpecialIds& specials() const { return specials_; }
    const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
    const std::vector<std::string>& alphabet() const { return alphabet_; }
    const std::string& token(int id) const;
    int id(const std::string& token) const;
    bool is_special(int id) const { return id >= 0 && id < 4; }

    /// Encodes normalized text. No BOS/EOS is added. Characters outside the
    /// alphabet become the UNK id.
    TokenSequence encode(std::string_view text) const;
    std::vector<int> encode_word(std::string_view word) const;
    /// Inverse of encode on normalized text; UNK decodes to "<unk>" and
    /// special ids other than UNK are skipped.
    std::string decode(const std::vector<int>& ids) const;

    std::string to_json() const;
    static Vocabulary from_json(std::string_view json);

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
        return a.alphabet_ == b.alphabet_ && a.merges_ == b.merges_;
    }

 private:
    SpecialIds specials_;
    std::vector<std::string> alphabet_;
    std::vector<std::pair<std::string, std::string>> merges_;
    std::vector<std::string> id_to_token_;
    std::map<std::string, int> token_to_id_;
    std::map<std::pair<int, int>, std::pair<int, int>> merge_rank_;  // (l, r) -> (rank, merged id)
};

struct BpeTrainResult {
    Vocabulary vocab;
    /// Set when the corpus ran out of pairs before reaching target_size.
    bool target_unreachable = false;
};

/// Greedy BPE training. `target_size` counts every id including specials.
/// Ties between equally frequent pairs are broken lexicographically.
BpeTrainResult train_bpe(const std::vector<std::string>& corpus, std::size_t target_size = 1024);

}  // namespace recap::text
