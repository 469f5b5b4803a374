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

#include "recap/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <nlohmann/json.hpp>
#include <unordered_set>

#include "recap/errors.hpp"

namespace recap::text {

std::string normalize(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char ch : s) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (c < 128 && std::ispunct(c)) continue;
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : ch);
    }
    return out;
}

std::vector<std::string> words(std::string_view s) {
    std::vector<std::string> out;
    const std::string n = normalize(s);
    std::size_t start = 0;
    while (start < n.size()) {
        std::size_t end = n.find(' ', start);
        if (end == std::string::npos) end = n.size();
        out.emplace_back(n.substr(start, end - start));
        start = end + 1;
    }
    return out;
}

// ---- Stop words -----------------------------------------------------------

StopWordList::StopWordList(std::string version, std::set<std::string> words)
    : version_(std::move(version)), words_(std::move(words)) {
    if (words_.empty()) throw ContractError("stop-word list must not be empty");
}

const StopWordList& StopWordList::english() {
    // Common English function words, normalized (apostrophes stripped).
    static const StopWordList list(
        "recap-en-1",
        {"a",         "about",   "above",    "after",   "again",   "against", "ain",     "all",      "am",
         "an",        "and",     "any",      "are",     "aren",    "arent",   "as",      "at",       "be",
         "because",   "been",    "before",   "being",   "below",   "between", "both",    "but",      "by",
         "can",       "couldn",  "couldnt",  "d",       "did",     "didn",    "didnt",   "do",       "does",
         "doesn",     "doesnt",  "doing",    "don",     "dont",    "down",    "during",  "each",     "few",
         "for",       "from",    "further",  "had",     "hadn",    "hadnt",   "has",     "hasn",     "hasnt",
         "have",      "haven",   "havent",   "having",  "he",      "her",     "here",    "hers",     "herself",
         "him",       "himself", "his",      "how",     "i",       "if",      "in",      "into",     "is",
         "isn",       "isnt",    "it",       "its",     "itself",  "just",    "ll",      "m",        "ma",
         "me",        "mightn",  "mightnt",  "more",    "most",    "mustn",   "mustnt",  "my",       "myself",
         "needn",     "neednt",  "no",       "nor",     "not",     "now",     "o",       "of",       "off",
         "on",        "once",    "only",     "or",      "other",   "our",     "ours",    "ourselves", "out",
         "over",      "own",     "re",       "s",       "same",    "shan",    "shant",   "she",      "shes",
         "should",    "shouldn", "shouldnt", "shouldve", "so",     "some",    "such",    "t",        "than",
         "that",      "thatll",  "the",      "their",   "theirs",  "them",    "themselves", "then",  "there",
         "these",     "they",    "this",     "those",   "through", "to",      "too",     "under",    "until",
         "up",        "ve",      "very",     "was",     "wasn",    "wasnt",   "we",      "were",     "weren",
         "werent",    "what",    "when",     "where",   "which",   "while",   "who",     "whom",     "why",
         "will",      "with",    "won",      "wont",    "wouldn",  "wouldnt", "y",       "you",      "youd",
         "youll",     "your",    "youre",    "yours",   "yourself", "yourselves", "youve"});
    return list;
}

std::vector<std::string> unique_words(const std::vector<std::string>& captions, const StopWordList& stops,
                                      std::size_t cap) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& caption : captions) {
        for (auto& w : words(caption)) {
            if (out.size() >= cap) return out;
            if (stops.contains(w) || seen.count(w)) continue;
            seen.insert(w);
            out.push_back(std::move(w));
        }
    }
    return out;
}

// ---- Vocabulary -----------------------------------------------------------

namespace {

constexpr const char* kSpecialTokens[] = {"<pad>", "<bos>", "<eos>", "<unk>"};

std::vector<std::string> split_chars(std::string_view word) {
    std::vector<std::string> out;
    out.reserve(word.size() + 1);
    for (char c : word) out.emplace_back(1, c);
    out.emplace_back(Vocabulary::kEndOfWord);
    return out;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> alphabet, std::vector<std::pair<std::string, std::string>> merges)
    : alphabet_(std::move(alphabet)), merges_(std::move(merges)) {
    std::sort(alphabet_.begin(), alphabet_.end());
    alphabet_.erase(std::unique(alphabet_.begin(), alphabet_.end()), alphabet_.end());
    auto add = [this](const std::string& tok) {
        if (token_to_id_.count(tok)) throw InputError("vocabulary: duplicate token '" + tok + "'");
        token_to_id_[tok] = static_cast<int>(id_to_token_.size());
        id_to_token_.push_back(tok);
    };
    for (const char* s : kSpecialTokens) add(s);
    add(std::string(kEndOfWord));
    for (const auto& a : alphabet_) {
        if (a.size() != 1 || a == " ") throw InputError("vocabulary: alphabet entries must be single characters");
        add(a);
    }
    for (std::size_t r = 0; r < merges_.size(); ++r) {
        const auto& [l, rt] = merges_[r];
        auto li = token_to_id_.find(l), ri = token_to_id_.find(rt);
        if (li == token_to_id_.end() || ri == token_to_id_.end() || is_special(li->second) ||
            is_special(ri->second)) {
            throw InputError("vocabulary: merge " + std::to_string(r) + " references an unknown symbol");
        }
        // Two different merges may spell the same token; they share one id.
        const std::string merged = l + rt;
        if (!token_to_id_.count(merged)) add(merged);
        merge_rank_[{li->second, ri->second}] = {static_cast<int>(r), token_to_id_.at(merged)};
    }
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
        throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
    }
    return id_to_token_[static_cast<std::size_t>(id)];
}

int Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? specials_.unk : it->second;
}

std::vector<int> Vocabulary::encode_word(std::string_view word) const {
    std::vector<int> syms;
    syms.reserve(word.size() + 1);
    for (char c : word) syms.push_back(id(std::string(1, c)));
    syms.push_back(id(std::string(kEndOfWord)));
    while (syms.size() > 1) {
        int best_rank = std::numeric_limits<int>::max();
        std::size_t best_pos = 0;
        int best_id = -1;
        for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
            auto it = merge_rank_.find({syms[i], syms[i + 1]});
            if (it != merge_rank_.end() && it->second.first < best_rank) {
                best_rank = it->second.first;
                best_pos = i;
                best_id = it->second.second;
            }
        }
        if (best_id < 0) break;
        syms[best_pos] = best_id;
        syms.erase(syms.begin() + static_cast<std::ptrdiff_t>(best_pos) + 1);
    }
    return syms;
}

TokenSequence Vocabulary::encode(std::string_view text) const {
    TokenSequence seq;
    seq.text = std::string(text);
    for (const auto& w : words(text)) {
        auto ids = encode_word(w);
        seq.ids.insert(seq.ids.end(), ids.begin(), ids.end());
    }
    return seq;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id == specials_.unk) {
            out += kUnknownMarker;
            continue;
        }
        if (is_special(id)) continue;
        const std::string& tok = token(id);
        if (tok.size() >= kEndOfWord.size() &&
            tok.compare(tok.size() - kEndOfWord.size(), kEndOfWord.size(), kEndOfWord) == 0) {
            out.append(tok, 0, tok.size() - kEndOfWord.size());
            out.push_back(' ');
        } else {
            out += tok;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

std::string Vocabulary::to_json() const {
    nlohmann::json j;
    j["version"] = kFormatVersion;
    j["alphabet"] = alphabet_;
    j["merges"] = nlohmann::json::array();
    for (const auto& [l, r] : merges_) j["merges"].push_back({l, r});
    j["specials"] = {{"pad", specials_.pad}, {"bos", specials_.bos}, {"eos", specials_.eos}, {"unk", specials_.unk}};
    return j.dump();
}

Vocabulary Vocabulary::from_json(std::string_view json) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("vocabulary: invalid JSON: ") + e.what());
    }
    if (!j.contains("version") || j["version"] != kFormatVersion) {
        throw InputError("vocabulary: unsupported version");
    }
    const SpecialIds expected;
    const auto& sp = j.at("specials");
    if (sp.at("pad") != expected.pad || sp.at("bos") != expected.bos || sp.at("eos") != expected.eos ||
        sp.at("unk") != expected.unk) {
        throw InputError("vocabulary: unexpected special ids");
    }
    std::vector<std::pair<std::string, std::string>> merges;
    for (const auto& m : j.at("merges")) merges.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
    return Vocabulary(j.at("alphabet").get<std::vector<std::string>>(), std::move(merges));
}

// ---- Training -------------------------------------------------------------

BpeTrainResult train_bpe(const std::vector<std::string>& corpus, std::size_t target_size) {
    if (corpus.empty()) throw ContractError("train_bpe: empty corpus");

    std::map<std::string, long> word_freq;
    std::set<std::string> alphabet;
    for (const auto& line : corpus) {
        for (const auto& w : words(line)) {
            ++word_freq[w];
            for (char c : w) alphabet.insert(std::string(1, c));
        }
    }
    const std::size_t base = 4 + 1 + alphabet.size();
    if (target_size <= base) {
        throw ContractError("train_bpe: target size " + std::to_string(target_size) +
                            " must exceed the base symbol count " + std::to_string(base));
    }

    std::vector<std::pair<std::vector<std::string>, long>> segmented;
    segmented.reserve(word_freq.size());
    for (const auto& [w, f] : word_freq) segmented.emplace_back(split_chars(w), f);

    std::vector<std::pair<std::string, std::string>> merges;
    std::set<std::string> merged_tokens;
    bool unreachable = false;
    while (base + merged_tokens.size() < target_size) {
        std::map<std::pair<std::string, std::string>, long> pairs;
        for (const auto& [syms, f] : segmented)
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) pairs[{syms[i], syms[i + 1]}] += f;
        if (pairs.empty()) {
            unreachable = true;
            break;
        }
        // std::map iterates in lexicographic order, so the first maximum wins ties.
        auto best = pairs.begin();
        for (auto it = pairs.begin(); it != pairs.end(); ++it)
            if (it->second > best->second) best = it;
        const auto [l, r] = best->first;
        const std::string merged = l + r;
        for (auto& [syms, f] : segmented) {
            std::vector<std::string> next;
            next.reserve(syms.size());
            for (std::size_t i = 0; i < syms.size(); ++i) {
                if (i + 1 < syms.size() && syms[i] == l && syms[i + 1] == r) {
                    next.push_back(merged);
                    ++i;
                } else {
                    next.push_back(syms[i]);
                }
            }
            syms = std::move(next);
        }
        merges.emplace_back(l, r);
        merged_tokens.insert(merged);
    }
    return {Vocabulary(std::vector<std::string>(alphabet.begin(), alphabet.end()), std::move(merges)), unreachable};
}

}  // namespace recap::text
