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

#include "recap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <set>

#include "recap/tokenizer.hpp"

namespace recap::metrics {

namespace {

constexpr int kMaxN = 4;

using Counts = std::map<std::string, int>;

// n-gram counts keyed by the space-joined words, for one order n.
Counts ngram_counts(const std::vector<std::string>& w, int n) {
    Counts c;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= w.size(); ++i) {
        std::string g = w[i];
        for (int j = 1; j < n; ++j) g += ' ' + w[i + static_cast<std::size_t>(j)];
        ++c[g];
    }
    return c;
}

struct TfIdfVec {
    std::map<std::string, double> weights;
    double norm = 0.0;
};

TfIdfVec tfidf(const Counts& counts, const CorpusIdf& idf) {
    TfIdfVec v;
    for (const auto& [g, tf] : counts) {
        const double w = tf * idf.idf(g);
        v.weights[g] = w;
        v.norm += w * w;
    }
    v.norm = std::sqrt(v.norm);
    return v;
}

}  // namespace

CorpusIdf CorpusIdf::from_references(const std::vector<std::vector<std::string>>& refs_per_image) {
    CorpusIdf out;
    out.corpus_size_ = refs_per_image.size();
    out.log_size_ = out.corpus_size_ > 0 ? std::log(static_cast<double>(out.corpus_size_)) : 0.0;
    for (const auto& refs : refs_per_image) {
        std::set<std::string> seen;
        for (const auto& r : refs) {
            const auto w = text::words(r);
            for (int n = 1; n <= kMaxN; ++n)
                for (const auto& [g, _] : ngram_counts(w, n)) seen.insert(g);
        }
        for (const auto& g : seen) ++out.df_[g];
    }
    return out;
}

std::size_t CorpusIdf::df(const std::string& ngram) const {
    auto it = df_.find(ngram);
    return it == df_.end() ? 0 : it->second;
}

double CorpusIdf::idf(const std::string& ngram) const {
    return log_size_ - std::log(std::max<double>(1.0, static_cast<double>(df(ngram))));
}

double cider_d(const std::string& candidate, const std::vector<std::string>& refs, const CorpusIdf& idf,
               const CiderOptions& opts) {
    const auto cw = text::words(candidate);
    if (cw.empty() || refs.empty()) return 0.0;
    std::vector<TfIdfVec> cand(kMaxN);
    for (int n = 1; n <= kMaxN; ++n) cand[n - 1] = tfidf(ngram_counts(cw, n), idf);

    double total = 0.0;
    for (const auto& ref : refs) {
        const auto rw = text::words(ref);
        const double delta = static_cast<double>(cw.size()) - static_cast<double>(rw.size());
        const double penalty = std::exp(-(delta * delta) / (2.0 * opts.sigma * opts.sigma));
        double per_ref = 0.0;
        for (int n = 1; n <= kMaxN; ++n) {
            const TfIdfVec r = tfidf(ngram_counts(rw, n), idf);
            const TfIdfVec& c = cand[n - 1];
            double val = 0.0;
            for (const auto& [g, wc] : c.weights) {
                auto it = r.weights.find(g);
                if (it != r.weights.end()) val += std::min(wc, it->second) * it->second;
            }
            if (c.norm != 0.0 && r.norm != 0.0) val /= c.norm * r.norm;
            per_ref += val * penalty;
        }
        total += per_ref / kMaxN;
    }
    return 10.0 * total / static_cast<double>(refs.size());
}

namespace {

struct BleuStats {
    double clipped[kMaxN] = {};
    double total[kMaxN] = {};
    double cand_len = 0.0;
    double ref_len = 0.0;
};

void accumulate_bleu(BleuStats& s, const std::vector<std::string>& cw,
                     const std::vector<std::vector<std::string>>& refs_words, int n) {
    s.cand_len += static_cast<double>(cw.size());
    // Closest reference length; ties go to the shorter one.
    std::size_t best = 0;
    bool have = false;
    for (const auto& rw : refs_words) {
        const auto diff = [&](std::size_t l) { return l > cw.size() ? l - cw.size() : cw.size() - l; };
        if (!have || diff(rw.size()) < diff(best) || (diff(rw.size()) == diff(best) && rw.size() < best)) {
            best = rw.size();
            have = true;
        }
    }
    s.ref_len += static_cast<double>(best);
    for (int m = 1; m <= n; ++m) {
        const Counts cc = ngram_counts(cw, m);
        Counts max_ref;
        for (const auto& rw : refs_words)
            for (const auto& [g, c] : ngram_counts(rw, m)) max_ref[g] = std::max(max_ref[g], c);
        for (const auto& [g, c] : cc) {
            auto it = max_ref.find(g);
            if (it != max_ref.end()) s.clipped[m - 1] += std::min(c, it->second);
        }
        s.total[m - 1] += static_cast<double>(cw.size() >= static_cast<std::size_t>(m) ? cw.size() - m + 1 : 0);
    }
}

double bleu_from_stats(const BleuStats& s, int n, bool smooth) {
    if (s.cand_len == 0.0) return 0.0;
    double log_sum = 0.0;
    for (int m = 1; m <= n; ++m) {
        double num = s.clipped[m - 1], den = s.total[m - 1];
        if (smooth && m >= 2) {
            num += 1.0;
            den += 1.0;
        }
        if (num == 0.0 || den == 0.0) return 0.0;
        log_sum += std::log(num / den) / n;
    }
    const double bp = s.cand_len >= s.ref_len ? 1.0 : std::exp(1.0 - s.ref_len / s.cand_len);
    return bp * std::exp(log_sum);
}

std::vector<std::vector<std::string>> words_of(const std::vector<std::string>& v) {
    std::vector<std::vector<std::string>> out;
    out.reserve(v.size());
    for (const auto& s : v) out.push_back(text::words(s));
    return out;
}

void check_order(int n) {
    if (n < 1 || n > kMaxN) throw std::invalid_argument("bleu: n must be in 1..4");
}

std::size_t lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

double bleu_n(const std::string& candidate, const std::vector<std::string>& refs, int n, bool smooth) {
    check_order(n);
    BleuStats s;
    accumulate_bleu(s, text::words(candidate), words_of(refs), n);
    return bleu_from_stats(s, n, smooth);
}

double corpus_bleu(const std::vector<std::string>& candidates, const std::vector<std::vector<std::string>>& refs,
                   int n, bool smooth) {
    check_order(n);
    if (candidates.size() != refs.size()) throw std::invalid_argument("corpus_bleu: candidate/reference count mismatch");
    BleuStats s;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        accumulate_bleu(s, text::words(candidates[i]), words_of(refs[i]), n);
    return bleu_from_stats(s, n, smooth);
}

double rouge_l(const std::string& candidate, const std::vector<std::string>& refs, double beta) {
    const auto cw = text::words(candidate);
    if (cw.empty()) return 0.0;
    double best = 0.0;
    for (const auto& ref : refs) {
        const auto rw = text::words(ref);
        if (rw.empty()) continue;
        const double l = static_cast<double>(lcs(cw, rw));
        if (l == 0.0) continue;
        const double p = l / static_cast<double>(cw.size());
        const double r = l / static_cast<double>(rw.size());
        const double f = (1.0 + beta * beta) * p * r / (r + beta * beta * p);
        best = std::max(best, f);
    }
    return best;
}

EvalReport evaluate(const std::map<std::string, std::string>& predictions,
                    const std::map<std::string, std::vector<std::string>>& gts,
                    const std::optional<CorpusIdf>& idf) {
    EvalReport report;
    std::vector<std::string> ids;
    for (const auto& [id, _] : predictions) {
        auto it = gts.find(id);
        if (it == gts.end() || it->second.empty()) {
            report.skipped.push_back(id);
        } else {
            ids.push_back(id);
        }
    }
    if (ids.empty()) return report;

    CorpusIdf local;
    if (!idf) {
        std::vector<std::vector<std::string>> refs;
        for (const auto& id : ids) refs.push_back(gts.at(id));
        local = CorpusIdf::from_references(refs);
    }
    const CorpusIdf& use = idf ? *idf : local;

    std::vector<std::string> cands;
    std::vector<std::vector<std::string>> refs;
    for (const auto& id : ids) {
        const auto& cand = predictions.at(id);
        const auto& r = gts.at(id);
        MetricScores s;
        s.bleu1 = bleu_n(cand, r, 1);
        s.bleu4 = bleu_n(cand, r, 4);
        s.rouge_l = rouge_l(cand, r);
        s.cider = cider_d(cand, r, use);
        report.per_image[id] = s;
        report.corpus.cider += s.cider;
        report.corpus.rouge_l += s.rouge_l;
        cands.push_back(cand);
        refs.push_back(r);
    }
    const double n = static_cast<double>(ids.size());
    report.corpus.cider /= n;
    report.corpus.rouge_l /= n;
    report.corpus.bleu1 = corpus_bleu(cands, refs, 1);
    report.corpus.bleu4 = corpus_bleu(cands, refs, 4);
    return report;
}

namespace {

nlohmann::json scores_json(const MetricScores& s) {
    return {{"BLEU-1", s.bleu1}, {"BLEU-4", s.bleu4}, {"ROUGE-L", s.rouge_l}, {"CIDEr-D", s.cider}};
}

}  // namespace

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["images"] = images();
    j["corpus"] = scores_json(corpus);
    j["per_image"] = nlohmann::json::object();
    for (const auto& [id, s] : per_image) j["per_image"][id] = scores_json(s);
    j["skipped"] = skipped;
    j["metadata"] = metadata;
    return j.dump(2);
}

std::string EvalReport::to_table() const {
    std::string out = fmt::format("{:<10}{:>8}{:>8}{:>8}{:>8}\n", "images", "B-1", "B-4", "R", "C");
    out += fmt::format("{:<10}{:>8.1f}{:>8.1f}{:>8.1f}{:>8.1f}\n", images(), 100 * corpus.bleu1, 100 * corpus.bleu4,
                       100 * corpus.rouge_l, 100 * corpus.cider);
    return out;
}

}  // namespace recap::metrics
