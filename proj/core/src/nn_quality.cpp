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

#include "recap/nn_quality.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "recap/errors.hpp"

namespace recap::metrics {

namespace {

MetricScores score_one(const std::string& cand, const std::vector<std::string>& refs, const CorpusIdf& idf) {
    return {bleu_n(cand, refs, 1), bleu_n(cand, refs, 4), rouge_l(cand, refs), cider_d(cand, refs, idf)};
}

void add(MetricScores& a, const MetricScores& b, double w = 1.0) {
    a.bleu1 += w * b.bleu1;
    a.bleu4 += w * b.bleu4;
    a.rouge_l += w * b.rouge_l;
    a.cider += w * b.cider;
}

void take_max(MetricScores& a, const MetricScores& b) {
    a.bleu1 = std::max(a.bleu1, b.bleu1);
    a.bleu4 = std::max(a.bleu4, b.bleu4);
    a.rouge_l = std::max(a.rouge_l, b.rouge_l);
    a.cider = std::max(a.cider, b.cider);
}

nlohmann::json scores_json(const MetricScores& s) {
    return {{"BLEU-1", s.bleu1}, {"BLEU-4", s.bleu4}, {"ROUGE-L", s.rouge_l}, {"CIDEr-D", s.cider}};
}

}  // namespace

NnQualityReport nn_quality(const memory::ExternalMemory& memory, const std::vector<memory::CorpusRecord>& testset,
                           const std::vector<std::size_t>& ks, const NnQualityOptions& opts) {
    if (ks.empty()) throw ContractError("nn_quality: no k values given");
    if (std::find(ks.begin(), ks.end(), std::size_t{0}) != ks.end())
        throw ContractError("nn_quality: k must be at least 1");
    const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
    const std::string name = opts.index_name.empty() ? std::string(memory::to_string(memory.reducer()))
                                                     : opts.index_name;

    std::vector<std::vector<std::string>> gts;
    for (const auto& r : testset) gts.push_back(r.captions);
    const CorpusIdf idf = CorpusIdf::from_references(gts);

    memory::SearchOptions search = opts.search;
    search.ef_search = std::max(search.ef_search, kmax + search.exclusion_margin);

    std::vector<NnQualityCell> cells(ks.size());
    for (std::size_t c = 0; c < ks.size(); ++c) {
        cells[c].index = name;
        cells[c].k = ks[c];
    }

    for (const auto& rec : testset) {
        if (rec.captions.empty()) continue;
        const auto query = memory.embed(rec.grid);
        const auto exclude = opts.exclude_self ? std::optional<std::string>(rec.image_id()) : std::nullopt;
        const auto hits = memory.search(query, kmax, exclude, search);
        // Scores per retrieved entry, in rank order.
        std::vector<std::vector<MetricScores>> per_entry;
        for (const auto& h : hits) {
            auto& row = per_entry.emplace_back();
            for (const auto& cap : memory.entry(h.entry).captions) row.push_back(score_one(cap, rec.captions, idf));
        }
        for (std::size_t c = 0; c < ks.size(); ++c) {
            MetricScores sum, best;
            std::size_t n = 0;
            for (std::size_t e = 0; e < std::min(ks[c], per_entry.size()); ++e) {
                for (const auto& s : per_entry[e]) {
                    add(sum, s);
                    take_max(best, s);
                    ++n;
                }
            }
            if (n > 0) add(cells[c].mean, sum, 1.0 / static_cast<double>(n));
            add(cells[c].oracle, best);
            ++cells[c].images;
        }
    }
    for (auto& cell : cells) {
        if (cell.images == 0) continue;
        const double inv = 1.0 / static_cast<double>(cell.images);
        MetricScores m, o;
        add(m, cell.mean, inv);
        add(o, cell.oracle, inv);
        cell.mean = m;
        cell.oracle = o;
    }
    return {std::move(cells)};
}

std::string NnQualityReport::to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& c : cells)
        j.push_back({{"index", c.index},
                     {"k", c.k},
                     {"images", c.images},
                     {"mean", scores_json(c.mean)},
                     {"oracle", scores_json(c.oracle)}});
    return nlohmann::json{{"cells", j}}.dump(2);
}

std::string NnQualityReport::to_table() const {
    std::size_t width = 5;
    for (const auto& c : cells) width = std::max(width, c.index.size());
    std::string out = fmt::format("{:<{}}  {:>4}  {:<6}{:>8}{:>8}{:>8}{:>8}\n", "index", width, "k", "score", "B-1",
                                  "B-4", "R", "C");
    const auto row = [&](const NnQualityCell& c, const char* label, const MetricScores& s) {
        out += fmt::format("{:<{}}  {:>4}  {:<6}{:>8.1f}{:>8.1f}{:>8.1f}{:>8.1f}\n", c.index, width, c.k, label,
                           100 * s.bleu1, 100 * s.bleu4, 100 * s.rouge_l, 100 * s.cider);
    };
    for (const auto& c : cells) {
        row(c, "mean", c.mean);
        row(c, "max", c.oracle);
    }
    return out;
}

}  // namespace recap::metrics
