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
#include <optional>
#include <string>
#include <vector>

namespace recap::metrics {

/// Document frequencies of 1..4-grams over a reference corpus, where each
/// image's reference set counts as one document.
class CorpusIdf {
 public:
    CorpusIdf() = default;
    static CorpusIdf from_references(const std::vector<std::vector<std::string>>& refs_per_image);

    std::size_t corpus_size() const { return corpus_size_; }
    /// 0 for n-grams the corpus never saw.
    std::size_t df(const std::string& ngram) const;
    /// ln(corpus_size / max(1, df)).
    double idf(const std::string& ngram) const;
    std::size_t vocabulary_size() const { return df_.size(); }

 private:
    std::size_t corpus_size_ = 0;
    double log_size_ = 0.0;
    std::map<std::string, std::size_t> df_;
};

struct CiderOptions {
    double sigma = 6.0;
};

/// CIDEr-D on the [0, 10] scale: clipped TF-IDF cosine per n in 1..4 with a
/// Gaussian length penalty, averaged over n and over references.
double cider_d(const std::string& candidate, const std::vector<std::string>& refs, const CorpusIdf& idf,
               const CiderOptions& opts = {});

/// Sentence BLEU with uniform weights over 1..n. Any zero precision gives 0
/// unless `smooth` (add-one on orders >= 2) is set.
double bleu_n(const std::string& candidate, const std::vector<std::string>& refs, int n, bool smooth = false);

/// Corpus BLEU: clipped counts and lengths summed over all pairs before the ratio.
double corpus_bleu(const std::vector<std::string>& candidates, const std::vector<std::vector<std::string>>& refs,
                   int n, bool smooth = false);

/// Longest-common-subsequence F-measure with recall weight beta, maximized
/// over references.
double rouge_l(const std::string& candidate, const std::vector<std::string>& refs, double beta = 1.2);

struct MetricScores {
    double bleu1 = 0.0;
    double bleu4 = 0.0;
    double rouge_l = 0.0;
    double cider = 0.0;

    friend bool operator==(const MetricScores&, const MetricScores&) = default;
};

struct EvalReport {
    std::map<std::string, MetricScores> per_image;
    MetricScores corpus;
    /// Prediction ids with no ground truth.
    std::vector<std::string> skipped;
    std::map<std::string, std::string> metadata;

    std::size_t images() const { return per_image.size(); }
    std::string to_json() const;
    std::string to_table() const;
};

/// Scores each prediction against all ground truths of its image. Corpus
/// CIDEr-D and ROUGE-L are per-image means; corpus BLEU aggregates counts.
/// The idf comes from the ground truths of the scored images unless `idf` is given.
EvalReport evaluate(const std::map<std::string, std::string>& predictions,
                    const std::map<std::string, std::vector<std::string>>& gts,
                    const std::optional<CorpusIdf>& idf = std::nullopt);

}  // namespace recap::metrics
