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
#include <string>
#include <vector>

#include "recap/corpus.hpp"
#include "recap/memory.hpp"
#include "recap/metrics.hpp"

namespace recap::metrics {

/// Scores of the captions retrieved for a test set at one (index, k) setting.
struct NnQualityCell {
    std::string index;
    std::size_t k = 0;
    std::size_t images = 0;
    /// Mean over images of the mean score of their retrieved captions.
    MetricScores mean;
    /// Mean over images of the best retrieved caption, chosen per metric.
    MetricScores oracle;
};

struct NnQualityReport {
    std::vector<NnQualityCell> cells;
    std::string to_json() const;
    /// One "mean" and one "max" row per cell; scores are multiplied by 100.
    std::string to_table() const;
};

struct NnQualityOptions {
    /// Label for the index in the report; defaults to the reducer name.
    std::string index_name;
    /// Drop the test image's own entry if it is in memory.
    bool exclude_self = false;
    memory::SearchOptions search;
};

/// Retrieves the largest k once per image and scores each k in `ks` on
/// prefixes of that ranking, so larger k always sees a superset of captions.
/// CIDEr-D uses an idf built from the test set's ground truths.
NnQualityReport nn_quality(const memory::ExternalMemory& memory, const std::vector<memory::CorpusRecord>& testset,
                           const std::vector<std::size_t>& ks, const NnQualityOptions& opts = {});

}  // namespace recap::metrics
