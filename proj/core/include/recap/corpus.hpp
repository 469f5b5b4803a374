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

#include <iosfwd>
#include <string>
#include <vector>

#include "recap/memory.hpp"

namespace recap::memory {

/// One image of a captioning corpus.
struct CorpusRecord {
    FeatureGrid grid;
    std::vector<std::string> captions;

    const std::string& image_id() const { return grid.image_id; }
};

/// JSON-lines corpus: one {"image_id", "grid", "captions"} object per line.
/// Blank lines are skipped. Every grid must share one channel count.
/// Malformed records raise InputError naming the line.
std::vector<CorpusRecord> read_corpus(std::istream& in, const std::string& source = "<stream>");
std::vector<CorpusRecord> read_corpus_file(const std::string& path);
void write_corpus(std::ostream& out, const std::vector<CorpusRecord>& records);
void write_corpus_file(const std::string& path, const std::vector<CorpusRecord>& records);

/// Aggregates every record's grid and indexes the result.
ExternalMemory build_memory(const std::vector<CorpusRecord>& records, Reducer reducer, bool normalize = true,
                            const HnswParams& params = {});

}  // namespace recap::memory
