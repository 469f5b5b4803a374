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
#include <iosfwd>
#include <map>
#include <string>

#include "recap/memory.hpp"
#include "recap/model.hpp"
#include "recap/training.hpp"

namespace recap::cli {

using KeyValues = std::map<std::string, std::string>;

/// Reads `key = value` lines. Blank lines and lines starting with '#' are
/// skipped; a repeated key keeps its last value.
KeyValues parse_kv(std::istream& in, const std::string& source = "<stream>");
KeyValues read_kv_file(const std::string& path);
void write_kv(std::ostream& out, const KeyValues& kv);

/// Everything a run needs, flattened to one key space:
/// model.*, train.*, memory.*, bpe.vocab_size and data.* paths.
struct RunConfig {
    model::ModelConfig model;
    train::TrainConfig train;

    memory::Reducer reducer = memory::Reducer::mean;
    bool normalize = true;
    memory::HnswParams hnsw;
    std::size_t ef_search = 64;
    /// Target BPE vocabulary size, specials included.
    std::size_t bpe_vocab = 1024;

    std::string corpus;
    std::string val;
    std::string index;
    std::string init;

    KeyValues to_kv() const;
    /// Unknown keys are an InputError so that typos do not go unnoticed.
    static RunConfig from_kv(const KeyValues& kv);

    memory::SearchOptions search() const;
    void write(const std::string& path) const;
};

}  // namespace recap::cli
