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
#include <exception>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "recap/memory.hpp"
#include "recap/metrics.hpp"
#include "recap/model.hpp"
#include "recap/nn_quality.hpp"
#include "recap/synthetic.hpp"
#include "run_config.hpp"

// Subcommand bodies, kept apart from flag parsing so tests can drive them.
// Each returns the JSON report that the executable prints on stdout.
// Timing goes to the `log` stream only, so the reports stay deterministic.
namespace recap::cli {

/// Process exit code for an escaped exception: 2 for input and validation
/// errors, 3 for numerical failures, 4 for contract violations.
int exit_code(const std::exception& e);

nlohmann::json make_synthetic(const synth::SyntheticCorpusSpec& spec, const std::string& out);

struct BuildIndexArgs {
    std::string corpus;
    std::string out;
    memory::Reducer reducer = memory::Reducer::mean;
    bool normalize = true;
    memory::HnswParams hnsw;
    std::size_t ef_search = 64;
    /// Queries for the recall@10 self-test; 0 skips it.
    std::size_t self_test_queries = 100;
};
nlohmann::json build_index(const BuildIndexArgs& args, std::ostream* log = nullptr);

/// `kv` holds only the keys the user set (config file merged with flag
/// overrides). With `init` or `resume`, model keys come from the
/// checkpoint and any explicitly set key that disagrees is an error.
struct TrainArgs {
    KeyValues kv;
    std::string out_dir;
    std::string resume;
};
nlohmann::json train(const TrainArgs& args, std::ostream* log = nullptr);

struct GenerateArgs {
    std::string checkpoint;
    std::string index;
    std::string images;
    /// Restrict to these ids; unknown ones are reported and skipped.
    std::vector<std::string> ids;
    std::optional<std::size_t> k;
    std::size_t beam = 5;
    std::optional<model::Variant> variant;
    bool exclude_self = false;
    std::size_t ef_search = 64;
};
nlohmann::json generate(const GenerateArgs& args);

struct EvaluateArgs {
    std::string predictions;
    std::string gts;
};
/// Predictions are a JSON object id -> caption or the output of generate.
/// Ground truths are a JSON object id -> [captions] or a JSONL corpus.
metrics::EvalReport evaluate(const EvaluateArgs& args);

struct NnQualityArgs {
    /// Memory corpus; one index is built per reducer.
    std::string corpus;
    std::vector<memory::Reducer> reducers;
    /// Prebuilt index files, scored in addition to the built ones.
    std::vector<std::string> indices;
    std::string testset;
    std::vector<std::size_t> ks = {5, 10, 20, 40};
    bool exclude_self = false;
    memory::HnswParams hnsw;
    std::size_t ef_search = 64;
};
metrics::NnQualityReport nn_quality(const NnQualityArgs& args);

struct GradCheckArgs {
    model::Variant variant = model::Variant::ra_tx;
    std::size_t layers = 2;
    std::uint64_t seed = 0;
    /// "xent" or "scst".
    std::string loss = "xent";
    double tolerance = 1e-4;
};
/// The report carries "passed"; callers turn a failure into exit code 3.
nlohmann::json grad_check(const GradCheckArgs& args);

}  // namespace recap::cli
