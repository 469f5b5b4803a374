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

#include "recap/corpus.hpp"

#include <fstream>
#include <istream>
#include <nlohmann/json.hpp>

#include "recap/errors.hpp"

namespace recap::memory {

std::vector<CorpusRecord> read_corpus(std::istream& in, const std::string& source) {
    std::vector<CorpusRecord> out;
    std::string line;
    std::size_t lineno = 0;
    std::size_t dim = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = source + ":" + std::to_string(lineno);
        try {
            const auto j = nlohmann::json::parse(line);
            CorpusRecord rec;
            rec.grid.image_id = j.at("image_id").get<std::string>();
            const auto& rows = j.at("grid");
            if (!rows.is_array() || rows.empty()) throw InputError(where + ": grid must be a non-empty array");
            const std::size_t d = rows.at(0).size();
            if (d == 0) throw InputError(where + ": grid rows must be non-empty");
            if (dim == 0) dim = d;
            if (d != dim) {
                throw InputError(where + ": grid has " + std::to_string(d) + " channels, corpus uses " +
                                 std::to_string(dim));
            }
            std::vector<double> values;
            values.reserve(rows.size() * d);
            for (const auto& r : rows) {
                if (!r.is_array() || r.size() != d) throw InputError(where + ": ragged grid");
                for (const auto& v : r) values.push_back(v.get<double>());
            }
            rec.grid.grid = num::Tensor(num::Shape{rows.size(), d}, std::move(values));
            rec.grid.grid.check_finite(where + " grid");
            rec.captions = j.at("captions").get<std::vector<std::string>>();
            out.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw InputError(where + ": malformed record: " + e.what());
        } catch (const NumericalError& e) {
            throw InputError(e.what());
        }
    }
    return out;
}

std::vector<CorpusRecord> read_corpus_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open corpus '" + path + "'");
    return read_corpus(in, path);
}

void write_corpus(std::ostream& out, const std::vector<CorpusRecord>& records) {
    for (const auto& rec : records) {
        nlohmann::json j;
        j["image_id"] = rec.image_id();
        auto rows = nlohmann::json::array();
        for (std::size_t i = 0; i < rec.grid.cells(); ++i) {
            auto r = rec.grid.grid.row(i);
            rows.push_back(std::vector<double>(r.begin(), r.end()));
        }
        j["grid"] = std::move(rows);
        j["captions"] = rec.captions;
        out << j.dump() << '\n';
    }
}

void write_corpus_file(const std::string& path, const std::vector<CorpusRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot write corpus '" + path + "'");
    write_corpus(out, records);
    if (!out) throw InputError("write to '" + path + "' failed");
}

ExternalMemory build_memory(const std::vector<CorpusRecord>& records, Reducer reducer, bool normalize,
                            const HnswParams& params) {
    std::vector<MemoryEntry> entries;
    entries.reserve(records.size());
    for (const auto& rec : records) entries.push_back({rec.image_id(), aggregate(rec.grid, reducer), rec.captions});
    return ExternalMemory(std::move(entries), reducer, normalize, params);
}

}  // namespace recap::memory
