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

#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

#include "recap/errors.hpp"

namespace recap::cli {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw InputError("config: '" + key + "' expects an integer, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw InputError("config: '" + key + "' expects true or false, got '" + v + "'");
}

}  // namespace

KeyValues parse_kv(std::istream& in, const std::string& source) {
    KeyValues kv;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InputError(source + ":" + std::to_string(n) + ": expected key=value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw InputError(source + ":" + std::to_string(n) + ": empty key");
        kv[key] = trim(line.substr(eq + 1));
    }
    return kv;
}

KeyValues read_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file '" + path + "'");
    return parse_kv(in, path);
}

void write_kv(std::ostream& out, const KeyValues& kv) {
    for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

KeyValues RunConfig::to_kv() const {
    KeyValues kv = model.to_kv();
    kv.merge(train.to_kv());
    kv["memory.reducer"] = std::string(memory::to_string(reducer));
    kv["memory.normalize"] = normalize ? "true" : "false";
    kv["memory.M"] = std::to_string(hnsw.M);
    kv["memory.ef_construction"] = std::to_string(hnsw.ef_construction);
    kv["memory.seed"] = std::to_string(hnsw.seed);
    kv["memory.ef_search"] = std::to_string(ef_search);
    kv["bpe.vocab_size"] = std::to_string(bpe_vocab);
    kv["data.corpus"] = corpus;
    kv["data.val"] = val;
    kv["data.index"] = index;
    kv["data.init"] = init;
    return kv;
}

RunConfig RunConfig::from_kv(const KeyValues& kv) {
    RunConfig c;
    const KeyValues known = c.to_kv();
    KeyValues model_kv, train_kv;
    for (const auto& [k, v] : kv) {
        if (!known.count(k)) throw InputError("config: unknown key '" + k + "'");
        if (k.starts_with("model.")) model_kv[k] = v;
        else if (k.starts_with("train.")) train_kv[k] = v;
        else if (k == "memory.reducer") c.reducer = memory::parse_reducer(v);
        else if (k == "memory.normalize") c.normalize = to_bool(k, v);
        else if (k == "memory.M") c.hnsw.M = to_size(k, v);
        else if (k == "memory.ef_construction") c.hnsw.ef_construction = to_size(k, v);
        else if (k == "memory.seed") c.hnsw.seed = to_size(k, v);
        else if (k == "memory.ef_search") c.ef_search = to_size(k, v);
        else if (k == "bpe.vocab_size") c.bpe_vocab = to_size(k, v);
        else if (k == "data.corpus") c.corpus = v;
        else if (k == "data.val") c.val = v;
        else if (k == "data.index") c.index = v;
        else if (k == "data.init") c.init = v;
    }
    c.model = model::ModelConfig::from_kv(model_kv);
    c.train = train::TrainConfig::from_kv(train_kv);
    return c;
}

memory::SearchOptions RunConfig::search() const {
    memory::SearchOptions s;
    s.ef_search = ef_search;
    return s;
}

void RunConfig::write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write '" + path + "'");
    write_kv(out, to_kv());
}

}  // namespace recap::cli
