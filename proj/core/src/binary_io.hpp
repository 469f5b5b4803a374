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

// Little-endian binary helpers shared by the index and checkpoint formats.
// Values are written in host order; the formats are defined as
// little-endian and the static_assert below pins that.

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "recap/errors.hpp"

namespace recap::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class BinaryWriter {
 public:
    explicit BinaryWriter(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw InputError("cannot open '" + path + "' for writing");
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    void put(T v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }

    void put_bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

    void put_string(const std::string& s) {
        put<std::uint64_t>(s.size());
        put_bytes(s.data(), s.size());
    }

    template <typename T>
    void put_vector(const std::vector<T>& v) {
        put<std::uint64_t>(v.size());
        put_bytes(v.data(), v.size() * sizeof(T));
    }

    void finish() {
        out_.flush();
        if (!out_) throw InputError("write to '" + path_ + "' failed");
    }

 private:
    std::string path_;
    std::ofstream out_;
};

class BinaryReader {
 public:
    explicit BinaryReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw InputError("cannot open '" + path + "'");
        in_.seekg(0, std::ios::end);
        size_ = static_cast<std::uint64_t>(in_.tellg());
        in_.seekg(0, std::ios::beg);
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    T get() {
        T v{};
        get_bytes(&v, sizeof(T));
        return v;
    }

    void get_bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!in_) throw InputError("'" + path_ + "' is truncated");
    }

    /// Length prefixes are checked against the bytes left in the file so a
    /// corrupt count fails cleanly instead of allocating.
    std::uint64_t get_count(std::size_t elem_size) {
        const auto n = get<std::uint64_t>();
        if (elem_size > 0 && n > remaining() / elem_size) throw InputError("'" + path_ + "' has a corrupt length field");
        return n;
    }

    std::string get_string() {
        std::string s(get_count(1), '\0');
        get_bytes(s.data(), s.size());
        return s;
    }

    template <typename T>
    std::vector<T> get_vector() {
        std::vector<T> v(get_count(sizeof(T)));
        get_bytes(v.data(), v.size() * sizeof(T));
        return v;
    }

    std::uint64_t remaining() {
        const auto pos = static_cast<std::uint64_t>(in_.tellg());
        return pos <= size_ ? size_ - pos : 0;
    }

    const std::string& path() const { return path_; }

 private:
    std::string path_;
    std::ifstream in_;
    std::uint64_t size_ = 0;
};

}  // namespace recap::io
