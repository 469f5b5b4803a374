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

// RCIX index file, little-endian:
//
//   "RCIX" | u32 version | u64 d | u64 M | u64 ef_construction | u64 seed | u64 count
//   u32 reducer | u8 normalized | i32 max_level | u64 entry_point
//   f64[count * d] embeddings
//   count x { str image_id | u64 n | n x str caption }
//   count x { u32 levels | levels x { u64 n | n x u32 neighbor } }
//
// where str is u64 length + bytes.

#include <cstring>

#include "binary_io.hpp"
#include "recap/errors.hpp"
#include "recap/memory.hpp"

namespace recap::memory {

namespace {
constexpr char kMagic[4] = {'R', 'C', 'I', 'X'};
}

class IndexSerializer {
 public:
    static void save(const ExternalMemory& m, const std::string& path) {
        io::BinaryWriter w(path);
        w.put_bytes(kMagic, 4);
        w.put<std::uint32_t>(ExternalMemory::kFormatVersion);
        const HnswIndex& idx = m.index_;
        w.put<std::uint64_t>(m.dim_);
        w.put<std::uint64_t>(idx.params_.M);
        w.put<std::uint64_t>(idx.params_.ef_construction);
        w.put<std::uint64_t>(idx.params_.seed);
        w.put<std::uint64_t>(m.entries_.size());
        w.put<std::uint32_t>(static_cast<std::uint32_t>(m.reducer_));
        w.put<std::uint8_t>(m.normalized_ ? 1 : 0);
        w.put<std::int32_t>(idx.max_level_);
        w.put<std::uint64_t>(idx.entry_point_);
        w.put_bytes(idx.vectors_.ptr(), idx.vectors_.size() * sizeof(double));
        for (const auto& e : m.entries_) {
            w.put_string(e.image_id);
            w.put<std::uint64_t>(e.captions.size());
            for (const auto& c : e.captions) w.put_string(c);
        }
        for (const auto& node : idx.links_) {
            w.put<std::uint32_t>(static_cast<std::uint32_t>(node.size()));
            for (const auto& layer : node) w.put_vector(layer);
        }
        w.finish();
    }

    static ExternalMemory load(const std::string& path, std::optional<std::size_t> expected_dim) {
        io::BinaryReader r(path);
        char magic[4];
        r.get_bytes(magic, 4);
        if (std::memcmp(magic, kMagic, 4) != 0) throw InputError("'" + path + "' is not an RCIX index file");
        const auto version = r.get<std::uint32_t>();
        if (version != ExternalMemory::kFormatVersion) {
            throw InputError("'" + path + "' has index format version " + std::to_string(version) + ", expected " +
                             std::to_string(ExternalMemory::kFormatVersion));
        }
        ExternalMemory m;
        HnswIndex& idx = m.index_;
        m.dim_ = r.get<std::uint64_t>();
        if (expected_dim && *expected_dim != m.dim_) {
            throw InputError("'" + path + "' indexes " + std::to_string(m.dim_) + "-d embeddings, expected " +
                             std::to_string(*expected_dim));
        }
        idx.params_.M = r.get<std::uint64_t>();
        idx.params_.ef_construction = r.get<std::uint64_t>();
        idx.params_.seed = r.get<std::uint64_t>();
        const auto count = r.get<std::uint64_t>();
        const auto reducer = r.get<std::uint32_t>();
        if (reducer > static_cast<std::uint32_t>(Reducer::l2norm_sum)) throw InputError("'" + path + "' has an unknown reducer tag");
        m.reducer_ = static_cast<Reducer>(reducer);
        m.normalized_ = r.get<std::uint8_t>() != 0;
        idx.max_level_ = r.get<std::int32_t>();
        idx.entry_point_ = r.get<std::uint64_t>();
        if (m.dim_ > 0 && count > r.remaining() / (m.dim_ * sizeof(double))) {
            throw InputError("'" + path + "' is truncated");
        }
        if (count > 0 && idx.entry_point_ >= count) throw InputError("'" + path + "' has an invalid entry point");
        idx.dim_ = m.dim_;
        idx.vectors_ = num::Tensor(num::Shape{count, m.dim_});
        r.get_bytes(idx.vectors_.ptr(), idx.vectors_.size() * sizeof(double));
        m.entries_.resize(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            auto& e = m.entries_[i];
            e.image_id = r.get_string();
            const auto n = r.get_count(8);
            for (std::uint64_t c = 0; c < n; ++c) e.captions.push_back(r.get_string());
            auto row = idx.vectors_.row(i);
            e.embedding.assign(row.begin(), row.end());
        }
        idx.links_.resize(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            const auto levels = r.get<std::uint32_t>();
            if (levels == 0 || static_cast<int>(levels) > idx.max_level_ + 1) {
                throw InputError("'" + path + "' has a corrupt level count for node " + std::to_string(i));
            }
            idx.links_[i].resize(levels);
            for (std::uint32_t l = 0; l < levels; ++l) {
                idx.links_[i][l] = r.get_vector<std::uint32_t>();
                for (std::uint32_t nb : idx.links_[i][l]) {
                    if (nb >= count) throw InputError("'" + path + "' has an edge to a missing node");
                }
            }
        }
        if (r.remaining() != 0) throw InputError("'" + path + "' has trailing bytes");
        return m;
    }
};

void ExternalMemory::save(const std::string& path) const { IndexSerializer::save(*this, path); }

ExternalMemory ExternalMemory::load(const std::string& path, std::optional<std::size_t> expected_dim) {
    return IndexSerializer::load(path, expected_dim);
}

}  // namespace recap::memory
