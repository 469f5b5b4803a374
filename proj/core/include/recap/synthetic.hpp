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
#include <cstdint>
#include <string>
#include <vector>

#include "recap/corpus.hpp"

namespace recap::synth {

/// A toy captioning world: each image shows one object with one colour at
/// one place. Grid cells are noisy copies of the concept prototypes, with
/// the object in all cells but two, and the captions are templates over the
/// same three words. Images that look alike mostly show the same object and
/// so share caption words.
struct SyntheticCorpusSpec {
    std::size_t n_images = 200;
    std::size_t d = 32;
    std::size_t cells = 4;
    std::size_t captions_per_image = 5;
    /// Seed for the images drawn from the world.
    std::uint64_t seed = 0;
    /// Seed for the concept prototypes. Corpora that should describe the
    /// same world (memory and test split) share it.
    std::uint64_t world_seed = 0;
    /// Number of objects used, at most 30.
    std::size_t n_objects = 30;
    /// Per-cell noise, relative to the unit-norm prototypes.
    double noise = 0.5;
    std::string id_prefix = "img";

    void validate() const;
};

std::vector<memory::CorpusRecord> make_synthetic(const SyntheticCorpusSpec& spec);

}  // namespace recap::synth
