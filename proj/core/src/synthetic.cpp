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

#include "recap/synthetic.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <utility>

#include "recap/errors.hpp"

namespace recap::synth {

namespace {

constexpr std::array<const char*, 30> kObjects = {
    "dog",   "cat",    "horse", "bird",  "cow",    "sheep", "bus",    "car",      "truck",    "boat",
    "train", "plane",  "bike",  "pizza", "cake",   "apple", "banana", "clock",    "vase",     "chair",
    "couch", "bed",    "laptop", "phone", "kite",  "bench", "elephant", "giraffe", "zebra", "umbrella"};
constexpr std::array<const char*, 8> kColours = {"red", "blue", "green", "yellow", "white", "black", "brown", "orange"};
struct Place {
    const char* name;
    const char* prep;
};
constexpr std::array<Place, 8> kPlaces = {{{"street", "on"},
                                           {"park", "in"},
                                           {"beach", "on"},
                                           {"kitchen", "in"},
                                           {"field", "in"},
                                           {"table", "on"},
                                           {"river", "near"},
                                           {"snow", "in"}}};
constexpr std::array<const char*, 5> kVerbs = {"sits", "stands", "rests", "waits", "appears"};

// Standard normal from two 53-bit uniforms (Box-Muller), so the corpus does
// not depend on the standard library's distribution implementation.
class Normal {
 public:
    explicit Normal(std::uint64_t seed) : rng_(seed) {}
    double operator()() {
        const double u1 = (static_cast<double>(rng_() >> 11) + 0.5) * 0x1.0p-53;
        const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }

 private:
    std::mt19937_64 rng_;
};

std::vector<std::vector<double>> prototypes(Normal& rng, std::size_t n, std::size_t d) {
    std::vector<std::vector<double>> out(n, std::vector<double>(d));
    for (auto& v : out) {
        double norm = 0.0;
        for (double& x : v) {
            x = rng();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;
    }
    return out;
}

std::string caption(std::size_t tmpl, const std::string& obj, const std::string& col, const Place& place,
                    const std::string& verb) {
    const std::string p = std::string(place.prep) + " the " + place.name;
    switch (tmpl % 5) {
        case 0:
            return "a " + col + " " + obj + " " + verb + " " + p;
        case 1:
            return "the " + obj + " is " + col + " and " + verb + " " + p;
        case 2:
            return "a photo of a " + col + " " + obj + " " + p;
        case 3:
            return p + " there is a " + col + " " + obj;
        default:
            return "an image showing a " + obj + " that is " + col;
    }
}

}  // namespace

void SyntheticCorpusSpec::validate() const {
    const auto fail = [](const std::string& m) { throw InputError("synthetic corpus: " + m); };
    if (n_images == 0) fail("n_images must be positive");
    if (d == 0 || cells == 0) fail("d and cells must be positive");
    if (captions_per_image == 0) fail("captions_per_image must be positive");
    if (n_objects == 0 || n_objects > kObjects.size()) fail("n_objects must be in 1..30");
    if (!(noise >= 0.0)) fail("noise must be non-negative");
}

std::vector<memory::CorpusRecord> make_synthetic(const SyntheticCorpusSpec& spec) {
    spec.validate();
    Normal world(spec.world_seed);
    const auto obj_p = prototypes(world, kObjects.size(), spec.d);
    const auto col_p = prototypes(world, kColours.size(), spec.d);
    const auto place_p = prototypes(world, kPlaces.size(), spec.d);

    Normal rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    const double sigma = spec.noise / std::sqrt(static_cast<double>(spec.d));
    std::vector<memory::CorpusRecord> out;
    out.reserve(spec.n_images);
    for (std::size_t i = 0; i < spec.n_images; ++i) {
        const std::size_t o = rng.index(spec.n_objects);
        const std::size_t c = rng.index(kColours.size());
        const std::size_t p = rng.index(kPlaces.size());
        // The object fills every cell but two; colour and place get one each.
        std::vector<const std::vector<double>*> slots(spec.cells, &obj_p[o]);
        if (spec.cells >= 2) slots[1] = &col_p[c];
        if (spec.cells >= 3) slots[2] = &place_p[p];
        for (std::size_t j = spec.cells; j > 1; --j) std::swap(slots[j - 1], slots[rng.index(j)]);

        memory::CorpusRecord rec;
        rec.grid.image_id = spec.id_prefix + std::to_string(i);
        rec.grid.grid = num::Tensor(num::Shape{spec.cells, spec.d});
        for (std::size_t cell = 0; cell < spec.cells; ++cell) {
            const auto& proto = *slots[cell];
            for (std::size_t j = 0; j < spec.d; ++j) rec.grid.grid.at(cell, j) = proto[j] + sigma * rng();
        }
        const std::size_t first = rng.index(5);
        for (std::size_t k = 0; k < spec.captions_per_image; ++k)
            rec.captions.push_back(caption(first + k, kObjects[o], kColours[c], kPlaces[p], kVerbs[rng.index(kVerbs.size())]));
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace recap::synth
