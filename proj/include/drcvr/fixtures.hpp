#pragma once
// Deterministic surrogate datasets with the shape and headline biases of the
// two public benchmarks this project's experiment protocols expect:
//   coat-like:   290 users x 300 items; ~24 self-selected (MNAR) ratings per
//                user written to train.ascii and exactly 16 uniformly sampled
//                (MAR) ratings per user written to test.ascii, dense 0..5
//                matrix format, 0 = unrated.
//   ml100k-like: 943 users x 1682 items, exactly 100000 MNAR rating triples
//                in "user<TAB>item<TAB>rating<TAB>timestamp" format with
//                1-based ids, >= 20 ratings per user, popularity-skewed.
//
// Both generators draw a latent low-rank preference world and then sample
// which cells get rated with a bias toward popular items and toward items the
// user likes, so naive conditional training on the rated cells is genuinely
// biased relative to the uniform (MAR) distribution.

#include <cstdint>
#include <string>

namespace drcvr {

// Writes <dir>/train.ascii and <dir>/test.ascii. The directory must exist.
void write_coat_like(const std::string& dir, uint64_t seed);

// Writes the triple file at `path` (conventionally named u.data).
void write_ml100k_like(const std::string& path, uint64_t seed);

}  // namespace drcvr
