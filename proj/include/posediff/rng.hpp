#pragma once

#include <cstdint>

#include "posediff/tensor.hpp"

namespace posediff {

// Counter-based deterministic random stream.  State is just (seed, counter),
// so streams can be copied, replayed and forked without hidden globals; the
// n-th draw from a given seed is the same on every platform.  The generator
// is a splitmix64-style bijective finalizer over seed + counter*phi.
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed = 0) : seed_(seed) {}

    std::uint64_t next_u64();
    // Uniform double in [0, 1), 53 mantissa bits.
    double next_unit();
    // Standard normal via Box-Muller.  Consumes exactly two next_u64() calls
    // per draw and keeps no cached spare, so draw counts stay predictable.
    double next_gauss();

    // Derives an independent stream keyed by `label`.  The child depends only
    // on (seed, label), never on how far this stream has been consumed.
    RngStream child(std::uint64_t label) const;

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

  private:
    std::uint64_t seed_ = 0;
    std::uint64_t counter_ = 0;
};

// Tensor of i.i.d. standard normals drawn from the stream in row-major order.
Tensor gauss_sample(RngStream& stream, std::vector<int> shape);

}  // namespace posediff
