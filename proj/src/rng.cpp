#include "posediff/rng.hpp"

#include <cmath>

namespace posediff {

namespace {

constexpr std::uint64_t kPhi = 0x9e3779b97f4a7c15ULL;

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t RngStream::next_u64() {
    ++counter_;
    return mix64(seed_ + counter_ * kPhi);
}

double RngStream::next_unit() {
    // Top 53 bits -> [0, 1).
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_gauss() {
    const double u1 = next_unit();
    const double u2 = next_unit();
    // 1-u1 lies in (0, 1], so the log is finite.
    const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    return r * std::cos(2.0 * M_PI * u2);
}

RngStream RngStream::child(std::uint64_t label) const {
    return RngStream(mix64(seed_ ^ mix64(label ^ 0xd1b54a32d192ed03ULL)));
}

Tensor gauss_sample(RngStream& stream, std::vector<int> shape) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = stream.next_gauss();
    return t;
}

}  // namespace posediff
