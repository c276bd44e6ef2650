#include "glyphflow/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace glyphflow::core {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kSplitSalt = 0xD1B54A32D192ED03ULL;

// SplitMix64 finalizer (Steele, Lea, Flood 2014).
std::uint64_t mix64(std::uint64_t x) {
    x += kGolden;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

} // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream) {
    key_ = mix64(mix64(seed) ^ mix64(stream * kGolden + kSplitSalt));
    counter_ = 0;
}

RngStream RngStream::split(std::uint64_t index) const {
    RngStream child(0);
    child.key_ = mix64(key_ ^ mix64(index * kGolden + kSplitSalt));
    child.counter_ = 0;
    return child;
}

std::uint64_t RngStream::next_u64() { return mix64(key_ + counter_++ * kGolden); }

double RngStream::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

double RngStream::normal() {
    // u1 in (0, 1] so the log is finite.
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::below(std::uint64_t n) {
    if (n == 0) {
        throw std::invalid_argument("RngStream::below(0)");
    }
    // 128-bit multiply keeps the map uniform enough for data sampling.
    const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
}

Tensor RngStream::normal_tensor(Shape shape) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        t[i] = normal();
    }
    return t;
}

Tensor RngStream::uniform_tensor(Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        t[i] = uniform(lo, hi);
    }
    return t;
}

} // namespace glyphflow::core
