#pragma once

#include "glyphflow/tensor.hpp"

#include <cstdint>

namespace glyphflow::core {

/// Counter-based pseudo-random stream. Each draw is a pure function of
/// (key, counter), so identical (seed, counter) pairs reproduce the same
/// sequence and streams split from distinct indices are independent.
///
/// Generator: the SplitMix64 finalizer applied to key + counter * GOLDEN.
/// Cross-implementation bit-equality is not a goal; within-build
/// reproducibility is.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0);

    /// Child stream keyed off this stream's identity and the given index.
    /// Does not advance this stream's counter.
    RngStream split(std::uint64_t index) const;

    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform01();
    double uniform(double lo, double hi);
    /// Standard normal via Box-Muller; consumes exactly two counter ticks.
    double normal();
    /// Integer in [0, n), n >= 1.
    std::uint64_t below(std::uint64_t n);

    Tensor normal_tensor(Shape shape);
    Tensor uniform_tensor(Shape shape, double lo, double hi);

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

} // namespace glyphflow::core
