#pragma once

#include "glyphflow/params.hpp"

#include <cstdint>
#include <string>
#include <unordered_map>

namespace glyphflow::core {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// AdamW with bias correction and decoupled weight decay. The decay
/// p <- p - lr*wd*p is applied before the moment update. Learning-rate
/// warmup is the caller's job (lr_scale).
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    /// One update over every trainable entry with a gradient present.
    /// Throws on non-finite gradients (training halt signal).
    void step(ParamSet& params, const GradMap& grads, double lr_scale = 1.0);

    std::int64_t step_count() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }

    struct Moments {
        Tensor m;
        Tensor v;
    };
    const std::unordered_map<std::string, Moments>& moments() const { return moments_; }
    std::unordered_map<std::string, Moments>& moments() { return moments_; }
    void set_step_count(std::int64_t s) { step_ = s; }

private:
    AdamWConfig cfg_;
    std::int64_t step_ = 0;
    std::unordered_map<std::string, Moments> moments_;
};

} // namespace glyphflow::core
