#include "glyphflow/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace glyphflow::core {

void AdamW::step(ParamSet& params, const GradMap& grads, double lr_scale) {
    for (const auto& [name, grad] : grads) {
        if (!grad.all_finite()) {
            throw std::runtime_error("adamw: non-finite gradient for '" + name + "'");
        }
    }
    ++step_;
    const double lr = cfg_.lr * lr_scale;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));

    for (std::size_t e = 0; e < params.size(); ++e) {
        auto& entry = params.entry(e);
        if (entry.frozen) {
            continue;
        }
        auto it = grads.find(entry.name);
        if (it == grads.end()) {
            continue;
        }
        const Tensor& g = it->second;
        if (!g.same_shape(entry.value)) {
            throw std::runtime_error("adamw: gradient shape mismatch for '" + entry.name + "'");
        }
        Moments& mom = moments_[entry.name];
        if (mom.m.numel() != g.numel()) {
            mom.m = Tensor::zeros(g.shape());
            mom.v = Tensor::zeros(g.shape());
        }
        Tensor& p = entry.value;
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            p[i] -= lr * cfg_.weight_decay * p[i];
            mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g[i];
            mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double m_hat = mom.m[i] / bc1;
            const double v_hat = mom.v[i] / bc2;
            p[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        }
    }
}

} // namespace glyphflow::core
