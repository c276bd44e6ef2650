#include "glyphflow/params.hpp"

#include <cstring>
#include <stdexcept>

namespace glyphflow::core {

Tensor& ParamSet::add(const std::string& name, Tensor value, bool frozen) {
    if (index_.count(name) != 0) {
        throw std::invalid_argument("duplicate parameter '" + name + "'");
    }
    index_[name] = entries_.size();
    entries_.push_back(Entry{name, std::move(value), frozen});
    return entries_.back().value;
}

bool ParamSet::contains(const std::string& name) const { return index_.count(name) != 0; }

Tensor& ParamSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw std::out_of_range("unknown parameter '" + name + "'");
    }
    return entries_[it->second].value;
}

const Tensor& ParamSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw std::out_of_range("unknown parameter '" + name + "'");
    }
    return entries_[it->second].value;
}

bool ParamSet::is_frozen(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw std::out_of_range("unknown parameter '" + name + "'");
    }
    return entries_[it->second].frozen;
}

std::int64_t ParamSet::total_elements() const {
    std::int64_t n = 0;
    for (const Entry& e : entries_) {
        n += e.value.numel();
    }
    return n;
}

std::int64_t ParamSet::trainable_elements() const {
    std::int64_t n = 0;
    for (const Entry& e : entries_) {
        if (!e.frozen) {
            n += e.value.numel();
        }
    }
    return n;
}

bool ParamSet::identical(const ParamSet& a, const ParamSet& b) {
    if (a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Entry& ea = a.entries_[i];
        const Entry& eb = b.entries_[i];
        if (ea.name != eb.name || ea.frozen != eb.frozen || ea.value.shape() != eb.value.shape()) {
            return false;
        }
        if (std::memcmp(ea.value.data(), eb.value.data(),
                        sizeof(double) * static_cast<std::size_t>(ea.value.numel())) != 0) {
            return false;
        }
    }
    return true;
}

GradMap finite_diff_grad(const std::function<double()>& fn, ParamSet& params, double h) {
    if (!(h > 0.0)) {
        throw std::invalid_argument("finite_diff_grad requires h > 0");
    }
    GradMap grads;
    for (std::size_t e = 0; e < params.size(); ++e) {
        auto& entry = params.entry(e);
        if (entry.frozen) {
            continue;
        }
        Tensor grad(entry.value.shape());
        for (std::int64_t i = 0; i < entry.value.numel(); ++i) {
            const double saved = entry.value[i];
            entry.value[i] = saved + h;
            const double f_plus = fn();
            entry.value[i] = saved - h;
            const double f_minus = fn();
            entry.value[i] = saved;
            grad[i] = (f_plus - f_minus) / (2.0 * h);
        }
        grads[entry.name] = std::move(grad);
    }
    return grads;
}

} // namespace glyphflow::core
