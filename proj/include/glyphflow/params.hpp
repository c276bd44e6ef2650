#pragma once

#include "glyphflow/tensor.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace glyphflow::core {

/// Ordered collection of named parameter arrays. Order is insertion order
/// and defines the checkpoint manifest layout. Frozen entries never receive
/// optimizer updates.
class ParamSet {
public:
    struct Entry {
        std::string name;
        Tensor value;
        bool frozen = false;
    };

    Tensor& add(const std::string& name, Tensor value, bool frozen = false);
    bool contains(const std::string& name) const;
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool is_frozen(const std::string& name) const;

    std::size_t size() const { return entries_.size(); }
    const Entry& entry(std::size_t i) const { return entries_[i]; }
    Entry& entry(std::size_t i) { return entries_[i]; }

    std::int64_t total_elements() const;
    std::int64_t trainable_elements() const;

    /// Byte-exact equality, used by freeze/round-trip tests.
    static bool identical(const ParamSet& a, const ParamSet& b);

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

using GradMap = std::map<std::string, Tensor>;

/// Central finite differences over every trainable coordinate of a ParamSet.
/// fn must evaluate the objective from the (mutated) params; this is the
/// independent oracle used against reverse-mode gradients.
GradMap finite_diff_grad(const std::function<double()>& fn, ParamSet& params, double h);

} // namespace glyphflow::core
