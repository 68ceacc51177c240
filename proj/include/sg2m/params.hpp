// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "sg2m/ops.hpp"

namespace sg2m {

/// A trainable tensor. `value` is stored at its optimizer scale; layers use
/// `gain * value` at runtime (equalized learning rate).
struct Parameter {
    std::string name;
    Tensor value;
    float gain = 1.0f;
};

/// Ordered, named parameter list. Values are gradient leaves; updates replace
/// the tensor rather than mutating it, so graphs built earlier stay valid.
class ParameterSet {
public:
    int add(std::string name, const Tensor& init, float gain = 1.0f) {
        if (index_.count(name)) throw GraphError("duplicate parameter name " + name);
        const int id = static_cast<int>(params_.size());
        index_.emplace(name, id);
        params_.push_back({std::move(name), init.variable(), gain});
        return id;
    }

    int size() const { return static_cast<int>(params_.size()); }
    const Parameter& operator[](int i) const { return params_.at(static_cast<std::size_t>(i)); }
    const std::vector<Parameter>& all() const { return params_; }

    /// Parameter as the layer sees it.
    Tensor runtime(int i) const {
        const Parameter& p = (*this)[i];
        return p.gain == 1.0f ? p.value : scale(p.value, p.gain);
    }

    void set(int i, const Tensor& v) {
        Parameter& p = params_.at(static_cast<std::size_t>(i));
        if (v.shape() != p.value.shape())
            throw ShapeError("parameter " + p.name + ": shape " + shape_str(v.shape()) + " expected " +
                             shape_str(p.value.shape()));
        p.value = v.detach().variable();
    }

    /// Turns every value into a constant (no gradients are tracked for it).
    void freeze() {
        for (auto& p : params_) p.value = p.value.detach();
    }

    int find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? -1 : it->second;
    }

    std::vector<Tensor> values() const {
        std::vector<Tensor> v;
        v.reserve(params_.size());
        for (const auto& p : params_) v.push_back(p.value);
        return v;
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.numel();
        return n;
    }

private:
    std::vector<Parameter> params_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace sg2m
