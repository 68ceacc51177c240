// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sg2m/errors.hpp"
#include "sg2m/ops.hpp"
#include "sg2m/tensor.hpp"

namespace sg2m {

/// Gradients of a scalar `output` with respect to each tensor in `inputs`.
///
/// Inputs may be leaves or intermediate results. With `create_graph` the
/// backward computation is itself recorded, so the returned gradients can be
/// differentiated again. Throws GraphError if an input does not influence the
/// output, unless `allow_unused` (then a zero tensor is returned for it).
inline std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs, bool create_graph = false,
                                bool allow_unused = false) {
    if (!output.defined() || output.numel() != 1)
        throw GraphError("grad: output must be a single-element tensor");

    using Impl = detail::TensorImpl;
    std::unordered_set<const Impl*> targets;
    for (const auto& t : inputs) targets.insert(t.id());

    // Collect every tensor reachable from the output.
    std::unordered_map<const Impl*, Tensor> reach;
    std::vector<Tensor> stack{output};
    while (!stack.empty()) {
        Tensor t = std::move(stack.back());
        stack.pop_back();
        if (!reach.emplace(t.id(), t).second) continue;
        if (t.impl()->node)
            for (const auto& in : t.impl()->node->inputs) stack.push_back(in);
    }

    // Creation order is a topological order: inputs always precede outputs.
    std::vector<Tensor> order;
    order.reserve(reach.size());
    for (auto& [k, v] : reach) order.push_back(v);
    std::sort(order.begin(), order.end(), [](const Tensor& a, const Tensor& b) { return a.impl()->seq < b.impl()->seq; });

    std::unordered_set<const Impl*> needed;
    for (const auto& t : order) {
        bool n = targets.count(t.id()) > 0;
        if (!n && t.impl()->node)
            for (const auto& in : t.impl()->node->inputs)
                if (needed.count(in.id())) {
                    n = true;
                    break;
                }
        if (n) needed.insert(t.id());
    }
    for (const auto& t : inputs)
        if (!needed.count(t.id()) && !allow_unused)
            throw GraphError("grad: an input is not reachable from the output");

    GradModeGuard mode(create_graph);
    std::unordered_map<const Impl*, Tensor> grads;
    grads.emplace(output.id(), Tensor::ones(output.shape()));

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const Tensor& t = *it;
        if (!t.impl()->node || !needed.count(t.id())) continue;
        auto g = grads.find(t.id());
        if (g == grads.end()) continue;
        const auto& node = *t.impl()->node;
        bool any_needed = false;
        for (const auto& in : node.inputs) any_needed |= needed.count(in.id()) > 0;
        if (!any_needed) continue;
        std::vector<Tensor> in_grads = node.backward(g->second);
        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
            const Tensor& in = node.inputs[i];
            if (i >= in_grads.size() || !in_grads[i].defined() || !needed.count(in.id())) continue;
            if (in_grads[i].shape() != in.shape())
                throw GraphError(std::string("grad: backward of ") + node.name + " produced shape " +
                                 shape_str(in_grads[i].shape()) + " for input " + shape_str(in.shape()));
            auto slot = grads.find(in.id());
            if (slot == grads.end())
                grads.emplace(in.id(), in_grads[i]);
            else
                slot->second = add(slot->second, in_grads[i]);
        }
        // Free intermediate gradients that are no longer needed.
        if (!targets.count(t.id())) grads.erase(t.id());
    }

    std::vector<Tensor> result;
    result.reserve(inputs.size());
    for (const auto& t : inputs) {
        auto g = grads.find(t.id());
        result.push_back(g != grads.end() ? g->second : Tensor::zeros(t.shape()));
    }
    return result;
}

}  // namespace sg2m
