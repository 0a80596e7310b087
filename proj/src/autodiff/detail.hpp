#pragma once

#include <initializer_list>

#include "mixforge/autodiff.hpp"

namespace mixforge::ad {

std::uint64_t next_sequence();

namespace detail {

// Builds the result node of an op. The backward rule is only kept when some
// input requires a gradient.
template <typename Real>
Tensor<Real> make_result(Shape shape, Buffer<Real> value,
                         std::initializer_list<const Tensor<Real>*> inputs,
                         std::function<void(Node<Real>&)> backward) {
    auto node = std::make_shared<Node<Real>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->leaf = false;
    node->seq = next_sequence();
    if (grad_enabled()) {
        for (const auto* in : inputs) node->requires_grad = node->requires_grad || in->requires_grad();
    }
    if (node->requires_grad) {
        for (const auto* in : inputs) node->parents.push_back(in->node());
        node->backward = std::move(backward);
    }
    return Tensor<Real>(std::move(node));
}

template <typename Real>
Tensor<Real> make_result(Shape shape, Buffer<Real> value, const std::vector<Tensor<Real>>& inputs,
                         std::function<void(Node<Real>&)> backward) {
    auto node = std::make_shared<Node<Real>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->leaf = false;
    node->seq = next_sequence();
    if (grad_enabled()) {
        for (const auto& in : inputs) node->requires_grad = node->requires_grad || in.requires_grad();
    }
    if (node->requires_grad) {
        for (const auto& in : inputs) node->parents.push_back(in.node());
        node->backward = std::move(backward);
    }
    return Tensor<Real>(std::move(node));
}

}  // namespace detail
}  // namespace mixforge::ad
