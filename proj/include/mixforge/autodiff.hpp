#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// A Tensor is a shared handle to a graph node. Operations record their inputs
// and a backward rule; Tensor::backward() on a scalar walks the recorded nodes
// in exact reverse execution order and accumulates (+=) into every node that
// requires a gradient. Leaves created with requires_grad = false never get
// gradient storage. A graph can be back-propagated once; a second backward()
// through consumed nodes throws.
//
// Broadcasting is limited to scalar-with-tensor in add/sub/mul.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "mixforge/errors.hpp"

namespace mixforge::ad {

using Shape = std::vector<std::size_t>;

// 64-byte aligned node storage.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename Real>
using Buffer = std::vector<Real, AlignedAllocator<Real>>;

std::string to_string(const Shape& shape);
std::size_t numel(const Shape& shape);

template <typename Real>
struct Node {
    Shape shape;
    Buffer<Real> value;
    Buffer<Real> grad;
    bool requires_grad = false;
    bool leaf = true;
    bool consumed = false;
    std::uint64_t seq = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Real* grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), Real(0));
        return grad.data();
    }
};

template <typename Real>
class Tensor {
public:
    using value_type = Real;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<Real>> node) : node_(std::move(node)) {}

    static Tensor constant(Shape shape, std::vector<Real> values);
    static Tensor parameter(Shape shape, std::vector<Real> values);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, Real value, bool requires_grad = false);
    static Tensor scalar(Real value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const Real> data() const { return node_->value; }
    // Leaves only: mutating an interior node would desynchronise its backward rule.
    std::span<Real> mutable_data();
    Real item() const;
    Real at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->leaf; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const Real> grad() const { return node_->grad; }
    std::span<Real> mutable_grad() { return node_->grad; }
    void zero_grad();

    void backward() const;

    // A fresh constant leaf holding a copy of the values.
    Tensor detach() const;

    const std::shared_ptr<Node<Real>>& node() const { return node_; }

private:
    std::shared_ptr<Node<Real>> node_;
};

// While a guard is alive on this thread, ops record no graph and their results
// never require a gradient. Used for inference.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// ---- op set ---------------------------------------------------------------

template <typename Real> Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> scale(const Tensor<Real>& a, std::type_identity_t<Real> factor);
template <typename Real> Tensor<Real> shift(const Tensor<Real>& a, std::type_identity_t<Real> offset);

template <typename Real> Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> transpose(const Tensor<Real>& a);
// x: N x in, weight: in x out, bias: out values. Returns N x out.
template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias);

template <typename Real> Tensor<Real> reshape(const Tensor<Real>& a, Shape shape);
// Rank-2 only; axis 0 stacks rows, axis 1 stacks columns.
template <typename Real> Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, std::size_t axis);
template <typename Real>
Tensor<Real> slice(const Tensor<Real>& a, std::size_t axis, std::size_t begin, std::size_t end);
// 1 x n -> m x n
template <typename Real> Tensor<Real> tile_rows(const Tensor<Real>& a, std::size_t times);

template <typename Real> Tensor<Real> sum(const Tensor<Real>& a);
// Rank-2 reductions keep the reduced axis with extent 1. std is the population std.
template <typename Real> Tensor<Real> mean(const Tensor<Real>& a, std::size_t axis);
template <typename Real> Tensor<Real> std_dev(const Tensor<Real>& a, std::size_t axis);

template <typename Real> Tensor<Real> abs(const Tensor<Real>& a);
template <typename Real> Tensor<Real> sigmoid(const Tensor<Real>& a);
template <typename Real> Tensor<Real> gelu(const Tensor<Real>& a);
template <typename Real> Tensor<Real> softmax(const Tensor<Real>& a, std::size_t axis);
// Normalises the last axis (eps = 1e-5) then applies gamma * xhat + beta.
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        std::type_identity_t<Real> eps = Real(1e-5));

// Elementwise atan2(y, x); atan2(0, 0) is 0 with zero gradient.
template <typename Real> Tensor<Real> atan2(const Tensor<Real>& y, const Tensor<Real>& x);
// Maps angles into (-pi, pi]; unit derivative away from the cut.
template <typename Real> Tensor<Real> wrap_phase(const Tensor<Real>& a);

// Weighted mean of stable binary cross-entropy on logits:
// sum_i w_i * (max(z,0) - z*y + log1p(exp(-|z|))) / sum_i w_i.
template <typename Real>
Tensor<Real> bce_with_logits(const Tensor<Real>& logits, std::span<const std::type_identity_t<Real>> labels,
                             std::span<const std::type_identity_t<Real>> weights = {});

// ---- finite-difference verification ---------------------------------------

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-6;
    // Denominator floor for the relative error; coordinates whose analytic and
    // numeric gradients are both below it are compared in absolute terms.
    double floor = 1e-6;
    // Reject inputs with |x_i| <= 10 * step (for functions applying abs to x).
    bool require_clear_of_kinks = false;
};

struct GradCheckReport {
    std::size_t coordinates = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t worst_index = 0;
    std::vector<double> analytic;
    std::vector<double> numeric;
    bool passed = false;
};

// Central differences of a scalar function of one leaf tensor.
GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, const GradCheckOptions& options = {});

// Central differences of a scalar loss w.r.t. several parameter leaves that the
// loss closes over. Returns one report per parameter.
std::vector<GradCheckReport> grad_check_params(const std::function<Tensor<double>()>& loss,
                                               std::vector<Tensor<double>> params,
                                               const GradCheckOptions& options = {});

}  // namespace mixforge::ad
