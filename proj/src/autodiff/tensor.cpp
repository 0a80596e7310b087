#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "mixforge/autodiff.hpp"

namespace mixforge::ad {

namespace {
std::atomic<std::uint64_t> g_sequence{0};
}

std::uint64_t next_sequence() { return g_sequence.fetch_add(1, std::memory_order_relaxed) + 1; }

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

template <typename Real>
Tensor<Real> Tensor<Real>::constant(Shape shape, std::vector<Real> values) {
    if (ad::numel(shape) != values.size()) {
        throw ShapeError("tensor of shape " + to_string(shape) + " given " +
                         std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<Node<Real>>();
    node->shape = std::move(shape);
    node->value.assign(values.begin(), values.end());
    node->seq = next_sequence();
    return Tensor(std::move(node));
}

template <typename Real>
Tensor<Real> Tensor<Real>::parameter(Shape shape, std::vector<Real> values) {
    auto t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
}

template <typename Real>
Tensor<Real> Tensor<Real>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), Real(0), requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::full(Shape shape, Real value, bool requires_grad) {
    const auto n = ad::numel(shape);
    auto t = constant(std::move(shape), std::vector<Real>(n, value));
    t.node_->requires_grad = requires_grad;
    return t;
}

template <typename Real>
Tensor<Real> Tensor<Real>::scalar(Real value) {
    return constant(Shape{}, {value});
}

template <typename Real>
std::size_t Tensor<Real>::rows() const {
    if (rank() != 2) throw ShapeError("rows() on tensor of shape " + to_string(shape()));
    return node_->shape[0];
}

template <typename Real>
std::size_t Tensor<Real>::cols() const {
    if (rank() != 2) throw ShapeError("cols() on tensor of shape " + to_string(shape()));
    return node_->shape[1];
}

template <typename Real>
std::span<Real> Tensor<Real>::mutable_data() {
    if (!node_->leaf) throw ShapeError("mutable_data() on a non-leaf tensor");
    return node_->value;
}

template <typename Real>
Real Tensor<Real>::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
}

template <typename Real>
void Tensor<Real>::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
}

template <typename Real>
void Tensor<Real>::backward() const {
    if (numel() != 1) {
        throw ShapeError("backward() needs a scalar loss, got shape " + to_string(shape()));
    }
    if (!node_->requires_grad) throw ShapeError("backward() on a tensor that does not require grad");
    if (node_->consumed) throw std::logic_error("backward() called twice on the same graph");

    // Collect interior nodes reachable from the loss. Owning pointers keep
    // every node alive while parents are released below.
    std::vector<std::shared_ptr<Node<Real>>> order;
    std::unordered_set<const Node<Real>*> seen;
    std::vector<std::shared_ptr<Node<Real>>> stack{node_};
    while (!stack.empty()) {
        auto n = std::move(stack.back());
        stack.pop_back();
        if (!seen.insert(n.get()).second) continue;
        if (n->leaf) continue;
        if (n->consumed) throw std::logic_error("backward() through an already consumed graph");
        for (const auto& p : n->parents) {
            if (p->requires_grad) stack.push_back(p);
        }
        order.push_back(std::move(n));
    }
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a->seq > b->seq; });

    node_->grad_buffer()[0] += Real(1);
    for (const auto& n : order) {
        if (n->backward && !n->grad.empty()) n->backward(*n);
        n->backward = nullptr;
        n->parents.clear();
        n->grad.clear();
        n->grad.shrink_to_fit();
        n->consumed = true;
    }
}

template <typename Real>
Tensor<Real> Tensor<Real>::detach() const {
    return constant(shape(), std::vector<Real>(node_->value.begin(), node_->value.end()));
}

template class Tensor<float>;
template class Tensor<double>;

// ---- grad_check ------------------------------------------------------------

namespace {

void compare(GradCheckReport& report, const GradCheckOptions& options) {
    report.coordinates = report.analytic.size();
    report.max_rel_error = 0.0;
    report.max_abs_error = 0.0;
    for (std::size_t i = 0; i < report.analytic.size(); ++i) {
        const double a = report.analytic[i];
        const double n = report.numeric[i];
        const double abs_err = std::abs(a - n);
        const double denom = std::max({std::abs(a), std::abs(n), options.floor});
        const double rel = abs_err / denom;
        if (!std::isfinite(rel) || rel > report.max_rel_error) {
            report.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
            report.worst_index = i;
        }
        report.max_abs_error = std::max(report.max_abs_error, abs_err);
    }
    report.passed = report.max_rel_error <= options.tolerance;
}

}  // namespace

std::vector<GradCheckReport> grad_check_params(const std::function<Tensor<double>()>& loss,
                                               std::vector<Tensor<double>> params,
                                               const GradCheckOptions& options) {
    for (auto& p : params) {
        if (!p.requires_grad() || !p.is_leaf()) {
            throw ShapeError("grad_check: every checked tensor must be a leaf requiring grad");
        }
        if (options.require_clear_of_kinks) {
            for (double v : p.data()) {
                if (std::abs(v) <= 10.0 * options.step) {
                    throw ShapeError("grad_check: input coordinate within 10h of a kink");
                }
            }
        }
        p.zero_grad();
    }
    loss().backward();

    std::vector<GradCheckReport> reports(params.size());
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        auto& r = reports[k];
        const auto g = p.grad();
        r.analytic.assign(p.numel(), 0.0);
        if (!g.empty()) std::copy(g.begin(), g.end(), r.analytic.begin());
        r.numeric.resize(p.numel());
        auto values = p.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + options.step;
            const double up = loss().item();
            values[i] = saved - options.step;
            const double down = loss().item();
            values[i] = saved;
            r.numeric[i] = (up - down) / (2.0 * options.step);
        }
        compare(r, options);
    }
    return reports;
}

GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, const GradCheckOptions& options) {
    return grad_check_params([&] { return f(x); }, {x}, options).front();
}

}  // namespace mixforge::ad
