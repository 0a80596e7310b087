#include <cmath>

#include "mixforge/errors.hpp"
#include "mixforge/train_eval.hpp"

namespace mixforge::train {

template <typename Real>
void adamw_step(std::span<ad::Tensor<Real>> params, AdamWState& state, const TrainConfig& cfg) {
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), {});
        state.v.assign(params.size(), {});
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad()) continue;
        const auto g = params[i].grad();
        for (std::size_t j = 0; j < g.size(); ++j) {
            if (!std::isfinite(static_cast<double>(g[j]))) {
                throw NumericalError("non-finite gradient in parameter " + std::to_string(i) + " (shape " +
                                     ad::to_string(params[i].shape()) + ") at element " + std::to_string(j) +
                                     " on step " + std::to_string(state.step + 1));
            }
        }
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (!p.has_grad()) continue;
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.empty()) {
            m.assign(p.numel(), 0.0);
            v.assign(p.numel(), 0.0);
        }
        const auto g = p.grad();
        auto w = p.mutable_data();
        for (std::size_t j = 0; j < w.size(); ++j) {
            double wj = static_cast<double>(w[j]);
            const double gj = static_cast<double>(g[j]);
            wj *= 1.0 - cfg.lr * cfg.weight_decay;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            wj -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
            w[j] = static_cast<Real>(wj);
        }
    }
}

template <typename Real>
ad::Tensor<Real> bce_loss(const ad::Tensor<Real>& logits, std::span<const std::type_identity_t<Real>> labels) {
    if (labels.empty() || logits.numel() == 0) throw DataError("bce_loss: empty batch");
    if (logits.numel() != labels.size()) {
        throw ShapeError("bce_loss: " + std::to_string(logits.numel()) + " logits vs " +
                         std::to_string(labels.size()) + " labels");
    }
    for (auto y : labels) {
        if (y != Real(0) && y != Real(1)) throw DataError("bce_loss: labels must be 0 or 1");
    }
    return ad::bce_with_logits(logits, labels);
}

template void adamw_step(std::span<ad::Tensor<float>>, AdamWState&, const TrainConfig&);
template void adamw_step(std::span<ad::Tensor<double>>, AdamWState&, const TrainConfig&);
template ad::Tensor<float> bce_loss(const ad::Tensor<float>&, std::span<const float>);
template ad::Tensor<double> bce_loss(const ad::Tensor<double>&, std::span<const double>);

}  // namespace mixforge::train
