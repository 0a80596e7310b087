#include "mixforge/prompt_model.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "mixforge/errors.hpp"
#include "mixforge/rng.hpp"
#include "mixforge/signal_analysis.hpp"

namespace mixforge::model {

using ad::Shape;

namespace {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double gelu_exact(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

template <typename Real>
std::vector<Real> cast(const std::vector<double>& v) {
    return std::vector<Real>(v.begin(), v.end());
}

// p x p matrix whose column j is op applied to the unit vector e_j.
template <typename Real, typename Op>
ad::Tensor<Real> operator_matrix(std::size_t p, Op op) {
    std::vector<Real> m(p * p);
    for (std::size_t j = 0; j < p; ++j) {
        std::vector<double> e(p, 0.0);
        e[j] = 1.0;
        const std::vector<double> col = op(e);
        for (std::size_t i = 0; i < p; ++i) m[i * p + j] = static_cast<Real>(col[i]);
    }
    return ad::Tensor<Real>::constant({p, p}, std::move(m));
}

}  // namespace

template <typename Real>
auto PromptModel<Real>::add_parameter(const std::string& name, Shape shape, double stddev, double mean,
                                      bool trainable) -> Tensor {
    Rng rng(mix_seed(trainable ? config_.init_seed : config_.backbone_seed, name));
    std::vector<double> v(ad::numel(shape));
    for (auto& x : v) x = mean + stddev * rng.normal();
    auto t = trainable ? Tensor::parameter(shape, cast<Real>(v)) : Tensor::constant(shape, cast<Real>(v));
    params_.push_back({name, t, trainable});
    return t;
}

template <typename Real>
auto PromptModel<Real>::add_constant_parameter(const std::string& name, Shape shape, double value, bool trainable)
    -> Tensor {
    return add_parameter(name, std::move(shape), 0.0, value, trainable);
}

template <typename Real>
PromptModel<Real>::PromptModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto& c = config_;
    const std::size_t d = c.embed_dim, p = c.prompt_len;

    std::size_t in_ch = 1;
    for (std::size_t l = 0; l < c.conv_kernels.size(); ++l) {
        const std::size_t out_ch = l + 1 == c.conv_kernels.size() ? d : c.encoder_channels;
        const std::size_t fan_in = in_ch * c.conv_kernels[l];
        const auto prefix = "encoder.conv" + std::to_string(l);
        conv_w_.push_back(add_parameter(prefix + ".weight", {out_ch, fan_in}, std::sqrt(2.0 / fan_in), 0.0, false));
        conv_b_.push_back(add_parameter(prefix + ".bias", {out_ch}, 0.1, 0.0, false));
        in_ch = out_ch;
    }

    for (std::size_t i = 0; i < c.n_layers; ++i) {
        const auto prefix = "block" + std::to_string(i);
        Block b;
        b.ln1_g = add_constant_parameter(prefix + ".ln1.gamma", {d}, 1.0, false);
        b.ln1_b = add_constant_parameter(prefix + ".ln1.beta", {d}, 0.0, false);
        b.w_qkv = add_parameter(prefix + ".attn.qkv.weight", {d, 3 * d}, 1.0 / std::sqrt(double(d)), 0.0, false);
        b.b_qkv = add_constant_parameter(prefix + ".attn.qkv.bias", {3 * d}, 0.0, false);
        b.w_o = add_parameter(prefix + ".attn.out.weight", {d, d}, 1.0 / std::sqrt(double(d)), 0.0, false);
        b.b_o = add_constant_parameter(prefix + ".attn.out.bias", {d}, 0.0, false);
        b.ln2_g = add_constant_parameter(prefix + ".ln2.gamma", {d}, 1.0, false);
        b.ln2_b = add_constant_parameter(prefix + ".ln2.beta", {d}, 0.0, false);
        b.w_1 = add_parameter(prefix + ".ffn.fc1.weight", {d, c.ffn_dim}, std::sqrt(2.0 / d), 0.0, false);
        b.b_1 = add_constant_parameter(prefix + ".ffn.fc1.bias", {c.ffn_dim}, 0.0, false);
        b.w_2 = add_parameter(prefix + ".ffn.fc2.weight", {c.ffn_dim, d}, 1.0 / std::sqrt(double(c.ffn_dim)), 0.0,
                              false);
        b.b_2 = add_constant_parameter(prefix + ".ffn.fc2.bias", {d}, 0.0, false);
        blocks_.push_back(std::move(b));
    }

    for (std::size_t i = 0; i < c.n_layers; ++i) {
        const auto suffix = "." + std::to_string(i);
        base_.push_back(add_parameter("prompt.base" + suffix, {p, d}, 1.0, 0.0, true));
        fre_.push_back(add_parameter("prompt.fre" + suffix, {p, d}, 1.0, 0.0, true));
        tex_.push_back(add_parameter("prompt.tex" + suffix, {p, d}, 1.0, 0.0, true));
    }

    fre_w_ = add_parameter("fre.linear.weight", {3 * d, d}, 1.0 / std::sqrt(3.0 * d), 0.0, true);
    fre_b_ = add_constant_parameter("fre.linear.bias", {d}, 0.0, true);

    const std::size_t gate_out = c.per_dim_gate ? d : 1;
    gate_w1_ = add_parameter("tex.gate.fc1.weight", {2 * d, d}, 1.0 / std::sqrt(2.0 * d), 0.0, true);
    gate_b1_ = add_constant_parameter("tex.gate.fc1.bias", {d}, 0.0, true);
    gate_w2_ = add_parameter("tex.gate.fc2.weight", {d, gate_out}, 1.0 / std::sqrt(double(d)), 0.0, true);
    gate_b2_ = add_constant_parameter("tex.gate.fc2.bias", {gate_out}, 0.0, true);
    tex_g_ = add_constant_parameter("tex.norm.gamma", {d}, 1.0, true);
    tex_b_ = add_constant_parameter("tex.norm.beta", {d}, 0.0, true);

    head_w1_ = add_parameter("head.fc1.weight", {d, c.head_hidden}, std::sqrt(2.0 / d), 0.0, true);
    head_b1_ = add_constant_parameter("head.fc1.bias", {c.head_hidden}, 0.0, true);
    head_w2_ = add_parameter("head.fc2.weight", {c.head_hidden, 1}, 1.0 / std::sqrt(double(c.head_hidden)), 0.0,
                             true);
    head_b2_ = add_constant_parameter("head.fc2.bias", {1}, 0.0, true);

    const std::size_t window = c.pool_window;
    op_diff_ = operator_matrix<Real>(p, [&](const std::vector<double>& e) {
        return p >= 2 ? dsp::decompose_multiscale(e, window).high : std::vector<double>(p, 0.0);
    });
    op_pool_ = operator_matrix<Real>(p, [&](const std::vector<double>& e) {
        return p >= 2 ? dsp::decompose_multiscale(e, window).low : e;
    });
    op_hilbert_ = operator_matrix<Real>(p, [&](const std::vector<double>& e) {
        return p >= 2 ? dsp::hilbert_analytic(e).imag : std::vector<double>(p, 0.0);
    });
    // Adjacent differences with the first row duplicating the second.
    op_if_ = operator_matrix<Real>(p, [&](const std::vector<double>& e) {
        std::vector<double> out(p, 0.0);
        for (std::size_t n = 1; n < p; ++n) out[n] = e[n] - e[n - 1];
        if (p >= 2) out[0] = out[1];
        return out;
    });
}

template <typename Real>
Features PromptModel<Real>::extract(std::span<const double> samples) const {
    const auto& c = config_;
    if (samples.size() != c.input_samples) {
        throw DataError("feature encoder expects " + std::to_string(c.input_samples) + " samples, got " +
                        std::to_string(samples.size()));
    }
    std::size_t len = samples.size();
    std::size_t ch = 1;
    MatD x = Eigen::Map<const MatD>(samples.data(), static_cast<Eigen::Index>(len), 1);

    for (std::size_t l = 0; l < c.conv_kernels.size(); ++l) {
        const std::size_t k = c.conv_kernels[l], s = c.conv_strides[l];
        const std::size_t out_len = (len + s - 1) / s;
        const std::size_t needed = (out_len - 1) * s + k;
        const std::ptrdiff_t pad_left = needed > len ? static_cast<std::ptrdiff_t>((needed - len) / 2) : 0;

        MatD cols = MatD::Zero(static_cast<Eigen::Index>(out_len), static_cast<Eigen::Index>(ch * k));
        for (std::size_t t = 0; t < out_len; ++t) {
            for (std::size_t j = 0; j < k; ++j) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * s + j) - pad_left;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                for (std::size_t cc = 0; cc < ch; ++cc) cols(t, cc * k + j) = x(src, cc);
            }
        }
        const auto& w = conv_w_[l];
        const std::size_t out_ch = w.shape()[0];
        MatD wd(static_cast<Eigen::Index>(out_ch), static_cast<Eigen::Index>(ch * k));
        for (std::size_t i = 0; i < w.numel(); ++i) wd.data()[i] = static_cast<double>(w.data()[i]);
        MatD y = cols * wd.transpose();
        const auto& b = conv_b_[l];
        for (Eigen::Index t = 0; t < y.rows(); ++t) {
            for (Eigen::Index o = 0; o < y.cols(); ++o) y(t, o) = gelu_exact(y(t, o) + static_cast<double>(b.data()[o]));
        }
        x = std::move(y);
        len = out_len;
        ch = out_ch;
    }

    // Per-frame normalisation without affine parameters.
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
        const double mu = x.row(t).mean();
        const double var = (x.row(t).array() - mu).square().mean();
        x.row(t) = ((x.row(t).array() - mu) / std::sqrt(var + 1e-5)).matrix();
    }
    std::vector<double> h(x.data(), x.data() + x.size());
    return features_from_hidden(std::move(h), len);
}

template <typename Real>
Features PromptModel<Real>::features_from_hidden(std::vector<double> h_raw, std::size_t frames) const {
    const std::size_t d = config_.embed_dim;
    if (h_raw.size() != frames * d) {
        throw ShapeError("hidden features hold " + std::to_string(h_raw.size()) + " values, expected " +
                         std::to_string(frames) + " x " + std::to_string(d));
    }
    if (frames < 3) throw ShapeError("texture cues need at least 3 frames");
    Features f;
    f.frames = frames;
    f.dim = d;
    const auto cues = dsp::texture_cues(h_raw, frames, d);
    f.psi_bar = cues.psi_bar;
    f.flux = cues.flux;
    f.h_raw = std::move(h_raw);
    return f;
}

template <typename Real>
auto PromptModel<Real>::frequency_stream(const Tensor& p_fre) const -> Tensor {
    const std::size_t p = config_.prompt_len, d = config_.embed_dim;
    if (p < 2) throw ShapeError("frequency stream needs prompt_len >= 2");
    if (p_fre.shape() != Shape{p, d}) {
        throw ShapeError("frequency stream expects " + ad::to_string({p, d}) + ", got " + ad::to_string(p_fre.shape()));
    }
    auto if_of = [&](const Tensor& s) {
        auto theta = ad::atan2(ad::matmul(op_hilbert_, s), s);
        auto step = ad::matmul(op_if_, theta);
        if (config_.wrap_if) step = ad::wrap_phase(step);
        return ad::abs(step);
    };
    const auto high = ad::matmul(op_diff_, p_fre);
    const auto low = ad::matmul(op_pool_, p_fre);
    const auto stacked = ad::concat<Real>({if_of(high), if_of(p_fre), if_of(low)}, 1);
    return ad::linear(stacked, fre_w_, fre_b_);
}

template <typename Real>
auto PromptModel<Real>::gate(const Features& f) const -> Tensor {
    const std::size_t d = config_.embed_dim;
    if (f.dim != d) throw ShapeError("texture cues have dim " + std::to_string(f.dim) + ", model expects " + std::to_string(d));
    std::vector<Real> cues;
    cues.reserve(2 * d);
    for (double v : f.psi_bar) cues.push_back(static_cast<Real>(v));
    for (double v : f.flux) cues.push_back(static_cast<Real>(v));
    const auto in = Tensor::constant({1, 2 * d}, std::move(cues));
    const auto hidden = ad::gelu(ad::linear(in, gate_w1_, gate_b1_));
    return ad::sigmoid(ad::linear(hidden, gate_w2_, gate_b2_));
}

template <typename Real>
auto PromptModel<Real>::texture_stream(const Tensor& p_tex, const Tensor& g, const Features& f) const -> Tensor {
    const std::size_t p = config_.prompt_len, d = config_.embed_dim;
    if (p_tex.shape() != Shape{p, d}) {
        throw ShapeError("texture stream expects " + ad::to_string({p, d}) + ", got " + ad::to_string(p_tex.shape()));
    }
    if (f.dim != d) throw ShapeError("texture cues have dim " + std::to_string(f.dim) + ", model expects " + std::to_string(d));
    const auto psi_bar = ad::tile_rows(Tensor::constant({1, d}, cast<Real>(f.psi_bar)), p);
    const auto gate_rows = g.numel() == 1 ? g : ad::tile_rows(g, p);
    const auto one_minus = ad::shift(ad::scale(gate_rows, Real(-1)), Real(1));
    const auto fused = ad::add(ad::mul(gate_rows, p_tex), ad::mul(one_minus, psi_bar));
    return ad::layer_norm(fused, tex_g_, tex_b_);
}

template <typename Real>
auto PromptModel<Real>::block(std::size_t layer, const Tensor& x, std::size_t prompt_rows,
                              const ForwardOptions& opt) const -> Tensor {
    const auto& b = blocks_.at(layer);
    const std::size_t d = config_.embed_dim, heads = config_.n_heads, dh = d / heads;
    const std::size_t rows = x.rows();
    if (x.cols() != d) throw ShapeError("block input has " + std::to_string(x.cols()) + " columns, expected " + std::to_string(d));

    Tensor mask;
    if (opt.isolate_prompts && prompt_rows > 0) {
        std::vector<Real> m(rows * rows, Real(0));
        for (std::size_t r = prompt_rows; r < rows; ++r) {
            for (std::size_t c = 0; c < prompt_rows; ++c) m[r * rows + c] = Real(-1e9);
        }
        mask = Tensor::constant({rows, rows}, std::move(m));
    }

    const auto normed = ad::layer_norm(x, b.ln1_g, b.ln1_b);
    const auto qkv = ad::linear(normed, b.w_qkv, b.b_qkv);
    const Real inv_sqrt = Real(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<Tensor> head_out;
    head_out.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const auto q = ad::slice(qkv, 1, h * dh, (h + 1) * dh);
        const auto k = ad::slice(qkv, 1, d + h * dh, d + (h + 1) * dh);
        const auto v = ad::slice(qkv, 1, 2 * d + h * dh, 2 * d + (h + 1) * dh);
        auto scores = ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt);
        if (mask.defined()) scores = ad::add(scores, mask);
        head_out.push_back(ad::matmul(ad::softmax(scores, 1), v));
    }
    const auto attended = heads == 1 ? head_out[0] : ad::concat(head_out, 1);
    const auto x1 = ad::add(x, ad::linear(attended, b.w_o, b.b_o));
    const auto hidden = ad::gelu(ad::linear(ad::layer_norm(x1, b.ln2_g, b.ln2_b), b.w_1, b.b_1));
    return ad::add(x1, ad::linear(hidden, b.w_2, b.b_2));
}

template <typename Real>
auto PromptModel<Real>::encode_layer(std::size_t layer, const Tensor& h, std::size_t prompt_rows,
                                     const ForwardOptions& opt) const -> Tensor {
    return block(layer, h, prompt_rows, opt);
}

template <typename Real>
auto PromptModel<Real>::inject_and_encode(std::size_t layer, const Tensor& h, const std::vector<Tensor>& prompts,
                                          const ForwardOptions& opt, ForwardTrace<Real>* trace) const -> Tensor {
    const std::size_t d = config_.embed_dim;
    if (h.rank() != 2 || h.cols() != d) {
        throw ShapeError("layer input must be T x " + std::to_string(d) + ", got " + ad::to_string(h.shape()));
    }
    std::size_t prompt_rows = 0;
    std::vector<Tensor> parts;
    for (const auto& p : prompts) {
        if (p.rank() != 2 || p.cols() != d) {
            throw ShapeError("prompt must be p x " + std::to_string(d) + ", got " + ad::to_string(p.shape()));
        }
        prompt_rows += p.rows();
        parts.push_back(p);
    }
    parts.push_back(h);
    const auto x = parts.size() == 1 ? h : ad::concat(parts, 0);
    const auto y = encode_layer(layer, x, prompt_rows, opt);
    if (trace) {
        trace->injected_rows.push_back(x.rows());
        trace->layer_inputs.push_back(x);
    }
    auto out = prompt_rows == 0 ? y : ad::slice(y, 0, prompt_rows, y.rows());
    if (trace) trace->layer_outputs.push_back(out);
    return out;
}

template <typename Real>
auto PromptModel<Real>::classify(const Tensor& h_final) const -> Tensor {
    const auto pooled = ad::mean(h_final, 0);
    const auto hidden = ad::gelu(ad::linear(pooled, head_w1_, head_b1_));
    return ad::linear(hidden, head_w2_, head_b2_);
}

template <typename Real>
auto PromptModel<Real>::forward(const Features& f, ForwardTrace<Real>* trace, const ForwardOptions& opt) const
    -> Tensor {
    const auto& c = config_;
    const std::size_t d = c.embed_dim;
    if (f.dim != d || f.h_raw.size() != f.frames * d) throw ShapeError("features do not match the model dimension");

    Tensor h = Tensor::constant({f.frames, d}, cast<Real>(f.h_raw));
    Tensor g;
    if (c.streams.tex) {
        g = gate(f);
        if (trace) trace->gate = static_cast<double>(g.data()[0]);
    }

    Tensor carried;
    for (std::size_t i = 0; i < c.n_layers; ++i) {
        std::vector<Tensor> prompts;
        if (c.streams.base) prompts.push_back(base_[i]);
        if (c.streams.fre) prompts.push_back(frequency_stream(fre_[i]));
        if (c.streams.tex) prompts.push_back(texture_stream(tex_[i], g, f));

        if (!c.carry_prompts) {
            h = inject_and_encode(i, h, prompts, opt, trace);
            continue;
        }
        const std::size_t k = prompts.size() * c.prompt_len;
        auto fresh = ad::concat(prompts, 0);
        if (carried.defined()) fresh = ad::add(fresh, carried);
        const auto x = ad::concat<Real>({fresh, h}, 0);
        const auto y = encode_layer(i, x, k, opt);
        if (trace) {
            trace->injected_rows.push_back(x.rows());
            trace->layer_inputs.push_back(x);
        }
        carried = ad::slice(y, 0, 0, k);
        h = ad::slice(y, 0, k, y.rows());
        if (trace) trace->layer_outputs.push_back(h);
    }
    return classify(h);
}

template <typename Real>
double PromptModel<Real>::score(const Features& f) const {
    ad::NoGradGuard guard;
    return static_cast<double>(forward(f).item());
}

template <typename Real>
auto PromptModel<Real>::trainable_parameters() const -> std::vector<Tensor> {
    std::vector<Tensor> out;
    for (const auto& p : params_) {
        if (p.trainable) out.push_back(p.tensor);
    }
    return out;
}

template <typename Real>
auto PromptModel<Real>::frozen_parameters() const -> std::vector<Tensor> {
    std::vector<Tensor> out;
    for (const auto& p : params_) {
        if (!p.trainable) out.push_back(p.tensor);
    }
    return out;
}

template <typename Real>
std::size_t PromptModel<Real>::trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.trainable ? p.tensor.numel() : 0;
    return n;
}

template <typename Real>
std::size_t PromptModel<Real>::frozen_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.trainable ? 0 : p.tensor.numel();
    return n;
}

template <typename Real>
auto PromptModel<Real>::parameter(const std::string& name) -> Tensor& {
    for (auto& p : params_) {
        if (p.name == name) return p.tensor;
    }
    throw UsageError("unknown parameter '" + name + "'");
}

template <typename Real>
auto PromptModel<Real>::parameter(const std::string& name) const -> const Tensor& {
    for (const auto& p : params_) {
        if (p.name == name) return p.tensor;
    }
    throw UsageError("unknown parameter '" + name + "'");
}

template <typename Real>
void copy_parameters(const PromptModel<Real>& from, PromptModel<Real>& to) {
    auto& dst = to.parameters();
    const auto& src = from.parameters();
    if (dst.size() != src.size()) throw ShapeError("copy_parameters: models have different parameter sets");
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i].name != dst[i].name || src[i].tensor.shape() != dst[i].tensor.shape()) {
            throw ShapeError("copy_parameters: parameter '" + src[i].name + "' does not match");
        }
        auto out = dst[i].tensor.mutable_data();
        std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), out.begin());
    }
}

template class PromptModel<float>;
template class PromptModel<double>;
template void copy_parameters(const PromptModel<float>&, PromptModel<float>&);
template void copy_parameters(const PromptModel<double>&, PromptModel<double>&);

}  // namespace mixforge::model
