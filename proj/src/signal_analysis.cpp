#include "mixforge/signal_analysis.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <numbers>

#include "mixforge/errors.hpp"

namespace mixforge::dsp {

namespace {

struct FftwDeleter {
    void operator()(fftw_complex* p) const { fftw_free(p); }
};
using FftwBuffer = std::unique_ptr<fftw_complex[], FftwDeleter>;

FftwBuffer fftw_buffer(std::size_t n) {
    return FftwBuffer(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n)));
}

class FftwPlan {
public:
    FftwPlan(int n, fftw_complex* in, fftw_complex* out, int sign)
        : plan_(fftw_plan_dft_1d(n, in, out, sign, FFTW_ESTIMATE)) {}
    ~FftwPlan() { fftw_destroy_plan(plan_); }
    FftwPlan(const FftwPlan&) = delete;
    FftwPlan& operator=(const FftwPlan&) = delete;
    void execute() const { fftw_execute(plan_); }

private:
    fftw_plan plan_;
};

}  // namespace

AnalyticSignal hilbert_analytic(std::span<const double> x) {
    const std::size_t n = x.size();
    if (n < 2) throw DataError("hilbert_analytic: need at least 2 samples");

    auto buf = fftw_buffer(n);
    auto spec = fftw_buffer(n);
    FftwPlan forward(static_cast<int>(n), buf.get(), spec.get(), FFTW_FORWARD);
    FftwPlan inverse(static_cast<int>(n), spec.get(), buf.get(), FFTW_BACKWARD);

    for (std::size_t i = 0; i < n; ++i) {
        buf[i][0] = x[i];
        buf[i][1] = 0.0;
    }
    forward.execute();

    // Positive bins 1..ceil(n/2)-1 doubled; Nyquist (even n) kept; negatives zeroed.
    const std::size_t half = n / 2;
    const std::size_t last_positive = (n % 2 == 0) ? half - 1 : half;
    for (std::size_t k = 1; k <= last_positive; ++k) {
        spec[k][0] *= 2.0;
        spec[k][1] *= 2.0;
    }
    for (std::size_t k = last_positive + 1 + (n % 2 == 0 ? 1 : 0); k < n; ++k) {
        spec[k][0] = 0.0;
        spec[k][1] = 0.0;
    }
    inverse.execute();

    AnalyticSignal z;
    z.real.assign(x.begin(), x.end());
    z.imag.resize(n);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) z.imag[i] = buf[i][1] * inv_n;
    return z;
}

std::vector<double> instantaneous_phase(const AnalyticSignal& z) {
    if (z.real.size() != z.imag.size()) {
        throw ShapeError("instantaneous_phase: real and imaginary parts differ in length");
    }
    std::vector<double> theta(z.real.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double re = z.real[i];
        const double im = z.imag[i];
        if (re == 0.0 && im == 0.0) {
            theta[i] = 0.0;
            continue;
        }
        double a = std::atan2(im, re);
        if (a <= -std::numbers::pi) a = std::numbers::pi;
        theta[i] = a;
    }
    return theta;
}

double wrap_phase(double angle) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double r = std::remainder(angle, two_pi);
    if (r <= -std::numbers::pi) r += two_pi;
    return r;
}

std::vector<double> instantaneous_frequency(std::span<const double> theta, bool wrap) {
    const std::size_t n = theta.size();
    if (n < 2) throw DataError("instantaneous_frequency: need at least 2 phase samples");
    std::vector<double> f(n);
    for (std::size_t i = 1; i < n; ++i) {
        const double d = theta[i] - theta[i - 1];
        f[i] = std::abs(wrap ? wrap_phase(d) : d);
    }
    f[0] = f[1];
    return f;
}

MultiScaleSet decompose_multiscale(std::span<const double> x, std::size_t pool_window) {
    const std::size_t n = x.size();
    if (n < 2) throw DataError("decompose_multiscale: need at least 2 samples");
    if (pool_window == 0) throw DataError("decompose_multiscale: pool window must be positive");

    MultiScaleSet out;
    out.all.assign(x.begin(), x.end());
    out.high.assign(n, 0.0);
    for (std::size_t i = 1; i < n; ++i) out.high[i] = x[i] - x[i - 1];

    const auto left = static_cast<std::ptrdiff_t>((pool_window - 1) / 2);
    const auto right = static_cast<std::ptrdiff_t>(pool_window / 2);
    const auto last = static_cast<std::ptrdiff_t>(n) - 1;
    out.low.resize(n);
    for (std::ptrdiff_t i = 0; i <= last; ++i) {
        double acc = 0.0;
        for (std::ptrdiff_t j = i - left; j <= i + right; ++j) {
            acc += x[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(j, 0, last))];
        }
        out.low[static_cast<std::size_t>(i)] = acc / static_cast<double>(pool_window);
    }
    return out;
}

IFFeatures multiscale_if(std::span<const double> x, std::size_t pool_window, bool wrap) {
    const auto scales = decompose_multiscale(x, pool_window);
    auto if_of = [wrap](const std::vector<double>& s) {
        return instantaneous_frequency(instantaneous_phase(hilbert_analytic(s)), wrap);
    };
    return IFFeatures{if_of(scales.high), if_of(scales.all), if_of(scales.low)};
}

std::vector<double> tkeo(std::span<const double> x) {
    const std::size_t n = x.size();
    if (n < 3) throw DataError("tkeo: need at least 3 samples");
    std::vector<double> psi(n);
    for (std::size_t i = 1; i + 1 < n; ++i) psi[i] = x[i] * x[i] - x[i - 1] * x[i + 1];
    psi[0] = psi[1];
    psi[n - 1] = psi[n - 2];
    return psi;
}

std::vector<double> feature_flux(std::span<const double> h, std::size_t frames, std::size_t dims) {
    if (frames < 2) throw DataError("feature_flux: need at least 2 time steps");
    if (h.size() != frames * dims) throw ShapeError("feature_flux: buffer size != frames * dims");

    std::vector<double> mean(dims, 0.0);
    std::vector<double> sq(dims, 0.0);
    const double count = static_cast<double>(frames - 1);
    for (std::size_t t = 1; t < frames; ++t) {
        for (std::size_t d = 0; d < dims; ++d) {
            mean[d] += std::abs(h[t * dims + d] - h[(t - 1) * dims + d]);
        }
    }
    for (auto& m : mean) m /= count;
    for (std::size_t t = 1; t < frames; ++t) {
        for (std::size_t d = 0; d < dims; ++d) {
            const double dev = std::abs(h[t * dims + d] - h[(t - 1) * dims + d]) - mean[d];
            sq[d] += dev * dev;
        }
    }
    for (auto& s : sq) s = std::sqrt(s / count);
    return sq;
}

TextureCues texture_cues(std::span<const double> h, std::size_t frames, std::size_t dims) {
    if (h.size() != frames * dims) throw ShapeError("texture_cues: buffer size != frames * dims");
    if (frames < 3) throw DataError("texture_cues: need at least 3 time steps");

    TextureCues cues;
    cues.frames = frames;
    cues.dims = dims;
    cues.psi.resize(frames * dims);
    cues.psi_bar.assign(dims, 0.0);
    std::vector<double> column(frames);
    for (std::size_t d = 0; d < dims; ++d) {
        for (std::size_t t = 0; t < frames; ++t) column[t] = h[t * dims + d];
        const auto psi = tkeo(column);
        for (std::size_t t = 0; t < frames; ++t) {
            cues.psi[t * dims + d] = std::abs(psi[t]);
            cues.psi_bar[d] += std::abs(psi[t]);
        }
        cues.psi_bar[d] /= static_cast<double>(frames);
    }
    cues.flux = feature_flux(h, frames, dims);
    return cues;
}

}  // namespace mixforge::dsp
