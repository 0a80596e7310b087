#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mixforge::dsp {

// z(n) = x(n) + j * hilbert(x)(n). `real` is a verbatim copy of the input.
struct AnalyticSignal {
    std::vector<double> real;
    std::vector<double> imag;
};

struct MultiScaleSet {
    std::vector<double> high;  // first difference, high(0) = 0
    std::vector<double> all;   // the input itself
    std::vector<double> low;   // centered moving average, edge-replicated
};

// Instantaneous frequency per scale, rad/sample.
struct IFFeatures {
    std::vector<double> high;
    std::vector<double> all;
    std::vector<double> low;
};

struct TextureCues {
    std::size_t frames = 0;
    std::size_t dims = 0;
    std::vector<double> psi;       // |TKEO|, frames x dims row-major
    std::vector<double> psi_bar;   // time mean of psi, one per dim
    std::vector<double> flux;      // population std of |adjacent difference|, one per dim
};

// Frequency-domain construction: zero the negative bins, double the positive
// ones, keep DC and Nyquist. Requires at least 2 samples.
AnalyticSignal hilbert_analytic(std::span<const double> x);

// Four-quadrant angle in (-pi, pi]; the angle of (0, 0) is 0.
std::vector<double> instantaneous_phase(const AnalyticSignal& z);

// Maps any angle into (-pi, pi].
double wrap_phase(double angle);

// f(n) = |wrap(theta(n) - theta(n-1))|, f(0) = f(1). With wrap = false the
// raw principal-value difference is used instead.
std::vector<double> instantaneous_frequency(std::span<const double> theta, bool wrap = true);

MultiScaleSet decompose_multiscale(std::span<const double> x, std::size_t pool_window = 3);

// decompose -> analytic signal -> phase -> IF, for each of the three scales.
IFFeatures multiscale_if(std::span<const double> x, std::size_t pool_window = 3, bool wrap = true);

// Psi(n) = x(n)^2 - x(n-1) x(n+1); both endpoints copy their interior neighbour.
std::vector<double> tkeo(std::span<const double> x);

// H is frames x dims row-major.
std::vector<double> feature_flux(std::span<const double> h, std::size_t frames, std::size_t dims);

TextureCues texture_cues(std::span<const double> h, std::size_t frames, std::size_t dims);

}  // namespace mixforge::dsp
