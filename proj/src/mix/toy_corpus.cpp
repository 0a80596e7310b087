#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "mixforge/errors.hpp"
#include "mixforge/mix_engine.hpp"
#include "mixforge/rng.hpp"

namespace mixforge::mix {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kTargetRms = 0.1;
constexpr double kArtifactAmplitude = 0.05;

void normalise_rms(std::vector<double>& x, double target) {
    const double r = rms(x);
    if (r <= 0.0) return;
    for (auto& v : x) v *= target / r;
}

std::vector<double> coloured_noise(Rng& rng, std::size_t n, double alpha) {
    std::vector<double> out(n);
    double state = 0.0;
    for (auto& v : out) {
        state = alpha * state + (1.0 - alpha) * rng.normal();
        v = state;
    }
    return out;
}

std::vector<double> speech_like(Rng& rng, std::size_t n, int rate) {
    const double f0 = rng.uniform(100.0, 220.0);
    const double vib_rate = rng.uniform(4.0, 6.0);
    const double vib_depth = rng.uniform(0.02, 0.04);
    const double syl_rate = rng.uniform(3.0, 5.0);
    const double syl_phase = rng.uniform(0.0, kTwoPi);
    const double formant = rng.uniform(500.0, 1200.0);
    const int harmonics = static_cast<int>(3800.0 / (f0 * (1.0 + vib_depth)));
    std::vector<double> amp(harmonics), offset(harmonics);
    for (int k = 1; k <= harmonics; ++k) {
        const double d = (k * f0 - formant) / 300.0;
        amp[k - 1] = (1.0 + 2.0 * std::exp(-d * d)) / k;
        offset[k - 1] = rng.uniform(0.0, kTwoPi);
    }

    std::vector<double> voiced(n);
    double phase = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / rate;
        const double f = f0 * (1.0 + vib_depth * std::sin(kTwoPi * vib_rate * t));
        phase += kTwoPi * f / rate;
        double s = 0.0;
        for (int k = 0; k < harmonics; ++k) s += amp[k] * std::sin((k + 1) * phase + offset[k]);
        const double env = std::max(0.0, 0.55 + 0.45 * std::sin(kTwoPi * syl_rate * t + syl_phase));
        voiced[i] = env * s;
    }
    normalise_rms(voiced, kTargetRms);
    auto noise = coloured_noise(rng, n, 0.9);
    normalise_rms(noise, 0.1 * kTargetRms);
    for (std::size_t i = 0; i < n; ++i) voiced[i] += noise[i];
    return voiced;
}

std::vector<double> chord_texture(Rng& rng, std::size_t n, int rate) {
    const double root = rng.uniform(110.0, 330.0);
    const double third = rng.uniform() < 0.5 ? 5.0 / 4.0 : 6.0 / 5.0;
    const double ratios[3] = {1.0, third, 1.5};
    const double trem = rng.uniform(0.3, 1.0);
    double offsets[3][4];
    for (auto& note : offsets) {
        for (auto& o : note) o = rng.uniform(0.0, kTwoPi);
    }
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / rate;
        double s = 0.0;
        for (int note = 0; note < 3; ++note) {
            for (int h = 1; h <= 4; ++h) {
                s += std::sin(kTwoPi * root * ratios[note] * h * t + offsets[note][h - 1]) / h;
            }
        }
        out[i] = (0.8 + 0.2 * std::sin(kTwoPi * trem * t)) * s;
    }
    normalise_rms(out, kTargetRms);
    return out;
}

std::vector<double> ambience(Rng& rng, std::size_t n, int rate) {
    const double alpha = rng.uniform(0.6, 0.95);
    const double mod = rng.uniform(0.2, 1.0);
    auto out = coloured_noise(rng, n, alpha);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] *= 0.7 + 0.3 * std::sin(kTwoPi * mod * static_cast<double>(i) / rate);
    }
    normalise_rms(out, kTargetRms);
    return out;
}

void add_artifact(Rng& rng, std::vector<double>& x, double hz, int rate) {
    const double phase = rng.uniform(0.0, kTwoPi);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] += kArtifactAmplitude * std::sin(kTwoPi * hz * static_cast<double>(i) / rate + phase);
    }
    const double levels = static_cast<double>(1 << (kArtifactBits - 1));
    for (auto& v : x) v = std::clamp(std::round(v * levels) / levels, -1.0, 1.0);
}

std::string make_id(const std::string& prefix, Role role, Authenticity auth, std::size_t i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%s_%04zu", role == Role::foreground ? "fg" : "bg", to_string(auth), i);
    return prefix + buf;
}

}  // namespace

audio::Waveform synthesize_source(Role role, Authenticity auth, Category category, double seconds,
                                  int sample_rate, std::uint64_t seed) {
    if (sample_rate <= 0) throw UsageError("sample rate must be positive");
    if (!(seconds > 0.0)) throw UsageError("source duration must be positive");
    if ((role == Role::foreground) != (category == Category::speech)) {
        throw UsageError("foreground sources are speech and background sources are not");
    }
    Rng rng(seed);
    const auto n = static_cast<std::size_t>(std::llround(seconds * sample_rate));
    audio::Waveform w;
    w.sample_rate = sample_rate;
    switch (category) {
        case Category::speech: w.samples = speech_like(rng, n, sample_rate); break;
        case Category::music: w.samples = chord_texture(rng, n, sample_rate); break;
        case Category::environment: w.samples = ambience(rng, n, sample_rate); break;
    }
    if (auth == Authenticity::fake) {
        const double hz = role == Role::foreground ? kForegroundArtifactHz : kBackgroundArtifactHz;
        if (hz >= sample_rate / 2.0) throw UsageError("sample rate too low for the artifact tone");
        Rng art(mix_seed(seed, "artifact"));
        add_artifact(art, w.samples, hz, sample_rate);
    }
    return w;
}

SourcePools generate_toy_corpus(const ToyCorpusConfig& config, std::uint64_t seed,
                                const std::filesystem::path& out_dir) {
    if (config.fg_min_seconds <= 0 || config.fg_max_seconds < config.fg_min_seconds ||
        config.bg_min_seconds <= 0 || config.bg_max_seconds < config.bg_min_seconds) {
        throw UsageError("toy corpus durations must be positive with min <= max");
    }
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir / "fg", ec);
    fs::create_directories(out_dir / "bg", ec);
    if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());

    SourcePools pools;
    std::vector<SourceEntry> fg_rel, bg_rel;
    auto emit = [&](Role role, Authenticity auth, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) {
            SourceEntry e;
            e.id = make_id(config.id_prefix, role, auth, i);
            e.role = role;
            e.authenticity = auth;
            e.category = role == Role::foreground ? Category::speech
                                                  : (i % 2 == 0 ? Category::music : Category::environment);
            const auto source_seed = mix_seed(seed, e.id);
            Rng dur(mix_seed(source_seed, "duration"));
            const double seconds = role == Role::foreground
                                       ? dur.uniform(config.fg_min_seconds, config.fg_max_seconds)
                                       : dur.uniform(config.bg_min_seconds, config.bg_max_seconds);
            const auto w = synthesize_source(role, auth, e.category, seconds, config.sample_rate, source_seed);
            e.path = fs::path(role == Role::foreground ? "fg" : "bg") / (e.id + ".wav");
            audio::write_wav(w, out_dir / e.path);
            (role == Role::foreground ? fg_rel : bg_rel).push_back(e);
            e.path = out_dir / e.path;
            (role == Role::foreground ? pools.foreground : pools.background).push_back(std::move(e));
        }
    };
    emit(Role::foreground, Authenticity::real, config.fg_real);
    emit(Role::foreground, Authenticity::fake, config.fg_fake);
    emit(Role::background, Authenticity::real, config.bg_real);
    emit(Role::background, Authenticity::fake, config.bg_fake);
    write_pool_csv(fg_rel, out_dir / "foreground.csv");
    write_pool_csv(bg_rel, out_dir / "background.csv");
    return pools;
}

}  // namespace mixforge::mix
