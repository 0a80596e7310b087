#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mixforge/errors.hpp"

namespace mixforge::audio {

inline constexpr int kCanonicalRate = 16000;
inline constexpr std::size_t kModelInputSamples = 64000;  // 4 s at 16 kHz

struct Waveform {
    std::vector<double> samples;
    int sample_rate = kCanonicalRate;

    std::size_t size() const { return samples.size(); }
    double duration_seconds() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

// Throws DataError if the waveform is empty, has a non-finite sample or a
// non-positive rate.
void validate(const Waveform& w);

enum class WavErrc {
    io,
    malformed_header,
    unsupported_encoding,
    empty_payload,
};

const char* to_string(WavErrc code);

class WavError : public DataError {
public:
    WavError(WavErrc code, const std::string& what)
        : DataError(std::string(to_string(code)) + ": " + what), code_(code) {}
    WavErrc code() const { return code_; }

private:
    WavErrc code_;
};

// PCM16 or IEEE float32, mono or stereo. Stereo is averaged to mono.
Waveform read_wav(const std::filesystem::path& path);

// Always writes PCM16 mono little-endian; samples outside [-1, 1] saturate.
void write_wav(const Waveform& w, const std::filesystem::path& path);

// Linear-interpolation resampler. Output length is round(len * target / source).
Waveform resample(const Waveform& w, int target_rate);

enum class FitMode {
    pad_repeat,   // long inputs keep their first n samples
    crop_random,  // long inputs keep a seed-chosen contiguous window
};

// Short inputs are repeat-tiled then truncated; long inputs are cropped per mode.
Waveform fix_length(const Waveform& w, std::size_t n_samples = kModelInputSamples,
                    FitMode mode = FitMode::crop_random, std::uint64_t seed = 0);

}  // namespace mixforge::audio
