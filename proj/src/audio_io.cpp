#include "mixforge/audio_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>

#include "mixforge/rng.hpp"

namespace mixforge::audio {

static_assert(std::endian::native == std::endian::little,
              "WAV I/O assumes a little-endian host");

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <typename T>
T load(const std::uint8_t* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

template <typename T>
void store(std::vector<std::uint8_t>& out, T v) {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

void store_tag(std::vector<std::uint8_t>& out, const char (&tag)[5]) {
    out.insert(out.end(), tag, tag + 4);
}

bool tag_is(const std::uint8_t* p, const char* tag) { return std::memcmp(p, tag, 4) == 0; }

}  // namespace

const char* to_string(WavErrc code) {
    switch (code) {
        case WavErrc::io: return "io error";
        case WavErrc::malformed_header: return "malformed header";
        case WavErrc::unsupported_encoding: return "unsupported encoding";
        case WavErrc::empty_payload: return "empty payload";
    }
    return "unknown";
}

void validate(const Waveform& w) {
    if (w.sample_rate <= 0) throw DataError("waveform has non-positive sample rate");
    if (w.samples.empty()) throw DataError("waveform is empty");
    for (double s : w.samples) {
        if (!std::isfinite(s)) throw DataError("waveform contains a non-finite sample");
    }
}

Waveform read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw WavError(WavErrc::io, "cannot open " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                          std::istreambuf_iterator<char>());

    const std::string where = " in " + path.string();
    if (bytes.size() < 12 || !tag_is(bytes.data(), "RIFF") || !tag_is(bytes.data() + 8, "WAVE")) {
        throw WavError(WavErrc::malformed_header, "missing RIFF/WAVE preamble" + where);
    }

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    std::span<const std::uint8_t> payload;
    bool have_data = false;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const std::uint8_t* chunk = bytes.data() + pos;
        const std::uint32_t size = load<std::uint32_t>(chunk + 4);
        const std::size_t body = pos + 8;
        const std::size_t avail = bytes.size() - body;
        if (tag_is(chunk, "fmt ")) {
            if (size < 16 || size > avail) {
                throw WavError(WavErrc::malformed_header, "truncated fmt chunk" + where);
            }
            format = load<std::uint16_t>(chunk + 8);
            channels = load<std::uint16_t>(chunk + 10);
            rate = load<std::uint32_t>(chunk + 12);
            bits = load<std::uint16_t>(chunk + 22);
            if (format == kFormatExtensible) {
                if (size < 40) {
                    throw WavError(WavErrc::malformed_header, "truncated extensible fmt" + where);
                }
                format = load<std::uint16_t>(chunk + 32);  // first two bytes of the subformat GUID
            }
            have_fmt = true;
        } else if (tag_is(chunk, "data")) {
            // Some writers leave the size unset on streamed output; clamp to the file.
            payload = std::span<const std::uint8_t>(bytes.data() + body, std::min<std::size_t>(size, avail));
            have_data = true;
        }
        pos = body + size + (size & 1u);
    }

    if (!have_fmt) throw WavError(WavErrc::malformed_header, "no fmt chunk" + where);
    if (!have_data) throw WavError(WavErrc::malformed_header, "no data chunk" + where);
    if (rate == 0) throw WavError(WavErrc::malformed_header, "zero sample rate" + where);
    if (channels != 1 && channels != 2) {
        throw WavError(WavErrc::unsupported_encoding,
                       std::to_string(channels) + " channels" + where);
    }
    const bool pcm16 = format == kFormatPcm && bits == 16;
    const bool f32 = format == kFormatFloat && bits == 32;
    if (!pcm16 && !f32) {
        throw WavError(WavErrc::unsupported_encoding,
                       "format " + std::to_string(format) + " with " + std::to_string(bits) +
                           " bits" + where);
    }

    const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
    const std::size_t frames = payload.size() / frame_bytes;
    if (frames == 0) throw WavError(WavErrc::empty_payload, "no sample frames" + where);

    Waveform w;
    w.sample_rate = static_cast<int>(rate);
    w.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        const std::uint8_t* frame = payload.data() + i * frame_bytes;
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
            if (pcm16) {
                acc += load<std::int16_t>(frame + 2 * c) / 32768.0;
            } else {
                acc += load<float>(frame + 4 * c);
            }
        }
        w.samples[i] = acc / channels;
    }
    return w;
}

void write_wav(const Waveform& w, const std::filesystem::path& path) {
    validate(w);
    const auto n = w.samples.size();
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(n * 2);

    std::vector<std::uint8_t> out;
    out.reserve(44 + data_bytes);
    store_tag(out, "RIFF");
    store<std::uint32_t>(out, 36 + data_bytes);
    store_tag(out, "WAVE");
    store_tag(out, "fmt ");
    store<std::uint32_t>(out, 16);
    store<std::uint16_t>(out, kFormatPcm);
    store<std::uint16_t>(out, 1);
    store<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate));
    store<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
    store<std::uint16_t>(out, 2);
    store<std::uint16_t>(out, 16);
    store_tag(out, "data");
    store<std::uint32_t>(out, data_bytes);
    for (double s : w.samples) {
        const double code = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
        store<std::int16_t>(out, static_cast<std::int16_t>(code));
    }

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw WavError(WavErrc::io, "cannot open " + path.string() + " for writing");
    file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!file) throw WavError(WavErrc::io, "write failed for " + path.string());
}

Waveform resample(const Waveform& w, int target_rate) {
    if (target_rate <= 0) throw DataError("resample: target rate must be positive");
    validate(w);
    if (target_rate == w.sample_rate) return w;

    const double ratio = static_cast<double>(target_rate) / w.sample_rate;
    const auto out_len = static_cast<std::size_t>(
        std::max(1.0, std::round(static_cast<double>(w.samples.size()) * ratio)));
    const double step = static_cast<double>(w.sample_rate) / target_rate;
    const std::size_t last = w.samples.size() - 1;

    Waveform out;
    out.sample_rate = target_rate;
    out.samples.resize(out_len);
    for (std::size_t i = 0; i < out_len; ++i) {
        const double pos = static_cast<double>(i) * step;
        const auto left = std::min(static_cast<std::size_t>(pos), last);
        const std::size_t right = std::min(left + 1, last);
        const double frac = std::clamp(pos - static_cast<double>(left), 0.0, 1.0);
        out.samples[i] = w.samples[left] + frac * (w.samples[right] - w.samples[left]);
    }
    return out;
}

Waveform fix_length(const Waveform& w, std::size_t n_samples, FitMode mode, std::uint64_t seed) {
    if (n_samples == 0) throw DataError("fix_length: n_samples must be positive");
    if (w.samples.empty()) throw DataError("fix_length: empty waveform");

    const std::size_t len = w.samples.size();
    Waveform out;
    out.sample_rate = w.sample_rate;
    out.samples.resize(n_samples);
    if (len <= n_samples) {
        for (std::size_t i = 0; i < n_samples; ++i) out.samples[i] = w.samples[i % len];
        return out;
    }
    std::size_t start = 0;
    if (mode == FitMode::crop_random) {
        Rng rng(seed);
        start = static_cast<std::size_t>(rng.index(len - n_samples + 1));
    }
    std::copy_n(w.samples.begin() + static_cast<std::ptrdiff_t>(start), n_samples, out.samples.begin());
    return out;
}

}  // namespace mixforge::audio
