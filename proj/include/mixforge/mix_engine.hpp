#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mixforge/audio_io.hpp"

namespace mixforge::mix {

enum class Role { foreground, background };
enum class Authenticity { real, fake };
enum class Category { speech, music, environment };
enum class Split { train, dev, eval };
enum class RowKind { single, mixed };

const char* to_string(Role v);
const char* to_string(Authenticity v);
const char* to_string(Category v);
const char* to_string(Split v);
const char* to_string(RowKind v);
Role parse_role(const std::string& s);
Authenticity parse_authenticity(const std::string& s);
Category parse_category(const std::string& s);
Split parse_split(const std::string& s);
RowKind parse_row_kind(const std::string& s);

inline constexpr std::array<Split, 3> kAllSplits{Split::train, Split::dev, Split::eval};
inline const std::vector<double> kDefaultSnrSet{-5, 0, 5, 10, 15, 20};
inline constexpr std::size_t kDefaultMixRatio = 4;
inline constexpr double kSilenceRms = 1e-8;

struct SourceEntry {
    std::string id;
    std::filesystem::path path;
    Role role = Role::foreground;
    Authenticity authenticity = Authenticity::real;
    Category category = Category::speech;
};

// Unique ids, every entry has the expected role, foreground entries are speech
// and background entries are not.
void validate_pool(std::span<const SourceEntry> pool, Role role);

// CSV with header id,path,role,authenticity,category. Relative paths are
// resolved against the CSV's directory on read and written as given.
std::vector<SourceEntry> read_pool_csv(const std::filesystem::path& csv);
void write_pool_csv(std::span<const SourceEntry> pool, const std::filesystem::path& csv);

// ---- toy corpus --------------------------------------------------------------

struct ToyCorpusConfig {
    std::size_t fg_real = 2;
    std::size_t fg_fake = 2;
    std::size_t bg_real = 2;
    std::size_t bg_fake = 2;
    int sample_rate = audio::kCanonicalRate;
    double fg_min_seconds = 3.0;
    double fg_max_seconds = 5.0;
    double bg_min_seconds = 2.0;
    double bg_max_seconds = 6.0;
    std::string id_prefix;
};

struct SourcePools {
    std::vector<SourceEntry> foreground;
    std::vector<SourceEntry> background;
};

// Artifact carried by synthetic "fake" sources: an inharmonic line plus 4-bit
// amplitude quantisation.
inline constexpr double kForegroundArtifactHz = 6500.0;
inline constexpr double kBackgroundArtifactHz = 3700.0;
inline constexpr int kArtifactBits = 4;

// Deterministic synthetic source. Speech-like harmonic tone for foregrounds;
// a chord texture (music) or coloured noise (environment) for backgrounds.
audio::Waveform synthesize_source(Role role, Authenticity auth, Category category, double seconds,
                                  int sample_rate, std::uint64_t seed);

// Writes WAVs under out_dir/{fg,bg}/ and returns pools whose paths point at them.
SourcePools generate_toy_corpus(const ToyCorpusConfig& config, std::uint64_t seed,
                                const std::filesystem::path& out_dir);

// ---- pairing -----------------------------------------------------------------

struct MixSpec {
    std::string fg_id;
    std::string bg_id;
    double target_snr_db = 0.0;
    Authenticity fg_label = Authenticity::real;
    Authenticity bg_label = Authenticity::real;
    std::size_t pair_index = 0;
};

enum class Combination { rf_rb, ff_rb, rf_fb, ff_fb };
const char* to_string(Combination c);
Combination combination_of(Authenticity fg, Authenticity bg);

struct MixManifest {
    Split split = Split::train;
    std::uint64_t seed = 0;
    std::size_t mix_ratio = kDefaultMixRatio;
    std::vector<double> snr_set = kDefaultSnrSet;
    std::vector<MixSpec> mixtures;
    // Every pool entry is also emitted unmixed as a single-source row.
    std::vector<SourceEntry> foreground;
    std::vector<SourceEntry> background;

    std::array<std::size_t, 4> combination_counts() const;
    const SourceEntry& source(const std::string& id) const;
};

struct PairingOptions {
    std::size_t mix_ratio = kDefaultMixRatio;
    std::vector<double> snr_set = kDefaultSnrSet;
    // Split each foreground's backgrounds evenly between real and fake when
    // the pool allows it, so the four authenticity combinations stay balanced.
    bool balance_authenticity = true;
};

MixManifest plan_pairs(std::span<const SourceEntry> fg_pool, std::span<const SourceEntry> bg_pool,
                       const PairingOptions& options, std::uint64_t seed, Split split = Split::train);

// JSON round trip for the plan (written next to the dataset as plan.json).
std::string to_json(const MixManifest& m);
MixManifest manifest_from_json(const std::string& text);

// ---- mixing ------------------------------------------------------------------

double rms(std::span<const double> x);

// Gain for the background so that 20 log10(fg_rms / (gain * bg_rms)) = snr_db.
double snr_gain(double fg_rms, double bg_rms, double snr_db);

// Loops the background end to end and truncates to fg_len samples.
audio::Waveform align_background(const audio::Waveform& bg, std::size_t fg_len);

struct MixResult {
    audio::Waveform mixture;
    audio::Waveform scaled_background;  // gain * aligned background, before any peak rescale
    double gain = 1.0;
    double peak_rescale = 1.0;          // factor applied to the whole mixture, 1 when none
};

MixResult mix_components(const audio::Waveform& fg, const audio::Waveform& bg, double snr_db);
audio::Waveform mix(const audio::Waveform& fg, const audio::Waveform& bg, const MixSpec& spec);

double measure_snr(const audio::Waveform& fg, const audio::Waveform& scaled_bg);

// ---- dataset -----------------------------------------------------------------

struct ManifestRow {
    std::string utt_id;
    std::string path;  // relative to the dataset root
    RowKind kind = RowKind::mixed;
    std::optional<Authenticity> fg_label;
    std::optional<Authenticity> bg_label;
    std::optional<double> snr_db;
    std::optional<double> peak_rescale;
    Split split = Split::train;
};

std::string to_jsonl_line(const ManifestRow& row);
ManifestRow parse_jsonl_line(const std::string& line);

// Writes out_dir/<split>/{mixed,single}/*.wav, out_dir/<split>/manifest.jsonl
// and out_dir/<split>/plan.json. Rows come back in manifest order: mixtures
// first (plan order), then single-source foregrounds, then backgrounds.
std::vector<ManifestRow> build_dataset(const MixManifest& manifest, const std::filesystem::path& out_dir);

std::vector<ManifestRow> read_manifest_jsonl(const std::filesystem::path& path);
void write_manifest_jsonl(std::span<const ManifestRow> rows, const std::filesystem::path& path);

// All rows of every split present under a dataset root.
std::vector<ManifestRow> load_dataset(const std::filesystem::path& root);

}  // namespace mixforge::mix
