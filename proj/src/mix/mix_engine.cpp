#include "mixforge/mix_engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "mixforge/errors.hpp"
#include "mixforge/rng.hpp"

namespace mixforge::mix {

namespace {

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const std::array<std::pair<const char*, E>, N>& table, const char* what) {
    for (const auto& [name, value] : table) {
        if (s == name) return value;
    }
    throw DataError(std::string("unknown ") + what + " '" + s + "'");
}

constexpr std::array<std::pair<const char*, Role>, 2> kRoles{{{"foreground", Role::foreground},
                                                              {"background", Role::background}}};
constexpr std::array<std::pair<const char*, Authenticity>, 2> kAuth{{{"real", Authenticity::real},
                                                                     {"fake", Authenticity::fake}}};
constexpr std::array<std::pair<const char*, Category>, 3> kCategories{
    {{"speech", Category::speech}, {"music", Category::music}, {"environment", Category::environment}}};
constexpr std::array<std::pair<const char*, Split>, 3> kSplits{
    {{"train", Split::train}, {"dev", Split::dev}, {"eval", Split::eval}}};
constexpr std::array<std::pair<const char*, RowKind>, 2> kKinds{{{"single", RowKind::single},
                                                                 {"mixed", RowKind::mixed}}};

template <typename E, std::size_t N>
const char* name_of(E v, const std::array<std::pair<const char*, E>, N>& table) {
    for (const auto& [name, value] : table) {
        if (v == value) return name;
    }
    return "?";
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

const char* to_string(Role v) { return name_of(v, kRoles); }
const char* to_string(Authenticity v) { return name_of(v, kAuth); }
const char* to_string(Category v) { return name_of(v, kCategories); }
const char* to_string(Split v) { return name_of(v, kSplits); }
const char* to_string(RowKind v) { return name_of(v, kKinds); }
Role parse_role(const std::string& s) { return parse_enum(s, kRoles, "role"); }
Authenticity parse_authenticity(const std::string& s) { return parse_enum(s, kAuth, "authenticity"); }
Category parse_category(const std::string& s) { return parse_enum(s, kCategories, "category"); }
Split parse_split(const std::string& s) { return parse_enum(s, kSplits, "split"); }
RowKind parse_row_kind(const std::string& s) { return parse_enum(s, kKinds, "row kind"); }

const char* to_string(Combination c) {
    switch (c) {
        case Combination::rf_rb: return "RF-RB";
        case Combination::ff_rb: return "FF-RB";
        case Combination::rf_fb: return "RF-FB";
        case Combination::ff_fb: return "FF-FB";
    }
    return "?";
}

Combination combination_of(Authenticity fg, Authenticity bg) {
    if (fg == Authenticity::real) return bg == Authenticity::real ? Combination::rf_rb : Combination::rf_fb;
    return bg == Authenticity::real ? Combination::ff_rb : Combination::ff_fb;
}

void validate_pool(std::span<const SourceEntry> pool, Role role) {
    std::set<std::string> ids;
    for (const auto& e : pool) {
        if (e.id.empty()) throw DataError("pool entry with empty id");
        if (!ids.insert(e.id).second) throw DataError("duplicate source id '" + e.id + "'");
        if (e.role != role) {
            throw DataError("source '" + e.id + "' has role " + to_string(e.role) + ", expected " + to_string(role));
        }
        const bool speech = e.category == Category::speech;
        if ((role == Role::foreground) != speech) {
            throw DataError("source '" + e.id + "': role " + to_string(e.role) + " inconsistent with category " +
                            to_string(e.category));
        }
    }
}

std::vector<SourceEntry> read_pool_csv(const std::filesystem::path& csv) {
    std::ifstream in(csv);
    if (!in) throw DataError("cannot open pool listing " + csv.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty pool listing " + csv.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "id,path,role,authenticity,category") {
        throw DataError("pool listing " + csv.string() + " has unexpected header '" + line + "'");
    }
    const auto base = csv.parent_path();
    std::vector<SourceEntry> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 5) {
            throw DataError(csv.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
        }
        SourceEntry e;
        e.id = f[0];
        e.path = f[1];
        if (e.path.is_relative()) e.path = base / e.path;
        e.role = parse_role(f[2]);
        e.authenticity = parse_authenticity(f[3]);
        e.category = parse_category(f[4]);
        out.push_back(std::move(e));
    }
    return out;
}

void write_pool_csv(std::span<const SourceEntry> pool, const std::filesystem::path& csv) {
    std::ofstream out(csv, std::ios::binary);
    if (!out) throw DataError("cannot write pool listing " + csv.string());
    out << "id,path,role,authenticity,category\n";
    for (const auto& e : pool) {
        const auto p = e.path.generic_string();
        if (e.id.find(',') != std::string::npos || p.find(',') != std::string::npos) {
            throw DataError("pool entry '" + e.id + "' contains a comma");
        }
        out << e.id << ',' << p << ',' << to_string(e.role) << ',' << to_string(e.authenticity) << ','
            << to_string(e.category) << '\n';
    }
    if (!out) throw DataError("failed writing " + csv.string());
}

// ---- pairing -----------------------------------------------------------------

std::array<std::size_t, 4> MixManifest::combination_counts() const {
    std::array<std::size_t, 4> counts{};
    for (const auto& m : mixtures) ++counts[static_cast<std::size_t>(combination_of(m.fg_label, m.bg_label))];
    return counts;
}

const SourceEntry& MixManifest::source(const std::string& id) const {
    for (const auto* pool : {&foreground, &background}) {
        for (const auto& e : *pool) {
            if (e.id == id) return e;
        }
    }
    throw DataError("manifest references unknown source '" + id + "'");
}

MixManifest plan_pairs(std::span<const SourceEntry> fg_pool, std::span<const SourceEntry> bg_pool,
                       const PairingOptions& options, std::uint64_t seed, Split split) {
    if (fg_pool.empty() || bg_pool.empty()) throw DataError("plan_pairs: source pools must be non-empty");
    if (options.mix_ratio == 0) throw UsageError("mix_ratio must be at least 1");
    if (bg_pool.size() < options.mix_ratio) {
        throw DataError("plan_pairs: " + std::to_string(bg_pool.size()) + " backgrounds cannot supply mix_ratio " +
                        std::to_string(options.mix_ratio) + " distinct partners");
    }
    if (options.snr_set.empty()) throw UsageError("snr_set must be non-empty");
    validate_pool(fg_pool, Role::foreground);
    validate_pool(bg_pool, Role::background);

    MixManifest m;
    m.split = split;
    m.seed = seed;
    m.mix_ratio = options.mix_ratio;
    m.snr_set = options.snr_set;
    m.foreground.assign(fg_pool.begin(), fg_pool.end());
    m.background.assign(bg_pool.begin(), bg_pool.end());

    std::vector<std::size_t> real_bg, fake_bg, all_bg;
    for (std::size_t i = 0; i < bg_pool.size(); ++i) {
        (bg_pool[i].authenticity == Authenticity::real ? real_bg : fake_bg).push_back(i);
        all_bg.push_back(i);
    }

    Rng rng(mix_seed(seed, "plan_pairs"));
    const std::size_t k = options.mix_ratio;
    // Partial Fisher-Yates: the first `take` entries of a fresh permutation.
    auto draw = [&rng](std::vector<std::size_t> pool, std::size_t take) {
        for (std::size_t i = 0; i < take; ++i) {
            const auto j = i + rng.index(pool.size() - i);
            std::swap(pool[i], pool[j]);
        }
        pool.resize(take);
        return pool;
    };

    for (std::size_t f = 0; f < fg_pool.size(); ++f) {
        std::vector<std::size_t> chosen;
        if (options.balance_authenticity) {
            std::size_t n_real = k / 2 + ((k % 2 == 1 && f % 2 == 0) ? 1 : 0);
            n_real = std::min(n_real, real_bg.size());
            std::size_t n_fake = k - n_real;
            if (n_fake > fake_bg.size()) {
                n_fake = fake_bg.size();
                n_real = k - n_fake;
            }
            chosen = draw(real_bg, n_real);
            const auto fakes = draw(fake_bg, n_fake);
            chosen.insert(chosen.end(), fakes.begin(), fakes.end());
            rng.shuffle(chosen.begin(), chosen.end());
        } else {
            chosen = draw(all_bg, k);
        }
        for (std::size_t j = 0; j < k; ++j) {
            const auto& fg = fg_pool[f];
            const auto& bg = bg_pool[chosen[j]];
            MixSpec s;
            s.fg_id = fg.id;
            s.bg_id = bg.id;
            s.target_snr_db = options.snr_set[rng.index(options.snr_set.size())];
            s.fg_label = fg.authenticity;
            s.bg_label = bg.authenticity;
            s.pair_index = j;
            m.mixtures.push_back(std::move(s));
        }
    }
    return m;
}

// ---- mixing ------------------------------------------------------------------

double rms(std::span<const double> x) {
    if (x.empty()) return 0.0;
    long double acc = 0.0L;
    for (double v : x) acc += static_cast<long double>(v) * v;
    return static_cast<double>(std::sqrt(acc / static_cast<long double>(x.size())));
}

double snr_gain(double fg_rms, double bg_rms, double snr_db) {
    if (!(fg_rms > kSilenceRms) || !(bg_rms > kSilenceRms)) {
        throw DataError("degenerate source: rms at or below 1e-8");
    }
    if (!std::isfinite(snr_db)) throw DataError("snr_db must be finite");
    return (fg_rms / bg_rms) * std::pow(10.0, -snr_db / 20.0);
}

audio::Waveform align_background(const audio::Waveform& bg, std::size_t fg_len) {
    if (bg.samples.empty()) throw DataError("align_background: empty background");
    audio::Waveform out;
    out.sample_rate = bg.sample_rate;
    out.samples.resize(fg_len);
    const std::size_t n = bg.samples.size();
    for (std::size_t i = 0; i < fg_len; i += n) {
        const std::size_t len = std::min(n, fg_len - i);
        std::copy_n(bg.samples.begin(), len, out.samples.begin() + static_cast<std::ptrdiff_t>(i));
    }
    return out;
}

MixResult mix_components(const audio::Waveform& fg, const audio::Waveform& bg, double snr_db) {
    if (fg.sample_rate != bg.sample_rate) {
        throw DataError("mix: sample rates differ (" + std::to_string(fg.sample_rate) + " vs " +
                        std::to_string(bg.sample_rate) + ")");
    }
    if (fg.samples.empty()) throw DataError("mix: empty foreground");
    auto aligned = align_background(bg, fg.size());

    MixResult r;
    r.gain = snr_gain(rms(fg.samples), rms(aligned.samples), snr_db);
    r.scaled_background = std::move(aligned);
    for (auto& v : r.scaled_background.samples) v *= r.gain;

    r.mixture.sample_rate = fg.sample_rate;
    r.mixture.samples.resize(fg.size());
    double peak = 0.0;
    for (std::size_t i = 0; i < fg.size(); ++i) {
        r.mixture.samples[i] = fg.samples[i] + r.scaled_background.samples[i];
        peak = std::max(peak, std::abs(r.mixture.samples[i]));
    }
    if (peak > 1.0) {
        r.peak_rescale = 1.0 / peak;
        for (auto& v : r.mixture.samples) v *= r.peak_rescale;
    }
    return r;
}

audio::Waveform mix(const audio::Waveform& fg, const audio::Waveform& bg, const MixSpec& spec) {
    return mix_components(fg, bg, spec.target_snr_db).mixture;
}

double measure_snr(const audio::Waveform& fg, const audio::Waveform& scaled_bg) {
    if (fg.size() != scaled_bg.size()) throw DataError("measure_snr: lengths differ");
    const double a = rms(fg.samples);
    const double b = rms(scaled_bg.samples);
    if (!(a > kSilenceRms) || !(b > kSilenceRms)) throw DataError("measure_snr: silent input");
    return 20.0 * std::log10(a / b);
}

}  // namespace mixforge::mix
