#include <fstream>
#include <json.hpp>

#include "mixforge/errors.hpp"
#include "mixforge/mix_engine.hpp"

namespace mixforge::mix {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

ojson label_or_null(const std::optional<Authenticity>& a) {
    return a ? ojson(to_string(*a)) : ojson(nullptr);
}

ojson number_or_null(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

std::optional<Authenticity> read_label(const ojson& j, const char* key) {
    if (!j.contains(key)) throw DataError(std::string("manifest row lacks field '") + key + "'");
    const auto& v = j.at(key);
    if (v.is_null()) return std::nullopt;
    return parse_authenticity(v.get<std::string>());
}

std::optional<double> read_number(const ojson& j, const char* key) {
    if (!j.contains(key)) throw DataError(std::string("manifest row lacks field '") + key + "'");
    const auto& v = j.at(key);
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
}

ojson entry_json(const SourceEntry& e) {
    return ojson{{"id", e.id},
                 {"path", e.path.generic_string()},
                 {"role", to_string(e.role)},
                 {"authenticity", to_string(e.authenticity)},
                 {"category", to_string(e.category)}};
}

SourceEntry entry_from(const ojson& j) {
    SourceEntry e;
    e.id = j.at("id").get<std::string>();
    e.path = j.at("path").get<std::string>();
    e.role = parse_role(j.at("role").get<std::string>());
    e.authenticity = parse_authenticity(j.at("authenticity").get<std::string>());
    e.category = parse_category(j.at("category").get<std::string>());
    return e;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

std::string to_json(const MixManifest& m) {
    ojson j;
    j["split"] = to_string(m.split);
    j["seed"] = m.seed;
    j["mix_ratio"] = m.mix_ratio;
    j["snr_set"] = m.snr_set;
    auto& mixes = j["mixtures"] = ojson::array();
    for (const auto& s : m.mixtures) {
        mixes.push_back(ojson{{"fg_id", s.fg_id},
                              {"bg_id", s.bg_id},
                              {"target_snr_db", s.target_snr_db},
                              {"fg_label", to_string(s.fg_label)},
                              {"bg_label", to_string(s.bg_label)},
                              {"pair_index", s.pair_index}});
    }
    auto& fg = j["foreground"] = ojson::array();
    for (const auto& e : m.foreground) fg.push_back(entry_json(e));
    auto& bg = j["background"] = ojson::array();
    for (const auto& e : m.background) bg.push_back(entry_json(e));
    return j.dump(2) + "\n";
}

MixManifest manifest_from_json(const std::string& text) {
    try {
        const auto j = ojson::parse(text);
        MixManifest m;
        m.split = parse_split(j.at("split").get<std::string>());
        m.seed = j.at("seed").get<std::uint64_t>();
        m.mix_ratio = j.at("mix_ratio").get<std::size_t>();
        m.snr_set = j.at("snr_set").get<std::vector<double>>();
        for (const auto& s : j.at("mixtures")) {
            MixSpec spec;
            spec.fg_id = s.at("fg_id").get<std::string>();
            spec.bg_id = s.at("bg_id").get<std::string>();
            spec.target_snr_db = s.at("target_snr_db").get<double>();
            spec.fg_label = parse_authenticity(s.at("fg_label").get<std::string>());
            spec.bg_label = parse_authenticity(s.at("bg_label").get<std::string>());
            spec.pair_index = s.at("pair_index").get<std::size_t>();
            m.mixtures.push_back(std::move(spec));
        }
        for (const auto& e : j.at("foreground")) m.foreground.push_back(entry_from(e));
        for (const auto& e : j.at("background")) m.background.push_back(entry_from(e));
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed plan: ") + e.what());
    }
}

std::string to_jsonl_line(const ManifestRow& row) {
    const ojson j{{"utt_id", row.utt_id},
                  {"path", row.path},
                  {"kind", to_string(row.kind)},
                  {"fg_label", label_or_null(row.fg_label)},
                  {"bg_label", label_or_null(row.bg_label)},
                  {"snr_db", number_or_null(row.snr_db)},
                  {"peak_rescale", number_or_null(row.peak_rescale)},
                  {"split", to_string(row.split)}};
    return j.dump();
}

ManifestRow parse_jsonl_line(const std::string& line) {
    try {
        const auto j = ojson::parse(line);
        ManifestRow r;
        r.utt_id = j.at("utt_id").get<std::string>();
        r.path = j.at("path").get<std::string>();
        r.kind = parse_row_kind(j.at("kind").get<std::string>());
        r.fg_label = read_label(j, "fg_label");
        r.bg_label = read_label(j, "bg_label");
        r.snr_db = read_number(j, "snr_db");
        r.peak_rescale = read_number(j, "peak_rescale");
        r.split = parse_split(j.at("split").get<std::string>());
        if (!r.fg_label && !r.bg_label) throw DataError("manifest row '" + r.utt_id + "' carries no label");
        if (r.kind == RowKind::mixed && (!r.fg_label || !r.bg_label || !r.snr_db)) {
            throw DataError("mixed row '" + r.utt_id + "' needs fg_label, bg_label and snr_db");
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed manifest row: ") + e.what());
    }
}

void write_manifest_jsonl(std::span<const ManifestRow> rows, const fs::path& path) {
    std::string text;
    for (const auto& r : rows) text += to_jsonl_line(r) + "\n";
    write_text(path, text);
}

std::vector<ManifestRow> read_manifest_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    std::vector<ManifestRow> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        rows.push_back(parse_jsonl_line(line));
    }
    return rows;
}

std::vector<ManifestRow> build_dataset(const MixManifest& manifest, const fs::path& out_dir) {
    const std::string split = to_string(manifest.split);
    const fs::path split_dir = out_dir / split;
    ensure_dir(split_dir / "mixed");
    ensure_dir(split_dir / "single");

    for (const auto& e : manifest.foreground) {
        if (!fs::exists(e.path)) throw DataError("missing source file " + e.path.string());
    }
    for (const auto& e : manifest.background) {
        if (!fs::exists(e.path)) throw DataError("missing source file " + e.path.string());
    }

    std::vector<ManifestRow> rows;
    rows.reserve(manifest.mixtures.size() + manifest.foreground.size() + manifest.background.size());

    std::string cached_fg_id;
    audio::Waveform fg;
    for (std::size_t i = 0; i < manifest.mixtures.size(); ++i) {
        const auto& spec = manifest.mixtures[i];
        const auto& fg_entry = manifest.source(spec.fg_id);
        const auto& bg_entry = manifest.source(spec.bg_id);
        if (fg_entry.authenticity != spec.fg_label || bg_entry.authenticity != spec.bg_label) {
            throw DataError("mixture " + std::to_string(i) + " labels disagree with the source pools");
        }
        if (cached_fg_id != spec.fg_id) {
            fg = audio::read_wav(fg_entry.path);
            cached_fg_id = spec.fg_id;
        }
        const auto bg = audio::read_wav(bg_entry.path);
        const auto result = mix_components(fg, bg, spec.target_snr_db);

        char name[32];
        std::snprintf(name, sizeof name, "mix_%05zu", i);
        ManifestRow row;
        row.utt_id = split + "_" + name;
        row.path = split + "/mixed/" + name + ".wav";
        row.kind = RowKind::mixed;
        row.fg_label = spec.fg_label;
        row.bg_label = spec.bg_label;
        row.snr_db = spec.target_snr_db;
        row.peak_rescale = result.peak_rescale;
        row.split = manifest.split;
        audio::write_wav(result.mixture, out_dir / row.path);
        rows.push_back(std::move(row));
    }

    auto emit_single = [&](const SourceEntry& e) {
        ManifestRow row;
        row.utt_id = split + "_single_" + e.id;
        row.path = split + "/single/" + e.id + ".wav";
        row.kind = RowKind::single;
        if (e.role == Role::foreground) {
            row.fg_label = e.authenticity;
        } else {
            row.bg_label = e.authenticity;
        }
        row.split = manifest.split;
        std::error_code ec;
        fs::copy_file(e.path, out_dir / row.path, fs::copy_options::overwrite_existing, ec);
        if (ec) throw DataError("cannot copy " + e.path.string() + ": " + ec.message());
        rows.push_back(std::move(row));
    };
    for (const auto& e : manifest.foreground) emit_single(e);
    for (const auto& e : manifest.background) emit_single(e);

    write_manifest_jsonl(rows, split_dir / "manifest.jsonl");
    write_text(split_dir / "plan.json", to_json(manifest));
    return rows;
}

std::vector<ManifestRow> load_dataset(const fs::path& root) {
    std::vector<ManifestRow> rows;
    bool any = false;
    for (auto split : kAllSplits) {
        const auto path = root / to_string(split) / "manifest.jsonl";
        if (!fs::exists(path)) continue;
        any = true;
        auto part = read_manifest_jsonl(path);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    if (!any) throw DataError("no manifest.jsonl found under " + root.string());
    return rows;
}

}  // namespace mixforge::mix
