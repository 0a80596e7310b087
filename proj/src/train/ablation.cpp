#include <cmath>
#include <cstdio>
#include <sstream>

#include "mixforge/errors.hpp"
#include "mixforge/train_eval.hpp"

namespace mixforge::train {

std::vector<AblationVariant> ablation_variants() {
    return {
        {"P_base", {true, false, false}},
        {"P_fre", {false, true, false}},
        {"P_tex", {false, false, true}},
        {"P_tex+P_base", {true, false, true}},
        {"P_fre+P_base", {true, true, false}},
        {"P_tex+P_fre", {false, true, true}},
        {"P_base+P_fre+P_tex", {true, true, true}},
    };
}

namespace {

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double eval_eer(const model::PromptModel<float>& m, std::span<const Sample> eval) {
    const auto scored = score_samples(m, eval);
    std::vector<double> s;
    std::vector<int> l;
    for (const auto& r : scored) {
        s.push_back(r.score);
        l.push_back(r.label);
    }
    return compute_eer(s, l).eer;
}

void set_directions(AblationTable& t) {
    const AblationRow* base = nullptr;
    const AblationRow* full = nullptr;
    for (const auto& r : t.rows) {
        if (r.streams.count() == 1 && r.streams.base) base = &r;
        if (r.streams.count() == 3) full = &r;
    }
    t.fg_directional = base && full && full->fg_mean <= base->fg_mean;
    t.bg_directional = base && full && full->bg_mean <= base->bg_mean;
}

std::string join(const std::vector<double>& v) {
    std::string s;
    char buf[32];
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", v[i]);
        s += (i ? ";" : "") + std::string(buf);
    }
    return s;
}

template <typename T, typename F>
std::vector<T> split_list(const std::string& s, F convert) {
    std::vector<T> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ';')) out.push_back(convert(item));
    return out;
}

}  // namespace

AblationTable run_ablation(const AblationData& data, const model::ModelConfig& base_model,
                           const TrainConfig& base_train, std::span<const std::uint64_t> seeds,
                           const AblationProgress& progress) {
    if (seeds.empty()) throw UsageError("ablation needs at least one seed");
    AblationTable table;
    for (const auto& variant : ablation_variants()) {
        AblationRow row;
        row.variant = variant.name;
        row.streams = variant.streams;
        row.seeds.assign(seeds.begin(), seeds.end());
        for (Task task : {Task::foreground, Task::background}) {
            const auto& tr = task == Task::foreground ? data.fg_train : data.bg_train;
            const auto& dev = task == Task::foreground ? data.fg_dev : data.bg_dev;
            const auto& ev = task == Task::foreground ? data.fg_eval : data.bg_eval;
            for (auto seed : seeds) {
                auto mc = base_model;
                mc.streams = variant.streams;
                mc.init_seed = seed;
                auto tc = base_train;
                tc.task = task;
                tc.seed = seed;
                model::PromptModel<float> m(mc);
                train(m, tr, dev, tc);
                const double eer = eval_eer(m, ev);
                (task == Task::foreground ? row.fg_eers : row.bg_eers).push_back(eer);
                if (progress) progress(variant.name, task, seed, eer);
            }
        }
        row.fg_mean = mean_of(row.fg_eers);
        row.bg_mean = mean_of(row.bg_eers);
        table.rows.push_back(std::move(row));
    }
    set_directions(table);
    return table;
}

std::string ablation_csv(const AblationTable& t) {
    std::ostringstream out;
    out << "variant,base,fre,tex,foreground_mean_eer,background_mean_eer,seeds,foreground_eers,background_eers\n";
    char buf[64];
    for (const auto& r : t.rows) {
        std::string seeds;
        for (std::size_t i = 0; i < r.seeds.size(); ++i) seeds += (i ? ";" : "") + std::to_string(r.seeds[i]);
        out << r.variant << ',' << r.streams.base << ',' << r.streams.fre << ',' << r.streams.tex << ',';
        std::snprintf(buf, sizeof buf, "%.17g,%.17g", r.fg_mean, r.bg_mean);
        out << buf << ',' << seeds << ',' << join(r.fg_eers) << ',' << join(r.bg_eers) << '\n';
    }
    return out.str();
}

AblationTable parse_ablation_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) ||
        line != "variant,base,fre,tex,foreground_mean_eer,background_mean_eer,seeds,foreground_eers,background_eers") {
        throw DataError("ablation CSV has an unexpected header");
    }
    AblationTable t;
    auto to_double = [](const std::string& s) {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw DataError("bad number '" + s + "' in ablation CSV");
        return v;
    };
    auto to_flag = [](const std::string& s) {
        if (s != "0" && s != "1") throw DataError("bad stream flag '" + s + "' in ablation CSV");
        return s == "1";
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string item;
        while (std::getline(ls, item, ',')) f.push_back(item);
        if (f.size() != 9) throw DataError("ablation CSV row needs 9 fields: " + line);
        try {
            AblationRow r;
            r.variant = f[0];
            r.streams = {to_flag(f[1]), to_flag(f[2]), to_flag(f[3])};
            r.fg_mean = to_double(f[4]);
            r.bg_mean = to_double(f[5]);
            r.seeds = split_list<std::uint64_t>(f[6], [](const std::string& s) { return std::stoull(s); });
            r.fg_eers = split_list<double>(f[7], to_double);
            r.bg_eers = split_list<double>(f[8], to_double);
            if (r.fg_eers.size() != r.seeds.size() || r.bg_eers.size() != r.seeds.size()) {
                throw DataError("ablation CSV row '" + r.variant + "' has mismatched per-seed lists");
            }
            t.rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw DataError("malformed ablation CSV row: " + line);
        }
    }
    set_directions(t);
    return t;
}

std::string ablation_table_text(const AblationTable& t) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-22s %12s %12s   per-seed (fg | bg)\n", "variant", "foreground", "background");
    out << line;
    for (const auto& r : t.rows) {
        std::string per;
        for (std::size_t i = 0; i < r.seeds.size(); ++i) {
            char buf[48];
            std::snprintf(buf, sizeof buf, "%s%.2f", i ? " " : "", 100.0 * r.fg_eers[i]);
            per += buf;
        }
        per += " |";
        for (std::size_t i = 0; i < r.seeds.size(); ++i) {
            char buf[48];
            std::snprintf(buf, sizeof buf, " %.2f", 100.0 * r.bg_eers[i]);
            per += buf;
        }
        std::snprintf(line, sizeof line, "%-22s %11.2f%% %11.2f%%   %s\n", r.variant.c_str(), 100.0 * r.fg_mean,
                      100.0 * r.bg_mean, per.c_str());
        out << line;
    }
    out << "full <= base-only: foreground " << (t.fg_directional ? "yes" : "no") << ", background "
        << (t.bg_directional ? "yes" : "no") << '\n';
    return out.str();
}

}  // namespace mixforge::train
