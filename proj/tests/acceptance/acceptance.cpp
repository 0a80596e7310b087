// Runs the nine acceptance criteria and prints one PASS/FAIL line for each.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mixforge/audio_io.hpp"
#include "mixforge/cli.hpp"
#include "mixforge/mix_engine.hpp"
#include "mixforge/prompt_model.hpp"
#include "mixforge/rng.hpp"
#include "mixforge/signal_analysis.hpp"
#include "mixforge/train_eval.hpp"
#include "oracles.hpp"

using namespace mixforge;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

struct Options {
    fs::path work;
    std::size_t ablation_epochs = 5;
    std::string ablation_seeds = "1,2,3";
    std::set<int> only;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

int run_cli(const std::vector<std::string>& args, const fs::path& log_path, std::string* out_text = nullptr) {
    std::ostringstream out;
    std::ofstream log(log_path, std::ios::app);
    const int code = cli::run(args, out, log);
    if (out_text) *out_text = out.str();
    log << out.str();
    return code;
}

// ---- 1. SNR fidelity ---------------------------------------------------------

// 126 foregrounds x 4 = 504 mixtures.
mix::SourcePools snr_pools(const Options& o) {
    const auto dir = o.work / "snr_pools";
    if (fs::exists(dir / "foreground.csv") && fs::exists(dir / "background.csv")) {
        return {mix::read_pool_csv(dir / "foreground.csv"), mix::read_pool_csv(dir / "background.csv")};
    }
    mix::ToyCorpusConfig c;
    c.fg_real = c.fg_fake = 63;
    c.bg_real = c.bg_fake = 20;
    c.id_prefix = "snr_";
    return mix::generate_toy_corpus(c, 101, dir);
}

Verdict snr_fidelity(const Options& o) {
    const auto pools = snr_pools(o);
    const auto plan = mix::plan_pairs(pools.foreground, pools.background, {}, 7);

    std::map<std::string, audio::Waveform> cache;
    auto load = [&](const std::string& id) -> const audio::Waveform& {
        auto it = cache.find(id);
        if (it == cache.end()) it = cache.emplace(id, audio::read_wav(plan.source(id).path)).first;
        return it->second;
    };
    std::set<double> targets;
    std::size_t checked = 0, rescaled = 0;
    double worst = 0.0;
    for (const auto& spec : plan.mixtures) {
        targets.insert(spec.target_snr_db);
        const auto& fg = load(spec.fg_id);
        const auto r = mix::mix_components(fg, load(spec.bg_id), spec.target_snr_db);
        if (r.peak_rescale != 1.0) {
            ++rescaled;
            continue;
        }
        const double lib = mix::measure_snr(fg, r.scaled_background);
        const double ref = 20.0 * std::log10(oracle::rms(fg.samples) / oracle::rms(r.scaled_background.samples));
        worst = std::max({worst, std::abs(lib - spec.target_snr_db), std::abs(ref - spec.target_snr_db)});
        ++checked;
    }
    const bool ok = plan.mixtures.size() >= 500 && targets.size() == 6 && worst <= 0.1;
    return {ok, std::to_string(plan.mixtures.size()) + " mixtures over " + std::to_string(targets.size()) +
                    " targets, " + std::to_string(checked) + " checked (" + std::to_string(rescaled) +
                    " peak-rescaled), worst |error| " + fmt("%.2e", worst) + " dB"};
}

// ---- 2. pairing law ----------------------------------------------------------

Verdict pairing_law(const Options& o) {
    const auto pools = snr_pools(o);
    const auto& fg = pools.foreground;
    const auto plan = mix::manifest_from_json(mix::to_json(mix::plan_pairs(fg, pools.background, {}, 8)));
    std::map<std::string, std::vector<std::string>> per_fg;
    for (const auto& m : plan.mixtures) per_fg[m.fg_id].push_back(m.bg_id);
    std::size_t bad = 0;
    for (const auto& s : fg) {
        const auto& v = per_fg[s.id];
        if (v.size() != 4 || std::set<std::string>(v.begin(), v.end()).size() != 4) ++bad;
    }
    const bool ok = bad == 0 && per_fg.size() == fg.size() && plan.mix_ratio == 4;
    return {ok, std::to_string(fg.size()) + " foregrounds audited, " + std::to_string(bad) + " violations"};
}

// ---- 3. DSP identities -------------------------------------------------------

Verdict dsp_identities(const Options&) {
    double tkeo_worst = 0.0;
    for (double a : {0.1, 0.5, 1.0, 2.0, 5.0}) {
        for (double w : {0.05, 0.4, 1.0, 2.0, 3.0}) {
            for (double phi : {0.0, 0.7, 1.5, -2.0, 3.0}) {
                std::vector<double> x(512);
                for (std::size_t n = 0; n < x.size(); ++n) x[n] = a * std::cos(w * static_cast<double>(n) + phi);
                const auto psi = dsp::tkeo(x);
                const double want = a * a * std::sin(w) * std::sin(w);
                for (std::size_t n = 1; n + 1 < x.size(); ++n) tkeo_worst = std::max(tkeo_worst, std::abs(psi[n] - want));
            }
        }
    }

    double if_worst = 0.0;
    const std::size_t n_if = 4096, margin = 256;
    for (int k = 1; k <= 30; ++k) {
        const double w = 0.1 * k;
        std::vector<double> x(n_if);
        for (std::size_t n = 0; n < n_if; ++n) x[n] = std::cos(w * static_cast<double>(n));
        const auto f = dsp::instantaneous_frequency(dsp::instantaneous_phase(dsp::hilbert_analytic(x)));
        for (std::size_t n = margin; n + margin < n_if; ++n) if_worst = std::max(if_worst, std::abs(f[n] - w));
    }

    double neg_worst = 0.0;
    Rng rng(3);
    for (std::size_t n : {2u, 3u, 17u, 64u, 127u, 256u}) {
        std::vector<double> x(n);
        for (auto& v : x) v = rng.normal();
        const auto z = dsp::hilbert_analytic(x);
        std::vector<std::complex<double>> zc(n);
        for (std::size_t i = 0; i < n; ++i) zc[i] = {z.real[i], z.imag[i]};
        const auto spec = oracle::dft(zc);
        double total = 0.0, neg = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            total += std::norm(spec[k]);
            if (k > n / 2) neg += std::norm(spec[k]);
        }
        neg_worst = std::max(neg_worst, neg / total);
    }
    const bool ok = tkeo_worst <= 1e-9 && if_worst <= 0.01 && neg_worst <= 1e-6;
    return {ok, "(a) TKEO worst " + fmt("%.2e", tkeo_worst) + " over 125 tones; (b) IF worst " +
                    fmt("%.2e", if_worst) + " rad/sample over 30 tones; (c) negative-frequency share " +
                    fmt("%.2e", neg_worst)};
}

// ---- 4. gradient integrity ---------------------------------------------------

Verdict gradient_integrity(const Options&) {
    auto cfg = model::small_config(16, 16, 2, 2);
    ad::GradCheckOptions opt;
    opt.tolerance = 1e-3;
    double worst = 0.0;
    std::string worst_name;
    std::size_t groups = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        cfg.init_seed = seed;
        cfg.backbone_seed = 100 + seed;
        model::PromptModel<double> m(cfg);
        Rng rng(seed);
        std::vector<double> wave(cfg.input_samples);
        for (std::size_t i = 0; i < wave.size(); ++i) wave[i] = 0.3 * std::sin(0.07 * i) + 0.1 * rng.normal();
        const auto f = m.extract(wave);
        const double y = static_cast<double>(seed % 2);
        std::vector<ad::Tensor<double>> params;
        std::vector<std::string> names;
        for (const auto& p : m.parameters()) {
            if (!p.trainable) continue;
            params.push_back(p.tensor);
            names.push_back(p.name);
        }
        const auto reports = ad::grad_check_params(
            [&] { return train::bce_loss<double>(m.forward(f), std::span<const double>(&y, 1)); }, params, opt);
        for (std::size_t i = 0; i < reports.size(); ++i) {
            ++groups;
            if (reports[i].max_rel_error > worst) {
                worst = reports[i].max_rel_error;
                worst_name = names[i];
            }
        }
    }
    return {worst <= 1e-3, std::to_string(groups) + " parameter groups over 5 seeds, worst relative error " +
                               fmt("%.2e", worst) + " (" + worst_name + ")"};
}

// ---- 5 and 6. toy end-to-end with the freeze contract ------------------------

struct ToyRun {
    Verdict freeze;
    Verdict end_to_end;
};

ToyRun toy_end_to_end(const Options& o) {
    ToyRun r;
    const auto data = o.work / "data";
    const auto log = o.work / "toy.log";
    fs::remove_all(data);
    if (run_cli({"mix", "--out", data.string()}, log) != 0) {
        r.freeze = r.end_to_end = {false, "dataset generation failed, see " + log.string()};
        return r;
    }
    std::size_t train_mixed = 0, eval_mixed = 0;
    for (const auto& row : mix::load_dataset(data)) {
        if (row.kind != mix::RowKind::mixed) continue;
        if (row.split == mix::Split::train) ++train_mixed;
        if (row.split == mix::Split::eval) ++eval_mixed;
    }

    const auto run_dir = o.work / "runs" / "foreground";
    fs::remove_all(run_dir);
    const auto t0 = std::chrono::steady_clock::now();
    const int train_code = run_cli({"train", "--data", data.string(), "--out", run_dir.string()}, log);
    const int eval_code = train_code == 0
        ? run_cli({"eval", "--data", data.string(), "--checkpoint", (run_dir / "best.ckpt").string()}, log)
        : -1;
    const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
    if (train_code != 0 || eval_code != 0) {
        r.freeze = r.end_to_end = {false, "train/eval exited with " + std::to_string(train_code) + "/" +
                                              std::to_string(eval_code) + ", see " + log.string()};
        return r;
    }

    const auto ck = model::read_checkpoint(run_dir / "best.ckpt");
    const model::PromptModel<float> fresh(ck.config);
    const auto params = fresh.parameters();
    std::size_t frozen = 0, frozen_changed = 0, trainable_changed = 0;
    for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
        const auto& t = ck.tensors[i];
        const auto init = params.at(i).tensor.data();
        bool same = t.values.size() == init.size() && params[i].name == t.name;
        for (std::size_t j = 0; same && j < init.size(); ++j) {
            const float v = static_cast<float>(t.values[j]);
            same = std::memcmp(&v, &init[j], sizeof v) == 0;
        }
        if (t.trainable) {
            trainable_changed += !same;
        } else {
            ++frozen;
            frozen_changed += !same;
        }
    }
    r.freeze = {frozen > 0 && frozen_changed == 0 && trainable_changed > 0,
                std::to_string(frozen) + " frozen tensors, " + std::to_string(frozen_changed) +
                    " differ from initialisation; " + std::to_string(trainable_changed) + " trainable tensors moved"};

    std::vector<double> scores;
    std::vector<int> labels;
    std::istringstream in(slurp(run_dir / "eval" / "scores.csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (f.size() != 5) continue;
        labels.push_back(std::stoi(f[3]));
        scores.push_back(std::stod(f[4]));
    }
    const auto eer = oracle::eer_exhaustive(scores, labels).eer;
    const bool ok = train_mixed >= 400 && eval_mixed >= 200 && eer <= 0.05 && minutes <= 15.0;
    r.end_to_end = {ok, std::to_string(train_mixed) + " mixed train / " + std::to_string(eval_mixed) +
                            " mixed eval; foreground eval EER " + fmt("%.2f%%", 100.0 * eer) + " over " +
                            std::to_string(scores.size()) + " utterances; train+eval " + fmt("%.1f", minutes) +
                            " min"};
    return r;
}

// ---- 7. ablation harness -----------------------------------------------------

Verdict ablation(const Options& o) {
    const auto data = o.work / "data";
    const auto out = o.work / "runs" / "ablation";
    const auto log = o.work / "ablation.log";
    if (!fs::exists(data / "train" / "manifest.jsonl") && run_cli({"mix", "--out", data.string()}, log) != 0) {
        return {false, "dataset generation failed"};
    }
    const int code = run_cli({"ablate", "--data", data.string(), "--out", out.string(), "--seeds", o.ablation_seeds,
                              "--set", "epochs=" + std::to_string(o.ablation_epochs)},
                             log);
    if (code != 0) return {false, "ablate exited with " + std::to_string(code) + ", see " + log.string()};

    train::AblationTable t;
    try {
        t = train::parse_ablation_csv(slurp(out / "ablation.csv"));
    } catch (const std::exception& e) {
        return {false, std::string("ablation.csv does not parse: ") + e.what()};
    }
    const auto variants = train::ablation_variants();
    bool complete = t.rows.size() == variants.size();
    for (std::size_t i = 0; complete && i < t.rows.size(); ++i) {
        const auto& row = t.rows[i];
        complete = row.variant == variants[i].name && row.seeds.size() >= 3 && row.fg_eers.size() == row.seeds.size() &&
                   row.bg_eers.size() == row.seeds.size();
        for (double e : row.fg_eers) complete = complete && e >= 0.0 && e <= 1.0;
        for (double e : row.bg_eers) complete = complete && e >= 0.0 && e <= 1.0;
    }
    std::string detail = std::to_string(t.rows.size()) + " variants, seeds " + o.ablation_seeds + ", " +
                         std::to_string(o.ablation_epochs) + " epochs each";
    if (complete) {
        auto per_seed = [](const std::vector<double>& v) {
            std::string s;
            for (double e : v) s += (s.empty() ? "" : " ") + fmt("%.2f", 100.0 * e);
            return s;
        };
        const auto& base = t.rows.front();
        const auto& full = t.rows.back();
        detail += "; directional full <= base-only: foreground " + std::string(t.fg_directional ? "PASS" : "FAIL") +
                  " (" + per_seed(full.fg_eers) + " vs " + per_seed(base.fg_eers) + "), background " +
                  (t.bg_directional ? "PASS" : "FAIL") + " (" + per_seed(full.bg_eers) + " vs " +
                  per_seed(base.bg_eers) + ")";
    }
    return {complete, detail};
}

// ---- 8. EER oracle -----------------------------------------------------------

Verdict eer_oracle(const Options&) {
    Rng rng(808);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.index(300);
        std::vector<double> s(n);
        std::vector<int> l(n);
        for (std::size_t i = 0; i < n; ++i) {
            l[i] = i < 2 ? static_cast<int>(i) : static_cast<int>(rng.index(2));
            s[i] = trial % 3 == 0 ? std::round(rng.normal() * 3.0) / 3.0 : rng.normal() + rng.uniform(0.0, 2.0) * l[i];
        }
        const auto got = train::compute_eer(s, l);
        const auto want = oracle::eer_exhaustive(s, l);
        if (got.eer != want.eer || got.threshold != want.threshold) ++mismatches;
    }
    return {mismatches == 0, "200 random score sets, " + std::to_string(mismatches) + " mismatches"};
}

// ---- 9. shape law ------------------------------------------------------------

Verdict shape_law(const Options&) {
    std::size_t checked = 0, bad = 0;
    const std::vector<std::pair<std::size_t, std::size_t>> shapes{{16, 2}, {40, 4}, {25, 3}};
    for (const auto& [frames, p] : shapes) {
        for (const auto& v : train::ablation_variants()) {
            auto cfg = model::small_config(frames, 8, p, 3);
            cfg.streams = v.streams;
            model::PromptModel<double> m(cfg);
            Rng rng(frames);
            std::vector<double> h(frames * 8);
            for (auto& x : h) x = rng.normal();
            model::ForwardTrace<double> trace;
            m.forward(m.features_from_hidden(h, frames), &trace);
            for (std::size_t i = 0; i < trace.injected_rows.size(); ++i) {
                ++checked;
                if (trace.injected_rows[i] != frames + v.streams.count() * p ||
                    trace.layer_inputs[i].rows() != trace.injected_rows[i] || trace.layer_outputs[i].rows() != frames) {
                    ++bad;
                }
            }
            if (trace.injected_rows.size() != 3) ++bad;
        }
    }
    return {bad == 0, std::to_string(checked) + " layer inputs over 3 (T, p) shapes x 7 stream sets, " +
                          std::to_string(bad) + " violations"};
}

}  // namespace

int main(int argc, char** argv) {
    Options o;
    std::string work = (fs::temp_directory_path() / "mixforge_acceptance").string();
    std::vector<int> only;
    CLI::App app{"acceptance checks"};
    app.add_option("--work", work, "scratch directory");
    app.add_option("--ablation-epochs", o.ablation_epochs, "epochs per ablation run");
    app.add_option("--ablation-seeds", o.ablation_seeds, "comma-separated ablation seeds");
    app.add_option("--only", only, "run only these criteria");
    CLI11_PARSE(app, argc, argv);
    o.work = work;
    o.only.insert(only.begin(), only.end());
    fs::create_directories(o.work);

    std::map<int, std::pair<Verdict, double>> results;
    auto wanted = [&](int id) { return o.only.empty() || o.only.count(id) > 0; };
    auto report = [&](int id, const Verdict& v, double seconds) {
        results[id] = {v, seconds};
        std::printf("criterion %d: %s  %s [%.1f s]\n", id, v.pass ? "PASS" : "FAIL", v.detail.c_str(), seconds);
        std::fflush(stdout);
    };
    auto timed = [&](int id, double budget_s, const std::function<Verdict(const Options&)>& fn) {
        if (!wanted(id)) return;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = fn(o);
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (budget_s > 0 && s > budget_s) {
            v.pass = false;
            v.detail += "; over the " + fmt("%.0f", budget_s) + " s budget";
        }
        report(id, v, s);
    };

    timed(8, 5, eer_oracle);
    timed(9, 1, shape_law);
    timed(3, 10, dsp_identities);
    timed(1, 60, snr_fidelity);
    timed(2, 1, pairing_law);
    timed(4, 120, gradient_integrity);
    if (wanted(5) || wanted(6)) {
        const auto t0 = std::chrono::steady_clock::now();
        ToyRun r;
        try {
            r = toy_end_to_end(o);
        } catch (const std::exception& e) {
            r.freeze = r.end_to_end = {false, std::string("threw: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (wanted(5)) report(5, r.freeze, s);
        if (wanted(6)) report(6, r.end_to_end, s);
    }
    timed(7, 0, ablation);

    std::printf("\nsummary\n");
    bool all = true;
    for (const auto& [id, rv] : results) {
        std::printf("criterion %d: %s\n", id, rv.first.pass ? "PASS" : "FAIL");
        all = all && rv.first.pass;
    }
    return all ? 0 : 1;
}
