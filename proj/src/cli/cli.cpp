#include "mixforge/cli.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mixforge/audio_io.hpp"
#include "mixforge/errors.hpp"
#include "mixforge/rng.hpp"
#include "mixforge/signal_analysis.hpp"

namespace mixforge::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::size_t to_count(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) throw UsageError("'" + key + "' expects a non-negative integer, got '" + v + "'");
    return out;
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::stringstream in(v);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        double x = 0.0;
        const auto* end = item.data() + item.size();
        auto [ptr, ec] = std::from_chars(item.data(), end, x);
        if (item.empty() || ec != std::errc() || ptr != end) {
            throw UsageError("'" + key + "' expects comma-separated numbers, got '" + v + "'");
        }
        out.push_back(x);
    }
    if (out.empty()) throw UsageError("'" + key + "' must not be empty");
    return out;
}

std::string list_text(const std::vector<double>& v) {
    std::string s;
    char buf[32];
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%g", v[i]);
        s += (i ? "," : "") + std::string(buf);
    }
    return s;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw DataError("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

std::string settings_text(const Settings& s) {
    std::string text;
    for (const auto& [k, v] : s.to_map()) text += k + " = " + v + "\n";
    return text;
}

struct Common {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "key=value configuration file");
    app->add_option("--set", c.overrides, "override a configuration key (key=value), repeatable");
    app->add_option("overrides", c.overrides, "key=value overrides");
    app->add_option("--out", c.out, "output directory");
    app->add_option("--seed", c.seed, "seed for every stochastic step");
}

Settings load_settings(const Common& c, std::vector<std::pair<std::string, std::string>> flags) {
    Settings s;
    if (c.seed_given) flags.emplace_back("seed", std::to_string(c.seed));
    if (!c.config.empty()) {
        for (const auto& [k, v] : read_config_file(c.config)) s.apply(k, v);
    }
    for (const auto& o : c.overrides) {
        const auto [k, v] = split_assignment(o);
        s.apply(k, v);
    }
    for (const auto& [k, v] : flags) s.apply(k, v);
    s.model.validate();
    s.train.validate();
    return s;
}

struct Logger {
    std::ostream& err;
    void operator()(const std::string& line) const { err << line << '\n' << std::flush; }
};

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
    return buf;
}

std::vector<mix::ManifestRow> dataset_rows(const fs::path& data) {
    if (!fs::is_directory(data)) throw DataError("dataset directory " + data.string() + " does not exist");
    return mix::load_dataset(data);
}

std::uint64_t crop_seed(std::uint64_t seed) { return mix_seed(seed, "crop"); }

// ---- subcommands --------------------------------------------------------------

void cmd_corpus(const Common& c, const Logger& log) {
    const auto s = load_settings(c, {});
    const fs::path out = c.out.empty() ? "corpus" : c.out;
    generate_corpus(s.corpus, s.train.seed, out);
    log("toy corpus written to " + out.string());
}

void cmd_mix(const Common& c, const std::string& corpus_arg, const std::vector<std::string>& flag_kv,
             const Logger& log) {
    std::vector<std::pair<std::string, std::string>> flags;
    for (const auto& kv : flag_kv) flags.push_back(split_assignment(kv));
    const auto s = load_settings(c, flags);
    const fs::path out = c.out.empty() ? "data" : c.out;
    fs::path corpus = corpus_arg;
    if (corpus_arg.empty()) {
        corpus = out / "sources";
        if (!fs::exists(corpus / "train" / "foreground.csv")) {
            log("no corpus given; generating the toy corpus under " + corpus.string());
            generate_corpus(s.corpus, s.train.seed, corpus);
        }
    } else if (!fs::is_directory(corpus)) {
        throw DataError("corpus directory " + corpus.string() + " does not exist");
    }

    std::size_t built = 0;
    for (auto split : mix::kAllSplits) {
        const auto dir = corpus / mix::to_string(split);
        const auto fg_csv = dir / "foreground.csv";
        const auto bg_csv = dir / "background.csv";
        if (!fs::exists(fg_csv) && !fs::exists(bg_csv)) continue;
        const auto fg = mix::read_pool_csv(fg_csv);
        const auto bg = mix::read_pool_csv(bg_csv);
        const auto plan = mix::plan_pairs(fg, bg, s.pairing, mix_seed(s.train.seed, mix::to_string(split)), split);
        const auto rows = mix::build_dataset(plan, out);
        const auto combos = plan.combination_counts();
        log(std::string(mix::to_string(split)) + ": " + std::to_string(plan.mixtures.size()) + " mixtures (RF-RB " +
            std::to_string(combos[0]) + ", FF-RB " + std::to_string(combos[1]) + ", RF-FB " +
            std::to_string(combos[2]) + ", FF-FB " + std::to_string(combos[3]) + "), " +
            std::to_string(rows.size() - plan.mixtures.size()) + " single-source rows");
        ++built;
    }
    if (built == 0) throw DataError("corpus " + corpus.string() + " holds no <split>/foreground.csv pools");
    log("dataset written to " + out.string());
}

void cmd_analyze(const Common& c, const std::string& wav, const Logger& log) {
    const auto s = load_settings(c, {});
    if (wav.empty()) throw UsageError("analyze needs --wav");
    auto w = audio::read_wav(wav);
    if (w.size() < 3) throw DataError("analyze needs at least 3 samples");
    const auto feats = dsp::multiscale_if(w.samples, s.model.pool_window, s.model.wrap_if);
    const auto psi = dsp::tkeo(w.samples);

    std::string text = "n,f_high,f_all,f_low,psi\n";
    char line[160];
    for (std::size_t n = 0; n < w.size(); ++n) {
        std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g\n", n, feats.high[n], feats.all[n], feats.low[n],
                      std::abs(psi[n]));
        text += line;
    }
    const fs::path out = c.out.empty() ? "analysis" : c.out;
    ensure_dir(out);
    const auto path = out / (fs::path(wav).stem().string() + ".csv");
    write_file(path, text);
    log("wrote " + path.string());
}

void cmd_train(const Common& c, const std::string& data_arg, const std::vector<std::string>& flag_kv,
               const Logger& log) {
    std::vector<std::pair<std::string, std::string>> flags;
    for (const auto& kv : flag_kv) flags.push_back(split_assignment(kv));
    auto s = load_settings(c, flags);
    s.model.init_seed = s.train.seed;
    const fs::path data = data_arg.empty() ? "data" : data_arg;
    const auto rows = dataset_rows(data);
    const fs::path out = c.out.empty() ? fs::path("runs") / train::to_string(s.train.task) : fs::path(c.out);

    model::PromptModel<float> model(s.model);
    log("encoding utterances with the frozen front end");
    const auto train_set = train::prepare_samples(model, rows, data, mix::Split::train, s.train.task,
                                                  s.train.include_single, crop_seed(s.train.seed));
    const auto dev_set = train::prepare_samples(model, rows, data, mix::Split::dev, s.train.task,
                                                s.train.include_single, crop_seed(s.train.seed));
    log("train " + std::to_string(train_set.size()) + " / dev " + std::to_string(dev_set.size()) +
        " utterances; trainable " + std::to_string(model.trainable_count()) + ", frozen " +
        std::to_string(model.frozen_count()) + " parameters");

    ensure_dir(out);
    const auto result = train::train<float>(model, train_set, dev_set, s.train, [&](const train::EpochLog& e) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "epoch %zu/%zu  loss %.4f  dev EER %s", e.epoch + 1, s.train.epochs,
                      e.train_loss, e.dev_eer ? pct(*e.dev_eer).c_str() : "n/a");
        log(buf);
    });

    std::map<std::string, std::string> meta = s.train.to_map();
    meta["best_epoch"] = std::to_string(result.best_epoch);
    if (result.best_dev_eer) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", *result.best_dev_eer);
        meta["best_dev_eer"] = buf;
    }
    model::save_checkpoint(model, out / "best.ckpt", meta);
    write_file(out / "epoch_log.csv", train::epoch_log_csv(result.log));
    write_file(out / "settings.txt", settings_text(s));
    log("best epoch " + std::to_string(result.best_epoch + 1) + "; checkpoint at " + (out / "best.ckpt").string());
}

void cmd_eval(const Common& c, const std::string& data_arg, const std::string& ckpt_arg,
              const std::vector<std::string>& flag_kv, const Logger& log, std::ostream& out_stream) {
    std::vector<std::pair<std::string, std::string>> flags;
    for (const auto& kv : flag_kv) flags.push_back(split_assignment(kv));
    auto s = load_settings(c, flags);
    const bool task_given = !flag_kv.empty();
    const fs::path data = data_arg.empty() ? "data" : data_arg;
    const fs::path ckpt_path =
        ckpt_arg.empty() ? fs::path("runs") / train::to_string(s.train.task) / "best.ckpt" : fs::path(ckpt_arg);
    if (!fs::exists(ckpt_path)) throw DataError("checkpoint " + ckpt_path.string() + " does not exist");
    const auto ckpt = model::read_checkpoint(ckpt_path);
    if (!task_given && ckpt.metadata.count("task")) s.train.task = train::parse_task(ckpt.metadata.at("task"));
    std::uint64_t seed = s.train.seed;
    if (ckpt.metadata.count("seed")) seed = std::stoull(ckpt.metadata.at("seed"));
    const auto rows = dataset_rows(data);
    const fs::path out = c.out.empty() ? ckpt_path.parent_path() / "eval" : fs::path(c.out);

    const auto model = model::load_model<float>(ckpt);
    const auto eval_set = train::prepare_samples(model, rows, data, mix::Split::eval, s.train.task,
                                                 s.train.include_single, crop_seed(seed));
    if (eval_set.empty()) throw DataError("eval split has no rows for task " + std::string(train::to_string(s.train.task)));
    const auto scored = train::score_samples(model, eval_set);
    const auto report = train::build_report(scored, s.train.task, s.pairing.snr_set);

    ensure_dir(out);
    write_file(out / "report.csv", train::report_csv(report));
    write_file(out / "report.txt", train::report_table(report));
    write_file(out / "scores.csv", train::scores_csv(scored));
    out_stream << train::report_table(report);
    log("evaluation written to " + out.string());
}

void cmd_ablate(const Common& c, const std::string& data_arg, const std::string& seeds_arg,
                const Logger& log, std::ostream& out_stream) {
    const auto s = load_settings(c, {});
    const fs::path data = data_arg.empty() ? "data" : data_arg;
    std::vector<std::uint64_t> seeds;
    for (double v : to_list("seeds", seeds_arg)) {
        if (v < 0 || v != static_cast<double>(static_cast<std::uint64_t>(v))) throw UsageError("seeds must be integers");
        seeds.push_back(static_cast<std::uint64_t>(v));
    }
    if (seeds.size() < 1) throw UsageError("ablation needs at least one seed");
    const auto rows = dataset_rows(data);
    const fs::path out = c.out.empty() ? fs::path("runs") / "ablation" : fs::path(c.out);

    model::PromptModel<float> encoder(s.model);
    log("encoding utterances with the frozen front end");
    const auto cache = train::encode_rows(encoder, rows, data, crop_seed(s.train.seed));
    train::AblationData d;
    const bool single = s.train.include_single;
    using train::Task;
    d.fg_train = train::select_samples(cache, rows, mix::Split::train, Task::foreground, single);
    d.fg_dev = train::select_samples(cache, rows, mix::Split::dev, Task::foreground, single);
    d.fg_eval = train::select_samples(cache, rows, mix::Split::eval, Task::foreground, single);
    d.bg_train = train::select_samples(cache, rows, mix::Split::train, Task::background, single);
    d.bg_dev = train::select_samples(cache, rows, mix::Split::dev, Task::background, single);
    d.bg_eval = train::select_samples(cache, rows, mix::Split::eval, Task::background, single);

    const auto table = train::run_ablation(d, s.model, s.train, seeds,
                                           [&](const std::string& v, Task t, std::uint64_t seed, double eer) {
                                               log(v + " / " + train::to_string(t) + " / seed " +
                                                   std::to_string(seed) + ": eval EER " + pct(eer));
                                           });
    ensure_dir(out);
    write_file(out / "ablation.csv", train::ablation_csv(table));
    write_file(out / "ablation.txt", train::ablation_table_text(table));
    out_stream << train::ablation_table_text(table);
}

}  // namespace

CorpusSizes::CorpusSizes() {
    auto sizes = [](std::size_t fg, std::size_t bg, const char* prefix) {
        mix::ToyCorpusConfig c;
        c.fg_real = c.fg_fake = fg;
        c.bg_real = c.bg_fake = bg;
        c.id_prefix = prefix;
        return c;
    };
    per_split[mix::Split::train] = sizes(50, 30, "train_");
    per_split[mix::Split::dev] = sizes(10, 10, "dev_");
    per_split[mix::Split::eval] = sizes(25, 20, "eval_");
}

void Settings::apply(const std::string& key, const std::string& value) {
    if (model.set(key, value) || train.set(key, value)) return;
    if (key == "mix_ratio") {
        pairing.mix_ratio = to_count(key, value);
        if (pairing.mix_ratio == 0) throw UsageError("mix_ratio must be at least 1");
        return;
    }
    if (key == "snr_set") {
        pairing.snr_set = to_list(key, value);
        return;
    }
    if (key == "balance_authenticity") {
        if (value != "true" && value != "false") throw UsageError("balance_authenticity expects true or false");
        pairing.balance_authenticity = value == "true";
        return;
    }
    for (auto split : mix::kAllSplits) {
        auto& cfg = corpus.per_split[split];
        const std::string p = std::string(mix::to_string(split)) + "_";
        if (key == p + "fg_real") return void(cfg.fg_real = to_count(key, value));
        if (key == p + "fg_fake") return void(cfg.fg_fake = to_count(key, value));
        if (key == p + "bg_real") return void(cfg.bg_real = to_count(key, value));
        if (key == p + "bg_fake") return void(cfg.bg_fake = to_count(key, value));
    }
    throw UsageError("unknown configuration key '" + key + "'");
}

std::map<std::string, std::string> Settings::to_map() const {
    auto m = model.to_map();
    for (const auto& [k, v] : train.to_map()) m[k] = v;
    m["mix_ratio"] = std::to_string(pairing.mix_ratio);
    m["snr_set"] = list_text(pairing.snr_set);
    m["balance_authenticity"] = pairing.balance_authenticity ? "true" : "false";
    for (const auto& [split, cfg] : corpus.per_split) {
        const std::string p = std::string(mix::to_string(split)) + "_";
        m[p + "fg_real"] = std::to_string(cfg.fg_real);
        m[p + "fg_fake"] = std::to_string(cfg.fg_fake);
        m[p + "bg_real"] = std::to_string(cfg.bg_real);
        m[p + "bg_fake"] = std::to_string(cfg.bg_fake);
    }
    return m;
}

std::pair<std::string, std::string> split_assignment(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw UsageError("expected key=value, got '" + text + "'");
    auto key = trim(text.substr(0, eq));
    auto value = trim(text.substr(eq + 1));
    if (key.empty()) throw UsageError("empty key in '" + text + "'");
    return {key, value};
}

std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read config file " + path.string());
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        try {
            out.push_back(split_assignment(line));
        } catch (const UsageError& e) {
            throw UsageError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void generate_corpus(const CorpusSizes& sizes, std::uint64_t seed, const fs::path& out_dir) {
    for (const auto& [split, cfg] : sizes.per_split) {
        mix::generate_toy_corpus(cfg, mix_seed(seed, std::string("corpus.") + mix::to_string(split)),
                                 out_dir / mix::to_string(split));
    }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"mixforge: mixed-audio deepfake dataset builder and prompt-tuned detector"};
    app.require_subcommand(1);

    Common corpus_c, mix_c, analyze_c, train_c, eval_c, ablate_c;
    auto* corpus = app.add_subcommand("corpus", "generate the synthetic source pools");
    add_common(corpus, corpus_c);

    auto* mixcmd = app.add_subcommand("mix", "pair sources, mix at target SNRs and write the dataset");
    add_common(mixcmd, mix_c);
    std::string corpus_dir, mix_ratio, snr_set;
    mixcmd->add_option("--corpus", corpus_dir, "toy corpus directory (generated under --out when omitted)");
    mixcmd->add_option("--mix-ratio", mix_ratio, "backgrounds per foreground (default 4)");
    mixcmd->add_option("--snr-set", snr_set, "comma-separated SNR targets in dB (default -5,0,5,10,15,20)");

    auto* analyze = app.add_subcommand("analyze", "write per-sample IF and TKEO features of a WAV as CSV");
    add_common(analyze, analyze_c);
    std::string wav;
    analyze->add_option("--wav", wav, "input WAV")->required();

    auto* traincmd = app.add_subcommand("train", "train the prompt-tuned detector");
    add_common(traincmd, train_c);
    std::string train_data, task, epochs, batch, lr, wd;
    bool weighted = false;
    traincmd->add_option("--data", train_data, "dataset root (default data)");
    traincmd->add_option("--task", task, "foreground or background");
    traincmd->add_option("--epochs", epochs, "epochs (default 30)");
    traincmd->add_option("--batch-size", batch, "batch size (default 32)");
    traincmd->add_option("--lr", lr, "learning rate (default 5e-3)");
    traincmd->add_option("--weight-decay", wd, "AdamW weight decay (default 5e-4)");
    traincmd->add_flag("--class-weighted", weighted, "weight the loss by inverse class frequency");
    bool carry = false;
    traincmd->add_flag("--carry-prompts", carry, "keep prompt outputs and add them to the next layer's prompts");

    auto* evalcmd = app.add_subcommand("eval", "SNR-bucketed EER of a checkpoint on the eval split");
    add_common(evalcmd, eval_c);
    std::string eval_data, ckpt, eval_task;
    evalcmd->add_option("--data", eval_data, "dataset root (default data)");
    evalcmd->add_option("--checkpoint", ckpt, "checkpoint (default runs/<task>/best.ckpt)");
    evalcmd->add_option("--task", eval_task, "foreground or background (default: from the checkpoint)");

    auto* ablate = app.add_subcommand("ablate", "train and evaluate the seven prompt-stream variants");
    add_common(ablate, ablate_c);
    std::string ablate_data, seeds = "1,2,3";
    ablate->add_option("--data", ablate_data, "dataset root (default data)");
    ablate->add_option("--seeds", seeds, "comma-separated seeds (default 1,2,3)");

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        for (auto* sub : app.get_subcommands()) out << sub->help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }

    const Logger log{err};
    try {
        for (auto [sub, c] : std::initializer_list<std::pair<CLI::App*, Common*>>{
                 {corpus, &corpus_c}, {mixcmd, &mix_c}, {analyze, &analyze_c},
                 {traincmd, &train_c}, {evalcmd, &eval_c}, {ablate, &ablate_c}}) {
            c->seed_given = sub->count("--seed") > 0;
        }
        if (corpus->parsed()) {
            cmd_corpus(corpus_c, log);
        } else if (mixcmd->parsed()) {
            std::vector<std::string> flags;
            if (!mix_ratio.empty()) flags.push_back("mix_ratio=" + mix_ratio);
            if (!snr_set.empty()) flags.push_back("snr_set=" + snr_set);
            cmd_mix(mix_c, corpus_dir, flags, log);
        } else if (analyze->parsed()) {
            cmd_analyze(analyze_c, wav, log);
        } else if (traincmd->parsed()) {
            std::vector<std::string> flags;
            if (!task.empty()) flags.push_back("task=" + task);
            if (!epochs.empty()) flags.push_back("epochs=" + epochs);
            if (!batch.empty()) flags.push_back("batch_size=" + batch);
            if (!lr.empty()) flags.push_back("lr=" + lr);
            if (!wd.empty()) flags.push_back("weight_decay=" + wd);
            if (weighted) flags.push_back("class_weighted=true");
            if (carry) flags.push_back("carry_prompts=true");
            cmd_train(train_c, train_data, flags, log);
        } else if (evalcmd->parsed()) {
            std::vector<std::string> flags;
            if (!eval_task.empty()) flags.push_back("task=" + eval_task);
            cmd_eval(eval_c, eval_data, ckpt, flags, log, out);
        } else if (ablate->parsed()) {
            cmd_ablate(ablate_c, ablate_data, seeds, log, out);
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ShapeError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DataError& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const NumericalError& e) {
        err << "error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitNumerical;
    }
    return kExitOk;
}

}  // namespace mixforge::cli
