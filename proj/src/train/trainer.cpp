#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "mixforge/audio_io.hpp"
#include "mixforge/errors.hpp"
#include "mixforge/rng.hpp"
#include "mixforge/train_eval.hpp"

namespace mixforge::train {

namespace {

double parse_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end || !std::isfinite(out)) {
        throw UsageError("'" + key + "' expects a number, got '" + v + "'");
    }
    return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) throw UsageError("'" + key + "' expects a non-negative integer, got '" + v + "'");
    return out;
}

bool parse_flag(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw UsageError("'" + key + "' expects true or false, got '" + v + "'");
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw UsageError("lr must be positive");
    if (weight_decay < 0.0) throw UsageError("weight_decay must be non-negative");
    if (batch_size < 1) throw UsageError("batch_size must be positive");
    if (epochs < 1) throw UsageError("epochs must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw UsageError("betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw UsageError("eps must be positive");
}

bool TrainConfig::set(const std::string& key, const std::string& value) {
    if (key == "lr") lr = parse_real(key, value);
    else if (key == "weight_decay") weight_decay = parse_real(key, value);
    else if (key == "batch_size") batch_size = parse_uint(key, value);
    else if (key == "epochs") epochs = parse_uint(key, value);
    else if (key == "beta1") beta1 = parse_real(key, value);
    else if (key == "beta2") beta2 = parse_real(key, value);
    else if (key == "eps") eps = parse_real(key, value);
    else if (key == "seed") seed = parse_uint(key, value);
    else if (key == "task") task = parse_task(value);
    else if (key == "class_weighted") class_weighted = parse_flag(key, value);
    else if (key == "include_single") include_single = parse_flag(key, value);
    else return false;
    return true;
}

std::map<std::string, std::string> TrainConfig::to_map() const {
    return {{"lr", num(lr)},
            {"weight_decay", num(weight_decay)},
            {"batch_size", std::to_string(batch_size)},
            {"epochs", std::to_string(epochs)},
            {"beta1", num(beta1)},
            {"beta2", num(beta2)},
            {"eps", num(eps)},
            {"seed", std::to_string(seed)},
            {"task", to_string(task)},
            {"class_weighted", class_weighted ? "true" : "false"},
            {"include_single", include_single ? "true" : "false"}};
}

template <typename Real>
FeatureCache encode_rows(const model::PromptModel<Real>& model, std::span<const mix::ManifestRow> rows,
                         const std::filesystem::path& dataset_root, std::uint64_t crop_seed) {
    FeatureCache cache;
    const auto n = model.config().input_samples;
    for (const auto& row : rows) {
        if (cache.by_id.count(row.utt_id)) continue;
        auto w = audio::read_wav(dataset_root / row.path);
        if (w.sample_rate != audio::kCanonicalRate) w = audio::resample(w, audio::kCanonicalRate);
        w = audio::fix_length(w, n, audio::FitMode::crop_random, mix_seed(crop_seed, row.utt_id));
        cache.by_id.emplace(row.utt_id, std::make_shared<const model::Features>(model.extract(w.samples)));
    }
    return cache;
}

std::vector<Sample> select_samples(const FeatureCache& cache, std::span<const mix::ManifestRow> rows,
                                   mix::Split split, Task task, bool include_single) {
    std::vector<Sample> out;
    std::size_t skipped = 0;
    for (const auto& row : rows) {
        if (row.split != split) continue;
        if (row.kind == mix::RowKind::single && !include_single) continue;
        const auto label = subtask_label(row, task);
        if (!label) {
            ++skipped;
            continue;
        }
        const auto it = cache.by_id.find(row.utt_id);
        if (it == cache.by_id.end()) throw DataError("no encoded features for '" + row.utt_id + "'");
        Sample s;
        s.utt_id = row.utt_id;
        s.features = it->second;
        s.label = *label;
        s.kind = row.kind;
        s.snr_db = row.snr_db;
        s.fg_label = row.fg_label;
        s.bg_label = row.bg_label;
        out.push_back(std::move(s));
    }
    if (skipped > 0 && task == Task::background) {
        std::fprintf(stderr, "warning: %zu single-source speech rows in %s carry no background label; excluded\n",
                     skipped, mix::to_string(split));
    }
    return out;
}

template <typename Real>
std::vector<Sample> prepare_samples(const model::PromptModel<Real>& model, std::span<const mix::ManifestRow> rows,
                                    const std::filesystem::path& dataset_root, mix::Split split, Task task,
                                    bool include_single, std::uint64_t crop_seed) {
    std::vector<mix::ManifestRow> wanted;
    for (const auto& row : rows) {
        if (row.split != split || !subtask_label(row, task)) continue;
        if (row.kind == mix::RowKind::single && !include_single) continue;
        wanted.push_back(row);
    }
    const auto cache = encode_rows(model, wanted, dataset_root, crop_seed);
    return select_samples(cache, wanted, split, task, include_single);
}

template <typename Real>
std::vector<ScoredRow> score_samples(const model::PromptModel<Real>& model, std::span<const Sample> samples) {
    std::vector<ScoredRow> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        ScoredRow r;
        r.utt_id = s.utt_id;
        r.kind = s.kind;
        r.snr_db = s.snr_db;
        r.fg_label = s.fg_label;
        r.bg_label = s.bg_label;
        r.label = s.label;
        r.score = model.score(*s.features);
        if (!std::isfinite(r.score)) throw NumericalError("non-finite score for '" + s.utt_id + "'");
        out.push_back(std::move(r));
    }
    return out;
}

template <typename Real>
TrainResult train(model::PromptModel<Real>& model, std::span<const Sample> train_set, std::span<const Sample> dev_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    if (train_set.empty()) throw DataError("training split is empty for task " + std::string(to_string(cfg.task)));

    auto params = model.trainable_parameters();
    AdamWState state;

    std::size_t n_pos = 0;
    for (const auto& s : train_set) n_pos += s.label == 1;
    const std::size_t n = train_set.size();
    double w_pos = 1.0, w_neg = 1.0;
    if (cfg.class_weighted && n_pos > 0 && n_pos < n) {
        w_pos = static_cast<double>(n) / (2.0 * static_cast<double>(n_pos));
        w_neg = static_cast<double>(n) / (2.0 * static_cast<double>(n - n_pos));
    }

    bool dev_usable = false;
    {
        std::size_t dev_pos = 0;
        for (const auto& s : dev_set) dev_pos += s.label == 1;
        dev_usable = dev_pos > 0 && dev_pos < dev_set.size();
    }

    TrainResult result;
    std::vector<std::vector<Real>> best;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(mix_seed(cfg.seed, "train.shuffle"));

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t end = std::min(n, start + cfg.batch_size);
            double weight_total = 0.0;
            for (std::size_t k = start; k < end; ++k) weight_total += train_set[order[k]].label == 1 ? w_pos : w_neg;
            for (auto& p : params) p.zero_grad();
            double batch_loss = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const auto& s = train_set[order[k]];
                const Real y = static_cast<Real>(s.label);
                const double w = (s.label == 1 ? w_pos : w_neg) / weight_total;
                const auto logit = model.forward(*s.features);
                const auto loss = ad::scale(bce_loss<Real>(logit, std::span<const Real>(&y, 1)), static_cast<Real>(w));
                batch_loss += static_cast<double>(loss.item());
                loss.backward();
            }
            if (!std::isfinite(batch_loss)) {
                throw NumericalError("non-finite training loss in epoch " + std::to_string(epoch));
            }
            adamw_step<Real>(params, state, cfg);
            loss_sum += batch_loss;
            ++batches;
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = loss_sum / static_cast<double>(batches);
        if (dev_usable) {
            const auto scored = score_samples(model, dev_set);
            std::vector<double> scores;
            std::vector<int> labels;
            for (const auto& r : scored) {
                scores.push_back(r.score);
                labels.push_back(r.label);
            }
            entry.dev_eer = compute_eer(scores, labels).eer;
        }
        result.log.push_back(entry);
        if (on_epoch) on_epoch(entry);

        const bool better = !dev_usable || !result.best_dev_eer || *entry.dev_eer < *result.best_dev_eer;
        if (better) {
            result.best_epoch = epoch;
            result.best_dev_eer = entry.dev_eer;
            best.clear();
            for (const auto& p : params) best.emplace_back(p.data().begin(), p.data().end());
        }
    }

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto dst = params[i].mutable_data();
        std::copy(best[i].begin(), best[i].end(), dst.begin());
        params[i].zero_grad();
    }
    return result;
}

template FeatureCache encode_rows(const model::PromptModel<float>&, std::span<const mix::ManifestRow>,
                                  const std::filesystem::path&, std::uint64_t);
template FeatureCache encode_rows(const model::PromptModel<double>&, std::span<const mix::ManifestRow>,
                                  const std::filesystem::path&, std::uint64_t);
template std::vector<Sample> prepare_samples(const model::PromptModel<float>&, std::span<const mix::ManifestRow>,
                                             const std::filesystem::path&, mix::Split, Task, bool, std::uint64_t);
template std::vector<Sample> prepare_samples(const model::PromptModel<double>&, std::span<const mix::ManifestRow>,
                                             const std::filesystem::path&, mix::Split, Task, bool, std::uint64_t);
template std::vector<ScoredRow> score_samples(const model::PromptModel<float>&, std::span<const Sample>);
template std::vector<ScoredRow> score_samples(const model::PromptModel<double>&, std::span<const Sample>);
template TrainResult train(model::PromptModel<float>&, std::span<const Sample>, std::span<const Sample>,
                           const TrainConfig&, const EpochCallback&);
template TrainResult train(model::PromptModel<double>&, std::span<const Sample>, std::span<const Sample>,
                           const TrainConfig&, const EpochCallback&);

}  // namespace mixforge::train
