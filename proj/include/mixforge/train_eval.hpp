#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mixforge/autodiff.hpp"
#include "mixforge/mix_engine.hpp"
#include "mixforge/prompt_model.hpp"

namespace mixforge::train {

enum class Task { foreground, background };
const char* to_string(Task t);
Task parse_task(const std::string& s);

struct TrainConfig {
    double lr = 5e-3;
    double weight_decay = 5e-4;
    std::size_t batch_size = 32;
    std::size_t epochs = 30;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    Task task = Task::foreground;
    // Weight each class by N / (2 N_c) in the loss.
    bool class_weighted = false;
    // Pool the task's single-source rows with the mixtures.
    bool include_single = true;

    void validate() const;
    bool set(const std::string& key, const std::string& value);
    std::map<std::string, std::string> to_map() const;
};

// ---- optimiser ----------------------------------------------------------------

struct AdamWState {
    std::size_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

// One decoupled-weight-decay Adam step over `params`. Parameters without a
// gradient buffer are skipped. A non-finite gradient throws NumericalError
// before any parameter is touched.
template <typename Real>
void adamw_step(std::span<ad::Tensor<Real>> params, AdamWState& state, const TrainConfig& cfg);

// ---- loss and labels ----------------------------------------------------------

template <typename Real>
ad::Tensor<Real> bce_loss(const ad::Tensor<Real>& logits, std::span<const std::type_identity_t<Real>> labels);

// Bona fide = 1. nullopt when the row has no label for the task (a single
// background row in the foreground task or a single speech row in the
// background task).
std::optional<int> subtask_label(const mix::ManifestRow& row, Task task);

// ---- metrics ------------------------------------------------------------------

struct EerResult {
    double eer = 0.0;
    double threshold = 0.0;
};

// labels: 1 bona fide, 0 spoof. Candidate thresholds are the sorted distinct
// scores plus one just above the maximum. FAR(t) = share of spoof >= t,
// FRR(t) = share of bona fide < t. At the first threshold with FRR >= FAR the
// crossing is interpolated linearly from the previous threshold.
EerResult compute_eer(std::span<const double> scores, std::span<const int> labels);

struct BucketResult {
    double snr_db = 0.0;
    std::size_t count = 0;
    std::size_t bona_fide = 0;
    std::size_t spoof = 0;
    std::optional<double> eer;  // absent when a class is missing
};

struct EvalReport {
    Task task = Task::foreground;
    double overall_eer = 0.0;  // every scored row
    double threshold = 0.0;
    std::optional<double> mixed_eer;
    std::size_t scored = 0;
    std::size_t mixed = 0;
    std::vector<BucketResult> buckets;
    std::array<std::size_t, 4> combinations{};  // RF-RB, FF-RB, RF-FB, FF-FB over mixed rows
};

struct ScoredRow {
    std::string utt_id;
    mix::RowKind kind = mix::RowKind::mixed;
    std::optional<double> snr_db;
    std::optional<mix::Authenticity> fg_label;
    std::optional<mix::Authenticity> bg_label;
    int label = 0;
    double score = 0.0;
};

EvalReport build_report(std::span<const ScoredRow> rows, Task task, std::span<const double> snr_set);
std::string report_csv(const EvalReport& r);
std::string report_table(const EvalReport& r);
std::string scores_csv(std::span<const ScoredRow> rows);

// ---- data ---------------------------------------------------------------------

struct Sample {
    std::string utt_id;
    std::shared_ptr<const model::Features> features;
    int label = 0;
    mix::RowKind kind = mix::RowKind::mixed;
    std::optional<double> snr_db;
    std::optional<mix::Authenticity> fg_label;
    std::optional<mix::Authenticity> bg_label;
};

// Loads, resamples, fixes the length (crop window seeded per utterance) and
// runs the frozen encoder on every row of `split` that has a label for `task`.
template <typename Real>
std::vector<Sample> prepare_samples(const model::PromptModel<Real>& model, std::span<const mix::ManifestRow> rows,
                                    const std::filesystem::path& dataset_root, mix::Split split, Task task,
                                    bool include_single, std::uint64_t crop_seed);

// Encoder features keyed by utterance id; labels are attached per task so one
// cache serves both tasks and every ablation variant.
struct FeatureCache {
    std::map<std::string, std::shared_ptr<const model::Features>> by_id;
};

template <typename Real>
FeatureCache encode_rows(const model::PromptModel<Real>& model, std::span<const mix::ManifestRow> rows,
                         const std::filesystem::path& dataset_root, std::uint64_t crop_seed);

std::vector<Sample> select_samples(const FeatureCache& cache, std::span<const mix::ManifestRow> rows,
                                   mix::Split split, Task task, bool include_single);

// ---- training -----------------------------------------------------------------

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    std::optional<double> dev_eer;
};

struct TrainResult {
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    std::optional<double> best_dev_eer;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Trains the trainable partition only and leaves the model holding the
// parameters of the epoch with the lowest dev EER (the last epoch when there is
// no usable dev set).
template <typename Real>
TrainResult train(model::PromptModel<Real>& model, std::span<const Sample> train_set, std::span<const Sample> dev_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

template <typename Real>
std::vector<ScoredRow> score_samples(const model::PromptModel<Real>& model, std::span<const Sample> samples);

std::string epoch_log_csv(std::span<const EpochLog> log);

// ---- ablation -----------------------------------------------------------------

struct AblationVariant {
    std::string name;
    model::StreamMask streams;
};

// The seven prompt-stream combinations in reporting order.
std::vector<AblationVariant> ablation_variants();

struct AblationRow {
    std::string variant;
    model::StreamMask streams;
    std::vector<std::uint64_t> seeds;
    std::vector<double> fg_eers;  // per seed, eval split
    std::vector<double> bg_eers;
    double fg_mean = 0.0;
    double bg_mean = 0.0;
};

struct AblationTable {
    std::vector<AblationRow> rows;
    // Full model mean EER <= base-only mean EER, per task.
    bool fg_directional = false;
    bool bg_directional = false;
};

struct AblationData {
    std::vector<Sample> fg_train, fg_dev, fg_eval;
    std::vector<Sample> bg_train, bg_dev, bg_eval;
};

using AblationProgress = std::function<void(const std::string& variant, Task task, std::uint64_t seed, double eer)>;

AblationTable run_ablation(const AblationData& data, const model::ModelConfig& base_model,
                           const TrainConfig& base_train, std::span<const std::uint64_t> seeds,
                           const AblationProgress& progress = {});

std::string ablation_csv(const AblationTable& t);
AblationTable parse_ablation_csv(const std::string& text);
std::string ablation_table_text(const AblationTable& t);

}  // namespace mixforge::train
