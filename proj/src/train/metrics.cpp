#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "mixforge/errors.hpp"
#include "mixforge/train_eval.hpp"

namespace mixforge::train {

const char* to_string(Task t) { return t == Task::foreground ? "foreground" : "background"; }

Task parse_task(const std::string& s) {
    if (s == "foreground" || s == "fg") return Task::foreground;
    if (s == "background" || s == "bg") return Task::background;
    throw UsageError("unknown task '" + s + "' (expected foreground or background)");
}

std::optional<int> subtask_label(const mix::ManifestRow& row, Task task) {
    const auto& label = task == Task::foreground ? row.fg_label : row.bg_label;
    if (!label) return std::nullopt;
    return *label == mix::Authenticity::real ? 1 : 0;
}

EerResult compute_eer(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ShapeError("compute_eer: scores and labels differ in length");
    std::size_t n_bona = 0, n_spoof = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw NumericalError("compute_eer: non-finite score");
        if (labels[i] == 1) ++n_bona;
        else if (labels[i] == 0) ++n_spoof;
        else throw DataError("compute_eer: labels must be 0 or 1");
    }
    if (n_bona == 0 || n_spoof == 0) throw DataError("compute_eer: both classes are required");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Sweep thresholds upwards. Before threshold t every score < t has been
    // consumed: bona fide below t are false rejections, spoof at or above t
    // are false acceptances.
    std::size_t bona_below = 0, spoof_below = 0;
    double prev_t = 0.0, prev_far = 0.0, prev_frr = 0.0;
    bool have_prev = false;
    std::size_t i = 0;
    const double top = std::nextafter(scores[order.back()], std::numeric_limits<double>::infinity());
    while (true) {
        const double t = i < order.size() ? scores[order[i]] : top;
        const double far = static_cast<double>(n_spoof - spoof_below) / static_cast<double>(n_spoof);
        const double frr = static_cast<double>(bona_below) / static_cast<double>(n_bona);
        if (frr >= far) {
            if (frr == far || !have_prev) return {far, t};
            const double d_prev = prev_far - prev_frr;
            const double d_cur = far - frr;
            const double alpha = d_prev / (d_prev - d_cur);
            return {prev_far + alpha * (far - prev_far), prev_t + alpha * (t - prev_t)};
        }
        prev_t = t;
        prev_far = far;
        prev_frr = frr;
        have_prev = true;
        if (i >= order.size()) break;
        while (i < order.size() && scores[order[i]] == t) {
            (labels[order[i]] == 1 ? bona_below : spoof_below) += 1;
            ++i;
        }
    }
    throw NumericalError("compute_eer: no crossing found");
}

EvalReport build_report(std::span<const ScoredRow> rows, Task task, std::span<const double> snr_set) {
    EvalReport r;
    r.task = task;
    std::vector<double> all_scores, mixed_scores;
    std::vector<int> all_labels, mixed_labels;
    for (const auto& row : rows) {
        all_scores.push_back(row.score);
        all_labels.push_back(row.label);
        if (row.kind == mix::RowKind::mixed) {
            mixed_scores.push_back(row.score);
            mixed_labels.push_back(row.label);
            if (row.fg_label && row.bg_label) {
                ++r.combinations[static_cast<std::size_t>(mix::combination_of(*row.fg_label, *row.bg_label))];
            }
        }
    }
    r.scored = rows.size();
    r.mixed = mixed_scores.size();
    const auto overall = compute_eer(all_scores, all_labels);
    r.overall_eer = overall.eer;
    r.threshold = overall.threshold;
    const bool mixed_both = std::count(mixed_labels.begin(), mixed_labels.end(), 1) > 0 &&
                            std::count(mixed_labels.begin(), mixed_labels.end(), 0) > 0;
    if (mixed_both) r.mixed_eer = compute_eer(mixed_scores, mixed_labels).eer;

    std::vector<double> snrs(snr_set.begin(), snr_set.end());
    for (const auto& row : rows) {
        if (row.kind == mix::RowKind::mixed && row.snr_db &&
            std::find(snrs.begin(), snrs.end(), *row.snr_db) == snrs.end()) {
            snrs.push_back(*row.snr_db);
        }
    }
    std::sort(snrs.begin(), snrs.end());
    for (double snr : snrs) {
        BucketResult b;
        b.snr_db = snr;
        std::vector<double> s;
        std::vector<int> l;
        for (const auto& row : rows) {
            if (row.kind != mix::RowKind::mixed || !row.snr_db || *row.snr_db != snr) continue;
            s.push_back(row.score);
            l.push_back(row.label);
            (row.label == 1 ? b.bona_fide : b.spoof) += 1;
        }
        b.count = s.size();
        if (b.bona_fide > 0 && b.spoof > 0) b.eer = compute_eer(s, l).eer;
        r.buckets.push_back(b);
    }
    return r;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string fmt_snr(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

}  // namespace

std::string report_csv(const EvalReport& r) {
    std::ostringstream out;
    out << "bucket,snr_db,count,bona_fide,spoof,eer\n";
    for (const auto& b : r.buckets) {
        out << "snr," << fmt_snr(b.snr_db) << ',' << b.count << ',' << b.bona_fide << ',' << b.spoof << ','
            << (b.eer ? fmt(*b.eer) : "") << '\n';
    }
    std::size_t mixed_bona = 0;
    for (const auto& b : r.buckets) mixed_bona += b.bona_fide;
    out << "mixed,," << r.mixed << ',' << mixed_bona << ',' << r.mixed - mixed_bona << ','
        << (r.mixed_eer ? fmt(*r.mixed_eer) : "") << '\n';
    out << "overall,," << r.scored << ",,," << fmt(r.overall_eer) << '\n';
    return out.str();
}

std::string report_table(const EvalReport& r) {
    std::ostringstream out;
    char line[128];
    out << "task: " << to_string(r.task) << "\n";
    std::snprintf(line, sizeof line, "overall EER %.2f%% over %zu utterances (threshold %.4f)\n", 100.0 * r.overall_eer,
                  r.scored, r.threshold);
    out << line;
    if (r.mixed_eer) {
        std::snprintf(line, sizeof line, "mixed EER   %.2f%% over %zu mixtures\n", 100.0 * *r.mixed_eer, r.mixed);
        out << line;
    }
    out << "  SNR(dB)  count  bona  spoof     EER\n";
    for (const auto& b : r.buckets) {
        if (b.eer) {
            std::snprintf(line, sizeof line, "  %7g  %5zu  %4zu  %5zu  %5.2f%%\n", b.snr_db, b.count, b.bona_fide,
                          b.spoof, 100.0 * *b.eer);
        } else {
            std::snprintf(line, sizeof line, "  %7g  %5zu  %4zu  %5zu  absent\n", b.snr_db, b.count, b.bona_fide,
                          b.spoof);
        }
        out << line;
    }
    std::snprintf(line, sizeof line, "combinations RF-RB %zu  FF-RB %zu  RF-FB %zu  FF-FB %zu\n", r.combinations[0],
                  r.combinations[1], r.combinations[2], r.combinations[3]);
    out << line;
    return out.str();
}

std::string scores_csv(std::span<const ScoredRow> rows) {
    std::ostringstream out;
    out << "utt_id,kind,snr_db,label,score\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.9g", r.score);
        out << r.utt_id << ',' << mix::to_string(r.kind) << ',' << (r.snr_db ? fmt_snr(*r.snr_db) : "") << ','
            << r.label << ',' << buf << '\n';
    }
    return out.str();
}

std::string epoch_log_csv(std::span<const EpochLog> log) {
    std::ostringstream out;
    out << "epoch,train_loss,dev_eer\n";
    for (const auto& e : log) {
        out << e.epoch << ',' << fmt(e.train_loss) << ',' << (e.dev_eer ? fmt(*e.dev_eer) : "") << '\n';
    }
    return out.str();
}

}  // namespace mixforge::train
