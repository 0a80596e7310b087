#include <doctest.h>

#include <cmath>
#include <vector>

#include "mixforge/errors.hpp"
#include "mixforge/rng.hpp"
#include "mixforge/train_eval.hpp"
#include "oracles.hpp"

using namespace mixforge;
using namespace mixforge::train;
using mix::Authenticity;
using T64 = ad::Tensor<double>;

namespace {

EerResult eer_of(const std::vector<double>& bona, const std::vector<double>& spoof) {
    std::vector<double> s = bona;
    s.insert(s.end(), spoof.begin(), spoof.end());
    std::vector<int> l(bona.size(), 1);
    l.insert(l.end(), spoof.size(), 0);
    return compute_eer(s, l);
}

TrainConfig no_decay(double lr) {
    TrainConfig c;
    c.lr = lr;
    c.weight_decay = 0.0;
    return c;
}

mix::ManifestRow mixed_row(Authenticity fg, Authenticity bg) {
    mix::ManifestRow r;
    r.kind = mix::RowKind::mixed;
    r.fg_label = fg;
    r.bg_label = bg;
    r.snr_db = 0.0;
    return r;
}

std::vector<Sample> random_samples(const model::PromptModel<double>& m, std::size_t n, std::uint64_t seed) {
    const auto& cfg = m.config();
    std::vector<Sample> out;
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        std::vector<double> h(cfg.frames() * cfg.embed_dim);
        for (auto& x : h) x = rng.normal() + (label ? 0.5 : -0.5);
        Sample s;
        s.utt_id = "u" + std::to_string(i);
        s.features = std::make_shared<model::Features>(m.features_from_hidden(std::move(h), cfg.frames()));
        s.label = label;
        s.snr_db = 0.0;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

TEST_CASE("adamw: zero gradient and zero decay leave the parameter alone") {
    auto w = T64::parameter({3}, {1.0, -2.0, 0.5});
    w.mutable_grad();
    ad::sum(ad::scale(w, 0.0)).backward();
    std::vector<T64> ps{w};
    AdamWState st;
    adamw_step<double>(ps, st, no_decay(0.1));
    CHECK(w.data()[0] == 1.0);
    CHECK(w.data()[1] == -2.0);
    CHECK(w.data()[2] == 0.5);
}

TEST_CASE("adamw: one step on w^2/2 from 1 moves by lr") {
    auto w = T64::parameter({1}, {1.0});
    ad::scale(ad::mul(w, w), 0.5).backward();
    CHECK(w.grad()[0] == 1.0);
    std::vector<T64> ps{w};
    AdamWState st;
    adamw_step<double>(ps, st, no_decay(0.1));
    // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
    CHECK(w.data()[0] < 1.0);
    CHECK(w.data()[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
}

TEST_CASE("adamw: decay-only step multiplies by 1 - lr*wd") {
    auto w = T64::parameter({2}, {2.0, -4.0});
    ad::sum(ad::scale(w, 0.0)).backward();
    TrainConfig c;
    c.lr = 0.1;
    c.weight_decay = 0.5;
    std::vector<T64> ps{w};
    AdamWState st;
    adamw_step<double>(ps, st, c);
    CHECK(w.data()[0] == doctest::Approx(2.0 * 0.95).epsilon(1e-15));
    CHECK(w.data()[1] == doctest::Approx(-4.0 * 0.95).epsilon(1e-15));
}

TEST_CASE("adamw: non-finite gradient aborts before any update") {
    auto a = T64::parameter({1}, {1.0});
    auto b = T64::parameter({1}, {1.0});
    ad::sum(ad::add(a, b)).backward();
    b.mutable_grad()[0] = std::nan("");
    std::vector<T64> ps{a, b};
    AdamWState st;
    CHECK_THROWS_AS(adamw_step<double>(ps, st, no_decay(0.1)), NumericalError);
    CHECK(a.data()[0] == 1.0);
    CHECK(st.step == 0);
}

TEST_CASE("adamw: parameters without gradients are skipped") {
    auto a = T64::parameter({1}, {1.0});
    auto b = T64::parameter({1}, {3.0});
    ad::sum(a).backward();
    std::vector<T64> ps{a, b};
    AdamWState st;
    adamw_step<double>(ps, st, TrainConfig{});
    CHECK(a.data()[0] != 1.0);
    CHECK(b.data()[0] == 3.0);
}

TEST_CASE("bce loss") {
    for (double y : {0.0, 1.0}) {
        CHECK(bce_loss<double>(T64::constant({1}, {0.0}), std::span<const double>(&y, 1)).item() ==
              doctest::Approx(std::log(2.0)).epsilon(1e-15));
    }
    const double one = 1.0, zero = 0.0;
    const auto big = bce_loss<double>(T64::constant({1}, {20.0}), std::span<const double>(&one, 1)).item();
    CHECK(std::isfinite(big));
    CHECK(big == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-12));
    CHECK(std::isfinite(bce_loss<double>(T64::constant({1}, {800.0}), std::span<const double>(&zero, 1)).item()));

    ad::GradCheckOptions opt;
    opt.tolerance = 1e-8;
    opt.step = 1e-5;
    for (double y : {0.0, 1.0}) {
        const auto r = ad::grad_check(
            [&](const T64& x) { return bce_loss<double>(x, std::span<const double>(&y, 1)); },
            T64::parameter({1}, {0.5}), opt);
        CHECK(r.max_rel_error <= 1e-8);
    }
    CHECK_THROWS_AS(bce_loss<double>(T64::constant({0}, {}), std::span<const double>()), DataError);
    const std::vector<double> two{1.0, 0.0};
    CHECK_THROWS_AS(bce_loss<double>(T64::constant({1}, {0.0}), two), ShapeError);
}

TEST_CASE("eer worked examples") {
    const auto perfect = eer_of({0.9, 0.8}, {0.2, 0.1});
    CHECK(perfect.eer == 0.0);
    CHECK(eer_of({0.8, 0.3}, {0.7, 0.2}).eer == 0.5);
    CHECK(eer_of({0.1, 0.2}, {0.8, 0.9}).eer == 1.0);
    CHECK_THROWS_AS(eer_of({0.1}, {}), DataError);
}

TEST_CASE("eer matches the exhaustive sweep on random sets") {
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.index(60);
        std::vector<double> s(n);
        std::vector<int> l(n);
        for (std::size_t i = 0; i < n; ++i) {
            l[i] = i < 2 ? static_cast<int>(i) : static_cast<int>(rng.index(2));
            // Coarse grid in half the trials.
            s[i] = trial % 2 ? std::round(rng.normal() * 4.0) / 4.0 : rng.normal() + 0.7 * l[i];
        }
        const auto got = compute_eer(s, l);
        const auto want = oracle::eer_exhaustive(s, l);
        REQUIRE(got.eer == want.eer);
        REQUIRE(got.threshold == want.threshold);
        CHECK(got.eer >= 0.0);
        CHECK(got.eer <= 1.0);
    }
}

TEST_CASE("eer is symmetric under negating scores and swapping labels") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> s(40), neg(40);
        std::vector<int> l(40), swapped(40);
        for (std::size_t i = 0; i < 40; ++i) {
            l[i] = static_cast<int>(i % 2);
            s[i] = rng.normal() + 0.5 * l[i];
            neg[i] = -s[i];
            swapped[i] = 1 - l[i];
        }
        CHECK(compute_eer(s, l).eer == doctest::Approx(compute_eer(neg, swapped).eer).epsilon(1e-12));
    }
}

TEST_CASE("sub-task labels") {
    const auto rf_fb = mixed_row(Authenticity::real, Authenticity::fake);
    CHECK(subtask_label(rf_fb, Task::foreground) == 1);
    CHECK(subtask_label(rf_fb, Task::background) == 0);
    const auto ff_fb = mixed_row(Authenticity::fake, Authenticity::fake);
    CHECK(subtask_label(ff_fb, Task::foreground) == 0);
    CHECK(subtask_label(ff_fb, Task::background) == 0);

    mix::ManifestRow speech;
    speech.kind = mix::RowKind::single;
    speech.fg_label = Authenticity::real;
    CHECK(subtask_label(speech, Task::foreground) == 1);
    CHECK(!subtask_label(speech, Task::background).has_value());
}

TEST_CASE("snr buckets") {
    Rng rng(8);
    std::vector<ScoredRow> rows;
    const std::vector<double> snrs{-5, 0, 5, 10, 15, 20};
    for (std::size_t i = 0; i < 120; ++i) {
        ScoredRow r;
        r.utt_id = "m" + std::to_string(i);
        r.label = static_cast<int>(i % 2);
        r.score = rng.normal() + r.label;
        r.snr_db = snrs[(i / 2) % 6];
        r.fg_label = r.label ? Authenticity::real : Authenticity::fake;
        r.bg_label = Authenticity::real;
        rows.push_back(r);
    }
    const auto rep = build_report(rows, Task::foreground, snrs);
    REQUIRE(rep.buckets.size() == 6);
    std::size_t total = 0;
    for (const auto& b : rep.buckets) {
        total += b.count;
        std::vector<double> s;
        std::vector<int> l;
        for (const auto& r : rows) {
            if (*r.snr_db == b.snr_db) {
                s.push_back(r.score);
                l.push_back(r.label);
            }
        }
        REQUIRE(b.eer.has_value());
        CHECK(*b.eer == oracle::eer_exhaustive(s, l).eer);
    }
    CHECK(total == rep.mixed);
    CHECK(rep.combinations[0] == 60);
    CHECK(rep.combinations[1] == 60);

    for (auto& r : rows) r.snr_db = 0.0;
    const auto flat = build_report(rows, Task::foreground, snrs);
    std::size_t populated = 0;
    for (const auto& b : flat.buckets) {
        if (b.count == 0) {
            CHECK(!b.eer.has_value());
            continue;
        }
        ++populated;
        CHECK(*b.eer == flat.overall_eer);
    }
    CHECK(populated == 1);
    CHECK(report_csv(flat).find("snr,5,0,0,0,\n") != std::string::npos);
}

TEST_CASE("training bookkeeping, determinism and the freeze contract") {
    auto mc = model::small_config(8, 8, 2, 2);
    model::PromptModel<double> m(mc);
    const auto samples = random_samples(m, 4, 1);

    TrainConfig tc;
    tc.epochs = 1;
    tc.seed = 3;
    std::vector<std::vector<double>> frozen;
    for (const auto& t : m.frozen_parameters()) frozen.emplace_back(t.data().begin(), t.data().end());
    const auto r1 = train<double>(m, samples, {}, tc);
    REQUIRE(r1.log.size() == 1);
    CHECK(std::isfinite(r1.log[0].train_loss));
    CHECK(!r1.log[0].dev_eer.has_value());
    const auto after = m.frozen_parameters();
    for (std::size_t i = 0; i < after.size(); ++i) {
        CHECK(std::equal(after[i].data().begin(), after[i].data().end(), frozen[i].begin()));
    }

    model::PromptModel<double> m2(mc);
    const auto r2 = train<double>(m2, samples, {}, tc);
    CHECK(r1.log[0].train_loss == r2.log[0].train_loss);

    CHECK_THROWS_AS(train<double>(m2, std::span<const Sample>(), {}, tc), DataError);
}

TEST_CASE("training restores the best dev epoch") {
    auto mc = model::small_config(8, 8, 2, 1);
    model::PromptModel<double> m(mc);
    const auto train_set = random_samples(m, 16, 2);
    const auto dev = random_samples(m, 8, 3);
    TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 4;
    const auto r = train<double>(m, train_set, dev, tc);
    REQUIRE(r.best_dev_eer.has_value());
    double best = 2.0;
    for (const auto& e : r.log) best = std::min(best, *e.dev_eer);
    CHECK(*r.best_dev_eer == best);
    const auto scored = score_samples(m, dev);
    std::vector<double> s;
    std::vector<int> l;
    for (const auto& row : scored) {
        s.push_back(row.score);
        l.push_back(row.label);
    }
    CHECK(compute_eer(s, l).eer == best);
    CHECK(epoch_log_csv(r.log).rfind("epoch,train_loss,dev_eer\n", 0) == 0);
}

TEST_CASE("ablation variants and CSV round trip") {
    const auto vs = ablation_variants();
    REQUIRE(vs.size() == 7);
    CHECK(vs.front().name == "P_base");
    CHECK(vs.back().streams.count() == 3);
    std::size_t singles = 0, pairs = 0;
    for (const auto& v : vs) (v.streams.count() == 1 ? singles : pairs) += v.streams.count() < 3 ? 1 : 0;
    CHECK(singles == 3);
    CHECK(pairs == 3);

    AblationTable t;
    for (const auto& v : vs) {
        AblationRow r;
        r.variant = v.name;
        r.streams = v.streams;
        r.seeds = {1, 2, 3};
        r.fg_eers = {0.1 / 3.0, 0.02, 0.5};
        r.bg_eers = {0.25, 1.0 / 7.0, 0.0};
        r.fg_mean = (r.fg_eers[0] + r.fg_eers[1] + r.fg_eers[2]) / 3.0;
        r.bg_mean = (r.bg_eers[0] + r.bg_eers[1] + r.bg_eers[2]) / 3.0;
        t.rows.push_back(r);
    }
    const auto back = parse_ablation_csv(ablation_csv(t));
    REQUIRE(back.rows.size() == 7);
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(back.rows[i].variant == t.rows[i].variant);
        CHECK(back.rows[i].streams.label() == t.rows[i].streams.label());
        CHECK(back.rows[i].seeds == t.rows[i].seeds);
        CHECK(back.rows[i].fg_eers == t.rows[i].fg_eers);
        CHECK(back.rows[i].bg_eers == t.rows[i].bg_eers);
        CHECK(back.rows[i].fg_mean == t.rows[i].fg_mean);
    }
    CHECK(ablation_csv(back) == ablation_csv(t));
    CHECK_THROWS_AS(parse_ablation_csv("nope\n"), DataError);
}

TEST_CASE("train config keys") {
    TrainConfig c;
    for (const auto& [k, v] : c.to_map()) CHECK(c.set(k, v));
    CHECK(c.set("task", "bg"));
    CHECK(c.task == Task::background);
    CHECK(!c.set("nonsense", "1"));
    c.lr = -1.0;
    CHECK_THROWS_AS(c.validate(), UsageError);
}
