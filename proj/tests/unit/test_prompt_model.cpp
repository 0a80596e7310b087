#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "mixforge/prompt_model.hpp"
#include "mixforge/rng.hpp"
#include "mixforge/signal_analysis.hpp"
#include "mixforge/train_eval.hpp"

using namespace mixforge;
using namespace mixforge::model;
using T64 = ad::Tensor<double>;

namespace {

std::vector<double> random_wave(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = 0.3 * std::sin(0.05 * static_cast<double>(i)) + 0.1 * rng.normal();
    }
    return w;
}

T64 random_tensor(ad::Shape shape, std::uint64_t seed, bool param = false) {
    Rng rng(seed);
    std::vector<double> v(ad::numel(shape));
    for (auto& x : v) x = rng.normal();
    return param ? T64::parameter(shape, v) : T64::constant(shape, v);
}

// Scalar probe with fixed random weights.
T64 probe(const T64& out, std::uint64_t seed) {
    return ad::sum(ad::mul(out, random_tensor(out.shape(), seed)));
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("feature encoder shape and determinism") {
    ModelConfig cfg;
    PromptModel<double> m(cfg);
    CHECK(cfg.frames() == 200);
    const auto wave = random_wave(64000, 1);
    const auto f = m.extract(wave);
    CHECK(f.frames == 200);
    CHECK(f.dim == 64);
    CHECK(f.h_raw.size() == 200 * 64);
    const auto again = m.extract(wave);
    CHECK(f.h_raw == again.h_raw);
    CHECK_THROWS_AS(m.extract(std::vector<double>(1000, 0.0)), DataError);

    const auto zero = m.extract(std::vector<double>(64000, 0.0));
    // Interior frames, away from the zero padding.
    for (std::size_t t = 8; t + 8 < zero.frames; ++t) {
        for (std::size_t d = 0; d < zero.dim; ++d) {
            REQUIRE(zero.h_raw[t * 64 + d] == doctest::Approx(zero.h_raw[100 * 64 + d]).epsilon(1e-12));
        }
    }
}

TEST_CASE("frequency stream matches the signal-analysis kernels") {
    auto cfg = small_config(16, 8, 4, 1);
    PromptModel<double> m(cfg);
    const auto p = random_tensor({4, 8}, 5);
    const auto out = m.frequency_stream(p);
    REQUIRE(out.shape() == ad::Shape{4, 8});

    // Reference: per-channel IF features from dsp, then the linear map.
    std::vector<double> stacked(4 * 24);
    for (std::size_t d = 0; d < 8; ++d) {
        std::vector<double> col(4);
        for (std::size_t r = 0; r < 4; ++r) col[r] = p.at(r, d);
        const auto f = dsp::multiscale_if(col, cfg.pool_window);
        for (std::size_t r = 0; r < 4; ++r) {
            stacked[r * 24 + d] = f.high[r];
            stacked[r * 24 + 8 + d] = f.all[r];
            stacked[r * 24 + 16 + d] = f.low[r];
        }
    }
    const auto& w = m.parameter("fre.linear.weight");
    const auto& b = m.parameter("fre.linear.bias");
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t o = 0; o < 8; ++o) {
            double acc = b.data()[o];
            for (std::size_t k = 0; k < 24; ++k) acc += stacked[r * 24 + k] * w.data()[k * 8 + o];
            CHECK(out.at(r, o) == doctest::Approx(acc).epsilon(1e-12));
        }
    }
}

TEST_CASE("frequency stream of a constant prompt is the bias row") {
    auto cfg = small_config(16, 8, 4, 1);
    PromptModel<double> m(cfg);
    auto bias = m.parameter("fre.linear.bias").mutable_data();
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = 0.1 * static_cast<double>(i) - 0.3;
    std::vector<double> v(32);
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t d = 0; d < 8; ++d) v[r * 8 + d] = 0.5 - 0.2 * static_cast<double>(d);
    }
    const auto out = m.frequency_stream(T64::constant({4, 8}, v));
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t d = 0; d < 8; ++d) CHECK(out.at(r, d) == doctest::Approx(bias[d]).epsilon(1e-12));
    }
    auto p1 = small_config(16, 8, 1, 1);
    p1.streams.fre = false;
    PromptModel<double> single(p1);
    CHECK_THROWS_AS(single.frequency_stream(T64::constant({1, 8}, std::vector<double>(8, 1.0))), ShapeError);
}

TEST_CASE("texture stream gate and zero-cue case") {
    auto cfg = small_config(16, 8, 4, 1);
    PromptModel<double> m(cfg);
    Features f = m.features_from_hidden(std::vector<double>(16 * 8, 0.7), 16);
    for (double v : f.psi_bar) CHECK(std::abs(v) < 1e-12);
    for (double v : f.flux) CHECK(std::abs(v) < 1e-12);

    for (auto name : {"tex.gate.fc2.weight", "tex.gate.fc2.bias"}) {
        for (auto& x : m.parameter(name).mutable_data()) x = 0.0;
    }
    const auto g = m.gate(f);
    CHECK(g.item() == 0.5);

    const auto p = random_tensor({4, 8}, 9);
    const auto out = m.texture_stream(p, g, f);
    for (std::size_t r = 0; r < 4; ++r) {
        double mean = 0.0, var = 0.0;
        for (std::size_t d = 0; d < 8; ++d) mean += 0.5 * p.at(r, d);
        mean /= 8.0;
        for (std::size_t d = 0; d < 8; ++d) var += (0.5 * p.at(r, d) - mean) * (0.5 * p.at(r, d) - mean);
        var /= 8.0;
        for (std::size_t d = 0; d < 8; ++d) {
            CHECK(out.at(r, d) == doctest::Approx((0.5 * p.at(r, d) - mean) / std::sqrt(var + 1e-5)).epsilon(1e-12));
        }
    }
}

TEST_CASE("texture stream rows are normalised and the gate stays inside (0, 1)") {
    auto cfg = small_config(16, 8, 4, 1);
    PromptModel<double> m(cfg);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        std::vector<double> h(16 * 8);
        for (auto& x : h) x = 3.0 * rng.normal();
        const auto f = m.features_from_hidden(h, 16);
        const auto g = m.gate(f);
        CHECK(g.item() > 0.0);
        CHECK(g.item() < 1.0);
        const auto out = m.texture_stream(random_tensor({4, 8}, seed), g, f);
        for (std::size_t r = 0; r < 4; ++r) {
            double mean = 0.0, var = 0.0;
            for (std::size_t d = 0; d < 8; ++d) mean += out.at(r, d);
            mean /= 8.0;
            for (std::size_t d = 0; d < 8; ++d) var += (out.at(r, d) - mean) * (out.at(r, d) - mean);
            CHECK(std::abs(mean) < 1e-4);
            CHECK(std::abs(var / 8.0 - 1.0) < 1e-4);
        }
    }
}

TEST_CASE("composite gradients pass finite differences at 1e-4 for five seeds") {
    auto cfg = small_config(16, 8, 4, 1);
    ad::GradCheckOptions opt;
    opt.tolerance = 1e-4;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        cfg.init_seed = seed;
        PromptModel<double> m(cfg);
        Rng rng(seed + 100);
        std::vector<double> h(16 * 8);
        for (auto& x : h) x = rng.normal();
        const auto f = m.features_from_hidden(h, 16);

        SUBCASE("frequency stream") {
            const auto p = random_tensor({4, 8}, seed + 1, true);
            const auto w = m.parameter("fre.linear.weight");
            const auto reports = ad::grad_check_params([&] { return probe(m.frequency_stream(p), seed); }, {p, w}, opt);
            for (const auto& r : reports) CHECK(r.max_rel_error <= 1e-4);
        }
        SUBCASE("texture stream") {
            const auto p = random_tensor({4, 8}, seed + 2, true);
            std::vector<T64> params{p};
            for (auto name : {"tex.gate.fc1.weight", "tex.gate.fc1.bias", "tex.gate.fc2.weight", "tex.gate.fc2.bias",
                              "tex.norm.gamma", "tex.norm.beta"}) {
                params.push_back(m.parameter(name));
            }
            const auto reports = ad::grad_check_params(
                [&] { return probe(m.texture_stream(p, m.gate(f), f), seed); }, params, opt);
            for (const auto& r : reports) CHECK(r.max_rel_error <= 1e-4);
        }
        SUBCASE("transformer block") {
            const auto x = random_tensor({20, 8}, seed + 3, true);
            const auto r = ad::grad_check([&](const T64& in) { return probe(m.block(0, in, 4), seed); }, x, opt);
            CHECK(r.max_rel_error <= 1e-4);
        }
        SUBCASE("loss") {
            const auto p = m.prompt_base(0);
            const auto head = m.parameter("head.fc1.weight");
            const double y = static_cast<double>(seed % 2);
            const auto reports = ad::grad_check_params(
                [&] { return train::bce_loss<double>(m.forward(f), std::span<const double>(&y, 1)); }, {p, head}, opt);
            for (const auto& r : reports) CHECK(r.max_rel_error <= 1e-4);
        }
    }
}

TEST_CASE("injection shape law and prompt dropping") {
    for (auto [frames, p] : {std::pair<std::size_t, std::size_t>{200, 4}, {16, 2}, {40, 3}}) {
        auto cfg = small_config(frames, 8, p, 3);
        PromptModel<double> m(cfg);
        const auto f = m.extract(random_wave(cfg.input_samples, frames));
        ForwardTrace<double> trace;
        m.forward(f, &trace);
        REQUIRE(trace.injected_rows.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(trace.injected_rows[i] == frames + 3 * p);
            CHECK(trace.layer_outputs[i].rows() == frames);
        }
        // The last T rows of X^(0) are H_raw.
        const auto& x0 = trace.layer_inputs[0];
        for (std::size_t t = 0; t < frames; ++t) {
            for (std::size_t d = 0; d < 8; ++d) REQUIRE(x0.at(3 * p + t, d) == f.h_raw[t * 8 + d]);
        }
    }
}

TEST_CASE("isolated prompts leave content rows as without prompts") {
    auto cfg = small_config(16, 8, 4, 1);
    PromptModel<double> m(cfg);
    const auto h = random_tensor({16, 8}, 3);
    const auto zeros = T64::zeros({4, 8});
    ForwardOptions iso;
    iso.isolate_prompts = true;
    const auto with = m.inject_and_encode(0, h, {zeros, zeros, zeros}, iso);
    const auto without = m.block(0, h, 0);
    REQUIRE(with.shape() == without.shape());
    CHECK(max_abs_diff(with.data(), without.data()) < 1e-12);

    const auto plain = m.inject_and_encode(0, h, {zeros, zeros, zeros});
    CHECK(max_abs_diff(plain.data(), without.data()) > 1e-6);
}

TEST_CASE("changing the base prompt changes the next layer's content") {
    auto cfg = small_config(16, 8, 4, 2);
    PromptModel<double> m(cfg);
    const auto h = random_tensor({16, 8}, 4);
    const auto a = m.inject_and_encode(0, h, {m.prompt_base(0)});
    const auto moved = ad::add(m.prompt_base(0), random_tensor({4, 8}, 11));
    const auto b = m.inject_and_encode(0, h, {moved});
    CHECK(max_abs_diff(a.data(), b.data()) > 1e-8);
}

TEST_CASE("classifier head") {
    auto cfg = small_config(16, 8, 4, 1);
    PromptModel<double> m(cfg);
    const auto h = random_tensor({16, 8}, 6);
    for (auto name : {"head.fc1.weight", "head.fc2.weight"}) {
        for (auto& x : m.parameter(name).mutable_data()) x = 0.0;
    }
    m.parameter("head.fc2.bias").mutable_data()[0] = 0.375;
    CHECK(m.classify(h).item() == 0.375);

    PromptModel<double> fresh(cfg);
    std::vector<double> rev(16 * 8);
    for (std::size_t t = 0; t < 16; ++t) {
        for (std::size_t d = 0; d < 8; ++d) rev[t * 8 + d] = h.at(15 - t, d);
    }
    CHECK(fresh.classify(T64::constant({16, 8}, rev)).item() ==
          doctest::Approx(fresh.classify(h).item()).epsilon(1e-12));
}

TEST_CASE("gradient reaches every prompt bank through the full stack") {
    auto cfg = small_config(16, 8, 4, 2);
    PromptModel<double> m(cfg);
    const auto f = m.extract(random_wave(cfg.input_samples, 8));
    const double y = 1.0;
    train::bce_loss<double>(m.forward(f), std::span<const double>(&y, 1)).backward();
    for (std::size_t i = 0; i < 2; ++i) {
        for (const auto* t : {&m.prompt_base(i), &m.prompt_fre(i), &m.prompt_tex(i)}) {
            REQUIRE(t->has_grad());
            double norm = 0.0;
            for (double g : t->grad()) norm += g * g;
            CHECK(norm > 0.0);
        }
    }
    for (const auto& t : m.frozen_parameters()) CHECK(!t.has_grad());
}

TEST_CASE("parameter partition") {
    ModelConfig cfg;
    PromptModel<double> m(cfg);
    std::set<std::string> names;
    std::size_t prompt_values = 0;
    for (const auto& p : m.parameters()) {
        CHECK(names.insert(p.name).second);
        CHECK(p.tensor.requires_grad() == p.trainable);
        const bool frozen_group = p.name.rfind("encoder.", 0) == 0 || p.name.rfind("block", 0) == 0;
        CHECK(frozen_group == !p.trainable);
        if (p.name.rfind("prompt.", 0) == 0) prompt_values += p.tensor.numel();
    }
    CHECK(prompt_values == 3 * cfg.n_layers * cfg.prompt_len * cfg.embed_dim);
    CHECK(m.trainable_parameters().size() + m.frozen_parameters().size() == m.parameters().size());
    CHECK(m.trainable_count() + m.frozen_count() ==
          [&] { std::size_t n = 0; for (const auto& p : m.parameters()) n += p.tensor.numel(); return n; }());
    CHECK(m.trainable_count() * 4 < m.frozen_count());
    MESSAGE("trainable " << m.trainable_count() << ", frozen " << m.frozen_count());
}

TEST_CASE("frozen parameters survive optimiser steps bit for bit") {
    auto cfg = small_config(16, 8, 4, 2);
    PromptModel<float> m(cfg);
    std::vector<std::vector<float>> snapshot;
    for (const auto& t : m.frozen_parameters()) snapshot.emplace_back(t.data().begin(), t.data().end());
    const auto f = m.extract(random_wave(cfg.input_samples, 2));
    auto params = m.trainable_parameters();
    train::AdamWState state;
    train::TrainConfig tc;
    for (int step = 0; step < 10; ++step) {
        for (auto& p : params) p.zero_grad();
        const float y = static_cast<float>(step % 2);
        train::bce_loss<float>(m.forward(f), std::span<const float>(&y, 1)).backward();
        train::adamw_step<float>(params, state, tc);
    }
    const auto frozen = m.frozen_parameters();
    for (std::size_t i = 0; i < frozen.size(); ++i) {
        CHECK(std::equal(frozen[i].data().begin(), frozen[i].data().end(), snapshot[i].begin()));
    }
}

TEST_CASE("scores are deterministic for a seed") {
    auto cfg = small_config(16, 8, 4, 2);
    cfg.init_seed = 17;
    PromptModel<double> a(cfg), b(cfg);
    const auto wave = random_wave(cfg.input_samples, 3);
    CHECK(a.score(a.extract(wave)) == b.score(b.extract(wave)));
    cfg.init_seed = 18;
    PromptModel<double> c(cfg);
    CHECK(c.score(c.extract(wave)) != a.score(a.extract(wave)));
}

TEST_CASE("stream variants and carried prompts keep the row law") {
    for (const auto& v : train::ablation_variants()) {
        auto cfg = small_config(16, 8, 2, 2);
        cfg.streams = v.streams;
        PromptModel<double> m(cfg);
        const auto f = m.extract(random_wave(cfg.input_samples, 4));
        ForwardTrace<double> trace;
        m.forward(f, &trace);
        for (auto rows : trace.injected_rows) CHECK(rows == 16 + v.streams.count() * 2);
    }
    auto cfg = small_config(16, 8, 2, 3);
    PromptModel<double> plain(cfg);
    cfg.carry_prompts = true;
    PromptModel<double> carry(cfg);
    const auto f = plain.extract(random_wave(cfg.input_samples, 5));
    ForwardTrace<double> trace;
    const double s_carry = carry.forward(f, &trace).item();
    for (auto rows : trace.injected_rows) CHECK(rows == 16 + 3 * 2);
    CHECK(s_carry != plain.forward(f).item());
}

TEST_CASE("config keys round trip and reject nonsense") {
    ModelConfig c;
    for (const auto& [k, v] : c.to_map()) CHECK(c.set(k, v));
    CHECK(!c.set("no_such_key", "1"));
    CHECK_THROWS_AS(c.set("n_layers", "four"), UsageError);
    CHECK_THROWS_AS(c.set("streams", "base+foo"), UsageError);
    c.set("streams", "fre+tex");
    CHECK(c.streams.count() == 2);
    CHECK(!c.streams.base);
    c.embed_dim = 10;
    c.n_heads = 4;
    CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("checkpoint round trip") {
    auto cfg = small_config(16, 8, 4, 2);
    cfg.init_seed = 3;
    PromptModel<double> m(cfg);
    for (auto& x : m.parameter("prompt.base.1").mutable_data()) x += 0.125;
    const auto dir = std::filesystem::temp_directory_path() / "mixforge_test_ckpt";
    std::filesystem::create_directories(dir);
    save_checkpoint(m, dir / "m.ckpt", {{"task", "foreground"}});
    const auto ck = read_checkpoint(dir / "m.ckpt");
    CHECK(ck.metadata.at("task") == "foreground");
    CHECK(ck.config.to_map() == cfg.to_map());
    const auto back = load_model<double>(ck);
    const auto f = m.extract(random_wave(cfg.input_samples, 1));
    CHECK(back.score(f) == m.score(f));
    for (std::size_t i = 0; i < ck.tensors.size(); ++i) CHECK(ck.tensors[i].trainable == m.parameters()[i].trainable);

    std::ofstream(dir / "bad.ckpt") << "not a checkpoint";
    CHECK_THROWS_AS(read_checkpoint(dir / "bad.ckpt"), DataError);
}
