#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "snpforge/diffusion.hpp"

using namespace snpforge;

namespace {

LdmConfig tiny_cfg() {
    LdmConfig c;
    c.model_channels = 8;
    c.mults = {1, 2};
    c.head_dim = 8;
    c.embed_dim = 8;
    c.norm_groups = 4;
    c.batch = 32;
    return c;
}

} // namespace

TEST_CASE("scaled-linear schedule hits both endpoints exactly") {
    const auto s = NoiseSchedule::build(1000, 0.00085, 0.012);
    CHECK(s.beta.front() == doctest::Approx(0.00085).epsilon(1e-12));
    CHECK(s.beta.back() == doctest::Approx(0.012).epsilon(1e-12));
}

TEST_CASE("alpha_bar is strictly decreasing and starts near one") {
    const auto s = NoiseSchedule::build(1000, 0.00085, 0.012);
    CHECK(s.alpha_bar[0] > 0.999 - 1e-3);
    for (int t = 1; t < s.t_steps; ++t) {
        CHECK(s.alpha_bar[static_cast<size_t>(t)] < s.alpha_bar[static_cast<size_t>(t - 1)]);
        CHECK(s.alpha_bar[static_cast<size_t>(t)] > 0.0);
        CHECK(s.alpha_bar[static_cast<size_t>(t)] < 1.0);
    }
}

TEST_CASE("invalid schedule endpoints are rejected") {
    CHECK_THROWS_AS(NoiseSchedule::build(1000, 0.0, 0.01), std::invalid_argument);
    CHECK_THROWS_AS(NoiseSchedule::build(1000, 0.02, 0.01), std::invalid_argument);
    CHECK_THROWS_AS(NoiseSchedule::build(1000, 0.01, 1.0), std::invalid_argument);
}

TEST_CASE("q_sample interpolates between signal and noise") {
    const auto s = NoiseSchedule::build(1000, 0.00085, 0.012);
    Rng rng(1);
    auto z0 = Tensorf::randn({3, 1, 4}, rng);
    auto zero = Tensorf::zeros({3, 1, 4});
    // eps = 0 -> z_t = sqrt(abar) z0
    const std::vector<int> t{0, 500, 999};
    auto zt = q_sample(z0, t, zero, s);
    for (int64_t i = 0; i < 3; ++i) {
        const double ab = s.alpha_bar[static_cast<size_t>(t[static_cast<size_t>(i)])];
        for (int64_t j = 0; j < 4; ++j)
            CHECK(zt.at({i, 0, j}) ==
                  doctest::Approx(std::sqrt(ab) * z0.at({i, 0, j})).epsilon(1e-5));
    }
    // t = 0 keeps z_t within the sqrt(1 - abar_0) band of z0
    auto eps = Tensorf::randn({3, 1, 4}, rng);
    auto zt0 = q_sample(z0, {0, 0, 0}, eps, s);
    const double band = std::sqrt(1.0 - s.alpha_bar[0]);
    for (size_t i = 0; i < zt0.data().size(); ++i) {
        const double drift = std::abs(zt0.data()[i] - std::sqrt(s.alpha_bar[0]) * z0.data()[i]);
        CHECK(drift <= band * (std::abs(eps.data()[i]) + 1e-4));
    }
}

TEST_CASE("q_sample inversion recovers z0 to 1e-6 in f64") {
    const auto s = NoiseSchedule::build(1000, 0.00085, 0.012);
    Rng rng(2);
    for (const int t : {0, 123, 777, 999}) {
        const double ab = s.alpha_bar[static_cast<size_t>(t)];
        for (int rep = 0; rep < 50; ++rep) {
            const double z0 = rng.normal();
            const double eps = rng.normal();
            const double zt = std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
            const double back = (zt - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
            CHECK(std::abs(back - z0) < 1e-6);
        }
    }
}

TEST_CASE("cfg guidance endpoints and affine identity") {
    auto m = LdmModel::init(tiny_cfg(), 2, 4, 3);
    Rng rng(4);
    auto z = Tensorf::randn({2, 2, 4}, rng);

    EpsTrace t1;
    auto e1 = cfg_epsilon(m, z, 500.0, 1, 1.0, &t1);
    CHECK(t1.calls.size() == 1); // w == 1 is a single conditional call
    CHECK(t1.calls[0].label == 1);

    EpsTrace t0;
    auto e0 = cfg_epsilon(m, z, 500.0, 1, 0.0, &t0);
    CHECK(t0.calls.size() == 2);
    auto eu = m.epsilon(z, {500.0, 500.0}, {ClassEmbedder::kUncond, ClassEmbedder::kUncond});
    for (size_t i = 0; i < e0.data().size(); ++i)
        CHECK(e0.data()[i] == doctest::Approx(eu.data()[i]).epsilon(1e-6));

    auto e2 = cfg_epsilon(m, z, 500.0, 1, 2.0);
    auto ec = m.epsilon(z, {500.0, 500.0}, {1, 1});
    // e(2) - e(0) == 2 (e_c - e_u)
    for (size_t i = 0; i < e2.data().size(); ++i) {
        const double lhs = static_cast<double>(e2.data()[i]) - e0.data()[i];
        const double rhs = 2.0 * (static_cast<double>(ec.data()[i]) - eu.data()[i]);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
    }
}

TEST_CASE("single-step sampling is finite and seeded sampling is reproducible") {
    auto m = LdmModel::init(tiny_cfg(), 2, 4, 5);
    SamplerConfig sc;
    sc.steps = 1;
    sc.guidance = 5.0;
    auto one = euler_sample(m, sc, 1, 3, 42);
    CHECK(one.shape() == Shape{3, 2, 4});
    for (const auto v : one.data()) CHECK(std::isfinite(v));

    sc.steps = 8;
    auto a = euler_sample(m, sc, 0, 4, 43);
    auto b = euler_sample(m, sc, 0, 4, 43);
    CHECK(a.data() == b.data());
    auto c = euler_sample(m, sc, 0, 4, 44);
    CHECK(a.data() != c.data());

    sc.steps = 5000;
    CHECK_THROWS_AS(euler_sample(m, sc, 0, 1, 1), std::invalid_argument);
}

TEST_CASE("guidance-one sampling makes exactly the plain conditional call sequence") {
    auto m = LdmModel::init(tiny_cfg(), 2, 4, 6);
    EpsTrace traced;
    SamplerConfig sc;
    sc.steps = 12;
    sc.guidance = 1.0;
    sc.trace = &traced;
    auto a = euler_sample(m, sc, 1, 2, 77);

    // plain conditional sampler over the same integrator
    EpsTrace manual;
    SamplerConfig sc2;
    sc2.steps = 12;
    auto b = euler_integrate(m.schedule, sc2, 2, 4, 2, 77,
                             [&](const Tensorf& z_in, double, double t) {
                                 manual.calls.push_back({t, 1, 0});
                                 return m.epsilon(z_in,
                                                  std::vector<double>(2, t),
                                                  std::vector<int64_t>(2, 1));
                             });
    CHECK(a.data() == b.data());
    REQUIRE(traced.calls.size() == manual.calls.size());
    for (size_t i = 0; i < traced.calls.size(); ++i) {
        CHECK(traced.calls[i].t == manual.calls[i].t);
        CHECK(traced.calls[i].label == 1);
    }
}

TEST_CASE("mse objective is zero when the prediction equals the noise") {
    Rng rng(7);
    auto eps = Tensorf::randn({4, 2, 4}, rng);
    auto diff = sub(eps, eps);
    CHECK(mean_all(mul(diff, diff)).item() == doctest::Approx(0.0));
}

TEST_CASE("a zero-output denoiser scores the unit second moment") {
    // conv_out is zero-initialized, so a fresh UNet predicts exactly zero and
    // the loss approaches E eps^2 = 1 per element.
    auto m = LdmModel::init(tiny_cfg(), 2, 4, 8);
    Rng rng(9);
    auto z0 = Tensorf::randn({256, 2, 4}, rng);
    std::vector<int64_t> labels(256, 0);
    Rng lrng(10);
    const auto loss = ldm_loss(m, z0, labels, 0.0, lrng);
    CHECK(loss.item() == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("label dropout hits the requested rate") {
    auto m = LdmModel::init(tiny_cfg(), 2, 4, 11);
    Rng rng(12);
    int64_t uncond = 0, total = 0;
    for (int rep = 0; rep < 40; ++rep) {
        auto z0 = Tensorf::randn({256, 2, 4}, rng);
        std::vector<int64_t> labels(256, 1);
        std::vector<int64_t> used;
        (void)ldm_loss(m, z0, labels, 0.2, rng, &used);
        for (const auto l : used) {
            uncond += l == ClassEmbedder::kUncond;
            ++total;
        }
    }
    const double frac = static_cast<double>(uncond) / static_cast<double>(total);
    CHECK(std::abs(frac - 0.2) < 0.02);
}

TEST_CASE("euler integration recovers a closed-form Gaussian target") {
    // Target N(mean, tau^2): the exact noise prediction at noise level sigma
    // is sigma * (x - mean) / (tau^2 + sigma^2) for x = z0 + sigma * eps.
    const auto schedule = NoiseSchedule::build(1000, 0.00085, 0.012);
    const double mean = 2.5, tau = 0.8;
    SamplerConfig sc;
    sc.steps = 200;
    const int64_t n = 4000;
    auto samples = euler_integrate(
        schedule, sc, 1, 1, n, 123, [&](const Tensorf& z_in, double sigma, double) {
            // undo the 1/sqrt(1+sigma^2) rescaling to recover x = z0 + sigma eps
            auto x = scale(z_in, static_cast<float>(std::sqrt(1.0 + sigma * sigma)));
            auto eps = scale(add_scalar(x, static_cast<float>(-mean)),
                             static_cast<float>(sigma / (tau * tau + sigma * sigma)));
            return eps;
        });
    double acc = 0;
    for (const auto v : samples.data()) acc += v;
    const double sample_mean = acc / static_cast<double>(n);
    CHECK(std::abs(sample_mean - mean) < 0.05 * tau);
}

TEST_CASE("training history shows warmup then cosine decay and beats a fresh model") {
    Rng rng(13);
    // latents from two labeled Gaussian blobs
    const int64_t n = 192;
    auto lat = Tensorf::zeros({n, 1, 4});
    std::vector<int64_t> labels(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        labels[static_cast<size_t>(i)] = i % 2;
        for (int64_t j = 0; j < 4; ++j)
            lat.data()[static_cast<size_t>(i * 4 + j)] =
                static_cast<float>(rng.normal() * 0.3 + (i % 2 ? 1.5 : -1.5));
    }
    auto cfg = tiny_cfg();
    cfg.epochs = 40;
    cfg.lr = 2e-3;
    auto res = train_ldm(lat, labels, lat, labels, cfg, 14);
    CHECK_FALSE(res.aborted_nan);
    REQUIRE(res.history.size() == 40);
    CHECK(res.history[0].lr < res.history[5].lr);
    CHECK(res.history[5].lr == doctest::Approx(cfg.lr));
    CHECK(res.history.back().lr < 0.05 * cfg.lr);

    auto fresh = LdmModel::init(cfg, 1, 4, 999);
    fresh.latent_scale = res.model.latent_scale;
    const double trained = ldm_validation_loss(res.model, lat, labels, 15);
    const double untrained = ldm_validation_loss(fresh, lat, labels, 15);
    CHECK(trained < untrained);
}

TEST_CASE("checkpoint round trip preserves the noise prediction") {
    auto m = LdmModel::init(tiny_cfg(), 2, 4, 16);
    m.latent_scale = 0.37f;
    m.train_cases = 11;
    m.train_controls = 29;
    save_ldm(m, "ldm_test_ckpt.snpf");
    auto loaded = load_ldm("ldm_test_ckpt.snpf");
    CHECK(loaded.latent_scale == doctest::Approx(0.37f));
    CHECK(loaded.train_cases == 11);
    CHECK(matched_counts(loaded).at(1) == 11);
    CHECK(augmented_counts(loaded).at(1) == 29);
    Rng rng(17);
    auto z = Tensorf::randn({2, 2, 4}, rng);
    auto a = m.epsilon(z, {10.0, 700.0}, {0, 1});
    auto b = loaded.epsilon(z, {10.0, 700.0}, {0, 1});
    CHECK(a.data() == b.data());
    std::remove("ldm_test_ckpt.snpf");
}

TEST_CASE("latent dataset container round trips") {
    Rng rng(18);
    LatentDataset d;
    d.train_latents = Tensorf::randn({6, 2, 4}, rng);
    d.val_latents = Tensorf::randn({3, 2, 4}, rng);
    d.train_labels = {0, 1, 0, 1, 1, 0};
    d.val_labels = {1, 0, 1};
    save_latents(d, "latents_test.snpf");
    const auto back = load_latents("latents_test.snpf");
    CHECK(back.train_latents.data() == d.train_latents.data());
    CHECK(back.val_labels == d.val_labels);
    std::remove("latents_test.snpf");
}
