#include <catch2/catch_amalgamated.hpp>
#include <array>
#include <cmath>

#include "iba/bottleneck.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace iba;
using Catch::Approx;

TEST_CASE("feature statistics", "[bottleneck]") {
    SECTION("constant maps floor the std") {
        std::vector<std::vector<float>> maps(5, std::vector<float>(6, 4.2f));
        auto st = stats_from_maps<float>(maps, {1, 2, 3});
        for (size_t i = 0; i < st.mu.size(); ++i) {
            REQUIRE(st.mu[i] == Approx(4.2).epsilon(1e-6));
            REQUIRE(st.sigma[i] == Approx(kSigmaFloor));
        }
    }
    SECTION("two samples 0 and 2 give mu 1 and sigma sqrt(2)") {
        std::vector<std::vector<float>> maps{{0.0f}, {2.0f}};
        auto st = stats_from_maps<float>(maps, {1, 1, 1});
        REQUIRE(st.mu[0] == Approx(1.0));
        REQUIRE(st.sigma[0] == Approx(std::sqrt(2.0)));  // unbiased n-1 variance
        REQUIRE(st.n_samples == 2);
    }
    SECTION("fewer than two samples is an error") {
        std::vector<std::vector<float>> maps{{1.0f}};
        REQUIRE_THROWS_AS(stats_from_maps<float>(maps, {1, 1, 1}), std::invalid_argument);
        REQUIRE_THROWS_AS(estimate_stats(testfx::fixture().model, "conv3", testfx::fixture().dataset, 1),
                          std::invalid_argument);
    }
    SECTION("streaming estimate matches a two-pass oracle over 100 samples") {
        Rng rng(33);
        std::vector<std::vector<double>> maps(100, std::vector<double>(24));
        for (auto& m : maps)
            for (auto& v : m) v = rng.normal(0.5, 2.0);
        auto st = stats_from_maps<double>(maps, {2, 3, 4});
        std::vector<double> mu, sigma;
        oracle::two_pass_stats(maps, mu, sigma);
        for (size_t i = 0; i < mu.size(); ++i) {
            REQUIRE(std::abs(st.mu[i] - mu[i]) < 1e-5);
            REQUIRE(std::abs(st.sigma[i] - sigma[i]) < 1e-5);
        }
    }
    SECTION("estimate_stats agrees with direct forward collection") {
        const auto& fx = testfx::fixture();
        auto st = estimate_stats(fx.model, "conv3", fx.dataset, 16);
        std::vector<std::vector<float>> maps;
        for (int i = 0; i < 16; ++i) {
            auto x = to_tensor<float>(fx.dataset.train(i), 1, 64);
            auto r = forward_to_tap(fx.model, x, "conv3");
            maps.emplace_back(r.data(), r.data() + r.size());
        }
        auto ref = stats_from_maps<float>(maps, {16, 32, 32});
        for (size_t i = 0; i < ref.mu.size(); ++i) {
            REQUIRE(st.mu[i] == Approx(ref.mu[i]).margin(1e-5));
            REQUIRE(st.sigma[i] == Approx(ref.sigma[i]).margin(1e-4));
        }
        REQUIRE(st.n_samples == 16);
    }
    SECTION("stats archive uses mu/sigma names and round trips") {
        const auto tmp = std::filesystem::temp_directory_path() / "iba_test_stats.iba";
        const auto& st = testfx::fixture().stats_conv3;
        save_stats(tmp.string(), st);
        auto ts = load_archive(tmp.string());
        REQUIRE_NOTHROW(archive_find(ts, "mu"));
        REQUIRE_NOTHROW(archive_find(ts, "sigma"));
        auto rt = load_stats(tmp.string());
        REQUIRE(rt.shape == st.shape);
        REQUIRE(rt.mu == st.mu);
        REQUIRE(rt.sigma == st.sigma);
        std::filesystem::remove(tmp);
    }
}

namespace {
FeatureStatsT<double> toy_stats(int c, int h, int w, double mu, double sigma) {
    FeatureStatsT<double> st;
    st.shape = {c, h, w};
    st.n_samples = 100;
    st.mu.assign(static_cast<size_t>(c) * h * w, mu);
    st.sigma.assign(static_cast<size_t>(c) * h * w, sigma);
    return st;
}
}  // namespace

TEST_CASE("bottleneck forward (noise injection)", "[bottleneck]") {
    auto st = toy_stats(2, 4, 4, 0.7, 1.3);
    auto r = TensorT<double>::filled({2, 4, 4}, 0.7);

    SECTION("lambda 1 transmits the signal unchanged") {
        auto mask = AlphaMaskT<double>::init({2, 4, 4}, 1.0, 100.0);
        auto z = bottleneck_forward(r, st, mask, 1);
        for (int i = 0; i < z.size(); ++i) REQUIRE(z.data()[i] == Approx(0.7).margin(1e-12));
    }
    SECTION("lambda 0 yields pure noise with the feature mean") {
        auto mask = AlphaMaskT<double>::init({2, 4, 4}, 0.0, -100.0);
        double acc = 0;
        const int draws = 400;
        for (int k = 0; k < draws; ++k) {
            auto z = bottleneck_forward(r, st, mask, static_cast<uint64_t>(k));
            for (int i = 0; i < z.size(); ++i) acc += z.data()[i];
        }
        acc /= draws * r.size();
        REQUIRE(acc == Approx(0.7).margin(0.03));
    }
    SECTION("fixed seed, lambda 0.5, r = mu reproduces the mixing formula") {
        auto mask = AlphaMaskT<double>::init({2, 4, 4}, 0.0, 0.0);  // sigmoid(0) = 0.5, no blur
        auto z = bottleneck_forward(r, st, mask, 77);
        Rng rng(77);
        auto eps = draw_noise(st, rng);
        for (int i = 0; i < z.size(); ++i) {
            const double expect = 0.7 + 0.5 * (eps.data()[i] - 0.7);
            REQUIRE(z.data()[i] == Approx(expect).epsilon(1e-12));
        }
    }
    SECTION("derived lambda stays in [0,1] for arbitrary alpha") {
        Rng rng(6);
        AlphaMaskT<double> mask;
        mask.sigma_s = 1.0;
        mask.alpha = TensorT<double>::from_data({1, 6, 6}, oracle::random_vec(36, rng, -30, 30), true);
        auto lam = mask.lambda();
        for (int i = 0; i < lam.size(); ++i) {
            REQUIRE(lam.data()[i] >= 0.0);
            REQUIRE(lam.data()[i] <= 1.0);
        }
    }
}

TEST_CASE("information loss closed form", "[bottleneck]") {
    auto st = toy_stats(1, 1, 1, 0.0, 1.0);

    auto kl_of = [&st](double lambda, double r_prime) {
        auto lam = TensorT<double>::from_data({1, 1, 1}, {lambda});
        auto r = TensorT<double>::from_data({1, 1, 1}, {r_prime});
        auto il = information_loss(r, st, lam);
        return il.total.item();
    };

    SECTION("lambda 0 gives zero information loss") {
        REQUIRE(kl_of(0.0, 1.7) == Approx(0.0).margin(1e-12));
    }
    SECTION("lambda 0.5 at r' = 0 equals ln 2 + 0.125 - 0.5") {
        const double expect = std::log(2.0) + 0.125 - 0.5;
        REQUIRE(expect == Approx(0.318147).margin(5e-7));  // value quoted to 6 digits
        REQUIRE(kl_of(0.5, 0.0) == Approx(expect).epsilon(1e-12));
        REQUIRE(kl_of(0.5, 0.0) == Approx(oracle::kl_quadrature(0.5, 0.0)).margin(1e-9));
    }
    SECTION("sigmoid(5) at r' = 1 matches the quadrature oracle within 1e-6") {
        const double lam = 1.0 / (1.0 + std::exp(-5.0));
        REQUIRE(kl_of(lam, 1.0) == Approx(oracle::kl_quadrature(lam, 1.0)).margin(1e-6));
    }
    SECTION("closed form matches quadrature on a 20x20 grid") {
        for (int i = 0; i < 20; ++i)
            for (int j = 0; j < 20; ++j) {
                const double lam = 0.01 + (0.99 - 0.01) * i / 19.0;
                const double rp = -3.0 + 6.0 * j / 19.0;
                REQUIRE(kl_of(lam, rp) == Approx(oracle::kl_quadrature(lam, rp)).margin(1e-6));
            }
    }
    SECTION("lambda at or above the clamp stays finite with zero slope") {
        auto lam = TensorT<double>::from_data({1, 1, 1}, {1.0}, true);
        auto r = TensorT<double>::from_data({1, 1, 1}, {0.5});
        auto kl = kl_per_element(lam, r);
        REQUIRE(std::isfinite(kl.item()));
        backward(sum_all(kl));
        REQUIRE(lam.grad()[0] == 0.0);
    }
    SECTION("per-element loss is non-negative everywhere") {
        Rng rng(10);
        auto st2 = toy_stats(2, 3, 3, 0.3, 0.9);
        auto lam = TensorT<double>::from_data({2, 3, 3},
                                              oracle::random_vec(18, rng, 0.0, 1.0));
        auto r = TensorT<double>::from_data({2, 3, 3}, oracle::random_vec(18, rng, -2, 2));
        auto il = information_loss(r, st2, lam);
        for (int i = 0; i < il.per_element.size(); ++i) REQUIRE(il.per_element.data()[i] >= -1e-15);
    }
    SECTION("gradient of the KL against finite differences") {
        Rng rng(19);
        auto st2 = toy_stats(1, 4, 4, 0.2, 1.1);
        auto alpha = TensorT<double>::from_data({1, 4, 4}, oracle::random_vec(16, rng, -2, 2), true);
        auto r = TensorT<double>::from_data({1, 4, 4}, oracle::random_vec(16, rng, -1.5, 1.5));
        auto fwd = [&] {
            auto lam = gaussian_blur(sigmoid(alpha), 1.0);
            return information_loss(r, st2, lam).total;
        };
        auto v = oracle::fd_check(fwd, {alpha}, 24, rng);
        REQUIRE(v.max_rel_err < 1e-4);
    }
}

TEST_CASE("upper bound on mutual information (discrete oracle)", "[bottleneck]") {
    Rng rng(55);
    for (int draw = 0; draw < 4; ++draw) {
        std::vector<double> r(8), p(8);
        double psum = 0;
        for (int i = 0; i < 8; ++i) {
            r[static_cast<size_t>(i)] = rng.uniform(-2, 2);
            p[static_cast<size_t>(i)] = rng.uniform(0.05, 1.0);
            psum += p[static_cast<size_t>(i)];
        }
        for (auto& v : p) v /= psum;
        const double lambda = rng.uniform(0.05, 0.95);
        double mu = 0;
        for (int i = 0; i < 8; ++i) mu += p[static_cast<size_t>(i)] * r[static_cast<size_t>(i)];
        double var = 0;
        for (int i = 0; i < 8; ++i)
            var += p[static_cast<size_t>(i)] * (r[static_cast<size_t>(i)] - mu) * (r[static_cast<size_t>(i)] - mu);
        const double sigma = std::sqrt(var);

        double li = 0;
        for (int i = 0; i < 8; ++i)
            li += p[static_cast<size_t>(i)] * oracle::kl_closed(lambda, (r[static_cast<size_t>(i)] - mu) / sigma);
        const double mi = oracle::mixture_mutual_information(r, p, lambda, mu, sigma);
        INFO("draw " << draw << " MI " << mi << " L_I " << li);
        REQUIRE(mi <= li + 0.01);
    }
}

TEST_CASE("Z does not inherit the moments of R when lambda depends on the input",
          "[bottleneck]") {
    // lambda(X) correlated with R: lambda = sigmoid(2 R), R ~ N(0,1)
    Rng rng(91);
    const int n = 200000;
    double sum = 0, sum2 = 0, sum4 = 0;
    for (int i = 0; i < n; ++i) {
        const double r = rng.normal();
        const double lam = 1.0 / (1.0 + std::exp(-2.0 * r));
        const double eps = rng.normal();
        const double z = lam * r + (1.0 - lam) * eps;
        sum += z;
        sum2 += z * z;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    // standard error of the variance estimate from the fourth moment
    Rng rng2(91);
    for (int i = 0; i < n; ++i) {
        const double r = rng2.normal();
        const double lam = 1.0 / (1.0 + std::exp(-2.0 * r));
        const double eps = rng2.normal();
        const double z = lam * r + (1.0 - lam) * eps;
        const double d = z - mean;
        sum4 += (d * d - var) * (d * d - var);
    }
    const double se_var = std::sqrt(sum4 / n / n);
    INFO("Var[Z] " << var << " vs Var[R] 1.0, se " << se_var);
    REQUIRE(std::abs(var - 1.0) > 5.0 * se_var);
}

TEST_CASE("per-sample bottleneck", "[bottleneck][slow]") {
    const auto& fx = testfx::fixture();
    BottleneckConfig cfg;
    cfg.seed = 3;

    // pick a correctly classified validation sample
    int pick_idx = -1;
    for (int i = 0; i < 50 && pick_idx < 0; ++i) {
        auto s = fx.dataset.val(i);
        auto p = forward_probs(fx.model, to_tensor<float>(s, 1, 64));
        if (argmax_class(p) == s.label) pick_idx = i;
    }
    REQUIRE(pick_idx >= 0);
    const Sample sample = fx.dataset.val(pick_idx);

    SECTION("beta 0 exerts no pressure to remove information") {
        // Even with the information term off, lambda does not sit at exactly 1
        // everywhere: the CE term suppresses features carrying negative
        // evidence for the target, and Adam's unit-size steps let idle
        // coordinates wander (measured mean lambda ~0.75 after 10 steps).
        // The contrast with the default beta shows the absence of pressure,
        // and the class probability does not degrade.
        auto lam_mean = [](const PerSampleResult<float>& r) {
            double acc = 0;
            for (int i = 0; i < r.lambda.size(); ++i) acc += r.lambda.data()[i];
            return acc / r.lambda.size();
        };
        BottleneckConfig c0 = cfg;
        c0.beta_over_k = 0.0;
        auto res0 = per_sample_attribution(fx.model, "conv3", fx.stats_conv3, sample, c0);
        BottleneckConfig c10 = cfg;
        c10.beta_over_k = 10.0;
        auto res10 = per_sample_attribution(fx.model, "conv3", fx.stats_conv3, sample, c10);
        INFO("mean lambda at beta 0: " << lam_mean(res0) << ", at beta 10/k: " << lam_mean(res10));
        REQUIRE(lam_mean(res0) > 0.7);
        REQUIRE(lam_mean(res0) > 3.0 * lam_mean(res10));
        REQUIRE(res0.diag.prob_after >= res0.diag.prob_before - 0.05);
    }
    SECTION("heatmap mass equals the tap-level KL sum in bits") {
        auto res = per_sample_attribution(fx.model, "conv3", fx.stats_conv3, sample, cfg);
        REQUIRE(res.heatmap.total ==
                Approx(res.diag.info_total_nats / std::numbers::ln2).epsilon(1e-4));
        REQUIRE(res.heatmap.all_finite());
        for (float v : res.heatmap.v) REQUIRE(v >= -1e-6f);
    }
    SECTION("identical seeds reproduce the fit bit for bit") {
        auto a = per_sample_attribution(fx.model, "conv3", fx.stats_conv3, sample, cfg);
        auto b = per_sample_attribution(fx.model, "conv3", fx.stats_conv3, sample, cfg);
        REQUIRE(a.heatmap.v == b.heatmap.v);
        REQUIRE(a.diag.prob_after == b.diag.prob_after);
    }
    SECTION("parallel fits match sequential fits") {
        std::vector<Sample> ss{fx.dataset.val(0), fx.dataset.val(1), fx.dataset.val(2)};
        std::vector<Heatmap> seq(3), par(3);
        for (int i = 0; i < 3; ++i)
            seq[static_cast<size_t>(i)] =
                per_sample_attribution(fx.model, "conv3", fx.stats_conv3, ss[static_cast<size_t>(i)], cfg).heatmap;
        parallel_for(3, 3, [&](int i) {
            par[static_cast<size_t>(i)] =
                per_sample_attribution(fx.model, "conv3", fx.stats_conv3, ss[static_cast<size_t>(i)], cfg).heatmap;
        });
        for (int i = 0; i < 3; ++i) REQUIRE(seq[static_cast<size_t>(i)].v == par[static_cast<size_t>(i)].v);
    }
}

namespace {
struct BetaStats {
    double bits01 = 0, bits10 = 0, bits1000 = 0;
    double prob01 = 0, prob10 = 0, prob1000 = 0;
};

// 20 correctly classified validation images fitted at three betas; computed
// once and reused by the cases below
const BetaStats& beta_stats() {
    static const BetaStats bs = [] {
        const auto& f = testfx::fixture();
        std::vector<Sample> samples;
        for (int i = 0; i < 80 && samples.size() < 20; ++i) {
            auto s = f.dataset.val(i);
            if (argmax_class(forward_probs(f.model, to_tensor<float>(s, 1, 64))) == s.label)
                samples.push_back(s);
        }
        if (samples.size() != 20) throw std::runtime_error("fixture model too weak for beta sweep");
        BetaStats out;
        std::vector<std::array<double, 6>> per(samples.size());
        parallel_for(static_cast<int>(samples.size()), 2, [&](int i) {
            const auto& s = samples[static_cast<size_t>(i)];
            BottleneckConfig c;
            c.seed = 4;
            c.beta_over_k = 0.1;
            auto lo = per_sample_attribution(f.model, "conv3", f.stats_conv3, s, c);
            c.beta_over_k = 10.0;
            auto mid = per_sample_attribution(f.model, "conv3", f.stats_conv3, s, c);
            c.beta_over_k = 1000.0;
            auto hi = per_sample_attribution(f.model, "conv3", f.stats_conv3, s, c);
            per[static_cast<size_t>(i)] = {lo.heatmap.total,  mid.heatmap.total,  hi.heatmap.total,
                                           lo.diag.prob_after, mid.diag.prob_after, hi.diag.prob_after};
        });
        for (const auto& p : per) {
            out.bits01 += p[0] / 20;
            out.bits10 += p[1] / 20;
            out.bits1000 += p[2] / 20;
            out.prob01 += p[3] / 20;
            out.prob10 += p[4] / 20;
            out.prob1000 += p[5] / 20;
        }
        return out;
    }();
    return bs;
}
}  // namespace

TEST_CASE("beta extremes on the trained model", "[bottleneck][slow]") {
    const BetaStats& bs = beta_stats();

    SECTION("beta 1000/k removes almost all information") {
        INFO("bits at beta 10/k " << bs.bits10 << ", at 1000/k " << bs.bits1000);
        REQUIRE(bs.bits1000 < 0.05 * bs.bits10);
    }
    SECTION("information kept and target probability fall as beta grows") {
        REQUIRE(bs.bits01 > bs.bits10);
        REQUIRE(bs.bits10 > bs.bits1000);
        REQUIRE(bs.prob01 >= bs.prob10);
        REQUIRE(bs.prob10 >= bs.prob1000);
        REQUIRE(bs.prob01 >= 0.9);
    }
    SECTION("beta 1000/k sits at the chance floor") {
        INFO("mean prob after fit at beta 1000/k: " << bs.prob1000);
        REQUIRE(bs.prob1000 < 1.0 / 5.0 + 0.1);
    }
}

// The two claims below hold at the original ImageNet scale but cannot hold on
// this 5-class desk model: the summed information term exerts ~50x more
// per-element pressure at beta = 10/k (k is ~50x smaller), and with all
// information destroyed the balanced-target probability cannot drop below the
// 1/K = 0.2 chance floor. Asserted exactly as stated and expected to fail;
// the analysis lives in the decisions ledger. The acceptance suite reports
// the corresponding criterion honestly as FAIL.
TEST_CASE("paper-scale probability claims (documented expected failure)",
          "[bottleneck][slow][paper-scale][!shouldfail]") {
    const BetaStats& bs = beta_stats();
    INFO("prob at 0.1/k " << bs.prob01 << ", at 10/k " << bs.prob10 << ", at 1000/k "
         << bs.prob1000 << " (5-class chance floor 0.2)");
    CHECK(bs.prob10 >= 0.9);
    CHECK(bs.prob1000 < 0.05);
}
