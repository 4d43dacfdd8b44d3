#include <gtest/gtest.h>

#include <limits>

#include "support.hpp"
#include "tgir/adam.hpp"
#include "tgir/metrics.hpp"
#include "tgir/sampler.hpp"
#include "tgir/synthetic.hpp"

using namespace tgir;

namespace {

struct Small {
    Scene scene;
    SolveInputs in;
    UVField reference;
};

Small small_scene(int res = 32, std::uint64_t seed = 3) {
    SceneSpec spec;
    spec.resolution = res;
    spec.seed = seed;
    Small s{gen_scene(spec), {}, {}};
    s.in = {s.scene.observation.target, s.scene.observation.valid, s.scene.normals, s.scene.mask};
    const Vec3 tone = mean_albedo(s.scene.stack);
    const auto lib = gen_reference_library(res, 3, seed + 1, tone);
    s.reference = color_match_stack(select_reference(lib, tone).stack, tone, UVField(res, res, 1, 1.0));
    return s;
}

SamplerConfig small_config() {
    SamplerConfig c;
    c.steps = 100;
    c.grid_size = 4;
    c.reg_stride = 1;
    return c;
}

}  // namespace

TEST(Adam, MatchesHandComputedFirstSteps) {
    AdamState a(1);
    std::vector<double> p{1.0};
    const std::vector<double> g{0.5};
    a.step(p, g, 0.1);
    // first step moves by lr * sign(g) up to eps
    EXPECT_NEAR(p[0], 0.9, 1e-7);
    const double p1 = p[0];
    const std::vector<double> g2{-0.25};
    a.step(p, g2, 0.1);
    const double m = 0.9 * 0.05 + 0.1 * -0.25, v = 0.999 * 0.00025 + 0.001 * 0.0625;
    const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
    EXPECT_NEAR(p[0], p1 - 0.1 * mh / (std::sqrt(vh) + 1e-8), 1e-12);
}

TEST(SamplerConfig, ScheduleAndValidation) {
    SamplerConfig c;
    EXPECT_EQ(c.t_init(), 600);
    EXPECT_NEAR(c.eta(600), c.eta0, 1e-15);
    EXPECT_NEAR(c.eta(1), 0.1 * c.eta0, 1e-15);
    c.t_init_frac = 1.0;
    EXPECT_EQ(c.t_init(), 1000);
    c.t_init_frac = 0.0;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c = {};
    c.grid_size = 0;
    EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Reference, SelectsNearestToneWithLowestIndexOnTies) {
    const std::vector<Vec3> tones{{0.5, 0.5, 0.5}, {0.2, 0.2, 0.2}, {0.2, 0.2, 0.2}};
    EXPECT_EQ(select_reference(tones, {0.21, 0.2, 0.2}), 1u);
    EXPECT_EQ(select_reference(tones, {0.9, 0.9, 0.9}), 0u);
    EXPECT_THROW(select_reference(std::vector<Vec3>{}, {0, 0, 0}), InvalidArgument);
}

TEST(Reference, ColorMatchMovesTheMean) {
    Rng rng(1);
    const UVField src = test::random_field(16, 16, 3, rng, 0.3, 0.5);
    const UVField all(16, 16, 1, 1.0);
    const Vec3 tone{0.6, 0.45, 0.35};
    const UVField out = color_match(src, tone, all);
    const Vec3 m = mean_albedo(out);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(m[c], tone[c], 1e-12);
    const UVField scaled = color_match(src, tone, all, Vec3{0.01, 0.01, 0.01});
    double var = 0;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) var += (scaled.at(y, x, 0) - tone[0]) * (scaled.at(y, x, 0) - tone[0]);
    EXPECT_NEAR(std::sqrt(var / 256), 0.01, 1e-12);
    EXPECT_THROW(color_match(src, tone, UVField(16, 16, 1)), InvalidArgument);
}

TEST(GlobalFit, RecoversExactLightFromNoiseFreeRender) {
    Rng rng(2);
    const int n = 12;
    const UVField a = test::random_field(n, n, 3, rng, 0.3, 0.8);
    UVField normals(n, n, 3);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const Vec3 v = test::random_unit(rng);
            for (int c = 0; c < 3; ++c) normals.at(y, x, c) = v[c];
        }
    const SHCoeffs g = test::random_light(rng);
    const UVField target = shade_field(a, normals, g);
    const GlobalFit fit = fit_global_sh(target, a, normals, UVField(n, n, 1, 1.0));
    EXPECT_FALSE(fit.ridge_fallback);
    for (int k = 0; k < kShCoeffCount; ++k) EXPECT_NEAR(fit.gamma[k], g[k], 1e-8);
}

TEST(GlobalFit, DegenerateNormalsFallBackToRidge) {
    const UVField a(6, 6, 3, 0.5);
    UVField normals(6, 6, 3);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) normals.at(y, x, 2) = 1.0;
    const UVField target(6, 6, 3, 0.4);
    const GlobalFit fit = fit_global_sh(target, a, normals, UVField(6, 6, 1, 1.0));
    EXPECT_TRUE(fit.ridge_fallback);
    const Vec3 s = shade_texel({0.5, 0.5, 0.5}, {0, 0, 1}, fit.gamma);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(s[c], 0.4, 1e-4);
}

TEST(GlobalFit, RegionFallsBackWhenMaskCoversEverything) {
    SolveInputs in{UVField(4, 4, 3), UVField(4, 4, 1, 1.0), UVField(4, 4, 3), UVField(4, 4, 1, 1.0)};
    const UVField r = global_fit_region(in, true);
    EXPECT_EQ(detail::valid_count(r), 16u);
    in.mask = UVField(4, 4, 1);
    in.mask.at(0, 0) = 1.0;
    EXPECT_EQ(detail::valid_count(global_fit_region(in, true)), 15u);
}

TEST(Finalize, ClampsAndCountsOutOfRange) {
    UVField s(1, 2, 7);
    s.at(0, 0, 0) = -0.1;
    s.at(0, 0, 6) = 1.5;
    s.at(0, 1, 1) = 0.5;
    s.at(0, 0, 5) = 2.0;
    s.at(0, 1, 5) = 1.0;
    const double f = finalize_stack(s);
    EXPECT_DOUBLE_EQ(f, 2.0 / 8.0);
    EXPECT_EQ(s.at(0, 0, 0), 0.0);
    EXPECT_EQ(s.at(0, 0, 6), 1.0);
    EXPECT_NEAR(s.at(0, 0, 5), 1.0, 1e-15);
}

TEST(GaussianPrior, MomentsOfTheStack) {
    UVField s(1, 4, 7);
    for (int x = 0; x < 4; ++x) s.at(0, x, 0) = x;
    const DiffusionSchedule sch(10);
    const GaussianPriorDenoiser d = gaussian_prior_from(s, sch);
    EXPECT_DOUBLE_EQ(d.mean(0, 0, 0), 1.5);
    EXPECT_DOUBLE_EQ(d.variance(0), 1.25 + 1e-4);
    EXPECT_DOUBLE_EQ(d.variance(3), 1e-4);
}

TEST(Solve, ReducesPhotometricLossAndIsDeterministic) {
    const Small s = small_scene();
    const SamplerConfig cfg = small_config();
    const DiffusionSchedule sch(cfg.steps);
    const GaussianPriorDenoiser prior = gaussian_prior_from(s.reference, sch);
    const SolveResult a = solve(s.in, prior, sch, s.reference, cfg);
    ASSERT_EQ(a.trace.size(), 60u);
    EXPECT_EQ(a.trace.front().step, 60);
    EXPECT_EQ(a.trace.back().step, 1);
    EXPECT_LT(a.trace.back().l_pho, a.trace.front().l_pho);
    EXPECT_TRUE(a.stack.all_finite());
    set_thread_count(3);
    const SolveResult b = solve(s.in, prior, sch, s.reference, cfg);
    set_thread_count(1);
    for (std::size_t i = 0; i < a.stack.size(); ++i) ASSERT_EQ(a.stack.data()[i], b.stack.data()[i]);
    EXPECT_EQ(a.final_loss, b.final_loss);
}

TEST(Solve, ObserverSeesEveryStep) {
    const Small s = small_scene();
    SamplerConfig cfg = small_config();
    cfg.t_init_frac = 0.2;
    const DiffusionSchedule sch(cfg.steps);
    const GaussianPriorDenoiser prior = gaussian_prior_from(s.reference, sch);
    std::vector<int> steps;
    solve(s.in, prior, sch, s.reference, cfg, [&](int t, const TraceRow&) { steps.push_back(t); });
    ASSERT_EQ(steps.size(), 20u);
    EXPECT_EQ(steps.front(), 20);
    EXPECT_EQ(steps.back(), 1);
}

TEST(Solve, NonFiniteInputAbortsWithStep) {
    Small s = small_scene();
    s.in.target.at(0, 0, 0) = std::numeric_limits<double>::quiet_NaN();
    const SamplerConfig cfg = small_config();
    const DiffusionSchedule sch(cfg.steps);
    const GaussianPriorDenoiser prior = gaussian_prior_from(s.reference, sch);
    try {
        solve(s.in, prior, sch, s.reference, cfg);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_EQ(e.step(), 60);
    }
}

TEST(Solve, RejectsMismatchedInputs) {
    Small s = small_scene();
    const SamplerConfig cfg = small_config();
    const DiffusionSchedule sch(cfg.steps);
    const GaussianPriorDenoiser prior = gaussian_prior_from(s.reference, sch);
    SolveInputs bad = s.in;
    bad.mask = UVField(16, 16, 1);
    EXPECT_THROW(solve(bad, prior, sch, s.reference, cfg), DimensionError);
    EXPECT_THROW(solve(s.in, prior, DiffusionSchedule(50), s.reference, cfg), InvalidArgument);
    SamplerConfig exact = cfg;
    exact.exact_jacobian = true;
    EXPECT_NO_THROW(solve(s.in, prior, sch, s.reference, exact));
}

TEST(Baseline, ReducesLossWithoutPrior) {
    const Small s = small_scene();
    const SamplerConfig cfg = small_config();
    const SolveResult r = solve_adam_baseline(s.in, s.reference, cfg, {100, 0.01});
    ASSERT_EQ(r.trace.size(), 100u);
    EXPECT_LT(r.trace.back().l_pho, r.trace.front().l_pho);
}

TEST(SaveResult, WritesEveryArtifact) {
    const Small s = small_scene(16);
    SamplerConfig cfg = small_config();
    cfg.t_init_frac = 0.1;
    const DiffusionSchedule sch(cfg.steps);
    const SolveResult r = solve(s.in, gaussian_prior_from(s.reference, sch), sch, s.reference, cfg);
    const auto dir = test::scratch_dir("save_result");
    save_result(r, dir);
    for (const char* f : {"stack.uvf", "light_grid.uvf", "light_global.uvf", "light_mask.png", "light_meta.txt",
                          "shading.uvf", "trace.csv"})
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    const TexelGridLight back = load_lighting(dir);
    EXPECT_EQ(back.grid_size(), 4);
    EXPECT_EQ(trace_csv(r.trace).substr(0, 22), "step,l_pho,l_tv,l_neg\n");
}
