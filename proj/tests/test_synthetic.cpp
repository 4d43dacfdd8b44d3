#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"
#include "tgir/synthetic.hpp"

using namespace tgir;

TEST(Synthetic, SameSeedSameScene) {
    SceneSpec spec;
    spec.resolution = 48;
    spec.seed = 9;
    const Scene a = gen_scene(spec), b = gen_scene(spec);
    EXPECT_EQ(encode_uvf(a.stack), encode_uvf(b.stack));
    EXPECT_EQ(encode_uvf(a.observation.target), encode_uvf(b.observation.target));
    EXPECT_EQ(encode_uvf(a.light.grid()), encode_uvf(b.light.grid()));
    spec.seed = 10;
    EXPECT_NE(encode_uvf(gen_scene(spec).stack), encode_uvf(a.stack));
}

TEST(Synthetic, StackRangesAndUnitNormals) {
    SceneSpec spec;
    spec.resolution = 64;
    const UVField s = gen_reflectance(spec);
    ASSERT_EQ(s.channels(), stack_layout::kChannels);
    const UVField n = gen_normals(spec);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            for (int c = 0; c < 3; ++c) {
                EXPECT_GE(s.at(y, x, c), 0.0);
                EXPECT_LE(s.at(y, x, c), 1.0);
            }
            EXPECT_GE(s.at(y, x, stack_layout::kSpecular), 0.2);
            EXPECT_LE(s.at(y, x, stack_layout::kSpecular), 0.6);
            double l1 = 0, l2 = 0;
            for (int c = 0; c < 3; ++c) {
                l1 += s.at(y, x, stack_layout::kNormal + c) * s.at(y, x, stack_layout::kNormal + c);
                l2 += n.at(y, x, c) * n.at(y, x, c);
            }
            EXPECT_NEAR(l1, 1.0, 1e-12);
            EXPECT_NEAR(l2, 1.0, 1e-12);
            EXPECT_GT(n.at(y, x, 2), 0.0);
        }
}

TEST(Synthetic, PlantedLocalLightDarkensInsideTheMask) {
    SceneSpec spec;
    spec.noise = 0.0;
    const Scene sc = gen_scene(spec);
    double inside = 0;
    for (double m : sc.mask.data()) inside += m;
    const double frac = inside / static_cast<double>(sc.mask.size());
    const double disk = std::numbers::pi * 0.2 * 0.2;
    EXPECT_NEAR(frac, disk, 0.01);
    // local shading strictly negative where masked, global elsewhere
    const UVField s = shading(sc.light, sc.normals);
    TexelGridLight global_only(128, 128, sc.light.grid_size(), UVField(128, 128, 1), sc.light.global());
    const UVField g = shading(global_only, sc.normals);
    for (int y = 0; y < 128; ++y)
        for (int x = 0; x < 128; ++x)
            for (int c = 0; c < 3; ++c) {
                if (sc.mask.at(y, x) > 0.5)
                    EXPECT_LT(s.at(y, x, c), g.at(y, x, c));
                else
                    EXPECT_EQ(s.at(y, x, c), g.at(y, x, c));
            }
}

TEST(Synthetic, ObservationIsRenderPlusNoise) {
    SceneSpec spec;
    spec.resolution = 32;
    spec.noise = 0.0;
    const Scene sc = gen_scene(spec);
    const UVField r = render(sc.light, extract_channels(sc.stack, stack_layout::kAlbedo, 3), sc.normals);
    for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(r.data()[i], sc.observation.target.data()[i]);
    spec.noise = 0.01;
    const Scene noisy = gen_scene(spec);
    double var = 0;
    for (std::size_t i = 0; i < r.size(); ++i) var += std::pow(noisy.observation.target.data()[i] - r.data()[i], 2);
    EXPECT_NEAR(std::sqrt(var / static_cast<double>(r.size())), 0.01, 0.001);
}

TEST(Synthetic, NoShadowMeansEmptyMask) {
    SceneSpec spec;
    spec.resolution = 32;
    spec.shadow.reset();
    const Scene sc = gen_scene(spec);
    for (double m : sc.mask.data()) EXPECT_EQ(m, 0.0);
}

TEST(Synthetic, ViewsCoverTheTexture) {
    SceneSpec spec;
    spec.resolution = 64;
    const Scene sc = gen_scene(spec);
    const SyntheticViews sv = gen_views(sc.stack, sc.light, sc.normals, spec);
    ASSERT_EQ(sv.views.size(), 4u);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            double vis = 0;
            for (const auto& v : sv.views) vis += v.correspondence.at(y, x, 2);
            EXPECT_GT(vis, 0.0);
        }
    // softened views are brighter where the shadow was planted
    const auto& v0 = sv.views.front();
    double d = 0;
    for (std::size_t i = 0; i < v0.image.size(); ++i) d += sv.softened[0].data()[i] - v0.image.data()[i];
    EXPECT_GT(d, 0.0);
}

TEST(Synthetic, ReferenceLibraryTonesSpreadAroundCenter) {
    const auto lib = gen_reference_library(32, 5, 3, {0.5, 0.4, 0.3});
    ASSERT_EQ(lib.size(), 5u);
    for (const auto& e : lib) {
        const Vec3 t = mean_albedo(e.stack);
        for (int c = 0; c < 3; ++c) EXPECT_EQ(t[c], e.tone[c]);
        EXPECT_GT(e.tone[0], 0.5 * 0.5);
        EXPECT_LT(e.tone[0], 0.5 * 1.4);
    }
}
