#include <gtest/gtest.h>

#include <functional>
#include <numbers>

#include "support.hpp"
#include "tgir/texel_grid_light.hpp"

using namespace tgir;

namespace {

std::vector<double> flat_params(const TexelGridLight& l) {
    std::vector<double> v(l.global().begin(), l.global().end());
    v.insert(v.end(), l.grid().data().begin(), l.grid().data().end());
    return v;
}

void set_params(TexelGridLight& l, const std::vector<double>& v) {
    std::copy(v.begin(), v.begin() + kShCoeffCount, l.global().begin());
    std::copy(v.begin() + kShCoeffCount, v.end(), l.grid().data().begin());
}

std::vector<double> flat_grad(const LightingGradient& g) {
    std::vector<double> v(g.d_global.begin(), g.d_global.end());
    v.insert(v.end(), g.d_grid.data().begin(), g.d_grid.data().end());
    return v;
}

std::vector<double> central_diff(TexelGridLight light, const std::function<double(const TexelGridLight&)>& f,
                                 double h = 1e-3) {
    std::vector<double> p = flat_params(light), out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double keep = p[i];
        p[i] = keep + h;
        set_params(light, p);
        const double up = f(light);
        p[i] = keep - h;
        set_params(light, p);
        const double dn = f(light);
        p[i] = keep;
        out[i] = (up - dn) / (2 * h);
    }
    return out;
}

}  // namespace

TEST(AxisTaps, CentersAndClamping) {
    const auto taps = axis_taps(10, 4);  // 3 cells, centers at 2, 6, 10
    // texel 1 has center 1.5 < 2: clamps to cell 0
    EXPECT_EQ(taps[1].i0, 0);
    EXPECT_DOUBLE_EQ(taps[1].w0, 1.0);
    // texel center 4.5 lies between centers 2 and 6
    EXPECT_EQ(taps[4].i0, 0);
    EXPECT_EQ(taps[4].i1, 1);
    EXPECT_NEAR(taps[4].w1, 2.5 / 4.0, 1e-15);
    // last texel center 9.5 lies between centers 6 and 10
    EXPECT_EQ(taps[9].i0, 1);
    EXPECT_NEAR(taps[9].w1, 3.5 / 4.0, 1e-15);
    for (const auto& t : taps) EXPECT_NEAR(t.w0 + t.w1, 1.0, 1e-15);
}

TEST(TexelGridLight, ConstructionChecks) {
    EXPECT_THROW(TexelGridLight(4, 4, 0, UVField(4, 4, 1)), InvalidArgument);
    EXPECT_THROW(TexelGridLight(4, 4, 2, UVField(4, 5, 1)), DimensionError);
    EXPECT_THROW(TexelGridLight(4, 4, 2, UVField(4, 4, 1, 2.0)), InvalidArgument);
    TexelGridLight l(10, 7, 3, UVField(10, 7, 1));
    EXPECT_EQ(l.grid_rows(), 4);
    EXPECT_EQ(l.grid_cols(), 3);
    EXPECT_THROW(l.set_grid(UVField(3, 3, 27)), DimensionError);
}

TEST(TexelGridLight, ZeroMaskIsGlobalLight) {
    Rng rng(1);
    TexelGridLight l = test::random_grid_light(6, 6, 2, rng);
    TexelGridLight off(6, 6, 2, UVField(6, 6, 1), l.global());
    off.set_grid(l.grid());
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) EXPECT_EQ(off.local_coeffs(x, y), l.global());
}

TEST(TexelGridLight, AffineGridIsReproducedInTheInterior) {
    // Cell values that are affine in the cell center are interpolated exactly.
    const int g = 4;
    TexelGridLight l(16, 16, g, UVField(16, 16, 1, 1.0));
    UVField grid = l.grid();
    auto f = [](double y, double x, int k) { return 0.1 * k + 0.03 * y - 0.02 * x; };
    for (int i = 0; i < grid.height(); ++i)
        for (int j = 0; j < grid.width(); ++j)
            for (int k = 0; k < kShCoeffCount; ++k) grid.at(i, j, k) = f((i + 0.5) * g, (j + 0.5) * g, k);
    l.set_grid(grid);
    for (int y = 2; y < 14; ++y)
        for (int x = 2; x < 14; ++x) {
            const SHCoeffs c = l.local_coeffs(x, y);
            for (int k = 0; k < kShCoeffCount; ++k) EXPECT_NEAR(c[k], f(y + 0.5, x + 0.5, k), 1e-12);
        }
}

TEST(TexelGridLight, SoftMaskScalesTheLocalTerm) {
    Rng rng(2);
    TexelGridLight l = test::random_grid_light(5, 5, 2, rng, true);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) {
            const SHCoeffs e = l.local_coeffs(x, y), v = l.grid_coeffs(x, y);
            const double m = l.mask().at(y, x);
            for (int k = 0; k < kShCoeffCount; ++k) EXPECT_NEAR(e[k], l.global()[k] + m * v[k], 1e-14);
        }
}

TEST(Render, MatchesShadeTexelWithEffectiveLight) {
    Rng rng(3);
    TexelGridLight l = test::random_grid_light(6, 7, 3, rng);
    const UVField a = test::random_field(6, 7, 3, rng);
    const UVField n = test::random_normals(6, 7, rng);
    const UVField img = render(l, a, n);
    const UVField s = shading(l, n);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 7; ++x) {
            const Vec3 c = shade_texel(texel3(a, y, x), texel3(n, y, x), l.local_coeffs(x, y));
            for (int ch = 0; ch < 3; ++ch) {
                EXPECT_NEAR(img.at(y, x, ch), c[ch], 1e-14);
                EXPECT_NEAR(img.at(y, x, ch), a.at(y, x, ch) * s.at(y, x, ch), 1e-14);
            }
        }
    EXPECT_THROW(render(l, UVField(5, 7, 3), UVField(5, 7, 3)), DimensionError);
}

TEST(PhotometricLoss, BruteForceMean) {
    Rng rng(4);
    TexelGridLight l = test::random_grid_light(6, 6, 2, rng);
    const UVField a = test::random_field(6, 6, 3, rng);
    const UVField n = test::random_normals(6, 6, rng);
    const UVField t = test::random_field(6, 6, 3, rng);
    UVField valid(6, 6, 1);
    for (double& v : valid.data()) v = rng.uniform() < 0.7 ? 1.0 : 0.0;
    double sum = 0;
    int cnt = 0;
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) {
            if (valid.at(y, x) < 0.5) continue;
            ++cnt;
            const Vec3 c = shade_texel(texel3(a, y, x), texel3(n, y, x), l.local_coeffs(x, y));
            for (int ch = 0; ch < 3; ++ch) sum += (c[ch] - t.at(y, x, ch)) * (c[ch] - t.at(y, x, ch));
        }
    EXPECT_NEAR(photometric_loss(l, a, n, t, valid), sum / cnt, 1e-14);
    EXPECT_THROW(photometric_loss(l, a, n, t, UVField(6, 6, 1)), InvalidArgument);
}

TEST(Gradients, PhotometricMatchesFiniteDifferences) {
    for (int inst = 0; inst < 5; ++inst) {
        Rng rng(100 + inst);
        TexelGridLight l = test::random_grid_light(8, 8, 3, rng, inst % 2 == 1);
        const UVField a = test::random_field(8, 8, 3, rng, 0.2, 0.9);
        const UVField n = test::random_normals(8, 8, rng);
        const UVField t = test::random_field(8, 8, 3, rng);
        UVField valid(8, 8, 1, 1.0);
        valid.at(0, 0) = 0.0;
        const PhotometricGradients g = loss_gradients(l, a, n, t, valid);
        EXPECT_NEAR(g.loss, photometric_loss(l, a, n, t, valid), 1e-14);
        const auto fd = central_diff(l, [&](const TexelGridLight& q) { return photometric_loss(q, a, n, t, valid); });
        EXPECT_LT(test::rel_error(flat_grad(g.lighting), fd), 1e-4);

        std::vector<double> fa(a.size());
        UVField ap = a;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double keep = ap.data()[i];
            ap.data()[i] = keep + 1e-3;
            const double up = photometric_loss(l, ap, n, t, valid);
            ap.data()[i] = keep - 1e-3;
            const double dn = photometric_loss(l, ap, n, t, valid);
            ap.data()[i] = keep;
            fa[i] = (up - dn) / 2e-3;
        }
        std::vector<double> ga(g.albedo.data().begin(), g.albedo.data().end());
        EXPECT_LT(test::rel_error(ga, fa), 1e-4);
    }
}

TEST(Gradients, TotalVariationMatchesFiniteDifferences) {
    for (int stride : {1, 2, 3}) {
        Rng rng(200 + stride);
        TexelGridLight l = test::random_grid_light(8, 8, 3, rng, stride == 2);
        const RegularizerTerm tv = tv_loss_and_grad(l, stride);
        const auto fd = central_diff(l, [&](const TexelGridLight& q) { return tv_loss_and_grad(q, stride).loss; });
        EXPECT_LT(test::rel_error(flat_grad(tv.grad), fd), 1e-4) << "stride " << stride;
    }
}

TEST(Gradients, NegShadingMatchesFiniteDifferences) {
    for (int stride : {1, 2}) {
        Rng rng(300 + stride);
        TexelGridLight l = test::random_grid_light(8, 8, 3, rng, stride == 2);
        const UVField n = test::random_normals(8, 8, rng);
        const RegularizerTerm neg = neg_shading_loss_and_grad(l, n, stride);
        EXPECT_GT(neg.loss, 0.0);
        const auto fd = central_diff(l, [&](const TexelGridLight& q) { return neg_shading_loss_and_grad(q, n, stride).loss; });
        EXPECT_LT(test::rel_error(flat_grad(neg.grad), fd), 1e-4) << "stride " << stride;
    }
}

TEST(Regularizers, TotalVariationHandValue) {
    // 1 x 2 texels, one cell per texel: TV = (a - b)^2 on the touched coefficient.
    TexelGridLight l(1, 2, 1, UVField(1, 2, 1, 1.0));
    UVField grid = l.grid();
    grid.at(0, 0, 5) = 0.7;
    grid.at(0, 1, 5) = 0.2;
    l.set_grid(grid);
    EXPECT_NEAR(tv_loss_and_grad(l, 1).loss, 0.25, 1e-15);
    // constant effective light has no variation
    Rng rng(1);
    TexelGridLight c(6, 6, 2, UVField(6, 6, 1), test::random_light(rng));
    EXPECT_EQ(tv_loss_and_grad(c, 1).loss, 0.0);
}

TEST(Regularizers, NegShadingHandValue) {
    // DC-only local term p on channel 0: s = pi * Y00 * p (no 1/pi), penalized when positive.
    const double p = 0.3;
    TexelGridLight l(2, 2, 2, UVField(2, 2, 1, 1.0));
    UVField grid = l.grid();
    grid.at(0, 0, 0) = p;
    l.set_grid(grid);
    const UVField n(2, 2, 3, std::vector<double>{0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 1});
    const double s = std::numbers::pi * sh_const::k00 * p;
    EXPECT_NEAR(neg_shading_loss_and_grad(l, n, 1).loss, 4 * s * s, 1e-14);
    grid.at(0, 0, 0) = -p;
    l.set_grid(grid);
    EXPECT_EQ(neg_shading_loss_and_grad(l, n, 1).loss, 0.0);
}

TEST(Regularizers, WeightedSum) {
    Rng rng(7);
    TexelGridLight l = test::random_grid_light(8, 8, 2, rng);
    const UVField n = test::random_normals(8, 8, rng);
    const RegularizerLoss r = reg_loss_and_grad(l, n, {0.1, 2.0, 2});
    EXPECT_NEAR(r.total, 0.1 * tv_loss_and_grad(l, 2).loss + 2.0 * neg_shading_loss_and_grad(l, n, 2).loss, 1e-12);
}

TEST(Gradients, IndependentOfThreadCount) {
    Rng rng(9);
    TexelGridLight l = test::random_grid_light(32, 32, 1, rng);
    const UVField a = test::random_field(32, 32, 3, rng);
    const UVField n = test::random_normals(32, 32, rng);
    const UVField t = test::random_field(32, 32, 3, rng);
    const UVField valid(32, 32, 1, 1.0);
    set_thread_count(1);
    const auto g1 = loss_gradients(l, a, n, t, valid);
    const auto r1 = tv_loss_and_grad(l, 1);
    set_thread_count(4);
    const auto g4 = loss_gradients(l, a, n, t, valid);
    const auto r4 = tv_loss_and_grad(l, 1);
    set_thread_count(1);
    EXPECT_EQ(g1.loss, g4.loss);
    EXPECT_EQ(flat_grad(g1.lighting), flat_grad(g4.lighting));
    EXPECT_EQ(flat_grad(r1.grad), flat_grad(r4.grad));
}

TEST(Lighting, SaveLoadRoundTrip) {
    Rng rng(10);
    TexelGridLight l = test::random_grid_light(9, 9, 4, rng);
    for (double& v : l.grid().data()) v = static_cast<float>(v);
    for (double& v : l.global()) v = static_cast<float>(v);
    const auto dir = test::scratch_dir("light_rt");
    save_lighting(l, dir);
    const TexelGridLight r = load_lighting(dir);
    EXPECT_EQ(r.grid_size(), 4);
    EXPECT_EQ(r.global(), l.global());
    for (std::size_t i = 0; i < l.grid().size(); ++i) EXPECT_EQ(r.grid().data()[i], l.grid().data()[i]);
    for (std::size_t i = 0; i < l.mask().size(); ++i) EXPECT_EQ(r.mask().data()[i], l.mask().data()[i]);
    std::filesystem::remove(dir / "light_meta.txt");
    EXPECT_THROW(load_lighting(dir), IoError);
}
