#pragma once

// Procedural ground truth: face-like reflectance stacks, coarse normals, texel-grid
// lighting with planted dark regions, rendered UV observations and synthetic views.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "tgir/random.hpp"
#include "tgir/sh.hpp"
#include "tgir/texel_grid_light.hpp"
#include "tgir/texture_builder.hpp"
#include "tgir/uvfield.hpp"

namespace tgir {

/// Channel layout of the 7-channel reflectance stack.
namespace stack_layout {
inline constexpr int kAlbedo = 0;
inline constexpr int kNormal = 3;
inline constexpr int kSpecular = 6;
inline constexpr int kChannels = 7;
}  // namespace stack_layout

struct ShadowSpec {
    double center_y = 0.5;  ///< fraction of height
    double center_x = 0.5;  ///< fraction of width
    double radius = 0.2;    ///< fraction of width
    int grid_size = 0;      ///< ground-truth cell size in texels; 0 = width / 16
    double min_darkening = 0.15;
    double max_darkening = 0.5;
    double jitter = 0.05;  ///< per-cell random darkening added on top of the radial profile
};

struct SceneSpec {
    int resolution = 128;
    std::uint64_t seed = 0;
    Vec3 base_tone{0.62, 0.45, 0.36};
    double detail_amplitude = 0.05;  ///< relative std of fine albedo texture
    double low_amplitude = 0.015;    ///< relative std of low-frequency albedo drift
    double blemish_density = 12.0 / (128.0 * 128.0);  ///< blotches per texel
    std::optional<ShadowSpec> shadow = ShadowSpec{};
    bool randomize_shadow_center = true;
    int view_count = 4;
    double view_scale = 2.0;  ///< view pixels per UV texel
    double noise = 0.005;     ///< std of Gaussian observation noise
    double soften_factor = 0.2;

    int shadow_grid_size() const {
        if (!shadow) return std::max(1, resolution / 16);
        return shadow->grid_size > 0 ? shadow->grid_size : std::max(1, resolution / 16);
    }
};

/// Bright, low-frequency global light used for every synthetic scene.
inline SHCoeffs default_global_light() {
    SHCoeffs g{};
    for (int c = 0; c < 3; ++c) {
        g[0 + c] = 2.6;    // Y00
        g[3 + c] = 0.15;   // Y1-1
        g[6 + c] = 0.6;    // Y10
        g[9 + c] = 0.25;   // Y11
        g[18 + c] = -0.15; // Y20
    }
    return g;
}

/// Smooth value noise: `octaves` octaves starting at `base_cells` lattice cells per
/// side, halving amplitude per octave; output normalized to zero mean, unit std.
inline UVField value_noise(int h, int w, int octaves, int base_cells, Rng& rng) {
    UVField out(h, w, 1);
    double amp = 1.0;
    for (int o = 0; o < octaves; ++o) {
        const int cells = base_cells << o;
        std::vector<double> lattice(static_cast<std::size_t>((cells + 1) * (cells + 1)));
        for (double& v : lattice) v = rng.normal();
        auto lat = [&](int j, int i) { return lattice[static_cast<std::size_t>(j * (cells + 1) + i)]; };
        for (int y = 0; y < h; ++y) {
            const double py = (y + 0.5) * cells / h;
            const int y0 = std::min(static_cast<int>(py), cells - 1);
            double fy = py - y0;
            fy = fy * fy * (3 - 2 * fy);
            for (int x = 0; x < w; ++x) {
                const double px = (x + 0.5) * cells / w;
                const int x0 = std::min(static_cast<int>(px), cells - 1);
                double fx = px - x0;
                fx = fx * fx * (3 - 2 * fx);
                const double top = lat(y0, x0) * (1 - fx) + lat(y0, x0 + 1) * fx;
                const double bot = lat(y0 + 1, x0) * (1 - fx) + lat(y0 + 1, x0 + 1) * fx;
                out.at(y, x) += amp * (top * (1 - fy) + bot * fy);
            }
        }
        amp *= 0.5;
    }
    double mean = 0.0;
    for (double v : out.data()) mean += v;
    mean /= static_cast<double>(out.size());
    double var = 0.0;
    for (double v : out.data()) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(out.size()));
    for (double& v : out.data()) v = sd > 0 ? (v - mean) / sd : 0.0;
    return out;
}

/// Albedo = tone * (1 + fine texture + low drift) with darker blotches; detail
/// normals from a fine height field; specular smooth in [0.2, 0.6].
inline UVField gen_reflectance(const SceneSpec& spec) {
    using namespace stack_layout;
    const int n = spec.resolution;
    Rng rng(spec.seed * 7919 + 17);
    const int fine_cells = std::max(2, n / 4);
    UVField n1 = value_noise(n, n, 2, fine_cells, rng);
    UVField n2 = value_noise(n, n, 2, fine_cells, rng);
    UVField low = value_noise(n, n, 1, 2, rng);
    UVField height = value_noise(n, n, 2, std::max(2, n / 8), rng);
    UVField spec_noise = value_noise(n, n, 2, 4, rng);

    UVField stack(n, n, kChannels);
    const double mix[3][2] = {{1.0, 0.0}, {0.9, 0.1}, {0.8, 0.2}};
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            for (int c = 0; c < 3; ++c) {
                const double rel = spec.detail_amplitude * (mix[c][0] * n1.at(y, x) + mix[c][1] * n2.at(y, x)) +
                                   spec.low_amplitude * low.at(y, x);
                stack.at(y, x, kAlbedo + c) = spec.base_tone[c] * (1.0 + rel);
            }

    const int blotches = static_cast<int>(std::lround(spec.blemish_density * n * n));
    for (int k = 0; k < blotches; ++k) {
        const double cy = rng.uniform(0, n), cx = rng.uniform(0, n), r = rng.uniform(1.0, 2.5);
        const int y0 = std::max(0, static_cast<int>(cy - 4 * r)), y1 = std::min(n - 1, static_cast<int>(cy + 4 * r));
        const int x0 = std::max(0, static_cast<int>(cx - 4 * r)), x1 = std::min(n - 1, static_cast<int>(cx + 4 * r));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                const double f = 1.0 - 0.35 * std::exp(-d2 / (2 * r * r));
                for (int c = 0; c < 3; ++c) stack.at(y, x, kAlbedo + c) *= f;
            }
    }

    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            for (int c = 0; c < 3; ++c) stack.at(y, x, kAlbedo + c) = std::clamp(stack.at(y, x, kAlbedo + c), 0.0, 1.0);
            // Central differences of a fine height field give the detail normal.
            const auto hgt = [&](int yy, int xx) { return height.at(std::clamp(yy, 0, n - 1), std::clamp(xx, 0, n - 1)); };
            const double gx = 0.05 * (hgt(y, x + 1) - hgt(y, x - 1));
            const double gy = 0.05 * (hgt(y + 1, x) - hgt(y - 1, x));
            const double len = std::sqrt(gx * gx + gy * gy + 1.0);
            const Vec3 nd{-gx / len, -gy / len, 1.0 / len};
            for (int c = 0; c < 3; ++c) stack.at(y, x, kNormal + c) = nd[c];
            stack.at(y, x, kSpecular) = std::clamp(0.4 + 0.08 * spec_noise.at(y, x), 0.2, 0.6);
        }
    return stack;
}

/// Coarse normal map: a dome facing +z with smooth bumps.
inline UVField gen_normals(const SceneSpec& spec) {
    const int n = spec.resolution;
    Rng rng(spec.seed * 104729 + 3);
    UVField h = value_noise(n, n, 3, 2, rng);
    // Slopes scale with n / 128 so the bump geometry is resolution-independent.
    const double amp = 2.5 * n / 128.0;
    UVField out(n, n, 3);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const auto hv = [&](int yy, int xx) { return h.at(std::clamp(yy, 0, n - 1), std::clamp(xx, 0, n - 1)); };
            const double gx = amp * 0.5 * (hv(y, x + 1) - hv(y, x - 1));
            const double gy = amp * 0.5 * (hv(y + 1, x) - hv(y - 1, x));
            const double u = (x + 0.5) / n * 2 - 1, v = (y + 0.5) / n * 2 - 1;
            const double nx = 0.5 * u - gx, ny = 0.5 * v - gy, len = std::sqrt(nx * nx + ny * ny + 1.0);
            const Vec3 nn{nx / len, ny / len, 1.0 / len};
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = nn[c];
        }
    return out;
}

struct SyntheticLighting {
    TexelGridLight light;
    UVField mask;  ///< planted binary mask
};

inline std::array<double, 2> shadow_center(const SceneSpec& spec) {
    if (!spec.shadow) return {0.0, 0.0};
    if (!spec.randomize_shadow_center) return {spec.shadow->center_y, spec.shadow->center_x};
    Rng rng(spec.seed * 31337 + 11);
    return {rng.uniform(0.35, 0.65), rng.uniform(0.35, 0.65)};
}

/// Global light plus, when a shadow is requested, a disk mask whose grid cells hold
/// -d * gamma_g with d following a smooth radial profile plus per-cell jitter. The
/// local term's shading is therefore strictly negative wherever the mask is set.
inline SyntheticLighting gen_lighting(const SceneSpec& spec, int height, int width) {
    const SHCoeffs global = default_global_light();
    UVField mask(height, width, 1);
    const int g = spec.shadow_grid_size();
    if (!spec.shadow) {
        TexelGridLight light(height, width, g, mask, global);
        return {std::move(light), std::move(mask)};
    }
    const ShadowSpec& sh = *spec.shadow;
    const auto [fy, fx] = shadow_center(spec);
    const double cy = fy * height, cx = fx * width, radius = sh.radius * width;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            mask.at(y, x) = std::hypot(y + 0.5 - cy, x + 0.5 - cx) < radius ? 1.0 : 0.0;

    TexelGridLight light(height, width, g, mask, global);
    Rng rng(spec.seed * 65537 + 5);
    UVField grid = light.grid();
    for (int i = 0; i < grid.height(); ++i)
        for (int j = 0; j < grid.width(); ++j) {
            const double dist = std::hypot((i + 0.5) * g - cy, (j + 0.5) * g - cx);
            const double jitter = rng.uniform();
            if (dist >= radius + 1.5 * g) continue;
            double s = std::max(0.0, 1.0 - dist / (radius + g));
            s = s * s * (3 - 2 * s);
            const double d = sh.min_darkening + (sh.max_darkening - sh.min_darkening) * s + sh.jitter * jitter;
            for (int k = 0; k < kShCoeffCount; ++k) grid.at(i, j, k) = -d * global[static_cast<std::size_t>(k)];
        }
    light.set_grid(std::move(grid));
    return {std::move(light), std::move(mask)};
}

struct Observation {
    UVField target;  ///< I_UV
    UVField valid;
};

/// Rendered UV observation with additive Gaussian noise; valid everywhere.
inline Observation gen_observation(const UVField& stack, const TexelGridLight& light, const UVField& normals,
                                   const SceneSpec& spec) {
    UVField albedo = extract_channels(stack, stack_layout::kAlbedo, 3);
    UVField target = render(light, albedo, normals);
    if (spec.noise > 0.0) {
        Rng rng(spec.seed * 2654435761ULL + 29);
        for (double& v : target.data()) v += spec.noise * rng.normal();
    }
    return {std::move(target), UVField(stack.height(), stack.width(), 1, 1.0)};
}

struct SyntheticViews {
    std::vector<ViewSample> views;     ///< raw (shadowed) views, used as delighted inputs
    std::vector<UVField> softened;     ///< same views rendered with the local light attenuated
    UVField source_texture;            ///< UV-space image the raw views were rendered from
};

namespace detail {

struct Affine2 {
    double a00, a01, a10, a11, b0, b1;
    std::array<double, 2> apply(double u, double v) const { return {a00 * u + a01 * v + b0, a10 * u + a11 * v + b1}; }
    Affine2 inverse() const {
        const double det = a00 * a11 - a01 * a10;
        const double i00 = a11 / det, i01 = -a01 / det, i10 = -a10 / det, i11 = a00 / det;
        return {i00, i01, i10, i11, -(i00 * b0 + i01 * b1), -(i10 * b0 + i11 * b1)};
    }
};

// Resamples a UV-space image into a view through the inverse of `cam`.
inline UVField project_to_view(const UVField& uv_image, const Affine2& cam, int vh, int vw) {
    const Affine2 inv = cam.inverse();
    UVField img(vh, vw, uv_image.channels());
    std::vector<double> tmp(static_cast<std::size_t>(uv_image.channels()));
    for (int py = 0; py < vh; ++py)
        for (int px = 0; px < vw; ++px) {
            const auto uv = inv.apply(px + 0.5, py + 0.5);
            bilinear_sample(uv_image, uv[0], uv[1], tmp);
            for (int c = 0; c < uv_image.channels(); ++c) img.at(py, px, c) = tmp[static_cast<std::size_t>(c)];
        }
    return img;
}

}  // namespace detail

/// Planar affine cameras spread left-to-right across the texture. Each view sees
/// texels with a visibility weight that falls off away from its preferred column;
/// view 0 of a single-view layout is the identity camera with full visibility.
inline SyntheticViews gen_views(const UVField& stack, const TexelGridLight& light, const UVField& normals,
                                const SceneSpec& spec) {
    if (spec.view_count < 1) throw InvalidArgument("gen_views: view count must be >= 1");
    const int h = stack.height(), w = stack.width();
    UVField albedo = extract_channels(stack, stack_layout::kAlbedo, 3);
    SyntheticViews out;
    out.source_texture = render(light, albedo, normals);
    TexelGridLight soft = light;
    {
        UVField g = soft.grid();
        for (double& v : g.data()) v *= spec.soften_factor;
        soft.set_grid(std::move(g));
    }
    const UVField soft_texture = render(soft, albedo, normals);

    Rng rng(spec.seed * 97 + 1);
    const double scale = spec.view_scale;
    const int vh = static_cast<int>(std::ceil(h * scale)) + 8;
    const int vw = static_cast<int>(std::ceil(w * scale)) + 8;
    for (int i = 0; i < spec.view_count; ++i) {
        detail::Affine2 cam{scale, 0.0, 0.0, scale, 4.0, 4.0};
        double pref = 0.5, spread = 10.0;
        if (spec.view_count > 1) {
            const double ang = rng.uniform(-0.08, 0.08);
            const double s = scale * rng.uniform(0.97, 1.03);
            cam = {s * std::cos(ang), -s * std::sin(ang), s * std::sin(ang), s * std::cos(ang), 0.0, 0.0};
            // Center the texture in the view.
            const auto mid = cam.apply(0.5 * w, 0.5 * h);
            cam.b0 = 0.5 * vw - mid[0];
            cam.b1 = 0.5 * vh - mid[1];
            pref = (i + 0.5) / spec.view_count;
            spread = 1.2 / spec.view_count + 0.25;
        }
        ViewSample view;
        view.id = i;
        view.image = detail::project_to_view(out.source_texture, cam, vh, vw);
        view.correspondence = UVField(h, w, 3);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const auto p = cam.apply(x + 0.5, y + 0.5);
                const double u = (x + 0.5) / w;
                double vis = std::clamp(1.0 - std::abs(u - pref) / spread, 0.0, 1.0);
                if (p[0] < 0 || p[1] < 0 || p[0] > vw || p[1] > vh) vis = 0.0;
                view.correspondence.at(y, x, 0) = p[0];
                view.correspondence.at(y, x, 1) = p[1];
                view.correspondence.at(y, x, 2) = vis;
            }
        out.softened.push_back(detail::project_to_view(soft_texture, cam, vh, vw));
        out.views.push_back(std::move(view));
    }
    return out;
}

/// Everything needed for a closed-loop experiment.
struct Scene {
    SceneSpec spec;
    UVField stack;
    UVField normals;
    TexelGridLight light;
    UVField mask;
    Observation observation;
};

inline Scene gen_scene(const SceneSpec& spec) {
    Scene s;
    s.spec = spec;
    s.stack = gen_reflectance(spec);
    s.normals = gen_normals(spec);
    auto lit = gen_lighting(spec, spec.resolution, spec.resolution);
    s.light = std::move(lit.light);
    s.mask = std::move(lit.mask);
    s.observation = gen_observation(s.stack, s.light, s.normals, spec);
    return s;
}

/// Procedural stacks with tones spread around `center_tone`, standing in for a
/// library of captured reference scans.
struct ReferenceEntry {
    UVField stack;
    Vec3 tone;
};

inline Vec3 mean_albedo(const UVField& stack, const UVField* mask = nullptr) {
    Vec3 sum{0, 0, 0};
    double n = 0;
    for (int y = 0; y < stack.height(); ++y)
        for (int x = 0; x < stack.width(); ++x) {
            const double w = mask ? mask->at(y, x) : 1.0;
            if (w <= 0.5) continue;
            for (int c = 0; c < 3; ++c) sum[c] += stack.at(y, x, c);
            n += 1;
        }
    if (n > 0)
        for (double& v : sum) v /= n;
    return sum;
}

inline std::vector<ReferenceEntry> gen_reference_library(int resolution, int count, std::uint64_t seed,
                                                         const Vec3& center_tone = {0.62, 0.45, 0.36}) {
    std::vector<ReferenceEntry> lib;
    Rng rng(seed * 1000003 + 7);
    for (int i = 0; i < count; ++i) {
        SceneSpec s;
        s.resolution = resolution;
        s.seed = seed * 1000 + 500 + static_cast<std::uint64_t>(i);
        const double k = rng.uniform(0.6, 1.3);
        for (int c = 0; c < 3; ++c) s.base_tone[c] = std::clamp(center_tone[c] * k, 0.05, 0.95);
        UVField st = gen_reflectance(s);
        const Vec3 tone = mean_albedo(st);
        lib.push_back({std::move(st), tone});
    }
    return lib;
}

}  // namespace tgir
