#pragma once

// Small fixtures shared by the unit tests.

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "tgir/random.hpp"
#include "tgir/sh.hpp"
#include "tgir/texel_grid_light.hpp"
#include "tgir/uvfield.hpp"

namespace tgir::test {

inline UVField random_field(int h, int w, int c, Rng& rng, double lo = 0.0, double hi = 1.0) {
    UVField f(h, w, c);
    for (double& v : f.data()) v = rng.uniform(lo, hi);
    return f;
}

inline Vec3 random_unit(Rng& rng) {
    for (;;) {
        Vec3 v{rng.normal(), rng.normal(), rng.normal()};
        const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if (n > 1e-6) return {v[0] / n, v[1] / n, v[2] / n};
    }
}

// Normals tilted around +z so shading stays away from zero.
inline UVField random_normals(int h, int w, Rng& rng, double tilt = 0.6) {
    UVField n(h, w, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            Vec3 v{tilt * rng.uniform(-1, 1), tilt * rng.uniform(-1, 1), 1.0};
            const double l = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
            for (int c = 0; c < 3; ++c) n.at(y, x, c) = v[c] / l;
        }
    return n;
}

// Strong DC with smaller higher bands.
inline SHCoeffs random_light(Rng& rng, double dc = 1.5, double rest = 0.3) {
    SHCoeffs g{};
    for (int c = 0; c < 3; ++c) g[c] = dc * rng.uniform(0.8, 1.2);
    for (int i = 3; i < kShCoeffCount; ++i) g[i] = rest * rng.uniform(-1, 1);
    return g;
}

inline TexelGridLight random_grid_light(int h, int w, int g, Rng& rng, bool soft_mask = false) {
    UVField mask(h, w, 1);
    for (double& m : mask.data()) m = soft_mask ? rng.uniform() : (rng.uniform() < 0.6 ? 1.0 : 0.0);
    TexelGridLight light(h, w, g, mask, random_light(rng));
    UVField grid = light.grid();
    for (double& v : grid.data()) v = 0.4 * rng.uniform(-1, 1);
    light.set_grid(std::move(grid));
    return light;
}

inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("tgir_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace tgir::test
