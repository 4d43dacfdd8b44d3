#pragma once

// Order-2 real spherical harmonics and Lambertian SH shading.
//
// Coefficient layout is basis-major: gamma[3 * b + c] for basis b in
// (Y00, Y1-1, Y10, Y11, Y2-2, Y2-1, Y20, Y21, Y22) and color channel c.

#include <array>
#include <cmath>
#include <numbers>

#include "tgir/error.hpp"
#include "tgir/parallel.hpp"
#include "tgir/uvfield.hpp"

namespace tgir {

using Vec3 = std::array<double, 3>;
using SHBasis = std::array<double, 9>;
using SHCoeffs = std::array<double, 27>;

inline constexpr int kShBasisCount = 9;
inline constexpr int kShCoeffCount = 27;

/// Band index l of basis function b.
constexpr int sh_band(int b) { return b == 0 ? 0 : (b < 4 ? 1 : 2); }

/// Lambertian transfer coefficients B_l (pi, 2pi/3, pi/4).
constexpr double lambert_band(int l) {
    constexpr double pi = std::numbers::pi;
    return l == 0 ? pi : (l == 1 ? 2.0 * pi / 3.0 : pi / 4.0);
}

namespace sh_const {
inline constexpr double k00 = 0.2820948;
inline constexpr double k1 = 0.4886025;
inline constexpr double k2 = 1.0925484;
inline constexpr double k20 = 0.3153916;
inline constexpr double k22 = 0.5462742;
}  // namespace sh_const

/// Unit-length copy of n. Sets *renormalized when |n| differs from 1 by more than 1e-6.
inline Vec3 normalized(const Vec3& n, bool* renormalized = nullptr) {
    const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    const bool off = std::abs(len - 1.0) > 1e-6;
    if (renormalized) *renormalized = off;
    if (!off) return n;
    if (len == 0.0 || !std::isfinite(len)) return {0.0, 0.0, 1.0};
    return {n[0] / len, n[1] / len, n[2] / len};
}

inline SHBasis sh_basis(const Vec3& dir, bool* renormalized = nullptr) {
    using namespace sh_const;
    const Vec3 n = normalized(dir, renormalized);
    const double x = n[0], y = n[1], z = n[2];
    return {k00,          k1 * y,     k1 * z,
            k1 * x,       k2 * x * y, k2 * y * z,
            k20 * (3 * z * z - 1), k2 * x * z, k22 * (x * x - y * y)};
}

/// B_l(b) * Y_b(n) / pi: the per-basis weight that multiplies gamma[3b + c] in the
/// shading sum. Everything in the renderer is linear in these weights.
inline SHBasis lambert_weights(const Vec3& n) {
    SHBasis y = sh_basis(n);
    for (int b = 0; b < kShBasisCount; ++b) y[b] *= lambert_band(sh_band(b)) / std::numbers::pi;
    return y;
}

/// Irradiance-over-pi per channel, i.e. the shading that multiplies albedo.
inline Vec3 shading_from_weights(const SHBasis& w, const SHCoeffs& gamma) {
    Vec3 s{0.0, 0.0, 0.0};
    for (int b = 0; b < kShBasisCount; ++b)
        for (int c = 0; c < 3; ++c) s[c] += w[b] * gamma[3 * b + c];
    return s;
}

inline Vec3 shade_texel(const Vec3& albedo, const Vec3& normal, const SHCoeffs& gamma) {
    const Vec3 s = shading_from_weights(lambert_weights(normal), gamma);
    return {albedo[0] * s[0], albedo[1] * s[1], albedo[2] * s[2]};
}

inline Vec3 texel3(const UVField& f, int y, int x) { return {f.at(y, x, 0), f.at(y, x, 1), f.at(y, x, 2)}; }

inline SHCoeffs operator+(const SHCoeffs& a, const SHCoeffs& b) {
    SHCoeffs r{};
    for (int i = 0; i < kShCoeffCount; ++i) r[i] = a[i] + b[i];
    return r;
}

/// Dense shading with a per-texel coefficient provider `coeffs(y, x) -> SHCoeffs`.
template <typename CoeffProvider>
UVField shade_field(const UVField& albedo, const UVField& normals, CoeffProvider&& coeffs) {
    require_channels(albedo, 3, "shade_field(albedo)");
    require_channels(normals, 3, "shade_field(normals)");
    require_same_extent(albedo, normals, "shade_field");
    UVField out(albedo.height(), albedo.width(), 3);
    parallel_for(albedo.height(), [&](int y0, int y1) {
        for (int y = y0; y < y1; ++y)
            for (int x = 0; x < albedo.width(); ++x) {
                const Vec3 c = shade_texel(texel3(albedo, y, x), texel3(normals, y, x), coeffs(y, x));
                for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = c[ch];
            }
    });
    return out;
}

inline UVField shade_field(const UVField& albedo, const UVField& normals, const SHCoeffs& gamma) {
    return shade_field(albedo, normals, [&](int, int) -> const SHCoeffs& { return gamma; });
}

/// Per-texel weights B_l Y_b(n) / pi for a whole normal map (9 channels).
inline UVField lambert_weight_field(const UVField& normals) {
    require_channels(normals, 3, "lambert_weight_field");
    UVField out(normals.height(), normals.width(), kShBasisCount);
    for (int y = 0; y < normals.height(); ++y)
        for (int x = 0; x < normals.width(); ++x) {
            const SHBasis w = lambert_weights(texel3(normals, y, x));
            for (int b = 0; b < kShBasisCount; ++b) out.at(y, x, b) = w[b];
        }
    return out;
}

}  // namespace tgir
