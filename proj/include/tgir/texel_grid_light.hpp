#pragma once

// Texel grid lighting: a global SH light plus a coarse UV grid of SH vectors that is
// bilinearly interpolated and gated by a mask, so that local regions can be lit by
// their own (typically dark) lights.
//
//   gamma(x, y) = gamma_g + interp(grid; x, y) * M[y][x]
//   color       = albedo * sum_b B_l(b) Y_b(n) gamma[3b + c] / pi

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <span>
#include <vector>

#include "tgir/error.hpp"
#include "tgir/parallel.hpp"
#include "tgir/png_io.hpp"
#include "tgir/sh.hpp"
#include "tgir/uvfield.hpp"

namespace tgir {

/// Two-tap linear interpolation along one axis.
struct AxisTap {
    int i0 = 0;
    int i1 = 0;
    double w0 = 1.0;
    double w1 = 0.0;
};

/// Cell centers sit at (i + 0.5) * g texels; positions outside the first/last
/// center clamp to the edge cell.
inline std::vector<AxisTap> axis_taps(int texels, int grid_size) {
    const int cells = (texels + grid_size - 1) / grid_size;
    std::vector<AxisTap> taps(static_cast<std::size_t>(texels));
    for (int i = 0; i < texels; ++i) {
        const double p = std::clamp((i + 0.5) / grid_size - 0.5, 0.0, static_cast<double>(cells - 1));
        const int i0 = static_cast<int>(std::floor(p));
        const int i1 = std::min(i0 + 1, cells - 1);
        const double f = p - i0;
        taps[static_cast<std::size_t>(i)] = {i0, i1, 1.0 - f, f};
    }
    return taps;
}

struct LightingGradient {
    SHCoeffs d_global{};
    UVField d_grid;

    LightingGradient() = default;
    LightingGradient(int rows, int cols) : d_grid(rows, cols, kShCoeffCount) {}

    LightingGradient& operator+=(const LightingGradient& o) {
        for (int i = 0; i < kShCoeffCount; ++i) d_global[i] += o.d_global[i];
        auto a = d_grid.data();
        auto b = o.d_grid.data();
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
        return *this;
    }
    LightingGradient& operator*=(double s) {
        for (double& v : d_global) v *= s;
        for (double& v : d_grid.data()) v *= s;
        return *this;
    }
    std::span<double> cell(int r, int c) { return d_grid.texel(r, c); }

    bool all_finite() const {
        return d_grid.all_finite() &&
               std::all_of(d_global.begin(), d_global.end(), [](double v) { return std::isfinite(v); });
    }
};

/// Gradient contribution of one texel row. A row only reaches the two grid rows of
/// its vertical tap, so only those are stored.
struct RowGradient {
    SHCoeffs d_global{};
    int r0 = 0;
    UVField cells;  // 2 x cols x 27; row 0 is grid row r0, row 1 is r0 + 1

    RowGradient() = default;
    RowGradient(int first_row, int cols) : r0(first_row), cells(2, cols, kShCoeffCount) {}
    std::span<double> cell(int r, int c) { return cells.texel(r - r0, c); }
};

class TexelGridLight {
public:
    TexelGridLight() = default;

    /// Zero grid over an H x W texture with `grid_size` texels per cell.
    TexelGridLight(int height, int width, int grid_size, UVField mask, SHCoeffs global = {})
        : global_(global), grid_size_(grid_size), mask_(std::move(mask)) {
        if (height <= 0 || width <= 0) throw DimensionError("TexelGridLight: empty texture");
        if (grid_size < 1) throw InvalidArgument("TexelGridLight: grid size must be >= 1");
        require_channels(mask_, 1, "TexelGridLight(mask)");
        if (mask_.height() != height || mask_.width() != width)
            throw DimensionError("TexelGridLight: mask is " + mask_.shape_string() + ", texture is " +
                                 UVField::shape_string(height, width, 1));
        for (double m : mask_.data())
            if (!(m >= 0.0 && m <= 1.0)) throw InvalidArgument("TexelGridLight: mask values must lie in [0, 1]");
        grid_ = UVField(grid_cells(height, grid_size), grid_cells(width, grid_size), kShCoeffCount);
        row_taps_ = axis_taps(height, grid_size);
        col_taps_ = axis_taps(width, grid_size);
    }

    static int grid_cells(int texels, int grid_size) { return (texels + grid_size - 1) / grid_size; }

    int height() const noexcept { return mask_.height(); }
    int width() const noexcept { return mask_.width(); }
    int grid_size() const noexcept { return grid_size_; }
    int grid_rows() const noexcept { return grid_.height(); }
    int grid_cols() const noexcept { return grid_.width(); }

    const SHCoeffs& global() const noexcept { return global_; }
    SHCoeffs& global() noexcept { return global_; }
    const UVField& grid() const noexcept { return grid_; }
    UVField& grid() noexcept { return grid_; }
    const UVField& mask() const noexcept { return mask_; }

    void set_grid(UVField grid) {
        if (grid.height() != grid_rows() || grid.width() != grid_cols() || grid.channels() != kShCoeffCount)
            throw DimensionError("set_grid: expected " +
                                 UVField::shape_string(grid_rows(), grid_cols(), kShCoeffCount) + ", got " +
                                 grid.shape_string());
        grid_ = std::move(grid);
    }

    const AxisTap& row_tap(int y) const { return row_taps_[static_cast<std::size_t>(y)]; }
    const AxisTap& col_tap(int x) const { return col_taps_[static_cast<std::size_t>(x)]; }

    /// Bilinearly interpolated grid vector at texel (x, y), before mask modulation.
    SHCoeffs grid_coeffs(int x, int y) const {
        const AxisTap& r = row_tap(y);
        const AxisTap& c = col_tap(x);
        SHCoeffs out{};
        const double w[4] = {r.w0 * c.w0, r.w0 * c.w1, r.w1 * c.w0, r.w1 * c.w1};
        const int rr[4] = {r.i0, r.i0, r.i1, r.i1};
        const int cc[4] = {c.i0, c.i1, c.i0, c.i1};
        for (int k = 0; k < 4; ++k) {
            if (w[k] == 0.0) continue;
            auto cell = grid_.texel(rr[k], cc[k]);
            for (int i = 0; i < kShCoeffCount; ++i) out[i] += w[k] * cell[static_cast<std::size_t>(i)];
        }
        return out;
    }

    /// Mask-modulated local term gamma^V * M at texel (x, y).
    SHCoeffs local_term(int x, int y) const {
        SHCoeffs v = grid_coeffs(x, y);
        const double m = mask_.at(y, x);
        for (double& e : v) e *= m;
        return v;
    }

    /// Effective coefficients gamma_g + gamma^V * M at texel (x, y).
    SHCoeffs local_coeffs(int x, int y) const {
        const double m = mask_.at(y, x);
        if (m == 0.0) return global_;
        SHCoeffs v = grid_coeffs(x, y);
        for (int i = 0; i < kShCoeffCount; ++i) v[i] = global_[i] + m * v[i];
        return v;
    }

    LightingGradient zero_gradient() const { return LightingGradient(grid_rows(), grid_cols()); }

    /// Scatters a per-texel gradient w.r.t. the effective coefficients (d_eff) and
    /// w.r.t. the masked local term only (d_local) into `grad`.
    template <typename Grad>
    void scatter(int x, int y, const SHCoeffs* d_eff, const SHCoeffs* d_local, Grad& grad) const {
        if (d_eff)
            for (int i = 0; i < kShCoeffCount; ++i) grad.d_global[i] += (*d_eff)[i];
        const double m = mask_.at(y, x);
        if (m == 0.0) return;
        SHCoeffs d{};
        for (int i = 0; i < kShCoeffCount; ++i)
            d[i] = m * ((d_eff ? (*d_eff)[i] : 0.0) + (d_local ? (*d_local)[i] : 0.0));
        const AxisTap& r = row_tap(y);
        const AxisTap& c = col_tap(x);
        const double w[4] = {r.w0 * c.w0, r.w0 * c.w1, r.w1 * c.w0, r.w1 * c.w1};
        const int rr[4] = {r.i0, r.i0, r.i1, r.i1};
        const int cc[4] = {c.i0, c.i1, c.i0, c.i1};
        for (int k = 0; k < 4; ++k) {
            if (w[k] == 0.0) continue;
            auto cell = grad.cell(rr[k], cc[k]);
            for (int i = 0; i < kShCoeffCount; ++i) cell[static_cast<std::size_t>(i)] += w[k] * d[i];
        }
    }

private:
    SHCoeffs global_{};
    int grid_size_ = 96;
    UVField grid_;
    UVField mask_;
    std::vector<AxisTap> row_taps_;
    std::vector<AxisTap> col_taps_;
};

namespace detail {

// Runs per_row(y, partial) for rows 0..rows-1 (y is a texel row, or a lattice row
// when texel_row(j) maps it) and merges the row partials in row order, so the
// gradient is bit-identical for any worker count.
template <typename RowFn, typename TexelRow>
std::pair<double, LightingGradient> reduce_rows(const TexelGridLight& light, int rows, TexelRow&& texel_row,
                                                RowFn&& per_row) {
    std::vector<RowGradient> partial(static_cast<std::size_t>(rows));
    std::vector<double> loss(static_cast<std::size_t>(rows), 0.0);
    parallel_for(rows, [&](int b, int e) {
        for (int j = b; j < e; ++j) {
            partial[static_cast<std::size_t>(j)] = RowGradient(light.row_tap(texel_row(j)).i0, light.grid_cols());
            loss[static_cast<std::size_t>(j)] = per_row(j, partial[static_cast<std::size_t>(j)]);
        }
    });
    LightingGradient total = light.zero_gradient();
    double sum = 0.0;
    for (int j = 0; j < rows; ++j) {
        const RowGradient& p = partial[static_cast<std::size_t>(j)];
        for (int i = 0; i < kShCoeffCount; ++i) total.d_global[i] += p.d_global[i];
        for (int r = 0; r < 2 && p.r0 + r < light.grid_rows(); ++r)
            for (int c = 0; c < light.grid_cols(); ++c) {
                auto dst = total.d_grid.texel(p.r0 + r, c);
                auto src = p.cells.texel(r, c);
                for (int i = 0; i < kShCoeffCount; ++i) dst[static_cast<std::size_t>(i)] += src[static_cast<std::size_t>(i)];
            }
        sum += loss[static_cast<std::size_t>(j)];
    }
    return {sum, std::move(total)};
}

inline void check_render_inputs(const TexelGridLight& light, const UVField& albedo, const UVField& normals) {
    require_channels(albedo, 3, "render(albedo)");
    require_channels(normals, 3, "render(normals)");
    require_same_extent(albedo, normals, "render");
    if (albedo.height() != light.height() || albedo.width() != light.width())
        throw DimensionError("render: lighting is " + UVField::shape_string(light.height(), light.width(), 1) +
                             ", albedo is " + albedo.shape_string());
}

inline std::size_t count_valid(const UVField& valid) {
    std::size_t n = 0;
    for (double v : valid.data()) n += v > 0.5 ? 1 : 0;
    return n;
}

}  // namespace detail

/// Per-texel shading (irradiance / pi) under the light; 3 channels.
inline UVField shading(const TexelGridLight& light, const UVField& normals) {
    require_channels(normals, 3, "shading(normals)");
    UVField out(normals.height(), normals.width(), 3);
    parallel_for(normals.height(), [&](int y0, int y1) {
        for (int y = y0; y < y1; ++y)
            for (int x = 0; x < normals.width(); ++x) {
                const Vec3 s = shading_from_weights(lambert_weights(texel3(normals, y, x)), light.local_coeffs(x, y));
                for (int c = 0; c < 3; ++c) out.at(y, x, c) = s[c];
            }
    });
    return out;
}

inline UVField render(const TexelGridLight& light, const UVField& albedo, const UVField& normals) {
    detail::check_render_inputs(light, albedo, normals);
    return shade_field(albedo, normals, [&](int y, int x) { return light.local_coeffs(x, y); });
}

/// Mean over valid texels of the squared color error ||render - target||^2.
inline double photometric_loss(const TexelGridLight& light, const UVField& albedo, const UVField& normals,
                               const UVField& target, const UVField& valid) {
    detail::check_render_inputs(light, albedo, normals);
    require_same_extent(albedo, target, "photometric_loss(target)");
    require_same_extent(albedo, valid, "photometric_loss(valid)");
    const std::size_t n = detail::count_valid(valid);
    if (n == 0) throw InvalidArgument("photometric_loss: no valid texels");
    const double sum = ordered_sum(albedo.height(), [&](int y) {
        double row = 0.0;
        for (int x = 0; x < albedo.width(); ++x) {
            if (valid.at(y, x) <= 0.5) continue;
            const Vec3 c = shade_texel(texel3(albedo, y, x), texel3(normals, y, x), light.local_coeffs(x, y));
            for (int ch = 0; ch < 3; ++ch) {
                const double r = c[ch] - target.at(y, x, ch);
                row += r * r;
            }
        }
        return row;
    });
    return sum / static_cast<double>(n);
}

struct PhotometricGradients {
    LightingGradient lighting;
    UVField albedo;  // 3 channels
    double loss = 0.0;
};

/// Analytic gradients of photometric_loss w.r.t. the lighting parameters and albedo.
inline PhotometricGradients loss_gradients(const TexelGridLight& light, const UVField& albedo,
                                           const UVField& normals, const UVField& target, const UVField& valid) {
    detail::check_render_inputs(light, albedo, normals);
    require_same_extent(albedo, target, "loss_gradients(target)");
    require_same_extent(albedo, valid, "loss_gradients(valid)");
    const std::size_t n = detail::count_valid(valid);
    if (n == 0) throw InvalidArgument("loss_gradients: no valid texels");
    const double inv_n = 1.0 / static_cast<double>(n);

    PhotometricGradients out;
    out.albedo = UVField(albedo.height(), albedo.width(), 3);
    auto [sum, grad] = detail::reduce_rows(light, albedo.height(), [](int y) { return y; }, [&](int y, RowGradient& g) {
        double row = 0.0;
        for (int x = 0; x < albedo.width(); ++x) {
            if (valid.at(y, x) <= 0.5) continue;
            const SHBasis w = lambert_weights(texel3(normals, y, x));
            const Vec3 s = shading_from_weights(w, light.local_coeffs(x, y));
            SHCoeffs d_eff{};
            for (int c = 0; c < 3; ++c) {
                const double a = albedo.at(y, x, c);
                const double r = a * s[c] - target.at(y, x, c);
                row += r * r;
                const double dr = 2.0 * r * inv_n;
                out.albedo.at(y, x, c) = dr * s[c];
                for (int b = 0; b < kShBasisCount; ++b) d_eff[3 * b + c] = dr * a * w[b];
            }
            light.scatter(x, y, &d_eff, nullptr, g);
        }
        return row;
    });
    out.loss = sum * inv_n;
    out.lighting = std::move(grad);
    return out;
}

struct RegularizerTerm {
    double loss = 0.0;
    LightingGradient grad;
};

namespace detail {

inline int lattice_count(int texels, int stride) { return (texels + stride - 1) / stride; }

}  // namespace detail

/// Total variation of the effective coefficients on a lattice with spacing `stride`:
/// sum ||g(p) - g(p - s e_y)||^2 + ||g(p) - g(p - s e_x)||^2.
inline RegularizerTerm tv_loss_and_grad(const TexelGridLight& light, int stride = 4) {
    if (stride < 1) throw InvalidArgument("tv_loss_and_grad: stride must be >= 1");
    const int ly = detail::lattice_count(light.height(), stride);
    const int lx = detail::lattice_count(light.width(), stride);
    // Lattice values of the effective coefficients.
    UVField lat(ly, lx, kShCoeffCount);
    parallel_for(ly, [&](int b, int e) {
        for (int j = b; j < e; ++j)
            for (int i = 0; i < lx; ++i) {
                const SHCoeffs g = light.local_coeffs(i * stride, j * stride);
                std::copy(g.begin(), g.end(), lat.texel(j, i).begin());
            }
    });
    // dL/dg at each lattice point.
    UVField dlat(ly, lx, kShCoeffCount);
    const double loss = ordered_sum(ly, [&](int j) {
        double row = 0.0;
        for (int i = 0; i < lx; ++i) {
            auto d = dlat.texel(j, i);
            auto g = lat.texel(j, i);
            for (int k = 0; k < kShCoeffCount; ++k) {
                const std::size_t kk = static_cast<std::size_t>(k);
                double grad = 0.0;
                if (j > 0) {
                    const double diff = g[kk] - lat.at(j - 1, i, k);
                    row += diff * diff;
                    grad += 2.0 * diff;
                }
                if (i > 0) {
                    const double diff = g[kk] - lat.at(j, i - 1, k);
                    row += diff * diff;
                    grad += 2.0 * diff;
                }
                if (j + 1 < ly) grad -= 2.0 * (lat.at(j + 1, i, k) - g[kk]);
                if (i + 1 < lx) grad -= 2.0 * (lat.at(j, i + 1, k) - g[kk]);
                d[kk] = grad;
            }
        }
        return row;
    });
    auto [unused, grad] = detail::reduce_rows(light, ly, [stride](int j) { return j * stride; }, [&](int j, RowGradient& g) {
        for (int i = 0; i < lx; ++i) {
            SHCoeffs d{};
            auto src = dlat.texel(j, i);
            std::copy(src.begin(), src.end(), d.begin());
            light.scatter(i * stride, j * stride, &d, nullptr, g);
        }
        return 0.0;
    });
    return {loss, std::move(grad)};
}

/// Penalty on positive shading of the masked local term: sum_c max(0, s_c)^2 with
/// s_c = sum_b B_l(b) Y_b(n) (gamma^V M)[3b + c] (no 1/pi), on the stride lattice.
inline RegularizerTerm neg_shading_loss_and_grad(const TexelGridLight& light, const UVField& normals,
                                                 int stride = 4) {
    if (stride < 1) throw InvalidArgument("neg_shading_loss_and_grad: stride must be >= 1");
    require_channels(normals, 3, "neg_shading_loss_and_grad(normals)");
    if (normals.height() != light.height() || normals.width() != light.width())
        throw DimensionError("neg_shading_loss_and_grad: normals do not match lighting extent");
    const int ly = detail::lattice_count(light.height(), stride);
    const int lx = detail::lattice_count(light.width(), stride);
    auto [loss, grad] = detail::reduce_rows(light, ly, [stride](int j) { return j * stride; }, [&](int j, RowGradient& g) {
        double row = 0.0;
        const int y = j * stride;
        for (int i = 0; i < lx; ++i) {
            const int x = i * stride;
            if (light.mask().at(y, x) == 0.0) continue;
            const SHCoeffs local = light.local_term(x, y);
            SHBasis w = sh_basis(texel3(normals, y, x));
            for (int b = 0; b < kShBasisCount; ++b) w[b] *= lambert_band(sh_band(b));
            SHCoeffs d_local{};
            bool any = false;
            for (int c = 0; c < 3; ++c) {
                double s = 0.0;
                for (int b = 0; b < kShBasisCount; ++b) s += w[b] * local[3 * b + c];
                if (s <= 0.0) continue;
                any = true;
                row += s * s;
                for (int b = 0; b < kShBasisCount; ++b) d_local[3 * b + c] = 2.0 * s * w[b];
            }
            if (any) light.scatter(x, y, nullptr, &d_local, g);
        }
        return row;
    });
    return {loss, std::move(grad)};
}

struct RegularizerWeights {
    double tv = 0.1;
    double neg = 1.0;
    int stride = 4;
};

struct RegularizerLoss {
    double total = 0.0;
    double tv = 0.0;
    double neg = 0.0;
    LightingGradient grad;
};

/// tv_weight * L_TV + neg_weight * L_neg and the matching gradient.
inline RegularizerLoss reg_loss_and_grad(const TexelGridLight& light, const UVField& normals,
                                         const RegularizerWeights& weights = {}) {
    RegularizerTerm tv = tv_loss_and_grad(light, weights.stride);
    RegularizerTerm neg = neg_shading_loss_and_grad(light, normals, weights.stride);
    RegularizerLoss out;
    out.tv = tv.loss;
    out.neg = neg.loss;
    out.total = weights.tv * tv.loss + weights.neg * neg.loss;
    tv.grad *= weights.tv;
    neg.grad *= weights.neg;
    out.grad = std::move(tv.grad);
    out.grad += neg.grad;
    return out;
}

// ---------------------------------------------------------------------------
// Persistence: <dir>/light_grid.uvf (rows x cols x 27), <dir>/light_global.uvf
// (1 x 1 x 27), <dir>/light_mask.png and <dir>/light_meta.txt (grid size).

inline void save_lighting(const TexelGridLight& light, const std::filesystem::path& dir) {
    write_uvf(light.grid(), dir / "light_grid.uvf");
    UVField global(1, 1, kShCoeffCount);
    std::copy(light.global().begin(), light.global().end(), global.data().begin());
    write_uvf(global, dir / "light_global.uvf");
    write_png(light.mask(), dir / "light_mask.png");
    const std::string meta = "grid_size = " + std::to_string(light.grid_size()) + "\n";
    detail::write_file_atomic(dir / "light_meta.txt",
                              std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(meta.data()),
                                                             meta.size()));
}

inline TexelGridLight load_lighting(const std::filesystem::path& dir) {
    const auto meta = detail::read_file(dir / "light_meta.txt");
    const std::string text(meta.begin(), meta.end());
    const auto eq = text.find('=');
    int grid_size = 0;
    try {
        if (eq == std::string::npos || text.substr(0, eq).find("grid_size") == std::string::npos) throw 0;
        grid_size = std::stoi(text.substr(eq + 1));
    } catch (...) {
        throw DecodeError("light_meta.txt: expected 'grid_size = N'");
    }
    UVField mask = read_png(dir / "light_mask.png");
    if (mask.channels() != 1) mask = extract_channels(mask, 0, 1);
    UVField global = read_uvf(dir / "light_global.uvf");
    if (global.size() != kShCoeffCount) throw DecodeError("light_global.uvf must hold 27 values");
    SHCoeffs g{};
    std::copy(global.data().begin(), global.data().end(), g.begin());
    TexelGridLight light(mask.height(), mask.width(), grid_size, std::move(mask), g);
    light.set_grid(read_uvf(dir / "light_grid.uvf"));
    return light;
}

}  // namespace tgir
