#pragma once

// Joint posterior sampling of the reflectance stack and texel-grid lighting, its
// initialization (reference selection, color matching, global SH fit) and the
// prior-free Adam baseline.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "tgir/adam.hpp"
#include "tgir/diffusion.hpp"
#include "tgir/error.hpp"
#include "tgir/random.hpp"
#include "tgir/sh.hpp"
#include "tgir/synthetic.hpp"
#include "tgir/texel_grid_light.hpp"
#include "tgir/uvfield.hpp"

namespace tgir {

struct SamplerConfig {
    int steps = 1000;
    double t_init_frac = 0.6;
    double zeta = 1.0;
    double eta0 = 0.01;
    double eta_final_ratio = 0.1;  ///< eta at the last step relative to eta0
    int grid_size = 96;
    double tv_weight = 0.1;
    double neg_weight = 1.0;
    int reg_stride = 4;
    std::uint64_t seed = 0;
    bool use_grid = true;
    bool exact_jacobian = false;   ///< use the denoiser's closed-form Jacobian when it has one
    bool fit_outside_mask = true;  ///< fit gamma_g only on valid texels where M = 0

    void validate() const {
        if (steps < 2) throw InvalidArgument("sampler: steps must be >= 2");
        if (!(t_init_frac > 0.0 && t_init_frac <= 1.0)) throw InvalidArgument("sampler: t_init_frac must lie in (0, 1]");
        if (!(zeta >= 0.0)) throw InvalidArgument("sampler: zeta must be >= 0");
        if (!(eta0 > 0.0)) throw InvalidArgument("sampler: eta0 must be > 0");
        if (!(eta_final_ratio > 0.0)) throw InvalidArgument("sampler: eta_final_ratio must be > 0");
        if (grid_size < 1) throw InvalidArgument("sampler: grid_size must be >= 1");
        if (reg_stride < 1) throw InvalidArgument("sampler: reg_stride must be >= 1");
        if (tv_weight < 0.0 || neg_weight < 0.0) throw InvalidArgument("sampler: regularizer weights must be >= 0");
    }

    int t_init() const { return std::clamp(static_cast<int>(std::lround(t_init_frac * steps)), 1, steps); }

    /// Per-step decay so that eta(1) = eta_final_ratio * eta0.
    double eta_decay() const {
        const int t0 = t_init();
        return t0 > 1 ? std::pow(eta_final_ratio, 1.0 / (t0 - 1)) : 1.0;
    }
    double eta(int t) const { return eta0 * std::pow(eta_decay(), t_init() - t); }
};

struct TraceRow {
    int step = 0;
    double l_pho = 0.0;
    double l_tv = 0.0;
    double l_neg = 0.0;
};

struct SolveResult {
    UVField stack;  ///< finalized 7-channel reflectance stack
    TexelGridLight light;
    std::vector<TraceRow> trace;
    UVField shading;
    double final_loss = 0.0;  ///< L_pho of the finalized albedo under the final light
    double clamped_fraction = 0.0;  ///< share of albedo/specular values clamped by finalize_stack
    bool ridge_fallback = false;
};

/// Inputs shared by the sampler and the baseline.
struct SolveInputs {
    UVField target;   ///< I_UV, 3 channels
    UVField valid;    ///< 1 channel
    UVField normals;  ///< 3 channels, unit length
    UVField mask;     ///< shadow mask M, 1 channel

    void validate() const {
        require_channels(target, 3, "solve(target)");
        require_channels(valid, 1, "solve(valid)");
        require_channels(normals, 3, "solve(normals)");
        require_channels(mask, 1, "solve(mask)");
        require_same_extent(target, valid, "solve(valid)");
        require_same_extent(target, normals, "solve(normals)");
        require_same_extent(target, mask, "solve(mask)");
    }
};

// ---------------------------------------------------------------------------
// Initialization

/// Index of the tone closest (L2) to `target`; ties go to the lowest index.
inline std::size_t select_reference(const std::vector<Vec3>& tones, const Vec3& target) {
    if (tones.empty()) throw InvalidArgument("select_reference: empty library");
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < tones.size(); ++i) {
        double d = 0.0;
        for (int c = 0; c < 3; ++c) d += (tones[i][c] - target[c]) * (tones[i][c] - target[c]);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

inline const ReferenceEntry& select_reference(const std::vector<ReferenceEntry>& library, const Vec3& target) {
    std::vector<Vec3> tones;
    tones.reserve(library.size());
    for (const auto& e : library) tones.push_back(e.tone);
    return library[select_reference(tones, target)];
}

/// Per-channel affine transfer (in - mu_src) * (sigma_tgt / sigma_src) + mu_tgt with
/// statistics over the mask, clamped to [0, 1]. Without `target_sigma` the source
/// spread is kept (mean shift only).
inline UVField color_match(const UVField& source, const Vec3& target_tone, const UVField& mask,
                           const std::optional<Vec3>& target_sigma = std::nullopt) {
    require_channels(source, 3, "color_match(source)");
    require_channels(mask, 1, "color_match(mask)");
    require_same_extent(source, mask, "color_match");
    Vec3 mean{0, 0, 0}, var{0, 0, 0};
    double n = 0;
    for (int y = 0; y < source.height(); ++y)
        for (int x = 0; x < source.width(); ++x) {
            if (mask.at(y, x) <= 0.5) continue;
            for (int c = 0; c < 3; ++c) mean[c] += source.at(y, x, c);
            n += 1;
        }
    if (n == 0) throw InvalidArgument("color_match: empty mask");
    for (double& m : mean) m /= n;
    for (int y = 0; y < source.height(); ++y)
        for (int x = 0; x < source.width(); ++x) {
            if (mask.at(y, x) <= 0.5) continue;
            for (int c = 0; c < 3; ++c) var[c] += (source.at(y, x, c) - mean[c]) * (source.at(y, x, c) - mean[c]);
        }
    Vec3 scale{1, 1, 1};
    for (int c = 0; c < 3; ++c) {
        const double sd = std::sqrt(var[c] / n);
        if (sd == 0.0) throw InvalidArgument("color_match: source has zero spread in channel " + std::to_string(c));
        if (target_sigma) scale[c] = (*target_sigma)[c] / sd;
    }
    UVField out(source.height(), source.width(), 3);
    for (int y = 0; y < source.height(); ++y)
        for (int x = 0; x < source.width(); ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = std::clamp((source.at(y, x, c) - mean[c]) * scale[c] + target_tone[c], 0.0, 1.0);
    return out;
}

/// Color-matched copy of a reflectance stack: only the albedo channels change.
inline UVField color_match_stack(const UVField& stack, const Vec3& target_tone, const UVField& mask) {
    require_channels(stack, stack_layout::kChannels, "color_match_stack");
    UVField out = stack;
    insert_channels(out, color_match(extract_channels(stack, stack_layout::kAlbedo, 3), target_tone, mask),
                    stack_layout::kAlbedo);
    return out;
}

struct GlobalFit {
    SHCoeffs gamma{};
    bool ridge_fallback = false;
};

/// Exact least squares min_gamma sum_valid ||target - shade(albedo, n, gamma)||^2,
/// solved per channel through the 9x9 normal equations.
inline GlobalFit fit_global_sh(const UVField& target, const UVField& albedo, const UVField& normals,
                               const UVField& valid) {
    require_channels(target, 3, "fit_global_sh(target)");
    require_channels(albedo, 3, "fit_global_sh(albedo)");
    require_channels(normals, 3, "fit_global_sh(normals)");
    require_channels(valid, 1, "fit_global_sh(valid)");
    require_same_extent(target, albedo, "fit_global_sh");
    require_same_extent(target, normals, "fit_global_sh");
    require_same_extent(target, valid, "fit_global_sh");
    using Mat9 = Eigen::Matrix<double, 9, 9>;
    using Vec9 = Eigen::Matrix<double, 9, 1>;
    Mat9 ata[3];
    Vec9 atb[3];
    for (int c = 0; c < 3; ++c) {
        ata[c].setZero();
        atb[c].setZero();
    }
    for (int y = 0; y < target.height(); ++y)
        for (int x = 0; x < target.width(); ++x) {
            if (valid.at(y, x) <= 0.5) continue;
            const SHBasis w = lambert_weights(texel3(normals, y, x));
            for (int c = 0; c < 3; ++c) {
                Vec9 row;
                for (int b = 0; b < 9; ++b) row[b] = albedo.at(y, x, c) * w[static_cast<std::size_t>(b)];
                ata[c].noalias() += row * row.transpose();
                atb[c] += row * target.at(y, x, c);
            }
        }
    GlobalFit out;
    for (int c = 0; c < 3; ++c) {
        Eigen::SelfAdjointEigenSolver<Mat9> eig(ata[c], Eigen::EigenvaluesOnly);
        const double lmax = eig.eigenvalues().maxCoeff();
        const double lmin = eig.eigenvalues().minCoeff();
        Mat9 a = ata[c];
        if (!(lmax > 0.0) || lmin <= 1e-12 * lmax) {
            a += 1e-6 * Mat9::Identity();
            out.ridge_fallback = true;
        }
        const Vec9 sol = a.ldlt().solve(atb[c]);
        for (int b = 0; b < 9; ++b) out.gamma[static_cast<std::size_t>(3 * b + c)] = sol[b];
    }
    return out;
}

/// Valid texels outside the shadow mask, or all valid texels when that leaves
/// fewer than 9 (the SH fit would be underdetermined).
inline UVField global_fit_region(const SolveInputs& in, bool outside_mask) {
    if (!outside_mask) return in.valid;
    UVField region(in.valid.height(), in.valid.width(), 1);
    std::size_t n = 0;
    for (std::size_t i = 0; i < region.size(); ++i) {
        const bool on = in.valid.data()[i] > 0.5 && in.mask.data()[i] <= 0.5;
        region.data()[i] = on ? 1.0 : 0.0;
        n += on ? 1 : 0;
    }
    return n >= 9 ? region : in.valid;
}

/// Per-channel mean and variance (+ floor) of a stack: the moments of the Gaussian
/// prior used as the oracle denoiser.
inline GaussianPriorDenoiser gaussian_prior_from(const UVField& stack, const DiffusionSchedule& schedule,
                                                 double var_floor = 1e-4) {
    const int c = stack.channels();
    std::vector<double> mean(static_cast<std::size_t>(c), 0.0), var(static_cast<std::size_t>(c), 0.0);
    const double n = static_cast<double>(stack.texels());
    for (std::size_t t = 0; t < stack.texels(); ++t)
        for (int k = 0; k < c; ++k) mean[static_cast<std::size_t>(k)] += stack.data()[t * c + k];
    for (double& m : mean) m /= n;
    for (std::size_t t = 0; t < stack.texels(); ++t)
        for (int k = 0; k < c; ++k) {
            const double d = stack.data()[t * c + k] - mean[static_cast<std::size_t>(k)];
            var[static_cast<std::size_t>(k)] += d * d;
        }
    for (double& v : var) v = v / n + var_floor;
    return GaussianPriorDenoiser(schedule, mean, var);
}

/// Clamp albedo and specular to [0, 1] and renormalize the detail normals.
/// Returns the fraction of albedo/specular values that lay outside [0, 1].
inline double finalize_stack(UVField& stack) {
    using namespace stack_layout;
    require_channels(stack, kChannels, "finalize_stack");
    std::size_t outside = 0;
    auto clamp01 = [&](double& v) {
        if (v < 0.0 || v > 1.0) ++outside;
        v = std::clamp(v, 0.0, 1.0);
    };
    for (int y = 0; y < stack.height(); ++y)
        for (int x = 0; x < stack.width(); ++x) {
            for (int c = 0; c < 3; ++c) clamp01(stack.at(y, x, kAlbedo + c));
            clamp01(stack.at(y, x, kSpecular));
            const Vec3 n = normalized({stack.at(y, x, kNormal), stack.at(y, x, kNormal + 1), stack.at(y, x, kNormal + 2)});
            for (int c = 0; c < 3; ++c) stack.at(y, x, kNormal + c) = n[c];
        }
    return static_cast<double>(outside) / (4.0 * static_cast<double>(stack.texels()));
}

namespace detail {

inline std::size_t valid_count(const UVField& valid) {
    std::size_t n = 0;
    for (double v : valid.data()) n += v > 0.5 ? 1 : 0;
    return n;
}

// Lighting parameters flattened as [gamma_g | grid] for the optimizer.
inline std::vector<double> flatten(const SHCoeffs& g, const UVField& grid) {
    std::vector<double> v(g.begin(), g.end());
    v.insert(v.end(), grid.data().begin(), grid.data().end());
    return v;
}

inline void unflatten(const std::vector<double>& v, TexelGridLight& light) {
    std::copy(v.begin(), v.begin() + kShCoeffCount, light.global().begin());
    std::copy(v.begin() + kShCoeffCount, v.end(), light.grid().data().begin());
}

// Gradient of N * L_pho + L_reg w.r.t. the flattened lighting parameters.
inline std::vector<double> lighting_objective_grad(const TexelGridLight& light, const UVField& normals,
                                                   const LightingGradient& pho, double n_valid, bool use_reg,
                                                   const RegularizerWeights& rw, TraceRow& row) {
    LightingGradient g = pho;
    g *= n_valid;
    if (use_reg) {
        RegularizerLoss reg = reg_loss_and_grad(light, normals, rw);
        g += reg.grad;
        row.l_tv = reg.tv;
        row.l_neg = reg.neg;
    }
    return flatten(g.d_global, g.d_grid);
}

inline bool light_finite(const TexelGridLight& light) {
    return light.grid().all_finite() &&
           std::all_of(light.global().begin(), light.global().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace detail

/// Optional per-step observer (step, current trace row).
using SolveObserver = std::function<void(int, const TraceRow&)>;

/// Warm-started posterior sampling with joint lighting updates:
///   x_T0 = q_sample(reference, T0)
///   per step t = T0..1:
///     eps = prior(x_t), x_hat = estimate_x0(x_t, eps)
///     x'  = reverse_step(x_t, eps)
///     x_{t-1} = x' - zeta * (N / 2) * dL_pho/dx_hat * dx_hat/dx_t   (albedo channels)
///     theta  <- Adam step on N * L_pho(x_hat, theta) + L_reg(theta) with rate eta_t
/// where L_pho is the mean over the N valid texels, so (N / 2) dL_pho is the gradient
/// of the half sum of squared residuals.
inline SolveResult solve(const SolveInputs& in, const Denoiser& prior, const DiffusionSchedule& schedule,
                         const UVField& reference, const SamplerConfig& cfg, const SolveObserver& observer = {}) {
    using namespace stack_layout;
    cfg.validate();
    in.validate();
    require_channels(reference, kChannels, "solve(reference)");
    require_same_extent(reference, in.target, "solve(reference)");
    if (schedule.steps() != cfg.steps) throw InvalidArgument("solve: schedule length differs from config steps");
    const std::size_t n_valid = detail::valid_count(in.valid);
    if (n_valid == 0) throw InvalidArgument("solve: no valid texels");
    const int h = in.target.height(), w = in.target.width();

    SolveResult res;
    const UVField ref_albedo = extract_channels(reference, kAlbedo, 3);
    const GlobalFit fit = fit_global_sh(in.target, ref_albedo, in.normals, global_fit_region(in, cfg.fit_outside_mask));
    res.ridge_fallback = fit.ridge_fallback;
    TexelGridLight light(h, w, cfg.grid_size, cfg.use_grid ? in.mask : UVField(h, w, 1), fit.gamma);

    Rng rng(cfg.seed);
    const int t0 = cfg.t_init();
    UVField x = q_sample(reference, t0, normal_field(h, w, kChannels, rng), schedule);
    const UVField uv = make_uv_condition(h, w);
    std::vector<double> theta = detail::flatten(light.global(), light.grid());
    AdamState adam(theta.size());
    const RegularizerWeights rw{cfg.tv_weight, cfg.neg_weight, cfg.reg_stride};
    const std::optional<std::vector<double>> exact =
        cfg.exact_jacobian ? prior.clean_estimate_jacobian(t0) : std::nullopt;
    if (cfg.exact_jacobian && !exact)
        throw InvalidArgument("solve: exact Jacobian requested but the denoiser has no closed form");

    res.trace.reserve(static_cast<std::size_t>(t0));
    for (int t = t0; t >= 1; --t) {
        const UVField eps = prior.predict_noise(x, t, uv);
        const UVField xhat = estimate_x0(x, t, eps, schedule);
        const PhotometricGradients pg =
            loss_gradients(light, extract_channels(xhat, kAlbedo, 3), in.normals, in.target, in.valid);
        const UVField z = normal_field(h, w, kChannels, rng);
        UVField next = reverse_step(x, t, eps, z, schedule);

        double jac[3];
        if (cfg.exact_jacobian) {
            const auto j = *prior.clean_estimate_jacobian(t);
            for (int c = 0; c < 3; ++c) jac[c] = j[static_cast<std::size_t>(kAlbedo + c)];
        } else {
            for (double& j : jac) j = 1.0 / std::sqrt(schedule.alpha_bar(t));
        }
        const double k = cfg.zeta * 0.5 * static_cast<double>(n_valid);
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
                for (int c = 0; c < 3; ++c) next.at(y, xx, kAlbedo + c) -= k * jac[c] * pg.albedo.at(y, xx, c);

        TraceRow row{t, pg.loss, 0.0, 0.0};
        const auto grad = detail::lighting_objective_grad(light, in.normals, pg.lighting,
                                                          static_cast<double>(n_valid), cfg.use_grid, rw, row);
        adam.step(theta, grad, cfg.eta(t));
        detail::unflatten(theta, light);
        res.trace.push_back(row);
        if (observer) observer(t, row);

        x = std::move(next);
        if (!x.all_finite() || !detail::light_finite(light) || !std::isfinite(pg.loss))
            throw NumericalError("solve: non-finite state at step " + std::to_string(t), t);
    }
    res.clamped_fraction = finalize_stack(x);
    res.final_loss = photometric_loss(light, extract_channels(x, kAlbedo, 3), in.normals, in.target, in.valid);
    res.shading = shading(light, in.normals);
    res.stack = std::move(x);
    res.light = std::move(light);
    return res;
}

struct BaselineConfig {
    int iterations = 600;
    double learning_rate = 0.01;
};

/// Prior-free ablation: Adam on albedo texels and lighting jointly, starting from the
/// reference albedo and the same global SH fit as solve().
inline SolveResult solve_adam_baseline(const SolveInputs& in, const UVField& reference, const SamplerConfig& cfg,
                                       const BaselineConfig& bc = {}, const SolveObserver& observer = {}) {
    using namespace stack_layout;
    cfg.validate();
    in.validate();
    require_channels(reference, kChannels, "solve_adam_baseline(reference)");
    require_same_extent(reference, in.target, "solve_adam_baseline(reference)");
    const std::size_t n_valid = detail::valid_count(in.valid);
    if (n_valid == 0) throw InvalidArgument("solve_adam_baseline: no valid texels");
    const int h = in.target.height(), w = in.target.width();

    SolveResult res;
    UVField albedo = extract_channels(reference, kAlbedo, 3);
    const GlobalFit fit = fit_global_sh(in.target, albedo, in.normals, global_fit_region(in, cfg.fit_outside_mask));
    res.ridge_fallback = fit.ridge_fallback;
    TexelGridLight light(h, w, cfg.grid_size, cfg.use_grid ? in.mask : UVField(h, w, 1), fit.gamma);
    std::vector<double> theta = detail::flatten(light.global(), light.grid());
    AdamState adam_light(theta.size());
    AdamState adam_albedo(albedo.size());
    const RegularizerWeights rw{cfg.tv_weight, cfg.neg_weight, cfg.reg_stride};
    const double nv = static_cast<double>(n_valid);
    std::vector<double> ga(albedo.size());

    for (int s = 1; s <= bc.iterations; ++s) {
        const PhotometricGradients pg = loss_gradients(light, albedo, in.normals, in.target, in.valid);
        TraceRow row{s, pg.loss, 0.0, 0.0};
        const auto gl = detail::lighting_objective_grad(light, in.normals, pg.lighting, nv, cfg.use_grid, rw, row);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = nv * pg.albedo.data()[i];
        adam_albedo.step(albedo.data(), ga, bc.learning_rate);
        adam_light.step(theta, gl, bc.learning_rate);
        detail::unflatten(theta, light);
        res.trace.push_back(row);
        if (observer) observer(s, row);
        if (!albedo.all_finite() || !detail::light_finite(light) || !std::isfinite(pg.loss))
            throw NumericalError("solve_adam_baseline: non-finite state at step " + std::to_string(s), s);
    }
    res.stack = reference;
    insert_channels(res.stack, albedo, kAlbedo);
    res.clamped_fraction = finalize_stack(res.stack);
    res.final_loss =
        photometric_loss(light, extract_channels(res.stack, kAlbedo, 3), in.normals, in.target, in.valid);
    res.shading = shading(light, in.normals);
    res.light = std::move(light);
    return res;
}

inline std::string trace_csv(const std::vector<TraceRow>& trace) {
    std::ostringstream os;
    os.precision(9);
    os << "step,l_pho,l_tv,l_neg\n";
    for (const TraceRow& r : trace) os << r.step << ',' << r.l_pho << ',' << r.l_tv << ',' << r.l_neg << '\n';
    return os.str();
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    detail::write_file_atomic(path, std::span<const unsigned char>(
                                        reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

/// stack.uvf, light_grid.uvf, light_global.uvf, light_mask.png, shading.uvf, trace.csv.
inline void save_result(const SolveResult& res, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("save_result: cannot create " + dir.string() + ": " + ec.message());
    write_uvf(res.stack, dir / "stack.uvf");
    save_lighting(res.light, dir);
    write_uvf(res.shading, dir / "shading.uvf");
    write_text_atomic(dir / "trace.csv", trace_csv(res.trace));
}

}  // namespace tgir
