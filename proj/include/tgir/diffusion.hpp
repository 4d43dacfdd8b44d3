#pragma once

// DDPM noise schedule, forward noising, reverse step and the denoiser interface.

#include <cmath>
#include <optional>
#include <vector>

#include "tgir/error.hpp"
#include "tgir/uvfield.hpp"

namespace tgir {

/// Linear beta schedule with posterior-variance reverse noise. Steps are 1-based.
class DiffusionSchedule {
public:
    explicit DiffusionSchedule(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02)
        : steps_(steps) {
        if (steps < 2) throw InvalidArgument("make_schedule: T must be >= 2");
        if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end))
            throw InvalidArgument("make_schedule: need 0 < beta_start <= beta_end < 1");
        beta_.resize(static_cast<std::size_t>(steps));
        alpha_.resize(beta_.size());
        alpha_bar_.resize(beta_.size());
        sigma_.resize(beta_.size());
        double prod = 1.0;
        for (int i = 0; i < steps; ++i) {
            const double b = beta_start + (beta_end - beta_start) * i / (steps - 1);
            beta_[static_cast<std::size_t>(i)] = b;
            alpha_[static_cast<std::size_t>(i)] = 1.0 - b;
            const double prev = prod;
            prod *= 1.0 - b;
            alpha_bar_[static_cast<std::size_t>(i)] = prod;
            sigma_[static_cast<std::size_t>(i)] = i == 0 ? 0.0 : std::sqrt((1.0 - prev) / (1.0 - prod) * b);
        }
    }

    int steps() const noexcept { return steps_; }
    double beta(int t) const { return beta_.at(idx(t)); }
    double alpha(int t) const { return alpha_.at(idx(t)); }
    double alpha_bar(int t) const { return alpha_bar_.at(idx(t)); }
    /// alpha_bar at t - 1, with alpha_bar(0) = 1.
    double alpha_bar_prev(int t) const { return t == 1 ? 1.0 : alpha_bar(t - 1); }
    double sigma(int t) const { return sigma_.at(idx(t)); }

private:
    std::size_t idx(int t) const {
        if (t < 1 || t > steps_) throw InvalidArgument("schedule: step out of range");
        return static_cast<std::size_t>(t - 1);
    }
    int steps_;
    std::vector<double> beta_, alpha_, alpha_bar_, sigma_;
};

inline DiffusionSchedule make_schedule(int steps) { return DiffusionSchedule(steps); }

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.
inline UVField q_sample(const UVField& x0, int t, const UVField& noise, const DiffusionSchedule& s) {
    if (!x0.same_shape(noise)) throw DimensionError("q_sample: shape mismatch");
    const double a = std::sqrt(s.alpha_bar(t));
    const double b = std::sqrt(1.0 - s.alpha_bar(t));
    UVField out(x0.height(), x0.width(), x0.channels());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a * x0.data()[i] + b * noise.data()[i];
    return out;
}

/// Clean-sample estimate x_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
inline UVField estimate_x0(const UVField& x_t, int t, const UVField& eps_hat, const DiffusionSchedule& s) {
    if (!x_t.same_shape(eps_hat)) throw DimensionError("estimate_x0: shape mismatch");
    const double a = std::sqrt(s.alpha_bar(t));
    const double b = std::sqrt(1.0 - s.alpha_bar(t));
    UVField out(x_t.height(), x_t.width(), x_t.channels());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = (x_t.data()[i] - b * eps_hat.data()[i]) / a;
    return out;
}

/// x_{t-1} = (x_t - (1 - alpha_t) / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t) + sigma_t z.
/// sigma_1 = 0, so z is ignored on the final step.
inline UVField reverse_step(const UVField& x_t, int t, const UVField& eps_hat, const UVField& z,
                            const DiffusionSchedule& s) {
    if (!x_t.same_shape(eps_hat) || !x_t.same_shape(z)) throw DimensionError("reverse_step: shape mismatch");
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
    const double k = (1.0 - s.alpha(t)) / std::sqrt(1.0 - s.alpha_bar(t));
    const double sigma = s.sigma(t);
    UVField out(x_t.height(), x_t.width(), x_t.channels());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = inv_sqrt_alpha * (x_t.data()[i] - k * eps_hat.data()[i]);
        if (sigma != 0.0) v += sigma * z.data()[i];
        out.data()[i] = v;
    }
    return out;
}

/// 2-channel (u, v) texel-center coordinates in [0, 1] for an H x W map, optionally
/// for a crop at (row0, col0) of a larger full_h x full_w map.
inline UVField make_uv_condition(int height, int width, int row0 = 0, int col0 = 0, int full_h = 0,
                                 int full_w = 0) {
    if (full_h <= 0) full_h = height;
    if (full_w <= 0) full_w = width;
    UVField uv(height, width, 2);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            uv.at(y, x, 0) = (col0 + x + 0.5) / full_w;
            uv.at(y, x, 1) = (row0 + y + 0.5) / full_h;
        }
    return uv;
}

/// Noise predictor eps(x_t, t | uv). Implementations must be deterministic and
/// shape-preserving at any spatial size they support.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual UVField predict_noise(const UVField& x_t, int t, const UVField& uv) const = 0;

    /// Per-channel diagonal d x_hat / d x_t when known in closed form.
    virtual std::optional<std::vector<double>> clean_estimate_jacobian(int /*t*/) const { return std::nullopt; }
};

/// Posterior-mean noise prediction for an independent Gaussian prior N(mu, s2):
/// m = (s2 sqrt(abar) x_t + (1 - abar) mu) / (abar s2 + 1 - abar),
/// eps = (x_t - sqrt(abar) m) / sqrt(1 - abar).
inline double gaussian_denoiser_eps(double x_t, double alpha_bar, double mu, double s2) {
    const double m = (s2 * std::sqrt(alpha_bar) * x_t + (1.0 - alpha_bar) * mu) / (alpha_bar * s2 + 1.0 - alpha_bar);
    return (x_t - std::sqrt(alpha_bar) * m) / std::sqrt(1.0 - alpha_bar);
}

inline double gaussian_posterior_mean(double x_t, double alpha_bar, double mu, double s2) {
    return (s2 * std::sqrt(alpha_bar) * x_t + (1.0 - alpha_bar) * mu) / (alpha_bar * s2 + 1.0 - alpha_bar);
}

/// Exact denoiser for a texel-independent Gaussian prior. Means may be per channel
/// (one value per channel) or a full field; variances are per channel.
class GaussianPriorDenoiser final : public Denoiser {
public:
    GaussianPriorDenoiser(DiffusionSchedule schedule, std::vector<double> channel_mean,
                          std::vector<double> channel_var)
        : schedule_(std::move(schedule)), channel_mean_(std::move(channel_mean)), var_(std::move(channel_var)) {
        if (channel_mean_.size() != var_.size()) throw DimensionError("GaussianPriorDenoiser: mean/var size mismatch");
        check_var();
    }
    GaussianPriorDenoiser(DiffusionSchedule schedule, UVField mean_field, std::vector<double> channel_var)
        : schedule_(std::move(schedule)), mean_field_(std::move(mean_field)), var_(std::move(channel_var)) {
        if (static_cast<int>(var_.size()) != mean_field_.channels())
            throw DimensionError("GaussianPriorDenoiser: mean/var channel mismatch");
        check_var();
    }

    int channels() const { return static_cast<int>(var_.size()); }
    const DiffusionSchedule& schedule() const { return schedule_; }

    double mean(int y, int x, int c) const {
        return mean_field_.empty() ? channel_mean_[static_cast<std::size_t>(c)] : mean_field_.at(y, x, c);
    }
    double variance(int c) const { return var_[static_cast<std::size_t>(c)]; }

    UVField predict_noise(const UVField& x_t, int t, const UVField& /*uv*/) const override {
        if (x_t.channels() != channels()) throw DimensionError("GaussianPriorDenoiser: channel mismatch");
        if (!mean_field_.empty() && !mean_field_.same_extent(x_t))
            throw DimensionError("GaussianPriorDenoiser: mean field extent mismatch");
        const double ab = schedule_.alpha_bar(t);
        UVField eps(x_t.height(), x_t.width(), x_t.channels());
        for (int y = 0; y < x_t.height(); ++y)
            for (int x = 0; x < x_t.width(); ++x)
                for (int c = 0; c < x_t.channels(); ++c)
                    eps.at(y, x, c) = gaussian_denoiser_eps(x_t.at(y, x, c), ab, mean(y, x, c), variance(c));
        return eps;
    }

    std::optional<std::vector<double>> clean_estimate_jacobian(int t) const override {
        const double ab = schedule_.alpha_bar(t);
        std::vector<double> j(var_.size());
        for (std::size_t c = 0; c < var_.size(); ++c)
            j[c] = var_[c] * std::sqrt(ab) / (ab * var_[c] + 1.0 - ab);
        return j;
    }

private:
    void check_var() const {
        for (double v : var_)
            if (!(v > 0.0)) throw InvalidArgument("GaussianPriorDenoiser: variances must be > 0");
    }
    DiffusionSchedule schedule_;
    std::vector<double> channel_mean_;
    UVField mean_field_;
    std::vector<double> var_;
};

}  // namespace tgir
