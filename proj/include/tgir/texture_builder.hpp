#pragma once

// Builds the UV-space observation from per-view images and precomputed texel ->
// pixel correspondences.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "tgir/error.hpp"
#include "tgir/parallel.hpp"
#include "tgir/uvfield.hpp"

namespace tgir {

/// One calibrated view. `correspondence` spans the texture extent with channels
/// (pixel_x, pixel_y, visibility in [0, 1]); visibility 0 means unseen.
struct ViewSample {
    int id = 0;
    UVField image;
    UVField correspondence;
};

inline constexpr double kBlendWeightPower = 4.0;

namespace detail {

inline void check_views(const std::vector<ViewSample>& views, const char* what) {
    if (views.empty()) throw InvalidArgument(std::string(what) + ": no views");
    const UVField& c0 = views.front().correspondence;
    for (const ViewSample& v : views) {
        require_channels(v.correspondence, 3, what);
        require_channels(v.image, 3, what);
        require_same_extent(v.correspondence, c0, what);
    }
}

// Views in ascending id order so summation order never depends on input order.
inline std::vector<const ViewSample*> sorted_views(const std::vector<ViewSample>& views) {
    std::vector<const ViewSample*> out;
    out.reserve(views.size());
    for (const ViewSample& v : views) out.push_back(&v);
    std::stable_sort(out.begin(), out.end(), [](const ViewSample* a, const ViewSample* b) { return a->id < b->id; });
    return out;
}

}  // namespace detail

/// View image resampled into UV space through its correspondence (3 channels).
inline UVField resample_view(const ViewSample& view) {
    const UVField& corr = view.correspondence;
    UVField out(corr.height(), corr.width(), 3);
    double px[3];
    for (int y = 0; y < corr.height(); ++y)
        for (int x = 0; x < corr.width(); ++x) {
            if (corr.at(y, x, 2) <= 0.0) continue;
            bilinear_sample(view.image, corr.at(y, x, 0), corr.at(y, x, 1), px);
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = px[c];
        }
    return out;
}

struct BlendResult {
    UVField texture;  ///< 3 channels, 0 where unobserved
    UVField valid;    ///< 1 where any view has positive visibility
};

/// Visibility-weighted average with weights w^4 (favoring frontal views).
inline BlendResult blend_texture(const std::vector<ViewSample>& views) {
    detail::check_views(views, "blend_texture");
    const auto order = detail::sorted_views(views);
    const UVField& c0 = order.front()->correspondence;
    const int h = c0.height(), w = c0.width();
    BlendResult out{UVField(h, w, 3), UVField(h, w, 1)};
    parallel_for(h, [&](int y0, int y1) {
        double px[3];
        for (int y = y0; y < y1; ++y)
            for (int x = 0; x < w; ++x) {
                double acc[3] = {0, 0, 0}, wsum = 0.0, vis = 0.0;
                for (const ViewSample* v : order) {
                    const double vw = v->correspondence.at(y, x, 2);
                    if (vw <= 0.0) continue;
                    vis += vw;
                    const double k = std::pow(vw, kBlendWeightPower);
                    bilinear_sample(v->image, v->correspondence.at(y, x, 0), v->correspondence.at(y, x, 1), px);
                    for (int c = 0; c < 3; ++c) acc[c] += k * px[c];
                    wsum += k;
                }
                if (vis > 0.0 && wsum > 0.0) {
                    out.valid.at(y, x) = 1.0;
                    for (int c = 0; c < 3; ++c) out.texture.at(y, x, c) = acc[c] / wsum;
                }
            }
    });
    return out;
}

struct RefineConfig {
    int iters = 200;
    double learning_rate = 0.5;
    double charbonnier_eps = 1e-3;
    double data_weight = 0.1;
};

/// Gradient-domain refinement of a blended texture:
///   E(T) = sum_i sum_edges omega_i charb(dT - dR_i) + data_weight * |T - B|^2
/// over valid texel pairs, where R_i is view i resampled to UV, omega_i are the
/// normalized blend weights and B is the initial blend. Steps use backtracking so
/// E never increases. `trace`, when given, receives E before each iteration and
/// after the last one.
class GradientRefiner {
public:
    GradientRefiner(const UVField& blend, const std::vector<ViewSample>& views, const UVField& valid,
                    RefineConfig cfg = {})
        : blend_(blend), valid_(valid), cfg_(cfg) {
        detail::check_views(views, "gradient_refine");
        require_channels(blend, 3, "gradient_refine(texture)");
        require_same_extent(blend, valid, "gradient_refine(valid)");
        require_same_extent(blend, views.front().correspondence, "gradient_refine(views)");
        const auto order = detail::sorted_views(views);
        const int h = blend.height(), w = blend.width();
        UVField wsum(h, w, 1);
        for (const ViewSample* v : order) {
            resampled_.push_back(resample_view(*v));
            UVField k(h, w, 1);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double vw = v->correspondence.at(y, x, 2);
                    k.at(y, x) = vw > 0.0 ? std::pow(vw, kBlendWeightPower) : 0.0;
                    wsum.at(y, x) += k.at(y, x);
                }
            weights_.push_back(std::move(k));
        }
        for (UVField& k : weights_)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) k.at(y, x) = wsum.at(y, x) > 0 ? k.at(y, x) / wsum.at(y, x) : 0.0;
    }

    double objective(const UVField& t) const { return evaluate(t, nullptr); }

    double objective_and_gradient(const UVField& t, UVField& grad) const {
        grad = UVField(t.height(), t.width(), 3);
        return evaluate(t, &grad);
    }

    UVField run(std::vector<double>* trace = nullptr) const {
        UVField t = blend_;
        UVField grad;
        double e = objective_and_gradient(t, grad);
        double step = cfg_.learning_rate;
        for (int it = 0; it < cfg_.iters; ++it) {
            if (trace) trace->push_back(e);
            double gnorm2 = 0.0;
            for (double g : grad.data()) gnorm2 += g * g;
            if (gnorm2 == 0.0) break;
            // Backtracking (Armijo) line search starting from the configured rate.
            double s = std::min(cfg_.learning_rate, 2.0 * step);
            UVField cand;
            double ce = e;
            bool accepted = false;
            for (int k = 0; k < 40; ++k) {
                cand = t;
                for (std::size_t i = 0; i < cand.size(); ++i) cand.data()[i] -= s * grad.data()[i];
                ce = objective(cand);
                if (ce <= e - 1e-4 * s * gnorm2) {
                    accepted = true;
                    break;
                }
                s *= 0.5;
            }
            if (!accepted) break;
            step = s;
            t = std::move(cand);
            e = objective_and_gradient(t, grad);
        }
        if (trace) trace->push_back(e);
        return t;
    }

private:
    double evaluate(const UVField& t, UVField* grad) const {
        const int h = t.height(), w = t.width();
        const double eps2 = cfg_.charbonnier_eps * cfg_.charbonnier_eps;
        double e = 0.0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (valid_.at(y, x) <= 0.5) continue;
                for (int c = 0; c < 3; ++c) {
                    const double d = t.at(y, x, c) - blend_.at(y, x, c);
                    e += cfg_.data_weight * d * d;
                    if (grad) grad->at(y, x, c) += 2.0 * cfg_.data_weight * d;
                }
                // Forward edges to the right and below.
                const int nbr[2][2] = {{y, x + 1}, {y + 1, x}};
                for (const auto& q : nbr) {
                    const int qy = q[0], qx = q[1];
                    if (qy >= h || qx >= w || valid_.at(qy, qx) <= 0.5) continue;
                    for (std::size_t i = 0; i < resampled_.size(); ++i) {
                        const double om = std::min(weights_[i].at(y, x), weights_[i].at(qy, qx));
                        if (om <= 0.0) continue;
                        const UVField& r = resampled_[i];
                        for (int c = 0; c < 3; ++c) {
                            const double diff = (t.at(qy, qx, c) - t.at(y, x, c)) - (r.at(qy, qx, c) - r.at(y, x, c));
                            const double ch = std::sqrt(diff * diff + eps2);
                            e += om * ch;
                            if (grad) {
                                const double g = om * diff / ch;
                                grad->at(qy, qx, c) += g;
                                grad->at(y, x, c) -= g;
                            }
                        }
                    }
                }
            }
        return e;
    }

    UVField blend_;
    UVField valid_;
    RefineConfig cfg_;
    std::vector<UVField> resampled_;
    std::vector<UVField> weights_;
};

inline UVField gradient_refine(const UVField& texture, const std::vector<ViewSample>& views, const UVField& valid,
                               int iters = 200, std::vector<double>* trace = nullptr) {
    if (iters == 0) return texture;
    RefineConfig cfg;
    cfg.iters = iters;
    return GradientRefiner(texture, views, valid, cfg).run(trace);
}

}  // namespace tgir
