#pragma once

// PSNR (whole or masked), SSIM and mask IoU.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "tgir/error.hpp"
#include "tgir/uvfield.hpp"

namespace tgir {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) over all texels, or over texels with mask > 0.5. Identical
/// inputs report kPsnrCap.
inline double psnr(const UVField& a, const UVField& b, const UVField* mask = nullptr) {
    if (!a.same_shape(b)) throw DimensionError("psnr: " + a.shape_string() + " vs " + b.shape_string());
    if (mask) {
        require_channels(*mask, 1, "psnr(mask)");
        require_same_extent(a, *mask, "psnr(mask)");
    }
    double sum = 0.0;
    std::size_t n = 0;
    const int c = a.channels();
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x) {
            if (mask && mask->at(y, x) <= 0.5) continue;
            for (int ch = 0; ch < c; ++ch) {
                const double d = a.at(y, x, ch) - b.at(y, x, ch);
                sum += d * d;
            }
            n += static_cast<std::size_t>(c);
        }
    if (n == 0) throw InvalidArgument("psnr: empty mask");
    const double mse = sum / static_cast<double>(n);
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

inline double psnr(const UVField& a, const UVField& b, const UVField& mask) { return psnr(a, b, &mask); }

struct SsimConfig {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double range = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> g(static_cast<std::size_t>(size));
    const double c = (size - 1) / 2.0;
    double s = 0.0;
    for (int i = 0; i < size; ++i) {
        g[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
        s += g[static_cast<std::size_t>(i)];
    }
    for (double& v : g) v /= s;
    return g;
}

// Separable "valid" filtering of one channel (no padding).
inline std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& k) {
    const int n = static_cast<int>(k.size());
    const int oh = h - n + 1, ow = w - n + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h * ow), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * img[static_cast<std::size_t>(y * w + x + i)];
            tmp[static_cast<std::size_t>(y * ow + x)] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(oh * ow), 0.0);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>((y + i) * ow + x)];
            out[static_cast<std::size_t>(y * ow + x)] = s;
        }
    return out;
}

}  // namespace detail

/// Mean SSIM with a Gaussian window over valid window positions, averaged over channels.
inline double ssim(const UVField& a, const UVField& b, const SsimConfig& cfg = {}) {
    if (!a.same_shape(b)) throw DimensionError("ssim: " + a.shape_string() + " vs " + b.shape_string());
    if (a.height() < cfg.window || a.width() < cfg.window)
        throw DimensionError("ssim: input smaller than the " + std::to_string(cfg.window) + "x" +
                             std::to_string(cfg.window) + " window");
    const int h = a.height(), w = a.width();
    const auto k = detail::gaussian_window(cfg.window, cfg.sigma);
    const double c1 = (cfg.k1 * cfg.range) * (cfg.k1 * cfg.range);
    const double c2 = (cfg.k2 * cfg.range) * (cfg.k2 * cfg.range);
    double total = 0.0;
    for (int ch = 0; ch < a.channels(); ++ch) {
        std::vector<double> pa(static_cast<std::size_t>(h * w)), pb(pa.size()), aa(pa.size()), bb(pa.size()),
            ab(pa.size());
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const std::size_t i = static_cast<std::size_t>(y * w + x);
                pa[i] = a.at(y, x, ch);
                pb[i] = b.at(y, x, ch);
                aa[i] = pa[i] * pa[i];
                bb[i] = pb[i] * pb[i];
                ab[i] = pa[i] * pb[i];
            }
        const auto ma = detail::filter_valid(pa, h, w, k), mb = detail::filter_valid(pb, h, w, k);
        const auto saa = detail::filter_valid(aa, h, w, k), sbb = detail::filter_valid(bb, h, w, k),
                   sab = detail::filter_valid(ab, h, w, k);
        double s = 0.0;
        for (std::size_t i = 0; i < ma.size(); ++i) {
            const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
            s += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) /
                 ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
        }
        total += s / static_cast<double>(ma.size());
    }
    return total / a.channels();
}

/// |a & b| / |a | b| for binary masks (> 0.5); 1 when both are empty.
inline double mask_iou(const UVField& a, const UVField& b) {
    require_channels(a, 1, "mask_iou");
    require_channels(b, 1, "mask_iou");
    require_same_extent(a, b, "mask_iou");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a.data()[i] > 0.5, y = b.data()[i] > 0.5;
        inter += (x && y) ? 1 : 0;
        uni += (x || y) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace tgir
