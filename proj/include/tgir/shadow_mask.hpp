#pragma once

// Automatic shadow mask: per-view luminance difference between raw and
// shadow-softened images, median + small-component cleanup, UV voting, dilation.

#include <algorithm>
#include <array>
#include <vector>

#include "tgir/error.hpp"
#include "tgir/parallel.hpp"
#include "tgir/texture_builder.hpp"
#include "tgir/uvfield.hpp"

namespace tgir {

struct MaskConfig {
    double diff_threshold = 0.08;
    int median_radius = 3;
    int min_area = 64;
    int dilation_radius = 8;
    double uv_vote_threshold = 0.3;

    void validate() const {
        if (!(diff_threshold >= 0.0 && diff_threshold <= 1.0))
            throw InvalidArgument("mask: diff_threshold must lie in [0, 1]");
        if (!(uv_vote_threshold >= 0.0 && uv_vote_threshold <= 1.0))
            throw InvalidArgument("mask: uv_vote_threshold must lie in [0, 1]");
        if (median_radius < 0 || min_area < 0 || dilation_radius < 0)
            throw InvalidArgument("mask: radii and areas must be non-negative");
    }
};

inline constexpr std::array<double, 3> kLuminance{0.2126, 0.7152, 0.0722};

inline double luminance(const UVField& f, int y, int x) {
    return kLuminance[0] * f.at(y, x, 0) + kLuminance[1] * f.at(y, x, 1) + kLuminance[2] * f.at(y, x, 2);
}

/// 1 where the softened image is brighter than the raw one by more than the threshold.
inline UVField detect_view_shadow(const UVField& raw, const UVField& softened, const MaskConfig& cfg = {}) {
    require_channels(raw, 3, "detect_view_shadow(raw)");
    require_channels(softened, 3, "detect_view_shadow(softened)");
    require_same_extent(raw, softened, "detect_view_shadow");
    UVField out(raw.height(), raw.width(), 1);
    for (int y = 0; y < raw.height(); ++y)
        for (int x = 0; x < raw.width(); ++x)
            out.at(y, x) = luminance(softened, y, x) - luminance(raw, y, x) > cfg.diff_threshold ? 1.0 : 0.0;
    return out;
}

/// Binary median over a (2r+1)^2 square; the window is clipped at the borders and
/// a pixel is set when strictly more than half of the in-bounds window is set.
inline UVField median_filter(const UVField& mask, int radius) {
    require_channels(mask, 1, "median_filter");
    if (radius <= 0) return mask;
    const int h = mask.height(), w = mask.width();
    // Summed-area table of set pixels.
    std::vector<int> sat(static_cast<std::size_t>((h + 1) * (w + 1)), 0);
    auto at = [&](int y, int x) -> int& { return sat[static_cast<std::size_t>(y * (w + 1) + x)]; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            at(y + 1, x + 1) = (mask.at(y, x) > 0.5 ? 1 : 0) + at(y, x + 1) + at(y + 1, x) - at(y, x);
    UVField out(h, w, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int y0 = std::max(0, y - radius), y1 = std::min(h, y + radius + 1);
            const int x0 = std::max(0, x - radius), x1 = std::min(w, x + radius + 1);
            const int set = at(y1, x1) - at(y0, x1) - at(y1, x0) + at(y0, x0);
            const int total = (y1 - y0) * (x1 - x0);
            out.at(y, x) = 2 * set > total ? 1.0 : 0.0;
        }
    return out;
}

/// 4-connected labels (1-based, 0 = background) in raster order, plus areas.
struct Components {
    std::vector<int> labels;
    std::vector<int> areas;  // areas[label - 1]
};

inline Components label_components(const UVField& mask) {
    require_channels(mask, 1, "label_components");
    const int h = mask.height(), w = mask.width();
    Components cc;
    cc.labels.assign(static_cast<std::size_t>(h * w), 0);
    std::vector<int> stack;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int start = y * w + x;
            if (mask.at(y, x) <= 0.5 || cc.labels[static_cast<std::size_t>(start)] != 0) continue;
            const int label = static_cast<int>(cc.areas.size()) + 1;
            int area = 0;
            stack.push_back(start);
            cc.labels[static_cast<std::size_t>(start)] = label;
            while (!stack.empty()) {
                const int p = stack.back();
                stack.pop_back();
                ++area;
                const int py = p / w, px = p % w;
                const int ny[4] = {py - 1, py + 1, py, py};
                const int nx[4] = {px, px, px - 1, px + 1};
                for (int k = 0; k < 4; ++k) {
                    if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
                    const int q = ny[k] * w + nx[k];
                    if (mask.at(ny[k], nx[k]) <= 0.5 || cc.labels[static_cast<std::size_t>(q)] != 0) continue;
                    cc.labels[static_cast<std::size_t>(q)] = label;
                    stack.push_back(q);
                }
            }
            cc.areas.push_back(area);
        }
    return cc;
}

inline UVField remove_small_components(const UVField& mask, int min_area) {
    const Components cc = label_components(mask);
    UVField out(mask.height(), mask.width(), 1);
    for (std::size_t i = 0; i < cc.labels.size(); ++i) {
        const int l = cc.labels[i];
        if (l != 0 && cc.areas[static_cast<std::size_t>(l - 1)] >= min_area) out.data()[i] = 1.0;
    }
    return out;
}

inline UVField clean_mask(const UVField& mask, const MaskConfig& cfg = {}) {
    return remove_small_components(median_filter(mask, cfg.median_radius), cfg.min_area);
}

/// Visibility-weighted vote of the view masks at every texel. A texel is shadow
/// when sum(w_i m_i) / sum(w_i) >= uv_vote_threshold over views that see it.
inline UVField lift_to_uv(const std::vector<UVField>& view_masks, const std::vector<ViewSample>& views,
                          const MaskConfig& cfg = {}) {
    if (views.empty()) throw InvalidArgument("lift_to_uv: no views");
    if (view_masks.size() != views.size()) throw DimensionError("lift_to_uv: one mask per view required");
    detail::check_views(views, "lift_to_uv");
    for (std::size_t i = 0; i < views.size(); ++i) {
        require_channels(view_masks[i], 1, "lift_to_uv(mask)");
        require_same_extent(view_masks[i], views[i].image, "lift_to_uv(mask vs image)");
    }
    // Accumulate in id order so the result does not depend on input order.
    std::vector<std::size_t> order(views.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return views[a].id < views[b].id; });

    const UVField& c0 = views.front().correspondence;
    UVField out(c0.height(), c0.width(), 1);
    parallel_for(c0.height(), [&](int y0, int y1) {
        double m[1];
        for (int y = y0; y < y1; ++y)
            for (int x = 0; x < c0.width(); ++x) {
                double wsum = 0.0, vote = 0.0;
                for (std::size_t i : order) {
                    const UVField& corr = views[i].correspondence;
                    const double vw = corr.at(y, x, 2);
                    if (vw <= 0.0) continue;
                    bilinear_sample(view_masks[i], corr.at(y, x, 0), corr.at(y, x, 1), m);
                    wsum += vw;
                    vote += vw * m[0];
                }
                out.at(y, x) = wsum > 0.0 && vote / wsum >= cfg.uv_vote_threshold ? 1.0 : 0.0;
            }
    });
    return out;
}

/// Binary dilation with the disk {dx^2 + dy^2 <= r^2}.
inline UVField dilate_mask(const UVField& mask, const MaskConfig& cfg = {}) {
    require_channels(mask, 1, "dilate_mask");
    const int r = cfg.dilation_radius;
    const int h = mask.height(), w = mask.width();
    UVField out(h, w, 1);
    if (r <= 0) {
        for (std::size_t i = 0; i < mask.size(); ++i) out.data()[i] = mask.data()[i] > 0.5 ? 1.0 : 0.0;
        return out;
    }
    std::vector<std::array<int, 2>> disk;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            if (dx * dx + dy * dy <= r * r) disk.push_back({dy, dx});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (mask.at(y, x) <= 0.5) continue;
            for (const auto& d : disk) {
                const int yy = y + d[0], xx = x + d[1];
                if (yy >= 0 && yy < h && xx >= 0 && xx < w) out.at(yy, xx) = 1.0;
            }
        }
    return out;
}

/// Full pipeline: detect and clean per view, lift to UV, dilate.
inline UVField shadow_mask_pipeline(const std::vector<ViewSample>& views, const std::vector<UVField>& softened,
                                    const MaskConfig& cfg = {}) {
    cfg.validate();
    if (views.empty()) throw InvalidArgument("shadow_mask_pipeline: no views");
    if (softened.size() != views.size()) throw DimensionError("shadow_mask_pipeline: one softened image per view");
    std::vector<UVField> masks(views.size());
    for (std::size_t i = 0; i < views.size(); ++i)
        masks[i] = clean_mask(detect_view_shadow(views[i].image, softened[i], cfg), cfg);
    return dilate_mask(lift_to_uv(masks, views, cfg), cfg);
}

}  // namespace tgir
