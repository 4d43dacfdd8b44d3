#pragma once

// Small fully-convolutional noise predictor trained on procedural patches.
//
// Layout: 3 levels of residual blocks (widths 24/32/48 by default), 2x average-pool
// down, nearest up with 1x1 projections and additive skips, a sinusoidal time
// embedding projected to a per-level channel bias. Tensors are H x W x C
// channel-interleaved float, so every convolution is one GEMM over im2col columns.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tgir/adam.hpp"
#include "tgir/diffusion.hpp"
#include "tgir/error.hpp"
#include "tgir/parallel.hpp"
#include "tgir/random.hpp"
#include "tgir/synthetic.hpp"
#include "tgir/uvfield.hpp"

namespace tgir {

namespace nn {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>;
using MapF = Eigen::Map<MatF>;
using CMapF = Eigen::Map<const MatF>;

struct Tensor {
    int h = 0, w = 0, c = 0;
    std::vector<float> v;

    Tensor() = default;
    Tensor(int h_, int w_, int c_) : h(h_), w(w_), c(c_), v(static_cast<std::size_t>(h_) * w_ * c_, 0.0f) {}
    int pixels() const { return h * w; }
    MapF mat() { return MapF(v.data(), c, pixels()); }
    CMapF mat() const { return CMapF(v.data(), c, pixels()); }
};

/// Named parameter block inside one flat float buffer.
struct ParamInfo {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
};

struct Conv {
    int cin = 0, cout = 0, k = 1;
    std::size_t w = 0, b = 0;  // offsets of weight (cout x cin*k*k, column-major) and bias
};

struct Linear {
    int in = 0, out = 0;
    std::size_t w = 0, b = 0;
};

// Zero-padded 3x3 im2col: column p holds the 3x3 x cin neighbourhood of pixel p.
inline void im2col3(const Tensor& x, std::vector<float>& col) {
    const int k = 9 * x.c;
    col.assign(static_cast<std::size_t>(k) * x.pixels(), 0.0f);
    for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) {
            float* dst = col.data() + static_cast<std::size_t>(y * x.w + xx) * k;
            for (int dy = -1; dy <= 1; ++dy) {
                const int sy = y + dy;
                for (int dx = -1; dx <= 1; ++dx, dst += x.c) {
                    const int sx = xx + dx;
                    if (sy < 0 || sy >= x.h || sx < 0 || sx >= x.w) continue;
                    std::memcpy(dst, x.v.data() + static_cast<std::size_t>(sy * x.w + sx) * x.c,
                                sizeof(float) * static_cast<std::size_t>(x.c));
                }
            }
        }
}

inline void col2im3(const std::vector<float>& col, Tensor& dx) {
    const int k = 9 * dx.c;
    for (int y = 0; y < dx.h; ++y)
        for (int xx = 0; xx < dx.w; ++xx) {
            const float* src = col.data() + static_cast<std::size_t>(y * dx.w + xx) * k;
            for (int dy = -1; dy <= 1; ++dy) {
                const int sy = y + dy;
                for (int dxo = -1; dxo <= 1; ++dxo, src += dx.c) {
                    const int sx = xx + dxo;
                    if (sy < 0 || sy >= dx.h || sx < 0 || sx >= dx.w) continue;
                    float* d = dx.v.data() + static_cast<std::size_t>(sy * dx.w + sx) * dx.c;
                    for (int c = 0; c < dx.c; ++c) d[c] += src[c];
                }
            }
        }
}

/// Conv output plus what its backward pass needs.
struct ConvCache {
    std::vector<float> col;  // 3x3 only
};

inline Tensor conv_forward(const Conv& l, const float* p, const Tensor& x, ConvCache* cache) {
    Tensor y(x.h, x.w, l.cout);
    const CMapF w(p + l.w, l.cout, l.cin * l.k * l.k);
    const Eigen::Map<const Eigen::VectorXf> b(p + l.b, l.cout);
    if (l.k == 3) {
        std::vector<float> local;
        std::vector<float>& col = cache ? cache->col : local;
        im2col3(x, col);
        y.mat().noalias() = w * CMapF(col.data(), 9 * x.c, x.pixels());
    } else {
        y.mat().noalias() = w * x.mat();
    }
    y.mat().colwise() += b;
    return y;
}

/// Accumulates parameter gradients into g and returns dL/dx.
inline Tensor conv_backward(const Conv& l, const float* p, const Tensor& x, const ConvCache& cache, const Tensor& dy,
                            float* g) {
    const CMapF w(p + l.w, l.cout, l.cin * l.k * l.k);
    MapF gw(g + l.w, l.cout, l.cin * l.k * l.k);
    Eigen::Map<Eigen::VectorXf> gb(g + l.b, l.cout);
    gb += dy.mat().rowwise().sum();
    Tensor dx(x.h, x.w, x.c);
    if (l.k == 3) {
        const CMapF col(cache.col.data(), 9 * x.c, x.pixels());
        gw.noalias() += dy.mat() * col.transpose();
        std::vector<float> dcol(cache.col.size());
        MapF(dcol.data(), 9 * x.c, x.pixels()).noalias() = w.transpose() * dy.mat();
        col2im3(dcol, dx);
    } else {
        gw.noalias() += dy.mat() * x.mat().transpose();
        dx.mat().noalias() = w.transpose() * dy.mat();
    }
    return dx;
}

inline Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (float& v : y.v) v = std::max(v, 0.0f);
    return y;
}

inline void relu_backward(const Tensor& x, Tensor& dy) {
    for (std::size_t i = 0; i < dy.v.size(); ++i)
        if (x.v[i] <= 0.0f) dy.v[i] = 0.0f;
}

/// 2x2 average pooling; odd borders average the in-bounds texels.
inline Tensor avg_pool(const Tensor& x) {
    Tensor y((x.h + 1) / 2, (x.w + 1) / 2, x.c);
    for (int oy = 0; oy < y.h; ++oy)
        for (int ox = 0; ox < y.w; ++ox) {
            float* d = y.v.data() + static_cast<std::size_t>(oy * y.w + ox) * x.c;
            int n = 0;
            for (int sy = 2 * oy; sy < std::min(2 * oy + 2, x.h); ++sy)
                for (int sx = 2 * ox; sx < std::min(2 * ox + 2, x.w); ++sx, ++n) {
                    const float* s = x.v.data() + static_cast<std::size_t>(sy * x.w + sx) * x.c;
                    for (int c = 0; c < x.c; ++c) d[c] += s[c];
                }
            for (int c = 0; c < x.c; ++c) d[c] /= static_cast<float>(n);
        }
    return y;
}

inline Tensor avg_pool_backward(const Tensor& dy, int h, int w) {
    Tensor dx(h, w, dy.c);
    for (int oy = 0; oy < dy.h; ++oy)
        for (int ox = 0; ox < dy.w; ++ox) {
            const int ny = std::min(2 * oy + 2, h) - 2 * oy, nx = std::min(2 * ox + 2, w) - 2 * ox;
            const float inv = 1.0f / static_cast<float>(ny * nx);
            const float* s = dy.v.data() + static_cast<std::size_t>(oy * dy.w + ox) * dy.c;
            for (int sy = 2 * oy; sy < 2 * oy + ny; ++sy)
                for (int sx = 2 * ox; sx < 2 * ox + nx; ++sx) {
                    float* d = dx.v.data() + static_cast<std::size_t>(sy * w + sx) * dy.c;
                    for (int c = 0; c < dy.c; ++c) d[c] += s[c] * inv;
                }
        }
    return dx;
}

/// Nearest-neighbour 2x upsampling cropped to h x w.
inline Tensor upsample(const Tensor& x, int h, int w) {
    Tensor y(h, w, x.c);
    for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx)
            std::memcpy(y.v.data() + static_cast<std::size_t>(yy * w + xx) * x.c,
                        x.v.data() + static_cast<std::size_t>((yy / 2) * x.w + xx / 2) * x.c,
                        sizeof(float) * static_cast<std::size_t>(x.c));
    return y;
}

inline Tensor upsample_backward(const Tensor& dy, int h, int w) {
    Tensor dx(h, w, dy.c);
    for (int yy = 0; yy < dy.h; ++yy)
        for (int xx = 0; xx < dy.w; ++xx) {
            float* d = dx.v.data() + static_cast<std::size_t>((yy / 2) * w + xx / 2) * dy.c;
            const float* s = dy.v.data() + static_cast<std::size_t>(yy * dy.w + xx) * dy.c;
            for (int c = 0; c < dy.c; ++c) d[c] += s[c];
        }
    return dx;
}

inline void add_inplace(Tensor& a, const Tensor& b) {
    for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

inline void add_bias(Tensor& a, const std::vector<float>& bias) {
    a.mat().colwise() += Eigen::Map<const Eigen::VectorXf>(bias.data(), a.c);
}

/// Sinusoidal embedding of the diffusion step (dim must be even).
inline std::vector<float> time_embedding(int t, int dim) {
    std::vector<float> e(static_cast<std::size_t>(dim));
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double f = std::exp(-std::log(10000.0) * i / half);
        e[static_cast<std::size_t>(i)] = static_cast<float>(std::sin(t * f));
        e[static_cast<std::size_t>(half + i)] = static_cast<float>(std::cos(t * f));
    }
    return e;
}

}  // namespace nn

struct PatchNetConfig {
    int in_channels = 9;  ///< 7 stack channels + 2 UV channels
    int out_channels = 7;
    std::array<int, 3> widths{24, 32, 48};
    int time_dim = 32;
};

/// The network: parameters live in one flat float vector so that gradients,
/// optimizer state and the file payload share the same layout.
class PatchNet {
public:
    explicit PatchNet(const PatchNetConfig& cfg = {}, std::uint64_t seed = 0) : cfg_(cfg) {
        if (cfg.time_dim % 2 != 0) throw InvalidArgument("PatchNet: time_dim must be even");
        const auto [c1, c2, c3] = cfg.widths;
        in_ = conv("in", cfg.in_channels, c1, 3);
        for (int l = 0; l < 3; ++l) {
            temb_[l] = linear("temb" + std::to_string(l), cfg.time_dim, cfg.widths[static_cast<std::size_t>(l)]);
            const int c = cfg.widths[static_cast<std::size_t>(l)];
            down_block_[l][0] = conv("down" + std::to_string(l) + "a", c, c, 3);
            down_block_[l][1] = conv("down" + std::to_string(l) + "b", c, c, 3);
        }
        proj_down_[0] = conv("pool1", c1, c2, 1);
        proj_down_[1] = conv("pool2", c2, c3, 1);
        proj_up_[1] = conv("up2", c3, c2, 1);
        proj_up_[0] = conv("up1", c2, c1, 1);
        for (int l = 0; l < 2; ++l) {
            const int c = cfg.widths[static_cast<std::size_t>(l)];
            up_block_[l][0] = conv("upblk" + std::to_string(l) + "a", c, c, 3);
            up_block_[l][1] = conv("upblk" + std::to_string(l) + "b", c, c, 3);
        }
        out_ = conv("out", c1, cfg.out_channels, 3);
        params_.assign(total_, 0.0f);
        init(seed);
    }

    const PatchNetConfig& config() const { return cfg_; }
    std::vector<float>& params() { return params_; }
    const std::vector<float>& params() const { return params_; }
    const std::vector<nn::ParamInfo>& layout() const { return layout_; }
    std::size_t parameter_count() const { return total_; }

    /// Predicted noise for an input tensor (in_channels) at step t.
    nn::Tensor forward(const nn::Tensor& x, int t) const {
        Tape tape;
        return run(x, t, tape, false);
    }

    /// Mean squared error against `target` and its gradient, accumulated into `grad`.
    double loss_and_grad(const nn::Tensor& x, int t, const nn::Tensor& target, std::vector<float>& grad) const {
        Tape tape;
        const nn::Tensor out = run(x, t, tape, true);
        nn::Tensor dout(out.h, out.w, out.c);
        double loss = 0.0;
        const double inv = 1.0 / static_cast<double>(out.v.size());
        for (std::size_t i = 0; i < out.v.size(); ++i) {
            const double d = static_cast<double>(out.v[i]) - target.v[i];
            loss += d * d;
            dout.v[i] = static_cast<float>(2.0 * d * inv);
        }
        backward(tape, dout, grad.data());
        return loss * inv;
    }

private:
    struct Block {
        nn::Tensor a, y1, y2pre;  // block input, first conv output, second conv input (relu(y1))
        nn::Tensor z1;            // relu(a)
        nn::ConvCache c1, c2;
    };
    struct Tape {
        nn::Tensor x, h0, a[3], r[3], pooled[2], u[2], q[2], up_in[2], q1relu;
        Block down[3], up[2];
        nn::ConvCache in_c, pool_c[2], up_c[2], out_c;
        std::vector<float> emb;
    };

    nn::Conv conv(const std::string& name, int cin, int cout, int k) {
        nn::Conv c{cin, cout, k, 0, 0};
        c.w = add(name + ".w", {cout, cin * k * k});
        c.b = add(name + ".b", {cout});
        return c;
    }
    nn::Linear linear(const std::string& name, int in, int out) {
        nn::Linear l{in, out, 0, 0};
        l.w = add(name + ".w", {out, in});
        l.b = add(name + ".b", {out});
        return l;
    }
    std::size_t add(const std::string& name, std::vector<int> shape) {
        std::size_t n = 1;
        for (int s : shape) n *= static_cast<std::size_t>(s);
        layout_.push_back({name, std::move(shape), total_, n});
        total_ += n;
        return total_ - n;
    }

    void init(std::uint64_t seed) {
        Rng rng(seed * 0x2545F4914F6CDD1DULL + 3);
        auto fill = [&](const nn::Conv& c, double gain) {
            const double sd = gain * std::sqrt(2.0 / (c.cin * c.k * c.k));
            for (std::size_t i = 0; i < static_cast<std::size_t>(c.cout * c.cin * c.k * c.k); ++i)
                params_[c.w + i] = static_cast<float>(sd * rng.normal());
        };
        fill(in_, 1.0);
        for (auto& b : down_block_) {
            fill(b[0], 1.0);
            fill(b[1], 0.1);
        }
        for (auto& b : up_block_) {
            fill(b[0], 1.0);
            fill(b[1], 0.1);
        }
        for (auto& c : proj_down_) fill(c, 1.0);
        for (auto& c : proj_up_) fill(c, 0.5);
        fill(out_, 0.05);
        for (auto& l : temb_) {
            const double sd = 1.0 / std::sqrt(static_cast<double>(l.in));
            for (std::size_t i = 0; i < static_cast<std::size_t>(l.in * l.out); ++i)
                params_[l.w + i] = static_cast<float>(sd * rng.normal());
        }
    }

    std::vector<float> time_bias(int level, const std::vector<float>& emb) const {
        const nn::Linear& l = temb_[level];
        Eigen::VectorXf b = nn::CMapF(params_.data() + l.w, l.out, l.in) *
                                Eigen::Map<const Eigen::VectorXf>(emb.data(), l.in) +
                            Eigen::Map<const Eigen::VectorXf>(params_.data() + l.b, l.out);
        return std::vector<float>(b.data(), b.data() + b.size());
    }

    // r = a + conv_b(relu(conv_a(relu(a))))
    nn::Tensor block_forward(const std::array<nn::Conv, 2>& c, const nn::Tensor& a, Block& blk, bool keep) const {
        const float* p = params_.data();
        nn::Tensor z1 = nn::relu(a);
        nn::Tensor y1 = nn::conv_forward(c[0], p, z1, keep ? &blk.c1 : nullptr);
        nn::Tensor z2 = nn::relu(y1);
        nn::Tensor r = nn::conv_forward(c[1], p, z2, keep ? &blk.c2 : nullptr);
        nn::add_inplace(r, a);
        if (keep) {
            blk.a = a;
            blk.z1 = std::move(z1);
            blk.y1 = std::move(y1);
            blk.y2pre = std::move(z2);
        }
        return r;
    }

    nn::Tensor block_backward(const std::array<nn::Conv, 2>& c, const Block& blk, const nn::Tensor& dr,
                              float* g) const {
        const float* p = params_.data();
        nn::Tensor dz2 = nn::conv_backward(c[1], p, blk.y2pre, blk.c2, dr, g);
        nn::relu_backward(blk.y1, dz2);
        nn::Tensor dz1 = nn::conv_backward(c[0], p, blk.z1, blk.c1, dz2, g);
        nn::relu_backward(blk.a, dz1);
        nn::add_inplace(dz1, dr);
        return dz1;
    }

    nn::Tensor run(const nn::Tensor& x, int t, Tape& tp, bool keep) const {
        if (x.c != cfg_.in_channels) throw DimensionError("PatchNet: expected " + std::to_string(cfg_.in_channels) + " input channels");
        const float* p = params_.data();
        tp.emb = nn::time_embedding(t, cfg_.time_dim);
        if (keep) tp.x = x;
        nn::Tensor h = nn::conv_forward(in_, p, x, keep ? &tp.in_c : nullptr);
        nn::add_bias(h, time_bias(0, tp.emb));
        tp.a[0] = h;
        tp.r[0] = block_forward(down_block_[0], h, tp.down[0], keep);
        for (int l = 1; l < 3; ++l) {
            tp.pooled[l - 1] = nn::avg_pool(tp.r[l - 1]);
            nn::Tensor d = nn::conv_forward(proj_down_[l - 1], p, tp.pooled[l - 1], keep ? &tp.pool_c[l - 1] : nullptr);
            nn::add_bias(d, time_bias(l, tp.emb));
            tp.a[l] = d;
            tp.r[l] = block_forward(down_block_[l], d, tp.down[l], keep);
        }
        nn::Tensor cur = tp.r[2];
        for (int l = 1; l >= 0; --l) {
            tp.up_in[l] = nn::upsample(cur, tp.r[l].h, tp.r[l].w);
            nn::Tensor u = nn::conv_forward(proj_up_[l], p, tp.up_in[l], keep ? &tp.up_c[l] : nullptr);
            nn::add_inplace(u, tp.r[l]);
            tp.u[l] = u;
            cur = block_forward(up_block_[l], u, tp.up[l], keep);
            tp.q[l] = cur;
        }
        tp.q1relu = nn::relu(cur);
        return nn::conv_forward(out_, p, tp.q1relu, keep ? &tp.out_c : nullptr);
    }

    void backward(const Tape& tp, const nn::Tensor& dout, float* g) const {
        const float* p = params_.data();
        nn::Tensor dq = nn::conv_backward(out_, p, tp.q1relu, tp.out_c, dout, g);
        nn::relu_backward(tp.q[0], dq);
        nn::Tensor dr[3];
        for (int l = 0; l < 3; ++l) dr[l] = nn::Tensor(tp.r[l].h, tp.r[l].w, tp.r[l].c);
        nn::Tensor dcur = dq;
        for (int l = 0; l <= 1; ++l) {
            nn::Tensor du = block_backward(up_block_[l], tp.up[l], dcur, g);
            nn::add_inplace(dr[l], du);  // skip
            nn::Tensor dup = nn::conv_backward(proj_up_[l], p, tp.up_in[l], tp.up_c[l], du, g);
            const nn::Tensor& src = l == 0 ? tp.q[1] : tp.r[2];
            dcur = nn::upsample_backward(dup, src.h, src.w);
        }
        nn::add_inplace(dr[2], dcur);
        std::array<Eigen::VectorXf, 3> dbias;
        for (int l = 2; l >= 0; --l) {
            nn::Tensor da = block_backward(down_block_[l], tp.down[l], dr[l], g);
            dbias[static_cast<std::size_t>(l)] = da.mat().rowwise().sum();
            if (l > 0) {
                nn::Tensor dpool = nn::conv_backward(proj_down_[l - 1], p, tp.pooled[l - 1], tp.pool_c[l - 1], da, g);
                nn::add_inplace(dr[l - 1], nn::avg_pool_backward(dpool, tp.r[l - 1].h, tp.r[l - 1].w));
            } else {
                nn::conv_backward(in_, p, tp.x, tp.in_c, da, g);
            }
        }
        const Eigen::Map<const Eigen::VectorXf> e(tp.emb.data(), cfg_.time_dim);
        for (int l = 0; l < 3; ++l) {
            const nn::Linear& lin = temb_[l];
            nn::MapF(g + lin.w, lin.out, lin.in).noalias() += dbias[static_cast<std::size_t>(l)] * e.transpose();
            Eigen::Map<Eigen::VectorXf>(g + lin.b, lin.out) += dbias[static_cast<std::size_t>(l)];
        }
    }

    PatchNetConfig cfg_;
    std::vector<nn::ParamInfo> layout_;
    std::size_t total_ = 0;
    std::vector<float> params_;
    nn::Conv in_, out_;
    std::array<std::array<nn::Conv, 2>, 3> down_block_;
    std::array<std::array<nn::Conv, 2>, 2> up_block_;
    std::array<nn::Conv, 2> proj_down_, proj_up_;
    std::array<nn::Linear, 3> temb_;
};

/// Packs a stack (7 ch) and a UV condition (2 ch) into one network input.
inline nn::Tensor pack_input(const UVField& x_t, const UVField& uv) {
    require_same_extent(x_t, uv, "pack_input");
    require_channels(uv, 2, "pack_input(uv)");
    const int c = x_t.channels() + 2;
    nn::Tensor t(x_t.height(), x_t.width(), c);
    for (std::size_t p = 0; p < x_t.texels(); ++p) {
        for (int k = 0; k < x_t.channels(); ++k)
            t.v[p * c + k] = static_cast<float>(x_t.data()[p * x_t.channels() + k]);
        t.v[p * c + c - 2] = static_cast<float>(uv.data()[p * 2]);
        t.v[p * c + c - 1] = static_cast<float>(uv.data()[p * 2 + 1]);
    }
    return t;
}

/// Denoiser adapter around a trained PatchNet.
class PatchDenoiser final : public Denoiser {
public:
    explicit PatchDenoiser(PatchNet net) : net_(std::move(net)) {}
    const PatchNet& net() const { return net_; }
    PatchNet& net() { return net_; }

    UVField predict_noise(const UVField& x_t, int t, const UVField& uv) const override {
        if (x_t.channels() != net_.config().out_channels)
            throw DimensionError("PatchDenoiser: expected " + std::to_string(net_.config().out_channels) + " channels");
        const nn::Tensor out = net_.forward(pack_input(x_t, uv), t);
        UVField eps(x_t.height(), x_t.width(), x_t.channels());
        for (std::size_t i = 0; i < eps.size(); ++i) eps.data()[i] = out.v[i];
        return eps;
    }

private:
    PatchNet net_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    int patch = 32;
    int batch = 8;
    int iterations = 1500;
    double learning_rate = 2e-3;
    double grad_clip = 1.0;  ///< global gradient-norm clip; 0 disables
    int steps = 1000;        ///< diffusion T
    int pool_size = 12;      ///< procedural stacks to crop from
    int pool_resolution = 128;
    int heldout = 64;
    std::uint64_t seed = 0;
    PatchNetConfig net;
};

struct TrainSample {
    nn::Tensor input;  // x_t + uv
    nn::Tensor noise;
    int t = 1;
};

/// Random crops from a pool of procedural stacks with varied tones.
class PatchSampler {
public:
    PatchSampler(int pool_size, int resolution, int patch, std::uint64_t seed, int steps)
        : patch_(patch), steps_(steps), schedule_(steps), rng_(seed * 6364136223846793005ULL + 1442695040888963407ULL) {
        if (patch < 4 || patch > resolution) throw InvalidArgument("PatchSampler: patch must be in [4, resolution]");
        const auto lib = gen_reference_library(resolution, pool_size, seed + 0x5eed);
        for (const auto& e : lib) pool_.push_back(e.stack);
    }

    TrainSample next() {
        const UVField& s = pool_[static_cast<std::size_t>(rng_.uniform_int(0, static_cast<int>(pool_.size()) - 1))];
        const int r0 = rng_.uniform_int(0, s.height() - patch_), c0 = rng_.uniform_int(0, s.width() - patch_);
        UVField crop(patch_, patch_, s.channels());
        for (int y = 0; y < patch_; ++y)
            for (int x = 0; x < patch_; ++x)
                for (int c = 0; c < s.channels(); ++c) crop.at(y, x, c) = s.at(r0 + y, c0 + x, c);
        TrainSample out;
        out.t = rng_.uniform_int(1, steps_);
        UVField noise = normal_field(patch_, patch_, s.channels(), rng_);
        const UVField xt = q_sample(crop, out.t, noise, schedule_);
        out.input = pack_input(xt, make_uv_condition(patch_, patch_, r0, c0, s.height(), s.width()));
        out.noise = nn::Tensor(patch_, patch_, s.channels());
        for (std::size_t i = 0; i < noise.size(); ++i) out.noise.v[i] = static_cast<float>(noise.data()[i]);
        return out;
    }

private:
    int patch_, steps_;
    DiffusionSchedule schedule_;
    Rng rng_;
    std::vector<UVField> pool_;
};

/// Mean squared noise-prediction error over a fixed sample set.
inline double denoising_mse(const PatchNet& net, const std::vector<TrainSample>& set) {
    double total = 0.0;
    std::size_t n = 0;
    for (const TrainSample& s : set) {
        const nn::Tensor out = net.forward(s.input, s.t);
        for (std::size_t i = 0; i < out.v.size(); ++i) {
            const double d = static_cast<double>(out.v[i]) - s.noise.v[i];
            total += d * d;
        }
        n += out.v.size();
    }
    return total / static_cast<double>(n);
}

struct TrainReport {
    std::vector<double> loss_curve;  ///< per-iteration batch loss
    double untrained_mse = 0.0;      ///< held-out MSE of the initialized network
    double heldout_mse = 0.0;        ///< held-out MSE after training
    double seconds = 0.0;
};

/// Adam on the per-batch mean noise MSE. Per-sample gradients are computed in
/// parallel and summed in sample order, so the loss curve depends only on the seed.
inline PatchNet train_patch_denoiser(const TrainConfig& cfg, TrainReport* report = nullptr,
                                     const std::function<void(int, double)>& observer = {}) {
    if (cfg.iterations < 0 || cfg.batch < 1) throw InvalidArgument("train: iterations >= 0 and batch >= 1 required");
    if (cfg.patch != 32 && cfg.patch != 64) throw InvalidArgument("train: patch size must be 32 or 64");
    const auto start = std::chrono::steady_clock::now();
    PatchNet net(cfg.net, cfg.seed);
    PatchSampler train(cfg.pool_size, cfg.pool_resolution, cfg.patch, cfg.seed, cfg.steps);
    PatchSampler held(std::max(2, cfg.pool_size / 4), cfg.pool_resolution, cfg.patch, cfg.seed + 0x0ddba11, cfg.steps);
    std::vector<TrainSample> heldout;
    for (int i = 0; i < cfg.heldout; ++i) heldout.push_back(held.next());

    TrainReport rep;
    rep.untrained_mse = denoising_mse(net, heldout);
    AdamState adam(net.parameter_count());
    const std::size_t np = net.parameter_count();
    std::vector<std::vector<float>> grads(static_cast<std::size_t>(cfg.batch), std::vector<float>(np));
    std::vector<double> losses(static_cast<std::size_t>(cfg.batch));
    std::vector<double> params_d(net.params().begin(), net.params().end());
    std::vector<double> gsum(np);

    for (int it = 1; it <= cfg.iterations; ++it) {
        std::vector<TrainSample> batch;
        for (int b = 0; b < cfg.batch; ++b) batch.push_back(train.next());
        parallel_for(cfg.batch, [&](int b0, int b1) {
            for (int b = b0; b < b1; ++b) {
                auto& g = grads[static_cast<std::size_t>(b)];
                std::fill(g.begin(), g.end(), 0.0f);
                losses[static_cast<std::size_t>(b)] =
                    net.loss_and_grad(batch[static_cast<std::size_t>(b)].input, batch[static_cast<std::size_t>(b)].t,
                                      batch[static_cast<std::size_t>(b)].noise, g);
            }
        });
        double loss = 0.0;
        std::fill(gsum.begin(), gsum.end(), 0.0);
        for (int b = 0; b < cfg.batch; ++b) {
            loss += losses[static_cast<std::size_t>(b)];
            const auto& g = grads[static_cast<std::size_t>(b)];
            for (std::size_t i = 0; i < np; ++i) gsum[i] += g[i];
        }
        loss /= cfg.batch;
        double norm2 = 0.0;
        for (double& g : gsum) {
            g /= cfg.batch;
            norm2 += g * g;
        }
        if (!std::isfinite(loss) || !std::isfinite(norm2))
            throw NumericalError("train_patch_denoiser: non-finite loss at iteration " + std::to_string(it) +
                                     " (last finite loss " +
                                     (rep.loss_curve.empty() ? std::string("n/a") : std::to_string(rep.loss_curve.back())) + ")",
                                 it);
        if (cfg.grad_clip > 0.0 && norm2 > cfg.grad_clip * cfg.grad_clip) {
            const double s = cfg.grad_clip / std::sqrt(norm2);
            for (double& g : gsum) g *= s;
        }
        adam.step(params_d, gsum, cfg.learning_rate);
        for (std::size_t i = 0; i < np; ++i) net.params()[i] = static_cast<float>(params_d[i]);
        rep.loss_curve.push_back(loss);
        if (observer) observer(it, loss);
    }
    rep.heldout_mse = denoising_mse(net, heldout);
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (report) *report = std::move(rep);
    return net;
}

// ---------------------------------------------------------------------------
// "TGDN" container: magic, u32 version, u32 config words, u32 layer count, then per
// layer u32 name length, name bytes, u32 rank, u32 dims; then the f32 payload.

inline constexpr std::array<char, 4> kTgdnMagic{'T', 'G', 'D', 'N'};
inline constexpr std::uint32_t kTgdnVersion = 1;

inline std::vector<unsigned char> encode_tgdn(const PatchNet& net) {
    std::vector<unsigned char> buf(kTgdnMagic.begin(), kTgdnMagic.end());
    detail::put_u32(buf, kTgdnVersion);
    const PatchNetConfig& c = net.config();
    for (int v : {c.in_channels, c.out_channels, c.widths[0], c.widths[1], c.widths[2], c.time_dim})
        detail::put_u32(buf, static_cast<std::uint32_t>(v));
    detail::put_u32(buf, static_cast<std::uint32_t>(net.layout().size()));
    for (const auto& p : net.layout()) {
        detail::put_u32(buf, static_cast<std::uint32_t>(p.name.size()));
        buf.insert(buf.end(), p.name.begin(), p.name.end());
        detail::put_u32(buf, static_cast<std::uint32_t>(p.shape.size()));
        for (int d : p.shape) detail::put_u32(buf, static_cast<std::uint32_t>(d));
    }
    for (float f : net.params()) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_u32(buf, bits);
    }
    return buf;
}

inline PatchNet decode_tgdn(std::span<const unsigned char> bytes) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
        if (bytes.size() - pos < n) throw DecodeError("TGDN: truncated file");
    };
    auto u32 = [&] {
        need(4);
        const std::uint32_t v = detail::get_u32(bytes.data() + pos);
        pos += 4;
        return v;
    };
    need(4);
    if (!std::equal(kTgdnMagic.begin(), kTgdnMagic.end(), bytes.begin())) throw DecodeError("TGDN: bad magic");
    pos = 4;
    if (const auto v = u32(); v != kTgdnVersion) throw DecodeError("TGDN: unsupported version " + std::to_string(v));
    PatchNetConfig c;
    c.in_channels = static_cast<int>(u32());
    c.out_channels = static_cast<int>(u32());
    for (int& w : c.widths) w = static_cast<int>(u32());
    c.time_dim = static_cast<int>(u32());
    if (c.in_channels < 1 || c.out_channels < 1 || c.time_dim < 2 || c.in_channels > 4096 || c.time_dim > 4096 ||
        std::any_of(c.widths.begin(), c.widths.end(), [](int w) { return w < 1 || w > 4096; }))
        throw DecodeError("TGDN: implausible network configuration");
    PatchNet net(c, 0);
    const std::uint32_t layers = u32();
    if (layers != net.layout().size()) throw DecodeError("TGDN: layer table does not match configuration");
    for (const auto& p : net.layout()) {
        const std::uint32_t len = u32();
        need(len);
        const std::string name(reinterpret_cast<const char*>(bytes.data() + pos), len);
        pos += len;
        if (name != p.name) throw DecodeError("TGDN: unexpected layer " + name);
        const std::uint32_t rank = u32();
        if (rank != p.shape.size()) throw DecodeError("TGDN: rank mismatch in " + name);
        for (int d : p.shape)
            if (u32() != static_cast<std::uint32_t>(d)) throw DecodeError("TGDN: shape mismatch in " + name);
    }
    need(4 * net.parameter_count());
    if (bytes.size() - pos != 4 * net.parameter_count()) throw DecodeError("TGDN: trailing bytes");
    for (float& f : net.params()) {
        const std::uint32_t bits = u32();
        std::memcpy(&f, &bits, 4);
        if (!std::isfinite(f)) throw DecodeError("TGDN: non-finite weight");
    }
    return net;
}

inline void save_patch_net(const PatchNet& net, const std::filesystem::path& path) {
    detail::write_file_atomic(path, encode_tgdn(net));
}

inline PatchNet load_patch_net(const std::filesystem::path& path) { return decode_tgdn(detail::read_file(path)); }

}  // namespace tgir
