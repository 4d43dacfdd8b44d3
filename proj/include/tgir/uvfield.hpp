#pragma once

// Dense H x W x C fields over the UV square and their on-disk container.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "tgir/error.hpp"

namespace tgir {

/// Row-major, channel-interleaved field. Values are linear-space reals; 1-channel
/// fields are used as masks in [0, 1].
class UVField {
public:
    UVField() = default;
    UVField(int height, int width, int channels, double fill = 0.0)
        : height_(height), width_(width), channels_(channels) {
        if (height < 0 || width < 0 || channels <= 0)
            throw DimensionError("UVField: invalid shape " + shape_string(height, width, channels));
        data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
    }
    UVField(int height, int width, int channels, std::vector<double> data)
        : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
        if (height < 0 || width < 0 || channels <= 0 ||
            data_.size() != static_cast<std::size_t>(height) * width * channels)
            throw DimensionError("UVField: data length does not match " +
                                 shape_string(height, width, channels));
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    int channels() const noexcept { return channels_; }
    std::size_t texels() const noexcept { return static_cast<std::size_t>(height_) * width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    std::size_t index(int y, int x, int c = 0) const noexcept {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }
    double& at(int y, int x, int c = 0) noexcept { return data_[index(y, x, c)]; }
    double at(int y, int x, int c = 0) const noexcept { return data_[index(y, x, c)]; }

    std::span<double> texel(int y, int x) noexcept {
        return std::span<double>(data_).subspan(index(y, x), static_cast<std::size_t>(channels_));
    }
    std::span<const double> texel(int y, int x) const noexcept {
        return std::span<const double>(data_).subspan(index(y, x),
                                                      static_cast<std::size_t>(channels_));
    }

    bool same_shape(const UVField& o) const noexcept {
        return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
    }
    bool same_extent(const UVField& o) const noexcept {
        return height_ == o.height_ && width_ == o.width_;
    }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const UVField&, const UVField&) = default;

    static std::string shape_string(int h, int w, int c) {
        return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
    }
    std::string shape_string() const { return shape_string(height_, width_, channels_); }

private:
    int height_ = 0;
    int width_ = 0;
    int channels_ = 1;
    std::vector<double> data_;
};

inline void require_same_extent(const UVField& a, const UVField& b, const char* what) {
    if (!a.same_extent(b))
        throw DimensionError(std::string(what) + ": extent mismatch " + a.shape_string() + " vs " +
                             b.shape_string());
}

inline void require_channels(const UVField& f, int channels, const char* what) {
    if (f.channels() != channels)
        throw DimensionError(std::string(what) + ": expected " + std::to_string(channels) +
                             " channels, got " + f.shape_string());
}

/// Copies channels [first, first + count) into a new field.
inline UVField extract_channels(const UVField& f, int first, int count) {
    if (first < 0 || count <= 0 || first + count > f.channels())
        throw DimensionError("extract_channels: range out of bounds for " + f.shape_string());
    UVField out(f.height(), f.width(), count);
    for (std::size_t t = 0; t < f.texels(); ++t)
        for (int c = 0; c < count; ++c)
            out.data()[t * count + c] = f.data()[t * f.channels() + first + c];
    return out;
}

inline void insert_channels(UVField& dst, const UVField& src, int first) {
    require_same_extent(dst, src, "insert_channels");
    if (first < 0 || first + src.channels() > dst.channels())
        throw DimensionError("insert_channels: range out of bounds");
    for (std::size_t t = 0; t < dst.texels(); ++t)
        for (int c = 0; c < src.channels(); ++c)
            dst.data()[t * dst.channels() + first + c] = src.data()[t * src.channels() + c];
}

/// Edge-clamped bilinear lookup with texel centers at (i + 0.5, j + 0.5).
/// `u` runs along the width, `v` along the height; both in texel units.
inline void bilinear_sample(const UVField& f, double u, double v, std::span<double> out) {
    const int w = f.width();
    const int h = f.height();
    const int ch = f.channels();
    double px = std::clamp(u - 0.5, 0.0, static_cast<double>(w - 1));
    double py = std::clamp(v - 0.5, 0.0, static_cast<double>(h - 1));
    if (!std::isfinite(px)) px = 0.0;
    if (!std::isfinite(py)) py = 0.0;
    const int x0 = static_cast<int>(std::floor(px));
    const int y0 = static_cast<int>(std::floor(py));
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fx = px - x0;
    const double fy = py - y0;
    const double w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy), w10 = (1 - fx) * fy, w11 = fx * fy;
    for (int c = 0; c < ch; ++c)
        out[static_cast<std::size_t>(c)] = w00 * f.at(y0, x0, c) + w01 * f.at(y0, x1, c) +
                                           w10 * f.at(y1, x0, c) + w11 * f.at(y1, x1, c);
}

inline std::vector<double> bilinear_sample(const UVField& f, double u, double v) {
    std::vector<double> out(static_cast<std::size_t>(f.channels()));
    bilinear_sample(f, u, v, out);
    return out;
}

// ---------------------------------------------------------------------------
// UVF container: "UVF1", u32 height, width, channels, dtype (0 = f32), payload.

inline constexpr std::array<char, 4> kUvfMagic{'U', 'V', 'F', '1'};
inline constexpr std::uint32_t kUvfDtypeF32 = 0;
inline constexpr std::size_t kUvfHeaderBytes = 20;

namespace detail {

inline void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

/// Writes bytes to `path` through a sibling temp file and a rename, so readers never
/// observe a partially written file under the final name.
inline void write_file_atomic(const std::filesystem::path& path,
                              std::span<const unsigned char> bytes) {
    if (path.empty()) throw IoError("write: empty path");
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("write: cannot open " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write: short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("write: cannot rename into " + path.string());
    }
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read: cannot open " + path.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace detail

inline std::vector<unsigned char> encode_uvf(const UVField& field) {
    std::vector<unsigned char> buf(kUvfMagic.begin(), kUvfMagic.end());
    buf.reserve(kUvfHeaderBytes + field.size() * 4);
    detail::put_u32(buf, static_cast<std::uint32_t>(field.height()));
    detail::put_u32(buf, static_cast<std::uint32_t>(field.width()));
    detail::put_u32(buf, static_cast<std::uint32_t>(field.channels()));
    detail::put_u32(buf, kUvfDtypeF32);
    for (double v : field.data()) detail::put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return buf;
}

inline UVField decode_uvf(std::span<const unsigned char> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kUvfMagic.data(), 4) != 0)
        throw DecodeError("uvf: bad magic");
    if (bytes.size() < kUvfHeaderBytes) throw DecodeError("uvf: truncated header");
    const std::uint32_t h = detail::get_u32(bytes.data() + 4);
    const std::uint32_t w = detail::get_u32(bytes.data() + 8);
    const std::uint32_t c = detail::get_u32(bytes.data() + 12);
    const std::uint32_t dtype = detail::get_u32(bytes.data() + 16);
    if (dtype != kUvfDtypeF32) throw DecodeError("uvf: unsupported dtype " + std::to_string(dtype));
    if (c == 0 || h > (1u << 20) || w > (1u << 20) || c > 4096)
        throw DecodeError("uvf: implausible shape");
    const std::size_t count = static_cast<std::size_t>(h) * w * c;
    if (bytes.size() - kUvfHeaderBytes < count * 4) throw DecodeError("uvf: truncated payload");
    if (bytes.size() - kUvfHeaderBytes > count * 4) throw DecodeError("uvf: trailing bytes");
    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i) {
        const float v = std::bit_cast<float>(detail::get_u32(bytes.data() + kUvfHeaderBytes + 4 * i));
        data[i] = static_cast<double>(v);
    }
    return UVField(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c), std::move(data));
}

/// Payload is stored as f32; values that are not f32-representable are rounded.
inline void write_uvf(const UVField& field, const std::filesystem::path& path) {
    if (path.empty()) throw IoError("write_uvf: empty path");
    const auto bytes = encode_uvf(field);
    detail::write_file_atomic(path, bytes);
}

inline UVField read_uvf(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    return decode_uvf(bytes);
}

/// Linear -> display conversion used only for preview PNGs (power-law 1/2.2).
inline UVField to_preview(const UVField& linear) {
    UVField out = linear;
    for (double& v : out.data()) v = std::pow(std::clamp(v, 0.0, 1.0), 1.0 / 2.2);
    return out;
}

}  // namespace tgir
