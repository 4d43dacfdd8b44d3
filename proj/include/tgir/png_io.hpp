#pragma once

// 8/16-bit grayscale and RGB PNG exchange for masks and previews (libpng).

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "tgir/error.hpp"
#include "tgir/uvfield.hpp"

namespace tgir {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngReadState {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReadState() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct PngWriteState {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriteState() { png_destroy_write_struct(&png, info ? &info : nullptr); }
};

inline void png_silent_warning(png_structp, png_const_charp) {}

// Decodes into `rows`; returns an empty string on success and the failure reason
// otherwise. Kept free of objects with destructors between setjmp and longjmp.
inline std::string png_decode(std::FILE* fp, PngReadState& st, int& height, int& width,
                              int& channels, int& depth, std::vector<unsigned char>& raw) {
    st.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_silent_warning);
    if (!st.png) return "png: cannot allocate reader";
    st.info = png_create_info_struct(st.png);
    if (!st.info) return "png: cannot allocate info";
    std::vector<png_bytep> row_ptrs;
    if (setjmp(png_jmpbuf(st.png))) return "png: corrupt stream";
    png_init_io(st.png, fp);
    png_read_info(st.png, st.info);
    const png_uint_32 w = png_get_image_width(st.png, st.info);
    const png_uint_32 h = png_get_image_height(st.png, st.info);
    const int bit_depth = png_get_bit_depth(st.png, st.info);
    const int color = png_get_color_type(st.png, st.info);
    const int interlace = png_get_interlace_type(st.png, st.info);
    if (interlace != PNG_INTERLACE_NONE) return "png: interlaced images are not supported";
    if (bit_depth != 8 && bit_depth != 16)
        return "png: unsupported bit depth " + std::to_string(bit_depth);
    if (color == PNG_COLOR_TYPE_GRAY)
        channels = 1;
    else if (color == PNG_COLOR_TYPE_RGB)
        channels = 3;
    else
        return "png: unsupported color type " + std::to_string(color);
    if (bit_depth == 16) png_set_swap(st.png);  // host little-endian 16-bit samples
    png_read_update_info(st.png, st.info);
    const std::size_t stride = png_get_rowbytes(st.png, st.info);
    raw.assign(stride * h, 0);
    row_ptrs.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) row_ptrs[y] = raw.data() + stride * y;
    png_read_image(st.png, row_ptrs.data());
    png_read_end(st.png, nullptr);
    height = static_cast<int>(h);
    width = static_cast<int>(w);
    depth = bit_depth;
    return {};
}

inline std::string png_encode(std::FILE* fp, PngWriteState& st, int height, int width,
                              int channels, int depth, std::vector<unsigned char>& raw) {
    st.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_silent_warning);
    if (!st.png) return "png: cannot allocate writer";
    st.info = png_create_info_struct(st.png);
    if (!st.info) return "png: cannot allocate info";
    std::vector<png_bytep> row_ptrs;
    if (setjmp(png_jmpbuf(st.png))) return "png: encode failure";
    png_init_io(st.png, fp);
    png_set_IHDR(st.png, st.info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                 depth, channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // No timestamp chunk: identical inputs produce identical files.
    png_write_info(st.png, st.info);
    if (depth == 16) png_set_swap(st.png);
    const std::size_t stride = static_cast<std::size_t>(width) * channels * (depth / 8);
    row_ptrs.resize(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) row_ptrs[static_cast<std::size_t>(y)] = raw.data() + stride * y;
    png_write_image(st.png, row_ptrs.data());
    png_write_end(st.png, nullptr);
    return {};
}

}  // namespace detail

/// Codes map linearly onto [0, 1]: value = code / (2^bits - 1).
inline UVField read_png(const std::filesystem::path& path) {
    detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw IoError("read_png: cannot open " + path.string());
    unsigned char sig[8] = {};
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw DecodeError("read_png: not a PNG file: " + path.string());
    detail::PngReadState st;
    int h = 0, w = 0, ch = 0, depth = 0;
    std::vector<unsigned char> raw;
    if (std::fseek(fp.get(), 0, SEEK_SET) != 0) throw IoError("read_png: seek failed");
    if (auto err = detail::png_decode(fp.get(), st, h, w, ch, depth, raw); !err.empty())
        throw DecodeError(err + ": " + path.string());
    UVField out(h, w, ch);
    const double scale = depth == 16 ? 1.0 / 65535.0 : 1.0 / 255.0;
    auto dst = out.data();
    if (depth == 8) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = raw[i] * scale;
    } else {
        for (std::size_t i = 0; i < dst.size(); ++i) {
            const unsigned v = static_cast<unsigned>(raw[2 * i]) | (static_cast<unsigned>(raw[2 * i + 1]) << 8);
            dst[i] = v * scale;
        }
    }
    return out;
}

/// Values are clamped to [0, 1] and rounded to the nearest code. Only 1 or 3 channels.
inline void write_png(const UVField& field, const std::filesystem::path& path, int bit_depth = 8) {
    if (path.empty()) throw IoError("write_png: empty path");
    if (field.channels() != 1 && field.channels() != 3)
        throw DimensionError("write_png: only 1- or 3-channel fields, got " + field.shape_string());
    if (bit_depth != 8 && bit_depth != 16) throw InvalidArgument("write_png: bit depth must be 8 or 16");
    const double maxcode = bit_depth == 16 ? 65535.0 : 255.0;
    std::vector<unsigned char> raw(field.size() * static_cast<std::size_t>(bit_depth / 8));
    auto src = field.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const double v = std::isfinite(src[i]) ? std::clamp(src[i], 0.0, 1.0) : 0.0;
        const auto code = static_cast<unsigned>(std::lround(v * maxcode));
        if (bit_depth == 8) {
            raw[i] = static_cast<unsigned char>(code);
        } else {
            raw[2 * i] = static_cast<unsigned char>(code & 0xffu);
            raw[2 * i + 1] = static_cast<unsigned char>(code >> 8);
        }
    }
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        detail::FilePtr fp(std::fopen(tmp.string().c_str(), "wb"));
        if (!fp) throw IoError("write_png: cannot open " + tmp.string());
        detail::PngWriteState st;
        if (auto err = detail::png_encode(fp.get(), st, field.height(), field.width(), field.channels(),
                                          bit_depth, raw);
            !err.empty())
            throw IoError(err + ": " + path.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("write_png: cannot rename into " + path.string());
}

}  // namespace tgir
