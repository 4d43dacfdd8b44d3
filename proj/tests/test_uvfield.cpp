#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "support.hpp"
#include "tgir/png_io.hpp"
#include "tgir/uvfield.hpp"

using namespace tgir;

TEST(UVField, ShapeAndIndexing) {
    UVField f(3, 4, 2);
    EXPECT_EQ(f.size(), 24u);
    EXPECT_EQ(f.texels(), 12u);
    f.at(2, 3, 1) = 5.0;
    EXPECT_EQ(f.data()[f.size() - 1], 5.0);
    EXPECT_THROW(UVField(2, 2, 0), DimensionError);
    EXPECT_THROW(UVField(2, 2, 1, std::vector<double>(3)), DimensionError);
}

TEST(UVField, ExtractInsertChannels) {
    Rng rng(1);
    UVField f = test::random_field(5, 6, 7, rng);
    UVField a = extract_channels(f, 3, 3);
    EXPECT_EQ(a.channels(), 3);
    EXPECT_EQ(a.at(4, 5, 2), f.at(4, 5, 5));
    UVField g(5, 6, 7);
    insert_channels(g, a, 3);
    EXPECT_EQ(g.at(1, 2, 4), f.at(1, 2, 4));
    EXPECT_EQ(g.at(1, 2, 0), 0.0);
}

TEST(UVField, BilinearHitsTexelCentersAndClamps) {
    Rng rng(2);
    UVField f = test::random_field(4, 5, 2, rng);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 5; ++x) {
            const auto v = bilinear_sample(f, x + 0.5, y + 0.5);
            EXPECT_DOUBLE_EQ(v[1], f.at(y, x, 1));
        }
    // midpoint between two centers
    const auto m = bilinear_sample(f, 1.0, 0.5);
    EXPECT_NEAR(m[0], 0.5 * (f.at(0, 0, 0) + f.at(0, 1, 0)), 1e-15);
    // clamped outside the extent
    EXPECT_DOUBLE_EQ(bilinear_sample(f, -3.0, -3.0)[0], f.at(0, 0, 0));
    EXPECT_DOUBLE_EQ(bilinear_sample(f, 99.0, 99.0)[0], f.at(3, 4, 0));
}

TEST(Uvf, RoundTripIsExactForFloatValues) {
    Rng rng(3);
    UVField f = test::random_field(7, 9, 3, rng, -2, 2);
    for (double& v : f.data()) v = static_cast<float>(v);
    const auto dir = test::scratch_dir("uvf_rt");
    write_uvf(f, dir / "a.uvf");
    const UVField g = read_uvf(dir / "a.uvf");
    ASSERT_TRUE(g.same_shape(f));
    for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(g.data()[i], f.data()[i]);
    EXPECT_FALSE(std::filesystem::exists(dir / "a.uvf.tmp"));
}

TEST(Uvf, HeaderLayout) {
    UVField f(2, 3, 1, 1.0);
    const auto b = encode_uvf(f);
    ASSERT_EQ(b.size(), kUvfHeaderBytes + 6 * 4);
    EXPECT_EQ(std::memcmp(b.data(), "UVF1", 4), 0);
    EXPECT_EQ(detail::get_u32(b.data() + 4), 2u);
    EXPECT_EQ(detail::get_u32(b.data() + 8), 3u);
    EXPECT_EQ(detail::get_u32(b.data() + 12), 1u);
    EXPECT_EQ(detail::get_u32(b.data() + 16), 0u);
    float one;
    std::memcpy(&one, b.data() + 20, 4);
    EXPECT_EQ(one, 1.0f);
}

TEST(Uvf, RejectsMalformed) {
    UVField f(2, 2, 1, 0.5);
    auto b = encode_uvf(f);
    auto bad = b;
    bad[0] = 'X';
    EXPECT_THROW(decode_uvf(bad), DecodeError);
    auto trunc = b;
    trunc.pop_back();
    EXPECT_THROW(decode_uvf(trunc), DecodeError);
    auto extra = b;
    extra.push_back(0);
    EXPECT_THROW(decode_uvf(extra), DecodeError);
    auto dtype = b;
    dtype[16] = 1;
    EXPECT_THROW(decode_uvf(dtype), DecodeError);
    std::vector<unsigned char> header(b.begin(), b.begin() + 10);
    EXPECT_THROW(decode_uvf(header), DecodeError);
    EXPECT_THROW(read_uvf("/nonexistent/dir/x.uvf"), IoError);
}

TEST(Png, RoundTrip8And16Bit) {
    const auto dir = test::scratch_dir("png_rt");
    UVField f(5, 6, 3);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 6; ++x)
            for (int c = 0; c < 3; ++c) f.at(y, x, c) = ((y * 6 + x) * 3 + c) / 89.0;
    write_png(f, dir / "a.png");
    UVField g = read_png(dir / "a.png");
    ASSERT_TRUE(g.same_shape(f));
    for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(g.data()[i], f.data()[i], 0.5 / 255 + 1e-12);
    write_png(f, dir / "b.png", 16);
    g = read_png(dir / "b.png");
    for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(g.data()[i], f.data()[i], 0.5 / 65535 + 1e-12);

    UVField m(4, 4, 1);
    m.at(1, 2) = 1.0;
    write_png(m, dir / "m.png");
    const UVField mm = read_png(dir / "m.png");
    EXPECT_EQ(mm.channels(), 1);
    EXPECT_EQ(mm.at(1, 2), 1.0);
    EXPECT_EQ(mm.at(0, 0), 0.0);
}

TEST(Png, Errors) {
    const auto dir = test::scratch_dir("png_err");
    EXPECT_THROW(read_png(dir / "missing.png"), IoError);
    {
        std::ofstream out(dir / "junk.png", std::ios::binary);
        out << "not a png at all";
    }
    EXPECT_THROW(read_png(dir / "junk.png"), DecodeError);
    EXPECT_THROW(write_png(UVField(2, 2, 7), dir / "x.png"), DimensionError);
}

TEST(Preview, ClampsAndGammaEncodes) {
    UVField f(1, 3, 1, std::vector<double>{-1.0, 0.25, 2.0});
    const UVField p = to_preview(f);
    EXPECT_EQ(p.at(0, 0), 0.0);
    EXPECT_NEAR(p.at(0, 1), std::pow(0.25, 1 / 2.2), 1e-15);
    EXPECT_EQ(p.at(0, 2), 1.0);
}
