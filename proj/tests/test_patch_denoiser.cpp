#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>

#include "support.hpp"
#include "tgir/patch_denoiser.hpp"

using namespace tgir;

namespace {

PatchNetConfig tiny() {
    PatchNetConfig c;
    c.widths = {4, 4, 6};
    c.time_dim = 8;
    return c;
}

nn::Tensor random_tensor(int h, int w, int c, Rng& rng) {
    nn::Tensor t(h, w, c);
    for (float& v : t.v) v = static_cast<float>(rng.normal());
    return t;
}

}  // namespace

TEST(PatchNet, ShapesAndParameterLayout) {
    const PatchNet net(tiny(), 1);
    Rng rng(1);
    const nn::Tensor out = net.forward(random_tensor(8, 8, 9, rng), 10);
    EXPECT_EQ(out.h, 8);
    EXPECT_EQ(out.w, 8);
    EXPECT_EQ(out.c, 7);
    std::size_t sum = 0;
    for (const auto& p : net.layout()) {
        EXPECT_EQ(p.offset, sum);
        sum += p.size;
    }
    EXPECT_EQ(sum, net.parameter_count());
    EXPECT_EQ(net.params().size(), net.parameter_count());
}

TEST(PatchNet, GradientMatchesFiniteDifferences) {
    PatchNet net(tiny(), 2);
    Rng rng(2);
    const nn::Tensor x = random_tensor(8, 8, 9, rng), target = random_tensor(8, 8, 7, rng);
    std::vector<float> grad(net.parameter_count(), 0.0f);
    net.loss_and_grad(x, 37, target, grad);

    // largest-gradient entry of every parameter tensor, central differences in float
    std::vector<double> an, fd;
    for (const auto& p : net.layout()) {
        std::size_t best = p.offset;
        for (std::size_t i = p.offset; i < p.offset + p.size; ++i)
            if (std::abs(grad[i]) > std::abs(grad[best])) best = i;
        if (std::abs(grad[best]) < 1e-4f) continue;
        const float keep = net.params()[best];
        const float h = 2e-3f;
        std::vector<float> scratch(net.parameter_count());
        net.params()[best] = keep + h;
        const double up = net.loss_and_grad(x, 37, target, scratch);
        net.params()[best] = keep - h;
        const double dn = net.loss_and_grad(x, 37, target, scratch);
        net.params()[best] = keep;
        an.push_back(grad[best]);
        fd.push_back((up - dn) / (2.0 * h));
    }
    ASSERT_GT(an.size(), 10u);
    EXPECT_LT(test::rel_error(an, fd), 2e-2);
}

TEST(PatchNet, GradientsAccumulate) {
    const PatchNet net(tiny(), 3);
    Rng rng(3);
    const nn::Tensor x = random_tensor(8, 8, 9, rng), target = random_tensor(8, 8, 7, rng);
    std::vector<float> once(net.parameter_count(), 0.0f), twice(net.parameter_count(), 0.0f);
    net.loss_and_grad(x, 5, target, once);
    net.loss_and_grad(x, 5, target, twice);
    net.loss_and_grad(x, 5, target, twice);
    for (std::size_t i = 0; i < once.size(); ++i) EXPECT_FLOAT_EQ(twice[i], 2 * once[i]);
}

TEST(PatchNet, TimestepChangesTheOutput) {
    const PatchNet net(tiny(), 4);
    Rng rng(4);
    const nn::Tensor x = random_tensor(8, 8, 9, rng);
    const nn::Tensor a = net.forward(x, 1), b = net.forward(x, 900);
    EXPECT_NE(a.v, b.v);
}

TEST(Tgdn, RoundTripIsExact) {
    const PatchNet net(tiny(), 5);
    const auto bytes = encode_tgdn(net);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "TGDN");
    const PatchNet back = decode_tgdn(bytes);
    EXPECT_EQ(back.params(), net.params());
    EXPECT_EQ(encode_tgdn(back), bytes);
    Rng rng(5);
    const nn::Tensor x = random_tensor(8, 8, 9, rng);
    EXPECT_EQ(back.forward(x, 3).v, net.forward(x, 3).v);

    const auto dir = test::scratch_dir("tgdn");
    save_patch_net(net, dir / "n.tgdn");
    EXPECT_EQ(load_patch_net(dir / "n.tgdn").params(), net.params());
    EXPECT_THROW(load_patch_net(dir / "missing.tgdn"), IoError);
}

TEST(Tgdn, CorruptFilesAreRejected) {
    const PatchNet net(tiny(), 6);
    auto bytes = encode_tgdn(net);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(decode_tgdn(bad_magic), DecodeError);
    auto truncated = bytes;
    truncated.resize(truncated.size() - 3);
    EXPECT_THROW(decode_tgdn(truncated), DecodeError);
    auto longer = bytes;
    longer.push_back(0);
    EXPECT_THROW(decode_tgdn(longer), DecodeError);
    auto version = bytes;
    version[4] = 99;
    EXPECT_THROW(decode_tgdn(version), DecodeError);
}

TEST(PatchDenoiser, AdapterShapesAndChannelCheck) {
    const PatchDenoiser d(PatchNet(tiny(), 7));
    Rng rng(7);
    const UVField x = test::random_field(8, 8, 7, rng);
    const UVField uv = make_uv_condition(8, 8, 0, 0, 8, 8);
    const UVField eps = d.predict_noise(x, 10, uv);
    EXPECT_EQ(eps.channels(), 7);
    EXPECT_TRUE(eps.all_finite());
    EXPECT_THROW(d.predict_noise(test::random_field(8, 8, 3, rng), 10, uv), DimensionError);
}

TEST(Training, ShortRunIsDeterministicAndLearns) {
    TrainConfig cfg;
    cfg.iterations = 20;
    cfg.batch = 4;
    cfg.pool_size = 3;
    cfg.pool_resolution = 48;
    cfg.heldout = 8;
    cfg.net = tiny();
    cfg.seed = 11;
    TrainReport a, b;
    const PatchNet na = train_patch_denoiser(cfg, &a);
    const PatchNet nb = train_patch_denoiser(cfg, &b);
    EXPECT_EQ(a.loss_curve, b.loss_curve);
    EXPECT_EQ(na.params(), nb.params());
    ASSERT_EQ(a.loss_curve.size(), 20u);
    EXPECT_LT(a.heldout_mse, a.untrained_mse);

    cfg.patch = 16;
    EXPECT_THROW(train_patch_denoiser(cfg), InvalidArgument);
}
