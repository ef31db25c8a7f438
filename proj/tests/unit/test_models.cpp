#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <map>

#include "oracles.hpp"
#include "strokeseg/models.hpp"

using namespace strokeseg;
namespace fs = std::filesystem;

namespace {

models::SegmenterConfig tiny_config(bool residual) {
    models::SegmenterConfig cfg;
    cfg.encoder_widths = {8, 12, 16, 16, 24, 24, 24, 24};
    cfg.residual = residual;
    return cfg;
}

/// widths all distinct so every residual block needs a projection
models::SegmenterConfig all_projection_config(bool residual) {
    models::SegmenterConfig cfg;
    cfg.encoder_widths = {8, 10, 12, 14, 16, 18, 20, 22};
    cfg.residual = residual;
    return cfg;
}

std::int64_t param_count(models::Segmenter& s) {
    return s.params().count();
}

}  // namespace

TEST_CASE("segmenter config validation") {
    models::SegmenterConfig cfg;
    cfg.encoder_widths = {1, 2, 3};
    CHECK_THROWS_AS(models::Segmenter(cfg, 0), InvalidConfig);
    cfg = tiny_config(true);
    cfg.num_classes = 1;
    CHECK_THROWS_AS(models::Segmenter(cfg, 0), InvalidConfig);
}

TEST_CASE("segmenter shape contract and input checks") {
    models::Segmenter seg(tiny_config(true), 1);
    Rng rng(2);
    const Tensor x = normal_tensor<float>({2, 3, 96, 96}, 0.0f, 1.0f, rng);
    const Tensor logits = seg.forward(x, false, false);
    CHECK(logits.shape() == std::vector<int>{2, 3, 96, 96});
    CHECK(logits.all_finite());

    const Tensor bad = normal_tensor<float>({1, 3, 80, 96}, 0.0f, 1.0f, rng);
    CHECK_THROWS_AS(seg.forward(bad, false, false), ShapeError);  // 80 % 32 != 0

    Tensor nan_in = x;
    nan_in[0] = std::nanf("");
    CHECK_THROWS_AS(seg.forward(nan_in, false, false), ShapeError);
}

TEST_CASE("zero input on a fresh segmenter yields finite logits") {
    models::Segmenter seg(tiny_config(false), 3);
    const Tensor x({1, 3, 64, 64});
    CHECK(seg.forward(x, false, false).all_finite());
}

TEST_CASE("eval-mode forward is bit-deterministic") {
    models::Segmenter seg(tiny_config(true), 4);
    Rng rng(5);
    const Tensor x = normal_tensor<float>({1, 3, 64, 64}, 0.0f, 1.0f, rng);
    const Tensor a = seg.forward(x, false, false);
    const Tensor b = seg.forward(x, false, false);
    CHECK(a.vec() == b.vec());
}

TEST_CASE("residual toggle changes both parameter count and output") {
    models::Segmenter with(tiny_config(true), 6);
    models::Segmenter without(tiny_config(false), 6);
    CHECK(param_count(with) > param_count(without));

    Rng rng(7);
    const Tensor x = normal_tensor<float>({1, 3, 64, 64}, 0.0f, 1.0f, rng);
    const Tensor ya = with.forward(x, false, false);
    const Tensor yb = without.forward(x, false, false);
    float max_diff = 0;
    for (std::int64_t i = 0; i < ya.numel(); ++i)
        max_diff = std::max(max_diff, std::abs(ya[i] - yb[i]));
    CHECK(max_diff > 0.0f);
}

TEST_CASE("parameter count is a pure function of the config") {
    models::Segmenter a(tiny_config(true), 1), b(tiny_config(true), 999);
    CHECK(param_count(a) == param_count(b));
}

TEST_CASE("zeroed projections reduce the residual net to the plain one") {
    // all-distinct widths: every shortcut is a projection, so zeroing them
    // removes every residual contribution
    models::Segmenter res(all_projection_config(true), 11);
    models::Segmenter plain(all_projection_config(false), 11);

    // copy the shared tensors, zero the projections
    auto named = res.named_tensors();
    auto plain_named = plain.named_tensors();
    std::map<std::string, Tensor*> plain_map;
    for (auto& [n, t] : plain_named) plain_map[n] = t;
    for (auto& [n, t] : named) {
        if (n.find(".res") != std::string::npos) {
            t->fill(0.0f);
        } else {
            REQUIRE(plain_map.count(n));
            *plain_map[n] = *t;
        }
    }

    Rng rng(12);
    const Tensor x = normal_tensor<float>({1, 3, 64, 64}, 0.0f, 1.0f, rng);
    const Tensor ya = res.forward(x, false, false);
    const Tensor yb = plain.forward(x, false, false);
    for (std::int64_t i = 0; i < ya.numel(); ++i) REQUIRE(ya[i] == yb[i]);
}

TEST_CASE("gradient reaches every parameter for both residual settings") {
    for (bool residual : {false, true}) {
        models::Segmenter seg(all_projection_config(residual), 13);
        Rng rng(14);
        const Tensor x = normal_tensor<float>({2, 3, 64, 64}, 0.0f, 1.0f, rng);
        const Tensor logits = seg.forward(x, true, true);
        const Tensor glogits = normal_tensor<float>({2, 3, 64, 64}, 0.0f, 1.0f, rng);

        auto group = seg.params();
        group.zero_grad();
        (void)seg.backward(glogits, true);
        for (auto* p : group.params) {
            float linf = 0;
            for (std::int64_t i = 0; i < p->grad.numel(); ++i)
                linf = std::max(linf, std::abs(p->grad[i]));
            INFO("parameter ", p->name);
            REQUIRE(linf > 0.0f);
        }
    }
}

TEST_CASE("discriminator shape contract") {
    models::DiscriminatorConfig dc;
    dc.in_channels = 4;
    dc.base_width = 8;
    models::Discriminator d(dc, 15, "core");
    Rng rng(16);
    const Tensor x = normal_tensor<float>({2, 4, 96, 96}, 0.0f, 1.0f, rng);
    const Tensor scores = d.forward(x, false, false);
    CHECK(scores.shape() == std::vector<int>{2, 1});

    models::DiscriminatorConfig pc = dc;
    pc.in_channels = 5;
    models::Discriminator pair(pc, 17, "pair");
    const Tensor y = normal_tensor<float>({3, 5, 64, 64}, 0.0f, 1.0f, rng);
    CHECK(pair.forward(y, false, false).shape() == std::vector<int>{3, 1});

    CHECK_THROWS_AS(d.forward(y, false, false), ShapeError);  // wrong channel count
}

TEST_CASE("discriminator generator-pass backward leaves parameter grads zero") {
    models::DiscriminatorConfig dc;
    dc.in_channels = 4;
    dc.base_width = 8;
    models::Discriminator d(dc, 18, "core");
    Rng rng(19);
    const Tensor x = normal_tensor<float>({2, 4, 64, 64}, 0.0f, 1.0f, rng);

    auto group = d.params();
    group.zero_grad();
    (void)d.forward(x, true, true);
    Tensor gs({2, 1}, 1.0f);
    const Tensor gin = d.backward(gs, /*param_grads=*/false);
    CHECK(gin.shape() == x.shape());

    for (auto* p : group.params)
        for (std::int64_t i = 0; i < p->grad.numel(); ++i) REQUIRE(p->grad[i] == 0.0f);

    // and with param_grads=true they accumulate
    (void)d.forward(x, true, true);
    (void)d.backward(gs, /*param_grads=*/true);
    float total = 0;
    for (auto* p : group.params)
        for (std::int64_t i = 0; i < p->grad.numel(); ++i) total += std::abs(p->grad[i]);
    CHECK(total > 0.0f);
}

TEST_CASE("discriminator_inputs channel layout") {
    Rng rng(20);
    const Tensor inputs = normal_tensor<float>({2, 3, 32, 32}, 0.0f, 1.0f, rng);
    Tensor logits = normal_tensor<float>({2, 3, 32, 32}, 0.0f, 1.0f, rng);
    const Tensor probs = nn::softmax_channels(logits);
    IntTensor labels({2, 32, 32});
    for (std::int64_t i = 0; i < labels.numel(); ++i)
        labels[i] = static_cast<std::int32_t>(i % 3);
    const Tensor onehot = nn::one_hot_channels<float>(labels, 3);

    const auto adv = models::discriminator_inputs(probs, onehot, inputs);
    CHECK(adv.core_fake.dim(1) == 4);
    CHECK(adv.pen_real.dim(1) == 4);
    CHECK(adv.pair_fake.dim(1) == 5);
    CHECK(adv.pair_real.dim(0) == 2);

    // first three channels are the conditioning image
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 5; ++i)
            CHECK(adv.core_fake.at(0, c, i, i) == inputs.at(0, c, i, i));
    // fake carries probs, real carries the one-hot
    CHECK(adv.core_fake.at(1, 3, 2, 2) == probs.at(1, 2, 2, 2));
    CHECK(adv.core_real.at(1, 3, 2, 2) == onehot.at(1, 2, 2, 2));
    CHECK(adv.pen_fake.at(0, 3, 4, 4) == probs.at(0, 1, 4, 4));
    CHECK(adv.pair_fake.at(0, 3, 4, 4) == probs.at(0, 1, 4, 4));
    CHECK(adv.pair_fake.at(0, 4, 4, 4) == probs.at(0, 2, 4, 4));

    // probs == onehot makes real and fake identical
    const auto degenerate = models::discriminator_inputs(onehot, onehot, inputs);
    CHECK(degenerate.core_fake.vec() == degenerate.core_real.vec());
    CHECK(degenerate.pair_fake.vec() == degenerate.pair_real.vec());
}

TEST_CASE("checkpoint round trip preserves every tensor and the config") {
    const fs::path path =
        fs::temp_directory_path() / ("ckpt_" + std::to_string(Rng(std::random_device{}())()));
    models::Segmenter seg(tiny_config(true), 21);

    models::DiscriminatorConfig dc;
    dc.in_channels = 4;
    dc.base_width = 8;
    models::Discriminator disc(dc, 22, "core");

    models::save_checkpoint(path, seg, {&disc}, R"({"ablation":"BL5"})");
    models::Checkpoint ck = models::load_checkpoint(path, /*want_discriminators=*/true);

    CHECK(ck.segmenter_config == tiny_config(true));
    CHECK(ck.meta_json == R"({"ablation":"BL5"})");
    REQUIRE(ck.discriminators.size() == 1);

    auto orig = seg.named_tensors();
    auto back = ck.segmenter->named_tensors();
    REQUIRE(orig.size() == back.size());
    for (size_t i = 0; i < orig.size(); ++i) {
        CHECK(orig[i].first == back[i].first);
        REQUIRE(orig[i].second->vec() == back[i].second->vec());
    }
    auto dorig = disc.named_tensors();
    auto dback = ck.discriminators[0]->named_tensors();
    for (size_t i = 0; i < dorig.size(); ++i)
        REQUIRE(dorig[i].second->vec() == dback[i].second->vec());

    // loaded model behaves identically
    Rng rng(23);
    const Tensor x = normal_tensor<float>({1, 3, 64, 64}, 0.0f, 1.0f, rng);
    CHECK(seg.forward(x, false, false).vec() == ck.segmenter->forward(x, false, false).vec());

    fs::remove(path);
}

TEST_CASE("checkpoint mismatch paths") {
    const fs::path path =
        fs::temp_directory_path() / ("ckpt_" + std::to_string(Rng(std::random_device{}())()));
    {
        std::ofstream f(path, std::ios::binary);
        f << "garbage bytes that are definitely not a checkpoint";
    }
    CHECK_THROWS_AS(models::load_checkpoint(path), CheckpointMismatch);
    fs::remove(path);
    CHECK_THROWS_AS(models::load_checkpoint(path), UnreadableFile);
}

TEST_CASE("identity-shortcut block equals plain block plus input") {
    // single stage-3 style same-width block comparison through the full net
    // is covered above; here check the arithmetic on one block directly
    Rng rng_a(31), rng_b(31);
    models::detail::ConvBlock with(6, 6, true, true, rng_a, "b", 1);
    models::detail::ConvBlock without(6, 6, false, true, rng_b, "b", 1);
    // same seeds -> same conv/bn weights; identity shortcut has no params

    Rng rng(32);
    const Tensor x = normal_tensor<float>({1, 6, 8, 8}, 0.0f, 1.0f, rng);
    const Tensor ya = with.forward(x, false, false);

    // recompute relu(bn(conv(x)) + x) by hand from the plain block's layers
    Tensor pre = without.conv.forward(x, false);
    pre = without.bn->forward(pre, false, false);
    pre += x;
    for (std::int64_t i = 0; i < pre.numel(); ++i) pre[i] = std::max(0.0f, pre[i]);
    for (std::int64_t i = 0; i < ya.numel(); ++i) REQUIRE(ya[i] == pre[i]);
}
