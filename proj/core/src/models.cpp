#include "strokeseg/models.hpp"

#include <algorithm>

namespace strokeseg::models {

void SegmenterConfig::validate() const {
    if (encoder_widths.size() != 8)
        throw InvalidConfig("SegmenterConfig: encoder_widths must have 8 entries (VGG11 layout)");
    for (int w : encoder_widths)
        if (w <= 0) throw InvalidConfig("SegmenterConfig: widths must be positive");
    if (in_channels <= 0) throw InvalidConfig("SegmenterConfig: in_channels must be positive");
    if (num_classes < 2) throw InvalidConfig("SegmenterConfig: num_classes must be >= 2");
}

void DiscriminatorConfig::validate() const {
    if (in_channels <= 0) throw InvalidConfig("DiscriminatorConfig: in_channels must be positive");
    if (base_width <= 0) throw InvalidConfig("DiscriminatorConfig: base_width must be positive");
    if (num_downsamples < 1 || num_downsamples > 8)
        throw InvalidConfig("DiscriminatorConfig: num_downsamples out of range");
}

// ---------------------------------------------------------------------------
// ConvBlock
// ---------------------------------------------------------------------------

namespace detail {

ConvBlock::ConvBlock(int in_ch, int out_ch, bool residual_on, bool batch_norm, Rng& rng,
                     const std::string& base, int j)
    : bn_name(base + ".bn" + std::to_string(j)),
      residual(residual_on),
      conv(in_ch, out_ch, 3, 1, 1, rng, base + ".conv" + std::to_string(j)) {
    if (batch_norm) bn = std::make_unique<nn::BatchNorm2d>(out_ch, bn_name);
    if (residual_on && in_ch != out_ch)
        projection = std::make_unique<nn::Conv2d>(in_ch, out_ch, 1, 1, 0, rng,
                                                  base + ".res" + std::to_string(j));
}

Tensor ConvBlock::forward(const Tensor& x, bool train, bool cache) {
    Tensor main = conv.forward(x, cache);
    if (bn) main = bn->forward(main, train, cache);
    if (residual) {
        if (projection)
            main += projection->forward(x, cache);
        else
            main += x;
    }
    return relu.forward(main, cache);
}

Tensor ConvBlock::backward(const Tensor& gy, bool param_grads) {
    Tensor gpre = relu.backward(gy);
    Tensor gx = conv.backward(bn ? bn->backward(gpre, param_grads) : gpre, param_grads);
    if (residual) {
        if (projection)
            gx += projection->backward(gpre, param_grads);
        else
            gx += gpre;
    }
    return gx;
}

void ConvBlock::collect(nn::ParamGroup<float>& g) {
    conv.collect(g);
    if (bn) bn->collect(g);
    if (projection) projection->collect(g);
}

void ConvBlock::named_tensors(std::vector<std::pair<std::string, Tensor*>>& out) {
    out.emplace_back(conv.weight().name, &conv.weight().value);
    out.emplace_back(conv.bias().name, &conv.bias().value);
    if (bn) {
        out.emplace_back(bn->gamma().name, &bn->gamma().value);
        out.emplace_back(bn->beta().name, &bn->beta().value);
        out.emplace_back(bn_name + ".running_mean", &bn->running_mean());
        out.emplace_back(bn_name + ".running_var", &bn->running_var());
    }
    if (projection) {
        out.emplace_back(projection->weight().name, &projection->weight().value);
        out.emplace_back(projection->bias().name, &projection->bias().value);
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Segmenter
// ---------------------------------------------------------------------------

namespace {

// VGG11 conv layout: number of conv blocks per pooling stage
constexpr std::array<int, 5> kStageBlocks{1, 1, 2, 2, 2};

struct StageWidths {
    std::array<int, 5> out;       // encoder feature channels per stage
    std::vector<std::vector<int>> enc;  // per stage, per block out-widths
};

StageWidths stage_widths(const std::vector<int>& widths) {
    StageWidths s;
    s.enc.resize(5);
    size_t idx = 0;
    for (int st = 0; st < 5; ++st) {
        for (int b = 0; b < kStageBlocks[st]; ++b) s.enc[st].push_back(widths[idx++]);
        s.out[st] = s.enc[st].back();
    }
    return s;
}

}  // namespace

Segmenter::Segmenter(const SegmenterConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const StageWidths sw = stage_widths(cfg_.encoder_widths);

    enc_stages_.resize(5);
    pools_.resize(5);
    unpools_.resize(5);
    dec_stages_.resize(5);

    int in_ch = cfg_.in_channels;
    for (int st = 0; st < 5; ++st) {
        for (size_t b = 0; b < sw.enc[st].size(); ++b) {
            enc_stages_[st].emplace_back(in_ch, sw.enc[st][b], cfg_.residual, cfg_.batch_norm, rng,
                                         "encoder.block" + std::to_string(st + 1),
                                         static_cast<int>(b + 1));
            in_ch = sw.enc[st][b];
        }
    }

    // decoder: deepest stage first; concat doubles the input channels
    const std::array<int, 5> f = sw.out;  // f[0..4] = encoder stage channels
    auto add_dec = [&](int st, std::vector<std::pair<int, int>> convs) {
        int b = 1;
        for (auto [ci, co] : convs) {
            dec_stages_[st].emplace_back(ci, co, /*residual=*/false, cfg_.batch_norm, rng,
                                         "decoder.block" + std::to_string(st + 1), b++);
        }
    };
    add_dec(4, {{2 * f[4], f[4]}, {f[4], f[3]}});
    add_dec(3, {{2 * f[3], f[3]}, {f[3], f[2]}});
    add_dec(2, {{2 * f[2], f[2]}, {f[2], f[1]}});
    add_dec(1, {{2 * f[1], f[0]}});
    add_dec(0, {{2 * f[0], f[0]}});

    head_ = std::make_unique<nn::Conv2d>(f[0], cfg_.num_classes, 1, 1, 0, rng, "head.conv");
}

Tensor Segmenter::forward(const Tensor& x, bool train, bool cache) {
    if (x.rank() != 4 || x.dim(1) != cfg_.in_channels)
        throw ShapeError("Segmenter: expected (B," + std::to_string(cfg_.in_channels) +
                         ",H,W), got " + Tensor::shape_str(x.shape()));
    if (x.dim(2) % 32 != 0 || x.dim(3) % 32 != 0)
        throw ShapeError("Segmenter: H and W must be multiples of 32, got " +
                         Tensor::shape_str(x.shape()));
    if (!x.all_finite()) throw ShapeError("Segmenter: non-finite input");

    Tensor cur = x;
    std::array<Tensor, 5> skips;
    std::array<IntTensor, 5> indices;
    std::array<std::pair<int, int>, 5> sizes;

    for (int st = 0; st < 5; ++st) {
        for (auto& blk : enc_stages_[st]) cur = blk.forward(cur, train, cache);
        skips[st] = cur;
        sizes[st] = {cur.dim(2), cur.dim(3)};
        nn::PoolOut<float> p = pools_[st].forward(cur, cache);
        indices[st] = std::move(p.indices);
        cur = std::move(p.values);
    }

    for (int st = 4; st >= 0; --st) {
        Tensor up = unpools_[st].forward(cur, indices[st], sizes[st].first, sizes[st].second,
                                         cache);
        cur = nn::concat_channels(up, skips[st]);
        for (auto& blk : dec_stages_[st]) cur = blk.forward(cur, train, cache);
    }
    return head_->forward(cur, cache);
}

Tensor Segmenter::backward(const Tensor& glogits, bool param_grads) {
    Tensor g = head_->backward(glogits, param_grads);

    std::array<Tensor, 5> skip_grads;
    for (int st = 0; st <= 4; ++st) {
        for (auto it = dec_stages_[st].rbegin(); it != dec_stages_[st].rend(); ++it)
            g = it->backward(g, param_grads);
        auto [gup, gskip] = nn::split_channels(g, g.dim(1) / 2);
        skip_grads[st] = std::move(gskip);
        g = unpools_[st].backward(gup);
    }

    for (int st = 4; st >= 0; --st) {
        Tensor ga = pools_[st].backward(g);
        ga += skip_grads[st];
        for (auto it = enc_stages_[st].rbegin(); it != enc_stages_[st].rend(); ++it)
            ga = it->backward(ga, param_grads);
        g = std::move(ga);
    }
    return g;
}

nn::ParamGroup<float> Segmenter::params() {
    nn::ParamGroup<float> g;
    for (auto& stage : enc_stages_)
        for (auto& blk : stage) blk.collect(g);
    for (int st = 4; st >= 0; --st)
        for (auto& blk : dec_stages_[st]) blk.collect(g);
    head_->collect(g);
    return g;
}

std::vector<std::pair<std::string, Tensor*>> Segmenter::named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& stage : enc_stages_)
        for (auto& blk : stage) blk.named_tensors(out);
    for (int st = 4; st >= 0; --st)
        for (auto& blk : dec_stages_[st]) blk.named_tensors(out);
    out.emplace_back(head_->weight().name, &head_->weight().value);
    out.emplace_back(head_->bias().name, &head_->bias().value);
    return out;
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

Discriminator::Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed, std::string name)
    : cfg_(cfg), name_(std::move(name)) {
    cfg_.validate();
    Rng rng(seed);
    int in_ch = cfg_.in_channels;
    for (int i = 0; i < cfg_.num_downsamples; ++i) {
        const int out_ch = cfg_.base_width << i;
        const std::string nm = "disc." + name_ + ".conv" + std::to_string(i + 1);
        convs_.emplace_back(in_ch, out_ch, 4, 2, 1, rng, nm);
        bns_.push_back(i == 0 ? nullptr
                              : std::make_unique<nn::BatchNorm2d>(
                                    out_ch, "disc." + name_ + ".bn" + std::to_string(i + 1)));
        acts_.emplace_back(0.2f);
        in_ch = out_ch;
    }
    fc_ = std::make_unique<nn::Linear>(in_ch, 1, rng, "disc." + name_ + ".fc");
}

Tensor Discriminator::forward(const Tensor& x, bool train, bool cache) {
    if (x.rank() != 4 || x.dim(1) != cfg_.in_channels)
        throw ShapeError("Discriminator " + name_ + ": expected (B," +
                         std::to_string(cfg_.in_channels) + ",H,W), got " +
                         Tensor::shape_str(x.shape()));
    const int min_size = 1 << cfg_.num_downsamples;
    if (x.dim(2) < min_size || x.dim(3) < min_size)
        throw ShapeError("Discriminator " + name_ + ": input smaller than " +
                         std::to_string(min_size));

    Tensor cur = x;
    for (size_t i = 0; i < convs_.size(); ++i) {
        cur = convs_[i].forward(cur, cache);
        if (bns_[i]) cur = bns_[i]->forward(cur, train, cache);
        cur = acts_[i].forward(cur, cache);
    }
    cur = gap_.forward(cur, cache);
    return fc_->forward(cur, cache);
}

Tensor Discriminator::backward(const Tensor& gscores, bool param_grads) {
    Tensor g = fc_->backward(gscores, param_grads);
    g = gap_.backward(g);
    for (size_t i = convs_.size(); i-- > 0;) {
        g = acts_[i].backward(g);
        if (bns_[i]) g = bns_[i]->backward(g, param_grads);
        g = convs_[i].backward(g, param_grads);
    }
    return g;
}

nn::ParamGroup<float> Discriminator::params() {
    nn::ParamGroup<float> g;
    for (size_t i = 0; i < convs_.size(); ++i) {
        convs_[i].collect(g);
        if (bns_[i]) bns_[i]->collect(g);
    }
    fc_->collect(g);
    return g;
}

std::vector<std::pair<std::string, Tensor*>> Discriminator::named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (size_t i = 0; i < convs_.size(); ++i) {
        out.emplace_back(convs_[i].weight().name, &convs_[i].weight().value);
        out.emplace_back(convs_[i].bias().name, &convs_[i].bias().value);
        if (bns_[i]) {
            out.emplace_back(bns_[i]->gamma().name, &bns_[i]->gamma().value);
            out.emplace_back(bns_[i]->beta().name, &bns_[i]->beta().value);
            out.emplace_back("disc." + name_ + ".bn" + std::to_string(i + 1) + ".running_mean",
                             &bns_[i]->running_mean());
            out.emplace_back("disc." + name_ + ".bn" + std::to_string(i + 1) + ".running_var",
                             &bns_[i]->running_var());
        }
    }
    out.emplace_back("disc." + name_ + ".fc.weight", &fc_->weight().value);
    out.emplace_back("disc." + name_ + ".fc.bias", &fc_->bias().value);
    return out;
}

// ---------------------------------------------------------------------------
// Adversary inputs
// ---------------------------------------------------------------------------

namespace {

Tensor slice_channels(const Tensor& t, int from, int to) {
    const int n = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
    if (from < 0 || to > c || from >= to) throw ShapeError("slice_channels: bad range");
    Tensor out({n, to - from, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int i = 0; i < n; ++i)
        std::copy(t.data() + (static_cast<std::int64_t>(i) * c + from) * plane,
                  t.data() + (static_cast<std::int64_t>(i) * c + to) * plane,
                  out.data() + static_cast<std::int64_t>(i) * (to - from) * plane);
    return out;
}

}  // namespace

AdversaryInputs discriminator_inputs(const Tensor& probs, const Tensor& labels_onehot,
                                     const Tensor& inputs) {
    if (probs.rank() != 4 || probs.dim(1) != 3)
        throw ShapeError("discriminator_inputs: probs must be (B,3,H,W)");
    if (!probs.same_shape(labels_onehot))
        throw ShapeError("discriminator_inputs: probs/onehot shape mismatch");
    if (inputs.rank() != 4 || inputs.dim(0) != probs.dim(0) || inputs.dim(2) != probs.dim(2) ||
        inputs.dim(3) != probs.dim(3))
        throw ShapeError("discriminator_inputs: inputs shape mismatch");

    AdversaryInputs out;
    out.core_fake = nn::concat_channels(inputs, slice_channels(probs, 2, 3));
    out.core_real = nn::concat_channels(inputs, slice_channels(labels_onehot, 2, 3));
    out.pen_fake = nn::concat_channels(inputs, slice_channels(probs, 1, 2));
    out.pen_real = nn::concat_channels(inputs, slice_channels(labels_onehot, 1, 2));
    out.pair_fake = nn::concat_channels(inputs, slice_channels(probs, 1, 3));
    out.pair_real = nn::concat_channels(inputs, slice_channels(labels_onehot, 1, 3));
    return out;
}

}  // namespace strokeseg::models
