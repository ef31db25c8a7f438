#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "strokeseg/nn.hpp"
#include "strokeseg/tensor.hpp"

namespace strokeseg::models {

namespace fs = std::filesystem;

/// Encoder width schedule follows the VGG11 conv layout: stages of
/// [1,1,2,2,2] conv blocks with 2x2 index-keeping max pooling after each
/// stage (5 poolings total, so inputs must be multiples of 32).
struct SegmenterConfig {
    int in_channels = 3;
    int num_classes = 3;
    std::vector<int> encoder_widths{64, 128, 256, 256, 512, 512, 512, 512};
    bool residual = true;
    bool batch_norm = true;

    void validate() const;
    bool operator==(const SegmenterConfig&) const = default;
};

struct DiscriminatorConfig {
    int in_channels = 4;  // 4 for the core/penumbra heads, 5 for the pair head
    int base_width = 64;
    int num_downsamples = 4;

    void validate() const;
    bool operator==(const DiscriminatorConfig&) const = default;
};

namespace detail {

/// conv3x3 -> [BN] -> (+ shortcut) -> ReLU. The shortcut is identity when
/// channels match, a 1x1 projection otherwise; only built when `residual`.
/// Tensor names: {base}.conv{j}.*, {base}.bn{j}.*, {base}.res{j}.*.
struct ConvBlock {
    ConvBlock(int in_ch, int out_ch, bool residual, bool batch_norm, Rng& rng,
              const std::string& base, int j);

    Tensor forward(const Tensor& x, bool train, bool cache);
    Tensor backward(const Tensor& gy, bool param_grads);
    void collect(nn::ParamGroup<float>& g);
    void named_tensors(std::vector<std::pair<std::string, Tensor*>>& out);

    std::string bn_name;
    bool residual = false;
    nn::Conv2d conv;
    std::unique_ptr<nn::BatchNorm2d> bn;
    std::unique_ptr<nn::Conv2d> projection;  // nullptr -> identity shortcut
    nn::ReLU relu;
};

}  // namespace detail

/// Residual encoder-decoder segmenter: VGG11 encoder with max pooling that
/// keeps argmax indices, decoder that unpools through those indices and
/// concatenates the mirrored encoder feature before each conv stage.
class Segmenter {
public:
    Segmenter(const SegmenterConfig& cfg, std::uint64_t seed);

    /// (B,in,H,W) -> (B,classes,H,W); H,W must be multiples of 32.
    Tensor forward(const Tensor& x, bool train, bool cache);

    /// Propagates d(loss)/d(logits); returns d(loss)/d(input).
    Tensor backward(const Tensor& glogits, bool param_grads = true);

    nn::ParamGroup<float> params();
    std::vector<std::pair<std::string, Tensor*>> named_tensors();
    const SegmenterConfig& config() const { return cfg_; }

private:
    SegmenterConfig cfg_;
    std::vector<std::vector<detail::ConvBlock>> enc_stages_;
    std::vector<nn::MaxPool2d> pools_;
    std::vector<nn::MaxUnpool2d> unpools_;
    std::vector<std::vector<detail::ConvBlock>> dec_stages_;
    std::unique_ptr<nn::Conv2d> head_;
};

/// PatchGAN-style critic: strided 4x4 convs (BN except the first layer,
/// leaky ReLU 0.2), width doubling per stage, global average pooling and
/// a linear head producing one pre-sigmoid score per sample.
class Discriminator {
public:
    Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed, std::string name);

    /// (B,in,H,W) -> (B,1) scores.
    Tensor forward(const Tensor& x, bool train, bool cache);

    /// gscores (B,1) -> d(loss)/d(input). `param_grads=false` severs the
    /// parameter accumulation (generator pass).
    Tensor backward(const Tensor& gscores, bool param_grads);

    nn::ParamGroup<float> params();
    std::vector<std::pair<std::string, Tensor*>> named_tensors();
    const DiscriminatorConfig& config() const { return cfg_; }
    const std::string& name() const { return name_; }

private:
    DiscriminatorConfig cfg_;
    std::string name_;
    std::vector<nn::Conv2d> convs_;
    std::vector<std::unique_ptr<nn::BatchNorm2d>> bns_;  // bns_[0] == nullptr
    std::vector<nn::LeakyReLU> acts_;
    nn::GlobalAvgPool gap_;
    std::unique_ptr<nn::Linear> fc_;
};

/// (real, fake) conditioning pairs for the three heads. Each pair is the
/// three input sequences concatenated with ground-truth one-hot channels
/// (real) or softmax probabilities (fake): core -> channel 2, penumbra ->
/// channel 1, pair -> channels 1..2.
struct AdversaryInputs {
    Tensor core_real, core_fake;
    Tensor pen_real, pen_fake;
    Tensor pair_real, pair_fake;
};

AdversaryInputs discriminator_inputs(const Tensor& probs, const Tensor& labels_onehot,
                                     const Tensor& inputs);

// ---------------------------------------------------------------------------
// Checkpoints: one archive with named float32 arrays + JSON-serialized
// configs. Tensor names follow encoder.block{i}.conv{j}.*, decoder.block{i}.*,
// disc.{core|pen|pair}.*.
// ---------------------------------------------------------------------------

struct Checkpoint {
    SegmenterConfig segmenter_config;
    std::unique_ptr<Segmenter> segmenter;
    std::vector<std::unique_ptr<Discriminator>> discriminators;  // may be empty
    std::string meta_json;                                       // caller-defined metadata
};

void save_checkpoint(const fs::path& path, Segmenter& segmenter,
                     const std::vector<Discriminator*>& discriminators,
                     const std::string& meta_json);

Checkpoint load_checkpoint(const fs::path& path, bool want_discriminators = false);

}  // namespace strokeseg::models
