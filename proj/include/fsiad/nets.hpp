#pragma once

#include "fsiad/rng.hpp"
#include "fsiad/types.hpp"

#include <torch/torch.h>

#include <vector>

namespace fsiad {

// Stage output shapes (batch dimension dropped), filled when a trace is requested.
using ShapeTrace = std::vector<std::vector<std::int64_t>>;

struct NetConfig {
    std::int64_t resolution = kCanonicalResolution;
    std::int64_t width_div = 1;

    std::int64_t channels(std::int64_t canonical) const { return std::max<std::int64_t>(1, canonical / width_div); }
    // Stride-2 stages needed to reach a 4x4 bottleneck: 5 at 128, 4 at 64, 3 at 32.
    std::int64_t down_stages() const;
};

// Convolution + instance normalization + LeakyReLU(0.2).
struct ConvInBlockImpl : torch::nn::Module {
    ConvInBlockImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride, std::int64_t pad);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv{nullptr};
    torch::nn::InstanceNorm2d norm{nullptr};
};
TORCH_MODULE(ConvInBlock);

// Attribute encoder: 5x5 stem, stride-2 stages down to 4x4, then mean and log-variance heads.
class AttributeEncoderImpl : public torch::nn::Module {
public:
    explicit AttributeEncoderImpl(NetConfig cfg);
    GaussianPosterior forward(const torch::Tensor& images, ShapeTrace* trace = nullptr);
    const NetConfig& config() const { return cfg_; }

private:
    NetConfig cfg_;
    torch::nn::Sequential stages_{nullptr};
    torch::nn::Linear mu_head_{nullptr};
    torch::nn::Linear logvar_head_{nullptr};
};
TORCH_MODULE(AttributeEncoder);

// Instance-normalizes x per sample and channel, then applies per-channel scale and shift
// (each B x C): y = scale * (x - mean) / (std + 1e-5) + shift.
torch::Tensor adain(const torch::Tensor& x, const torch::Tensor& scale, const torch::Tensor& shift);

// conv3x3 + IN + LeakyReLU + conv3x3 + IN, added to the input.
struct GenResBlockImpl : torch::nn::Module {
    explicit GenResBlockImpl(std::int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::InstanceNorm2d norm1{nullptr}, norm2{nullptr};
};
TORCH_MODULE(GenResBlock);

// Generator: FC from [z_id, z_attr] to C x 4 x 4, upsampling stages of transposed conv +
// AdaIN (styled by z_attr) + LeakyReLU + residual block, two 3x3 convolutions, tanh.
class GeneratorImpl : public torch::nn::Module {
public:
    explicit GeneratorImpl(NetConfig cfg);
    torch::Tensor forward(const torch::Tensor& z_id, const torch::Tensor& z_attr, ShapeTrace* trace = nullptr);

    // AdaIN of stage `layer`, with (scale, shift) predicted from `style` by that stage's affine map.
    torch::Tensor styled(const torch::Tensor& x, const torch::Tensor& style, std::size_t layer);
    std::size_t stage_count() const { return up_.size(); }
    const NetConfig& config() const { return cfg_; }

private:
    NetConfig cfg_;
    std::int64_t base_channels_;
    torch::nn::Linear fc_{nullptr};
    std::vector<torch::nn::ConvTranspose2d> up_;
    std::vector<torch::nn::Linear> style_maps_;
    std::vector<GenResBlock> res_;
    torch::nn::Conv2d refine_{nullptr};
    torch::nn::Conv2d to_rgb_{nullptr};
};
TORCH_MODULE(Generator);

// Convolution + batch normalization (batch statistics only) + ReLU.
struct ConvBnBlockImpl : torch::nn::Module {
    ConvBnBlockImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride, std::int64_t pad);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv{nullptr};
    torch::nn::BatchNorm2d norm{nullptr};
};
TORCH_MODULE(ConvBnBlock);

struct DiscResBlockImpl : torch::nn::Module {
    explicit DiscResBlockImpl(std::int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

    ConvBnBlock a{nullptr}, b{nullptr};
};
TORCH_MODULE(DiscResBlock);

// Discriminator: reflection pad + 7x7 stem, stride-2 stages, three residual blocks,
// global average pool, linear map to one logit, sigmoid.
class DiscriminatorImpl : public torch::nn::Module {
public:
    explicit DiscriminatorImpl(NetConfig cfg);
    torch::Tensor forward(const torch::Tensor& images, ShapeTrace* trace = nullptr);  // B probabilities
    const NetConfig& config() const { return cfg_; }

private:
    NetConfig cfg_;
    ConvBnBlock stem_{nullptr};
    torch::nn::Sequential down_{nullptr};
    torch::nn::Sequential res_{nullptr};
    torch::nn::Linear project_{nullptr};
};
TORCH_MODULE(Discriminator);

struct Recognition {
    torch::Tensor features;   // B x 256, before normalization
    torch::Tensor embedding;  // B x 256, unit rows
    torch::Tensor logits;     // B x n_classes
};

// Small recognizer used both as the frozen identity encoder and as the HFR network.
class RecognizerImpl : public torch::nn::Module {
public:
    RecognizerImpl(NetConfig cfg, std::int64_t n_classes);
    Recognition forward(const torch::Tensor& images);
    std::int64_t n_classes() const { return n_classes_; }
    const NetConfig& config() const { return cfg_; }

private:
    NetConfig cfg_;
    std::int64_t n_classes_;
    torch::nn::Sequential backbone_{nullptr};
    torch::nn::Linear embed_{nullptr};
    torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(Recognizer);

// Deterministic initialization from `rng`: weights of rank >= 2 ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
// normalization scales = 1, every bias = 0.
void initialize_parameters(torch::nn::Module& module, Rng& rng);

// Averages two unit embeddings with weight 1/2 each and re-normalizes the result.
torch::Tensor combine_identity(const torch::Tensor& e_n, const torch::Tensor& e_v);

// z_id from a source pair; both batches must have the same size.
LatentCode encode_identity(Recognizer& recognizer, const ImageBatch& i_n, const ImageBatch& i_v);

// z = mu + sigma * eps.
torch::Tensor reparameterize(const GaussianPosterior& posterior, const torch::Tensor& eps);
// Draws eps ~ N(0, I) from `rng`.
LatentCode reparameterize(const GaussianPosterior& posterior, Rng& rng);

torch::Tensor standard_normal(Rng& rng, at::IntArrayRef sizes, torch::ScalarType dtype = torch::kFloat32);

// Forward passes with argument checks. Resolution or code-length mismatches throw.
GaussianPosterior encode_attributes(AttributeEncoder& encoder, const ImageBatch& images);
torch::Tensor generate(Generator& generator, const LatentCode& z_id, const LatentCode& z_attr);
torch::Tensor discriminate(Discriminator& discriminator, const ImageBatch& images);
Recognition recognize(Recognizer& recognizer, const ImageBatch& images);

// Sets requires_grad on every parameter of `module`.
void set_trainable(torch::nn::Module& module, bool trainable);

}  // namespace fsiad
