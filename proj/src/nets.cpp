#include "fsiad/nets.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace fsiad {

namespace nn = torch::nn;

namespace {

constexpr double kLeakySlope = 0.2;
constexpr std::array<std::int64_t, 5> kEncoderDown{64, 128, 256, 512, 512};
constexpr std::array<std::int64_t, 5> kGeneratorUp{256, 128, 64, 32, 32};
constexpr std::array<std::int64_t, 2> kDiscriminatorDown{128, 256};
constexpr std::array<std::int64_t, 4> kRecognizerStages{32, 64, 128, 256};

void record(ShapeTrace* trace, const torch::Tensor& t) {
    if (!trace) return;
    auto sizes = t.sizes().vec();
    sizes.erase(sizes.begin());
    trace->push_back(std::move(sizes));
}

torch::Tensor leaky(const torch::Tensor& x) { return torch::leaky_relu(x, kLeakySlope); }

nn::InstanceNorm2d instance_norm(std::int64_t channels) {
    return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).affine(true).eps(1e-5));
}

void check_images(const torch::Tensor& x, std::int64_t resolution, const char* who) {
    if (x.dim() != 4 || x.size(1) != 3)
        throw std::invalid_argument(std::string(who) + ": expected B x 3 x R x R images");
    if (x.size(2) != resolution || x.size(3) != resolution)
        throw std::invalid_argument(std::string(who) + ": configured for " + std::to_string(resolution) +
                                    "x" + std::to_string(resolution) + " images, got " + std::to_string(x.size(2)) +
                                    "x" + std::to_string(x.size(3)));
}

}  // namespace

std::int64_t NetConfig::down_stages() const {
    switch (resolution) {
        case 128: return 5;
        case 64: return 4;
        case 32: return 3;
        default: throw std::invalid_argument("unsupported resolution " + std::to_string(resolution));
    }
}

ConvInBlockImpl::ConvInBlockImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride,
                                 std::int64_t pad) {
    conv = register_module("conv", nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(pad)));
    norm = register_module("norm", instance_norm(out));
}

torch::Tensor ConvInBlockImpl::forward(const torch::Tensor& x) { return leaky(norm(conv(x))); }

AttributeEncoderImpl::AttributeEncoderImpl(NetConfig cfg) : cfg_(cfg) {
    stages_ = nn::Sequential();
    std::int64_t ch = cfg_.channels(32);
    stages_->push_back(ConvInBlock(3, ch, 5, 1, 2));
    for (std::int64_t i = 0; i < cfg_.down_stages(); ++i) {
        const auto out = cfg_.channels(kEncoderDown[i]);
        stages_->push_back(ConvInBlock(ch, out, 3, 2, 1));
        ch = out;
    }
    register_module("stages", stages_);
    mu_head_ = register_module("mu_head", nn::Linear(ch * 16, kCodeDim));
    logvar_head_ = register_module("logvar_head", nn::Linear(ch * 16, kCodeDim));
}

GaussianPosterior AttributeEncoderImpl::forward(const torch::Tensor& images, ShapeTrace* trace) {
    check_images(images, cfg_.resolution, "attribute encoder");
    auto x = images;
    for (auto& stage : *stages_) {
        x = stage.forward(x);
        record(trace, x);
    }
    x = x.flatten(1);
    GaussianPosterior post{mu_head_(x), logvar_head_(x)};
    record(trace, post.mu);
    record(trace, post.logvar);
    return post;
}

torch::Tensor adain(const torch::Tensor& x, const torch::Tensor& scale, const torch::Tensor& shift) {
    if (x.dim() != 4) throw std::invalid_argument("adain: expected a B x C x H x W feature map");
    if (scale.dim() != 2 || shift.dim() != 2 || scale.size(1) != x.size(1) || shift.size(1) != x.size(1))
        throw std::invalid_argument("adain: style has " + std::to_string(scale.size(-1)) + " channels, feature map has " +
                                    std::to_string(x.size(1)));
    const auto mean = x.mean({2, 3}, true);
    const auto centred = x - mean;
    // The 1e-12 inside the root keeps the gradient finite for constant channels.
    const auto std = torch::sqrt(centred.pow(2).mean({2, 3}, true) + 1e-12);
    return scale.unsqueeze(-1).unsqueeze(-1) * centred / (std + 1e-5) + shift.unsqueeze(-1).unsqueeze(-1);
}

GenResBlockImpl::GenResBlockImpl(std::int64_t channels) {
    conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
    norm1 = register_module("norm1", instance_norm(channels));
    conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
    norm2 = register_module("norm2", instance_norm(channels));
}

torch::Tensor GenResBlockImpl::forward(const torch::Tensor& x) {
    return x + norm2(conv2(leaky(norm1(conv1(x)))));
}

GeneratorImpl::GeneratorImpl(NetConfig cfg) : cfg_(cfg) {
    base_channels_ = cfg_.channels(512);
    fc_ = register_module("fc", nn::Linear(2 * kCodeDim, base_channels_ * 16));
    std::int64_t ch = base_channels_;
    for (std::int64_t i = 0; i < cfg_.down_stages(); ++i) {
        const auto out = cfg_.channels(kGeneratorUp[i]);
        const auto tag = std::to_string(i);
        up_.push_back(register_module("up" + tag,
                                      nn::ConvTranspose2d(nn::ConvTranspose2dOptions(ch, out, 4).stride(2).padding(1))));
        style_maps_.push_back(register_module("style" + tag, nn::Linear(kCodeDim, 2 * out)));
        res_.push_back(register_module("res" + tag, GenResBlock(out)));
        ch = out;
    }
    // No normalization here: it would discard the per-image colour statistics set by the last AdaIN.
    refine_ = register_module("refine", nn::Conv2d(nn::Conv2dOptions(ch, cfg_.channels(32), 3).padding(1)));
    to_rgb_ = register_module("to_rgb", nn::Conv2d(nn::Conv2dOptions(cfg_.channels(32), 3, 3).padding(1)));
}

torch::Tensor GeneratorImpl::styled(const torch::Tensor& x, const torch::Tensor& style, std::size_t layer) {
    if (layer >= style_maps_.size()) throw std::out_of_range("generator has no AdaIN layer " + std::to_string(layer));
    const auto channels = style_maps_[layer]->options.out_features() / 2;
    if (x.size(1) != channels)
        throw std::invalid_argument("AdaIN layer " + std::to_string(layer) + " expects " + std::to_string(channels) +
                                    " channels, got " + std::to_string(x.size(1)));
    const auto params = style_maps_[layer](style);
    // Scale is predicted as an offset from 1 so an untrained map leaves features normalized.
    return adain(x, 1.0 + params.narrow(1, 0, channels), params.narrow(1, channels, channels));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& z_id, const torch::Tensor& z_attr, ShapeTrace* trace) {
    if (z_id.dim() != 2 || z_attr.dim() != 2 || z_id.size(1) != kCodeDim || z_attr.size(1) != kCodeDim)
        throw std::invalid_argument("generator: codes must be B x 256");
    if (z_id.size(0) != z_attr.size(0)) throw std::invalid_argument("generator: code batch sizes differ");
    auto x = fc_(torch::cat({z_id, z_attr}, 1));
    record(trace, x);
    x = x.view({-1, base_channels_, 4, 4});
    for (std::size_t i = 0; i < up_.size(); ++i) {
        x = res_[i](leaky(styled(up_[i](x), z_attr, i)));
        record(trace, x);
    }
    x = leaky(refine_(x));
    record(trace, x);
    x = to_rgb_(x);
    record(trace, x);
    x = torch::tanh(x);
    record(trace, x);
    return x;
}

ConvBnBlockImpl::ConvBnBlockImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride,
                                 std::int64_t pad) {
    conv = register_module("conv", nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(pad)));
    norm = register_module("norm", nn::BatchNorm2d(nn::BatchNorm2dOptions(out).track_running_stats(false)));
}

torch::Tensor ConvBnBlockImpl::forward(const torch::Tensor& x) { return torch::relu(norm(conv(x))); }

DiscResBlockImpl::DiscResBlockImpl(std::int64_t channels) {
    a = register_module("a", ConvBnBlock(channels, channels, 3, 1, 0));
    b = register_module("b", ConvBnBlock(channels, channels, 3, 1, 0));
}

torch::Tensor DiscResBlockImpl::forward(const torch::Tensor& x) {
    namespace F = torch::nn::functional;
    const auto pad = F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReflect);
    auto tau = a(F::pad(x, pad));
    tau = b(F::pad(tau, pad));
    return x + tau;
}

DiscriminatorImpl::DiscriminatorImpl(NetConfig cfg) : cfg_(cfg) {
    std::int64_t ch = cfg_.channels(64);
    stem_ = register_module("stem", ConvBnBlock(3, ch, 7, 1, 0));
    down_ = nn::Sequential();
    // Two stride-2 stages at 128, one at 64, none at 32.
    const std::int64_t n_down = std::max<std::int64_t>(0, cfg_.down_stages() - 3);
    for (std::int64_t i = 0; i < n_down; ++i) {
        const auto out = cfg_.channels(kDiscriminatorDown[i]);
        down_->push_back(ConvBnBlock(ch, out, 3, 2, 1));
        ch = out;
    }
    register_module("down", down_);
    res_ = nn::Sequential(DiscResBlock(ch), DiscResBlock(ch), DiscResBlock(ch));
    register_module("res", res_);
    project_ = register_module("project", nn::Linear(ch, 1));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& images, ShapeTrace* trace) {
    namespace F = torch::nn::functional;
    check_images(images, cfg_.resolution, "discriminator");
    auto x = F::pad(images, F::PadFuncOptions({3, 3, 3, 3}).mode(torch::kReflect));
    record(trace, x);
    x = stem_(x);
    record(trace, x);
    for (auto& stage : *down_) {
        x = stage.forward(x);
        record(trace, x);
    }
    for (auto& block : *res_) {
        x = block.forward(x);
        record(trace, x);
    }
    auto y = torch::sigmoid(project_(x.mean({2, 3}))).squeeze(1);
    if (trace) trace->push_back({1});
    return y;
}

RecognizerImpl::RecognizerImpl(NetConfig cfg, std::int64_t n_classes) : cfg_(cfg), n_classes_(n_classes) {
    if (n_classes < 1) throw std::invalid_argument("recognizer needs at least one class");
    backbone_ = nn::Sequential();
    std::int64_t ch = 3;
    for (auto c : kRecognizerStages) {
        const auto out = cfg_.channels(c);
        backbone_->push_back(ConvInBlock(ch, out, 3, 2, 1));
        ch = out;
    }
    register_module("backbone", backbone_);
    embed_ = register_module("embed", nn::Linear(ch, kCodeDim));
    head_ = register_module("head", nn::Linear(kCodeDim, n_classes));
}

Recognition RecognizerImpl::forward(const torch::Tensor& images) {
    check_images(images, cfg_.resolution, "recognizer");
    auto features = embed_(backbone_->forward(images).mean({2, 3}));
    auto embedding = torch::nn::functional::normalize(features, torch::nn::functional::NormalizeFuncOptions().dim(1));
    auto logits = head_(features);
    return {features, embedding, logits};
}

void initialize_parameters(torch::nn::Module& module, Rng& rng) {
    torch::NoGradGuard guard;
    for (auto& p : module.named_parameters(true)) {
        auto& t = p.value();
        const auto& name = p.key();
        const bool is_bias = name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0;
        if (is_bias) {
            t.zero_();
        } else if (t.dim() == 1) {
            t.fill_(1.0);
        } else {
            const auto fan_in = t.numel() / t.size(0);
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            std::vector<double> values(static_cast<std::size_t>(t.numel()));
            for (auto& v : values) v = rng.uniform(-bound, bound);
            t.copy_(torch::tensor(values, torch::kFloat64).view(t.sizes()).to(t.scalar_type()));
        }
    }
}

torch::Tensor combine_identity(const torch::Tensor& e_n, const torch::Tensor& e_v) {
    namespace F = torch::nn::functional;
    const auto opts = F::NormalizeFuncOptions().dim(1);
    return F::normalize(0.5 * F::normalize(e_n, opts) + 0.5 * F::normalize(e_v, opts), opts);
}

LatentCode encode_identity(Recognizer& recognizer, const ImageBatch& i_n, const ImageBatch& i_v) {
    if (i_n.batch() != i_v.batch())
        throw std::invalid_argument("encode_identity: N batch has " + std::to_string(i_n.batch()) +
                                    " rows, V batch has " + std::to_string(i_v.batch()));
    const auto e_n = recognizer->forward(i_n.data()).embedding;
    const auto e_v = recognizer->forward(i_v.data()).embedding;
    return LatentCode(combine_identity(e_n, e_v), CodeKind::Identity);
}

torch::Tensor reparameterize(const GaussianPosterior& posterior, const torch::Tensor& eps) {
    return posterior.mu + posterior.sigma() * eps;
}

torch::Tensor standard_normal(Rng& rng, at::IntArrayRef sizes, torch::ScalarType dtype) {
    std::int64_t n = 1;
    for (auto s : sizes) n *= s;
    std::vector<double> values(static_cast<std::size_t>(n));
    for (auto& v : values) v = rng.normal();
    return torch::tensor(values, torch::kFloat64).view(sizes).to(dtype);
}

LatentCode reparameterize(const GaussianPosterior& posterior, Rng& rng) {
    const auto eps = standard_normal(rng, posterior.mu.sizes(), posterior.mu.scalar_type());
    return LatentCode(reparameterize(posterior, eps), CodeKind::Attribute);
}

GaussianPosterior encode_attributes(AttributeEncoder& encoder, const ImageBatch& images) {
    return encoder->forward(images.data());
}

torch::Tensor generate(Generator& generator, const LatentCode& z_id, const LatentCode& z_attr) {
    return generator->forward(z_id.values(), z_attr.values());
}

torch::Tensor discriminate(Discriminator& discriminator, const ImageBatch& images) {
    return discriminator->forward(images.data());
}

Recognition recognize(Recognizer& recognizer, const ImageBatch& images) {
    return recognizer->forward(images.data());
}

void set_trainable(torch::nn::Module& module, bool trainable) {
    for (auto& p : module.parameters(true)) p.set_requires_grad(trainable);
}

}  // namespace fsiad
