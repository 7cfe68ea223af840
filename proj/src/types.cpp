#include "fsiad/types.hpp"

namespace fsiad {

std::string_view domain_name(Domain d) { return d == Domain::N ? "N" : "V"; }

Domain parse_domain(std::string_view s) {
    if (s == "N") return Domain::N;
    if (s == "V") return Domain::V;
    throw std::invalid_argument("unknown domain '" + std::string(s) + "'");
}

bool valid_resolution(std::int64_t r) { return r == 32 || r == 64 || r == 128; }

ImageBatch::ImageBatch(torch::Tensor data, Domain domain) : data_(std::move(data)), domain_(domain) {
    if (data_.dim() != 4 || data_.size(0) < 1 || data_.size(1) != 3 || data_.size(2) != data_.size(3))
        throw std::invalid_argument("ImageBatch: expected shape B x 3 x R x R");
    if (!valid_resolution(data_.size(2)))
        throw std::invalid_argument("ImageBatch: resolution must be 32, 64 or 128, got " +
                                    std::to_string(data_.size(2)));
    auto d = data_.detach();
    if (!torch::isfinite(d).all().item<bool>() || d.min().item<double>() < -1.0 || d.max().item<double>() > 1.0)
        throw std::invalid_argument("ImageBatch: values must lie in [-1, 1]");
}

LatentCode::LatentCode(torch::Tensor values, CodeKind kind) : values_(std::move(values)), kind_(kind) {
    if (values_.dim() != 2 || values_.size(1) != kCodeDim)
        throw std::invalid_argument("LatentCode: expected B x 256");
    if (kind_ == CodeKind::Identity) {
        auto norms = values_.detach().to(torch::kFloat64).norm(2, 1);
        if ((norms - 1.0).abs().max().item<double>() > 1e-5)
            throw std::invalid_argument("LatentCode: identity codes must be unit length");
    }
}

GaussianPosterior GaussianPosterior::from_sigma(torch::Tensor mu, const torch::Tensor& sigma) {
    if (!mu.sizes().equals(sigma.sizes())) throw std::invalid_argument("GaussianPosterior: mu/sigma shape mismatch");
    if ((sigma.detach() <= 0).any().item<bool>())
        throw std::invalid_argument("GaussianPosterior: sigma must be strictly positive");
    return {std::move(mu), 2.0 * torch::log(sigma)};
}

}  // namespace fsiad
