#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fsiad {

inline constexpr std::int64_t kCodeDim = 256;
inline constexpr std::int64_t kCanonicalResolution = 128;

enum class Domain { N, V };

std::string_view domain_name(Domain d);
Domain parse_domain(std::string_view s);

bool valid_resolution(std::int64_t r);

// Images in [-1, 1], shape B x 3 x H x W, all rows from one capture domain.
class ImageBatch {
public:
    ImageBatch() = default;
    // Throws std::invalid_argument if the shape or value range is violated.
    ImageBatch(torch::Tensor data, Domain domain);

    const torch::Tensor& data() const { return data_; }
    Domain domain() const { return domain_; }
    std::int64_t batch() const { return data_.size(0); }
    std::int64_t resolution() const { return data_.size(2); }

private:
    torch::Tensor data_;
    Domain domain_ = Domain::V;
};

enum class CodeKind { Identity, Attribute };

// Rows of 256-d codes. Identity codes are unit length.
class LatentCode {
public:
    LatentCode() = default;
    LatentCode(torch::Tensor values, CodeKind kind);

    const torch::Tensor& values() const { return values_; }
    CodeKind kind() const { return kind_; }

private:
    torch::Tensor values_;
    CodeKind kind_ = CodeKind::Attribute;
};

// Diagonal Gaussian q(z | x). The encoder head emits log-variance; sigma is derived.
struct GaussianPosterior {
    torch::Tensor mu;
    torch::Tensor logvar;

    torch::Tensor sigma() const { return torch::exp(0.5 * logvar); }

    static GaussianPosterior from_sigma(torch::Tensor mu, const torch::Tensor& sigma);
};

}  // namespace fsiad
