#pragma once

#include <torch/torch.h>

#include <vector>

namespace fsiad {

// Adam with bias correction:
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2,
//   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps).
// Parameters whose gradient is undefined are left untouched for that step.
class Adam {
public:
    Adam(std::vector<torch::Tensor> params, double lr, double beta1, double beta2, double eps = 1e-8);

    void zero_grad();
    void step();

    std::int64_t steps() const { return step_; }
    const std::vector<torch::Tensor>& params() const { return params_; }
    const std::vector<torch::Tensor>& first_moments() const { return m_; }
    const std::vector<torch::Tensor>& second_moments() const { return v_; }

private:
    std::vector<torch::Tensor> params_, m_, v_;
    double lr_, beta1_, beta2_, eps_;
    std::int64_t step_ = 0;
};

// SGD with heavy-ball momentum and L2 weight decay (decay added to the gradient):
//   g <- g + wd p,  b <- mu b + g (b = g on the first step),  p <- p - lr b.
class Sgd {
public:
    Sgd(std::vector<torch::Tensor> params, double lr, double momentum, double weight_decay);

    void zero_grad();
    void step();

    double lr() const { return lr_; }
    double momentum() const { return momentum_; }
    double weight_decay() const { return weight_decay_; }

private:
    std::vector<torch::Tensor> params_, buf_;
    double lr_, momentum_, weight_decay_;
    std::vector<bool> started_;
};

std::vector<torch::Tensor> concat_params(std::initializer_list<std::vector<torch::Tensor>> groups);

}  // namespace fsiad
