#include "fsiad/optim.hpp"

#include <cmath>

namespace fsiad {

Adam::Adam(std::vector<torch::Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.push_back(torch::zeros_like(p));
        v_.push_back(torch::zeros_like(p));
    }
}

void Adam::zero_grad() {
    for (auto& p : params_)
        if (p.grad().defined()) p.mutable_grad().zero_();
}

void Adam::step() {
    torch::NoGradGuard guard;
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& g = params_[i].grad();
        if (!g.defined()) continue;
        m_[i].mul_(beta1_).add_(g, 1.0 - beta1_);
        v_[i].mul_(beta2_).addcmul_(g, g, 1.0 - beta2_);
        const auto denom = (v_[i] / c2).sqrt_().add_(eps_);
        params_[i].addcdiv_(m_[i], denom, -lr_ / c1);
    }
}

Sgd::Sgd(std::vector<torch::Tensor> params, double lr, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
    buf_.resize(params_.size());
    started_.assign(params_.size(), false);
}

void Sgd::zero_grad() {
    for (auto& p : params_)
        if (p.grad().defined()) p.mutable_grad().zero_();
}

void Sgd::step() {
    torch::NoGradGuard guard;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& grad = params_[i].grad();
        if (!grad.defined()) continue;
        auto g = grad.clone();
        if (weight_decay_ != 0.0) g.add_(params_[i], weight_decay_);
        if (momentum_ != 0.0) {
            if (!started_[i]) {
                buf_[i] = g.clone();
                started_[i] = true;
            } else {
                buf_[i].mul_(momentum_).add_(g);
            }
            g = buf_[i];
        }
        params_[i].add_(g, -lr_);
    }
}

std::vector<torch::Tensor> concat_params(std::initializer_list<std::vector<torch::Tensor>> groups) {
    std::vector<torch::Tensor> out;
    for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
    return out;
}

}  // namespace fsiad
