#include "fsiad/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace fsiad {

namespace F = torch::nn::functional;

namespace {

void same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* who) {
    if (!a.sizes().equals(b.sizes()))
        throw std::invalid_argument(std::string(who) + ": shape mismatch " + c10::str(a.sizes()) + " vs " +
                                    c10::str(b.sizes()));
}

torch::Tensor row_cosine(const torch::Tensor& a, const torch::Tensor& b) {
    const auto na = a.norm(2, 1);
    const auto nb = b.norm(2, 1);
    if ((na.detach() == 0).any().item<bool>() || (nb.detach() == 0).any().item<bool>())
        throw std::invalid_argument("loss_dis: cosine similarity of a zero-norm vector");
    return (a * b).sum(1) / (na * nb);
}

torch::Tensor squared_distance(const torch::Tensor& a, const torch::Tensor& b) {
    return (a - b).pow(2).flatten(1).sum(1);
}

torch::Tensor kl_to_prior(const GaussianPosterior& post) {
    if (!torch::isfinite(post.logvar.detach()).all().item<bool>())
        throw std::invalid_argument("loss_kl: sigma must be finite and strictly positive");
    return 0.5 * (post.mu.pow(2) + post.logvar.exp() - 1.0 - post.logvar).sum(1).mean();
}

// Depthwise valid convolution with a separable Gaussian.
torch::Tensor blur(const torch::Tensor& x, const torch::Tensor& g1d) {
    const auto c = x.size(1);
    const auto k = g1d.numel();
    const auto wh = g1d.view({1, 1, 1, k}).expand({c, 1, 1, k});
    const auto wv = g1d.view({1, 1, k, 1}).expand({c, 1, k, 1});
    auto out = F::conv2d(x, wh, F::Conv2dFuncOptions().groups(c));
    return F::conv2d(out, wv, F::Conv2dFuncOptions().groups(c));
}

torch::Tensor gaussian_1d(const SsimConfig& cfg, torch::ScalarType dtype) {
    const auto k = cfg.window_size;
    auto coords = torch::arange(k, torch::kFloat64) - static_cast<double>(k / 2);
    auto g = torch::exp(-coords.pow(2) / (2.0 * cfg.window_sigma * cfg.window_sigma));
    return (g / g.sum()).to(dtype);
}

// Per image and channel: (ssim, cs), each B x C.
std::pair<torch::Tensor, torch::Tensor> ssim_terms(const torch::Tensor& x, const torch::Tensor& y,
                                                   const SsimConfig& cfg) {
    const auto g = gaussian_1d(cfg, x.scalar_type());
    const double c1 = std::pow(cfg.k1 * cfg.data_range, 2);
    const double c2 = std::pow(cfg.k2 * cfg.data_range, 2);
    const auto mu_x = blur(x, g);
    const auto mu_y = blur(y, g);
    const auto mu_xx = mu_x.pow(2), mu_yy = mu_y.pow(2), mu_xy = mu_x * mu_y;
    const auto s_xx = blur(x * x, g) - mu_xx;
    const auto s_yy = blur(y * y, g) - mu_yy;
    const auto s_xy = blur(x * y, g) - mu_xy;
    const auto cs_map = (2.0 * s_xy + c2) / (s_xx + s_yy + c2);
    const auto ssim_map = (2.0 * mu_xy + c1) / (mu_xx + mu_yy + c1) * cs_map;
    return {ssim_map.flatten(2).mean(2), cs_map.flatten(2).mean(2)};
}

void check_pair(const torch::Tensor& x, const torch::Tensor& y, const char* who) {
    same_shape(x, y, who);
    if (x.dim() != 4) throw std::invalid_argument(std::string(who) + ": expected B x C x H x W images");
}

}  // namespace

torch::Tensor loss_dis(const torch::Tensor& z_id, const torch::Tensor& z_n, const torch::Tensor& z_v) {
    same_shape(z_id, z_n, "loss_dis");
    same_shape(z_id, z_v, "loss_dis");
    return (row_cosine(z_id, z_n) + row_cosine(z_id, z_v)).mean();
}

torch::Tensor loss_kl(const GaussianPosterior& post_n, const GaussianPosterior& post_v) {
    return kl_to_prior(post_n) + kl_to_prior(post_v);
}

torch::Tensor loss_rec(const torch::Tensor& i_n, const torch::Tensor& i_v, const torch::Tensor& rec_n,
                       const torch::Tensor& rec_v) {
    same_shape(i_n, rec_n, "loss_rec");
    same_shape(i_v, rec_v, "loss_rec");
    return squared_distance(i_n, rec_n).mean() + squared_distance(i_v, rec_v).mean();
}

torch::Tensor loss_ip(const torch::Tensor& z_id, const std::vector<torch::Tensor>& embeddings) {
    if (embeddings.empty()) throw std::invalid_argument("loss_ip: no embeddings");
    auto total = torch::zeros({z_id.size(0)}, z_id.options());
    for (const auto& e : embeddings) {
        same_shape(z_id, e, "loss_ip");
        total = total + squared_distance(z_id, e);
    }
    return total.mean();
}

torch::Tensor loss_attr(const torch::Tensor& z_xn, const torch::Tensor& z_xv, const torch::Tensor& zhat_xn,
                        const torch::Tensor& zhat_xv) {
    same_shape(z_xn, zhat_xn, "loss_attr");
    same_shape(z_xv, zhat_xv, "loss_attr");
    return squared_distance(z_xn, zhat_xn).mean() + squared_distance(z_xv, zhat_xv).mean();
}

SsimConfig SsimConfig::for_side(std::int64_t side) {
    SsimConfig cfg;
    double total = 0.0;
    for (double w : cfg.weights) total += w;
    while (cfg.scales() > 1 && cfg.min_side() > side) cfg.weights.pop_back();
    double kept = 0.0;
    for (double w : cfg.weights) kept += w;
    for (double& w : cfg.weights) w *= total / kept;
    return cfg;
}

torch::Tensor gaussian_window(const SsimConfig& cfg, torch::ScalarType dtype) {
    const auto g = gaussian_1d(cfg, dtype);
    return torch::outer(g, g);
}

torch::Tensor ssim_per_image(const torch::Tensor& x, const torch::Tensor& y, const SsimConfig& cfg) {
    check_pair(x, y, "ssim");
    if (std::min(x.size(2), x.size(3)) < cfg.window_size)
        throw std::invalid_argument("ssim: image smaller than the window");
    return ssim_terms(x, y, cfg).first.mean(1);
}

torch::Tensor ms_ssim(const torch::Tensor& x, const torch::Tensor& y, const SsimConfig& cfg) {
    check_pair(x, y, "ms_ssim");
    if (std::min(x.size(2), x.size(3)) < cfg.min_side())
        throw std::invalid_argument("ms_ssim: images of side " + std::to_string(std::min(x.size(2), x.size(3))) +
                                    " are too small for " + std::to_string(cfg.scales()) + " scales (need " +
                                    std::to_string(cfg.min_side()) + ")");
    auto a = x, b = y;
    auto log_value = torch::zeros({x.size(0), x.size(1)}, x.options());
    for (std::int64_t s = 0; s < cfg.scales(); ++s) {
        auto [ssim, cs] = ssim_terms(a, b, cfg);
        const bool last = s + 1 == cfg.scales();
        // Negative terms cannot be raised to fractional powers; clamp like the reference implementation.
        auto term = torch::relu(last ? ssim : cs);
        log_value = log_value + cfg.weights[s] * torch::log(term.clamp_min(1e-30));
        if (!last) {
            const auto pad = std::vector<std::int64_t>{a.size(2) % 2, a.size(3) % 2};
            a = F::avg_pool2d(a, F::AvgPool2dFuncOptions(2).padding(pad));
            b = F::avg_pool2d(b, F::AvgPool2dFuncOptions(2).padding(pad));
        }
    }
    return torch::exp(log_value).mean();
}

torch::Tensor loss_sim(const torch::Tensor& x, const torch::Tensor& x_hat, double alpha, const SsimConfig& cfg) {
    check_pair(x, x_hat, "loss_sim");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("loss_sim: alpha must lie in [0, 1]");
    const auto l1 = (x - x_hat).abs().mean();
    if (alpha == 0.0) return l1;
    return (1.0 - alpha) * l1 + alpha * (1.0 - ms_ssim(x, x_hat, cfg));
}

torch::Tensor loss_adv_d(const torch::Tensor& d_real, const torch::Tensor& d_fake) {
    const auto real = d_real.clamp(kProbClamp, 1.0 - kProbClamp);
    const auto fake = d_fake.clamp(kProbClamp, 1.0 - kProbClamp);
    return -torch::log(real).mean() - torch::log(1.0 - fake).mean();
}

torch::Tensor loss_adv_g(const torch::Tensor& d_fake) {
    return -torch::log(d_fake.clamp(kProbClamp, 1.0 - kProbClamp)).mean();
}

torch::Tensor loss_ce(const torch::Tensor& logits_n, const torch::Tensor& logits_v, const torch::Tensor& labels) {
    same_shape(logits_n, logits_v, "loss_ce");
    if (labels.dim() != 1 || labels.size(0) != logits_n.size(0))
        throw std::invalid_argument("loss_ce: need one label per row");
    const auto classes = logits_n.size(1);
    if (labels.numel() > 0 && (labels.min().item<std::int64_t>() < 0 || labels.max().item<std::int64_t>() >= classes))
        throw std::invalid_argument("loss_ce: label out of range for " + std::to_string(classes) + " classes");
    return F::cross_entropy(logits_n, labels) + F::cross_entropy(logits_v, labels);
}

torch::Tensor loss_in(const torch::Tensor& f_n, const torch::Tensor& f_v) {
    same_shape(f_n, f_v, "loss_in");
    return squared_distance(f_n, f_v).mean();
}

LossReport LossReport::zeros() {
    LossReport r;
    for (const char* name : kLossColumns) r.set(name, 0.0);
    return r;
}

double LossReport::get(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("loss report has no component '" + name + "'");
    return it->second;
}

std::string LossReport::first_non_finite() const {
    for (const char* name : kLossColumns) {
        auto it = values_.find(name);
        if (it != values_.end() && !std::isfinite(it->second)) return name;
    }
    for (const auto& [name, v] : values_)
        if (!std::isfinite(v)) return name;
    return {};
}

LossReport LossReport::operator+(const LossReport& other) const {
    LossReport r = *this;
    for (const auto& [name, v] : other.values_) r.values_[name] += v;
    return r;
}

LossReport LossReport::operator-(const LossReport& other) const {
    LossReport r = *this;
    for (const auto& [name, v] : other.values_) r.values_[name] -= v;
    return r;
}

void LossReport::write_csv_header(std::ostream& out) const {
    out << "iteration";
    for (const char* name : kLossColumns) out << ',' << name;
    out << '\n';
}

void LossReport::write_csv_row(std::ostream& out, std::int64_t iteration) const {
    out << iteration;
    char buf[64];
    for (const char* name : kLossColumns) {
        auto it = values_.find(name);
        std::snprintf(buf, sizeof buf, "%.9g", it == values_.end() ? 0.0 : it->second);
        out << ',' << buf;
    }
    out << '\n';
}

LossReport aggregate(const LossReport& report, const TrainConfig& cfg) {
    LossReport r = report;
    const double iad = cfg.lambda_dis * report.get("dis") + report.get("kl");
    const double integration = report.get("ip") + report.get("attr") + report.get("sim");
    const double fsm = report.get("rec") + cfg.lambda_int * integration + cfg.lambda_adv * report.get("adv_g");
    r.set("iad", iad);
    r.set("int", integration);
    r.set("fsm", fsm);
    r.set("all", iad + fsm);
    r.set("hfr", report.get("ce") + cfg.gamma * report.get("in"));
    return r;
}

}  // namespace fsiad
