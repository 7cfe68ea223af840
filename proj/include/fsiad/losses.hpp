#pragma once

#include "fsiad/config.hpp"
#include "fsiad/types.hpp"

#include <torch/torch.h>

#include <array>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace fsiad {

// Every loss sums over feature/pixel dimensions and averages over the batch.

// cos(z_id, z_n) + cos(z_id, z_v). Zero-norm rows throw.
torch::Tensor loss_dis(const torch::Tensor& z_id, const torch::Tensor& z_n, const torch::Tensor& z_v);

// KL(q_N || N(0, I)) + KL(q_V || N(0, I)) in closed form.
torch::Tensor loss_kl(const GaussianPosterior& post_n, const GaussianPosterior& post_v);

// ||I_N - rec_N||^2 + ||I_V - rec_V||^2.
torch::Tensor loss_rec(const torch::Tensor& i_n, const torch::Tensor& i_v, const torch::Tensor& rec_n,
                       const torch::Tensor& rec_v);

// Sum over the synthetic-image identity embeddings of ||z_id - e||^2.
torch::Tensor loss_ip(const torch::Tensor& z_id, const std::vector<torch::Tensor>& embeddings);

// ||z_X^N - zhat_X^N||^2 + ||z_X^V - zhat_X^V||^2.
torch::Tensor loss_attr(const torch::Tensor& z_xn, const torch::Tensor& z_xv, const torch::Tensor& zhat_xn,
                        const torch::Tensor& zhat_xv);

struct SsimConfig {
    std::int64_t window_size = 7;
    double window_sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 2.0;  // images in [-1, 1]
    std::vector<double> weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

    std::int64_t scales() const { return static_cast<std::int64_t>(weights.size()); }
    // Smallest image side that supports every configured scale.
    std::int64_t min_side() const { return window_size << (scales() - 1); }

    // The standard five-scale configuration, truncated to the scales that fit `side`
    // with the retained weights rescaled to the original total.
    static SsimConfig for_side(std::int64_t side);
};

// Normalized 2-D Gaussian window, window_size x window_size.
torch::Tensor gaussian_window(const SsimConfig& cfg, torch::ScalarType dtype = torch::kFloat64);

// Mean single-scale SSIM per image (B values), averaged over channels and valid window positions.
torch::Tensor ssim_per_image(const torch::Tensor& x, const torch::Tensor& y, const SsimConfig& cfg);

// Multi-scale SSIM averaged over batch and channels. Contrast-structure terms enter at every
// scale, luminance only at the coarsest; 2x2 average pooling between scales.
torch::Tensor ms_ssim(const torch::Tensor& x, const torch::Tensor& y, const SsimConfig& cfg);

// (1 - alpha) * mean|X - Xhat| + alpha * (1 - MS-SSIM(X, Xhat)).
torch::Tensor loss_sim(const torch::Tensor& x, const torch::Tensor& x_hat, double alpha, const SsimConfig& cfg);

inline constexpr double kProbClamp = 1e-7;

// -mean log D(real) - mean log(1 - D(fake)).
torch::Tensor loss_adv_d(const torch::Tensor& d_real, const torch::Tensor& d_fake);
// Non-saturating generator term, -mean log D(fake).
torch::Tensor loss_adv_g(const torch::Tensor& d_fake);

// Softmax cross-entropy on both domains' logits, summed over domains.
torch::Tensor loss_ce(const torch::Tensor& logits_n, const torch::Tensor& logits_v, const torch::Tensor& labels);

// ||F(X~_N) - F(X~_V)||^2.
torch::Tensor loss_in(const torch::Tensor& f_n, const torch::Tensor& f_v);

// Column order of the per-iteration loss CSV (after the iteration number).
inline constexpr std::array<const char*, 14> kLossColumns{"dis", "kl",  "rec", "ip",  "attr", "sim", "adv_d",
                                                          "adv_g", "int", "iad", "fsm", "ce",   "in",  "hfr"};

// Named scalar losses. Reading a missing name throws.
class LossReport {
public:
    LossReport() = default;
    static LossReport zeros();  // every kLossColumns entry present and zero

    void set(const std::string& name, double value) { values_[name] = value; }
    double get(const std::string& name) const;
    bool has(const std::string& name) const { return values_.count(name) != 0; }
    const std::map<std::string, double>& values() const { return values_; }

    // Name of the first non-finite entry in column order, or empty.
    std::string first_non_finite() const;

    LossReport operator+(const LossReport& other) const;
    LossReport operator-(const LossReport& other) const;

    void write_csv_header(std::ostream& out) const;
    void write_csv_row(std::ostream& out, std::int64_t iteration) const;

private:
    std::map<std::string, double> values_;
};

// Fills the weighted combinations:
//   iad = lambda_dis * dis + kl;   int = ip + attr + sim;
//   fsm = rec + lambda_int * int + lambda_adv * adv_g;   all = iad + fsm;   hfr = ce + gamma * in.
LossReport aggregate(const LossReport& report, const TrainConfig& cfg);

}  // namespace fsiad
