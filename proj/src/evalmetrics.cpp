#include "fsiad/evalmetrics.hpp"

#include "fsiad/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

namespace fsiad {

namespace {

torch::Tensor unit_rows(const torch::Tensor& e) {
    const auto d = e.to(torch::kFloat64);
    const auto norm = d.norm(2, 1, true);
    if ((norm == 0).any().item<bool>()) throw std::invalid_argument("embedding with zero norm");
    return d / norm;
}

void check_table(const LabeledEmbeddings& t, const char* what) {
    if (t.size() == 0) throw std::invalid_argument(std::string(what) + " is empty");
    if (t.embeddings.dim() != 2 || t.embeddings.size(0) != t.size())
        throw std::invalid_argument(std::string(what) + ": embeddings and subjects disagree in count");
}

torch::Tensor similarity(const LabeledEmbeddings& gallery, const LabeledEmbeddings& probe) {
    check_table(gallery, "gallery");
    check_table(probe, "probe");
    if (gallery.embeddings.size(1) != probe.embeddings.size(1))
        throw std::invalid_argument("gallery and probe embeddings differ in dimension");
    return unit_rows(probe.embeddings).matmul(unit_rows(gallery.embeddings).t()).contiguous();
}

std::vector<double> sorted(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v;
}

// Count of values >= t in an ascending vector.
double fraction_at_least(const std::vector<double>& asc, double t) {
    const auto it = std::lower_bound(asc.begin(), asc.end(), t);
    return static_cast<double>(asc.end() - it) / static_cast<double>(asc.size());
}

}  // namespace

double rank1(const LabeledEmbeddings& gallery, const LabeledEmbeddings& probe) {
    const std::set<std::int64_t> unique(gallery.subjects.begin(), gallery.subjects.end());
    if (unique.size() != gallery.subjects.size()) throw std::invalid_argument("rank1: gallery subjects must be unique");
    const auto sim = similarity(gallery, probe);
    const auto acc = sim.accessor<double, 2>();
    std::int64_t hits = 0;
    for (std::int64_t p = 0; p < probe.size(); ++p) {
        std::int64_t best = 0;
        for (std::int64_t g = 1; g < gallery.size(); ++g)
            if (acc[p][g] > acc[p][best]) best = g;
        hits += gallery.subjects[static_cast<std::size_t>(best)] == probe.subjects[static_cast<std::size_t>(p)];
    }
    return static_cast<double>(hits) / static_cast<double>(probe.size());
}

ScoreSet make_scores(const LabeledEmbeddings& gallery, const LabeledEmbeddings& probe) {
    const auto sim = similarity(gallery, probe);
    const auto acc = sim.accessor<double, 2>();
    ScoreSet out;
    for (std::int64_t p = 0; p < probe.size(); ++p)
        for (std::int64_t g = 0; g < gallery.size(); ++g) {
            const bool same = gallery.subjects[static_cast<std::size_t>(g)] == probe.subjects[static_cast<std::size_t>(p)];
            (same ? out.genuine : out.impostor).push_back(std::clamp(acc[p][g], -1.0, 1.0));
        }
    return out;
}

RocResult roc_and_vr(const ScoreSet& scores, const std::vector<double>& far_levels) {
    if (scores.genuine.empty()) throw std::invalid_argument("roc_and_vr: no genuine scores");
    if (scores.impostor.empty()) throw std::invalid_argument("roc_and_vr: no impostor scores");
    for (double f : far_levels)
        if (!(f > 0.0 && f <= 1.0)) throw std::invalid_argument("roc_and_vr: FAR level outside (0, 1]");

    const auto gen = sorted(scores.genuine);
    const auto imp = sorted(scores.impostor);
    std::vector<double> thresholds;
    std::merge(gen.begin(), gen.end(), imp.begin(), imp.end(), std::back_inserter(thresholds));
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    RocResult out;
    out.table.reserve(thresholds.size());
    for (double t : thresholds) out.table.push_back({t, fraction_at_least(imp, t), fraction_at_least(gen, t)});
    for (double f : far_levels) {
        // FAR is non-increasing in the threshold, so the first qualifying row has the smallest threshold.
        const auto it = std::find_if(out.table.begin(), out.table.end(), [f](const RocPoint& r) { return r.far <= f; });
        out.vr.push_back(it == out.table.end() ? 0.0 : it->vr);
    }
    return out;
}

MomentSummary MomentSummary::of(const torch::Tensor& features) {
    if (features.dim() != 2 || features.size(0) < 2)
        throw std::invalid_argument("moment summary needs a K x D matrix with K >= 2");
    const auto x = features.to(torch::kFloat64);
    MomentSummary out;
    out.mean = x.mean(0);
    const auto c = x - out.mean;
    out.covariance = c.t().matmul(c) / static_cast<double>(x.size(0) - 1);
    return out;
}

namespace {

// Symmetric PSD square root; eigenvalues below 1e-10 are treated as zero.
torch::Tensor psd_sqrt(const torch::Tensor& m) {
    const auto [w, v] = torch::linalg_eigh((m + m.t()) / 2.0);
    const auto root = torch::where(w < 1e-10, torch::zeros_like(w), w).sqrt();
    return v.matmul(torch::diag(root)).matmul(v.t());
}

void check_psd(const torch::Tensor& cov, const char* which) {
    const auto asym = (cov - cov.t()).abs().max().item<double>();
    const auto w = torch::linalg_eigvalsh((cov + cov.t()) / 2.0);
    const auto scale = std::max(1.0, w.abs().max().item<double>());
    if (asym > 1e-8 * scale || w.min().item<double>() < -1e-8 * scale)
        throw std::invalid_argument(std::string("fid: covariance ") + which + " is not symmetric positive semidefinite");
}

}  // namespace

double fid(const MomentSummary& a, const MomentSummary& b) {
    if (a.mean.numel() != b.mean.numel() || a.covariance.sizes() != b.covariance.sizes() ||
        a.covariance.size(0) != a.mean.numel())
        throw std::invalid_argument("fid: dimension mismatch");
    const auto s1 = a.covariance.to(torch::kFloat64), s2 = b.covariance.to(torch::kFloat64);
    check_psd(s1, "a");
    check_psd(s2, "b");
    const auto r1 = psd_sqrt(s1);
    const auto inner = r1.matmul(s2).matmul(r1);
    const auto w = torch::linalg_eigvalsh((inner + inner.t()) / 2.0);
    const double cross = torch::where(w < 1e-10, torch::zeros_like(w), w).sqrt().sum().item<double>();
    const double mean_term = (a.mean.to(torch::kFloat64) - b.mean.to(torch::kFloat64)).pow(2).sum().item<double>();
    const double value = mean_term + s1.trace().item<double>() + s2.trace().item<double>() - 2.0 * cross;
    return std::max(0.0, value);
}

double attribute_ssim(const torch::Tensor& references, const torch::Tensor& synthetics) {
    if (references.sizes() != synthetics.sizes()) throw std::invalid_argument("attribute_ssim: shape mismatch");
    torch::NoGradGuard no_grad;
    return ssim_per_image(references.to(torch::kFloat64), synthetics.to(torch::kFloat64), SsimConfig{})
        .mean()
        .item<double>();
}

const std::vector<double>& standard_far_levels() {
    static const std::vector<double> levels{1e-2, 1e-3, 1e-4};
    return levels;
}

std::string far_label(double far) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "vr@%g%%", far * 100.0);
    return buf;
}

nlohmann::json MetricsSummary::to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["rank1"] = opt(rank1);
    for (const auto& [k, v] : vr) j[k] = v;
    j["fid_N"] = opt(fid_n);
    j["fid_V"] = opt(fid_v);
    j["ssim_N"] = opt(ssim_n);
    j["ssim_V"] = opt(ssim_v);
    return j;
}

void write_roc_csv(const std::vector<RocPoint>& table, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << "threshold,far,vr\n";
    char buf[96];
    for (const auto& r : table) {
        std::snprintf(buf, sizeof buf, "%.12g,%.12g,%.12g\n", r.threshold, r.far, r.vr);
        out << buf;
    }
}

void write_metrics_json(const MetricsSummary& summary, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << summary.to_json().dump(2) << '\n';
}

}  // namespace fsiad
