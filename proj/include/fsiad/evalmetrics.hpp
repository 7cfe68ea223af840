#pragma once

#include <torch/torch.h>

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <vector>

namespace fsiad {

// Embeddings (rows, any norm) with the subject of every row.
struct LabeledEmbeddings {
    torch::Tensor embeddings;  // K x D
    std::vector<std::int64_t> subjects;

    std::int64_t size() const { return static_cast<std::int64_t>(subjects.size()); }
};

// Fraction of probes whose most cosine-similar gallery row has the probe's subject.
// Ties go to the lowest gallery index. Gallery subjects must be unique.
double rank1(const LabeledEmbeddings& gallery, const LabeledEmbeddings& probe);

struct ScoreSet {
    std::vector<double> genuine;
    std::vector<double> impostor;
};

// All probe x gallery cosine similarities split by subject agreement.
ScoreSet make_scores(const LabeledEmbeddings& gallery, const LabeledEmbeddings& probe);

struct RocPoint {
    double threshold = 0.0;
    double far = 0.0;
    double vr = 0.0;
};

struct RocResult {
    std::vector<RocPoint> table;  // one row per distinct score, ascending threshold
    std::vector<double> vr;       // one value per requested FAR level
};

// Accept when score >= threshold. VR@FAR=f is read at the smallest threshold whose FAR <= f,
// without interpolation; 0 when no threshold qualifies.
RocResult roc_and_vr(const ScoreSet& scores, const std::vector<double>& far_levels);

struct MomentSummary {
    torch::Tensor mean;        // D, float64
    torch::Tensor covariance;  // D x D, float64, unbiased

    static MomentSummary of(const torch::Tensor& features);  // K x D, K >= 2
};

// Frechet distance between the Gaussians described by two moment summaries.
double fid(const MomentSummary& a, const MomentSummary& b);

// Mean single-scale SSIM over corresponding images (default window configuration).
double attribute_ssim(const torch::Tensor& references, const torch::Tensor& synthetics);

struct MetricsSummary {
    std::optional<double> rank1;
    std::map<std::string, double> vr;  // keyed "vr@1%", "vr@0.1%", "vr@0.01%"
    std::optional<double> fid_n, fid_v, ssim_n, ssim_v;

    nlohmann::json to_json() const;
};

// The FAR levels of the summary keys, in key order of `far_label`.
const std::vector<double>& standard_far_levels();
std::string far_label(double far);

void write_roc_csv(const std::vector<RocPoint>& table, const std::filesystem::path& path);
void write_metrics_json(const MetricsSummary& summary, const std::filesystem::path& path);

}  // namespace fsiad
