#include "fsiad/evalmetrics.hpp"
#include "fsiad/nets.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace fsiad;

namespace {

constexpr auto kF64 = torch::kFloat64;

LabeledEmbeddings table(std::vector<std::vector<double>> rows, std::vector<std::int64_t> subjects) {
    auto t = torch::empty({static_cast<std::int64_t>(rows.size()), static_cast<std::int64_t>(rows[0].size())}, kF64);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) t[static_cast<long>(i)][static_cast<long>(j)] = rows[i][j];
    return {t, std::move(subjects)};
}

std::vector<std::vector<long double>> to_ld(const torch::Tensor& t) {
    std::vector<std::vector<long double>> out(static_cast<std::size_t>(t.size(0)));
    for (std::int64_t i = 0; i < t.size(0); ++i)
        for (std::int64_t j = 0; j < t.size(1); ++j) out[i].push_back(t[i][j].item<double>());
    return out;
}

std::vector<int> to_int(const std::vector<std::int64_t>& v) { return {v.begin(), v.end()}; }

MomentSummary summary(torch::Tensor mean, torch::Tensor cov) { return {mean.to(kF64), cov.to(kF64)}; }

}  // namespace

TEST(Rank1, HandWorkedExample) {
    const auto gallery = table({{1, 0}, {0, 1}}, {0, 1});
    const auto probe = table({{0.9, 0.1}, {0.2, 0.98}, {0, 1}}, {0, 0, 1});
    EXPECT_NEAR(rank1(gallery, probe), 2.0 / 3.0, 1e-12);
    EXPECT_EQ(rank1(gallery, probe),
              oracle::rank1(to_ld(gallery.embeddings), to_int(gallery.subjects), to_ld(probe.embeddings), to_int(probe.subjects)));
}

TEST(Rank1, SelfMatchAndSmallNoise) {
    auto rng = seeded_rng(2);
    const auto e = standard_normal(rng, {12, 16}, kF64);
    std::vector<std::int64_t> ids(12);
    for (int i = 0; i < 12; ++i) ids[i] = 100 + i;
    EXPECT_EQ(rank1({e, ids}, {e, ids}), 1.0);
    const auto eye = torch::eye(12, kF64);
    EXPECT_EQ(rank1({eye, ids}, {eye + 1e-3 * standard_normal(rng, {12, 12}, kF64), ids}), 1.0);
}

TEST(Rank1, MatchesBruteForceOnRandomData) {
    auto rng = seeded_rng(7);
    const auto g = standard_normal(rng, {10, 8}, kF64), p = standard_normal(rng, {40, 8}, kF64);
    std::vector<std::int64_t> gid(10), pid(40);
    for (int i = 0; i < 10; ++i) gid[i] = i;
    for (int i = 0; i < 40; ++i) pid[i] = static_cast<std::int64_t>(rng.below(10));
    EXPECT_EQ(rank1({g, gid}, {p, pid}), oracle::rank1(to_ld(g), to_int(gid), to_ld(p), to_int(pid)));
}

TEST(Rank1, TiesGoToLowestGalleryIndex) {
    const auto gallery = table({{1, 0}, {1, 0}}, {5, 6});
    EXPECT_EQ(rank1(gallery, table({{2, 0}}, {5})), 1.0);
    EXPECT_EQ(rank1(gallery, table({{2, 0}}, {6})), 0.0);
}

TEST(Rank1, InvariantUnderCommonRotation) {
    auto rng = seeded_rng(3);
    const auto g = standard_normal(rng, {6, 5}, kF64), p = standard_normal(rng, {20, 5}, kF64);
    const auto q = std::get<0>(torch::linalg_qr(standard_normal(rng, {5, 5}, kF64)));
    std::vector<std::int64_t> gid{0, 1, 2, 3, 4, 5}, pid(20);
    for (int i = 0; i < 20; ++i) pid[i] = i % 6;
    EXPECT_EQ(rank1({g, gid}, {p, pid}), rank1({g.matmul(q), gid}, {p.matmul(q), pid}));
}

TEST(Rank1, Errors) {
    const auto g = table({{1, 0}, {0, 1}}, {0, 0});
    EXPECT_THROW(rank1(g, table({{1, 0}}, {0})), std::invalid_argument);
    EXPECT_THROW(rank1({torch::empty({0, 2}, kF64), {}}, table({{1, 0}}, {0})), std::invalid_argument);
    EXPECT_THROW(rank1(table({{1, 0}}, {0}), {torch::empty({0, 2}, kF64), {}}), std::invalid_argument);
}

TEST(Roc, BruteForceExample) {
    const ScoreSet s{{0.9, 0.8}, {0.1, 0.2}};
    const auto r = roc_and_vr(s, {0.5});
    EXPECT_EQ(r.vr[0], 1.0);
    EXPECT_EQ(r.vr[0], oracle::vr_at_far(s.genuine, s.impostor, 0.5));
    EXPECT_EQ(r.table.size(), 4u);
}

TEST(Roc, MatchesBruteForceOnRandomScores) {
    auto rng = seeded_rng(5);
    ScoreSet s;
    for (int i = 0; i < 60; ++i) s.genuine.push_back(std::tanh(rng.normal() + 1.0));
    for (int i = 0; i < 400; ++i) s.impostor.push_back(std::tanh(rng.normal()));
    s.impostor.push_back(s.genuine[3]);  // a shared score
    const std::vector<double> levels{1.0, 0.3, 0.05, 0.01, 1e-3};
    const auto r = roc_and_vr(s, levels);
    for (std::size_t i = 0; i < levels.size(); ++i)
        EXPECT_EQ(r.vr[i], oracle::vr_at_far(s.genuine, s.impostor, levels[i])) << levels[i];
}

TEST(Roc, ChanceLevelForIdenticalDistributions) {
    std::vector<double> scores;
    for (int i = 0; i < 1000; ++i) scores.push_back(i / 1000.0);
    const std::vector<double> levels{0.01, 0.1, 0.5};
    const auto r = roc_and_vr({scores, scores}, levels);
    for (std::size_t i = 0; i < levels.size(); ++i) EXPECT_NEAR(r.vr[i], levels[i], 1.0 / 1000);
}

TEST(Roc, MonotoneAndInvariantUnderIncreasingTransform) {
    auto rng = seeded_rng(9);
    ScoreSet s, t;
    for (int i = 0; i < 50; ++i) s.genuine.push_back(rng.uniform(-0.2, 1));
    for (int i = 0; i < 3000; ++i) s.impostor.push_back(rng.uniform(-1, 0.6));
    for (double x : s.genuine) t.genuine.push_back(std::exp(3 * x) - 5);
    for (double x : s.impostor) t.impostor.push_back(std::exp(3 * x) - 5);
    const auto a = roc_and_vr(s, standard_far_levels()), b = roc_and_vr(t, standard_far_levels());
    EXPECT_GE(a.vr[0], a.vr[1]);
    EXPECT_GE(a.vr[1], a.vr[2]);
    EXPECT_EQ(a.vr, b.vr);
    ASSERT_EQ(a.table.size(), b.table.size());
    for (std::size_t i = 0; i < a.table.size(); ++i) {
        EXPECT_EQ(a.table[i].far, b.table[i].far);
        EXPECT_EQ(a.table[i].vr, b.table[i].vr);
    }
}

TEST(Roc, Errors) {
    EXPECT_THROW(roc_and_vr({{}, {0.1}}, {0.1}), std::invalid_argument);
    EXPECT_THROW(roc_and_vr({{0.1}, {}}, {0.1}), std::invalid_argument);
    EXPECT_THROW(roc_and_vr({{0.1}, {0.2}}, {0.0}), std::invalid_argument);
    EXPECT_THROW(roc_and_vr({{0.1}, {0.2}}, {1.5}), std::invalid_argument);
}

TEST(Scores, SplitBySubject) {
    const auto s = make_scores(table({{1, 0}, {0, 1}}, {0, 1}), table({{1, 0}, {1, 1}, {0, 2}}, {0, 1, 1}));
    EXPECT_EQ(s.genuine.size(), 3u);
    EXPECT_EQ(s.impostor.size(), 3u);
    for (double x : s.genuine) EXPECT_LE(std::abs(x), 1.0);
}

TEST(Fid, ScalarFormulaCases) {
    const auto one_d = fid(summary(torch::zeros({1}), torch::ones({1, 1})), summary(torch::ones({1}), torch::ones({1, 1})));
    EXPECT_NEAR(one_d, static_cast<double>(oracle::frechet_1d(0, 1, 1, 1)), 1e-4);
    EXPECT_NEAR(one_d, 1.0, 1e-9);
    const auto two_d = fid(summary(torch::zeros({2}), torch::eye(2)), summary(torch::tensor({3.0, 4.0}), torch::eye(2)));
    EXPECT_NEAR(two_d, 25.0, 25.0 * 1e-4);
    EXPECT_NEAR(fid(summary(torch::zeros({1}), torch::full({1, 1}, 4.0)), summary(torch::zeros({1}), torch::ones({1, 1}))),
                static_cast<double>(oracle::frechet_1d(0, 4, 0, 1)), 1e-9);
}

TEST(Fid, IdenticalSymmetricAndNonNegative) {
    auto rng = seeded_rng(1);
    const auto a = MomentSummary::of(standard_normal(rng, {200, 6}, kF64));
    const auto b = MomentSummary::of(standard_normal(rng, {150, 6}, kF64) * 1.5 + 0.3);
    EXPECT_NEAR(fid(a, a), 0.0, 1e-8);
    EXPECT_NEAR(fid(a, b), fid(b, a), 1e-6);
    EXPECT_GT(fid(a, b), 0.0);
    // Rank-deficient covariances (fewer samples than dimensions) are still accepted.
    const auto c = MomentSummary::of(standard_normal(rng, {3, 6}, kF64));
    EXPECT_GE(fid(c, c), 0.0);
    EXPECT_NEAR(fid(c, c), 0.0, 1e-6);
}

TEST(Fid, DiagonalCovariancesMatchPerDimensionSum) {
    const auto v1 = torch::tensor({1.0, 4.0, 0.25}), v2 = torch::tensor({9.0, 1.0, 0.5});
    const auto m1 = torch::tensor({0.0, 1.0, -2.0}), m2 = torch::tensor({0.5, 1.0, 1.0});
    long double expected = 0;
    for (int i = 0; i < 3; ++i)
        expected += oracle::frechet_1d(m1[i].item<double>(), v1[i].item<double>(), m2[i].item<double>(), v2[i].item<double>());
    EXPECT_NEAR(fid(summary(m1, torch::diag(v1)), summary(m2, torch::diag(v2))), static_cast<double>(expected), 1e-9);
}

TEST(Fid, Errors) {
    EXPECT_THROW(fid(summary(torch::zeros({2}), torch::eye(2)), summary(torch::zeros({3}), torch::eye(3))),
                 std::invalid_argument);
    EXPECT_THROW(fid(summary(torch::zeros({2}), torch::diag(torch::tensor({1.0, -0.5}))), summary(torch::zeros({2}), torch::eye(2))),
                 std::invalid_argument);
    EXPECT_THROW(MomentSummary::of(torch::zeros({1, 4})), std::invalid_argument);
}

TEST(MomentSummary, UnbiasedCovariance) {
    const auto x = torch::tensor({{1.0, 2.0}, {3.0, 6.0}, {5.0, 10.0}});
    const auto m = MomentSummary::of(x);
    EXPECT_NEAR(m.mean[0].item<double>(), 3.0, 1e-12);
    EXPECT_NEAR(m.covariance[0][0].item<double>(), 4.0, 1e-12);  // ((-2)^2 + 0 + 2^2) / 2
    EXPECT_NEAR(m.covariance[0][1].item<double>(), 8.0, 1e-12);
}

TEST(AttributeSsim, SelfSymmetryAndNoise) {
    auto rng = seeded_rng(4);
    const auto base = standard_normal(rng, {3, 3, 32, 32}, kF64);
    // Smooth references so that structure exists at the window scale.
    const auto refs = torch::nn::functional::avg_pool2d(base, torch::nn::functional::AvgPool2dFuncOptions(5).stride(1).padding(2)).tanh();
    const auto near = (refs + 0.05 * standard_normal(rng, {3, 3, 32, 32}, kF64)).clamp(-1, 1);
    const auto noise = torch::rand({3, 3, 32, 32}, kF64) * 2 - 1;
    EXPECT_NEAR(attribute_ssim(refs, refs), 1.0, 1e-9);
    EXPECT_NEAR(attribute_ssim(refs, near), attribute_ssim(near, refs), 1e-12);
    EXPECT_LT(attribute_ssim(refs, noise), attribute_ssim(refs, near));
    EXPECT_THROW(attribute_ssim(refs, refs.narrow(0, 0, 2)), std::invalid_argument);
}

TEST(Summary, JsonKeysAndNulls) {
    MetricsSummary m;
    m.rank1 = 0.5;
    for (double f : standard_far_levels()) m.vr[far_label(f)] = 0.25;
    m.fid_n = 3.0;
    const auto j = m.to_json();
    for (const char* key : {"rank1", "vr@1%", "vr@0.1%", "vr@0.01%", "fid_N", "fid_V", "ssim_N", "ssim_V"})
        EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_TRUE(j.at("fid_V").is_null());
    EXPECT_EQ(j.at("vr@0.1%"), 0.25);

    const auto dir = oracle::scratch_dir("metrics");
    write_metrics_json(m, dir / "m.json");
    std::ifstream in(dir / "m.json");
    EXPECT_EQ(nlohmann::json::parse(in), j);
    write_roc_csv({{0.5, 0.1, 0.9}}, dir / "roc.csv");
    std::ifstream roc(dir / "roc.csv");
    std::string header, line;
    std::getline(roc, header);
    std::getline(roc, line);
    EXPECT_EQ(header, "threshold,far,vr");
    EXPECT_EQ(line, "0.5,0.1,0.9");
}
