#include "fsiad/checkpoint.hpp"
#include "fsiad/nets.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace fsiad;
using Shape = std::vector<std::int64_t>;

namespace {

torch::Tensor images(std::int64_t b, std::int64_t res, std::uint64_t seed, torch::ScalarType dtype = torch::kFloat32) {
    auto rng = seeded_rng(seed);
    return standard_normal(rng, {b, 3, res, res}, dtype).tanh();
}

torch::Tensor unit_rows(std::int64_t b, std::uint64_t seed) {
    auto rng = seeded_rng(seed);
    const auto x = standard_normal(rng, {b, kCodeDim});
    return x / x.norm(2, 1, true);
}

}  // namespace

TEST(NetConfig, StageCountsKeepA4x4Bottleneck) {
    EXPECT_EQ((NetConfig{128, 1}).down_stages(), 5);
    EXPECT_EQ((NetConfig{64, 1}).down_stages(), 4);
    EXPECT_EQ((NetConfig{32, 1}).down_stages(), 3);
    EXPECT_EQ((NetConfig{128, 16}).channels(32), 2);
    EXPECT_EQ((NetConfig{128, 64}).channels(32), 1);
}

TEST(AttributeEncoder, CanonicalStageShapes) {
    AttributeEncoder enc(NetConfig{128, 1});
    ShapeTrace trace;
    torch::NoGradGuard g;
    const auto post = enc->forward(images(1, 128, 1), &trace);
    const ShapeTrace expected{{32, 128, 128}, {64, 64, 64}, {128, 32, 32}, {256, 16, 16},
                              {512, 8, 8},    {512, 4, 4},   {256},         {256}};
    EXPECT_EQ(trace, expected);
    EXPECT_EQ(post.mu.sizes(), (Shape{1, 256}));
    EXPECT_EQ(post.sigma().sizes(), (Shape{1, 256}));
}

TEST(AttributeEncoder, SigmaPositiveAndResolutionChecked) {
    AttributeEncoder enc(NetConfig{32, 16});
    auto rng = seeded_rng(3);
    initialize_parameters(*enc, rng);
    torch::NoGradGuard g;
    const auto post = encode_attributes(enc, ImageBatch(images(4, 32, 2), Domain::N));
    EXPECT_TRUE((post.sigma() > 0).all().item<bool>());
    EXPECT_THROW(encode_attributes(enc, ImageBatch(images(1, 64, 2), Domain::N)), std::invalid_argument);
}

TEST(Generator, CanonicalStageShapes) {
    Generator gen(NetConfig{128, 1});
    ShapeTrace trace;
    torch::NoGradGuard g;
    const auto out = gen->forward(unit_rows(1, 1), unit_rows(1, 2), &trace);
    const ShapeTrace expected{{8192},         {256, 8, 8},   {128, 16, 16}, {64, 32, 32}, {32, 64, 64},
                              {32, 128, 128}, {32, 128, 128}, {3, 128, 128}, {3, 128, 128}};
    EXPECT_EQ(trace, expected);
    EXPECT_EQ(out.sizes(), (Shape{1, 3, 128, 128}));
}

TEST(Generator, BoundedDeterministicAndChecked) {
    Generator gen(NetConfig{32, 16});
    auto rng = seeded_rng(4);
    initialize_parameters(*gen, rng);
    torch::NoGradGuard g;
    const LatentCode z_id(unit_rows(3, 5), CodeKind::Identity);
    const LatentCode z_attr(unit_rows(3, 6) * 9.0, CodeKind::Attribute);
    const auto a = generate(gen, z_id, z_attr);
    const auto b = generate(gen, z_id, z_attr);
    EXPECT_TRUE(torch::equal(a, b));
    EXPECT_LE(a.abs().max().item<float>(), 1.0f);
    EXPECT_THROW(gen->forward(torch::zeros({3, 128}), unit_rows(3, 1)), std::invalid_argument);
    EXPECT_THROW(gen->forward(unit_rows(2, 1), unit_rows(3, 1)), std::invalid_argument);
}

TEST(Discriminator, CanonicalStageShapes) {
    Discriminator disc(NetConfig{128, 1});
    ShapeTrace trace;
    torch::NoGradGuard g;
    const auto y = disc->forward(images(2, 128, 1), &trace);
    const ShapeTrace expected{{3, 134, 134}, {64, 128, 128}, {128, 64, 64}, {256, 32, 32},
                              {256, 32, 32}, {256, 32, 32},  {256, 32, 32}, {1}};
    EXPECT_EQ(trace, expected);
    EXPECT_EQ(y.sizes(), (Shape{2}));
}

TEST(Discriminator, ProbabilitiesStrictlyInside) {
    Discriminator disc(NetConfig{64, 16});
    auto rng = seeded_rng(8);
    initialize_parameters(*disc, rng);
    torch::NoGradGuard g;
    const auto y = discriminate(disc, ImageBatch(images(5, 64, 3), Domain::V));
    EXPECT_EQ(y.sizes(), (Shape{5}));
    EXPECT_TRUE(((y > 0) & (y < 1)).all().item<bool>());
}

TEST(Recognizer, UnitEmbeddingsAndLogitWidth) {
    Recognizer rec(NetConfig{32, 4}, 7);
    auto rng = seeded_rng(2);
    initialize_parameters(*rec, rng);
    torch::NoGradGuard g;
    const auto out = recognize(rec, ImageBatch(images(6, 32, 4), Domain::V));
    EXPECT_EQ(out.logits.sizes(), (Shape{6, 7}));
    EXPECT_EQ(out.embedding.sizes(), (Shape{6, 256}));
    EXPECT_LT((out.embedding.norm(2, 1) - 1).abs().max().item<float>(), 1e-5);
}

TEST(Recognizer, SeparateInstancesDoNotAliasParameters) {
    Recognizer e_id(NetConfig{32, 8}, 4), f(NetConfig{32, 8}, 4);
    auto r1 = seeded_rng(1);
    initialize_parameters(*e_id, r1);
    auto r2 = seeded_rng(1);
    initialize_parameters(*f, r2);
    const auto x = images(2, 32, 9);
    torch::NoGradGuard g;
    const auto before = e_id->forward(x).embedding.clone();
    EXPECT_TRUE(torch::equal(before, f->forward(x).embedding));
    for (auto& p : f->parameters()) p.add_(0.05);
    EXPECT_TRUE(torch::equal(before, e_id->forward(x).embedding));
    EXPECT_FALSE(torch::equal(before, f->forward(x).embedding));
}

TEST(Identity, CombineOfEqualEmbeddingsIsThatEmbedding) {
    const auto u = unit_rows(4, 11);
    EXPECT_LT((combine_identity(u, u) - u).abs().max().item<float>(), 1e-6);
}

TEST(Identity, CombineOfOrthogonalAxes) {
    auto e_n = torch::zeros({1, kCodeDim}, torch::kFloat64), e_v = torch::zeros({1, kCodeDim}, torch::kFloat64);
    e_n[0][0] = 1.0;
    e_v[0][1] = 1.0;
    const auto z = combine_identity(e_n, e_v);
    const long double expected = 1.0L / std::sqrt(2.0L);  // (1/2, 1/2) renormalized
    EXPECT_NEAR(z[0][0].item<double>(), static_cast<double>(expected), 1e-12);
    EXPECT_NEAR(z[0][1].item<double>(), static_cast<double>(expected), 1e-12);
    EXPECT_EQ(z.narrow(1, 2, kCodeDim - 2).abs().sum().item<double>(), 0.0);
}

TEST(Identity, EncodeIdentityIsUnitAndChecksBatch) {
    Recognizer rec(NetConfig{32, 8}, 3);
    auto rng = seeded_rng(6);
    initialize_parameters(*rec, rng);
    torch::NoGradGuard g;
    const auto z = encode_identity(rec, ImageBatch(images(5, 32, 1), Domain::N), ImageBatch(images(5, 32, 2), Domain::V));
    EXPECT_LT((z.values().norm(2, 1) - 1).abs().max().item<float>(), 1e-5);
    EXPECT_THROW(encode_identity(rec, ImageBatch(images(5, 32, 1), Domain::N), ImageBatch(images(4, 32, 2), Domain::V)),
                 std::invalid_argument);
}

TEST(Reparameterize, ZeroNoiseGivesMean) {
    const auto mu = torch::randn({3, kCodeDim});
    const auto post = GaussianPosterior::from_sigma(mu, torch::full({3, kCodeDim}, 0.7));
    EXPECT_TRUE(torch::equal(reparameterize(post, torch::zeros_like(mu)), mu));
}

TEST(Reparameterize, DifferentiableInMuAndSigma) {
    auto rng = seeded_rng(12);
    const auto eps = standard_normal(rng, {2, 8}, torch::kFloat64);
    const auto w = standard_normal(rng, {2, 8}, torch::kFloat64);
    const auto check = oracle::finite_difference(
        [&](const std::vector<torch::Tensor>& in) {
            const auto post = GaussianPosterior::from_sigma(in[0], in[1]);
            return (reparameterize(post, eps).pow(3) * w).sum();
        },
        {standard_normal(rng, {2, 8}, torch::kFloat64), standard_normal(rng, {2, 8}, torch::kFloat64).exp()});
    EXPECT_LT(check.rel_error, 1e-5);
}

TEST(Reparameterize, SamplingStatistics) {
    auto rng = seeded_rng(2024);
    const auto post = GaussianPosterior::from_sigma(torch::full({4000, kCodeDim}, 1.5), torch::full({4000, kCodeDim}, 0.5));
    const auto z = reparameterize(post, rng).values().to(torch::kFloat64);
    // 1,024,000 draws: standard errors are 5e-4 for the mean and 3.5e-4 for the deviation.
    EXPECT_NEAR(z.mean().item<double>(), 1.5, 0.003);
    EXPECT_NEAR(z.std().item<double>(), 0.5, 0.003);
    auto a = seeded_rng(5), b = seeded_rng(5);
    EXPECT_TRUE(torch::equal(reparameterize(post, a).values(), reparameterize(post, b).values()));
}

TEST(Adain, InvertsNormalizationWithOwnStatistics) {
    const auto x = torch::randn({2, 4, 8, 8}, torch::kFloat64) * 3 + 1;
    const auto mean = x.mean({2, 3});
    const auto sd = (x - mean.unsqueeze(-1).unsqueeze(-1)).pow(2).mean({2, 3}).sqrt();
    EXPECT_LT((adain(x, sd, mean) - x).abs().max().item<double>(), 1e-4);
}

TEST(Adain, UnitStyleGivesStandardizedChannels) {
    const auto x = torch::randn({3, 5, 6, 6}, torch::kFloat64) * 4 - 2;
    const auto y = adain(x, torch::ones({3, 5}, torch::kFloat64), torch::zeros({3, 5}, torch::kFloat64));
    // Moments computed directly in long double.
    auto acc = y.accessor<double, 4>();
    for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 5; ++c) {
            long double s = 0, s2 = 0;
            for (int i = 0; i < 6; ++i)
                for (int j = 0; j < 6; ++j) s += acc[b][c][i][j];
            const long double m = s / 36;
            for (int i = 0; i < 6; ++i)
                for (int j = 0; j < 6; ++j) s2 += (acc[b][c][i][j] - m) * (acc[b][c][i][j] - m);
            EXPECT_NEAR(static_cast<double>(m), 0.0, 1e-4);
            EXPECT_NEAR(static_cast<double>(std::sqrt(s2 / 36)), 1.0, 1e-3);
        }
}

TEST(Adain, ConstantChannelGivesZero) {
    const auto y = adain(torch::full({1, 2, 4, 4}, 3.0), torch::ones({1, 2}), torch::zeros({1, 2}));
    EXPECT_TRUE(torch::isfinite(y).all().item<bool>());
    EXPECT_EQ(y.abs().max().item<float>(), 0.0f);
}

TEST(Adain, ChannelMismatchThrows) {
    EXPECT_THROW(adain(torch::zeros({1, 3, 4, 4}), torch::ones({1, 2}), torch::zeros({1, 2})), std::invalid_argument);
}

TEST(Initialization, DeterministicFromRng) {
    Generator a(NetConfig{32, 16}), b(NetConfig{32, 16});
    auto r1 = seeded_rng(77), r2 = seeded_rng(77);
    initialize_parameters(*a, r1);
    initialize_parameters(*b, r2);
    EXPECT_EQ(parameter_checksum(*a), parameter_checksum(*b));
}

// Central-difference checks on randomly chosen parameters of each network, in float64.
TEST(Gradients, AttributeEncoder) {
    AttributeEncoder enc(NetConfig{32, 16});
    auto rng = seeded_rng(1);
    initialize_parameters(*enc, rng);
    enc->to(torch::kFloat64);
    const auto x = images(2, 32, 5, torch::kFloat64);
    const auto w = standard_normal(rng, {2, kCodeDim}, torch::kFloat64);
    const auto check = oracle::module_finite_difference(*enc, [&] {
        const auto post = enc->forward(x);
        return (post.mu * w).sum() + post.logvar.exp().sum();
    });
    EXPECT_GE(check.probes, 10);
    EXPECT_LT(check.rel_error, 1e-3);
}

TEST(Gradients, Generator) {
    Generator gen(NetConfig{32, 16});
    auto rng = seeded_rng(2);
    initialize_parameters(*gen, rng);
    gen->to(torch::kFloat64);
    const auto z_id = unit_rows(2, 3).to(torch::kFloat64), z_attr = unit_rows(2, 4).to(torch::kFloat64) * 4;
    const auto w = images(2, 32, 6, torch::kFloat64);
    const auto check = oracle::module_finite_difference(*gen, [&] { return (gen->forward(z_id, z_attr) * w).sum(); });
    EXPECT_LT(check.rel_error, 1e-3);
}

TEST(Gradients, Discriminator) {
    Discriminator disc(NetConfig{32, 16});
    auto rng = seeded_rng(3);
    initialize_parameters(*disc, rng);
    disc->to(torch::kFloat64);
    const auto x = images(3, 32, 7, torch::kFloat64);
    const auto check = oracle::module_finite_difference(*disc, [&] { return disc->forward(x).log().sum(); });
    EXPECT_LT(check.rel_error, 1e-3);
}

TEST(Gradients, Recognizer) {
    Recognizer rec(NetConfig{32, 16}, 5);
    auto rng = seeded_rng(4);
    initialize_parameters(*rec, rng);
    rec->to(torch::kFloat64);
    const auto x = images(2, 32, 8, torch::kFloat64);
    const auto check = oracle::module_finite_difference(*rec, [&] {
        const auto out = rec->forward(x);
        return out.logits.logsumexp(1).sum() + out.embedding.narrow(1, 0, 8).sum();
    });
    EXPECT_LT(check.rel_error, 1e-3);
}
