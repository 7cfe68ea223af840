#include "fsiad/dataio.hpp"
#include "fsiad/image_io.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <map>

using namespace fsiad;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
    return out;
}

// Boundary of the set of pixels that differ from the background colour, by 4-neighbour change.
torch::Tensor silhouette_edges(const torch::Tensor& img) {
    const auto x = img[0].to(torch::kFloat64);  // 3 x H x W
    const auto bg = x.index({torch::indexing::Slice(), 0, 0}).view({3, 1, 1});
    const auto face = ((x - bg).abs().amax(0) > 1e-6).to(torch::kInt32);
    const auto h = face.size(0), w = face.size(1);
    auto edges = torch::zeros({h, w}, torch::kInt32);
    using torch::indexing::Slice;
    edges.index_put_({Slice(0, h - 1), Slice()},
                     edges.index({Slice(0, h - 1), Slice()}) |
                         (face.index({Slice(0, h - 1), Slice()}) != face.index({Slice(1, h), Slice()})).to(torch::kInt32));
    edges.index_put_({Slice(), Slice(0, w - 1)},
                     edges.index({Slice(), Slice(0, w - 1)}) |
                         (face.index({Slice(), Slice(0, w - 1)}) != face.index({Slice(), Slice(1, w)})).to(torch::kInt32));
    return edges;
}

AttributeSpec attr_with(double pose, double illum, double expr, double bg) {
    AttributeSpec a;
    a.pose_angle = pose;
    a.illumination = illum;
    a.expression = expr;
    a.background_tone = bg;
    return a;
}

}  // namespace

TEST(Render, DomainsShareSilhouetteEdges) {
    for (std::int64_t s = 0; s < 4; ++s) {
        const auto subject = make_subject(11, s);
        for (const auto& attr : {attr_with(0, 1, 0, 0.2), attr_with(-25, 0.5, 0.7, 0.9), attr_with(18, 0.8, -1, 0.5)}) {
            const auto v = render_face(subject, attr, Domain::V, 64).data();
            const auto n = render_face(subject, attr, Domain::N, 64).data();
            const auto ev = silhouette_edges(v), en = silhouette_edges(n);
            EXPECT_GT(ev.sum().item<int>(), 50);
            EXPECT_TRUE(torch::equal(ev, en)) << "subject " << s;
        }
    }
}

TEST(Render, NDomainIsGrayscaleReplicated) {
    const auto n = render_face(make_subject(1, 0), attr_with(5, 0.9, 0.2, 0.4), Domain::N, 32).data()[0];
    EXPECT_TRUE(torch::equal(n[0], n[1]));
    EXPECT_TRUE(torch::equal(n[1], n[2]));
}

TEST(Render, Deterministic) {
    const auto a = render_face(make_subject(3, 2), attr_with(10, 0.7, 0.1, 0.3), Domain::V, 128).data();
    const auto b = render_face(make_subject(3, 2), attr_with(10, 0.7, 0.1, 0.3), Domain::V, 128).data();
    EXPECT_TRUE(torch::equal(a, b));
}

TEST(Render, MeanIntensityIncreasesWithIllumination) {
    const auto subject = make_subject(5, 1);
    for (Domain d : {Domain::N, Domain::V}) {
        double previous = -2.0;
        for (double illum : {0.4, 0.55, 0.7, 0.85, 1.0}) {
            const double mean = render_face(subject, attr_with(0, illum, 0, 0.5), d, 64).data().mean().item<double>();
            EXPECT_GT(mean, previous) << "illumination " << illum;
            previous = mean;
        }
    }
}

TEST(Render, IdentityFactorsChangeGeometry) {
    const auto attr = attr_with(0, 1, 0, 0.5);
    const auto a = render_face(make_subject(2, 0), attr, Domain::V, 64).data();
    const auto b = render_face(make_subject(2, 1), attr, Domain::V, 64).data();
    EXPECT_FALSE(torch::equal(silhouette_edges(a), silhouette_edges(b)));
}

TEST(Render, RejectsOutOfRangeInputs) {
    auto subject = make_subject(1, 0);
    EXPECT_THROW(render_face(subject, attr_with(45, 1, 0, 0.5), Domain::V, 64), std::invalid_argument);
    EXPECT_THROW(render_face(subject, attr_with(0, 0.2, 0, 0.5), Domain::V, 64), std::invalid_argument);
    EXPECT_THROW(render_face(subject, attr_with(0, 1, 0, 0.5), Domain::V, 48), std::invalid_argument);
    subject.identity_factors[3] = 1.5;
    EXPECT_THROW(render_face(subject, attr_with(0, 1, 0, 0.5), Domain::V, 64), std::invalid_argument);
}

TEST(Subjects, FactorsDependOnlyOnSeedAndId) {
    EXPECT_EQ(make_subject(9, 4).identity_factors, make_subject(9, 4).identity_factors);
    EXPECT_NE(make_subject(9, 4).identity_factors, make_subject(9, 5).identity_factors);
    EXPECT_NE(make_subject(9, 4).identity_factors, make_subject(10, 4).identity_factors);
    for (double f : make_subject(9, 4).identity_factors) {
        EXPECT_GE(f, 0.0);
        EXPECT_LE(f, 1.0);
    }
}

TEST(Dataset, SameSeedGivesIdenticalTrees) {
    const auto a = oracle::scratch_dir("ds_a"), b = oracle::scratch_dir("ds_b");
    generate_dataset(7, 6, 3, 32, a);
    generate_dataset(7, 6, 3, 32, b);
    const auto ta = tree(a), tb = tree(b);
    EXPECT_EQ(ta.size(), 6u * 3 * 2 + 2);
    EXPECT_TRUE(ta == tb);
}

TEST(Dataset, CountsSplitsAndDisjointness) {
    const auto dir = oracle::scratch_dir("ds_count");
    const auto m = generate_dataset(3, 10, 6, 32, dir);
    EXPECT_EQ(m.rows.size(), 120u);
    const auto reread = read_manifest(dir / "manifest.tsv");
    ASSERT_EQ(reread.rows.size(), 120u);

    const auto train = reread.subjects(Split::Train);
    const auto gallery = reread.subjects(Split::Gallery);
    const auto probe = reread.subjects(Split::Probe);
    EXPECT_EQ(train.size(), 8u);
    EXPECT_EQ(gallery.size(), 2u);
    EXPECT_EQ(gallery, probe);
    for (auto s : gallery) EXPECT_EQ(train.count(s), 0u);
    EXPECT_EQ(reread.rows_in(Split::Gallery).size(), 2u);  // one V image per held-out subject
    EXPECT_EQ(reread.rows_in(Split::Probe).size(), 12u);   // every N image of held-out subjects
    for (auto r : reread.rows_in(Split::Gallery)) EXPECT_EQ(reread.rows[r].domain, Domain::V);
    for (auto r : reread.rows_in(Split::Probe)) EXPECT_EQ(reread.rows[r].domain, Domain::N);

    std::set<std::tuple<std::int64_t, AttributeSpec, Domain>> unique;
    for (const auto& r : reread.rows) unique.insert({r.subject, r.attr, r.domain});
    EXPECT_EQ(unique.size(), reread.rows.size());

    for (std::size_t i = 0; i < m.rows.size(); ++i) {
        EXPECT_EQ(reread.rows[i].path, m.rows[i].path);
        EXPECT_EQ(reread.rows[i].attr, m.rows[i].attr);
        EXPECT_EQ(reread.rows[i].split, m.rows[i].split);
    }
}

TEST(Dataset, ImagesDecodeAtResolutionAndMatchRerender) {
    const auto dir = oracle::scratch_dir("ds_pair");
    const auto m = generate_dataset(21, 4, 2, 32, dir);
    for (const auto& [n, v] : m.pairs(Split::Train)) {
        for (auto row : {n, v}) {
            const auto img = read_png(m.image_path(row));
            EXPECT_EQ(img.sizes(), (std::vector<std::int64_t>{3, 32, 32}));
            const auto& r = m.rows[row];
            const auto again = quantize(render_face(make_subject(21, r.subject), r.attr, r.domain, 32).data()[0]);
            EXPECT_TRUE(torch::equal(img, again)) << r.path;
        }
        EXPECT_EQ(m.rows[n].subject, m.rows[v].subject);
        EXPECT_EQ(m.rows[n].attr, m.rows[v].attr);
    }
}

TEST(Dataset, UnwritableDirectoryThrows) {
    const auto dir = oracle::scratch_dir("ds_bad");
    std::ofstream(dir / "file") << "x";
    EXPECT_THROW(generate_dataset(1, 4, 1, 32, dir / "file" / "sub"), std::runtime_error);
}

TEST(Dataset, TooFewSubjectsThrows) {
    EXPECT_THROW(generate_dataset(1, 3, 1, 32, oracle::scratch_dir("ds_few")), std::invalid_argument);
}

class Sampling : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        const auto dir = oracle::scratch_dir("ds_sample");
        manifest_ = new Manifest(generate_dataset(4, 6, 3, 32, dir));
        pairs_ = new PairedImages(load_pairs(*manifest_, Split::Train));
    }
    static void TearDownTestSuite() {
        delete pairs_;
        delete manifest_;
    }
    static Manifest* manifest_;
    static PairedImages* pairs_;
};
Manifest* Sampling::manifest_ = nullptr;
PairedImages* Sampling::pairs_ = nullptr;

TEST_F(Sampling, ShapesAndPairing) {
    auto rng = seeded_rng(1);
    const auto s = sample_training_pairs(*pairs_, rng, 4);
    for (const auto* b : {&s.i_n, &s.i_v, &s.x_n, &s.x_v})
        EXPECT_EQ(b->data().sizes(), (std::vector<std::int64_t>{4, 3, 32, 32}));
    EXPECT_EQ(s.i_n.domain(), Domain::N);
    EXPECT_EQ(s.i_v.domain(), Domain::V);
    for (std::size_t k = 0; k < 4; ++k) {
        const auto& [n, v] = pairs_->rows[static_cast<std::size_t>(s.i_index[k])];
        EXPECT_EQ(manifest_->rows[n].subject, manifest_->rows[v].subject);
        EXPECT_EQ(manifest_->rows[n].attr, manifest_->rows[v].attr);
        EXPECT_EQ(s.i_subjects[k], manifest_->rows[n].subject);
    }
}

TEST_F(Sampling, FixedRngStateGivesIdenticalSample) {
    auto a = seeded_rng(99), b = seeded_rng(99);
    const auto s1 = sample_training_pairs(*pairs_, a, 5);
    const auto s2 = sample_training_pairs(*pairs_, b, 5);
    EXPECT_EQ(s1.i_index, s2.i_index);
    EXPECT_EQ(s1.x_index, s2.x_index);
    EXPECT_TRUE(torch::equal(s1.x_v.data(), s2.x_v.data()));
}

TEST_F(Sampling, ReferenceSubjectsAreIndependentOfSources) {
    auto rng = seeded_rng(5);
    int differing = 0;
    for (int draw = 0; draw < 100; ++draw) {
        const auto s = sample_training_pairs(*pairs_, rng, 1);
        differing += s.i_subjects[0] != s.x_subjects[0];
    }
    EXPECT_GT(differing, 0);
}

TEST_F(Sampling, EmptySplitThrows) {
    PairedImages empty;
    auto rng = seeded_rng(0);
    EXPECT_THROW(sample_training_pairs(empty, rng, 2), std::runtime_error);
}
