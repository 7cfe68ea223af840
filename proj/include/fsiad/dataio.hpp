#pragma once

#include "fsiad/rng.hpp"
#include "fsiad/types.hpp"

#include <array>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace fsiad {

inline constexpr std::size_t kIdentityFactorCount = 8;

// Geometry of one synthetic person. Factors, all in [0, 1]:
// face width/height ratio, eye spacing, eye size, nose length, mouth width,
// brow angle, jaw curvature, skin base tone.
struct SubjectSpec {
    std::int64_t subject_id = 0;
    std::array<double, kIdentityFactorCount> identity_factors{};
};

// Identity-unrelated appearance. Values are kept on a 1e-6 grid so that the
// manifest's decimal text reproduces them exactly.
struct AttributeSpec {
    double pose_angle = 0.0;      // degrees, [-30, 30]
    double illumination = 1.0;    // [0.4, 1.0]
    double expression = 0.0;      // mouth curvature, [-1, 1]
    double background_tone = 0.5; // [0, 1]

    void validate() const;
    bool operator==(const AttributeSpec&) const = default;
    auto operator<=>(const AttributeSpec&) const = default;
};

SubjectSpec make_subject(std::uint64_t dataset_seed, std::int64_t subject_id);
AttributeSpec draw_attributes(Rng& rng);

// Deterministic procedural face. Domain V is rendered in colour; domain N is the same
// render passed through 0.8 R + 0.15 G + 0.05 B, gamma 0.8, replicated to 3 channels.
ImageBatch render_face(const SubjectSpec& subject, const AttributeSpec& attr, Domain domain,
                       std::int64_t resolution);

enum class Split { Train, Gallery, Probe, Reserve, Synthetic };
std::string_view split_name(Split s);
Split parse_split(std::string_view s);

struct ManifestRow {
    std::string path;  // relative to the manifest's directory
    std::int64_t subject = -1;
    Domain domain = Domain::V;
    AttributeSpec attr;
    Split split = Split::Train;
    std::int64_t pair_id = -1;  // only for synthetic manifests
};

struct Manifest {
    std::vector<ManifestRow> rows;
    std::filesystem::path root;  // directory the row paths are relative to
    bool has_pair_id = false;

    // (N row index, V row index) for every pair in `split`. Real pairs are matched by
    // (subject, attributes); synthetic pairs by pair_id.
    std::vector<std::pair<std::size_t, std::size_t>> pairs(Split split) const;
    std::set<std::int64_t> subjects(Split split) const;
    std::vector<std::size_t> rows_in(Split split) const;
    std::filesystem::path image_path(std::size_t row) const { return root / rows[row].path; }
};

// TSV with header `path subject domain pose illum expr bg split` (plus `pair_id`).
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

// Renders n_subjects x attrs_per_subject paired images into out_dir/images and writes
// out_dir/manifest.tsv plus out_dir/dataset.json. The first round(0.8 n) subject ids are
// the training split; each remaining subject contributes its first V image to the gallery,
// all of its N images to the probe set and its other V images to the reserve split.
Manifest generate_dataset(std::uint64_t seed, std::int64_t n_subjects, std::int64_t attrs_per_subject,
                          std::int64_t resolution, const std::filesystem::path& out_dir);

// Decoded images of every pair in one split.
struct PairedImages {
    torch::Tensor n;  // P x 3 x R x R in [-1, 1]
    torch::Tensor v;
    std::vector<std::int64_t> subjects;
    std::vector<std::pair<std::size_t, std::size_t>> rows;  // manifest rows of each pair

    std::int64_t size() const { return static_cast<std::int64_t>(subjects.size()); }
    std::int64_t resolution() const { return n.size(2); }
};

PairedImages load_pairs(const Manifest& manifest, Split split);

// Decodes the given manifest rows into a B x 3 x R x R tensor in [-1, 1].
torch::Tensor load_images(const Manifest& manifest, const std::vector<std::size_t>& rows);

struct TrainingSample {
    ImageBatch i_n, i_v;  // source pairs: same subject and attributes per row
    ImageBatch x_n, x_v;  // reference pairs, drawn independently of the source pairs
    std::vector<std::int64_t> i_subjects, x_subjects;
    std::vector<std::int64_t> i_index, x_index;  // indices into the PairedImages
};

// Draws batch_size source pairs, then batch_size reference pairs, uniformly with
// replacement; `rng` is the only source of randomness.
TrainingSample sample_training_pairs(const PairedImages& pairs, Rng& rng, std::int64_t batch_size);

}  // namespace fsiad
