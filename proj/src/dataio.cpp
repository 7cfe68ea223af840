#include "fsiad/dataio.hpp"

#include "fsiad/image_io.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace fsiad {

namespace {

struct Rgb {
    double r, g, b;
};

Rgb lerp(const Rgb& a, const Rgb& b, double t) {
    return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

Rgb scale(const Rgb& c, double s) { return {c.r * s, c.g * s, c.b * s}; }

double round6(double v) { return std::round(v * 1e6) / 1e6; }

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

// Precomputed face layout in face-local coordinates (x right, y down, unit = half image).
struct FaceLayout {
    double cx = 0.0, cy = 0.05;
    double cos_r, sin_r;
    double half_w, half_h, jaw_power;
    double feature_shift;
    double eye_x, eye_y, eye_rx, eye_ry;
    double brow_y, brow_half_len, brow_half_thick, brow_tilt;
    double nose_top, nose_bottom, nose_half_base;
    double mouth_y, mouth_half_w, mouth_curve, mouth_half_thick;
    Rgb skin, nose, eye, brow, mouth, background;

    FaceLayout(const SubjectSpec& s, const AttributeSpec& a) {
        const auto& f = s.identity_factors;
        const double roll = deg2rad(a.pose_angle) / 3.0;
        cos_r = std::cos(roll);
        sin_r = std::sin(roll);
        half_h = 0.70;
        half_w = half_h * (0.60 + 0.25 * f[0]);
        jaw_power = 1.5 + 1.5 * f[6];
        feature_shift = 0.3 * half_w * std::sin(deg2rad(a.pose_angle));
        eye_x = half_w * (0.30 + 0.25 * f[1]);
        eye_y = -0.18;
        eye_rx = 0.045 + 0.05 * f[2];
        eye_ry = 0.6 * eye_rx;
        brow_y = eye_y - eye_ry - 0.08;
        brow_half_len = 1.3 * eye_rx;
        brow_half_thick = 0.022;
        brow_tilt = (f[5] - 0.5) * 0.7;
        nose_top = -0.12;
        nose_bottom = nose_top + 0.15 + 0.17 * f[3];
        nose_half_base = 0.06;
        mouth_y = nose_bottom + 0.12;
        mouth_half_w = half_w * (0.28 + 0.30 * f[4]);
        mouth_curve = 0.09 * a.expression;
        mouth_half_thick = 0.03;

        const Rgb skin_base = lerp({0.96, 0.82, 0.72}, {0.42, 0.28, 0.20}, f[7]);
        skin = scale(skin_base, a.illumination);
        nose = scale(skin_base, 0.78 * a.illumination);
        eye = scale({0.08, 0.06, 0.05}, a.illumination);
        brow = scale({0.20, 0.12, 0.08}, a.illumination);
        mouth = scale({0.70, 0.18, 0.22}, a.illumination);
        background = lerp({0.10, 0.20, 0.40}, {0.80, 0.85, 0.70}, a.background_tone);
    }

    bool in_face(double x, double y) const {
        const double nx = std::abs(x / half_w), ny = y / half_h;
        if (y <= 0) return nx * nx + ny * ny <= 1.0;
        return std::pow(nx, jaw_power) + ny * ny <= 1.0;
    }

    bool in_eye(double x, double y) const {
        const double dx = (std::abs(x) - eye_x) / eye_rx, dy = (y - eye_y) / eye_ry;
        return dx * dx + dy * dy <= 1.0;
    }

    bool in_brow(double x, double y) const {
        // Mirror the left brow onto the right so the tilt is symmetric.
        const double mx = std::abs(x) - eye_x, my = y - brow_y;
        const double c = std::cos(brow_tilt), s = std::sin(brow_tilt);
        const double along = c * mx + s * my, across = -s * mx + c * my;
        return std::abs(along) <= brow_half_len && std::abs(across) <= brow_half_thick;
    }

    bool in_nose(double x, double y) const {
        if (y < nose_top || y > nose_bottom) return false;
        const double t = (y - nose_top) / (nose_bottom - nose_top);
        return std::abs(x) <= t * nose_half_base;
    }

    bool in_mouth(double x, double y) const {
        if (std::abs(x) > mouth_half_w) return false;
        const double u = x / mouth_half_w;
        const double centre = mouth_y + mouth_curve * (1.0 - u * u);
        return std::abs(y - centre) <= mouth_half_thick;
    }

    Rgb shade(double u, double v) const {
        const double px = u - cx, py = v - cy;
        const double x = cos_r * px + sin_r * py;
        const double y = -sin_r * px + cos_r * py;
        if (!in_face(x, y)) return background;
        const double fx = x - feature_shift;
        if (in_eye(fx, y)) return eye;
        if (in_brow(fx, y)) return brow;
        if (in_mouth(fx, y)) return mouth;
        if (in_nose(fx, y)) return nose;
        return skin;
    }
};

void check_range(double v, double lo, double hi, const char* what) {
    if (!(v >= lo && v <= hi))
        throw std::invalid_argument(std::string(what) + " = " + std::to_string(v) + " outside [" +
                                    std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

std::string format6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, '\t')) out.push_back(cell);
    if (!line.empty() && line.back() == '\t') out.emplace_back();
    return out;
}

}  // namespace

void AttributeSpec::validate() const {
    check_range(pose_angle, -30.0, 30.0, "pose_angle");
    check_range(illumination, 0.4, 1.0, "illumination");
    check_range(expression, -1.0, 1.0, "expression");
    check_range(background_tone, 0.0, 1.0, "background_tone");
}

SubjectSpec make_subject(std::uint64_t dataset_seed, std::int64_t subject_id) {
    Rng rng(mix_seed(dataset_seed, 0x5u, static_cast<std::uint64_t>(subject_id)));
    SubjectSpec s;
    s.subject_id = subject_id;
    for (auto& f : s.identity_factors) f = rng.uniform();
    return s;
}

AttributeSpec draw_attributes(Rng& rng) {
    AttributeSpec a;
    a.pose_angle = round6(rng.uniform(-30.0, 30.0));
    a.illumination = round6(rng.uniform(0.4, 1.0));
    a.expression = round6(rng.uniform(-1.0, 1.0));
    a.background_tone = round6(rng.uniform(0.0, 1.0));
    return a;
}

ImageBatch render_face(const SubjectSpec& subject, const AttributeSpec& attr, Domain domain,
                       std::int64_t resolution) {
    if (!valid_resolution(resolution))
        throw std::invalid_argument("render_face: resolution must be 32, 64 or 128");
    for (std::size_t i = 0; i < subject.identity_factors.size(); ++i)
        check_range(subject.identity_factors[i], 0.0, 1.0, "identity factor");
    attr.validate();

    constexpr int kSuper = 4;
    const FaceLayout layout(subject, attr);
    const auto res = resolution;
    auto img = torch::empty({1, 3, res, res}, torch::kFloat32);
    auto acc = img.accessor<float, 4>();
    for (std::int64_t row = 0; row < res; ++row) {
        for (std::int64_t col = 0; col < res; ++col) {
            Rgb sum{0, 0, 0};
            for (int sy = 0; sy < kSuper; ++sy) {
                for (int sx = 0; sx < kSuper; ++sx) {
                    const double u = (col + (sx + 0.5) / kSuper) / res * 2.0 - 1.0;
                    const double v = (row + (sy + 0.5) / kSuper) / res * 2.0 - 1.0;
                    const Rgb c = layout.shade(u, v);
                    sum.r += c.r;
                    sum.g += c.g;
                    sum.b += c.b;
                }
            }
            Rgb c = scale(sum, 1.0 / (kSuper * kSuper));
            if (domain == Domain::N) {
                const double gray = std::pow(std::clamp(0.8 * c.r + 0.15 * c.g + 0.05 * c.b, 0.0, 1.0), 0.8);
                c = {gray, gray, gray};
            }
            acc[0][0][row][col] = static_cast<float>(std::clamp(c.r, 0.0, 1.0) * 2.0 - 1.0);
            acc[0][1][row][col] = static_cast<float>(std::clamp(c.g, 0.0, 1.0) * 2.0 - 1.0);
            acc[0][2][row][col] = static_cast<float>(std::clamp(c.b, 0.0, 1.0) * 2.0 - 1.0);
        }
    }
    return ImageBatch(img, domain);
}

std::string_view split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Gallery: return "gallery";
        case Split::Probe: return "probe";
        case Split::Reserve: return "reserve";
        case Split::Synthetic: return "synthetic";
    }
    return "?";
}

Split parse_split(std::string_view s) {
    for (Split v : {Split::Train, Split::Gallery, Split::Probe, Split::Reserve, Split::Synthetic})
        if (split_name(v) == s) return v;
    throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

std::vector<std::pair<std::size_t, std::size_t>> Manifest::pairs(Split split) const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    if (split == Split::Synthetic) {
        std::map<std::int64_t, std::pair<long, long>> by_id;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].split != Split::Synthetic) continue;
            auto& slot = by_id.try_emplace(rows[i].pair_id, -1L, -1L).first->second;
            (rows[i].domain == Domain::N ? slot.first : slot.second) = static_cast<long>(i);
        }
        for (const auto& [id, p] : by_id)
            if (p.first >= 0 && p.second >= 0) out.emplace_back(p.first, p.second);
        return out;
    }
    std::map<std::pair<std::int64_t, AttributeSpec>, std::size_t> v_rows;
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i].domain == Domain::V) v_rows.emplace(std::make_pair(rows[i].subject, rows[i].attr), i);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].domain != Domain::N || rows[i].split != split) continue;
        auto it = v_rows.find({rows[i].subject, rows[i].attr});
        if (it != v_rows.end()) out.emplace_back(i, it->second);
    }
    return out;
}

std::set<std::int64_t> Manifest::subjects(Split split) const {
    std::set<std::int64_t> out;
    for (const auto& r : rows)
        if (r.split == split) out.insert(r.subject);
    return out;
}

std::vector<std::size_t> Manifest::rows_in(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i].split == split) out.push_back(i);
    return out;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write manifest '" + path.string() + "'");
    out << "path\tsubject\tdomain\tpose\tillum\texpr\tbg\tsplit";
    if (manifest.has_pair_id) out << "\tpair_id";
    out << '\n';
    for (const auto& r : manifest.rows) {
        out << r.path << '\t' << r.subject << '\t' << domain_name(r.domain) << '\t' << format6(r.attr.pose_angle)
            << '\t' << format6(r.attr.illumination) << '\t' << format6(r.attr.expression) << '\t'
            << format6(r.attr.background_tone) << '\t' << split_name(r.split);
        if (manifest.has_pair_id) out << '\t' << r.pair_id;
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for manifest '" + path.string() + "'");
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest '" + path.string() + "'");
    Manifest m;
    m.root = path.parent_path();
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty manifest '" + path.string() + "'");
    const auto header = split_tabs(line);
    const std::vector<std::string> base{"path", "subject", "domain", "pose", "illum", "expr", "bg", "split"};
    if (header.size() < base.size() || !std::equal(base.begin(), base.end(), header.begin()))
        throw std::runtime_error("manifest '" + path.string() + "' has an unexpected header");
    m.has_pair_id = header.size() == base.size() + 1 && header.back() == "pair_id";
    const std::size_t ncols = header.size();
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split_tabs(line);
        if (cells.size() != ncols)
            throw std::runtime_error("manifest line " + std::to_string(lineno) + ": expected " +
                                     std::to_string(ncols) + " columns");
        try {
            ManifestRow r;
            r.path = cells[0];
            r.subject = std::stoll(cells[1]);
            r.domain = parse_domain(cells[2]);
            r.attr.pose_angle = std::stod(cells[3]);
            r.attr.illumination = std::stod(cells[4]);
            r.attr.expression = std::stod(cells[5]);
            r.attr.background_tone = std::stod(cells[6]);
            r.split = parse_split(cells[7]);
            if (m.has_pair_id) r.pair_id = std::stoll(cells[8]);
            m.rows.push_back(std::move(r));
        } catch (const std::logic_error& e) {
            throw std::runtime_error("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return m;
}

Manifest generate_dataset(std::uint64_t seed, std::int64_t n_subjects, std::int64_t attrs_per_subject,
                          std::int64_t resolution, const std::filesystem::path& out_dir) {
    if (n_subjects < 4) throw std::invalid_argument("generate_dataset: need at least 4 subjects");
    if (attrs_per_subject < 1) throw std::invalid_argument("generate_dataset: need at least 1 attribute draw");
    if (!valid_resolution(resolution)) throw std::invalid_argument("generate_dataset: bad resolution");

    std::error_code ec;
    std::filesystem::create_directories(out_dir / "images", ec);
    if (ec) throw std::runtime_error("cannot create dataset directory '" + out_dir.string() + "': " + ec.message());

    const auto n_train = std::clamp<std::int64_t>(std::llround(0.8 * static_cast<double>(n_subjects)), 1,
                                                  n_subjects - 1);
    Manifest m;
    m.root = out_dir;
    for (std::int64_t s = 0; s < n_subjects; ++s) {
        const SubjectSpec subject = make_subject(seed, s);
        Rng rng(mix_seed(seed, 0xA77u, static_cast<std::uint64_t>(s)));
        std::set<AttributeSpec> seen;
        for (std::int64_t a = 0; a < attrs_per_subject; ++a) {
            AttributeSpec attr = draw_attributes(rng);
            while (!seen.insert(attr).second) attr = draw_attributes(rng);
            for (Domain d : {Domain::N, Domain::V}) {
                char name[64];
                std::snprintf(name, sizeof name, "images/s%03lld_a%02lld_%s.png", static_cast<long long>(s),
                              static_cast<long long>(a), d == Domain::N ? "N" : "V");
                const auto img = render_face(subject, attr, d, resolution);
                write_png(out_dir / name, quantize(img.data()[0]));

                ManifestRow row;
                row.path = name;
                row.subject = s;
                row.domain = d;
                row.attr = attr;
                if (s < n_train)
                    row.split = Split::Train;
                else if (d == Domain::N)
                    row.split = Split::Probe;
                else
                    row.split = a == 0 ? Split::Gallery : Split::Reserve;
                m.rows.push_back(std::move(row));
            }
        }
    }
    write_manifest(m, out_dir / "manifest.tsv");

    nlohmann::json info{{"seed", seed},
                        {"n_subjects", n_subjects},
                        {"attrs_per_subject", attrs_per_subject},
                        {"resolution", resolution},
                        {"train_subjects", n_train}};
    std::ofstream(out_dir / "dataset.json") << info.dump(2) << '\n';
    return m;
}

torch::Tensor load_images(const Manifest& manifest, const std::vector<std::size_t>& rows) {
    std::vector<torch::Tensor> images;
    images.reserve(rows.size());
    for (auto r : rows) {
        auto img = to_signed_unit(read_png(manifest.image_path(r)));
        if (!images.empty() && !img.sizes().equals(images.front().sizes()))
            throw std::runtime_error("image '" + manifest.rows[r].path + "' has a different size");
        images.push_back(std::move(img));
    }
    if (images.empty()) return torch::empty({0, 3, 0, 0});
    return torch::stack(images);
}

PairedImages load_pairs(const Manifest& manifest, Split split) {
    PairedImages p;
    p.rows = manifest.pairs(split);
    std::vector<std::size_t> n_rows, v_rows;
    for (const auto& [n, v] : p.rows) {
        n_rows.push_back(n);
        v_rows.push_back(v);
        p.subjects.push_back(manifest.rows[n].subject);
    }
    p.n = load_images(manifest, n_rows);
    p.v = load_images(manifest, v_rows);
    return p;
}

TrainingSample sample_training_pairs(const PairedImages& pairs, Rng& rng, std::int64_t batch_size) {
    if (pairs.size() == 0) throw std::runtime_error("sample_training_pairs: the training split is empty");
    if (batch_size < 1) throw std::invalid_argument("sample_training_pairs: batch_size must be >= 1");
    TrainingSample s;
    const auto count = static_cast<std::uint64_t>(pairs.size());
    for (std::int64_t b = 0; b < batch_size; ++b) s.i_index.push_back(static_cast<std::int64_t>(rng.below(count)));
    for (std::int64_t b = 0; b < batch_size; ++b) s.x_index.push_back(static_cast<std::int64_t>(rng.below(count)));
    for (auto i : s.i_index) s.i_subjects.push_back(pairs.subjects[i]);
    for (auto i : s.x_index) s.x_subjects.push_back(pairs.subjects[i]);
    const auto ii = torch::tensor(s.i_index, torch::kInt64);
    const auto xi = torch::tensor(s.x_index, torch::kInt64);
    s.i_n = ImageBatch(pairs.n.index_select(0, ii), Domain::N);
    s.i_v = ImageBatch(pairs.v.index_select(0, ii), Domain::V);
    s.x_n = ImageBatch(pairs.n.index_select(0, xi), Domain::N);
    s.x_v = ImageBatch(pairs.v.index_select(0, xi), Domain::V);
    return s;
}

}  // namespace fsiad
