#include "fsiad/cli.hpp"

#include "fsiad/evalmetrics.hpp"
#include "fsiad/hfr.hpp"
#include "fsiad/rng.hpp"
#include "fsiad/trainer.hpp"

#include <CLI11.hpp>
#include <torch/torch.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <optional>
#include <sstream>

#ifndef FSIAD_VERSION
#define FSIAD_VERSION "0.0.0"
#endif
#ifndef FSIAD_GIT_DESCRIBE
#define FSIAD_GIT_DESCRIBE "unknown"
#endif

namespace fsiad {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSynthesizeStream = 0x5E7;
constexpr std::uint64_t kEvalStream = 0xE5A;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct Options {
    std::string config_path;
    std::optional<std::int64_t> seed;
    std::string out;
    std::vector<std::string> sets;
    std::string data;
    std::string recognizer;
    std::string fsiad;
    std::string synthetic;
    std::vector<std::string> checkpoints;
    std::optional<std::int64_t> count;
};

TrainConfig resolve_config(const Options& o) {
    TrainConfig cfg = o.config_path.empty() ? TrainConfig{} : load_config(o.config_path);
    for (const auto& kv : o.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.seed) cfg.seed = *o.seed;
    validate(cfg);
    return cfg;
}

Manifest open_dataset(const std::string& where) {
    if (where.empty()) throw UsageError("--data is required");
    fs::path p(where);
    if (fs::is_directory(p)) p /= "manifest.tsv";
    return read_manifest(p);
}

const std::string& need(const std::string& value, const char* flag) {
    if (value.empty()) throw UsageError(std::string(flag) + " is required");
    return value;
}

void make_out_dir(const fs::path& out) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out))
        throw std::runtime_error("cannot create output directory '" + out.string() + "'" +
                                 (ec ? ": " + ec.message() : std::string()));
}

void write_json(const nlohmann::json& j, const fs::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
    f << j.dump(2) << '\n';
}

torch::Tensor recognizer_features(Recognizer& rec, const torch::Tensor& images) {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> parts;
    for (std::int64_t start = 0; start < images.size(0); start += 64)
        parts.push_back(rec->forward(images.narrow(0, start, std::min<std::int64_t>(64, images.size(0) - start))).features);
    return torch::cat(parts).to(torch::kFloat64);
}

LabeledEmbeddings labeled(const EmbeddingTable& t) { return {t.embeddings, t.subjects}; }

// Subcommand bodies. Each returns the outputs it wrote, relative to the output directory.
using Outputs = std::vector<std::string>;

Outputs run_gen_data(const Options&, const TrainConfig& cfg, const fs::path& out, std::ostream& log) {
    const auto m = generate_dataset(static_cast<std::uint64_t>(cfg.seed), cfg.n_subjects, cfg.attrs_per_subject,
                                    cfg.resolution, out);
    log << "gen-data: " << m.rows.size() << " images at " << cfg.resolution << "x" << cfg.resolution << " in "
        << out.string() << '\n';
    return {"manifest.tsv", "dataset.json", "images"};
}

Outputs run_pretrain(const Options& o, const TrainConfig& cfg, const fs::path& out, std::ostream& log) {
    const auto m = open_dataset(o.data);
    make_out_dir(out);
    const auto r = pretrain_recognizer(m, cfg);
    save_checkpoint(r.checkpoint, out / "recognizer.ckpt");
    write_json({{"train_accuracy", r.train_accuracy}, {"epochs", cfg.pretrain_epochs}}, out / "pretrain.json");
    log << "pretrain: train accuracy " << r.train_accuracy << '\n';
    return {"recognizer.ckpt", "pretrain.json"};
}

Outputs run_train_fsiad(const Options& o, const TrainConfig& cfg, const fs::path& out, std::ostream& log) {
    const auto m = open_dataset(o.data);
    const auto rec = load_checkpoint(need(o.recognizer, "--recognizer"));
    make_out_dir(out);
    const auto run = train_fsiad(m, rec, cfg, out);
    const auto& last = run.history.back().report;
    log << "train-fsiad: " << run.history.size() << " iterations, final dis " << last.get("dis") << " int "
        << last.get("int") << '\n';
    return {"fsiad.ckpt", "fsiad_losses.csv", "disc_stats.csv", "checkpoints"};
}

Outputs run_synthesize(const Options& o, const TrainConfig& cfg, const fs::path& out, std::ostream& log) {
    const auto m = open_dataset(o.data);
    const auto model = load_checkpoint(need(o.fsiad, "--fsiad"));
    const auto n = o.count.value_or(cfg.augment_count);
    Rng rng(mix_seed(static_cast<std::uint64_t>(cfg.seed), kSynthesizeStream));
    const auto synth = synthesize_pairs(model, m, n, rng, out);
    log << "synthesize: " << synth.rows.size() / 2 << " pairs in " << out.string() << '\n';
    return {"manifest.tsv", "images"};
}

Outputs run_train_hfr(const Options& o, const TrainConfig& cfg, const fs::path& out, std::ostream& log) {
    const auto m = open_dataset(o.data);
    const auto init = load_checkpoint(need(o.recognizer, "--recognizer"));
    std::optional<Manifest> synth;
    if (!o.synthetic.empty()) synth = open_dataset(o.synthetic);
    make_out_dir(out);
    const auto r = finetune_hfr(init, m, synth ? &*synth : nullptr, cfg);
    save_checkpoint(r.checkpoint, out / "hfr.ckpt");
    {
        std::ofstream csv(out / "hfr_losses.csv", std::ios::trunc);
        if (!csv) throw std::runtime_error("cannot write hfr_losses.csv");
        LossReport::zeros().write_csv_header(csv);
        for (std::size_t i = 0; i < r.history.size(); ++i)
            r.history[i].write_csv_row(csv, static_cast<std::int64_t>(i + 1));
    }
    std::ostringstream line;
    line << "optimizer=sgd lr=" << cfg.sgd_lr << " momentum=" << cfg.sgd_momentum
         << " weight_decay=" << cfg.sgd_weight_decay << " gamma=" << cfg.gamma << " steps=" << cfg.hfr_steps
         << " batch_size=" << cfg.batch_size << " mode=" << (synth ? "augmented" : "baseline") << '\n';
    std::ofstream(out / "train_hfr.log", std::ios::trunc) << line.str();
    log << "train-hfr: " << line.str();
    return {"hfr.ckpt", "hfr_losses.csv", "train_hfr.log"};
}

Outputs run_eval(const Options& o, const TrainConfig& cfg, const fs::path& out, std::ostream& log) {
    const auto m = open_dataset(o.data);
    if (o.checkpoints.empty()) throw UsageError("--checkpoint is required (repeatable)");
    std::vector<Checkpoint> ckpts;
    for (const auto& c : o.checkpoints) ckpts.push_back(load_checkpoint(c));
    std::optional<Checkpoint> model;
    if (!o.fsiad.empty()) model = load_checkpoint(o.fsiad);
    make_out_dir(out);

    const auto gallery_rows = m.rows_in(Split::Gallery);
    const auto probe_rows = m.rows_in(Split::Probe);
    const bool single = ckpts.size() == 1;
    Outputs outputs;
    std::vector<MetricsSummary> summaries;
    for (std::size_t k = 0; k < ckpts.size(); ++k) {
        const auto gallery = embed_set(ckpts[k], m, gallery_rows);
        const auto probe = embed_set(ckpts[k], m, probe_rows);
        MetricsSummary s;
        s.rank1 = rank1(labeled(gallery), labeled(probe));
        const auto roc = roc_and_vr(make_scores(labeled(gallery), labeled(probe)), standard_far_levels());
        for (std::size_t i = 0; i < roc.vr.size(); ++i) s.vr[far_label(standard_far_levels()[i])] = roc.vr[i];
        if (model) {
            const auto sm = evaluate_synthesis(*model, ckpts[k], m, cfg.seed);
            s.fid_n = sm.fid_n;
            s.fid_v = sm.fid_v;
            s.ssim_n = sm.ssim_n;
            s.ssim_v = sm.ssim_v;
        }
        const std::string suffix = single ? "" : "_" + std::to_string(k);
        write_metrics_json(s, out / ("metrics" + suffix + ".json"));
        write_roc_csv(roc.table, out / ("roc" + suffix + ".csv"));
        write_embedding_csv(probe, out / ("probe_embeddings" + suffix + ".csv"));
        outputs.insert(outputs.end(),
                       {"metrics" + suffix + ".json", "roc" + suffix + ".csv", "probe_embeddings" + suffix + ".csv"});
        summaries.push_back(std::move(s));
    }

    char buf[160];
    std::snprintf(buf, sizeof buf, "%-4s %-9s %-9s %-9s %-9s  %s\n", "#", "rank1", "vr@1%", "vr@0.1%", "vr@0.01%",
                  "checkpoint");
    log << buf;
    for (std::size_t k = 0; k < summaries.size(); ++k) {
        const auto& s = summaries[k];
        std::snprintf(buf, sizeof buf, "%-4zu %-9.4f %-9.4f %-9.4f %-9.4f  %s\n", k, *s.rank1, s.vr.at("vr@1%"),
                      s.vr.at("vr@0.1%"), s.vr.at("vr@0.01%"), o.checkpoints[k].c_str());
        log << buf;
    }
    return outputs;
}

Outputs run_eval_synthesis(const Options& o, const TrainConfig& cfg, const fs::path& out, std::ostream& log) {
    const auto m = open_dataset(o.data);
    const auto model = load_checkpoint(need(o.fsiad, "--fsiad"));
    const auto rec = load_checkpoint(need(o.recognizer, "--recognizer"));
    make_out_dir(out);
    const auto sm = evaluate_synthesis(model, rec, m, cfg.seed);
    write_json(sm.to_json(), out / "synthesis_metrics.json");
    log << "eval-synthesis: " << sm.to_json().dump() << '\n';
    return {"synthesis_metrics.json"};
}

using Runner = Outputs (*)(const Options&, const TrainConfig&, const fs::path&, std::ostream&);

}  // namespace

std::string version_string() { return std::string("fsiad ") + FSIAD_VERSION + " (" + FSIAD_GIT_DESCRIBE + ")"; }

nlohmann::json RunRecord::to_json() const {
    return {{"subcommand", subcommand}, {"config", config_text}, {"seed", seed},      {"version", version},
            {"started", started},       {"finished", finished},  {"outputs", outputs}};
}

int apply_thread_setting() {
    int threads = 1;
    if (const char* env = std::getenv("FSIAD_THREADS"); env && *env) {
        try {
            threads = std::max(1, std::stoi(env));
        } catch (const std::exception&) {
            threads = 1;
        }
    }
    torch::set_num_threads(threads);
    return threads;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Face synthesis with identity-attribute disentanglement for cross-domain face recognition", "fsiad"};
    app.set_version_flag("--version", version_string());
    app.require_subcommand(1);

    Options o;
    const std::vector<std::pair<std::string, std::pair<std::string, Runner>>> table{
        {"gen-data", {"Render the paired toy face dataset", run_gen_data}},
        {"pretrain", {"Pre-train the recognizer on training V images", run_pretrain}},
        {"train-fsiad", {"Train encoders, generator and discriminator", run_train_fsiad}},
        {"synthesize", {"Write synthetic N/V pairs from a trained model", run_synthesize}},
        {"train-hfr", {"Fine-tune the recognizer, optionally with synthetic pairs", run_train_hfr}},
        {"eval", {"Rank-1, ROC and VR@FAR of recognizer checkpoints", run_eval}},
        {"eval-synthesis", {"FID and attribute SSIM of a trained model", run_eval_synthesis}},
    };
    std::vector<std::pair<CLI::App*, Runner>> subs;
    for (const auto& [name, entry] : table) {
        auto* sub = app.add_subcommand(name, entry.first);
        sub->add_option("--config", o.config_path, "key=value config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "Master seed (overrides the config)");
        sub->add_option("--out", o.out, "Output directory")->required();
        sub->add_option("--set", o.sets, "Config override key=value (repeatable)");
        if (name != "gen-data") sub->add_option("--data", o.data, "Dataset directory or manifest.tsv")->required();
        if (name == "train-fsiad" || name == "train-hfr" || name == "eval-synthesis")
            sub->add_option("--recognizer", o.recognizer, "Recognizer checkpoint")->required();
        if (name == "synthesize" || name == "eval-synthesis")
            sub->add_option("--fsiad", o.fsiad, "FSIAD checkpoint")->required();
        if (name == "eval") {
            sub->add_option("--checkpoint", o.checkpoints, "Recognizer checkpoint (repeatable)")->required();
            sub->add_option("--fsiad", o.fsiad, "FSIAD checkpoint for synthesis metrics");
        }
        if (name == "train-hfr") sub->add_option("--synthetic", o.synthetic, "Synthetic pair directory");
        if (name == "synthesize") sub->add_option("--count", o.count, "Number of pairs (default augment_count)");
        subs.emplace_back(sub, entry.second);
    }

    auto* smoke = app.add_subcommand("smoke", "Run every stage at miniature scale and verify the outputs");
    smoke->add_option("--out", o.out, "Output directory")->required();
    smoke->add_option("--seed", o.seed, "Master seed");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << version_string() << '\n';
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    if (smoke->parsed()) {
        apply_thread_setting();
        return pipeline_smoke(o.out, o.seed.value_or(0), out, err);
    }

    CLI::App* chosen = nullptr;
    Runner runner = nullptr;
    for (const auto& [sub, r] : subs)
        if (sub->parsed()) chosen = sub, runner = r;

    apply_thread_setting();
    RunRecord record;
    record.subcommand = chosen->get_name();
    record.version = version_string();
    record.started = utc_now();
    const fs::path out_dir(o.out);
    try {
        const auto cfg = resolve_config(o);
        record.config_text = to_text(cfg);
        record.seed = cfg.seed;
        record.outputs = runner(o, cfg, out_dir, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n\n" << chosen->help();
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << record.subcommand << " failed: " << e.what() << '\n';
        return kExitRuntime;
    }
    record.finished = utc_now();
    record.outputs.push_back("run_record.json");
    try {
        write_json(record.to_json(), out_dir / "run_record.json");
    } catch (const std::exception& e) {
        err << record.subcommand << " failed: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

nlohmann::json SynthesisMetrics::to_json() const {
    return {{"fid_N", fid_n},
            {"fid_V", fid_v},
            {"fid_N_noise", fid_n_noise},
            {"fid_V_noise", fid_v_noise},
            {"ssim_N", ssim_n},
            {"ssim_V", ssim_v},
            {"ssim_N_shuffled", ssim_n_shuffled},
            {"ssim_V_shuffled", ssim_v_shuffled},
            {"dis_abs_cos", dis_abs_cos}};
}

SynthesisMetrics evaluate_synthesis(const Checkpoint& fsiad, const Checkpoint& recognizer, const Manifest& manifest,
                                    std::int64_t seed) {
    auto models = FsiadModels::from_checkpoint(fsiad);
    auto rec = recognizer_from_checkpoint(recognizer);
    const auto held = load_pairs(manifest, Split::Probe);
    if (held.size() < 2) throw std::runtime_error("evaluate_synthesis: need at least 2 held-out pairs");
    const auto count = held.size();

    Rng rng(mix_seed(static_cast<std::uint64_t>(seed), kEvalStream));
    std::vector<std::int64_t> perm(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) perm[i] = i;
    for (std::int64_t i = count - 1; i > 0; --i)
        std::swap(perm[i], perm[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);
    const auto idx = torch::tensor(perm, torch::kInt64);
    const auto ref_n = held.n.index_select(0, idx), ref_v = held.v.index_select(0, idx);

    const auto recon = swap_attributes(models, held.n, held.v, held.n, held.v);
    const auto swapped = swap_attributes(models, held.n, held.v, ref_n, ref_v);

    auto noise = torch::empty_like(held.v, torch::TensorOptions().dtype(torch::kFloat32));
    {
        auto* p = noise.data_ptr<float>();
        for (std::int64_t i = 0; i < noise.numel(); ++i) p[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    }

    SynthesisMetrics s;
    const auto real_n = MomentSummary::of(recognizer_features(rec, held.n));
    const auto real_v = MomentSummary::of(recognizer_features(rec, held.v));
    const auto noise_stats = MomentSummary::of(recognizer_features(rec, noise));
    s.fid_n = fid(real_n, MomentSummary::of(recognizer_features(rec, recon.n)));
    s.fid_v = fid(real_v, MomentSummary::of(recognizer_features(rec, recon.v)));
    s.fid_n_noise = fid(real_n, noise_stats);
    s.fid_v_noise = fid(real_v, noise_stats);
    s.ssim_n = attribute_ssim(ref_n, swapped.n);
    s.ssim_v = attribute_ssim(ref_v, swapped.v);
    s.ssim_n_shuffled = attribute_ssim(ref_n, swapped.n.roll(1, 0));
    s.ssim_v_shuffled = attribute_ssim(ref_v, swapped.v.roll(1, 0));
    s.dis_abs_cos = disentanglement_score(fsiad, manifest, Split::Probe, rng);
    return s;
}

int pipeline_smoke(const fs::path& out_dir, std::int64_t seed, std::ostream& out, std::ostream& err) {
    const auto p = [&](const char* sub) { return (out_dir / sub).string(); };
    const std::vector<std::string> common{"--seed",         std::to_string(seed),   "--set", "resolution=32",
                                          "--set",          "n_subjects=8",         "--set", "iterations=50",
                                          "--set",          "augment_count=50",     "--set", "pretrain_epochs=10",
                                          "--set",          "hfr_steps=50"};
    auto with = [&](std::vector<std::string> a) {
        a.insert(a.end(), common.begin(), common.end());
        return a;
    };
    const std::vector<std::pair<std::string, std::vector<std::string>>> stages{
        {"gen-data", with({"gen-data", "--out", p("data")})},
        {"pretrain", with({"pretrain", "--data", p("data"), "--out", p("pretrain")})},
        {"train-fsiad", with({"train-fsiad", "--data", p("data"), "--recognizer", p("pretrain/recognizer.ckpt"),
                              "--out", p("fsiad")})},
        {"synthesize", with({"synthesize", "--data", p("data"), "--fsiad", p("fsiad/fsiad.ckpt"), "--out",
                             p("synthetic")})},
        {"train-hfr", with({"train-hfr", "--data", p("data"), "--recognizer", p("pretrain/recognizer.ckpt"), "--out",
                            p("hfr_baseline")})},
        {"train-hfr", with({"train-hfr", "--data", p("data"), "--recognizer", p("pretrain/recognizer.ckpt"),
                            "--synthetic", p("synthetic"), "--out", p("hfr_augmented")})},
        {"eval", with({"eval", "--data", p("data"), "--checkpoint", p("hfr_baseline/hfr.ckpt"), "--checkpoint",
                       p("hfr_augmented/hfr.ckpt"), "--out", p("eval")})},
        {"eval-synthesis", with({"eval-synthesis", "--data", p("data"), "--fsiad", p("fsiad/fsiad.ckpt"),
                                 "--recognizer", p("hfr_augmented/hfr.ckpt"), "--out", p("eval_synthesis")})},
    };
    for (const auto& [name, args] : stages) {
        out << "smoke: " << name << '\n';
        if (dispatch(args, out, err) != kExitOk) {
            err << "smoke: stage " << name << " failed\n";
            return kExitRuntime;
        }
    }

    std::string stage = "verify";
    try {
        stage = "gen-data";
        read_manifest(out_dir / "data/manifest.tsv");
        stage = "pretrain";
        load_checkpoint(out_dir / "pretrain/recognizer.ckpt");
        stage = "train-fsiad";
        load_checkpoint(out_dir / "fsiad/fsiad.ckpt");
        stage = "synthesize";
        if (read_manifest(out_dir / "synthetic/manifest.tsv").pairs(Split::Synthetic).size() != 50)
            throw std::runtime_error("expected 50 synthetic pairs");
        stage = "train-hfr";
        load_checkpoint(out_dir / "hfr_baseline/hfr.ckpt");
        load_checkpoint(out_dir / "hfr_augmented/hfr.ckpt");
        stage = "eval";
        auto read_json = [](const fs::path& f) {
            std::ifstream in(f);
            if (!in) throw std::runtime_error("missing '" + f.string() + "'");
            return nlohmann::json::parse(in);
        };
        nlohmann::json summary;
        summary["baseline"] = read_json(out_dir / "eval/metrics_0.json");
        summary["augmented"] = read_json(out_dir / "eval/metrics_1.json");
        stage = "eval-synthesis";
        summary["synthesis"] = read_json(out_dir / "eval_synthesis/synthesis_metrics.json");
        stage = "summary";
        write_json(summary, out_dir / "smoke_metrics.json");
        out << "smoke: ok\n" << summary.dump(2) << '\n';
    } catch (const std::exception& e) {
        err << "smoke: stage " << stage << " failed: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace fsiad
