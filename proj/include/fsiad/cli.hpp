#pragma once

#include "fsiad/checkpoint.hpp"
#include "fsiad/config.hpp"
#include "fsiad/dataio.hpp"

#include <json.hpp>

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace fsiad {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// "fsiad <version> (<git describe>)".
std::string version_string();

// One JSON record per invocation, written as <out>/run_record.json.
struct RunRecord {
    std::string subcommand;
    std::string config_text;
    std::int64_t seed = 0;
    std::string version;
    std::string started;
    std::string finished;
    std::vector<std::string> outputs;  // relative to the output directory

    nlohmann::json to_json() const;
};

// Runs one subcommand. argv excludes the program name. Output goes to `out`, diagnostics to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Every stage of the pipeline at miniature scale under out_dir; exit 2 naming the failing stage.
int pipeline_smoke(const std::filesystem::path& out_dir, std::int64_t seed, std::ostream& out, std::ostream& err);

// Reads FSIAD_THREADS (default 1) and applies it to the tensor backend.
int apply_thread_setting();

struct SynthesisMetrics {
    double fid_n = 0.0, fid_v = 0.0;              // real vs reconstructions
    double fid_n_noise = 0.0, fid_v_noise = 0.0;  // real vs uniform noise
    double ssim_n = 0.0, ssim_v = 0.0;            // references vs attribute-swapped synthetics
    double ssim_n_shuffled = 0.0, ssim_v_shuffled = 0.0;
    double dis_abs_cos = 0.0;  // mean |cos(z_id, z_attr)|

    nlohmann::json to_json() const;
};

// Scores a trained FSIAD model on the held-out pairs. FID features come from `recognizer`;
// swap references are a seeded permutation of the held-out pairs.
SynthesisMetrics evaluate_synthesis(const Checkpoint& fsiad, const Checkpoint& recognizer, const Manifest& manifest,
                                    std::int64_t seed);

}  // namespace fsiad
