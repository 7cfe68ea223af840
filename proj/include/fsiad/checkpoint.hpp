#pragma once

#include <torch/torch.h>

#include <json.hpp>

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

namespace fsiad {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { Io, Format, Version, Truncated, Shape, Missing };
    CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

// Named arrays plus free-form JSON metadata.
//
// File layout (all integers little-endian):
//   "FSIAD1"
//   u64 metadata length, metadata JSON bytes (carries format_version and num_arrays)
//   per array: u32 name length, name bytes, u8 dtype code, u32 rank, i64 dims[rank], raw payload
struct Checkpoint {
    std::map<std::string, torch::Tensor> arrays;
    nlohmann::json meta = nlohmann::json::object();

    bool operator==(const Checkpoint& other) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies every parameter and buffer of `module` into `ckpt` under `prefix + name`.
void export_module(Checkpoint& ckpt, const std::string& prefix, const torch::nn::Module& module);
// Loads arrays saved by export_module. Missing arrays and shape disagreements throw.
void import_module(const Checkpoint& ckpt, const std::string& prefix, torch::nn::Module& module);

// FNV-1a over parameter names and bytes; used to detect parameter changes.
std::uint64_t parameter_checksum(const torch::nn::Module& module);

}  // namespace fsiad
