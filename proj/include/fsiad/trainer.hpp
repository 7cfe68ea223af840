#pragma once

#include "fsiad/checkpoint.hpp"
#include "fsiad/config.hpp"
#include "fsiad/dataio.hpp"
#include "fsiad/losses.hpp"
#include "fsiad/nets.hpp"
#include "fsiad/optim.hpp"
#include "fsiad/rng.hpp"

#include <filesystem>
#include <memory>

namespace fsiad {

// The four FSIAD networks plus the frozen identity encoder.
struct FsiadModels {
    Recognizer e_id{nullptr};
    AttributeEncoder enc_n{nullptr};
    AttributeEncoder enc_v{nullptr};
    Generator gen{nullptr};
    Discriminator disc{nullptr};

    // Fresh encoders, generator and discriminator initialized from `rng`; e_id is supplied.
    static FsiadModels create(const NetConfig& net, Recognizer e_id, Rng& rng);

    void to(torch::ScalarType dtype);
    void export_to(Checkpoint& ckpt) const;
    // Builds the networks described by `ckpt` and loads their arrays.
    static FsiadModels from_checkpoint(const Checkpoint& ckpt);
};

struct TrainState {
    FsiadModels models;
    std::unique_ptr<Adam> opt_iad;  // encoders, by L_IAD
    std::unique_ptr<Adam> opt_fsm;  // encoders + generator, by L_FSM
    std::unique_ptr<Adam> opt_d;    // discriminator
    std::int64_t iteration = 0;
    Rng rng;

    TrainState(FsiadModels models, const TrainConfig& cfg, Rng rng);
};

struct IterationResult {
    LossReport report;
    double d_real_median = 0.0;
    double d_fake_median = 0.0;
};

// One pass of the alternating schedule:
//   (a) z_id from the frozen identity encoder, posteriors and reparameterized codes of the sources;
//   (b) encoder update by L_IAD;
//   (c) re-encode with the updated encoders, reconstruction and integration branches through G;
//   (d) discriminator update on real sources vs integration outputs;
//   (e) encoder + generator update by L_FSM (or L_int when cfg.int_only) with D frozen.
// Throws std::runtime_error naming the first non-finite loss term.
IterationResult fsiad_iteration(TrainState& state, const TrainingSample& batch, const TrainConfig& cfg);

// Loads a recognizer checkpoint written by pretrain_recognizer (or finetune_hfr).
Recognizer recognizer_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix = "F.");

struct FsiadRun {
    Checkpoint final_checkpoint;
    std::vector<IterationResult> history;
};

// Runs cfg.iterations iterations. Writes fsiad_losses.csv, disc_stats.csv, periodic checkpoints
// under out_dir/checkpoints and out_dir/fsiad.ckpt.
FsiadRun train_fsiad(const Manifest& manifest, const Checkpoint& recognizer, const TrainConfig& cfg,
                     const std::filesystem::path& out_dir);

struct SwapResult {
    torch::Tensor n;  // B x 3 x R x R
    torch::Tensor v;
};

// Identity of the source pairs combined with the posterior-mean attributes of the reference
// pairs, decoded in both domains. Passing the sources as references gives reconstructions.
SwapResult swap_attributes(FsiadModels& models, const torch::Tensor& src_n, const torch::Tensor& src_v,
                           const torch::Tensor& ref_n, const torch::Tensor& ref_v);

// Mean |cos(z_id, z_attr)| over the pairs of `split`, both domains, with z_attr sampled by the
// reparameterization trick from `rng`.
double disentanglement_score(const Checkpoint& fsiad, const Manifest& manifest, Split split, Rng& rng);

Checkpoint make_fsiad_checkpoint(const TrainState& state, const TrainConfig& cfg);

// Draws n (source, reference) pairs from the training split and writes the synthetic pairs
// G(z_id, z_X^N), G(z_id, z_X^V) as PNGs plus a manifest (split `synthetic`, pair_id column,
// subject -1, attributes copied from the reference rows) into out_dir.
Manifest synthesize_pairs(const Checkpoint& fsiad, const Manifest& manifest, std::int64_t n, Rng& rng,
                          const std::filesystem::path& out_dir);

}  // namespace fsiad
