#pragma once

#include "fsiad/checkpoint.hpp"
#include "fsiad/config.hpp"
#include "fsiad/dataio.hpp"
#include "fsiad/losses.hpp"
#include "fsiad/nets.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace fsiad {

struct PretrainResult {
    Checkpoint checkpoint;
    double train_accuracy = 0.0;
};

// Classification pre-training of the recognizer on the training split's V images. Class k is
// the k-th smallest training subject id. The result doubles as the frozen identity encoder.
PretrainResult pretrain_recognizer(const Manifest& manifest, const TrainConfig& cfg);

struct FinetuneResult {
    Checkpoint checkpoint;
    std::vector<LossReport> history;  // one report per step (ce, in, hfr set)
};

// L_HFR = L_ce(real pair) + gamma * L_in(synthetic pair), SGD with momentum and weight decay.
// Without a synthetic manifest (baseline mode) the synthetic term is skipped and no synthetic
// file is read. Real and synthetic batches come from independent random streams, so the real
// batch sequence is identical in both modes.
FinetuneResult finetune_hfr(const Checkpoint& init, const Manifest& real, const Manifest* synthetic,
                            const TrainConfig& cfg);

struct EmbeddingTable {
    std::vector<std::string> paths;
    std::vector<std::int64_t> subjects;
    std::vector<Domain> domains;
    torch::Tensor embeddings;  // rows x 256, float64, unit rows
    torch::Tensor features;    // rows x 256, float64, before normalization

    std::size_t size() const { return paths.size(); }
};

EmbeddingTable embed_set(const Checkpoint& recognizer, const Manifest& manifest, const std::vector<std::size_t>& rows);

// CSV columns: path, subject, domain, e0 ... e255.
void write_embedding_csv(const EmbeddingTable& table, const std::filesystem::path& path);

// Mean cosine between N and V embeddings of the same (subject, attribute) pair.
double cross_domain_cosine(const Checkpoint& recognizer, const Manifest& manifest, Split split);

}  // namespace fsiad
