#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace fsiad {

// Raised for unreadable, malformed or out-of-range configuration. `key()` names the
// offending key (empty when the failure is not tied to one).
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& what) : std::runtime_error(what), key_(std::move(key)) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

struct TrainConfig {
    // Loss trade-offs.
    double lambda_dis = 2.0;
    double lambda_int = 5.0;
    double lambda_adv = 1.0;
    double gamma = 0.001;
    double alpha = 0.84;

    // FSIAD optimizer (Adam).
    double adam_lr = 2e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.99;
    double adam_eps = 1e-8;

    // HFR fine-tuning optimizer (SGD with momentum).
    double sgd_lr = 1e-3;
    double sgd_momentum = 0.9;
    double sgd_weight_decay = 1e-4;

    std::int64_t batch_size = 8;
    std::int64_t iterations = 3000;
    std::int64_t augment_count = 5000;
    std::int64_t resolution = 64;
    std::int64_t seed = 0;

    // Channel widths of the encoders, generator and discriminator are divided by this
    // (1 = canonical widths); the recognizer has its own divisor.
    std::int64_t width_div = 16;
    std::int64_t recognizer_width_div = 4;

    // Procedural dataset size.
    std::int64_t n_subjects = 40;
    std::int64_t attrs_per_subject = 12;

    // Recognizer pre-training (stands in for an externally pre-trained backbone).
    std::int64_t pretrain_epochs = 20;
    double pretrain_lr = 1e-3;

    // HFR fine-tuning.
    std::int64_t hfr_steps = 400;
    std::int64_t synth_per_real = 1;

    // 1: the joint encoder+generator step minimizes L_int only instead of L_FSM.
    std::int64_t int_only = 0;

    // Checkpoint period in iterations; 0 means max(1, iterations / 10).
    std::int64_t checkpoint_every = 0;

    bool operator==(const TrainConfig&) const = default;
};

// Parses flat `key=value` text with '#' comments. Unspecified keys keep their defaults.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

// Sets one key from its textual value, validating the result.
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);

// Throws ConfigError naming the first out-of-range key.
void validate(const TrainConfig& cfg);

// Full snapshot in the same key=value format; parse_config(to_text(c)) == c.
std::string to_text(const TrainConfig& cfg);

}  // namespace fsiad
