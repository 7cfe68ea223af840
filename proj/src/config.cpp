#include "fsiad/config.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>
#include <variant>

namespace fsiad {

namespace {

using Field = std::variant<double TrainConfig::*, std::int64_t TrainConfig::*>;

struct Key {
    const char* name;
    Field field;
};

constexpr std::array kKeys{
    Key{"lambda_dis", &TrainConfig::lambda_dis},
    Key{"lambda_int", &TrainConfig::lambda_int},
    Key{"lambda_adv", &TrainConfig::lambda_adv},
    Key{"gamma", &TrainConfig::gamma},
    Key{"alpha", &TrainConfig::alpha},
    Key{"adam_lr", &TrainConfig::adam_lr},
    Key{"adam_beta1", &TrainConfig::adam_beta1},
    Key{"adam_beta2", &TrainConfig::adam_beta2},
    Key{"adam_eps", &TrainConfig::adam_eps},
    Key{"sgd_lr", &TrainConfig::sgd_lr},
    Key{"sgd_momentum", &TrainConfig::sgd_momentum},
    Key{"sgd_weight_decay", &TrainConfig::sgd_weight_decay},
    Key{"batch_size", &TrainConfig::batch_size},
    Key{"iterations", &TrainConfig::iterations},
    Key{"augment_count", &TrainConfig::augment_count},
    Key{"resolution", &TrainConfig::resolution},
    Key{"seed", &TrainConfig::seed},
    Key{"width_div", &TrainConfig::width_div},
    Key{"recognizer_width_div", &TrainConfig::recognizer_width_div},
    Key{"n_subjects", &TrainConfig::n_subjects},
    Key{"attrs_per_subject", &TrainConfig::attrs_per_subject},
    Key{"pretrain_epochs", &TrainConfig::pretrain_epochs},
    Key{"pretrain_lr", &TrainConfig::pretrain_lr},
    Key{"hfr_steps", &TrainConfig::hfr_steps},
    Key{"synth_per_real", &TrainConfig::synth_per_real},
    Key{"int_only", &TrainConfig::int_only},
    Key{"checkpoint_every", &TrainConfig::checkpoint_every},
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

void require(bool ok, const char* key, const std::string& why) {
    if (!ok) throw ConfigError(key, std::string("config key '") + key + "': " + why);
}

std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), end);
}

}  // namespace

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& k : kKeys) {
        if (key != k.name) continue;
        std::visit(
            [&](auto member) {
                using T = std::remove_reference_t<decltype(cfg.*member)>;
                T parsed{};
                const char* first = value.data();
                const char* last = value.data() + value.size();
                auto [ptr, ec] = std::from_chars(first, last, parsed);
                if (ec != std::errc() || ptr != last || value.empty())
                    throw ConfigError(key, "config key '" + key + "': cannot parse value '" + value + "'");
                cfg.*member = parsed;
            },
            k.field);
        return;
    }
    throw ConfigError(key, "unknown config key '" + key + "'");
}

void validate(const TrainConfig& c) {
    require(c.lambda_dis >= 0, "lambda_dis", "must be >= 0");
    require(c.lambda_int >= 0, "lambda_int", "must be >= 0");
    require(c.lambda_adv >= 0, "lambda_adv", "must be >= 0");
    require(c.gamma >= 0, "gamma", "must be >= 0");
    require(c.alpha >= 0 && c.alpha <= 1, "alpha", "must lie in [0, 1]");
    require(c.adam_lr > 0, "adam_lr", "must be > 0");
    require(c.adam_beta1 >= 0 && c.adam_beta1 < 1, "adam_beta1", "must lie in [0, 1)");
    require(c.adam_beta2 >= 0 && c.adam_beta2 < 1, "adam_beta2", "must lie in [0, 1)");
    require(c.adam_eps > 0, "adam_eps", "must be > 0");
    require(c.sgd_lr > 0, "sgd_lr", "must be > 0");
    require(c.sgd_momentum >= 0 && c.sgd_momentum < 1, "sgd_momentum", "must lie in [0, 1)");
    require(c.sgd_weight_decay >= 0, "sgd_weight_decay", "must be >= 0");
    require(c.batch_size >= 1, "batch_size", "must be >= 1");
    require(c.iterations >= 0, "iterations", "must be >= 0");
    require(c.augment_count >= 1, "augment_count", "must be >= 1");
    require(c.resolution == 32 || c.resolution == 64 || c.resolution == 128, "resolution",
            "must be one of 32, 64, 128");
    require(c.seed >= 0, "seed", "must be >= 0");
    const auto pow2 = [](std::int64_t d) { return d == 1 || d == 2 || d == 4 || d == 8 || d == 16; };
    require(pow2(c.width_div), "width_div", "must be one of 1, 2, 4, 8, 16");
    require(pow2(c.recognizer_width_div), "recognizer_width_div", "must be one of 1, 2, 4, 8, 16");
    require(c.n_subjects >= 4, "n_subjects", "must be >= 4");
    require(c.attrs_per_subject >= 1, "attrs_per_subject", "must be >= 1");
    require(c.pretrain_epochs >= 0, "pretrain_epochs", "must be >= 0");
    require(c.pretrain_lr > 0, "pretrain_lr", "must be > 0");
    require(c.hfr_steps >= 0, "hfr_steps", "must be >= 0");
    require(c.synth_per_real >= 1, "synth_per_real", "must be >= 1");
    require(c.int_only == 0 || c.int_only == 1, "int_only", "must be 0 or 1");
    require(c.checkpoint_every >= 0, "checkpoint_every", "must be >= 0");
}

TrainConfig parse_config(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(line, "config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
        set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    validate(cfg);
    return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("", "cannot open config file '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string to_text(const TrainConfig& cfg) {
    std::ostringstream os;
    for (const auto& k : kKeys) {
        os << k.name << '=';
        std::visit(
            [&](auto member) {
                const auto v = cfg.*member;
                if constexpr (std::is_same_v<std::remove_cvref_t<decltype(v)>, double>)
                    os << format_double(v);
                else
                    os << v;
            },
            k.field);
        os << '\n';
    }
    return os.str();
}

}  // namespace fsiad
