#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace flowtok {

// Tokenizer-alignment hyperparameters. w_g applies to the GAN term after
// gradient-norm rescaling; w_sp likewise for the semantic-preservation term.
struct TokenizerConfig {
    int f = 8;
    int d = 32;
    int image_size = 64;
    double w_p = 1.0;
    double w_g = 0.5;
    double w_sp = 1.0;
    int gan_warmup_steps = 150;
    double lr_stage1 = 1e-4;
    double lr_stage2 = 1e-5;
    double lr_stage3 = 1e-4;
    double ema_decay = 0.999;
    uint64_t seed = 1;

    bool operator==(const TokenizerConfig&) const = default;
};

// Returns cfg unchanged when valid; throws ConfigError naming the first
// violated constraint.
TokenizerConfig validate_config(const TokenizerConfig& cfg);

// Everything a run needs, flattened to key=value pairs for config files and
// mirrored one-to-one by CLI flags.
struct RunConfig {
    TokenizerConfig tok;

    int steps_stage1 = 3000;
    int steps_stage2 = 3000;
    int steps_stage3 = 3000;
    int batch_size = 8;
    bool sp_pre_adapter = false;  // apply L_sp on pre-adapter features instead
    int log_interval = 50;

    int enc_dim = 128;
    int enc_depth = 2;
    int enc_heads = 4;
    int enc_pretrain_epochs = 20;
    double enc_pretrain_lr = 1e-3;
    int adapter_hidden = 256;
    int dec_base = 128;
    int disc_base = 32;

    std::string dataset = "synthetic";
    int num_classes = 10;
    int train_size = 512;
    int val_size = 128;

    int diff_width = 128;
    int diff_depth = 3;
    int diff_heads = 4;
    bool qk_norm = true;
    int diff_train_steps = 2000;
    double diff_lr = 1e-4;
    double cond_dropout = 0.1;
    int sample_steps = 30;
    double cfg_scale = 1.0;
    int cfg_channels = 3;
    int sample_count = 64;

    bool operator==(const RunConfig&) const = default;
};

struct ConfigKey {
    std::string name;
    std::string help;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;  // throws ConfigError
};

// Registry of every flat config key, sorted by name.
const std::vector<ConfigKey>& config_keys();

// Parses `key = value` lines ('#' comments, blank lines allowed). Unknown
// keys and malformed lines throw ConfigError with the line number.
RunConfig parse_config_text(const std::string& text, RunConfig base = {});
RunConfig load_config_file(const std::string& path, RunConfig base = {});

// Canonical sorted key=value serialization; parse(serialize(c)) == c.
std::string serialize_config(const RunConfig& cfg);
// FNV-1a over the canonical serialization.
uint64_t config_hash(const RunConfig& cfg);

// Validates tok plus run-level constraints; returns cfg on success.
RunConfig validate_run_config(const RunConfig& cfg);

std::string format_double(double v);  // shortest round-trip decimal

}  // namespace flowtok
