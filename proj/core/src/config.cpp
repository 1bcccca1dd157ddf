#include "flowtok/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "flowtok/errors.hpp"
#include "flowtok/rng.hpp"

namespace flowtok {

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

namespace {

std::string to_str(int v) { return std::to_string(v); }
std::string to_str(uint64_t v) { return std::to_string(v); }
std::string to_str(double v) { return format_double(v); }
std::string to_str(bool v) { return v ? "true" : "false"; }
std::string to_str(const std::string& v) { return v; }

void from_str(const std::string& s, int& out, const std::string& key) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw ConfigError("key '" + key + "': expected integer, got '" + s + "'");
}

void from_str(const std::string& s, uint64_t& out, const std::string& key) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw ConfigError("key '" + key + "': expected unsigned integer, got '" + s + "'");
}

void from_str(const std::string& s, double& out, const std::string& key) {
    try {
        size_t pos = 0;
        out = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected number, got '" + s + "'");
    }
}

void from_str(const std::string& s, bool& out, const std::string& key) {
    if (s == "true" || s == "1")
        out = true;
    else if (s == "false" || s == "0")
        out = false;
    else
        throw ConfigError("key '" + key + "': expected bool, got '" + s + "'");
}

void from_str(const std::string& s, std::string& out, const std::string&) { out = s; }

std::vector<ConfigKey> build_keys() {
    std::vector<ConfigKey> ks;
    auto add = [&ks](const char* name, const char* help, auto member) {
        ks.push_back(ConfigKey{
            name, help,
            [member](const RunConfig& c) { return to_str(member(const_cast<RunConfig&>(c))); },
            [member, n = std::string(name)](RunConfig& c, const std::string& s) {
                from_str(s, member(c), n);
            }});
    };
#define FK(key, expr, help) add(key, help, [](RunConfig& c) -> decltype((expr)) { return expr; })
    FK("seed", c.tok.seed, "global random seed");
    FK("f", c.tok.f, "tokenizer spatial downsampling factor");
    FK("d", c.tok.d, "latent channels");
    FK("image_size", c.tok.image_size, "square input resolution");
    FK("w_p", c.tok.w_p, "perceptual loss weight");
    FK("w_g", c.tok.w_g, "GAN loss weight (after rescaling)");
    FK("w_sp", c.tok.w_sp, "semantic preservation weight (after rescaling)");
    FK("gan_warmup_steps", c.tok.gan_warmup_steps, "steps before the GAN term activates");
    FK("lr_stage1", c.tok.lr_stage1, "stage 1 learning rate");
    FK("lr_stage2", c.tok.lr_stage2, "stage 2 learning rate");
    FK("lr_stage3", c.tok.lr_stage3, "stage 3 learning rate");
    FK("ema_decay", c.tok.ema_decay, "EMA decay for inference weights");
    FK("steps_stage1", c.steps_stage1, "stage 1 training steps");
    FK("steps_stage2", c.steps_stage2, "stage 2 training steps");
    FK("steps_stage3", c.steps_stage3, "stage 3 training steps");
    FK("batch_size", c.batch_size, "training batch size");
    FK("sp_pre_adapter", c.sp_pre_adapter, "apply semantic preservation on pre-adapter features");
    FK("log_interval", c.log_interval, "steps between metric records");
    FK("enc_dim", c.enc_dim, "encoder embedding width");
    FK("enc_depth", c.enc_depth, "encoder transformer depth");
    FK("enc_heads", c.enc_heads, "encoder attention heads");
    FK("enc_pretrain_epochs", c.enc_pretrain_epochs, "encoder pretraining epochs");
    FK("enc_pretrain_lr", c.enc_pretrain_lr, "encoder pretraining learning rate");
    FK("adapter_hidden", c.adapter_hidden, "adapter hidden width");
    FK("dec_base", c.dec_base, "decoder base channel width");
    FK("disc_base", c.disc_base, "discriminator base channel width");
    FK("dataset", c.dataset, "'synthetic' or a folder of class subdirectories");
    FK("num_classes", c.num_classes, "synthetic dataset class count");
    FK("train_size", c.train_size, "training split size");
    FK("val_size", c.val_size, "held-out split size");
    FK("diff_width", c.diff_width, "velocity network width");
    FK("diff_depth", c.diff_depth, "velocity network depth");
    FK("diff_heads", c.diff_heads, "velocity network attention heads");
    FK("qk_norm", c.qk_norm, "RMS-normalize attention queries and keys");
    FK("diff_train_steps", c.diff_train_steps, "diffusion training steps");
    FK("diff_lr", c.diff_lr, "diffusion learning rate");
    FK("cond_dropout", c.cond_dropout, "probability of training on the null class");
    FK("sample_steps", c.sample_steps, "Euler sampler steps");
    FK("cfg_scale", c.cfg_scale, "classifier-free guidance scale");
    FK("cfg_channels", c.cfg_channels, "latent channels guided by CFG (first_k)");
    FK("sample_count", c.sample_count, "images per sampling call");
#undef FK
    std::sort(ks.begin(), ks.end(),
              [](const ConfigKey& a, const ConfigKey& b) { return a.name < b.name; });
    return ks;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> ks = build_keys();
    return ks;
}

RunConfig parse_config_text(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        auto& ks = config_keys();
        auto it = std::find_if(ks.begin(), ks.end(),
                               [&](const ConfigKey& k) { return k.name == key; });
        if (it == ks.end())
            throw ConfigError("config line " + std::to_string(lineno) + ": unknown config key '" +
                              key + "'");
        it->set(base, val);
    }
    return base;
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), std::move(base));
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream out;
    for (const ConfigKey& k : config_keys()) out << k.name << "=" << k.get(cfg) << "\n";
    return out.str();
}

uint64_t config_hash(const RunConfig& cfg) { return fnv1a_str(serialize_config(cfg)); }

TokenizerConfig validate_config(const TokenizerConfig& cfg) {
    if (cfg.f <= 0) throw ConfigError("f must be positive");
    if (cfg.d <= 0) throw ConfigError("d must be positive");
    if (cfg.image_size <= 0) throw ConfigError("image_size must be positive");
    if (cfg.image_size % cfg.f != 0) throw ConfigError("image_size not divisible by f");
    if (cfg.w_p < 0) throw ConfigError("w_p must be >= 0");
    if (cfg.w_g < 0) throw ConfigError("w_g must be >= 0");
    if (cfg.w_sp < 0) throw ConfigError("w_sp must be >= 0");
    if (cfg.gan_warmup_steps < 0) throw ConfigError("gan_warmup_steps must be >= 0");
    if (cfg.lr_stage1 <= 0) throw ConfigError("lr_stage1 must be positive");
    if (cfg.lr_stage2 <= 0) throw ConfigError("lr_stage2 must be positive");
    if (cfg.lr_stage3 <= 0) throw ConfigError("lr_stage3 must be positive");
    if (!(cfg.ema_decay > 0.0 && cfg.ema_decay < 1.0))
        throw ConfigError("ema_decay must be in (0,1)");
    return cfg;
}

RunConfig validate_run_config(const RunConfig& cfg) {
    validate_config(cfg.tok);
    auto need = [](bool ok, const char* msg) {
        if (!ok) throw ConfigError(msg);
    };
    need(cfg.steps_stage1 >= 0, "steps_stage1 must be >= 0");
    need(cfg.steps_stage2 >= 0, "steps_stage2 must be >= 0");
    need(cfg.steps_stage3 >= 0, "steps_stage3 must be >= 0");
    need(cfg.batch_size >= 1, "batch_size must be >= 1");
    need(cfg.log_interval >= 1, "log_interval must be >= 1");
    need(cfg.enc_dim >= 1, "enc_dim must be >= 1");
    need(cfg.enc_heads >= 1, "enc_heads must be >= 1");
    need(cfg.enc_dim % cfg.enc_heads == 0, "enc_dim not divisible by enc_heads");
    need(cfg.enc_depth >= 1, "enc_depth must be >= 1");
    need(cfg.enc_pretrain_epochs >= 0, "enc_pretrain_epochs must be >= 0");
    need(cfg.enc_pretrain_lr > 0, "enc_pretrain_lr must be positive");
    need(cfg.adapter_hidden >= 1, "adapter_hidden must be >= 1");
    need(cfg.dec_base >= 1, "dec_base must be >= 1");
    need(cfg.disc_base >= 1, "disc_base must be >= 1");
    need(!cfg.dataset.empty(), "dataset must be set");
    need(cfg.num_classes >= 2, "num_classes must be >= 2");
    need(cfg.train_size >= 1, "train_size must be >= 1");
    need(cfg.val_size >= 1, "val_size must be >= 1");
    need(cfg.diff_width >= 1, "diff_width must be >= 1");
    need(cfg.diff_heads >= 1, "diff_heads must be >= 1");
    need(cfg.diff_width % cfg.diff_heads == 0, "diff_width not divisible by diff_heads");
    need(cfg.diff_depth >= 1, "diff_depth must be >= 1");
    need(cfg.diff_train_steps >= 0, "diff_train_steps must be >= 0");
    need(cfg.diff_lr > 0, "diff_lr must be positive");
    need(cfg.cond_dropout >= 0.0 && cfg.cond_dropout < 1.0, "cond_dropout must be in [0,1)");
    need(cfg.sample_steps >= 1, "sample_steps must be >= 1");
    need(cfg.cfg_scale >= 0.0, "cfg_scale must be >= 0");
    need(cfg.cfg_channels >= 0 && cfg.cfg_channels <= cfg.tok.d,
         "cfg_channels must be in [0, d]");
    need(cfg.sample_count >= 1, "sample_count must be >= 1");
    return cfg;
}

}  // namespace flowtok
