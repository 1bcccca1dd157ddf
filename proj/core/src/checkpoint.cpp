#include "flowtok/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "flowtok/errors.hpp"

namespace flowtok {

namespace {

constexpr const char* kMagic = "flowtok-checkpoint v1";

using json = nlohmann::json;

json manifest_to_json(const CheckpointManifest& m) {
    json j;
    j["format_version"] = m.format_version;
    j["kind"] = m.kind;
    j["stage_tag"] = m.stage_tag;
    j["config_hash"] = std::to_string(m.config_hash);
    j["config"] = m.config_text;
    j["extra"] = m.extra;
    json ts = json::array();
    for (const TensorEntry& e : m.tensors)
        ts.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset},
                      {"count", e.count}});
    j["tensors"] = std::move(ts);
    return j;
}

CheckpointManifest manifest_from_json(const json& j) {
    CheckpointManifest m;
    m.format_version = j.at("format_version").get<int>();
    m.kind = j.at("kind").get<std::string>();
    m.stage_tag = j.at("stage_tag").get<std::string>();
    m.config_hash = std::stoull(j.at("config_hash").get<std::string>());
    m.config_text = j.at("config").get<std::string>();
    m.extra = j.at("extra").get<std::map<std::string, std::string>>();
    for (const json& e : j.at("tensors"))
        m.tensors.push_back(TensorEntry{e.at("name").get<std::string>(),
                                        e.at("shape").get<std::vector<int>>(),
                                        e.at("offset").get<int64_t>(),
                                        e.at("count").get<int64_t>()});
    return m;
}

std::ifstream open_checkpoint(const std::string& path) {
    if (!std::filesystem::exists(path))
        throw MissingArtifact("checkpoint not found: " + path);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    return in;
}

CheckpointManifest read_header(std::ifstream& in, const std::string& path) {
    std::string magic;
    if (!std::getline(in, magic) || magic != kMagic)
        throw IoError("not a checkpoint file: " + path);
    std::string len_line;
    if (!std::getline(in, len_line)) throw IoError("truncated checkpoint header: " + path);
    size_t len = 0;
    try {
        len = std::stoull(len_line);
    } catch (const std::exception&) {
        throw IoError("malformed manifest length in " + path);
    }
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    char sep = 0;
    in.get(sep);
    if (!in || sep != '\n') throw IoError("truncated manifest in " + path);
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw IoError("malformed manifest JSON in " + path);
    CheckpointManifest m;
    try {
        m = manifest_from_json(j);
    } catch (const std::exception& e) {
        throw IoError("bad manifest in " + path + ": " + e.what());
    }
    if (m.format_version != 1)
        throw IoError("unsupported checkpoint format version " +
                      std::to_string(m.format_version) + " in " + path);
    return m;
}

// The groups every tokenizer checkpoint carries. Live nets bring their Adam
// moments; shadows and frozen references only their values.
struct BundleIndex {
    std::vector<std::pair<std::string, ParamTensor*>> live;
    std::vector<std::pair<std::string, ParamTensor*>> shadow;
};

BundleIndex index_bundle(TokenizerBundle& b) {
    BundleIndex ix;
    auto live = [&](std::vector<ParamTensor*> ps) {
        for (ParamTensor* p : ps) ix.live.emplace_back(p->name, p);
    };
    auto shadow = [&](const std::string& prefix, std::vector<ParamTensor*> ps) {
        for (ParamTensor* p : ps) ix.shadow.emplace_back(prefix + p->name, p);
    };
    live(b.encoder.params());
    live(b.adapter.params());
    live(b.decoder.params());
    live(b.disc.params());
    shadow("ema/", b.ema_encoder.params());
    shadow("ema/", b.ema_adapter.params());
    shadow("ema/", b.ema_decoder.params());
    shadow("perc/", b.perceptual_net.params());
    if (b.sp_target) {
        shadow("sp/", b.sp_target->encoder.params());
        shadow("sp/", b.sp_target->adapter.params());
    }
    return ix;
}

Tensor stats_tensor(const std::vector<float>& v) {
    return Tensor::from({static_cast<int>(v.size())}, v);
}

void restore_values(const LoadedCheckpoint& ck, const std::string& name, Tensor& dst,
                    const std::string& path) {
    const Tensor& src = ck.at(name);
    if (src.shape != dst.shape)
        throw IoError("checkpoint tensor " + name + " has shape " + src.shape_str() +
                      ", expected " + dst.shape_str() + " in " + path);
    dst = src;
}

void restore_group(const LoadedCheckpoint& ck, const std::string& prefix,
                   std::vector<ParamTensor*> ps, bool with_moments, const std::string& path) {
    for (ParamTensor* p : ps) {
        restore_values(ck, prefix + p->name, p->value, path);
        if (with_moments) {
            restore_values(ck, "m/" + p->name, p->adam_m, path);
            restore_values(ck, "v/" + p->name, p->adam_v, path);
        }
    }
}

RunConfig config_from_manifest(const CheckpointManifest& m, const std::string& path) {
    RunConfig cfg;
    try {
        cfg = parse_config_text(m.config_text);
    } catch (const ConfigError& e) {
        throw IoError("checkpoint " + path + " carries an unparseable config: " + e.what());
    }
    if (config_hash(cfg) != m.config_hash)
        throw IoError("checkpoint " + path + " config hash does not match its config text");
    return cfg;
}

void require_kind(const CheckpointManifest& m, const std::string& kind,
                  const std::string& path) {
    if (m.kind != kind)
        throw IoError("expected a " + kind + " checkpoint, found " + m.kind + " in " + path);
}

int extra_int(const CheckpointManifest& m, const std::string& key, const std::string& path) {
    auto it = m.extra.find(key);
    if (it == m.extra.end())
        throw IoError("checkpoint " + path + " manifest is missing " + key);
    return std::stoi(it->second);
}

}  // namespace

const Tensor& LoadedCheckpoint::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end())
        throw MissingArtifact("checkpoint has no tensor named " + name);
    return it->second;
}

void write_checkpoint(const std::string& path, CheckpointManifest manifest,
                      const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
    manifest.tensors.clear();
    int64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        manifest.tensors.push_back(TensorEntry{name, t->shape, offset, t->numel()});
        offset += t->numel();
    }
    const std::string body = manifest_to_json(manifest).dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint: " + tmp);
        out << kMagic << "\n" << body.size() << "\n" << body << "\n";
        for (const auto& [name, t] : tensors)
            out.write(reinterpret_cast<const char*>(t->v.data()),
                      static_cast<std::streamsize>(t->v.size() * sizeof(float)));
        if (!out) throw IoError("failed writing checkpoint payload: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place: " + path + ": " + ec.message());
}

LoadedCheckpoint read_checkpoint(const std::string& path) {
    std::ifstream in = open_checkpoint(path);
    LoadedCheckpoint ck;
    ck.manifest = read_header(in, path);
    for (const TensorEntry& e : ck.manifest.tensors) {
        if (Tensor::numel_of(e.shape) != e.count)
            throw IoError("tensor " + e.name + " count does not match its shape in " + path);
        Tensor t(e.shape);
        in.read(reinterpret_cast<char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(float)));
        if (!in) throw IoError("truncated payload at tensor " + e.name + " in " + path);
        ck.tensors.emplace(e.name, std::move(t));
    }
    char probe = 0;
    if (in.get(probe)) throw IoError("trailing bytes after payload in " + path);
    return ck;
}

CheckpointManifest read_checkpoint_manifest(const std::string& path) {
    std::ifstream in = open_checkpoint(path);
    return read_header(in, path);
}

void save_tokenizer_checkpoint(const std::string& path, const TokenizerBundle& b) {
    CheckpointManifest m;
    m.kind = "tokenizer";
    m.stage_tag = b.completed_stage > 0
                      ? std::string("stage") + std::to_string(b.completed_stage)
                      : std::string("fresh");
    m.config_text = serialize_config(b.cfg);
    m.config_hash = config_hash(b.cfg);
    m.extra["completed_stage"] = std::to_string(b.completed_stage);
    if (b.sp_target) m.extra["sp_stage_tag"] = b.sp_target->stage_tag;

    BundleIndex ix = index_bundle(const_cast<TokenizerBundle&>(b));
    std::vector<std::pair<std::string, const Tensor*>> ts;
    for (auto& [name, p] : ix.live) {
        ts.emplace_back("live/" + name, &p->value);
        ts.emplace_back("m/" + name, &p->adam_m);
        ts.emplace_back("v/" + name, &p->adam_v);
    }
    for (auto& [name, p] : ix.shadow) ts.emplace_back(name, &p->value);

    Tensor mean, dev;
    if (!b.latent_stats.per_channel_mean.empty()) {
        mean = stats_tensor(b.latent_stats.per_channel_mean);
        dev = stats_tensor(b.latent_stats.per_channel_std);
        ts.emplace_back("stats/mean", &mean);
        ts.emplace_back("stats/std", &dev);
    }
    write_checkpoint(path, std::move(m), ts);
}

TokenizerBundle load_tokenizer_checkpoint(const std::string& path,
                                          CheckpointManifest* out_manifest) {
    LoadedCheckpoint ck = read_checkpoint(path);
    require_kind(ck.manifest, "tokenizer", path);
    RunConfig cfg = config_from_manifest(ck.manifest, path);

    EncoderConfig ec;
    ec.image_size = cfg.tok.image_size;
    ec.f = cfg.tok.f;
    ec.dim = cfg.enc_dim;
    ec.depth = cfg.enc_depth;
    ec.heads = cfg.enc_heads;
    TokenizerBundle b = make_bundle(cfg, ToyEncoder(ec, cfg.tok.seed));
    b.completed_stage = extra_int(ck.manifest, "completed_stage", path);
    if (ck.manifest.extra.count("sp_stage_tag"))
        b.sp_target = snapshot_frozen(b.encoder, b.adapter, ck.manifest.extra.at("sp_stage_tag"));

    restore_group(ck, "live/", b.encoder.params(), true, path);
    restore_group(ck, "live/", b.adapter.params(), true, path);
    restore_group(ck, "live/", b.decoder.params(), true, path);
    restore_group(ck, "live/", b.disc.params(), true, path);
    restore_group(ck, "ema/", b.ema_encoder.params(), false, path);
    restore_group(ck, "ema/", b.ema_adapter.params(), false, path);
    restore_group(ck, "ema/", b.ema_decoder.params(), false, path);
    restore_group(ck, "perc/", b.perceptual_net.params(), false, path);
    if (b.sp_target) {
        restore_group(ck, "sp/", b.sp_target->encoder.params(), false, path);
        restore_group(ck, "sp/", b.sp_target->adapter.params(), false, path);
    }
    if (ck.has("stats/mean")) {
        const Tensor& mean = ck.at("stats/mean");
        const Tensor& dev = ck.at("stats/std");
        b.latent_stats.per_channel_mean = mean.v;
        b.latent_stats.per_channel_std = dev.v;
    }
    if (out_manifest) *out_manifest = ck.manifest;
    return b;
}

void save_encoder_checkpoint(const std::string& path, const ToyEncoder& enc,
                             const RunConfig& cfg) {
    CheckpointManifest m;
    m.kind = "encoder";
    m.stage_tag = "pretrained";
    m.config_text = serialize_config(cfg);
    m.config_hash = config_hash(cfg);

    std::vector<std::pair<std::string, const Tensor*>> ts;
    for (const ParamTensor* p : enc.params()) ts.emplace_back("live/" + p->name, &p->value);
    write_checkpoint(path, std::move(m), ts);
}

ToyEncoder load_encoder_checkpoint(const std::string& path, CheckpointManifest* out_manifest) {
    LoadedCheckpoint ck = read_checkpoint(path);
    require_kind(ck.manifest, "encoder", path);
    RunConfig cfg = config_from_manifest(ck.manifest, path);

    EncoderConfig ec;
    ec.image_size = cfg.tok.image_size;
    ec.f = cfg.tok.f;
    ec.dim = cfg.enc_dim;
    ec.depth = cfg.enc_depth;
    ec.heads = cfg.enc_heads;
    ToyEncoder enc(ec, cfg.tok.seed);
    restore_group(ck, "live/", enc.params(), false, path);
    if (out_manifest) *out_manifest = ck.manifest;
    return enc;
}

void save_diffusion_checkpoint(const std::string& path, const DiffusionBundle& db,
                               const RunConfig& cfg) {
    CheckpointManifest m;
    m.kind = "diffusion";
    m.stage_tag = "diffusion";
    m.config_text = serialize_config(cfg);
    m.config_hash = config_hash(cfg);
    m.extra["trained_steps"] = std::to_string(db.trained_steps);

    std::vector<std::pair<std::string, const Tensor*>> ts;
    auto& net = const_cast<VelocityNet&>(db.net);
    auto& ema = const_cast<VelocityNet&>(db.ema);
    for (ParamTensor* p : net.params()) {
        ts.emplace_back("live/" + p->name, &p->value);
        ts.emplace_back("m/" + p->name, &p->adam_m);
        ts.emplace_back("v/" + p->name, &p->adam_v);
    }
    for (ParamTensor* p : ema.params()) ts.emplace_back("ema/" + p->name, &p->value);

    Tensor mean, dev;
    if (!db.latent_stats.per_channel_mean.empty()) {
        mean = stats_tensor(db.latent_stats.per_channel_mean);
        dev = stats_tensor(db.latent_stats.per_channel_std);
        ts.emplace_back("stats/mean", &mean);
        ts.emplace_back("stats/std", &dev);
    }
    write_checkpoint(path, std::move(m), ts);
}

DiffusionBundle load_diffusion_checkpoint(const std::string& path,
                                          CheckpointManifest* out_manifest) {
    LoadedCheckpoint ck = read_checkpoint(path);
    require_kind(ck.manifest, "diffusion", path);
    RunConfig cfg = config_from_manifest(ck.manifest, path);

    DiffusionBundle db = make_diffusion_bundle(cfg);
    db.trained_steps = extra_int(ck.manifest, "trained_steps", path);
    restore_group(ck, "live/", db.net.params(), true, path);
    restore_group(ck, "ema/", db.ema.params(), false, path);
    if (ck.has("stats/mean")) {
        db.latent_stats.per_channel_mean = ck.at("stats/mean").v;
        db.latent_stats.per_channel_std = ck.at("stats/std").v;
    }
    if (out_manifest) *out_manifest = ck.manifest;
    return db;
}

}  // namespace flowtok
