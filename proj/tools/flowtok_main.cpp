// flowtok command-line driver. One subcommand per process; every artifact
// lands under --run-dir with a manifest tracking which phase produced what
// under which config. Exit codes: 0 success or up-to-date no-op, 2 config
// error, 3 missing prerequisite or config mismatch, 1 runtime failure.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "flowtok/checkpoint.hpp"
#include "flowtok/config.hpp"
#include "flowtok/dataset.hpp"
#include "flowtok/diffusion.hpp"
#include "flowtok/errors.hpp"
#include "flowtok/evalsuite.hpp"
#include "flowtok/image_io.hpp"
#include "flowtok/metrics_io.hpp"
#include "flowtok/plot.hpp"
#include "flowtok/rng.hpp"
#include "flowtok/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace flowtok;

namespace {

struct RunPaths {
    fs::path dir, manifest, records, lock, checkpoints, samples, plots;

    fs::path encoder_ckpt() const { return checkpoints / "encoder.fck"; }
    fs::path stage_ckpt(int n) const { return checkpoints / ("stage" + std::to_string(n) + ".fck"); }
    fs::path diffusion_ckpt() const { return checkpoints / "diffusion.fck"; }
};

RunPaths run_paths(const std::string& run_dir) {
    RunPaths p;
    p.dir = run_dir;
    p.manifest = p.dir / "manifest";
    p.records = p.dir / "records";
    p.lock = p.dir / "lock";
    p.checkpoints = p.dir / "checkpoints";
    p.samples = p.dir / "samples";
    p.plots = p.dir / "plots";
    return p;
}

std::string rel(const RunPaths& p, const fs::path& path) {
    return fs::relative(path, p.dir).generic_string();
}

// Exclusive creation of the lock file serializes writers; the file is removed
// on scope exit, including the exception paths.
class RunLock {
public:
    explicit RunLock(fs::path path) : path_(std::move(path)) {
        int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0)
            throw IoError("run directory is locked (" + path_.string() +
                          " exists); is another command running? remove the file if it is stale");
        ::close(fd);
    }
    ~RunLock() { ::unlink(path_.c_str()); }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    fs::path path_;
};

struct PhaseEntry {
    std::string phase;
    std::string config_hash;  // decimal string; full hash of the phase's resolved config
    std::string inputs;       // extra fingerprint for phases whose inputs can grow
    std::vector<std::string> artifacts;  // run-dir-relative paths
};

struct RunState {
    std::string run_id;
    std::string config_text;  // snapshot from the first command in this dir
    std::string config_hash;
    std::vector<PhaseEntry> history;
};

RunState load_state(const RunPaths& p) {
    RunState st;
    if (!fs::exists(p.manifest)) return st;
    std::ifstream in(p.manifest);
    json j;
    try {
        in >> j;
        st.run_id = j.at("run_id").get<std::string>();
        st.config_text = j.at("config").get<std::string>();
        st.config_hash = j.at("config_hash").get<std::string>();
        for (const auto& e : j.at("history")) {
            PhaseEntry pe;
            pe.phase = e.at("phase").get<std::string>();
            pe.config_hash = e.at("config_hash").get<std::string>();
            pe.inputs = e.value("inputs", "");
            for (const auto& a : e.at("artifacts")) pe.artifacts.push_back(a.get<std::string>());
            st.history.push_back(std::move(pe));
        }
    } catch (const json::exception& e) {
        throw IoError("malformed run manifest " + p.manifest.string() + ": " + e.what());
    }
    return st;
}

void save_state(const RunPaths& p, const RunState& st) {
    json j;
    j["format_version"] = 1;
    j["run_id"] = st.run_id;
    j["config"] = st.config_text;
    j["config_hash"] = st.config_hash;
    j["records"] = "records";
    j["history"] = json::array();
    for (const auto& e : st.history) {
        json je;
        je["phase"] = e.phase;
        je["config_hash"] = e.config_hash;
        je["inputs"] = e.inputs;
        je["artifacts"] = e.artifacts;
        j["history"].push_back(je);
    }
    fs::path tmp = p.manifest;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << j.dump(2) << "\n";
        if (!out) throw IoError("cannot write " + tmp.string());
    }
    fs::rename(tmp, p.manifest);
}

const PhaseEntry* find_phase(const RunState& st, const std::string& phase) {
    for (auto it = st.history.rbegin(); it != st.history.rend(); ++it)
        if (it->phase == phase) return &*it;
    return nullptr;
}

void record_phase(RunState& st, std::string phase, const RunConfig& cfg, std::string inputs,
                  std::vector<std::string> artifacts) {
    st.history.push_back({std::move(phase), std::to_string(config_hash(cfg)), std::move(inputs),
                          std::move(artifacts)});
}

// Hash with the sampling-time keys pinned to their defaults. Prerequisite and
// re-run checks of the training phases compare this, so `sample --cfg 4.0`
// can reuse checkpoints trained under the same training config.
uint64_t training_hash(RunConfig cfg) {
    const RunConfig d{};
    cfg.sample_steps = d.sample_steps;
    cfg.cfg_scale = d.cfg_scale;
    cfg.cfg_channels = d.cfg_channels;
    cfg.sample_count = d.sample_count;
    cfg.log_interval = d.log_interval;
    return config_hash(cfg);
}

uint64_t training_hash_of_text(const std::string& config_text) {
    return training_hash(parse_config_text(config_text));
}

// Per-subcommand argument state. The kv map backs one CLI11 string option per
// config key; only keys the user actually passed are applied.
struct SubCtx {
    CLI::App* sub = nullptr;
    std::string run_dir, config_file;
    std::map<std::string, std::string> kv;
    int stage = 0;
    std::string steps_alias, cfg_alias;
};

const ConfigKey& key_named(const std::string& name) {
    for (const auto& k : config_keys())
        if (k.name == name) return k;
    throw ConfigError("unknown config key: " + name);
}

RunConfig resolve_config(const SubCtx& c, const RunState& st) {
    RunConfig cfg;
    if (!st.config_text.empty()) cfg = parse_config_text(st.config_text, cfg);
    if (!c.config_file.empty()) cfg = load_config_file(c.config_file, cfg);
    for (const auto& k : config_keys())
        if (c.sub->count("--" + k.name)) k.set(cfg, c.kv.at(k.name));
    auto alias = [&](const char* flag, const char* key, const std::string& value) {
        const CLI::Option* opt = c.sub->get_option_no_throw(flag);
        if (opt && opt->count()) key_named(key).set(cfg, value);
    };
    alias("--steps", "sample_steps", c.steps_alias);
    alias("--cfg", "cfg_scale", c.cfg_alias);
    return validate_run_config(cfg);
}

void ensure_run_id(RunState& st, const RunConfig& cfg) {
    if (!st.run_id.empty()) return;
    std::ostringstream id;
    id << "run-" << std::hex << config_hash(cfg);
    st.run_id = id.str();
    st.config_text = serialize_config(cfg);
    st.config_hash = std::to_string(config_hash(cfg));
}

std::pair<Dataset, Dataset> make_splits(const RunConfig& cfg) {
    DatasetSpec spec;
    spec.image_size = cfg.tok.image_size;
    spec.seed = cfg.tok.seed;
    if (cfg.dataset == "synthetic") {
        spec.source = DataSource::synthetic_shapes;
        spec.K = cfg.num_classes;
        spec.n_per_class =
            (cfg.train_size + cfg.val_size + cfg.num_classes - 1) / cfg.num_classes;
    } else {
        spec.source = DataSource::image_folder;
        spec.path = cfg.dataset;
    }
    return split_dataset(build_dataset(spec), cfg.train_size, cfg.val_size);
}

EncoderConfig encoder_config_from(const RunConfig& cfg) {
    EncoderConfig ec;
    ec.image_size = cfg.tok.image_size;
    ec.f = cfg.tok.f;
    ec.dim = cfg.enc_dim;
    ec.depth = cfg.enc_depth;
    ec.heads = cfg.enc_heads;
    return ec;
}

enum class Guard { Proceed, Noop, Refuse };

// Phases that produce a checkpoint are guarded by the checkpoint itself: its
// embedded config either matches the request (nothing to do) or it does not
// (refuse rather than overwrite).
Guard guard_checkpoint(const fs::path& out, const RunConfig& cfg) {
    if (!fs::exists(out)) return Guard::Proceed;
    CheckpointManifest m = read_checkpoint_manifest(out.string());
    return training_hash_of_text(m.config_text) == training_hash(cfg) ? Guard::Noop
                                                                      : Guard::Refuse;
}

// Phases without a checkpoint are guarded by their manifest history entry.
// Equal hash with equal inputs and intact artifacts is a no-op; equal hash
// with changed inputs re-runs (records grew); a different hash refuses.
Guard guard_history(const RunPaths& p, const RunState& st, const std::string& phase,
                    const RunConfig& cfg, const std::string& inputs) {
    const PhaseEntry* e = find_phase(st, phase);
    if (!e) return Guard::Proceed;
    if (e->config_hash != std::to_string(config_hash(cfg))) return Guard::Refuse;
    if (e->inputs != inputs) return Guard::Proceed;
    for (const auto& a : e->artifacts)
        if (!fs::exists(p.dir / a)) return Guard::Proceed;
    return Guard::Noop;
}

int finish_guard(Guard g, const std::string& phase, const RunPaths& p) {
    if (g == Guard::Noop) {
        std::cout << phase << ": up to date in " << p.dir.string() << ", nothing to do\n";
        return 0;
    }
    std::cerr << "error: " << phase << " already ran in " << p.dir.string()
              << " under a different config; refusing to overwrite (use a new run directory)\n";
    return 3;
}

void require_artifact(const fs::path& path, const std::string& what, const std::string& producer) {
    if (!fs::exists(path))
        throw MissingArtifact(what + " missing (" + path.string() + "); run `" + producer +
                              "` first");
}

// Prerequisite checkpoints must have been trained under the same training
// config as the current request.
void require_compatible(const CheckpointManifest& m, const RunConfig& cfg, const fs::path& path) {
    if (training_hash_of_text(m.config_text) != training_hash(cfg))
        throw MissingArtifact("checkpoint " + path.string() +
                              " was produced under a different config; use a matching config or "
                              "a new run directory");
}

Tensor image_at(const Tensor& batch, int i) {
    const int h = batch.shape[1], w = batch.shape[2], c = batch.shape[3];
    Tensor out({h, w, c});
    const int64_t per = int64_t(h) * w * c;
    std::copy(batch.v.begin() + i * per, batch.v.begin() + (i + 1) * per, out.v.begin());
    return out;
}

// --- subcommand bodies ---------------------------------------------------

struct RunEnv {
    RunPaths paths;
    std::unique_ptr<RunLock> lock;
    RunState state;
    RunConfig cfg;
};

RunEnv open_run(const SubCtx& c) {
    RunEnv env;
    env.paths = run_paths(c.run_dir);
    fs::create_directories(env.paths.dir);
    env.lock = std::make_unique<RunLock>(env.paths.lock);
    env.state = load_state(env.paths);
    env.cfg = resolve_config(c, env.state);
    ensure_run_id(env.state, env.cfg);
    return env;
}

int cmd_pretrain_encoder(const SubCtx& c) {
    RunEnv env = open_run(c);
    const RunPaths& p = env.paths;
    const fs::path out = p.encoder_ckpt();
    if (Guard g = guard_checkpoint(out, env.cfg); g != Guard::Proceed)
        return finish_guard(g, "pretrain-encoder", p);
    fs::create_directories(p.checkpoints);
    Dataset train = make_splits(env.cfg).first;
    ToyEncoder enc =
        pretrain_toy_encoder(train, encoder_config_from(env.cfg), env.cfg.enc_pretrain_epochs,
                             env.cfg.batch_size, env.cfg.enc_pretrain_lr, env.cfg.tok.seed);
    save_encoder_checkpoint(out.string(), enc, env.cfg);
    record_phase(env.state, "pretrain-encoder", env.cfg, "", {rel(p, out)});
    save_state(p, env.state);
    std::cout << "pretrain-encoder: wrote " << out.string() << "\n";
    return 0;
}

int cmd_align(const SubCtx& c) {
    RunEnv env = open_run(c);
    const RunPaths& p = env.paths;
    const std::string phase = "align-stage" + std::to_string(c.stage);
    const fs::path out = p.stage_ckpt(c.stage);
    if (Guard g = guard_checkpoint(out, env.cfg); g != Guard::Proceed)
        return finish_guard(g, phase, p);
    fs::create_directories(p.checkpoints);

    TokenizerBundle bundle;
    if (c.stage == 1) {
        require_artifact(p.encoder_ckpt(), "pretrained encoder checkpoint", "pretrain-encoder");
        CheckpointManifest m;
        ToyEncoder enc = load_encoder_checkpoint(p.encoder_ckpt().string(), &m);
        require_compatible(m, env.cfg, p.encoder_ckpt());
        bundle = make_bundle(env.cfg, enc);
    } else {
        const fs::path prev = p.stage_ckpt(c.stage - 1);
        require_artifact(prev, "stage " + std::to_string(c.stage - 1) + " checkpoint",
                         "align --stage " + std::to_string(c.stage - 1));
        CheckpointManifest m;
        bundle = load_tokenizer_checkpoint(prev.string(), &m);
        require_compatible(m, env.cfg, prev);
        bundle.cfg = env.cfg;  // sampling-time keys may legitimately differ
    }

    StageSchedule sched = StageSchedule::for_stage(stage_from_index(c.stage), env.cfg);
    Dataset train = make_splits(env.cfg).first;
    MetricsWriter metrics(p.records.string());
    run_stage(bundle, sched, train, &metrics);
    save_tokenizer_checkpoint(out.string(), bundle);
    record_phase(env.state, phase, env.cfg, "", {rel(p, out)});
    save_state(p, env.state);
    std::cout << phase << ": wrote " << out.string() << "\n";
    return 0;
}

int cmd_train_diffusion(const SubCtx& c) {
    RunEnv env = open_run(c);
    const RunPaths& p = env.paths;
    const fs::path out = p.diffusion_ckpt();
    if (Guard g = guard_checkpoint(out, env.cfg); g != Guard::Proceed)
        return finish_guard(g, "train-diffusion", p);
    fs::create_directories(p.checkpoints);

    require_artifact(p.stage_ckpt(3), "completed tokenizer (stage 3) checkpoint",
                     "align --stage 3");
    CheckpointManifest m;
    TokenizerBundle tok = load_tokenizer_checkpoint(p.stage_ckpt(3).string(), &m);
    require_compatible(m, env.cfg, p.stage_ckpt(3));
    tok.cfg = env.cfg;

    DiffusionBundle db = make_diffusion_bundle(env.cfg);
    Dataset train = make_splits(env.cfg).first;
    MetricsWriter metrics(p.records.string());
    train_diffusion(db, tok, train, env.cfg.diff_train_steps, &metrics);
    save_diffusion_checkpoint(out.string(), db, env.cfg);
    record_phase(env.state, "train-diffusion", env.cfg, "", {rel(p, out)});
    save_state(p, env.state);
    std::cout << "train-diffusion: wrote " << out.string() << "\n";
    return 0;
}

int cmd_sample(const SubCtx& c) {
    RunEnv env = open_run(c);
    const RunPaths& p = env.paths;
    if (Guard g = guard_history(p, env.state, "sample", env.cfg, ""); g != Guard::Proceed)
        return finish_guard(g, "sample", p);

    require_artifact(p.stage_ckpt(3), "completed tokenizer (stage 3) checkpoint",
                     "align --stage 3");
    require_artifact(p.diffusion_ckpt(), "diffusion checkpoint", "train-diffusion");
    CheckpointManifest mt, md;
    TokenizerBundle tok = load_tokenizer_checkpoint(p.stage_ckpt(3).string(), &mt);
    require_compatible(mt, env.cfg, p.stage_ckpt(3));
    DiffusionBundle db = load_diffusion_checkpoint(p.diffusion_ckpt().string(), &md);
    require_compatible(md, env.cfg, p.diffusion_ckpt());

    fs::create_directories(p.samples);
    SamplerConfig scfg;
    scfg.steps = env.cfg.sample_steps;
    scfg.cfg_scale = env.cfg.cfg_scale;
    scfg.cfg_channels = CfgChannels{env.cfg.cfg_channels};
    const int num_classes = db.net.config().num_classes;
    std::vector<std::string> artifacts;
    for (int k = 0; k < num_classes; ++k) {
        const int count = env.cfg.sample_count / num_classes +
                          (k < env.cfg.sample_count % num_classes ? 1 : 0);
        if (count == 0) continue;
        scfg.seed = Rng::mix(Rng::mix(env.cfg.tok.seed, fnv1a_str("sample")), uint64_t(k));
        ImageBatch imgs = sample_images(db, tok, scfg, k, count);
        for (int j = 0; j < imgs.batch(); ++j) {
            fs::path file =
                p.samples / ("class" + std::to_string(k) + "_" + std::to_string(j) + ".png");
            write_png(file.string(), image_at(imgs.pixels, j));
            artifacts.push_back(rel(p, file));
        }
    }
    const size_t n = artifacts.size();
    record_phase(env.state, "sample", env.cfg, "", std::move(artifacts));
    save_state(p, env.state);
    std::cout << "sample: wrote " << n << " images to " << p.samples.string() << "\n";
    return 0;
}

int cmd_evaluate(const SubCtx& c) {
    RunEnv env = open_run(c);
    const RunPaths& p = env.paths;

    int best = 0;
    for (int n = 3; n >= 1 && best == 0; --n)
        if (fs::exists(p.stage_ckpt(n))) best = n;
    if (best == 0)
        throw MissingArtifact("no tokenizer checkpoint under " + p.checkpoints.string() +
                              "; run `align` first");
    const bool with_diffusion = fs::exists(p.diffusion_ckpt());
    const std::string inputs =
        "stage" + std::to_string(best) + (with_diffusion ? "+diffusion" : "");
    if (Guard g = guard_history(p, env.state, "evaluate", env.cfg, inputs); g != Guard::Proceed)
        return finish_guard(g, "evaluate", p);

    CheckpointManifest m;
    TokenizerBundle tok = load_tokenizer_checkpoint(p.stage_ckpt(best).string(), &m);
    require_compatible(m, env.cfg, p.stage_ckpt(best));
    tok.cfg = env.cfg;

    Dataset val = make_splits(env.cfg).second;
    const int stage_steps[3] = {env.cfg.steps_stage1, env.cfg.steps_stage2,
                                env.cfg.steps_stage3};
    int64_t step = 0;
    for (int n = 0; n < best; ++n) step += stage_steps[n];

    std::vector<MetricRecord> recs = evaluate_tokenizer(tok, val, step);
    if (with_diffusion) {
        CheckpointManifest md;
        DiffusionBundle db = load_diffusion_checkpoint(p.diffusion_ckpt().string(), &md);
        require_compatible(md, env.cfg, p.diffusion_ckpt());
        SamplerConfig scfg;
        scfg.steps = env.cfg.sample_steps;
        scfg.cfg_scale = env.cfg.cfg_scale;
        scfg.cfg_channels = CfgChannels{env.cfg.cfg_channels};
        const int num_classes = db.net.config().num_classes;
        const int total = std::min(env.cfg.sample_count, val.size());
        Tensor gen;
        int filled = 0;
        for (int k = 0; k < num_classes; ++k) {
            const int count = total / num_classes + (k < total % num_classes ? 1 : 0);
            if (count == 0) continue;
            scfg.seed = Rng::mix(Rng::mix(env.cfg.tok.seed, fnv1a_str("evaluate")), uint64_t(k));
            ImageBatch imgs = sample_images(db, tok, scfg, k, count);
            if (gen.empty())
                gen = Tensor({total, imgs.pixels.shape[1], imgs.pixels.shape[2], 3});
            const int64_t per = imgs.pixels.numel() / imgs.batch();
            std::copy(imgs.pixels.v.begin(), imgs.pixels.v.end(),
                      gen.v.begin() + int64_t(filled) * per);
            filled += imgs.batch();
        }
        MetricRecord r;
        r.step = step;
        r.name = "gen_frechet";
        r.value = frechet_feature_distance(tok.perceptual_net, gen, val.images);
        recs.push_back(r);
    }
    MetricsWriter metrics(p.records.string());
    for (auto& r : recs) {
        r.tags["phase"] = "evaluate";
        r.tags["stage"] = "stage" + std::to_string(best);
        metrics.write(r);
        std::cout << r.name << " = " << r.value << "\n";
    }
    record_phase(env.state, "evaluate", env.cfg, inputs, {"records"});
    save_state(p, env.state);
    return 0;
}

int cmd_plot(const SubCtx& c) {
    RunEnv env = open_run(c);
    const RunPaths& p = env.paths;
    if (!fs::exists(p.records) || fs::file_size(p.records) == 0)
        throw MissingArtifact("no records at " + p.records.string() +
                              "; run a training phase first");
    const std::string inputs = std::to_string(fs::file_size(p.records));
    if (Guard g = guard_history(p, env.state, "plot", env.cfg, inputs); g != Guard::Proceed)
        return finish_guard(g, "plot", p);

    const std::vector<MetricRecord> recs = read_metrics(p.records.string());
    fs::create_directories(p.plots);

    auto collect = [&recs](const std::function<bool(const MetricRecord&)>& pred,
                           const std::string& label) {
        PlotSeries s;
        s.label = label;
        for (const auto& r : recs)
            if (pred(r)) {
                s.x.push_back(double(r.step));
                s.y.push_back(r.value);
            }
        return s;
    };
    auto tag_of = [](const MetricRecord& r, const char* key) {
        auto it = r.tags.find(key);
        return it == r.tags.end() ? std::string() : it->second;
    };

    std::vector<std::string> artifacts;
    auto emit_chart = [&](std::vector<PlotSeries> series, const std::string& file,
                          PlotOptions opt) {
        std::erase_if(series, [](const PlotSeries& s) { return s.x.empty(); });
        if (series.empty()) return;
        fs::path path = p.plots / file;
        write_line_chart(path.string(), series, opt);
        artifacts.push_back(rel(p, path));
        std::cout << "plot: wrote " << path.string() << "\n";
    };

    {
        std::vector<PlotSeries> series;
        for (int n = 1; n <= 3; ++n) {
            std::string stage = "stage" + std::to_string(n);
            series.push_back(collect(
                [&](const MetricRecord& r) {
                    return r.name == "loss_total" && tag_of(r, "stage") == stage &&
                           tag_of(r, "phase").empty();
                },
                stage));
        }
        PlotOptions opt;
        opt.title = "alignment training loss";
        opt.y_label = "loss_total";
        emit_chart(std::move(series), "alignment.png", opt);
    }
    {
        std::vector<PlotSeries> series;
        series.push_back(
            collect([](const MetricRecord& r) { return r.name == "loss_fm"; }, "loss_fm"));
        PlotOptions opt;
        opt.title = "flow matching loss";
        opt.y_label = "loss_fm";
        emit_chart(std::move(series), "diffusion.png", opt);
    }
    {
        std::vector<PlotSeries> series;
        for (const char* name : {"psnr", "l1", "rfid_proxy", "probe_acc", "gen_frechet"})
            series.push_back(collect(
                [&](const MetricRecord& r) {
                    return r.name == name && tag_of(r, "phase") == "evaluate";
                },
                name));
        PlotOptions opt;
        opt.title = "evaluation metrics";
        opt.y_label = "value";
        emit_chart(std::move(series), "evaluation.png", opt);
    }

    if (artifacts.empty())
        throw MissingArtifact("records at " + p.records.string() +
                              " contain no plottable series");
    record_phase(env.state, "plot", env.cfg, inputs, std::move(artifacts));
    save_state(p, env.state);
    return 0;
}

// --- wiring ---------------------------------------------------------------

SubCtx* add_subcommand(CLI::App& app, std::vector<std::unique_ptr<SubCtx>>& all,
                       const std::string& name, const std::string& desc) {
    auto ctx = std::make_unique<SubCtx>();
    ctx->sub = app.add_subcommand(name, desc);
    ctx->sub->add_option("--run-dir", ctx->run_dir, "run directory (created if absent)")
        ->required();
    ctx->sub->add_option("--config", ctx->config_file, "config file of `key = value` lines");
    for (const auto& k : config_keys())
        ctx->sub->add_option("--" + k.name, ctx->kv[k.name], k.help);
    all.push_back(std::move(ctx));
    return all.back().get();
}

int dispatch(const SubCtx& c, const std::function<int(const SubCtx&)>& body) {
    try {
        return body(c);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DatasetTooSmall& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const MissingArtifact& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const StageOrderError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tokenizer alignment + latent flow matching pipeline"};
    app.require_subcommand(1);
    std::vector<std::unique_ptr<SubCtx>> ctxs;

    SubCtx* pre = add_subcommand(app, ctxs, "pretrain-encoder",
                                 "supervised toy pretraining of the visual encoder");
    SubCtx* align = add_subcommand(app, ctxs, "align", "run one tokenizer alignment stage");
    align->sub->add_option("--stage", align->stage, "alignment stage (1, 2 or 3)")
        ->required()
        ->check(CLI::Range(1, 3));
    SubCtx* diff = add_subcommand(app, ctxs, "train-diffusion",
                                  "flow-matching training on the aligned latents");
    SubCtx* smp = add_subcommand(app, ctxs, "sample", "generate images from the trained model");
    smp->sub->add_option("--steps", smp->steps_alias, "alias for --sample_steps");
    smp->sub->add_option("--cfg", smp->cfg_alias, "alias for --cfg_scale");
    SubCtx* eval = add_subcommand(app, ctxs, "evaluate",
                                  "reconstruction, probe and generation metrics");
    SubCtx* plt = add_subcommand(app, ctxs, "plot", "render metric curves from the record file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (pre->sub->parsed()) return dispatch(*pre, cmd_pretrain_encoder);
    if (align->sub->parsed()) return dispatch(*align, cmd_align);
    if (diff->sub->parsed()) return dispatch(*diff, cmd_train_diffusion);
    if (smp->sub->parsed()) return dispatch(*smp, cmd_sample);
    if (eval->sub->parsed()) return dispatch(*eval, cmd_evaluate);
    if (plt->sub->parsed()) return dispatch(*plt, cmd_plot);
    return 2;
}
