#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "flowtok/config.hpp"
#include "flowtok/diffusion.hpp"
#include "flowtok/encoder.hpp"
#include "flowtok/tensor.hpp"
#include "flowtok/trainer.hpp"

namespace flowtok {

// Container layout: a magic line, the manifest byte length on its own line,
// the JSON manifest, one newline, then every tensor's raw little-endian
// float32 payload concatenated in index order. Identical inputs serialize to
// identical bytes.

struct TensorEntry {
    std::string name;
    std::vector<int> shape;
    int64_t offset = 0;  // in floats, from the start of the payload section
    int64_t count = 0;
};

struct CheckpointManifest {
    int format_version = 1;
    std::string kind;       // tokenizer | encoder | diffusion
    std::string stage_tag;  // stage1..stage3 | pretrained | diffusion
    uint64_t config_hash = 0;
    std::string config_text;  // canonical serialize_config output
    std::map<std::string, std::string> extra;
    std::vector<TensorEntry> tensors;
};

void write_checkpoint(const std::string& path, CheckpointManifest manifest,
                      const std::vector<std::pair<std::string, const Tensor*>>& tensors);

struct LoadedCheckpoint {
    CheckpointManifest manifest;
    std::map<std::string, Tensor> tensors;

    bool has(const std::string& name) const { return tensors.count(name) > 0; }
    const Tensor& at(const std::string& name) const;  // MissingArtifact when absent
};

// MissingArtifact when the file does not exist; IoError on bad magic, version,
// malformed manifest, or truncated payload.
LoadedCheckpoint read_checkpoint(const std::string& path);
// Manifest only, payload skipped; used for cheap hash checks.
CheckpointManifest read_checkpoint_manifest(const std::string& path);

// Tokenizer bundles persist every parameter group with Adam moments for the
// live nets, values for the EMA/frozen nets, the latent stats, and the
// completed stage.
void save_tokenizer_checkpoint(const std::string& path, const TokenizerBundle& b);
TokenizerBundle load_tokenizer_checkpoint(const std::string& path,
                                          CheckpointManifest* out_manifest = nullptr);

void save_encoder_checkpoint(const std::string& path, const ToyEncoder& enc,
                             const RunConfig& cfg);
ToyEncoder load_encoder_checkpoint(const std::string& path,
                                   CheckpointManifest* out_manifest = nullptr);

void save_diffusion_checkpoint(const std::string& path, const DiffusionBundle& db,
                               const RunConfig& cfg);
DiffusionBundle load_diffusion_checkpoint(const std::string& path,
                                          CheckpointManifest* out_manifest = nullptr);

}  // namespace flowtok
