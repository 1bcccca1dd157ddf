#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "flowtok/config.hpp"
#include "flowtok/dataset.hpp"
#include "flowtok/decoder.hpp"
#include "flowtok/encoder.hpp"
#include "flowtok/evalsuite.hpp"
#include "flowtok/losses.hpp"
#include "flowtok/metrics_io.hpp"
#include "flowtok/nn.hpp"

namespace flowtok {

enum class Stage { LatentAlignment = 1, PerceptualAlignment = 2, DecoderRefinement = 3 };

const char* stage_name(Stage s);  // "stage1" | "stage2" | "stage3"
Stage stage_from_index(int i);    // 1..3, else ConfigError

enum class SpMode { PostAdapter, PreAdapter };

struct StageSchedule {
    Stage stage = Stage::LatentAlignment;
    int steps = 0;
    double lr = 1e-4;
    bool train_encoder = false;
    bool train_adapter = false;
    bool train_decoder = false;
    bool train_discriminator = false;
    bool sp_enabled = false;
    SpMode sp_mode = SpMode::PostAdapter;

    static StageSchedule for_stage(Stage s, const RunConfig& cfg);
};

// Stage 1 keeps the GAN term off until warmup_steps (inclusive boundary: on
// at step_index == warmup_steps); stages 2 and 3 are always on.
bool gan_warmup_gate(int step_index, Stage stage, int warmup_steps);

// All live state of the tokenizer alignment. EMA shadows are tracked for the
// groups a stage trains (stages 2 and 3) and drive inference afterwards.
struct TokenizerBundle {
    RunConfig cfg;
    ToyEncoder encoder;
    Adapter adapter;
    Decoder decoder;
    Discriminator disc;
    ToyEncoder ema_encoder;
    Adapter ema_adapter;
    Decoder ema_decoder;
    ToyEncoder perceptual_net;  // frozen pretrained copy for L_perceptual
    std::optional<FrozenTokenizerRef> sp_target;  // set at stage-2 entry
    LatentStats latent_stats;
    int completed_stage = 0;  // 0 = fresh

    // EMA weights once stage 2 has completed, raw weights before.
    LatentBatch inference_tokenize(const ImageBatch& x) const;
    ImageBatch inference_decode(const LatentBatch& z) const;
};

// Fresh bundle around a pretrained encoder; the perceptual net is an
// immutable copy of it.
TokenizerBundle make_bundle(const RunConfig& cfg, const ToyEncoder& pretrained);

// One optimizer pair over the schedule's trainable groups. The bundle must
// already be positioned at the stage (enter_stage).
class AlignmentTrainer {
public:
    AlignmentTrainer(TokenizerBundle& bundle, StageSchedule sched);

    // Generator update, then one discriminator update on the detached
    // reconstruction when the warmup gate passes, then EMA. Throws
    // NonFiniteLoss with the component values on divergence.
    LossReport train_step(const ImageBatch& batch, int step_index);

    const StageSchedule& schedule() const { return sched_; }

private:
    TokenizerBundle& b_;
    StageSchedule sched_;
    std::vector<ParamTensor*> gen_params_, disc_params_;
    Adam gen_opt_, disc_opt_;
};

// Stage bookkeeping: order check, stage-2 snapshot of the frozen SP target,
// EMA shadow sync for the groups this stage trains.
void enter_stage(TokenizerBundle& b, const StageSchedule& sched);
// Marks the stage complete and refreshes latent_stats over train.
void finish_stage(TokenizerBundle& b, const StageSchedule& sched, const Dataset& train);

// enter_stage + sched.steps train steps in the seed-determined batch order +
// finish_stage. Writes loss components every cfg.log_interval steps.
void run_stage(TokenizerBundle& b, const StageSchedule& sched, const Dataset& train,
               MetricsWriter* metrics = nullptr,
               const std::function<void(int, const LossReport&)>& on_step = {});

// evaluate_tokenizer_hooks over the bundle's inference tokenizer, measured in
// the perceptual net's feature space.
std::vector<MetricRecord> evaluate_tokenizer(const TokenizerBundle& b, const Dataset& ds,
                                             int64_t step);

}  // namespace flowtok
