// Reverse-mode gradients for the fixed op set, bias-corrected Adam with the
// warmup / step-drop schedulers, and the two-stage driver: inter-subject
// pre-training followed by subject-specific fine-tuning on sessions 1-5
// with per-session evaluation on 6-10.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bioformer/data.hpp"
#include "bioformer/model.hpp"

namespace bioformer {

struct TrainConfig {
    int pretrain_epochs = 100;
    int finetune_epochs = 20;
    // Warmup endpoints are fixed by the protocol; the span is a knob
    // (default: the first 10 pretrain epochs, then constant peak).
    int warmup_epochs = 10;
    float warmup_start_lr = 1e-7f;
    float pretrain_peak_lr = 5e-4f;
    float finetune_lr = 1e-4f;
    int finetune_drop_epoch = 10;  // lr x0.1 from this epoch on
    int batch_size = 64;
    std::uint64_t seed = 0xB10F0;
    float adam_beta1 = 0.9f;
    float adam_beta2 = 0.999f;
    float adam_eps = 1e-8f;
    // Per-session eval cadence during fine-tuning; 0 = final epoch only.
    int eval_every = 0;

    void validate() const;  // throws ConfigError
};

enum class Phase { Pretrain, Finetune };
const char* phase_name(Phase p);

struct OptimizerState {
    ModelParams m, v;  // Adam moments, shapes mirror the model params
    std::int64_t step = 0;
};
OptimizerState make_optimizer(const BioformerConfig& cfg);

// Mean softmax cross-entropy over the batch. `grads` is overwritten with
// ModelParams-shaped gradients; *correct (optional) receives the top-1 hit
// count. Per-sample gradients are accumulated over a fixed chunk tree, so
// the result is bit-identical for any worker count (BIOFORMER_THREADS).
float loss_and_grads(const ModelParams& p, const BioformerConfig& cfg,
                     const WindowDataset& ds, std::span<const std::size_t> idx,
                     ModelParams& grads, int* correct = nullptr);

// Cross-entropy loss of one captured forward pass plus reverse-mode
// accumulation (+=) into grads. Shared with quantization-aware training,
// which backpropagates through the quantized forward's trace (straight-
// through estimator). Returns the sample loss.
double backward_from_trace(const ModelParams& p, const BioformerConfig& cfg,
                           const ForwardTrace& trace, int label,
                           ModelParams& grads, int& correct);

// Deterministic batch-mean reduction scaffold: sample_loss(i, g, correct)
// must add sample i's gradients into g and return its loss. Samples are
// partitioned into a fixed chunk tree whose reduction order is independent
// of the worker count, so results are bit-identical under BIOFORMER_THREADS.
// sample_loss runs concurrently and must only touch its own arguments.
float accumulate_grads(
    const BioformerConfig& cfg, std::size_t n,
    const std::function<double(std::size_t, ModelParams&, int&)>& sample_loss,
    ModelParams& grads, int* correct = nullptr);

// In-place bias-corrected Adam update; increments st.step.
void adam_step(ModelParams& p, const ModelParams& grads, OptimizerState& st,
               const TrainConfig& tc, float lr);

// Pretrain: linear from warmup_start_lr at global step 0 to the peak at the
// end of the warmup span, constant after. Finetune: finetune_lr before
// finetune_drop_epoch, x0.1 from it on.
float lr_at(Phase phase, int epoch, int step_in_epoch, int steps_per_epoch,
            const TrainConfig& tc);

struct MetricsRow {
    int epoch = 0;
    Phase phase = Phase::Pretrain;
    float lr = 0.0f;
    float loss = 0.0f;
    float train_acc = 0.0f;
    int session = -1;        // -1 on epoch-summary rows
    float test_acc = -1.0f;  // valid on per-session rows only
};

// CSV: epoch,phase,lr,loss,train_acc,session,test_acc. Session cells are
// blank on summary rows. Formatting is fixed so identical runs emit
// identical bytes.
std::string metrics_to_csv(const std::vector<MetricsRow>& rows);

// Indices of every window not belonging to target_subject, ascending.
// Throws if the target is absent or the remaining pool is empty.
std::vector<std::size_t> pretrain_pool(const WindowDataset& ds,
                                       int target_subject);

// Trains fresh weights on all subjects except the target.
ModelParams pretrain_inter_subject(const WindowDataset& ds, int target_subject,
                                   const BioformerConfig& cfg,
                                   const TrainConfig& tc,
                                   std::vector<MetricsRow>* metrics = nullptr);

struct FinetuneResult {
    ModelParams params;
    std::map<int, float> session_acc;  // held-out sessions (6-10)
};

// Fine-tunes `init` on the subject's sessions 1-5 and reports window-level
// accuracy per held-out session 6-10. A split audit on window ids verifies
// no test window ever reaches a gradient step.
FinetuneResult finetune_subject(const ModelParams& init,
                                const WindowDataset& ds, int subject,
                                const BioformerConfig& cfg,
                                const TrainConfig& tc,
                                std::vector<MetricsRow>* metrics = nullptr);

// Window-level top-1 accuracy over the listed indices.
float evaluate(const ModelParams& p, const BioformerConfig& cfg,
               const WindowDataset& ds, std::span<const std::size_t> idx);

}  // namespace bioformer
