#pragma once
// Optimizers (AdamW, RAdam), the deterministic training loop with dev-argmax
// model selection, and accuracy evaluation.

#include <functional>
#include <optional>
#include <ostream>

#include "kgqa/model.hpp"

namespace kgqa {

struct OptimizerHparams {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
};

struct OptimizerState {
    std::uint64_t step_count = 0;
    std::vector<double> m;
    std::vector<double> v;

    void ensure_shape(const std::vector<TensorRef>& params);
};

// Decoupled weight decay: the decay term applies directly to the parameters
// and never enters the moments.
void adamw_step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
                OptimizerState& state, const OptimizerHparams& h);

// Rectified Adam. While the variance rectification term is undefined
// (rho_t <= 4, which covers the first few steps), the update falls back to
// bias-corrected momentum SGD. Same decoupled weight decay as adamw_step.
void radam_step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
                OptimizerState& state, const OptimizerHparams& h);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    int batch_size = 128;
    int epochs = 20;
    double learning_rate = 1e-4;
    std::string optimizer = "radam";  // "radam" | "adamw"
    double weight_decay = 0.0;
    std::uint64_t seed = 7;
    bool facts_mode = true;
    double clip_norm = 1.0;  // global-norm gradient clip; <= 0 disables
    int threads = 1;

    void validate() const;
};

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double dev_acc = 0.0;
};

struct TrainRun {
    std::vector<EpochMetrics> epochs;
    int best_epoch = -1;  // argmax dev accuracy, earliest on ties
    double best_dev_acc = 0.0;
    double test_acc = 0.0;
    double wall_clock_seconds = 0.0;
};

struct Dataset {
    std::vector<CompiledExample> train;
    std::vector<CompiledExample> dev;
    std::vector<CompiledExample> test;
};

// Accuracy with argmax ties broken toward the lowest choice index.
double evaluate(const ModelParams& params, std::span<const CompiledExample> split);
double evaluate(const BaselineParams& params, std::span<const CompiledExample> split);

// Deterministic for a fixed config: seeded per-epoch shuffling, fixed-size
// gradient tasks reduced in task order (so the thread count does not change
// the arithmetic). Streams one JSON line per epoch to metrics_stream when
// given. Test accuracy is computed exactly once, on the best-dev params.
TrainRun train_qagnn(const Dataset& data, const ModelConfig& mcfg, const TrainConfig& tcfg,
                     ModelParams* best_params_out, std::ostream* metrics_stream);
TrainRun train_baseline(const Dataset& data, const ModelConfig& mcfg, const TrainConfig& tcfg,
                        BaselineParams* best_params_out, std::ostream* metrics_stream);

// Batch gradient step used by the loops above; exposed for tests. Returns
// the mean loss over the batch; gradients land in grads.
double batch_gradients(std::span<const CompiledExample> batch, const ModelParams& params,
                       ModelParams& grads, int threads);
double batch_gradients(std::span<const CompiledExample> batch, const BaselineParams& params,
                       BaselineParams& grads, int threads);

double global_grad_norm(const std::vector<TensorRef>& grads);
void clip_gradients(const std::vector<TensorRef>& grads, double max_norm);

}  // namespace kgqa
