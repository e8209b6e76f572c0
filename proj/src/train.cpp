#include "kgqa/train.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

#include <json.hpp>

namespace kgqa {

void OptimizerState::ensure_shape(const std::vector<TensorRef>& params) {
    std::size_t total = 0;
    for (const auto& r : params) total += r.size;
    if (m.empty()) {
        m.assign(total, 0.0);
        v.assign(total, 0.0);
    } else if (m.size() != total || v.size() != total) {
        throw ContractViolation("optimizer state shape does not match parameters");
    }
}

namespace {

void check_finite_grads(const std::vector<TensorRef>& grads) {
    for (const auto& r : grads) {
        for (std::size_t i = 0; i < r.size; ++i) {
            if (!std::isfinite(r.data[i])) throw NumericError("non-finite gradient");
        }
    }
}

template <typename UpdateFn>
void optimizer_walk(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
                    OptimizerState& state, UpdateFn&& update) {
    if (params.size() != grads.size()) {
        throw ContractViolation("parameter/gradient tensor count mismatch");
    }
    std::size_t offset = 0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        if (params[t].size != grads[t].size) {
            throw ContractViolation("parameter/gradient tensor shape mismatch");
        }
        for (std::size_t i = 0; i < params[t].size; ++i) {
            update(params[t].data[i], grads[t].data[i], state.m[offset + i], state.v[offset + i]);
        }
        offset += params[t].size;
    }
}

}  // namespace

void adamw_step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
                OptimizerState& state, const OptimizerHparams& h) {
    check_finite_grads(grads);
    state.ensure_shape(params);
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bias1 = 1.0 - std::pow(h.beta1, t);
    const double bias2 = 1.0 - std::pow(h.beta2, t);
    optimizer_walk(params, grads, state, [&](double& p, double g, double& m, double& v) {
        m = h.beta1 * m + (1.0 - h.beta1) * g;
        v = h.beta2 * v + (1.0 - h.beta2) * g * g;
        const double m_hat = m / bias1;
        const double v_hat = v / bias2;
        p -= h.learning_rate * (m_hat / (std::sqrt(v_hat) + h.epsilon) + h.weight_decay * p);
    });
}

void radam_step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
                OptimizerState& state, const OptimizerHparams& h) {
    check_finite_grads(grads);
    state.ensure_shape(params);
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double beta2_t = std::pow(h.beta2, t);
    const double bias1 = 1.0 - std::pow(h.beta1, t);
    const double bias2 = 1.0 - beta2_t;
    const double rho_inf = 2.0 / (1.0 - h.beta2) - 1.0;
    const double rho_t = rho_inf - 2.0 * t * beta2_t / bias2;
    const bool rectified = rho_t > 4.0;
    double rect = 0.0;
    if (rectified) {
        rect = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                         ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
    }
    optimizer_walk(params, grads, state, [&](double& p, double g, double& m, double& v) {
        m = h.beta1 * m + (1.0 - h.beta1) * g;
        v = h.beta2 * v + (1.0 - h.beta2) * g * g;
        const double m_hat = m / bias1;
        double step;
        if (rectified) {
            const double v_hat = std::sqrt(v / bias2);
            step = rect * m_hat / (v_hat + h.epsilon);
        } else {
            step = m_hat;  // momentum-only fallback at small step counts
        }
        p -= h.learning_rate * (step + h.weight_decay * p);
    });
}

double global_grad_norm(const std::vector<TensorRef>& grads) {
    double sq = 0.0;
    for (const auto& r : grads) {
        for (std::size_t i = 0; i < r.size; ++i) sq += r.data[i] * r.data[i];
    }
    return std::sqrt(sq);
}

void clip_gradients(const std::vector<TensorRef>& grads, double max_norm) {
    if (max_norm <= 0.0) return;
    const double n = global_grad_norm(grads);
    if (n <= max_norm) return;
    const double scale = max_norm / n;
    for (const auto& r : grads) {
        for (std::size_t i = 0; i < r.size; ++i) r.data[i] *= scale;
    }
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("learning rate must be > 0");
    if (optimizer != "radam" && optimizer != "adamw") {
        throw ConfigError("optimizer must be radam or adamw");
    }
    if (threads < 1) throw ConfigError("threads must be >= 1");
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

template <typename Params>
double evaluate_impl(const Params& params, std::span<const CompiledExample> split) {
    if (split.empty()) throw DataError("evaluate: empty split");
    std::size_t correct = 0;
    for (const auto& example : split) {
        const auto scores = score_example(example, params);
        const auto probs = choice_probabilities(scores);
        int argmax = 0;
        for (int c = 1; c < 4; ++c) {
            if (probs[static_cast<std::size_t>(c)] > probs[static_cast<std::size_t>(argmax)]) {
                argmax = c;  // ties keep the lowest index
            }
        }
        if (argmax == example.gold) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(split.size());
}

}  // namespace

double evaluate(const ModelParams& params, std::span<const CompiledExample> split) {
    return evaluate_impl(params, split);
}

double evaluate(const BaselineParams& params, std::span<const CompiledExample> split) {
    return evaluate_impl(params, split);
}

// ---------------------------------------------------------------------------
// Batch gradients: fixed-size tasks, reduced in task order. The task size is
// a constant so the arithmetic is identical for every thread count.
// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kGradTaskSize = 8;

template <typename Params, typename LossFn>
double batch_gradients_impl(std::span<const CompiledExample> batch, const Params& params,
                            Params& grads, int threads, LossFn&& scaled_loss) {
    if (batch.empty()) throw ContractViolation("empty batch");
    const double inv_weight = 1.0 / static_cast<double>(batch.size());
    const std::size_t n_tasks = (batch.size() + kGradTaskSize - 1) / kGradTaskSize;

    std::vector<Params> task_grads(n_tasks, zero_like(params));
    std::vector<double> task_loss(n_tasks, 0.0);

    auto run_task = [&](std::size_t t) {
        const std::size_t begin = t * kGradTaskSize;
        const std::size_t count = std::min(kGradTaskSize, batch.size() - begin);
        task_loss[t] = scaled_loss(batch.subspan(begin, count), &task_grads[t], inv_weight);
    };

    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n_tasks);
    if (workers <= 1) {
        for (std::size_t t = 0; t < n_tasks; ++t) run_task(t);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                while (true) {
                    const std::size_t t = next.fetch_add(1);
                    if (t >= n_tasks) return;
                    run_task(t);
                }
            });
        }
        for (auto& th : pool) th.join();
    }

    double loss = 0.0;
    auto dst = tensor_refs(grads);
    for (std::size_t t = 0; t < n_tasks; ++t) {
        loss += task_loss[t];
        auto src = tensor_refs(task_grads[t]);
        for (std::size_t r = 0; r < dst.size(); ++r) {
            for (std::size_t i = 0; i < dst[r].size; ++i) dst[r].data[i] += src[r].data[i];
        }
    }
    return loss;
}

}  // namespace

double batch_gradients(std::span<const CompiledExample> batch, const ModelParams& params,
                       ModelParams& grads, int threads) {
    return batch_gradients_impl(batch, params, grads, threads,
                                [&](std::span<const CompiledExample> slice, ModelParams* g,
                                    double w) { return model_loss_and_backward_scaled(slice, params, g, w); });
}

double batch_gradients(std::span<const CompiledExample> batch, const BaselineParams& params,
                       BaselineParams& grads, int threads) {
    return batch_gradients_impl(
        batch, params, grads, threads,
        [&](std::span<const CompiledExample> slice, BaselineParams* g, double w) {
            return baseline_loss_and_backward_scaled(slice, params, g, w);
        });
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

template <typename Params, typename InitFn>
TrainRun train_loop(const Dataset& data, const ModelConfig& mcfg, const TrainConfig& tcfg,
                    Params* best_params_out, std::ostream* metrics_stream, InitFn&& init) {
    mcfg.validate();
    tcfg.validate();
    if (data.train.empty()) throw DataError("training split is empty");
    if (data.dev.empty()) throw DataError("dev split is empty");

    const auto t_start = std::chrono::steady_clock::now();
    Params params = init(mcfg);
    Params best = params;

    OptimizerHparams hparams;
    hparams.learning_rate = tcfg.learning_rate;
    hparams.weight_decay = tcfg.weight_decay;
    OptimizerState opt_state;
    const bool use_radam = tcfg.optimizer == "radam";

    TrainRun run;
    run.best_dev_acc = -1.0;

    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<CompiledExample> batch;
    batch.reserve(static_cast<std::size_t>(tcfg.batch_size));

    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        RandomSource shuffle_rng(mix64(tcfg.seed) ^ mix64(static_cast<std::uint64_t>(epoch) + 1));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        for (std::size_t begin = 0; begin < order.size();
             begin += static_cast<std::size_t>(tcfg.batch_size)) {
            const std::size_t count =
                std::min<std::size_t>(static_cast<std::size_t>(tcfg.batch_size), order.size() - begin);
            batch.clear();
            for (std::size_t i = 0; i < count; ++i) {
                batch.push_back(data.train[order[begin + i]]);
            }
            Params grads = zero_like(params);
            const double loss = batch_gradients(batch, params, grads, tcfg.threads);
            epoch_loss += loss * static_cast<double>(count);

            auto grad_refs = tensor_refs(grads);
            clip_gradients(grad_refs, tcfg.clip_norm);
            auto param_refs = tensor_refs(params);
            if (use_radam) {
                radam_step(param_refs, grad_refs, opt_state, hparams);
            } else {
                adamw_step(param_refs, grad_refs, opt_state, hparams);
            }
        }
        epoch_loss /= static_cast<double>(order.size());

        const double dev_acc = evaluate(params, data.dev);
        run.epochs.push_back({epoch, epoch_loss, dev_acc});
        if (metrics_stream) {
            nlohmann::json j;
            j["epoch"] = epoch;
            j["train_loss"] = epoch_loss;
            j["dev_acc"] = dev_acc;
            (*metrics_stream) << j.dump() << "\n";
        }
        if (dev_acc > run.best_dev_acc) {
            run.best_dev_acc = dev_acc;
            run.best_epoch = epoch;
            best = params;
        }
    }

    run.test_acc = data.test.empty() ? 0.0 : evaluate(best, data.test);
    run.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    if (best_params_out) *best_params_out = std::move(best);
    return run;
}

}  // namespace

TrainRun train_qagnn(const Dataset& data, const ModelConfig& mcfg, const TrainConfig& tcfg,
                     ModelParams* best_params_out, std::ostream* metrics_stream) {
    return train_loop<ModelParams>(data, mcfg, tcfg, best_params_out, metrics_stream,
                                   [](const ModelConfig& c) { return init_params(c); });
}

TrainRun train_baseline(const Dataset& data, const ModelConfig& mcfg, const TrainConfig& tcfg,
                        BaselineParams* best_params_out, std::ostream* metrics_stream) {
    return train_loop<BaselineParams>(data, mcfg, tcfg, best_params_out, metrics_stream,
                                      [](const ModelConfig& c) { return init_baseline_params(c); });
}

}  // namespace kgqa
