#pragma once
// The QAGNN network over a working graph, written with explicit forward and
// backward passes so every gradient is finite-difference checkable.
//
// Per layer, for a node i with incoming edges e = (j -> i, rel r):
//   q_i      = Q h_i + b_q
//   x_e      = h_j + t_{type(j)} + (g * rho_j) * 1        (key input)
//   kappa_e  = K x_e + b_k
//   s_e      = (q_i . kappa_e) / sqrt(gnn_dim)
//   alpha    = softmax(s) over i's incoming edges
//   m_e      = M [h_j ; r_rel] + b_m
//   h'_i     = ReLU(h_i + sum_e alpha_e m_e)
// Nodes with no incoming edges keep h_i unchanged (no ReLU). Node 0 is the
// context node; its input is the QA context vector. Scoring pools the final
// KG node states with an attention query built from the context-node state
// (reusing the last layer's query/key maps), concatenates
// [context ; context-node state ; pooled] and applies the head (0 or 1 FC
// layers). The attention softmax runs over incoming edges, so parallel
// edges with different relations attend separately.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "kgqa/encoder.hpp"
#include "kgqa/subgraph.hpp"

namespace kgqa {

struct ModelConfig {
    int input_dim = 128;     // d: provider embedding dimension
    int gnn_dim = 200;
    int fc_dim = 200;
    int gnn_layers = 2;      // k; the paper grid uses {2,3,4}
    int fc_layers = 0;       // 0 or 1
    int relation_count = 18; // 17 merged + context relation
    int node_type_count = 4;
    bool mean_pool = false;
    std::uint64_t seed = 7;
    double relevance_gate_init = 1.0;

    int fused_dim() const { return input_dim + 2 * gnn_dim; }
    void validate() const;
};

struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}
    double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
    const double* row(int r) const { return a.data() + static_cast<std::size_t>(r) * cols; }
};

struct Linear {
    Mat w;
    std::vector<double> b;

    Linear() = default;
    Linear(int out_dim, int in_dim) : w(out_dim, in_dim), b(static_cast<std::size_t>(out_dim), 0.0) {}
};

struct LayerParams {
    Linear query;    // gnn_dim x gnn_dim
    Linear key;      // gnn_dim x gnn_dim
    Linear message;  // gnn_dim x 2*gnn_dim
};

struct ModelParams {
    ModelConfig cfg;
    Linear input_proj;               // gnn_dim x input_dim
    Mat node_type_emb;               // node_type_count x gnn_dim
    Mat relation_emb;                // relation_count x gnn_dim
    std::vector<LayerParams> layers; // gnn_layers
    double relevance_gate = 1.0;
    Linear fc;                       // fc_dim x fused_dim (fc_layers == 1 only)
    Linear output;                   // 1 x (fc_dim or fused_dim)
};

struct BaselineParams {
    ModelConfig cfg;
    Linear hidden;  // fc_dim x input_dim
    Linear output;  // 1 x fc_dim
};

// Seeded deterministic init: linear maps uniform in [-1/sqrt(fan_in),
// +1/sqrt(fan_in)], embeddings Gaussian sigma = 0.02, gate from config.
ModelParams init_params(const ModelConfig& cfg);
BaselineParams init_baseline_params(const ModelConfig& cfg);

// Zero-filled gradient containers shaped like the parameters.
ModelParams zero_like(const ModelParams& params);
BaselineParams zero_like(const BaselineParams& params);

// Flat views over every parameter tensor in declaration order; the order is
// the serialization and optimizer-state order.
struct TensorRef {
    double* data = nullptr;
    std::size_t size = 0;
};
std::vector<TensorRef> tensor_refs(ModelParams& params);
std::vector<TensorRef> tensor_refs(BaselineParams& params);
std::size_t param_count(const ModelConfig& cfg);
std::size_t baseline_param_count(const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

// One (question, choice) input: the working graph plus one input vector per
// node; node_inputs[0] is the QA context vector.
struct ChoiceInput {
    WorkingGraph graph;
    std::vector<Vector> node_inputs;
};

struct LayerTrace {
    std::vector<double> h_in;    // N x g, states entering the layer
    std::vector<double> q;       // N x g (zero for nodes without in-edges)
    std::vector<double> key_in;  // E x g
    std::vector<double> kappa;   // E x g
    std::vector<double> msg;     // E x g
    std::vector<double> alpha;   // E
    std::vector<double> relu_in; // N x g (u_i; meaningful for in-edge nodes)
    std::vector<bool> has_in;    // N
};

struct ForwardTrace {
    std::vector<std::vector<int>> in_edges;  // node -> edge indexes
    std::vector<LayerTrace> layers;
    std::vector<double> h_final;             // N x g
    std::vector<double> pool_beta;           // N-1 pooling weights
    std::vector<double> pool_query;          // g
    std::vector<double> pool_keys;           // (N-1) x g
    std::vector<double> fused;               // fused_dim
    std::vector<double> fc_pre;              // fc_dim (fc_layers == 1)
    double score = 0.0;
};

// Full pass for one choice: GNN layers, pooling, head.
ForwardTrace forward_choice(const ChoiceInput& input, const ModelParams& params);

// Accumulates parameter gradients for d(loss)/d(score) = dscore.
void backward_choice(const ChoiceInput& input, const ModelParams& params,
                     const ForwardTrace& trace, double dscore, ModelParams& grads);

double baseline_forward(std::span<const double> context_vec, const BaselineParams& params);
void baseline_backward(std::span<const double> context_vec, const BaselineParams& params,
                       double dscore, BaselineParams& grads);

// Max-subtracted softmax over the four choice scores.
std::array<double, 4> choice_probabilities(const std::array<double, 4>& scores);

// ---------------------------------------------------------------------------
// Batched loss
// ---------------------------------------------------------------------------

struct CompiledExample {
    std::string id;
    std::vector<ChoiceInput> choices;  // exactly 4
    int gold = 0;
};

// Mean cross-entropy over the batch; gradients accumulate into *grads when
// non-null. Throws NumericError naming the offending example on non-finite
// loss.
double model_loss_and_backward(std::span<const CompiledExample> batch, const ModelParams& params,
                               ModelParams* grads);
double baseline_loss_and_backward(std::span<const CompiledExample> batch,
                                  const BaselineParams& params, BaselineParams* grads);

// Slice-of-batch variants: per-example losses and score gradients scale by
// inv_weight instead of 1/slice size, so fixed-size tasks can reproduce the
// whole-batch mean exactly.
double model_loss_and_backward_scaled(std::span<const CompiledExample> slice,
                                      const ModelParams& params, ModelParams* grads,
                                      double inv_weight);
double baseline_loss_and_backward_scaled(std::span<const CompiledExample> slice,
                                         const BaselineParams& params, BaselineParams* grads,
                                         double inv_weight);

std::array<double, 4> score_example(const CompiledExample& example, const ModelParams& params);
std::array<double, 4> score_example(const CompiledExample& example, const BaselineParams& params);

// ---------------------------------------------------------------------------
// Checkpoints: binary, versioned header with a config echo, parameters in
// declaration order as 64-bit floats; bit-exact round-trip.
// ---------------------------------------------------------------------------

enum class ModelKind : std::uint8_t { Qagnn = 0, Baseline = 1 };

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
void save_checkpoint(const std::filesystem::path& path, const BaselineParams& params);
ModelKind peek_checkpoint_kind(const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);
BaselineParams load_baseline_checkpoint(const std::filesystem::path& path);

}  // namespace kgqa
