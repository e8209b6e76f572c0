#include "kgqa/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace kgqa {

namespace {

void linear_apply(const Linear& lin, const double* x, double* out) {
    for (int r = 0; r < lin.w.rows; ++r) {
        const double* wr = lin.w.row(r);
        double s = lin.b[static_cast<std::size_t>(r)];
        for (int c = 0; c < lin.w.cols; ++c) s += wr[c] * x[c];
        out[r] = s;
    }
}

// dx += W^T dy
void linear_backprop_input(const Linear& lin, const double* dy, double* dx) {
    for (int r = 0; r < lin.w.rows; ++r) {
        const double* wr = lin.w.row(r);
        const double g = dy[r];
        if (g == 0.0) continue;
        for (int c = 0; c < lin.w.cols; ++c) dx[c] += wr[c] * g;
    }
}

// dW += dy x^T, db += dy
void linear_accumulate(Linear& grad, const double* dy, const double* x) {
    for (int r = 0; r < grad.w.rows; ++r) {
        double* gr = grad.w.row(r);
        const double g = dy[r];
        grad.b[static_cast<std::size_t>(r)] += g;
        if (g == 0.0) continue;
        for (int c = 0; c < grad.w.cols; ++c) gr[c] += g * x[c];
    }
}

void softmax_in_place(std::vector<double>& v) {
    double mx = v[0];
    for (const double x : v) mx = std::max(mx, x);
    double sum = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (double& x : v) x /= sum;
}

void fill_uniform(RandomSource& rng, std::vector<double>& v, double bound) {
    for (double& x : v) x = rng.uniform(-bound, bound);
}

void init_linear(RandomSource& rng, Linear& lin) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(lin.w.cols));
    fill_uniform(rng, lin.w.a, bound);
    fill_uniform(rng, lin.b, bound);
}

void fill_gaussian(RandomSource& rng, std::vector<double>& v, double sigma) {
    for (double& x : v) x = sigma * rng.normal();
}

}  // namespace

void ModelConfig::validate() const {
    if (input_dim <= 0) throw ConfigError("input_dim must be > 0");
    if (gnn_dim <= 0) throw ConfigError("gnn_dim must be > 0");
    if (fc_dim <= 0) throw ConfigError("fc_dim must be > 0");
    if (gnn_layers < 1 || gnn_layers > 8) throw ConfigError("gnn_layers must be in 1..8");
    if (fc_layers != 0 && fc_layers != 1) throw ConfigError("fc_layers must be 0 or 1");
    if (relation_count != static_cast<int>(kContextRelation) + 1) {
        throw ConfigError("relation_count must be 18 (17 merged + context relation)");
    }
    if (node_type_count != kNodeTypeCount) throw ConfigError("node_type_count must be 4");
}

ModelParams init_params(const ModelConfig& cfg) {
    cfg.validate();
    RandomSource rng(cfg.seed);
    ModelParams p;
    p.cfg = cfg;
    p.input_proj = Linear(cfg.gnn_dim, cfg.input_dim);
    init_linear(rng, p.input_proj);
    p.node_type_emb = Mat(cfg.node_type_count, cfg.gnn_dim);
    fill_gaussian(rng, p.node_type_emb.a, 0.02);
    p.relation_emb = Mat(cfg.relation_count, cfg.gnn_dim);
    fill_gaussian(rng, p.relation_emb.a, 0.02);
    p.layers.resize(static_cast<std::size_t>(cfg.gnn_layers));
    for (auto& layer : p.layers) {
        layer.query = Linear(cfg.gnn_dim, cfg.gnn_dim);
        layer.key = Linear(cfg.gnn_dim, cfg.gnn_dim);
        layer.message = Linear(cfg.gnn_dim, 2 * cfg.gnn_dim);
        init_linear(rng, layer.query);
        init_linear(rng, layer.key);
        init_linear(rng, layer.message);
    }
    p.relevance_gate = cfg.relevance_gate_init;
    if (cfg.fc_layers == 1) {
        p.fc = Linear(cfg.fc_dim, cfg.fused_dim());
        init_linear(rng, p.fc);
        p.output = Linear(1, cfg.fc_dim);
    } else {
        p.output = Linear(1, cfg.fused_dim());
    }
    init_linear(rng, p.output);
    return p;
}

BaselineParams init_baseline_params(const ModelConfig& cfg) {
    cfg.validate();
    RandomSource rng(cfg.seed);
    BaselineParams p;
    p.cfg = cfg;
    p.hidden = Linear(cfg.fc_dim, cfg.input_dim);
    p.output = Linear(1, cfg.fc_dim);
    init_linear(rng, p.hidden);
    init_linear(rng, p.output);
    return p;
}

ModelParams zero_like(const ModelParams& params) {
    ModelParams g = params;
    auto refs = tensor_refs(g);
    for (auto& r : refs) std::fill(r.data, r.data + r.size, 0.0);
    return g;
}

BaselineParams zero_like(const BaselineParams& params) {
    BaselineParams g = params;
    auto refs = tensor_refs(g);
    for (auto& r : refs) std::fill(r.data, r.data + r.size, 0.0);
    return g;
}

std::vector<TensorRef> tensor_refs(ModelParams& p) {
    std::vector<TensorRef> refs;
    auto add = [&](std::vector<double>& v) { refs.push_back({v.data(), v.size()}); };
    add(p.input_proj.w.a);
    add(p.input_proj.b);
    add(p.node_type_emb.a);
    add(p.relation_emb.a);
    for (auto& layer : p.layers) {
        add(layer.query.w.a);
        add(layer.query.b);
        add(layer.key.w.a);
        add(layer.key.b);
        add(layer.message.w.a);
        add(layer.message.b);
    }
    refs.push_back({&p.relevance_gate, 1});
    if (p.cfg.fc_layers == 1) {
        add(p.fc.w.a);
        add(p.fc.b);
    }
    add(p.output.w.a);
    add(p.output.b);
    return refs;
}

std::vector<TensorRef> tensor_refs(BaselineParams& p) {
    std::vector<TensorRef> refs;
    auto add = [&](std::vector<double>& v) { refs.push_back({v.data(), v.size()}); };
    add(p.hidden.w.a);
    add(p.hidden.b);
    add(p.output.w.a);
    add(p.output.b);
    return refs;
}

std::size_t param_count(const ModelConfig& cfg) {
    const std::size_t d = static_cast<std::size_t>(cfg.input_dim);
    const std::size_t g = static_cast<std::size_t>(cfg.gnn_dim);
    const std::size_t fused = static_cast<std::size_t>(cfg.fused_dim());
    std::size_t n = 0;
    n += g * d + g;                                        // input projection
    n += static_cast<std::size_t>(cfg.node_type_count) * g;
    n += static_cast<std::size_t>(cfg.relation_count) * g;
    n += static_cast<std::size_t>(cfg.gnn_layers) * (2 * (g * g + g) + (g * 2 * g + g));
    n += 1;                                                // relevance gate
    if (cfg.fc_layers == 1) {
        n += static_cast<std::size_t>(cfg.fc_dim) * fused + static_cast<std::size_t>(cfg.fc_dim);
        n += static_cast<std::size_t>(cfg.fc_dim) + 1;     // output over fc_dim
    } else {
        n += fused + 1;                                    // output over fused
    }
    return n;
}

std::size_t baseline_param_count(const ModelConfig& cfg) {
    const std::size_t d = static_cast<std::size_t>(cfg.input_dim);
    const std::size_t f = static_cast<std::size_t>(cfg.fc_dim);
    return f * d + f + f + 1;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

ForwardTrace forward_choice(const ChoiceInput& input, const ModelParams& params) {
    const ModelConfig& cfg = params.cfg;
    const WorkingGraph& wg = input.graph;
    const int n = wg.node_count();
    const int g = cfg.gnn_dim;
    const std::size_t gs = static_cast<std::size_t>(g);
    const int e_count = static_cast<int>(wg.edges.size());
    const double scale = 1.0 / std::sqrt(static_cast<double>(g));

    if (static_cast<int>(input.node_inputs.size()) != n) {
        throw ContractViolation("node input count does not match the working graph");
    }
    for (const auto& v : input.node_inputs) {
        if (static_cast<int>(v.size()) != cfg.input_dim) {
            throw ContractViolation("node input dimension mismatch");
        }
    }

    ForwardTrace trace;
    trace.in_edges.assign(static_cast<std::size_t>(n), {});
    for (int e = 0; e < e_count; ++e) {
        trace.in_edges[static_cast<std::size_t>(wg.edges[static_cast<std::size_t>(e)].dst)].push_back(e);
    }

    // Input projection.
    std::vector<double> h(static_cast<std::size_t>(n) * gs, 0.0);
    for (int i = 0; i < n; ++i) {
        linear_apply(params.input_proj, input.node_inputs[static_cast<std::size_t>(i)].data(),
                     h.data() + static_cast<std::size_t>(i) * gs);
    }

    trace.layers.resize(static_cast<std::size_t>(cfg.gnn_layers));
    std::vector<double> scores;
    for (int layer_idx = 0; layer_idx < cfg.gnn_layers; ++layer_idx) {
        const LayerParams& lp = params.layers[static_cast<std::size_t>(layer_idx)];
        LayerTrace& lt = trace.layers[static_cast<std::size_t>(layer_idx)];
        lt.h_in = h;
        lt.q.assign(static_cast<std::size_t>(n) * gs, 0.0);
        lt.key_in.assign(static_cast<std::size_t>(e_count) * gs, 0.0);
        lt.kappa.assign(static_cast<std::size_t>(e_count) * gs, 0.0);
        lt.msg.assign(static_cast<std::size_t>(e_count) * gs, 0.0);
        lt.alpha.assign(static_cast<std::size_t>(e_count), 0.0);
        lt.relu_in.assign(static_cast<std::size_t>(n) * gs, 0.0);
        lt.has_in.assign(static_cast<std::size_t>(n), false);

        std::vector<double> h_next(static_cast<std::size_t>(n) * gs, 0.0);
        std::vector<double> concat(2 * gs, 0.0);
        for (int i = 0; i < n; ++i) {
            const auto& in_edges = trace.in_edges[static_cast<std::size_t>(i)];
            double* hi = lt.h_in.data() + static_cast<std::size_t>(i) * gs;
            double* out = h_next.data() + static_cast<std::size_t>(i) * gs;
            if (in_edges.empty()) {
                std::copy(hi, hi + gs, out);  // residual only, no ReLU
                continue;
            }
            lt.has_in[static_cast<std::size_t>(i)] = true;
            double* qi = lt.q.data() + static_cast<std::size_t>(i) * gs;
            linear_apply(lp.query, hi, qi);

            scores.assign(in_edges.size(), 0.0);
            for (std::size_t t = 0; t < in_edges.size(); ++t) {
                const int e = in_edges[t];
                const WorkingEdge& edge = wg.edges[static_cast<std::size_t>(e)];
                const int j = edge.src;
                const double* hj = lt.h_in.data() + static_cast<std::size_t>(j) * gs;
                const double* type_row =
                    params.node_type_emb.row(static_cast<int>(wg.types[static_cast<std::size_t>(j)]));
                const double rel_feature =
                    params.relevance_gate * wg.relevance[static_cast<std::size_t>(j)];
                double* key_in = lt.key_in.data() + static_cast<std::size_t>(e) * gs;
                for (std::size_t c = 0; c < gs; ++c) key_in[c] = hj[c] + type_row[c] + rel_feature;
                double* kappa = lt.kappa.data() + static_cast<std::size_t>(e) * gs;
                linear_apply(lp.key, key_in, kappa);
                double s = 0.0;
                for (std::size_t c = 0; c < gs; ++c) s += qi[c] * kappa[c];
                scores[t] = s * scale;

                const double* rel_row = params.relation_emb.row(edge.relation);
                std::copy(hj, hj + gs, concat.data());
                std::copy(rel_row, rel_row + gs, concat.data() + gs);
                linear_apply(lp.message, concat.data(), lt.msg.data() + static_cast<std::size_t>(e) * gs);
            }
            softmax_in_place(scores);

            double* u = lt.relu_in.data() + static_cast<std::size_t>(i) * gs;
            std::copy(hi, hi + gs, u);
            for (std::size_t t = 0; t < in_edges.size(); ++t) {
                const int e = in_edges[t];
                lt.alpha[static_cast<std::size_t>(e)] = scores[t];
                const double* msg = lt.msg.data() + static_cast<std::size_t>(e) * gs;
                const double a = scores[t];
                for (std::size_t c = 0; c < gs; ++c) u[c] += a * msg[c];
            }
            for (std::size_t c = 0; c < gs; ++c) out[c] = u[c] > 0.0 ? u[c] : 0.0;
        }
        h = std::move(h_next);
    }
    trace.h_final = h;

    // Pooling over KG node states.
    const int kg_nodes = n - 1;
    std::vector<double> pooled(gs, 0.0);
    const double* z = trace.h_final.data();  // node 0 state
    if (kg_nodes > 0) {
        if (cfg.mean_pool) {
            for (int j = 1; j < n; ++j) {
                const double* hj = trace.h_final.data() + static_cast<std::size_t>(j) * gs;
                for (std::size_t c = 0; c < gs; ++c) pooled[c] += hj[c];
            }
            for (std::size_t c = 0; c < gs; ++c) pooled[c] /= kg_nodes;
        } else {
            const LayerParams& last = params.layers.back();
            trace.pool_query.assign(gs, 0.0);
            linear_apply(last.query, z, trace.pool_query.data());
            trace.pool_keys.assign(static_cast<std::size_t>(kg_nodes) * gs, 0.0);
            std::vector<double> u(static_cast<std::size_t>(kg_nodes), 0.0);
            for (int j = 1; j < n; ++j) {
                const double* hj = trace.h_final.data() + static_cast<std::size_t>(j) * gs;
                double* key = trace.pool_keys.data() + static_cast<std::size_t>(j - 1) * gs;
                linear_apply(last.key, hj, key);
                double s = 0.0;
                for (std::size_t c = 0; c < gs; ++c) s += trace.pool_query[c] * key[c];
                u[static_cast<std::size_t>(j - 1)] = s * scale;
            }
            softmax_in_place(u);
            trace.pool_beta = u;
            for (int j = 1; j < n; ++j) {
                const double* hj = trace.h_final.data() + static_cast<std::size_t>(j) * gs;
                const double b = u[static_cast<std::size_t>(j - 1)];
                for (std::size_t c = 0; c < gs; ++c) pooled[c] += b * hj[c];
            }
        }
    }

    // fused = [context input ; context-node state ; pooled]
    trace.fused.assign(static_cast<std::size_t>(cfg.fused_dim()), 0.0);
    const auto& context_vec = input.node_inputs[0];
    std::copy(context_vec.begin(), context_vec.end(), trace.fused.begin());
    std::copy(z, z + gs, trace.fused.begin() + cfg.input_dim);
    std::copy(pooled.begin(), pooled.end(), trace.fused.begin() + cfg.input_dim + g);

    if (cfg.fc_layers == 1) {
        trace.fc_pre.assign(static_cast<std::size_t>(cfg.fc_dim), 0.0);
        linear_apply(params.fc, trace.fused.data(), trace.fc_pre.data());
        std::vector<double> y(static_cast<std::size_t>(cfg.fc_dim), 0.0);
        for (int r = 0; r < cfg.fc_dim; ++r) {
            const double v = trace.fc_pre[static_cast<std::size_t>(r)];
            y[static_cast<std::size_t>(r)] = v > 0.0 ? v : 0.0;
        }
        double s = 0.0;
        linear_apply(params.output, y.data(), &s);
        trace.score = s;
    } else {
        double s = 0.0;
        linear_apply(params.output, trace.fused.data(), &s);
        trace.score = s;
    }
    return trace;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

void backward_choice(const ChoiceInput& input, const ModelParams& params,
                     const ForwardTrace& trace, double dscore, ModelParams& grads) {
    const ModelConfig& cfg = params.cfg;
    const WorkingGraph& wg = input.graph;
    const int n = wg.node_count();
    const int g = cfg.gnn_dim;
    const std::size_t gs = static_cast<std::size_t>(g);
    const double scale = 1.0 / std::sqrt(static_cast<double>(g));
    const int kg_nodes = n - 1;

    // Head.
    std::vector<double> dfused(trace.fused.size(), 0.0);
    if (cfg.fc_layers == 1) {
        std::vector<double> y(static_cast<std::size_t>(cfg.fc_dim), 0.0);
        for (int r = 0; r < cfg.fc_dim; ++r) {
            const double v = trace.fc_pre[static_cast<std::size_t>(r)];
            y[static_cast<std::size_t>(r)] = v > 0.0 ? v : 0.0;
        }
        linear_accumulate(grads.output, &dscore, y.data());
        std::vector<double> dy(static_cast<std::size_t>(cfg.fc_dim), 0.0);
        linear_backprop_input(params.output, &dscore, dy.data());
        for (int r = 0; r < cfg.fc_dim; ++r) {
            if (trace.fc_pre[static_cast<std::size_t>(r)] <= 0.0) dy[static_cast<std::size_t>(r)] = 0.0;
        }
        linear_accumulate(grads.fc, dy.data(), trace.fused.data());
        linear_backprop_input(params.fc, dy.data(), dfused.data());
    } else {
        linear_accumulate(grads.output, &dscore, trace.fused.data());
        linear_backprop_input(params.output, &dscore, dfused.data());
    }

    // Split fused gradient; the context input slice has no parameters behind it.
    std::vector<double> dh_final(static_cast<std::size_t>(n) * gs, 0.0);
    const double* dz_in = dfused.data() + cfg.input_dim;
    const double* dpooled = dfused.data() + cfg.input_dim + g;
    for (std::size_t c = 0; c < gs; ++c) dh_final[c] += dz_in[c];

    // Pooling backward.
    if (kg_nodes > 0) {
        if (cfg.mean_pool) {
            for (int j = 1; j < n; ++j) {
                double* dhj = dh_final.data() + static_cast<std::size_t>(j) * gs;
                for (std::size_t c = 0; c < gs; ++c) dhj[c] += dpooled[c] / kg_nodes;
            }
        } else {
            const LayerParams& last = params.layers.back();
            LayerParams& last_grads = grads.layers.back();
            std::vector<double> dbeta(static_cast<std::size_t>(kg_nodes), 0.0);
            for (int j = 1; j < n; ++j) {
                const double* hj = trace.h_final.data() + static_cast<std::size_t>(j) * gs;
                const double beta = trace.pool_beta[static_cast<std::size_t>(j - 1)];
                double d = 0.0;
                double* dhj = dh_final.data() + static_cast<std::size_t>(j) * gs;
                for (std::size_t c = 0; c < gs; ++c) {
                    d += dpooled[c] * hj[c];
                    dhj[c] += beta * dpooled[c];
                }
                dbeta[static_cast<std::size_t>(j - 1)] = d;
            }
            double inner = 0.0;
            for (int j = 0; j < kg_nodes; ++j) {
                inner += trace.pool_beta[static_cast<std::size_t>(j)] * dbeta[static_cast<std::size_t>(j)];
            }
            std::vector<double> dq(gs, 0.0);
            std::vector<double> dkey(gs, 0.0);
            for (int j = 0; j < kg_nodes; ++j) {
                const double du =
                    trace.pool_beta[static_cast<std::size_t>(j)] * (dbeta[static_cast<std::size_t>(j)] - inner);
                if (du == 0.0) continue;
                const double* key = trace.pool_keys.data() + static_cast<std::size_t>(j) * gs;
                const double* hj = trace.h_final.data() + static_cast<std::size_t>(j + 1) * gs;
                for (std::size_t c = 0; c < gs; ++c) dq[c] += du * scale * key[c];
                std::fill(dkey.begin(), dkey.end(), 0.0);
                for (std::size_t c = 0; c < gs; ++c) dkey[c] = du * scale * trace.pool_query[c];
                linear_accumulate(last_grads.key, dkey.data(), hj);
                linear_backprop_input(last.key, dkey.data(),
                                      dh_final.data() + static_cast<std::size_t>(j + 1) * gs);
            }
            linear_accumulate(last_grads.query, dq.data(), trace.h_final.data());
            linear_backprop_input(last.query, dq.data(), dh_final.data());
        }
    }

    // GNN layers in reverse.
    std::vector<double> dh = std::move(dh_final);
    std::vector<double> concat(2 * gs, 0.0);
    std::vector<double> dconcat(2 * gs, 0.0);
    for (int layer_idx = cfg.gnn_layers - 1; layer_idx >= 0; --layer_idx) {
        const LayerParams& lp = params.layers[static_cast<std::size_t>(layer_idx)];
        LayerParams& lg = grads.layers[static_cast<std::size_t>(layer_idx)];
        const LayerTrace& lt = trace.layers[static_cast<std::size_t>(layer_idx)];
        std::vector<double> dh_in(static_cast<std::size_t>(n) * gs, 0.0);

        std::vector<double> du(gs, 0.0);
        std::vector<double> dq(gs, 0.0);
        std::vector<double> dkappa(gs, 0.0);
        std::vector<double> dmsg(gs, 0.0);
        std::vector<double> dkey_in(gs, 0.0);
        std::vector<double> dalpha;
        for (int i = 0; i < n; ++i) {
            const double* dhi = dh.data() + static_cast<std::size_t>(i) * gs;
            if (!lt.has_in[static_cast<std::size_t>(i)]) {
                double* dst = dh_in.data() + static_cast<std::size_t>(i) * gs;
                for (std::size_t c = 0; c < gs; ++c) dst[c] += dhi[c];
                continue;
            }
            const auto& in_edges = trace.in_edges[static_cast<std::size_t>(i)];
            const double* u = lt.relu_in.data() + static_cast<std::size_t>(i) * gs;
            for (std::size_t c = 0; c < gs; ++c) du[c] = u[c] > 0.0 ? dhi[c] : 0.0;

            // Residual into the layer input.
            {
                double* dst = dh_in.data() + static_cast<std::size_t>(i) * gs;
                for (std::size_t c = 0; c < gs; ++c) dst[c] += du[c];
            }

            // d(alpha_e) and d(msg_e); softmax backward to edge scores.
            dalpha.assign(in_edges.size(), 0.0);
            double inner = 0.0;
            for (std::size_t t = 0; t < in_edges.size(); ++t) {
                const int e = in_edges[t];
                const double* msg = lt.msg.data() + static_cast<std::size_t>(e) * gs;
                double d = 0.0;
                for (std::size_t c = 0; c < gs; ++c) d += du[c] * msg[c];
                dalpha[t] = d;
                inner += lt.alpha[static_cast<std::size_t>(e)] * d;
            }

            std::fill(dq.begin(), dq.end(), 0.0);
            const double* qi = lt.q.data() + static_cast<std::size_t>(i) * gs;
            for (std::size_t t = 0; t < in_edges.size(); ++t) {
                const int e = in_edges[t];
                const WorkingEdge& edge = wg.edges[static_cast<std::size_t>(e)];
                const int j = edge.src;
                const double alpha = lt.alpha[static_cast<std::size_t>(e)];
                const double ds = alpha * (dalpha[t] - inner);

                // Message path: dM, and through the concat into h_j and r_rel.
                const double* hj = lt.h_in.data() + static_cast<std::size_t>(j) * gs;
                const double* rel_row = params.relation_emb.row(edge.relation);
                std::copy(hj, hj + gs, concat.data());
                std::copy(rel_row, rel_row + gs, concat.data() + gs);
                for (std::size_t c = 0; c < gs; ++c) dmsg[c] = alpha * du[c];
                linear_accumulate(lg.message, dmsg.data(), concat.data());
                std::fill(dconcat.begin(), dconcat.end(), 0.0);
                linear_backprop_input(lp.message, dmsg.data(), dconcat.data());
                {
                    double* dst = dh_in.data() + static_cast<std::size_t>(j) * gs;
                    for (std::size_t c = 0; c < gs; ++c) dst[c] += dconcat[c];
                    double* drel = grads.relation_emb.row(edge.relation);
                    for (std::size_t c = 0; c < gs; ++c) drel[c] += dconcat[gs + c];
                }

                // Score path: ds -> q_i and kappa_e -> key input.
                if (ds != 0.0) {
                    const double* kappa = lt.kappa.data() + static_cast<std::size_t>(e) * gs;
                    for (std::size_t c = 0; c < gs; ++c) dq[c] += ds * scale * kappa[c];
                    for (std::size_t c = 0; c < gs; ++c) dkappa[c] = ds * scale * qi[c];
                    const double* key_in = lt.key_in.data() + static_cast<std::size_t>(e) * gs;
                    linear_accumulate(lg.key, dkappa.data(), key_in);
                    std::fill(dkey_in.begin(), dkey_in.end(), 0.0);
                    linear_backprop_input(lp.key, dkappa.data(), dkey_in.data());
                    double* dst = dh_in.data() + static_cast<std::size_t>(j) * gs;
                    double* dtype =
                        grads.node_type_emb.row(static_cast<int>(wg.types[static_cast<std::size_t>(j)]));
                    double dkey_sum = 0.0;
                    for (std::size_t c = 0; c < gs; ++c) {
                        dst[c] += dkey_in[c];
                        dtype[c] += dkey_in[c];
                        dkey_sum += dkey_in[c];
                    }
                    grads.relevance_gate += dkey_sum * wg.relevance[static_cast<std::size_t>(j)];
                }
            }
            linear_accumulate(lg.query, dq.data(), lt.h_in.data() + static_cast<std::size_t>(i) * gs);
            linear_backprop_input(lp.query, dq.data(), dh_in.data() + static_cast<std::size_t>(i) * gs);
        }
        dh = std::move(dh_in);
    }

    // Input projection.
    for (int i = 0; i < n; ++i) {
        linear_accumulate(grads.input_proj, dh.data() + static_cast<std::size_t>(i) * gs,
                          input.node_inputs[static_cast<std::size_t>(i)].data());
    }
}

// ---------------------------------------------------------------------------
// Baseline head
// ---------------------------------------------------------------------------

double baseline_forward(std::span<const double> context_vec, const BaselineParams& params) {
    if (static_cast<int>(context_vec.size()) != params.cfg.input_dim) {
        throw ContractViolation("baseline input dimension mismatch");
    }
    std::vector<double> pre(static_cast<std::size_t>(params.cfg.fc_dim), 0.0);
    linear_apply(params.hidden, context_vec.data(), pre.data());
    for (double& x : pre) x = x > 0.0 ? x : 0.0;
    double s = 0.0;
    linear_apply(params.output, pre.data(), &s);
    return s;
}

void baseline_backward(std::span<const double> context_vec, const BaselineParams& params,
                       double dscore, BaselineParams& grads) {
    std::vector<double> pre(static_cast<std::size_t>(params.cfg.fc_dim), 0.0);
    linear_apply(params.hidden, context_vec.data(), pre.data());
    std::vector<double> y = pre;
    for (double& x : y) x = x > 0.0 ? x : 0.0;
    linear_accumulate(grads.output, &dscore, y.data());
    std::vector<double> dy(y.size(), 0.0);
    linear_backprop_input(params.output, &dscore, dy.data());
    for (std::size_t r = 0; r < dy.size(); ++r) {
        if (pre[r] <= 0.0) dy[r] = 0.0;
    }
    linear_accumulate(grads.hidden, dy.data(), context_vec.data());
}

// ---------------------------------------------------------------------------
// Probabilities and batched loss
// ---------------------------------------------------------------------------

std::array<double, 4> choice_probabilities(const std::array<double, 4>& scores) {
    for (const double s : scores) {
        if (!std::isfinite(s)) throw ContractViolation("non-finite choice score");
    }
    double mx = scores[0];
    for (const double s : scores) mx = std::max(mx, s);
    std::array<double, 4> p{};
    double sum = 0.0;
    for (int i = 0; i < 4; ++i) {
        p[static_cast<std::size_t>(i)] = std::exp(scores[static_cast<std::size_t>(i)] - mx);
        sum += p[static_cast<std::size_t>(i)];
    }
    for (auto& x : p) x /= sum;
    return p;
}

std::array<double, 4> score_example(const CompiledExample& example, const ModelParams& params) {
    if (example.choices.size() != 4) throw ContractViolation("example must have 4 choices");
    std::array<double, 4> scores{};
    for (int c = 0; c < 4; ++c) {
        scores[static_cast<std::size_t>(c)] =
            forward_choice(example.choices[static_cast<std::size_t>(c)], params).score;
    }
    return scores;
}

std::array<double, 4> score_example(const CompiledExample& example, const BaselineParams& params) {
    if (example.choices.size() != 4) throw ContractViolation("example must have 4 choices");
    std::array<double, 4> scores{};
    for (int c = 0; c < 4; ++c) {
        scores[static_cast<std::size_t>(c)] =
            baseline_forward(example.choices[static_cast<std::size_t>(c)].node_inputs[0], params);
    }
    return scores;
}

namespace {

template <typename Params, typename ForwardFn, typename BackwardFn>
double loss_and_backward_impl(std::span<const CompiledExample> batch, Params* grads,
                              double inv_batch, ForwardFn&& forward, BackwardFn&& backward) {
    if (batch.empty()) throw ContractViolation("empty batch");
    double loss = 0.0;
    for (const auto& example : batch) {
        if (example.choices.size() != 4) throw ContractViolation("example must have 4 choices");
        if (example.gold < 0 || example.gold >= 4) {
            throw DataError("example " + example.id + ": gold label out of range");
        }
        std::array<double, 4> scores{};
        auto traces = forward(example, scores);
        const auto probs = choice_probabilities(scores);
        const double p_gold = probs[static_cast<std::size_t>(example.gold)];
        const double example_loss = -std::log(std::max(p_gold, 1e-300));
        if (!std::isfinite(example_loss)) {
            throw NumericError("non-finite loss at example " + example.id);
        }
        loss += example_loss * inv_batch;
        if (grads) {
            for (int c = 0; c < 4; ++c) {
                const double dscore =
                    (probs[static_cast<std::size_t>(c)] - (c == example.gold ? 1.0 : 0.0)) * inv_batch;
                backward(example, c, traces, dscore);
            }
        }
    }
    return loss;
}

}  // namespace

double model_loss_and_backward_scaled(std::span<const CompiledExample> batch,
                                      const ModelParams& params, ModelParams* grads,
                                      double inv_weight) {
    return loss_and_backward_impl(
        batch, grads, inv_weight,
        [&](const CompiledExample& example, std::array<double, 4>& scores) {
            std::vector<ForwardTrace> traces;
            traces.reserve(4);
            for (int c = 0; c < 4; ++c) {
                traces.push_back(forward_choice(example.choices[static_cast<std::size_t>(c)], params));
                scores[static_cast<std::size_t>(c)] = traces.back().score;
            }
            return traces;
        },
        [&](const CompiledExample& example, int c, const std::vector<ForwardTrace>& traces,
            double dscore) {
            backward_choice(example.choices[static_cast<std::size_t>(c)], params,
                            traces[static_cast<std::size_t>(c)], dscore, *grads);
        });
}

double baseline_loss_and_backward_scaled(std::span<const CompiledExample> batch,
                                         const BaselineParams& params, BaselineParams* grads,
                                         double inv_weight) {
    return loss_and_backward_impl(
        batch, grads, inv_weight,
        [&](const CompiledExample& example, std::array<double, 4>& scores) {
            for (int c = 0; c < 4; ++c) {
                scores[static_cast<std::size_t>(c)] =
                    baseline_forward(example.choices[static_cast<std::size_t>(c)].node_inputs[0], params);
            }
            return 0;  // no traces needed
        },
        [&](const CompiledExample& example, int c, int, double dscore) {
            baseline_backward(example.choices[static_cast<std::size_t>(c)].node_inputs[0], params,
                              dscore, *grads);
        });
}

double model_loss_and_backward(std::span<const CompiledExample> batch, const ModelParams& params,
                               ModelParams* grads) {
    if (batch.empty()) throw ContractViolation("empty batch");
    return model_loss_and_backward_scaled(batch, params, grads,
                                          1.0 / static_cast<double>(batch.size()));
}

double baseline_loss_and_backward(std::span<const CompiledExample> batch,
                                  const BaselineParams& params, BaselineParams* grads) {
    if (batch.empty()) throw ContractViolation("empty batch");
    return baseline_loss_and_backward_scaled(batch, params, grads,
                                             1.0 / static_cast<double>(batch.size()));
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'K', 'G', 'Q', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError(std::string("checkpoint truncated while reading ") + what);
    return v;
}

void write_config(std::ostream& out, const ModelConfig& cfg) {
    write_pod<std::int32_t>(out, cfg.input_dim);
    write_pod<std::int32_t>(out, cfg.gnn_dim);
    write_pod<std::int32_t>(out, cfg.fc_dim);
    write_pod<std::int32_t>(out, cfg.gnn_layers);
    write_pod<std::int32_t>(out, cfg.fc_layers);
    write_pod<std::int32_t>(out, cfg.relation_count);
    write_pod<std::int32_t>(out, cfg.node_type_count);
    write_pod<std::uint8_t>(out, cfg.mean_pool ? 1 : 0);
    write_pod<std::uint64_t>(out, cfg.seed);
    write_pod<double>(out, cfg.relevance_gate_init);
}

ModelConfig read_config(std::istream& in) {
    ModelConfig cfg;
    cfg.input_dim = read_pod<std::int32_t>(in, "input_dim");
    cfg.gnn_dim = read_pod<std::int32_t>(in, "gnn_dim");
    cfg.fc_dim = read_pod<std::int32_t>(in, "fc_dim");
    cfg.gnn_layers = read_pod<std::int32_t>(in, "gnn_layers");
    cfg.fc_layers = read_pod<std::int32_t>(in, "fc_layers");
    cfg.relation_count = read_pod<std::int32_t>(in, "relation_count");
    cfg.node_type_count = read_pod<std::int32_t>(in, "node_type_count");
    cfg.mean_pool = read_pod<std::uint8_t>(in, "mean_pool") != 0;
    cfg.seed = read_pod<std::uint64_t>(in, "seed");
    cfg.relevance_gate_init = read_pod<double>(in, "relevance_gate_init");
    return cfg;
}

template <typename Params>
void save_checkpoint_impl(const std::filesystem::path& path, const Params& params, ModelKind kind) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_pod<std::uint32_t>(out, kCheckpointVersion);
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(kind));
    write_config(out, params.cfg);
    Params& mutable_params = const_cast<Params&>(params);
    const auto refs = tensor_refs(mutable_params);
    std::uint64_t total = 0;
    for (const auto& r : refs) total += r.size;
    write_pod<std::uint64_t>(out, total);
    for (const auto& r : refs) {
        out.write(reinterpret_cast<const char*>(r.data),
                  static_cast<std::streamsize>(r.size * sizeof(double)));
    }
    if (!out) throw IoError("checkpoint write failed: " + path.string());
}

ModelKind open_checkpoint(std::ifstream& in, const std::filesystem::path& path, ModelConfig* cfg) {
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    char magic[8] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw IoError("not a checkpoint file (bad magic): " + path.string());
    }
    const auto version = read_pod<std::uint32_t>(in, "version");
    if (version != kCheckpointVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto kind = read_pod<std::uint8_t>(in, "kind");
    *cfg = read_config(in);
    return static_cast<ModelKind>(kind);
}

template <typename Params>
void load_params_payload(std::ifstream& in, Params& params, const std::filesystem::path& path) {
    const auto refs = tensor_refs(params);
    std::uint64_t expected = 0;
    for (const auto& r : refs) expected += r.size;
    const auto total = read_pod<std::uint64_t>(in, "parameter count");
    if (total != expected) {
        throw IoError("checkpoint parameter count mismatch in " + path.string());
    }
    for (const auto& r : refs) {
        in.read(reinterpret_cast<char*>(r.data),
                static_cast<std::streamsize>(r.size * sizeof(double)));
        if (!in) throw IoError("checkpoint truncated: " + path.string());
    }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
    save_checkpoint_impl(path, params, ModelKind::Qagnn);
}

void save_checkpoint(const std::filesystem::path& path, const BaselineParams& params) {
    save_checkpoint_impl(path, params, ModelKind::Baseline);
}

ModelKind peek_checkpoint_kind(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    ModelConfig cfg;
    return open_checkpoint(in, path, &cfg);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    ModelConfig cfg;
    const ModelKind kind = open_checkpoint(in, path, &cfg);
    if (kind != ModelKind::Qagnn) throw IoError("checkpoint is not a QAGNN model: " + path.string());
    ModelParams params = init_params(cfg);
    load_params_payload(in, params, path);
    return params;
}

BaselineParams load_baseline_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    ModelConfig cfg;
    const ModelKind kind = open_checkpoint(in, path, &cfg);
    if (kind != ModelKind::Baseline) {
        throw IoError("checkpoint is not a baseline model: " + path.string());
    }
    BaselineParams params = init_baseline_params(cfg);
    load_params_payload(in, params, path);
    return params;
}

}  // namespace kgqa
