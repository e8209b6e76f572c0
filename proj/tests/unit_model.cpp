#include <doctest.h>

#include <cmath>

#include "kgqa/model.hpp"
#include "test_support.hpp"

using namespace kgqa;
using kgqa::testing::random_example;
using kgqa::testing::random_choice_input;

namespace {

ModelConfig small_config(int k = 2, int fc = 0) {
    ModelConfig cfg;
    cfg.input_dim = 16;
    cfg.gnn_dim = 16;
    cfg.fc_dim = 16;
    cfg.gnn_layers = k;
    cfg.fc_layers = fc;
    cfg.seed = 11;
    return cfg;
}

void zero_all(ModelParams& p) {
    for (auto& r : tensor_refs(p)) std::fill(r.data, r.data + r.size, 0.0);
}

void check_attention_rows(const ForwardTrace& trace) {
    for (const auto& layer : trace.layers) {
        for (std::size_t i = 0; i < layer.has_in.size(); ++i) {
            if (!layer.has_in[i]) continue;
            double sum = 0.0;
            for (const int e : trace.in_edges[i]) sum += layer.alpha[static_cast<std::size_t>(e)];
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    if (!trace.pool_beta.empty()) {
        double sum = 0.0;
        for (const double b : trace.pool_beta) sum += b;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

}  // namespace

TEST_CASE("init_params: determinism, config validation, shapes") {
    const auto cfg = small_config();
    auto a = init_params(cfg);
    auto b = init_params(cfg);
    auto ra = tensor_refs(a);
    auto rb = tensor_refs(b);
    REQUIRE(ra.size() == rb.size());
    for (std::size_t t = 0; t < ra.size(); ++t) {
        REQUIRE(ra[t].size == rb[t].size);
        for (std::size_t i = 0; i < ra[t].size; ++i) CHECK(ra[t].data[i] == rb[t].data[i]);
    }

    ModelConfig bad = cfg;
    bad.gnn_dim = 0;
    CHECK_THROWS_AS(init_params(bad), ConfigError);
    bad = cfg;
    bad.fc_layers = 2;
    CHECK_THROWS_AS(init_params(bad), ConfigError);
}

TEST_CASE("parameter count matches an independent shape walk") {
    // Shape walk written out directly from the declared tensor list.
    auto walk = [](const ModelConfig& c) {
        std::size_t n = 0;
        n += static_cast<std::size_t>(c.gnn_dim) * c.input_dim + c.gnn_dim;  // projection
        n += 4u * static_cast<std::size_t>(c.gnn_dim);                       // node types
        n += 18u * static_cast<std::size_t>(c.gnn_dim);                      // relations
        for (int l = 0; l < c.gnn_layers; ++l) {
            n += static_cast<std::size_t>(c.gnn_dim) * c.gnn_dim + c.gnn_dim;      // query
            n += static_cast<std::size_t>(c.gnn_dim) * c.gnn_dim + c.gnn_dim;      // key
            n += static_cast<std::size_t>(c.gnn_dim) * 2 * c.gnn_dim + c.gnn_dim;  // message
        }
        n += 1;  // relevance gate
        const std::size_t fused = static_cast<std::size_t>(c.input_dim + 2 * c.gnn_dim);
        if (c.fc_layers == 1) {
            n += static_cast<std::size_t>(c.fc_dim) * fused + c.fc_dim;
            n += static_cast<std::size_t>(c.fc_dim) + 1;
        } else {
            n += fused + 1;
        }
        return n;
    };

    for (const int fc : {0, 1}) {
        ModelConfig cfg;
        cfg.input_dim = 128;
        cfg.gnn_dim = 200;
        cfg.fc_dim = 200;
        cfg.gnn_layers = 2;
        cfg.fc_layers = fc;
        CHECK(param_count(cfg) == walk(cfg));
        auto params = init_params(cfg);
        std::size_t total = 0;
        for (const auto& r : tensor_refs(params)) total += r.size;
        CHECK(total == param_count(cfg));
    }
}

TEST_CASE("single-node graph: residual passthrough of the projected input") {
    const auto cfg = small_config(3, 0);
    auto params = init_params(cfg);
    RandomSource rng(5);

    ChoiceInput input;
    input.graph.kg_node_ids.push_back(0);
    input.graph.node_names.emplace_back();
    input.graph.types.push_back(NodeType::Context);
    input.graph.relevance.push_back(1.0);
    input.node_inputs.push_back(kgqa::testing::random_unit_vector(rng, cfg.input_dim));

    const auto trace = forward_choice(input, params);
    // h_final[0] must equal W_in c + b exactly (no ReLU, no messages).
    std::vector<double> expected(static_cast<std::size_t>(cfg.gnn_dim), 0.0);
    for (int r = 0; r < cfg.gnn_dim; ++r) {
        double s = params.input_proj.b[static_cast<std::size_t>(r)];
        for (int c = 0; c < cfg.input_dim; ++c) {
            s += params.input_proj.w.row(r)[c] * input.node_inputs[0][static_cast<std::size_t>(c)];
        }
        expected[static_cast<std::size_t>(r)] = s;
    }
    for (int c = 0; c < cfg.gnn_dim; ++c) {
        CHECK(trace.h_final[static_cast<std::size_t>(c)] ==
              doctest::Approx(expected[static_cast<std::size_t>(c)]).epsilon(1e-12));
    }
    // Zero KG nodes: pooled slice of fused is all zero.
    for (int c = 0; c < cfg.gnn_dim; ++c) {
        CHECK(trace.fused[static_cast<std::size_t>(cfg.input_dim + cfg.gnn_dim + c)] == 0.0);
    }
}

TEST_CASE("two-node graph with hand-set params matches the hand recurrence") {
    ModelConfig cfg;
    cfg.input_dim = 2;
    cfg.gnn_dim = 2;
    cfg.fc_dim = 2;
    cfg.gnn_layers = 2;
    cfg.fc_layers = 0;
    auto params = init_params(cfg);
    zero_all(params);
    // Identity projection, identity query/key, message = [I | 0], zero
    // embeddings, gate 0, output weights all one.
    for (int i = 0; i < 2; ++i) {
        params.input_proj.w.row(i)[i] = 1.0;
        for (auto& layer : params.layers) {
            layer.query.w.row(i)[i] = 1.0;
            layer.key.w.row(i)[i] = 1.0;
            layer.message.w.row(i)[i] = 1.0;  // h_j half; relation half stays 0
        }
    }
    for (int c = 0; c < cfg.fused_dim(); ++c) params.output.w.row(0)[c] = 1.0;

    ChoiceInput input;
    input.graph.kg_node_ids = {0, 7};
    input.graph.node_names = {"", "node"};
    input.graph.types = {NodeType::Context, NodeType::AnswerConcept};
    input.graph.relevance = {1.0, 0.3};
    input.graph.edges = {{0, 1, kContextRelation}};
    input.node_inputs = {{0.5, 0.25}, {0.125, 1.0}};

    // Hand recurrence: h1_1 = relu(x1 + x0) = (0.625, 1.25);
    // h2_1 = relu(h1_1 + x0) = (1.125, 1.5); z = x0; pooled = h2_1;
    // score = sum(x0) + sum(x0) + sum(h2_1) = 0.75 + 0.75 + 2.625 = 4.125.
    const auto trace = forward_choice(input, params);
    CHECK(trace.h_final[2] == doctest::Approx(1.125));
    CHECK(trace.h_final[3] == doctest::Approx(1.5));
    CHECK(trace.score == doctest::Approx(4.125));
}

TEST_CASE("attention and pooling rows sum to one on random graphs") {
    RandomSource rng(99);
    for (int k : {2, 3, 4}) {
        const auto cfg = small_config(k, k % 2);
        auto params = init_params(cfg);
        for (int trial = 0; trial < 5; ++trial) {
            const auto input = random_choice_input(rng, cfg.input_dim, 8, 20);
            check_attention_rows(forward_choice(input, params));
        }
    }
}

TEST_CASE("choice_probabilities: symmetry, stabilization, high-precision oracle") {
    const auto uniform = choice_probabilities({1.5, 1.5, 1.5, 1.5});
    for (const auto p : uniform) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));

    const auto spiked = choice_probabilities({1000.0, 0.0, 0.0, 0.0});
    CHECK(spiked[0] >= 1.0 - 1e-9);
    for (int i = 1; i < 4; ++i) CHECK(std::isfinite(spiked[static_cast<std::size_t>(i)]));

    // Long-double recompute.
    const std::array<double, 4> s = {0.3, -1.2, 2.7, 0.05};
    const auto got = choice_probabilities(s);
    long double denom = 0.0L;
    for (const auto x : s) denom += expl(static_cast<long double>(x));
    for (int i = 0; i < 4; ++i) {
        const double expected = static_cast<double>(expl(static_cast<long double>(s[static_cast<std::size_t>(i)])) / denom);
        CHECK(got[static_cast<std::size_t>(i)] == doctest::Approx(expected).epsilon(1e-12));
    }

    // Shift invariance.
    std::array<double, 4> shifted{};
    for (int i = 0; i < 4; ++i) shifted[static_cast<std::size_t>(i)] = s[static_cast<std::size_t>(i)] + 123.456;
    const auto got2 = choice_probabilities(shifted);
    for (int i = 0; i < 4; ++i) {
        CHECK(std::abs(got2[static_cast<std::size_t>(i)] - got[static_cast<std::size_t>(i)]) <= 1e-12);
    }

    CHECK_THROWS_AS(choice_probabilities({std::nan(""), 0, 0, 0}), ContractViolation);
}

TEST_CASE("uniform probabilities give ln(4) loss; identical choices are stationary") {
    const auto cfg = small_config();
    auto params = init_params(cfg);
    // Zero head: every score is 0, probabilities uniform.
    std::fill(params.output.w.a.begin(), params.output.w.a.end(), 0.0);
    std::fill(params.output.b.begin(), params.output.b.end(), 0.0);

    RandomSource rng(3);
    CompiledExample ex;
    ex.id = "toy";
    const auto choice = random_choice_input(rng, cfg.input_dim, 5, 8);
    for (int c = 0; c < 4; ++c) ex.choices.push_back(choice);
    ex.gold = 2;

    const CompiledExample batch[1] = {ex};
    auto grads = zero_like(params);
    const double loss = model_loss_and_backward({batch, 1}, params, &grads);
    CHECK(std::abs(loss - std::log(4.0)) <= 1e-12);

    // Identical choices make the total gradient vanish for any parameters
    // (the per-choice terms cancel), a stationary point of the toy.
    auto params2 = init_params(cfg);
    auto grads2 = zero_like(params2);
    model_loss_and_backward({batch, 1}, params2, &grads2);
    CHECK(global_grad_norm(tensor_refs(grads2)) < 1e-8);
}

TEST_CASE("KG node permutation leaves choice scores unchanged") {
    RandomSource rng(31337);
    const auto cfg = small_config(3, 1);
    auto params = init_params(cfg);

    for (int trial = 0; trial < 10; ++trial) {
        const auto input = random_choice_input(rng, cfg.input_dim, 9, 25);
        const int n = input.graph.node_count();
        // Random permutation of KG node slots 1..n-1.
        std::vector<int> perm(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
        for (int i = n - 1; i > 1; --i) {
            const int j = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(i)));
            std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
        }
        ChoiceInput permuted;
        permuted.graph.kg_node_ids.resize(static_cast<std::size_t>(n));
        permuted.graph.node_names.resize(static_cast<std::size_t>(n));
        permuted.graph.types.resize(static_cast<std::size_t>(n));
        permuted.graph.relevance.resize(static_cast<std::size_t>(n));
        permuted.node_inputs.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const auto pi = static_cast<std::size_t>(perm[static_cast<std::size_t>(i)]);
            permuted.graph.kg_node_ids[pi] = input.graph.kg_node_ids[static_cast<std::size_t>(i)];
            permuted.graph.node_names[pi] = input.graph.node_names[static_cast<std::size_t>(i)];
            permuted.graph.types[pi] = input.graph.types[static_cast<std::size_t>(i)];
            permuted.graph.relevance[pi] = input.graph.relevance[static_cast<std::size_t>(i)];
            permuted.node_inputs[pi] = input.node_inputs[static_cast<std::size_t>(i)];
        }
        for (const auto& e : input.graph.edges) {
            permuted.graph.edges.push_back({perm[static_cast<std::size_t>(e.src)],
                                            perm[static_cast<std::size_t>(e.dst)], e.relation});
        }
        const double s1 = forward_choice(input, params).score;
        const double s2 = forward_choice(permuted, params).score;
        CHECK(std::abs(s1 - s2) <= 1e-9);
    }
}

TEST_CASE("relevance gate at zero makes outputs relevance-independent") {
    const auto cfg = small_config(2, 0);
    auto params = init_params(cfg);
    params.relevance_gate = 0.0;
    RandomSource rng(17);
    auto input = random_choice_input(rng, cfg.input_dim, 7, 15);
    const double before = forward_choice(input, params).score;
    for (std::size_t i = 1; i < input.graph.relevance.size(); ++i) {
        input.graph.relevance[i] = rng.next_double();
    }
    const double after = forward_choice(input, params).score;
    CHECK(before == after);

    // And with a nonzero gate the relevance matters (generic position).
    params.relevance_gate = 1.0;
    const double with_gate_a = forward_choice(input, params).score;
    for (std::size_t i = 1; i < input.graph.relevance.size(); ++i) {
        input.graph.relevance[i] = 1.0 - input.graph.relevance[i];
    }
    const double with_gate_b = forward_choice(input, params).score;
    CHECK(with_gate_a != with_gate_b);
}

TEST_CASE("analytic gradients match central finite differences (spot check)") {
    RandomSource rng(20240601);
    for (const int k : {2, 3}) {
        const auto cfg = small_config(k, k == 2 ? 0 : 1);
        std::uint64_t seed = 1000 + static_cast<std::uint64_t>(k);
        for (int trial = 0; trial < 2; ++trial) {
            // Advance the instance seed until all ReLU sites are kink-free.
            CompiledExample ex;
            ModelParams params;
            while (true) {
                ModelConfig c2 = cfg;
                c2.seed = seed;
                params = init_params(c2);
                RandomSource data_rng(mix64(seed));
                ex = random_example(data_rng, cfg.input_dim, 6, 12);
                if (kgqa::testing::relu_kink_margin(ex, params) > 1e-3) break;
                ++seed;
            }
            auto grads = zero_like(params);
            const CompiledExample batch[1] = {ex};
            model_loss_and_backward({batch, 1}, params, &grads);
            const auto result = kgqa::testing::finite_difference_check(
                params, grads, [&] { return model_loss_and_backward({batch, 1}, params, nullptr); },
                1e-5);
            CHECK(result.coords_checked == param_count(params.cfg));
            CHECK(result.max_rel_err < 1e-4);
            ++seed;
        }
    }
}

TEST_CASE("baseline head: zero head, hand-set head, finite differences") {
    ModelConfig cfg;
    cfg.input_dim = 2;
    cfg.gnn_dim = 4;
    cfg.fc_dim = 2;
    auto params = init_baseline_params(cfg);
    for (auto& r : tensor_refs(params)) std::fill(r.data, r.data + r.size, 0.0);

    const Vector c = {0.5, -0.25};
    CHECK(baseline_forward(c, params) == 0.0);

    // Hand-set 2x2 hidden + output: hidden = [[1,2],[3,4]], b = (0.1, -2),
    // output w = (1, 1), b = 0.5.
    params.hidden.w.row(0)[0] = 1.0;
    params.hidden.w.row(0)[1] = 2.0;
    params.hidden.w.row(1)[0] = 3.0;
    params.hidden.w.row(1)[1] = 4.0;
    params.hidden.b = {0.1, -2.0};
    params.output.w.row(0)[0] = 1.0;
    params.output.w.row(0)[1] = 1.0;
    params.output.b = {0.5};
    // pre = (1*0.5 + 2*(-0.25) + 0.1, 3*0.5 + 4*(-0.25) - 2) = (0.1, -1.5)
    // relu -> (0.1, 0); score = 0.1 + 0 + 0.5 = 0.6
    CHECK(baseline_forward(c, params) == doctest::Approx(0.6));

    // Finite differences on a small random batch.
    ModelConfig fd_cfg;
    fd_cfg.input_dim = 8;
    fd_cfg.gnn_dim = 4;
    fd_cfg.fc_dim = 6;
    fd_cfg.seed = 77;
    auto fd_params = init_baseline_params(fd_cfg);
    RandomSource rng(8);
    CompiledExample ex;
    ex.id = "fd";
    for (int i = 0; i < 4; ++i) {
        ChoiceInput choice;
        choice.graph.kg_node_ids.push_back(0);
        choice.graph.node_names.emplace_back();
        choice.graph.types.push_back(NodeType::Context);
        choice.graph.relevance.push_back(1.0);
        choice.node_inputs.push_back(kgqa::testing::random_unit_vector(rng, fd_cfg.input_dim));
        ex.choices.push_back(std::move(choice));
    }
    ex.gold = 1;
    const CompiledExample batch[1] = {ex};
    auto grads = zero_like(fd_params);
    baseline_loss_and_backward({batch, 1}, fd_params, &grads);
    const auto result = kgqa::testing::finite_difference_check(
        fd_params, grads, [&] { return baseline_loss_and_backward({batch, 1}, fd_params, nullptr); },
        1e-5);
    CHECK(result.max_rel_err < 1e-4);
}

TEST_CASE("checkpoints round-trip bit-exactly and reject the wrong kind") {
    const auto dir = kgqa::testing::unique_temp_dir("ckpt");
    const auto cfg = small_config(2, 1);
    auto params = init_params(cfg);
    const auto path = dir / "model.ckpt";
    save_checkpoint(path, params);
    CHECK(peek_checkpoint_kind(path) == ModelKind::Qagnn);
    auto loaded = load_checkpoint(path);
    auto ra = tensor_refs(params);
    auto rb = tensor_refs(loaded);
    REQUIRE(ra.size() == rb.size());
    for (std::size_t t = 0; t < ra.size(); ++t) {
        for (std::size_t i = 0; i < ra[t].size; ++i) CHECK(ra[t].data[i] == rb[t].data[i]);
    }
    // Saving the loaded params reproduces the file byte for byte.
    const auto path2 = dir / "model2.ckpt";
    save_checkpoint(path2, loaded);
    CHECK(read_text_file(path) == read_text_file(path2));

    CHECK_THROWS_AS(load_baseline_checkpoint(path), IoError);

    auto bparams = init_baseline_params(cfg);
    const auto bpath = dir / "baseline.ckpt";
    save_checkpoint(bpath, bparams);
    CHECK(peek_checkpoint_kind(bpath) == ModelKind::Baseline);
    CHECK_THROWS_AS(load_checkpoint(bpath), IoError);
    std::filesystem::remove_all(dir);
}
