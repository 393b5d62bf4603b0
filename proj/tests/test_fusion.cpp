#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "aff/fusion.hpp"
#include "aff/grad_check.hpp"
#include "aff/rng.hpp"
#include "oracles.hpp"

using namespace aff;

namespace {

FeatureBundle random_bundle(Rng& rng, const std::vector<std::size_t>& global_dims,
                            const std::vector<std::pair<std::size_t, std::size_t>>& locals,
                            const std::string& id = "item") {
    FeatureBundle b;
    b.item_id = id;
    b.label = 0;
    for (std::size_t d : global_dims) {
        b.globals.push_back(l2_normalize(rng.gaussian_matrix(1, d)));
    }
    for (const auto& [n, d] : locals) {
        Matrix block(n, d);
        for (std::size_t r = 0; r < n; ++r) {
            block.set_row(r, l2_normalize(rng.gaussian_matrix(1, d)));
        }
        b.locals.push_back(std::move(block));
    }
    return b;
}

MixerConfig small_config(std::size_t d = 8, std::size_t depth = 2) {
    MixerConfig cfg;
    cfg.d = d;
    cfg.d_e = 0;
    cfg.depth = depth;
    cfg.heads = 2;
    return cfg;
}

}  // namespace

TEST_CASE("project_and_stack: identity projection keeps the feature") {
    Rng rng(1);
    FeatureBundle b = random_bundle(rng, {6}, {});
    DynamicMixer mixer(BundleSchema::of(b), small_config(6, 1), 42);
    mixer.proj.global_proj[0].weight = Matrix::identity(6);
    const FeatureSequence seq = mixer.project_and_stack_pure(b);
    CHECK(seq.tokens.rows() == 1);
    CHECK(oracle::max_abs_diff(seq.tokens, b.globals[0]) <= 1e-15);
}

TEST_CASE("project_and_stack: shapes and order for K=2, M=1") {
    Rng rng(2);
    FeatureBundle b = random_bundle(rng, {3, 5}, {{4, 2}});
    DynamicMixer mixer(BundleSchema::of(b), small_config(8, 1), 7);
    const FeatureSequence seq = mixer.project_and_stack_pure(b);
    CHECK(seq.tokens.rows() == 6);  // 2 globals + 4 local rows
    CHECK(seq.tokens.cols() == 8);
    CHECK(seq.provenance ==
          std::vector<std::string>{"g0", "g1", "l0", "l0", "l0", "l0"});
}

TEST_CASE("project_and_stack matches per-feature matmul oracle") {
    Rng rng(3);
    FeatureBundle b = random_bundle(rng, {5, 7}, {{3, 4}});
    DynamicMixer mixer(BundleSchema::of(b), small_config(8, 1), 11);
    const FeatureSequence seq = mixer.project_and_stack_pure(b);

    const Matrix t0 = oracle::matmul_triple_loop(b.globals[0], mixer.proj.global_proj[0].weight);
    const Matrix t1 = oracle::matmul_triple_loop(b.globals[1], mixer.proj.global_proj[1].weight);
    const Matrix tl = oracle::matmul_triple_loop(b.locals[0], mixer.proj.local_proj[0].weight);
    CHECK(oracle::max_abs_diff(seq.tokens.row(0), t0) <= 1e-12);
    CHECK(oracle::max_abs_diff(seq.tokens.row(1), t1) <= 1e-12);
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(oracle::max_abs_diff(seq.tokens.row(2 + r), tl.row(r)) <= 1e-12);
    }
}

TEST_CASE("project_and_stack rejects schema mismatch") {
    Rng rng(4);
    FeatureBundle b = random_bundle(rng, {5}, {});
    DynamicMixer mixer(BundleSchema::of(b), small_config(8, 1), 1);
    FeatureBundle wrong = random_bundle(rng, {6}, {});
    CHECK_THROWS_AS(mixer.project_and_stack_pure(wrong), SchemaError);
    CHECK_THROWS_AS(mixer.embed(wrong), SchemaError);
}

TEST_CASE("mixer with zero attention and MLP weights depends only on the fusion token") {
    Rng rng(5);
    FeatureBundle b1 = random_bundle(rng, {6, 6}, {});
    FeatureBundle b2 = random_bundle(rng, {6, 6}, {});
    MixerConfig cfg = small_config(8, 1);
    DynamicMixer mixer(BundleSchema::of(b1), cfg, 3);

    TransformerLayer& layer = mixer.layers[0];
    const Matrix zero_d(8, 8), zero_h1(8, 16), zero_h2(16, 8);
    layer.attn.wq = zero_d;
    layer.attn.wk = zero_d;
    layer.attn.wv = zero_d;
    layer.attn.wo = zero_d;
    layer.w1.weight = zero_h1;
    layer.w2.weight = zero_h2;

    const Matrix e1 = mixer.embed(b1);
    const Matrix e2 = mixer.embed(b2);
    CHECK(oracle::max_abs_diff(e1, e2) <= 1e-15);

    // row 0 is LN(LN(f_fusion)) up to the (unit) gain/bias, then normalized
    Matrix gain(1, 8, 1.0), bias(1, 8, 0.0);
    const Matrix expected =
        l2_normalize(layer_norm(layer_norm(mixer.fusion_token, gain, bias), gain, bias));
    CHECK(oracle::max_abs_diff(e1, expected) <= 1e-12);
}

TEST_CASE("mixer output is invariant to gallery token permutation") {
    Rng rng(6);
    FeatureBundle b = random_bundle(rng, {6, 6, 6}, {{4, 5}});
    DynamicMixer mixer(BundleSchema::of(b), small_config(8, 3), 17);
    const FeatureSequence seq = mixer.project_and_stack_pure(b);
    const Matrix base = mixer.mix_pure(seq);

    for (int t = 0; t < 20; ++t) {
        FeatureSequence shuffled = seq;
        const auto perm = rng.permutation(seq.tokens.rows());
        shuffled.tokens = permute_rows(seq.tokens, perm);
        const Matrix out = mixer.mix_pure(shuffled);
        CHECK(oracle::max_abs_diff(out, base) <= 1e-9);
    }
}

TEST_CASE("mixer embedding is unit norm and deterministic") {
    Rng rng(7);
    FeatureBundle b = random_bundle(rng, {5, 9}, {{2, 4}});
    DynamicMixer mixer(BundleSchema::of(b), small_config(8, 4), 5);
    const Matrix e = mixer.embed(b);
    CHECK(std::abs(norm(e) - 1.0) <= 1e-9);
    CHECK(oracle::max_abs_diff(e, mixer.embed(b)) == 0.0);
}

TEST_CASE("C=1 mixer equals a single transformer layer application") {
    Rng rng(8);
    FeatureBundle b = random_bundle(rng, {5, 9}, {});
    DynamicMixer mixer(BundleSchema::of(b), small_config(8, 1), 5);

    const FeatureSequence seq = mixer.project_and_stack_pure(b);
    const Matrix input = vstack(mixer.fusion_token, seq.tokens);
    const Matrix expected = mixer.layers[0].apply(input).row(0);
    CHECK(oracle::max_abs_diff(mixer.mix_pure(seq), expected) <= 1e-12);
}

TEST_CASE("fixed-seed 3-token input equals step-by-step composition oracle") {
    Rng rng(9);
    FeatureBundle b = random_bundle(rng, {4, 6, 5}, {});
    MixerConfig cfg = small_config(8, 2);
    DynamicMixer mixer(BundleSchema::of(b), cfg, 23);

    // Recompose from the raw numerics ops.
    Matrix z(4, 8);
    z.set_row(0, mixer.fusion_token);
    for (std::size_t i = 0; i < 3; ++i) {
        z.set_row(i + 1, matmul(b.globals[i], mixer.proj.global_proj[i].weight));
    }
    const TransformerLayer& layer = mixer.layers[0];
    for (std::size_t it = 0; it < cfg.depth; ++it) {
        const Matrix zbar =
            layer_norm(z + layer.attn.apply(z), layer.norm_attn.gain, layer.norm_attn.bias);
        const Matrix mlp = matmul(gelu(matmul(zbar, layer.w1.weight)), layer.w2.weight);
        z = layer_norm(zbar + mlp, layer.norm_mlp.gain, layer.norm_mlp.bias);
    }
    const Matrix expected = l2_normalize(z.row(0));
    CHECK(oracle::max_abs_diff(mixer.embed(b), expected) <= 1e-10);
}

TEST_CASE("mixer config validation") {
    Rng rng(10);
    FeatureBundle b = random_bundle(rng, {4}, {});
    MixerConfig cfg = small_config(8, 2);
    cfg.depth = 0;
    CHECK_THROWS_AS(DynamicMixer(BundleSchema::of(b), cfg, 1), ConfigError);
    cfg = small_config(9, 2);  // 9 not divisible by 2 heads
    CHECK_THROWS_AS(DynamicMixer(BundleSchema::of(b), cfg, 1), ConfigError);
}

TEST_CASE("mixer backward: finite differences over every parameter group") {
    Rng rng(11);
    FeatureBundle b = random_bundle(rng, {4, 5}, {{2, 3}});
    DynamicMixer mixer(BundleSchema::of(b), small_config(8, 2), 31);
    const Matrix upstream = rng.gaussian_matrix(1, 8);

    auto loss = [&] { return dot(upstream, mixer.mix_pure(mixer.project_and_stack_pure(b))); };
    auto fill = [&] {
        mixer.zero_grads();
        mixer.forward(b);
        mixer.backward(upstream);
    };
    const GradCheckReport r = fd_compare(loss, fill, mixer.params());
    INFO(r.worst_param);
    CHECK(r.max_rel_err <= 1e-5);
}

TEST_CASE("mixer backward: zero upstream gives zero grads") {
    Rng rng(12);
    FeatureBundle b = random_bundle(rng, {4, 5}, {});
    DynamicMixer mixer(BundleSchema::of(b), small_config(8, 3), 3);
    mixer.zero_grads();
    mixer.forward(b);
    mixer.backward(Matrix(1, 8));
    for (const auto& p : mixer.params()) {
        CHECK(norm(*p.grad) == 0.0);
    }
}

TEST_CASE("mixer backward before forward is a state error") {
    Rng rng(13);
    FeatureBundle b = random_bundle(rng, {4}, {});
    DynamicMixer mixer(BundleSchema::of(b), small_config(8, 2), 3);
    CHECK_THROWS_AS(mixer.backward(Matrix(1, 8, 1.0)), StateError);
}

TEST_CASE("C=2 shared grads equal the sum over an unrolled two-copy oracle") {
    Rng rng(14);
    FeatureBundle b = random_bundle(rng, {4, 6}, {});
    MixerConfig shared_cfg = small_config(8, 2);
    DynamicMixer shared(BundleSchema::of(b), shared_cfg, 77);

    MixerConfig unrolled_cfg = shared_cfg;
    unrolled_cfg.shared_weights = false;
    DynamicMixer unrolled(BundleSchema::of(b), unrolled_cfg, 77);
    // same projections/fusion token, and both layer copies equal the shared one
    unrolled.fusion_token = shared.fusion_token;
    unrolled.proj = shared.proj;
    unrolled.layers[0] = shared.layers[0];
    unrolled.layers[1] = shared.layers[0];

    const Matrix upstream = rng.gaussian_matrix(1, 8);
    CHECK(oracle::max_abs_diff(shared.embed(b), unrolled.embed(b)) <= 1e-12);

    shared.zero_grads();
    shared.forward(b);
    shared.backward(upstream);

    unrolled.zero_grads();
    unrolled.forward(b);
    unrolled.backward(upstream);

    auto shared_layer = shared.layers[0].params("x");
    auto copy0 = unrolled.layers[0].params("x");
    auto copy1 = unrolled.layers[1].params("x");
    for (std::size_t i = 0; i < shared_layer.size(); ++i) {
        const Matrix expected = *copy0[i].grad + *copy1[i].grad;
        CHECK(oracle::max_abs_diff(*shared_layer[i].grad, expected) <= 1e-12);
    }
    CHECK(oracle::max_abs_diff(shared.grad_fusion_token, unrolled.grad_fusion_token) <= 1e-12);
}

TEST_CASE("baseline: single feature, identity weight, no hidden layer") {
    Rng rng(15);
    FeatureBundle b = random_bundle(rng, {8}, {});
    BaselineMixer mlp(BundleSchema::of(b), 8, 0, 5);
    mlp.fc1.weight = Matrix::identity(8);
    CHECK(oracle::max_abs_diff(mlp.embed(b), l2_normalize(b.globals[0])) <= 1e-12);
}

TEST_CASE("baseline: width arithmetic for hidden stack") {
    Rng rng(16);
    FeatureBundle b = random_bundle(rng, {3, 5}, {{4, 2}});
    BaselineMixer mlp(BundleSchema::of(b), 8, 16, 5);  // (3+5+4*2) -> 16 -> 8
    CHECK(mlp.fc1.weight.rows() == 16u);  // stored in x out: 16 inputs
    CHECK(mlp.fc1.weight.cols() == 16u);
    CHECK(mlp.fc2.weight.rows() == 16u);
    CHECK(mlp.fc2.weight.cols() == 8u);
    CHECK(mlp.embed(b).cols() == 8u);
}

TEST_CASE("baseline matches matmul+gelu composition oracle and grad check") {
    Rng rng(17);
    FeatureBundle b = random_bundle(rng, {3, 4}, {{2, 3}});
    BaselineMixer mlp(BundleSchema::of(b), 6, 10, 9);

    Matrix flat(1, 13);
    std::size_t c = 0;
    for (const auto& g : b.globals)
        for (std::size_t j = 0; j < g.cols(); ++j) flat(0, c++) = g(0, j);
    for (std::size_t i = 0; i < b.locals[0].size(); ++i) flat(0, c++) = b.locals[0].at(i);
    const Matrix expected =
        l2_normalize(matmul(gelu(matmul(flat, mlp.fc1.weight)), mlp.fc2.weight));
    CHECK(oracle::max_abs_diff(mlp.embed(b), expected) <= 1e-10);

    const Matrix upstream = rng.gaussian_matrix(1, 6);
    auto loss = [&] {
        return dot(upstream, matmul(gelu(matmul(flat, mlp.fc1.weight)), mlp.fc2.weight));
    };
    auto fill = [&] {
        mlp.zero_grads();
        mlp.forward(b);
        mlp.backward(upstream);
    };
    const GradCheckReport r = fd_compare(loss, fill, mlp.params());
    INFO(r.worst_param);
    CHECK(r.max_rel_err <= 1e-5);
}

TEST_CASE("baseline rejects arity mismatch") {
    Rng rng(18);
    FeatureBundle b = random_bundle(rng, {3, 4}, {});
    BaselineMixer mlp(BundleSchema::of(b), 6, 10, 9);
    FeatureBundle wrong = random_bundle(rng, {3}, {});
    CHECK_THROWS_AS(mlp.embed(wrong), SchemaError);
}
