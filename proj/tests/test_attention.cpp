#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <vector>

#include "attention_oracle.hpp"
#include "grad_check.hpp"
#include "grt/attention.hpp"
#include "grt/edge_features.hpp"
#include "grt/rng.hpp"
#include "grt/tensor.hpp"
#include "oracles.hpp"

using namespace grt;

namespace {

std::vector<double> random_values(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal(0.0, scale);
  return v;
}

AttentionConfig small_config(FusionLocation loc, FusionFn fn,
                             std::size_t d_in = 8, std::size_t heads = 2) {
  AttentionConfig cfg;
  cfg.d_in = d_in;
  cfg.n_heads = heads;
  cfg.n_layers = 2;
  cfg.d_e = 12;
  cfg.d_e_prime = 3;
  cfg.fusion_location = loc;
  cfg.fusion_fn = fn;
  return cfg;
}

EdgeTensor random_edges(Rng& rng, std::size_t n, const EdgeFeatureMask& mask = {}) {
  std::vector<EdgeInput> inputs;
  for (std::size_t i = 0; i < n; ++i) {
    EdgeInput in;
    in.modality = i % 2 == 0 ? Modality::kVisualObject : Modality::kOcrToken;
    const double w = rng.uniform(0.05, 0.4);
    const double h = rng.uniform(0.05, 0.4);
    const double x = rng.uniform(0.0, 1.0 - w);
    const double y = rng.uniform(0.0, 1.0 - h);
    in.box = BoundingBox{x, y, x + w, y + h};
    in.embedding = random_values(rng, 6);
    inputs.push_back(std::move(in));
  }
  return build_edge_tensor(inputs, mask);
}

EdgeTensor zero_edges(std::size_t n, std::size_t d_e = 12) {
  EdgeTensor e;
  e.n_obj = n;
  e.d_e = d_e;
  e.values.assign(n * n * d_e, 0.0);
  return e;
}

const std::vector<std::pair<FusionLocation, FusionFn>> kAllCells = {
    {FusionLocation::kKeys, FusionFn::kConcat},
    {FusionLocation::kKeys, FusionFn::kAdd},
    {FusionLocation::kValues, FusionFn::kConcat},
    {FusionLocation::kValues, FusionFn::kAdd},
    {FusionLocation::kKeysAndValues, FusionFn::kConcat},
    {FusionLocation::kKeysAndValues, FusionFn::kAdd},
};

}  // namespace

TEST_CASE("single input attention reduces to projected value row") {
  Rng rng(1);
  AttentionConfig cfg = small_config(FusionLocation::kNone, FusionFn::kAdd);
  ParameterStore store;
  LayerWeights layer = make_layer_weights(store, cfg, "l.");
  store.initialize(rng);

  std::vector<double> x = random_values(rng, cfg.d_in);
  Tape tape;
  WeightBinding weights(tape);
  Tensor xt = tape.leaf({1, cfg.d_in}, x);
  Tensor out = vanilla_attention(weights, xt, layer, cfg, AttnMask::full(1));

  // With one input the softmax weight is 1, so the context equals the value
  // row and the output is its w_o projection.
  Tensor v = tape.add_row_bias(tape.matmul(xt, weights[layer.w_v]),
                               weights[layer.b_v]);
  Tensor expected = tape.add_row_bias(tape.matmul(v, weights[layer.w_o]),
                                      weights[layer.b_o]);
  CHECK(oracle::max_abs_diff(out.values(), expected.values()) <= 1e-15);
}

TEST_CASE("identical input rows give identical output rows") {
  Rng rng(2);
  AttentionConfig cfg = small_config(FusionLocation::kNone, FusionFn::kAdd);
  ParameterStore store;
  LayerWeights layer = make_layer_weights(store, cfg, "l.");
  store.initialize(rng);

  std::vector<double> row = random_values(rng, cfg.d_in);
  std::vector<double> x;
  for (int i = 0; i < 4; ++i) x.insert(x.end(), row.begin(), row.end());

  Tape tape;
  WeightBinding weights(tape);
  Tensor out = vanilla_attention(weights, tape.leaf({4, cfg.d_in}, x), layer,
                                 cfg, AttnMask::full(4));
  for (std::size_t i = 1; i < 4; ++i)
    for (std::size_t j = 0; j < cfg.d_in; ++j)
      CHECK(out(i, j) == doctest::Approx(out(0, j)).epsilon(1e-14));
}

TEST_CASE("vanilla attention matches the naive per-query oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    AttentionConfig cfg = small_config(FusionLocation::kNone, FusionFn::kAdd);
    ParameterStore store;
    LayerWeights layer = make_layer_weights(store, cfg, "l.");
    store.initialize(rng);
    const std::size_t n = 2 + rng.uniform_index(6);
    std::vector<double> x = random_values(rng, n * cfg.d_in);

    Tape tape;
    WeightBinding weights(tape);
    Tensor out = vanilla_attention(weights, tape.leaf({n, cfg.d_in}, x), layer,
                                   cfg, AttnMask::full(n));
    auto expected = oracle::per_query_attention(x, n, nullptr, layer, cfg,
                                                AttnMask::full(n));
    CHECK(oracle::max_abs_diff(out.values(), expected) <= 1e-10);
  }
}

TEST_CASE("fuse add with zero projection returns x unchanged") {
  Rng rng(4);
  Tape tape;
  Tensor x = tape.leaf({3, 8}, random_values(rng, 24));
  Tensor e_i = tape.leaf({3, 12}, random_values(rng, 36));
  Tensor w_a = tape.constant({12, 8}, 0.0);
  Tensor fused = fuse(tape, FusionFn::kAdd, x, e_i, w_a);
  CHECK(oracle::max_abs_diff(fused.values(), x.values()) == 0.0);
}

TEST_CASE("fuse add with zero edges returns x for any projection") {
  Rng rng(5);
  Tape tape;
  Tensor x = tape.leaf({3, 8}, random_values(rng, 24));
  Tensor e_i = tape.constant({3, 12}, 0.0);
  Tensor w_a = tape.leaf({12, 8}, random_values(rng, 96));
  Tensor fused = fuse(tape, FusionFn::kAdd, x, e_i, w_a);
  CHECK(oracle::max_abs_diff(fused.values(), x.values()) == 0.0);
}

TEST_CASE("fuse concat width arithmetic") {
  Rng rng(6);
  Tape tape;
  Tensor x = tape.constant({5, 768}, 0.1);
  Tensor e_i = tape.leaf({5, 12}, random_values(rng, 60));
  Tensor w_c = tape.leaf({12, 4}, random_values(rng, 48));
  Tensor fused = fuse(tape, FusionFn::kConcat, x, e_i, w_c);
  CHECK(fused.shape() == Shape{5, 772});
}

TEST_CASE("fuse width mismatch raises a dimension error") {
  Tape tape;
  Tensor x = tape.constant({3, 8}, 0.0);
  Tensor e_i = tape.constant({3, 12}, 0.0);
  Tensor w_wrong = tape.constant({7, 8}, 0.0);
  CHECK_THROWS_AS(fuse(tape, FusionFn::kAdd, x, e_i, w_wrong),
                  std::invalid_argument);
}

TEST_CASE("graph attention with zero edges and add equals vanilla bit for bit") {
  Rng rng(7);
  for (FusionLocation loc : {FusionLocation::kKeys, FusionLocation::kValues,
                             FusionLocation::kKeysAndValues}) {
    AttentionConfig cfg = small_config(loc, FusionFn::kAdd);
    ParameterStore store;
    LayerWeights layer = make_layer_weights(store, cfg, "l.");
    store.initialize(rng);
    const std::size_t n = 5;
    std::vector<double> x = random_values(rng, n * cfg.d_in);
    EdgeTensor zeros = zero_edges(n);

    Tape tg;
    WeightBinding wg(tg);
    Tensor graph_out = graph_attention(wg, tg.leaf({n, cfg.d_in}, x), zeros,
                                       layer, cfg, AttnMask::full(n));
    Tape tv;
    WeightBinding wv(tv);
    Tensor vanilla_out = vanilla_attention(wv, tv.leaf({n, cfg.d_in}, x), layer,
                                           cfg, AttnMask::full(n));
    CHECK(oracle::max_abs_diff(graph_out.values(), vanilla_out.values()) == 0.0);
  }
}

TEST_CASE("graph attention matches the brute-force per-query oracle") {
  Rng rng(8);
  for (const auto& [loc, fn] : kAllCells) {
    for (int trial = 0; trial < 4; ++trial) {
      AttentionConfig cfg = small_config(loc, fn);
      ParameterStore store;
      LayerWeights layer = make_layer_weights(store, cfg, "l.");
      store.initialize(rng);
      const std::size_t n = 2 + rng.uniform_index(5);
      std::vector<double> x = random_values(rng, n * cfg.d_in);
      EdgeTensor edges = random_edges(rng, n);

      Tape tape;
      WeightBinding weights(tape);
      Tensor out = graph_attention(weights, tape.leaf({n, cfg.d_in}, x), edges,
                                   layer, cfg, AttnMask::full(n));
      auto expected = oracle::per_query_attention(x, n, &edges, layer, cfg,
                                                  AttnMask::full(n));
      CHECK(oracle::max_abs_diff(out.values(), expected) <= 1e-10);
    }
  }
}

TEST_CASE("n=2 toy instance against the brute-force oracle") {
  Rng rng(9);
  AttentionConfig cfg = small_config(FusionLocation::kKeysAndValues,
                                     FusionFn::kConcat, 4, 1);
  ParameterStore store;
  LayerWeights layer = make_layer_weights(store, cfg, "l.");
  store.initialize(rng);
  std::vector<double> x = random_values(rng, 2 * cfg.d_in);
  EdgeTensor edges = random_edges(rng, 2);

  Tape tape;
  WeightBinding weights(tape);
  Tensor out = graph_attention(weights, tape.leaf({2, cfg.d_in}, x), edges,
                               layer, cfg, AttnMask::full(2));
  auto expected =
      oracle::per_query_attention(x, 2, &edges, layer, cfg, AttnMask::full(2));
  CHECK(oracle::max_abs_diff(out.values(), expected) <= 1e-10);
}

TEST_CASE("keys fusion with zero edges leaves attention weights vanilla") {
  Rng rng(10);
  AttentionConfig cfg = small_config(FusionLocation::kKeys, FusionFn::kAdd);
  ParameterStore store;
  LayerWeights layer = make_layer_weights(store, cfg, "l.");
  store.initialize(rng);
  const std::size_t n = 4;
  std::vector<double> x = random_values(rng, n * cfg.d_in);

  AttnDebug dbg_graph, dbg_vanilla;
  {
    Tape tape;
    WeightBinding weights(tape);
    EdgeTensor zeros = zero_edges(n);
    (void)graph_attention(weights, tape.leaf({n, cfg.d_in}, x), zeros, layer,
                          cfg, AttnMask::full(n), &dbg_graph);
  }
  {
    Tape tape;
    WeightBinding weights(tape);
    (void)vanilla_attention(weights, tape.leaf({n, cfg.d_in}, x), layer, cfg,
                            AttnMask::full(n), &dbg_vanilla);
  }
  REQUIRE(dbg_graph.head_probs.size() == dbg_vanilla.head_probs.size());
  for (std::size_t h = 0; h < dbg_graph.head_probs.size(); ++h) {
    CHECK(oracle::max_abs_diff(dbg_graph.head_probs[h],
                               dbg_vanilla.head_probs[h]) <= 1e-12);
  }
}

TEST_CASE("attention rows are probability distributions under any fusion") {
  Rng rng(11);
  for (const auto& [loc, fn] : kAllCells) {
    AttentionConfig cfg = small_config(loc, fn);
    ParameterStore store;
    LayerWeights layer = make_layer_weights(store, cfg, "l.");
    store.initialize(rng);
    const std::size_t n = 5;
    std::vector<double> x = random_values(rng, n * cfg.d_in);
    EdgeTensor edges = random_edges(rng, n);

    Tape tape;
    WeightBinding weights(tape);
    AttnDebug dbg;
    (void)graph_attention(weights, tape.leaf({n, cfg.d_in}, x), edges, layer,
                          cfg, AttnMask::full(n), &dbg);
    for (const auto& probs : dbg.head_probs) {
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          CHECK(probs[i * n + j] >= 0.0);
          s += probs[i * n + j];
        }
        CHECK(std::abs(s - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_CASE("distinct edge slices give distinct per-query keys") {
  Rng rng(12);
  AttentionConfig cfg = small_config(FusionLocation::kKeys, FusionFn::kAdd);
  ParameterStore store;
  LayerWeights layer = make_layer_weights(store, cfg, "l.");
  store.initialize(rng);

  const std::size_t n = 3;
  std::vector<double> x = random_values(rng, n * cfg.d_in);
  EdgeTensor edges = random_edges(rng, n);

  // K_i = phi(X, E_i) W_k materialized through the public fuse op.
  Tape tape;
  WeightBinding weights(tape);
  Tensor xt = tape.leaf({n, cfg.d_in}, x);
  auto key_matrix = [&](std::size_t i) {
    Tensor e_i = tape.leaf_view({n, edges.d_e},
                                edges.values.data() + i * n * edges.d_e);
    Tensor fused = fuse(tape, cfg.fusion_fn, xt, e_i, weights[layer.w_fuse]);
    return tape.add_row_bias(tape.matmul(fused, weights[layer.w_k]),
                             weights[layer.b_k]);
  };
  Tensor k0 = key_matrix(0);
  Tensor k1 = key_matrix(1);
  CHECK(oracle::max_abs_diff(k0.values(), k1.values()) > 1e-6);
}

TEST_CASE("transformer layer with zeroed outputs is a double layer norm") {
  Rng rng(13);
  AttentionConfig cfg = small_config(FusionLocation::kNone, FusionFn::kAdd);
  ParameterStore store;
  LayerWeights layer = make_layer_weights(store, cfg, "l.");
  store.initialize(rng);
  std::fill(layer.w_o->values.begin(), layer.w_o->values.end(), 0.0);
  std::fill(layer.b_o->values.begin(), layer.b_o->values.end(), 0.0);
  std::fill(layer.ffn_w2->values.begin(), layer.ffn_w2->values.end(), 0.0);
  std::fill(layer.ffn_b2->values.begin(), layer.ffn_b2->values.end(), 0.0);

  const std::size_t n = 4;
  std::vector<double> x = random_values(rng, n * cfg.d_in);
  Tape tape;
  WeightBinding weights(tape);
  Tensor xt = tape.leaf({n, cfg.d_in}, x);
  Tensor out = transformer_layer(weights, xt, nullptr, layer, cfg,
                                 AttnMask::full(n));

  Tensor gain = tape.constant({cfg.d_in}, 1.0);
  Tensor bias = tape.constant({cfg.d_in}, 0.0);
  Tensor expected = tape.layer_norm(tape.layer_norm(xt, gain, bias), gain, bias);
  CHECK(oracle::max_abs_diff(out.values(), expected.values()) <= 1e-12);
}

TEST_CASE("transformer layer preserves shape") {
  Rng rng(14);
  for (const auto& [loc, fn] : kAllCells) {
    AttentionConfig cfg = small_config(loc, fn);
    ParameterStore store;
    LayerWeights layer = make_layer_weights(store, cfg, "l.");
    store.initialize(rng);
    const std::size_t n = 6;
    EdgeTensor edges = random_edges(rng, n);
    Tape tape;
    WeightBinding weights(tape);
    Tensor out = transformer_layer(
        weights, tape.leaf({n, cfg.d_in}, random_values(rng, n * cfg.d_in)),
        &edges, layer, cfg, AttnMask::full(n));
    CHECK(out.shape() == Shape{n, cfg.d_in});
  }
}

TEST_CASE("gradient check through one full transformer layer") {
  Rng rng(15);
  AttentionConfig cfg = small_config(FusionLocation::kValues, FusionFn::kAdd,
                                     4, 2);
  ParameterStore store;
  LayerWeights layer = make_layer_weights(store, cfg, "l.");
  store.initialize(rng);
  const std::size_t n = 3;
  std::vector<double> x = random_values(rng, n * cfg.d_in);
  EdgeTensor edges = random_edges(rng, n);
  std::vector<double> targets(n * cfg.d_in);
  for (double& t : targets) t = rng.uniform() < 0.5 ? 1.0 : 0.0;

  CHECK(gradcheck::check_param_gradients([&](WeightBinding& weights) {
    Tape& tape = weights.tape();
    Tensor xt = tape.leaf({n, cfg.d_in}, x);
    Tensor out = transformer_layer(weights, xt, &edges, layer, cfg,
                                   AttnMask::full(n));
    Tensor loss = tape.sum(
        tape.binary_cross_entropy(tape.sigmoid(out), targets));
    if (weights.entries().empty()) throw std::logic_error("no weights bound");
    return loss;
  }));
}

TEST_CASE("encode stack with zero layers is the identity") {
  Rng rng(16);
  AttentionConfig cfg = small_config(FusionLocation::kNone, FusionFn::kAdd);
  cfg.n_layers = 0;
  StackWeights stack;
  Tape tape;
  WeightBinding weights(tape);
  Tensor x = tape.leaf({3, cfg.d_in}, random_values(rng, 3 * cfg.d_in));
  Tensor out = encode_stack(weights, x, nullptr, stack, cfg, AttnMask::full(3));
  CHECK(out.id() == x.id());
}

TEST_CASE("four layers twelve heads run a 30-input instance in under a second") {
  Rng rng(17);
  AttentionConfig cfg;
  cfg.d_in = 48;
  cfg.n_heads = 12;
  cfg.n_layers = 4;
  cfg.fusion_location = FusionLocation::kValues;
  cfg.fusion_fn = FusionFn::kAdd;
  ParameterStore store;
  StackWeights stack = make_stack_weights(store, cfg, "stack.");
  store.initialize(rng);
  const std::size_t n = 30;
  EdgeTensor edges = random_edges(rng, n);
  std::vector<double> x = random_values(rng, n * cfg.d_in);

  const auto start = std::chrono::steady_clock::now();
  Tape tape;
  WeightBinding weights(tape);
  Tensor out = encode_stack(weights, tape.leaf({n, cfg.d_in}, x), &edges, stack,
                            cfg, AttnMask::full(n));
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  CHECK(out.shape() == Shape{n, cfg.d_in});
  CHECK(elapsed < 1.0);
}

TEST_CASE("joint permutation of inputs and edges permutes outputs") {
  Rng rng(18);
  AttentionConfig cfg = small_config(FusionLocation::kKeysAndValues,
                                     FusionFn::kAdd);
  cfg.n_layers = 2;
  ParameterStore store;
  StackWeights stack = make_stack_weights(store, cfg, "stack.");
  store.initialize(rng);

  const std::size_t n = 5;
  std::vector<EdgeInput> inputs;
  for (std::size_t i = 0; i < n; ++i) {
    EdgeInput in;
    in.modality = i % 2 == 0 ? Modality::kVisualObject : Modality::kOcrToken;
    const double w = rng.uniform(0.05, 0.3);
    const double h = rng.uniform(0.05, 0.3);
    const double bx = rng.uniform(0.0, 1.0 - w);
    const double by = rng.uniform(0.0, 1.0 - h);
    in.box = BoundingBox{bx, by, bx + w, by + h};
    in.embedding = random_values(rng, 6);
    inputs.push_back(std::move(in));
  }
  std::vector<double> x = random_values(rng, n * cfg.d_in);

  std::vector<std::size_t> perm{2, 0, 4, 1, 3};
  std::vector<EdgeInput> perm_inputs;
  std::vector<double> perm_x(n * cfg.d_in);
  for (std::size_t i = 0; i < n; ++i) {
    perm_inputs.push_back(inputs[perm[i]]);
    std::copy_n(x.begin() + perm[i] * cfg.d_in, cfg.d_in,
                perm_x.begin() + i * cfg.d_in);
  }

  EdgeTensor edges = build_edge_tensor(inputs);
  EdgeTensor perm_edges = build_edge_tensor(perm_inputs);

  Tape t0;
  WeightBinding w0(t0);
  Tensor out = encode_stack(w0, t0.leaf({n, cfg.d_in}, x), &edges, stack, cfg,
                            AttnMask::full(n));
  Tape t1;
  WeightBinding w1(t1);
  Tensor perm_out = encode_stack(w1, t1.leaf({n, cfg.d_in}, perm_x),
                                 &perm_edges, stack, cfg, AttnMask::full(n));

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < cfg.d_in; ++j)
      CHECK(perm_out(i, j) ==
            doctest::Approx(out(perm[i], j)).epsilon(1e-10));
}

TEST_CASE("reduction identity for every fusion cell") {
  Rng rng(19);
  for (const auto& [loc, fn] : kAllCells) {
    AttentionConfig cfg = small_config(loc, fn);
    ParameterStore store;
    LayerWeights layer = make_layer_weights(store, cfg, "l.");
    store.initialize(rng);
    const std::size_t n = 4;
    std::vector<double> x = random_values(rng, n * cfg.d_in);
    EdgeTensor zeros = zero_edges(n);

    // Vanilla weights: same values, with the edge slice of w_k / w_v removed.
    // Under add the slice is empty; under concat it must be zeroed for the
    // restricted reduction to hold.
    AttentionConfig vcfg = cfg;
    vcfg.fusion_location = FusionLocation::kNone;
    ParameterStore vstore;
    LayerWeights vlayer = make_layer_weights(vstore, vcfg, "l.");
    auto copy_block = [&](Parameter* dst, Parameter* src) {
      // copy the top d_in rows (dst may be narrower than src)
      const std::size_t cols = dst->shape[1];
      for (std::size_t r = 0; r < dst->shape[0]; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          dst->values[r * cols + c] = src->values[r * cols + c];
    };
    for (auto [dst, src] : std::vector<std::pair<Parameter*, Parameter*>>{
             {vlayer.w_q, layer.w_q}, {vlayer.b_q, layer.b_q},
             {vlayer.w_k, layer.w_k}, {vlayer.b_k, layer.b_k},
             {vlayer.w_v, layer.w_v}, {vlayer.b_v, layer.b_v},
             {vlayer.w_o, layer.w_o}, {vlayer.b_o, layer.b_o}}) {
      if (dst->shape.size() == 1) {
        dst->values = src->values;
      } else {
        copy_block(dst, src);
      }
    }

    Tape tg;
    WeightBinding wg(tg);
    Tensor graph_out = graph_attention(wg, tg.leaf({n, cfg.d_in}, x), zeros,
                                       layer, cfg, AttnMask::full(n));
    Tape tv;
    WeightBinding wv(tv);
    Tensor vanilla_out = vanilla_attention(wv, tv.leaf({n, cfg.d_in}, x),
                                           vlayer, vcfg, AttnMask::full(n));
    CHECK(oracle::max_abs_diff(graph_out.values(), vanilla_out.values()) <=
          1e-12);
  }
}

TEST_CASE("end-to-end gradient check for all six fusion cells") {
  Rng rng(20);
  for (const auto& [loc, fn] : kAllCells) {
    AttentionConfig cfg = small_config(loc, fn, 4, 2);
    cfg.n_layers = 2;
    ParameterStore store;
    StackWeights stack = make_stack_weights(store, cfg, "stack.");
    store.initialize(rng);
    const std::size_t n = 4;
    std::vector<double> x = random_values(rng, n * cfg.d_in);
    EdgeTensor edges = random_edges(rng, n);
    std::vector<double> targets(n * cfg.d_in);
    for (double& t : targets) t = rng.uniform() < 0.5 ? 1.0 : 0.0;

    CHECK(gradcheck::check_param_gradients(
        [&](WeightBinding& weights) {
          Tape& tape = weights.tape();
          Tensor out = encode_stack(weights, tape.leaf({n, cfg.d_in}, x),
                                    &edges, stack, cfg, AttnMask::full(n));
          return tape.sum(
              tape.binary_cross_entropy(tape.sigmoid(out), targets));
        },
        1e-4, 1e-5, 24, &rng));
  }
}

TEST_CASE("fully masked rows output zeros") {
  Rng rng(21);
  AttentionConfig cfg = small_config(FusionLocation::kNone, FusionFn::kAdd);
  ParameterStore store;
  LayerWeights layer = make_layer_weights(store, cfg, "l.");
  store.initialize(rng);
  const std::size_t n = 3;
  AttnMask mask = AttnMask::full(n);
  for (std::size_t j = 0; j < n; ++j) mask.allowed[1 * n + j] = 0;

  Tape tape;
  WeightBinding weights(tape);
  Tensor out = vanilla_attention(
      weights, tape.leaf({n, cfg.d_in}, random_values(rng, n * cfg.d_in)),
      layer, cfg, mask);
  for (std::size_t j = 0; j < cfg.d_in; ++j) CHECK(out(1, j) == 0.0);
  double other = 0.0;
  for (std::size_t j = 0; j < cfg.d_in; ++j) other += std::abs(out(0, j));
  CHECK(other > 0.0);
}

TEST_CASE("graph attention rejects mismatched edge tensors") {
  Rng rng(22);
  AttentionConfig cfg = small_config(FusionLocation::kValues, FusionFn::kAdd);
  ParameterStore store;
  LayerWeights layer = make_layer_weights(store, cfg, "l.");
  store.initialize(rng);
  EdgeTensor edges = zero_edges(3);
  Tape tape;
  WeightBinding weights(tape);
  Tensor x = tape.leaf({4, cfg.d_in}, random_values(rng, 4 * cfg.d_in));
  CHECK_THROWS_AS(
      graph_attention(weights, x, edges, layer, cfg, AttnMask::full(4)),
      std::invalid_argument);

  AttentionConfig none_cfg = small_config(FusionLocation::kNone, FusionFn::kAdd);
  EdgeTensor edges4 = zero_edges(4);
  CHECK_THROWS_AS(
      graph_attention(weights, x, edges4, layer, none_cfg, AttnMask::full(4)),
      std::invalid_argument);
}
