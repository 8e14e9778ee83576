#include "grt/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace grt {

std::string to_string(FusionLocation loc) {
  switch (loc) {
    case FusionLocation::kNone: return "none";
    case FusionLocation::kKeys: return "keys";
    case FusionLocation::kValues: return "values";
    case FusionLocation::kKeysAndValues: return "keys_and_values";
  }
  return "?";
}

std::string to_string(FusionFn fn) {
  return fn == FusionFn::kConcat ? "concat" : "add";
}

FusionLocation fusion_location_from_string(const std::string& s) {
  if (s == "none") return FusionLocation::kNone;
  if (s == "keys") return FusionLocation::kKeys;
  if (s == "values") return FusionLocation::kValues;
  if (s == "keys_and_values" || s == "both") return FusionLocation::kKeysAndValues;
  throw std::runtime_error("unknown fusion location: " + s);
}

FusionFn fusion_fn_from_string(const std::string& s) {
  if (s == "concat") return FusionFn::kConcat;
  if (s == "add") return FusionFn::kAdd;
  throw std::runtime_error("unknown fusion function: " + s);
}

void AttentionConfig::validate() const {
  if (n_heads == 0) throw std::runtime_error("config: n_heads must be >= 1");
  if ((d_k == 0 || d_v == 0) && d_in % n_heads != 0) {
    throw std::runtime_error("config: d_in " + std::to_string(d_in) +
                             " not divisible by n_heads " +
                             std::to_string(n_heads));
  }
  if (fusion_location != FusionLocation::kNone &&
      fusion_fn == FusionFn::kConcat && d_e_prime < 1) {
    throw std::runtime_error("config: concat fusion requires d_e_prime >= 1");
  }
}

Parameter* ParameterStore::create(const std::string& name, Shape shape,
                                  Parameter::Init init) {
  if (by_name_.count(name)) {
    throw std::runtime_error("parameter already exists: " + name);
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->shape = std::move(shape);
  p->init = init;
  p->values.assign(shape_numel(p->shape), 0.0);
  by_name_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back().get();
}

Parameter* ParameterStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : params_[it->second].get();
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

std::size_t ParameterStore::offset_of(const Parameter* p) const {
  std::size_t offset = 0;
  for (const auto& q : params_) {
    if (q.get() == p) return offset;
    offset += q->size();
  }
  throw std::runtime_error("parameter not in store: " + p->name);
}

void ParameterStore::initialize(Rng& rng) {
  for (const auto& p : params_) {
    switch (p->init) {
      case Parameter::Init::kZero:
        std::fill(p->values.begin(), p->values.end(), 0.0);
        break;
      case Parameter::Init::kOne:
        std::fill(p->values.begin(), p->values.end(), 1.0);
        break;
      case Parameter::Init::kXavier: {
        const std::size_t fan_in = p->shape.size() == 2 ? p->shape[0] : 1;
        const std::size_t fan_out = p->shape.size() == 2 ? p->shape[1]
                                                         : p->shape[0];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& v : p->values) v = rng.uniform(-bound, bound);
        break;
      }
      case Parameter::Init::kEmbedding:
        for (double& v : p->values) v = rng.normal(0.0, 0.02);
        break;
    }
  }
}

LayerWeights make_layer_weights(ParameterStore& store,
                                const AttentionConfig& config,
                                const std::string& prefix) {
  config.validate();
  const std::size_t dk = config.head_dim_k() * config.n_heads;
  const std::size_t dv = config.head_dim_v() * config.n_heads;
  const std::size_t key_in =
      config.fuse_keys() ? config.fused_width() : config.d_in;
  const std::size_t value_in =
      config.fuse_values() ? config.fused_width() : config.d_in;
  using Init = Parameter::Init;

  LayerWeights w;
  w.w_q = store.create(prefix + "w_q", {config.d_in, dk}, Init::kXavier);
  w.b_q = store.create(prefix + "b_q", {dk}, Init::kZero);
  w.w_k = store.create(prefix + "w_k", {key_in, dk}, Init::kXavier);
  w.b_k = store.create(prefix + "b_k", {dk}, Init::kZero);
  w.w_v = store.create(prefix + "w_v", {value_in, dv}, Init::kXavier);
  w.b_v = store.create(prefix + "b_v", {dv}, Init::kZero);
  w.w_o = store.create(prefix + "w_o", {dv, config.d_in}, Init::kXavier);
  w.b_o = store.create(prefix + "b_o", {config.d_in}, Init::kZero);
  w.ln_attn_gain = store.create(prefix + "ln_attn.gain", {config.d_in}, Init::kOne);
  w.ln_attn_bias = store.create(prefix + "ln_attn.bias", {config.d_in}, Init::kZero);
  w.ffn_w1 = store.create(prefix + "ffn_w1", {config.d_in, config.ffn()}, Init::kXavier);
  w.ffn_b1 = store.create(prefix + "ffn_b1", {config.ffn()}, Init::kZero);
  w.ffn_w2 = store.create(prefix + "ffn_w2", {config.ffn(), config.d_in}, Init::kXavier);
  w.ffn_b2 = store.create(prefix + "ffn_b2", {config.d_in}, Init::kZero);
  w.ln_ffn_gain = store.create(prefix + "ln_ffn.gain", {config.d_in}, Init::kOne);
  w.ln_ffn_bias = store.create(prefix + "ln_ffn.bias", {config.d_in}, Init::kZero);
  if (config.fusion_location != FusionLocation::kNone) {
    const std::size_t fuse_out = config.fusion_fn == FusionFn::kConcat
                                     ? config.d_e_prime
                                     : config.d_in;
    w.w_fuse = store.create(prefix + "w_fuse", {config.d_e, fuse_out}, Init::kXavier);
  }
  return w;
}

StackWeights make_stack_weights(ParameterStore& store,
                                const AttentionConfig& config,
                                const std::string& prefix) {
  StackWeights stack;
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    stack.layers.push_back(make_layer_weights(
        store, config, prefix + "layer" + std::to_string(i) + "."));
  }
  return stack;
}

bool AttnMask::row_fully_masked(std::size_t i) const {
  if (allowed.empty()) return false;
  for (std::size_t j = 0; j < n; ++j)
    if (allowed[i * n + j]) return false;
  return true;
}

Tensor WeightBinding::operator[](const Parameter* p) {
  auto it = cache_.find(p);
  if (it != cache_.end()) return it->second;
  Tensor t = tape_->leaf_view(p->shape, p->values.data());
  cache_.emplace(p, t);
  entries_.emplace_back(p, t);
  return t;
}

Tensor fuse(Tape& tape, FusionFn fn, const Tensor& x, const Tensor& e_i,
            const Tensor& w_fuse) {
  Tensor projected = tape.matmul(e_i, w_fuse);
  if (fn == FusionFn::kConcat) return tape.concat_last_dim(x, projected);
  return tape.add(x, projected);
}

namespace {

// Shared core of the vanilla and graph paths. key_flat/value_flat are either
// [n, H*d] (shared across queries) or [n*n, H*d] (per-query, row (i*n+j) is
// query i's key/value for object j).
Tensor multi_head_attention(WeightBinding& weights, const Tensor& x,
                            const Tensor& q_in, const Tensor& key_flat,
                            bool keys_per_query, const Tensor& value_flat,
                            bool values_per_query, const LayerWeights& layer,
                            const AttentionConfig& config, const AttnMask& mask,
                            AttnDebug* debug) {
  Tape& tape = weights.tape();
  const std::size_t n = x.shape()[0];
  if (!mask.allowed.empty() && mask.n != n) {
    throw std::invalid_argument("attention: mask size " +
                                std::to_string(mask.n) +
                                " does not match inputs " + std::to_string(n));
  }
  const std::size_t dk = config.head_dim_k();
  const std::size_t dv = config.head_dim_v();
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

  Tensor contexts;
  for (std::size_t h = 0; h < config.n_heads; ++h) {
    Tensor qh = tape.slice_cols(q_in, h * dk, (h + 1) * dk);
    Tensor logits;
    if (keys_per_query) {
      Tensor k3 = tape.reshape(
          tape.slice_cols(key_flat, h * dk, (h + 1) * dk), {n, n, dk});
      logits = tape.pairwise_dot(qh, k3);
    } else {
      Tensor kh = tape.slice_cols(key_flat, h * dk, (h + 1) * dk);
      logits = tape.matmul_nt(qh, kh);
    }
    Tensor probs =
        tape.masked_row_softmax(tape.scale(logits, inv_sqrt_dk), mask.allowed);
    if (debug) {
      auto v = probs.values();
      debug->head_probs.emplace_back(v.begin(), v.end());
    }
    Tensor ctx;
    if (values_per_query) {
      Tensor v3 = tape.reshape(
          tape.slice_cols(value_flat, h * dv, (h + 1) * dv), {n, n, dv});
      ctx = tape.rows_weighted_sum(probs, v3);
    } else {
      Tensor vh = tape.slice_cols(value_flat, h * dv, (h + 1) * dv);
      ctx = tape.matmul(probs, vh);
    }
    contexts = h == 0 ? ctx : tape.concat_last_dim(contexts, ctx);
  }

  Tensor out = tape.add_row_bias(tape.matmul(contexts, weights[layer.w_o]),
                                 weights[layer.b_o]);
  // Fully-masked queries are defined to output zeros.
  bool any_masked = false;
  std::vector<double> keep(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (mask.row_fully_masked(i)) {
      keep[i] = 0.0;
      any_masked = true;
    }
  }
  if (any_masked) out = tape.scale_rows(out, keep);
  return out;
}

}  // namespace

Tensor vanilla_attention(WeightBinding& weights, const Tensor& x,
                         const LayerWeights& layer,
                         const AttentionConfig& config, const AttnMask& mask,
                         AttnDebug* debug) {
  Tape& tape = weights.tape();
  Tensor q = tape.add_row_bias(tape.matmul(x, weights[layer.w_q]),
                               weights[layer.b_q]);
  Tensor k = tape.add_row_bias(tape.matmul(x, weights[layer.w_k]),
                               weights[layer.b_k]);
  Tensor v = tape.add_row_bias(tape.matmul(x, weights[layer.w_v]),
                               weights[layer.b_v]);
  return multi_head_attention(weights, x, q, k, false, v, false, layer, config,
                              mask, debug);
}

Tensor graph_attention(WeightBinding& weights, const Tensor& x,
                       const EdgeTensor& edges, const LayerWeights& layer,
                       const AttentionConfig& config, const AttnMask& mask,
                       AttnDebug* debug) {
  if (config.fusion_location == FusionLocation::kNone) {
    throw std::invalid_argument(
        "graph_attention: fusion_location must not be none");
  }
  const std::size_t n = x.shape()[0];
  if (edges.n_obj != n) {
    throw std::invalid_argument("graph_attention: edge tensor covers " +
                                std::to_string(edges.n_obj) +
                                " inputs, attention sees " + std::to_string(n));
  }
  if (edges.d_e != config.d_e) {
    throw std::invalid_argument("graph_attention: edge width " +
                                std::to_string(edges.d_e) +
                                " does not match config d_e " +
                                std::to_string(config.d_e));
  }
  Tape& tape = weights.tape();

  Tensor q = tape.add_row_bias(tape.matmul(x, weights[layer.w_q]),
                               weights[layer.b_q]);

  // phi(X, E_i) for all queries at once: row (i*n + j) is phi applied to
  // object j's features and edge e_ij. The tape owns a copy of the edge
  // values so backward never depends on the EdgeTensor's lifetime.
  Tensor e_flat = tape.leaf({n * n, edges.d_e}, edges.values);
  Tensor projected = tape.matmul(e_flat, weights[layer.w_fuse]);
  Tensor tiled = tape.reshape(tape.tile_rows(x, n), {n * n, config.d_in});
  Tensor fused = config.fusion_fn == FusionFn::kConcat
                     ? tape.concat_last_dim(tiled, projected)
                     : tape.add(tiled, projected);

  Tensor key_flat;
  bool keys_per_query = config.fuse_keys();
  if (keys_per_query) {
    key_flat = tape.add_row_bias(tape.matmul(fused, weights[layer.w_k]),
                                 weights[layer.b_k]);
  } else {
    key_flat = tape.add_row_bias(tape.matmul(x, weights[layer.w_k]),
                                 weights[layer.b_k]);
  }
  Tensor value_flat;
  bool values_per_query = config.fuse_values();
  if (values_per_query) {
    value_flat = tape.add_row_bias(tape.matmul(fused, weights[layer.w_v]),
                                   weights[layer.b_v]);
  } else {
    value_flat = tape.add_row_bias(tape.matmul(x, weights[layer.w_v]),
                                   weights[layer.b_v]);
  }
  return multi_head_attention(weights, x, q, key_flat, keys_per_query,
                              value_flat, values_per_query, layer, config,
                              mask, debug);
}

Tensor transformer_layer(WeightBinding& weights, const Tensor& x,
                         const EdgeTensor* edges, const LayerWeights& layer,
                         const AttentionConfig& config, const AttnMask& mask) {
  Tape& tape = weights.tape();
  Tensor attn =
      (edges != nullptr && config.fusion_location != FusionLocation::kNone)
          ? graph_attention(weights, x, *edges, layer, config, mask)
          : vanilla_attention(weights, x, layer, config, mask);
  Tensor h = tape.layer_norm(tape.add(x, attn), weights[layer.ln_attn_gain],
                             weights[layer.ln_attn_bias]);
  Tensor ffn_hidden = tape.gelu(tape.add_row_bias(
      tape.matmul(h, weights[layer.ffn_w1]), weights[layer.ffn_b1]));
  Tensor ffn_out = tape.add_row_bias(
      tape.matmul(ffn_hidden, weights[layer.ffn_w2]), weights[layer.ffn_b2]);
  return tape.layer_norm(tape.add(h, ffn_out), weights[layer.ln_ffn_gain],
                         weights[layer.ln_ffn_bias]);
}

Tensor encode_stack(WeightBinding& weights, const Tensor& x,
                    const EdgeTensor* edges, const StackWeights& stack,
                    const AttentionConfig& config, const AttnMask& mask) {
  if (stack.layers.size() < config.n_layers) {
    throw std::invalid_argument("encode_stack: " +
                                std::to_string(stack.layers.size()) +
                                " layer weights for " +
                                std::to_string(config.n_layers) + " layers");
  }
  Tensor h = x;
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    h = transformer_layer(weights, h, edges, stack.layers[i], config, mask);
  }
  return h;
}

}  // namespace grt
