#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "grt/edge_features.hpp"
#include "grt/rng.hpp"
#include "grt/tensor.hpp"

namespace grt {

enum class FusionLocation { kNone, kKeys, kValues, kKeysAndValues };
enum class FusionFn { kConcat, kAdd };

std::string to_string(FusionLocation loc);
std::string to_string(FusionFn fn);
FusionLocation fusion_location_from_string(const std::string& s);
FusionFn fusion_fn_from_string(const std::string& s);

struct AttentionConfig {
  std::size_t d_in = 48;
  std::size_t n_heads = 12;
  std::size_t n_layers = 4;
  std::size_t d_k = 0;        // per-head key width; 0 derives d_in / n_heads
  std::size_t d_v = 0;        // per-head value width; 0 derives d_in / n_heads
  std::size_t ffn_width = 0;  // 0 derives 4 * d_in
  FusionLocation fusion_location = FusionLocation::kNone;
  FusionFn fusion_fn = FusionFn::kAdd;
  std::size_t d_e = 12;
  std::size_t d_e_prime = 32;  // intermediate edge projection (concat only)

  std::size_t head_dim_k() const { return d_k ? d_k : d_in / n_heads; }
  std::size_t head_dim_v() const { return d_v ? d_v : d_in / n_heads; }
  std::size_t ffn() const { return ffn_width ? ffn_width : 4 * d_in; }
  bool fuse_keys() const {
    return fusion_location == FusionLocation::kKeys ||
           fusion_location == FusionLocation::kKeysAndValues;
  }
  bool fuse_values() const {
    return fusion_location == FusionLocation::kValues ||
           fusion_location == FusionLocation::kKeysAndValues;
  }
  // Width of phi(X, E_i): d_in + d_e_prime under concat, d_in under add.
  std::size_t fused_width() const {
    return fusion_fn == FusionFn::kConcat ? d_in + d_e_prime : d_in;
  }
  void validate() const;
};

// Named, trainable dense array. Values are stable between optimizer steps;
// forward passes view them without copying.
struct Parameter {
  enum class Init { kZero, kOne, kXavier, kEmbedding };

  std::string name;
  Shape shape;
  Init init = Init::kZero;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
};

class ParameterStore {
 public:
  Parameter* create(const std::string& name, Shape shape,
                    Parameter::Init init);
  Parameter* find(const std::string& name) const;
  const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }
  std::size_t total_size() const;
  // Flat offset of each parameter in creation order.
  std::size_t offset_of(const Parameter* p) const;

  // Fills every parameter according to its Init kind, in creation order.
  void initialize(Rng& rng);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

struct LayerWeights {
  Parameter* w_q = nullptr;
  Parameter* b_q = nullptr;
  Parameter* w_k = nullptr;
  Parameter* b_k = nullptr;
  Parameter* w_v = nullptr;
  Parameter* b_v = nullptr;
  Parameter* w_o = nullptr;
  Parameter* b_o = nullptr;
  Parameter* ln_attn_gain = nullptr;
  Parameter* ln_attn_bias = nullptr;
  Parameter* ln_ffn_gain = nullptr;
  Parameter* ln_ffn_bias = nullptr;
  Parameter* ffn_w1 = nullptr;
  Parameter* ffn_b1 = nullptr;
  Parameter* ffn_w2 = nullptr;
  Parameter* ffn_b2 = nullptr;
  // W_c (concat) or W_a (add); owned per layer, null when fusion is off.
  Parameter* w_fuse = nullptr;
};

struct StackWeights {
  std::vector<LayerWeights> layers;
};

LayerWeights make_layer_weights(ParameterStore& store,
                                const AttentionConfig& config,
                                const std::string& prefix);
StackWeights make_stack_weights(ParameterStore& store,
                                const AttentionConfig& config,
                                const std::string& prefix);

// Boolean n x n attention mask; allowed[i*n+j] == 1 lets query i attend to j.
struct AttnMask {
  std::size_t n = 0;
  std::vector<std::uint8_t> allowed;

  static AttnMask full(std::size_t n) {
    return {n, std::vector<std::uint8_t>(n * n, 1)};
  }
  bool row_fully_masked(std::size_t i) const;
};

// Optional capture of per-head attention probabilities for inspection.
struct AttnDebug {
  std::vector<std::vector<double>> head_probs;  // n x n row-major per head
};

// Binds parameters to leaf views on one tape, each parameter at most once.
class WeightBinding {
 public:
  explicit WeightBinding(Tape& tape) : tape_(&tape) {}

  Tape& tape() { return *tape_; }
  Tensor operator[](const Parameter* p);
  const std::vector<std::pair<const Parameter*, Tensor>>& entries() const {
    return entries_;
  }

 private:
  Tape* tape_;
  std::unordered_map<const Parameter*, Tensor> cache_;
  std::vector<std::pair<const Parameter*, Tensor>> entries_;
};

// phi(X, E_i): concat fuses [X ; E_i W_c], add fuses X + E_i W_a.
Tensor fuse(Tape& tape, FusionFn fn, const Tensor& x, const Tensor& e_i,
            const Tensor& w_fuse);

// Multi-head self-attention, heads concatenated then output-projected.
// Fully-masked query rows produce zero output rows.
Tensor vanilla_attention(WeightBinding& weights, const Tensor& x,
                         const LayerWeights& layer,
                         const AttentionConfig& config, const AttnMask& mask,
                         AttnDebug* debug = nullptr);

// Graph relation self-attention: per-query keys and/or values come from
// phi(X, E_i) projected with the shared W_k / W_v of the layer.
Tensor graph_attention(WeightBinding& weights, const Tensor& x,
                       const EdgeTensor& edges, const LayerWeights& layer,
                       const AttentionConfig& config, const AttnMask& mask,
                       AttnDebug* debug = nullptr);

// Post-norm residual block: LN(x + Attn(x)), then LN(h + FFN(h)).
Tensor transformer_layer(WeightBinding& weights, const Tensor& x,
                         const EdgeTensor* edges, const LayerWeights& layer,
                         const AttentionConfig& config, const AttnMask& mask);

// Applies config.n_layers transformer layers; the same edge tensor feeds
// every layer, each layer applying its own fusion projection.
Tensor encode_stack(WeightBinding& weights, const Tensor& x,
                    const EdgeTensor* edges, const StackWeights& stack,
                    const AttentionConfig& config, const AttnMask& mask);

}  // namespace grt
