#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "grt/attention.hpp"
#include "grt/edge_features.hpp"
#include "grt/tensor.hpp"

namespace grt {

inline constexpr const char* kEosToken = "<eos>";
inline constexpr const char* kBeginToken = "<begin>";
inline constexpr std::size_t kEosIndex = 0;

// Token list; line number = index. Answer vocabularies reserve line 0 for
// the end-of-answer token.
struct Vocabulary {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, std::size_t> index;

  static Vocabulary from_tokens(std::vector<std::string> tokens);
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  std::size_t size() const { return tokens.size(); }
  std::optional<std::size_t> find(const std::string& token) const;
  const std::string& token_at(std::size_t i) const { return tokens[i]; }
};

// Candidate space of one instance: the fixed vocabulary followed by the
// instance's OCR tokens, indexed by position.
struct AnswerSpace {
  const Vocabulary* vocab = nullptr;
  std::vector<std::string> ocr_tokens;

  std::size_t n_candidates() const {
    return vocab->size() + ocr_tokens.size();
  }
  bool is_vocab(std::size_t candidate) const {
    return candidate < vocab->size();
  }
  std::size_t ocr_position(std::size_t candidate) const {
    return candidate - vocab->size();
  }
  const std::string& candidate_text(std::size_t candidate) const {
    return is_vocab(candidate) ? vocab->token_at(candidate)
                               : ocr_tokens[ocr_position(candidate)];
  }
  void validate() const;
};

// Synthetic stand-in feature widths for the OCR/object extractors.
struct M4CDims {
  std::size_t d_ft = 32;  // word vector
  std::size_t d_fr = 64;  // detection appearance
  std::size_t d_p = 16;   // character-pattern vector
  std::size_t max_decode_steps = 12;
};

struct VisualEmbedWeights {
  Parameter* w1 = nullptr;  // [d_fr, d_in]
  Parameter* w2 = nullptr;  // [4, d_in]
  Parameter* ln_fr_gain = nullptr;
  Parameter* ln_fr_bias = nullptr;
  Parameter* ln_box_gain = nullptr;
  Parameter* ln_box_bias = nullptr;
};

struct OcrEmbedWeights {
  Parameter* w3 = nullptr;  // [d_ft, d_in]
  Parameter* w4 = nullptr;  // [d_fr, d_in]
  Parameter* w5 = nullptr;  // [d_p, d_in]
  Parameter* w6 = nullptr;  // [4, d_in]
  Parameter* ln_feat_gain = nullptr;
  Parameter* ln_feat_bias = nullptr;
  Parameter* ln_box_gain = nullptr;
  Parameter* ln_box_bias = nullptr;
};

struct ModelWeights {
  Parameter* question_embed = nullptr;  // [question vocab, d_in]
  Parameter* answer_embed = nullptr;    // [answer vocab, d_in]
  Parameter* step_embed = nullptr;      // [max_decode_steps, d_in]
  Parameter* type_embed = nullptr;      // [4, d_in] question/object/ocr/answer
  VisualEmbedWeights visual;
  OcrEmbedWeights ocr;
  StackWeights stack;
  Parameter* vocab_head_w = nullptr;  // [d_in, answer vocab]
  Parameter* vocab_head_b = nullptr;
  Parameter* ptr_w = nullptr;  // [d_in, d_in] bilinear pointer form
  Parameter* ptr_b = nullptr;  // [1]
};

ModelWeights make_model_weights(ParameterStore& store,
                                const AttentionConfig& config,
                                const M4CDims& dims,
                                std::size_t question_vocab,
                                std::size_t answer_vocab);

// LN(x_fr W_1) + LN(x_b W_2), one object per row.
Tensor embed_visual(WeightBinding& weights, const Tensor& x_fr,
                    const Tensor& x_box, const VisualEmbedWeights& w);

// LN(x_ft W_3 + x_fr W_4 + x_p W_5) + LN(x_b W_6), one token per row.
Tensor embed_ocr(WeightBinding& weights, const Tensor& x_ft,
                 const Tensor& x_fr, const Tensor& x_p, const Tensor& x_box,
                 const OcrEmbedWeights& w);

// Everything one instance feeds the transformer.
struct SceneFeatures {
  std::vector<std::size_t> question_ids;
  std::size_t n_obj = 0;
  std::size_t n_ocr = 0;
  std::vector<double> obj_fr;   // [n_obj, d_fr]
  std::vector<double> obj_box;  // [n_obj, 4]
  std::vector<double> ocr_ft;   // [n_ocr, d_ft]
  std::vector<double> ocr_fr;   // [n_ocr, d_fr]
  std::vector<double> ocr_p;    // [n_ocr, d_p]
  std::vector<double> ocr_box;  // [n_ocr, 4]
  AnswerSpace answer_space;
  // Edge features over [question, objects, ocr] inputs; null for the
  // vanilla model. Decode rows are padded with zeros at forward time.
  const EdgeTensor* core_edges = nullptr;

  std::size_t n_context() const {
    return question_ids.size() + n_obj + n_ocr;
  }
};

// Previous-token reference consumed by a decoder slot.
struct PrevToken {
  enum class Kind { kBegin, kVocab, kOcr };
  Kind kind = Kind::kBegin;
  std::size_t index = 0;  // vocab index or ocr position
};

// Context rows attend over context only; decoder slot t additionally sees
// slots <= t.
AttnMask m4c_attention_mask(std::size_t n_context, std::size_t n_decode);

// Zero-pads an edge tensor on the right/bottom for appended decode slots.
EdgeTensor pad_edges_for_decode(const EdgeTensor& core, std::size_t n_total);

struct ForwardResult {
  Tensor encoder_out;  // [n, d_in]
  Tensor scores;       // [n_decode, n_candidates]
  Tensor probs;        // sigmoid(scores)
  std::size_t ocr_row_begin = 0;
};

// Runs embedding, the encoder stack, and both score heads with the given
// decoder inputs (prev_tokens[0] is normally kBegin).
ForwardResult m4c_forward(WeightBinding& weights, const SceneFeatures& scene,
                          const ModelWeights& model,
                          const AttentionConfig& config, const M4CDims& dims,
                          const std::vector<PrevToken>& prev_tokens);

struct DecodedToken {
  std::string token;
  bool from_ocr = false;
  std::size_t ocr_position = 0;
};

struct DecodeResult {
  std::vector<DecodedToken> tokens;                // end-of-answer excluded
  std::vector<std::vector<double>> step_scores;    // all executed steps
  std::string answer_string() const;
};

// Greedy argmax decoding, at most dims.max_decode_steps steps, halting at
// the end-of-answer token. The begin token is never emitted.
DecodeResult decode_greedy(const SceneFeatures& scene,
                           const ModelWeights& model,
                           const AttentionConfig& config, const M4CDims& dims);

}  // namespace grt
