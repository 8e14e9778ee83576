#include "grt/m4c_lite.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace grt {

namespace {

enum TypeRow : std::size_t {
  kTypeQuestion = 0,
  kTypeObject = 1,
  kTypeOcr = 2,
  kTypeAnswer = 3,
};

Tensor add_type_row(WeightBinding& weights, const Tensor& x,
                    const ModelWeights& model, std::size_t type_row) {
  Tape& tape = weights.tape();
  Tensor row = tape.reshape(
      tape.gather_rows(weights[model.type_embed], {type_row}),
      {x.shape()[1]});
  return tape.add_row_bias(x, row);
}

}  // namespace

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.tokens = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens.size(); ++i) v.index[v.tokens[i]] = i;
  return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return from_tokens(std::move(tokens));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary file: " + path);
  for (const std::string& t : tokens) out << t << "\n";
}

std::optional<std::size_t> Vocabulary::find(const std::string& token) const {
  auto it = index.find(token);
  if (it == index.end()) return std::nullopt;
  return it->second;
}

void AnswerSpace::validate() const {
  if (vocab == nullptr || vocab->size() == 0) {
    throw std::runtime_error("answer space: empty vocabulary");
  }
  if (vocab->token_at(kEosIndex) != kEosToken) {
    throw std::runtime_error(
        "answer space: vocabulary line 0 must be the end-of-answer token");
  }
}

ModelWeights make_model_weights(ParameterStore& store,
                                const AttentionConfig& config,
                                const M4CDims& dims,
                                std::size_t question_vocab,
                                std::size_t answer_vocab) {
  using Init = Parameter::Init;
  const std::size_t d = config.d_in;
  ModelWeights m;
  m.question_embed = store.create("embed.question", {question_vocab, d},
                                  Init::kEmbedding);
  m.answer_embed = store.create("embed.answer", {answer_vocab, d},
                                Init::kEmbedding);
  m.step_embed = store.create("embed.step", {dims.max_decode_steps, d},
                              Init::kEmbedding);
  m.type_embed = store.create("embed.type", {4, d}, Init::kEmbedding);

  m.visual.w1 = store.create("visual.w1", {dims.d_fr, d}, Init::kXavier);
  m.visual.w2 = store.create("visual.w2", {4, d}, Init::kXavier);
  m.visual.ln_fr_gain = store.create("visual.ln_fr.gain", {d}, Init::kOne);
  m.visual.ln_fr_bias = store.create("visual.ln_fr.bias", {d}, Init::kZero);
  m.visual.ln_box_gain = store.create("visual.ln_box.gain", {d}, Init::kOne);
  m.visual.ln_box_bias = store.create("visual.ln_box.bias", {d}, Init::kZero);

  m.ocr.w3 = store.create("ocr.w3", {dims.d_ft, d}, Init::kXavier);
  m.ocr.w4 = store.create("ocr.w4", {dims.d_fr, d}, Init::kXavier);
  m.ocr.w5 = store.create("ocr.w5", {dims.d_p, d}, Init::kXavier);
  m.ocr.w6 = store.create("ocr.w6", {4, d}, Init::kXavier);
  m.ocr.ln_feat_gain = store.create("ocr.ln_feat.gain", {d}, Init::kOne);
  m.ocr.ln_feat_bias = store.create("ocr.ln_feat.bias", {d}, Init::kZero);
  m.ocr.ln_box_gain = store.create("ocr.ln_box.gain", {d}, Init::kOne);
  m.ocr.ln_box_bias = store.create("ocr.ln_box.bias", {d}, Init::kZero);

  m.stack = make_stack_weights(store, config, "stack.");

  m.vocab_head_w = store.create("head.vocab_w", {d, answer_vocab}, Init::kXavier);
  m.vocab_head_b = store.create("head.vocab_b", {answer_vocab}, Init::kZero);
  m.ptr_w = store.create("head.ptr_w", {d, d}, Init::kXavier);
  m.ptr_b = store.create("head.ptr_b", {1}, Init::kZero);
  return m;
}

Tensor embed_visual(WeightBinding& weights, const Tensor& x_fr,
                    const Tensor& x_box, const VisualEmbedWeights& w) {
  Tape& tape = weights.tape();
  Tensor fr = tape.layer_norm(tape.matmul(x_fr, weights[w.w1]),
                              weights[w.ln_fr_gain], weights[w.ln_fr_bias]);
  Tensor box = tape.layer_norm(tape.matmul(x_box, weights[w.w2]),
                               weights[w.ln_box_gain], weights[w.ln_box_bias]);
  return tape.add(fr, box);
}

Tensor embed_ocr(WeightBinding& weights, const Tensor& x_ft,
                 const Tensor& x_fr, const Tensor& x_p, const Tensor& x_box,
                 const OcrEmbedWeights& w) {
  Tape& tape = weights.tape();
  Tensor feat = tape.add(
      tape.add(tape.matmul(x_ft, weights[w.w3]), tape.matmul(x_fr, weights[w.w4])),
      tape.matmul(x_p, weights[w.w5]));
  Tensor feat_ln = tape.layer_norm(feat, weights[w.ln_feat_gain],
                                   weights[w.ln_feat_bias]);
  Tensor box = tape.layer_norm(tape.matmul(x_box, weights[w.w6]),
                               weights[w.ln_box_gain], weights[w.ln_box_bias]);
  return tape.add(feat_ln, box);
}

AttnMask m4c_attention_mask(std::size_t n_context, std::size_t n_decode) {
  const std::size_t n = n_context + n_decode;
  AttnMask mask;
  mask.n = n;
  mask.allowed.assign(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n_context; ++j) mask.allowed[i * n + j] = 1;
    if (i >= n_context) {
      for (std::size_t j = n_context; j <= i; ++j) mask.allowed[i * n + j] = 1;
    }
  }
  return mask;
}

EdgeTensor pad_edges_for_decode(const EdgeTensor& core, std::size_t n_total) {
  if (n_total < core.n_obj) {
    throw std::invalid_argument("pad_edges_for_decode: cannot shrink");
  }
  EdgeTensor padded;
  padded.n_obj = n_total;
  padded.d_e = core.d_e;
  padded.mask = core.mask;
  padded.values.assign(n_total * n_total * core.d_e, 0.0);
  for (std::size_t i = 0; i < core.n_obj; ++i) {
    std::copy_n(core.values.data() + i * core.n_obj * core.d_e,
                core.n_obj * core.d_e,
                padded.values.data() + i * n_total * core.d_e);
  }
  return padded;
}

ForwardResult m4c_forward(WeightBinding& weights, const SceneFeatures& scene,
                          const ModelWeights& model,
                          const AttentionConfig& config, const M4CDims& dims,
                          const std::vector<PrevToken>& prev_tokens) {
  scene.answer_space.validate();
  if (prev_tokens.empty()) {
    throw std::invalid_argument("m4c_forward: need at least one decoder slot");
  }
  if (prev_tokens.size() > dims.max_decode_steps) {
    throw std::invalid_argument("m4c_forward: more decoder slots than the "
                                "decode cap");
  }
  Tape& tape = weights.tape();
  const std::size_t n_q = scene.question_ids.size();
  const std::size_t n_obj = scene.n_obj;
  const std::size_t n_ocr = scene.n_ocr;
  const std::size_t n_dec = prev_tokens.size();
  const std::size_t n_ctx = n_q + n_obj + n_ocr;
  const std::size_t n = n_ctx + n_dec;

  Tensor q_rows = add_type_row(
      weights,
      tape.gather_rows(weights[model.question_embed], scene.question_ids),
      model, kTypeQuestion);

  Tensor obj_rows = add_type_row(
      weights,
      embed_visual(weights, tape.leaf_view({n_obj, dims.d_fr}, scene.obj_fr.data()),
                   tape.leaf_view({n_obj, 4}, scene.obj_box.data()),
                   model.visual),
      model, kTypeObject);

  Tensor ocr_embeds = embed_ocr(
      weights, tape.leaf_view({n_ocr, dims.d_ft}, scene.ocr_ft.data()),
      tape.leaf_view({n_ocr, dims.d_fr}, scene.ocr_fr.data()),
      tape.leaf_view({n_ocr, dims.d_p}, scene.ocr_p.data()),
      tape.leaf_view({n_ocr, 4}, scene.ocr_box.data()), model.ocr);
  Tensor ocr_rows = add_type_row(weights, ocr_embeds, model, kTypeOcr);

  // Decoder slot t consumes the embedding of its previous token: the answer
  // vocabulary row, or the OCR token's input embedding for copies.
  std::vector<Tensor> dec_parts;
  const std::size_t begin_index =
      scene.answer_space.vocab->find(kBeginToken).value_or(kEosIndex);
  for (const PrevToken& prev : prev_tokens) {
    switch (prev.kind) {
      case PrevToken::Kind::kBegin:
        dec_parts.push_back(
            tape.gather_rows(weights[model.answer_embed], {begin_index}));
        break;
      case PrevToken::Kind::kVocab:
        dec_parts.push_back(
            tape.gather_rows(weights[model.answer_embed], {prev.index}));
        break;
      case PrevToken::Kind::kOcr:
        if (prev.index >= n_ocr) {
          throw std::invalid_argument("m4c_forward: ocr copy out of range");
        }
        dec_parts.push_back(tape.slice_rows(ocr_embeds, prev.index,
                                            prev.index + 1));
        break;
    }
  }
  std::vector<std::size_t> step_ids(n_dec);
  for (std::size_t t = 0; t < n_dec; ++t) step_ids[t] = t;
  Tensor dec_rows =
      tape.add(tape.vstack(dec_parts),
               tape.gather_rows(weights[model.step_embed], step_ids));
  dec_rows = add_type_row(weights, dec_rows, model, kTypeAnswer);

  Tensor x = tape.vstack({q_rows, obj_rows, ocr_rows, dec_rows});

  ForwardResult result;
  EdgeTensor padded_edges;  // graph_attention copies values onto the tape
  const EdgeTensor* edges = nullptr;
  if (scene.core_edges != nullptr &&
      config.fusion_location != FusionLocation::kNone) {
    padded_edges = pad_edges_for_decode(*scene.core_edges, n);
    edges = &padded_edges;
  }

  AttnMask mask = m4c_attention_mask(n_ctx, n_dec);
  result.encoder_out =
      encode_stack(weights, x, edges, model.stack, config, mask);

  result.ocr_row_begin = n_q + n_obj;
  Tensor ocr_out = tape.slice_rows(result.encoder_out, result.ocr_row_begin,
                                   result.ocr_row_begin + n_ocr);
  Tensor dec_out = tape.slice_rows(result.encoder_out, n_ctx, n);

  Tensor vocab_scores =
      tape.add_row_bias(tape.matmul(dec_out, weights[model.vocab_head_w]),
                        weights[model.vocab_head_b]);
  Tensor ptr_scores = tape.add_scalar(
      tape.matmul_nt(tape.matmul(dec_out, weights[model.ptr_w]), ocr_out),
      weights[model.ptr_b]);
  result.scores = tape.concat_last_dim(vocab_scores, ptr_scores);
  result.probs = tape.sigmoid(result.scores);
  return result;
}

std::string DecodeResult::answer_string() const {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i].token;
  }
  return s;
}

DecodeResult decode_greedy(const SceneFeatures& scene,
                           const ModelWeights& model,
                           const AttentionConfig& config, const M4CDims& dims) {
  scene.answer_space.validate();
  const Vocabulary& vocab = *scene.answer_space.vocab;
  const std::optional<std::size_t> begin_index = vocab.find(kBeginToken);

  DecodeResult result;
  std::vector<PrevToken> prev{{PrevToken::Kind::kBegin, 0}};
  for (std::size_t step = 0; step < dims.max_decode_steps; ++step) {
    Tape tape;
    WeightBinding weights(tape);
    ForwardResult fwd =
        m4c_forward(weights, scene, model, config, dims, prev);
    std::span<const double> scores = fwd.scores.values();
    const std::size_t n_cand = scene.answer_space.n_candidates();
    const double* row = scores.data() + step * n_cand;
    result.step_scores.emplace_back(row, row + n_cand);

    std::size_t best = 0;
    double best_score = -HUGE_VAL;
    for (std::size_t c = 0; c < n_cand; ++c) {
      if (begin_index && c == *begin_index) continue;  // never emitted
      if (row[c] > best_score) {
        best_score = row[c];
        best = c;
      }
    }
    if (best == kEosIndex) break;
    DecodedToken token;
    if (scene.answer_space.is_vocab(best)) {
      token.token = vocab.token_at(best);
      prev.push_back({PrevToken::Kind::kVocab, best});
    } else {
      token.from_ocr = true;
      token.ocr_position = scene.answer_space.ocr_position(best);
      token.token = scene.answer_space.ocr_tokens[token.ocr_position];
      prev.push_back({PrevToken::Kind::kOcr, token.ocr_position});
    }
    result.tokens.push_back(std::move(token));
  }
  return result;
}

}  // namespace grt
