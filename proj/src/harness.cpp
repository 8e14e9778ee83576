#include "grt/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "grt/checkpoint.hpp"
#include "grt/rng.hpp"

#ifndef GRT_SOURCE_REVISION
#define GRT_SOURCE_REVISION "unknown"
#endif

namespace grt {

namespace {

namespace fs = std::filesystem;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::runtime_error("config: expected a boolean, got '" + v + "'");
}

void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const std::size_t workers = std::min(threads, count);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

std::size_t resolve_threads(std::size_t configured) {
  if (configured != 0) return configured;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

}  // namespace

std::string source_revision() { return GRT_SOURCE_REVISION; }

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  ExperimentConfig config;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config: line " + std::to_string(line_no) +
                               " of " + path + " is not key=value");
    }
    auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    config.apply_override(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
  }
  return config;
}

void ExperimentConfig::apply_override(const std::string& key,
                                      const std::string& value) {
  auto to_size = [&](const std::string& v) -> std::size_t {
    return static_cast<std::size_t>(std::stoull(v));
  };
  if (key == "seed") seed = std::stoull(value);
  else if (key == "data_dir") data_dir = value;
  else if (key == "out_dir") out_dir = value;
  else if (key == "eval_every") eval_every = to_size(value);
  else if (key == "threads") threads = to_size(value);
  else if (key == "d_in") attn.d_in = to_size(value);
  else if (key == "n_heads") attn.n_heads = to_size(value);
  else if (key == "n_layers") attn.n_layers = to_size(value);
  else if (key == "d_k") attn.d_k = to_size(value);
  else if (key == "d_v") attn.d_v = to_size(value);
  else if (key == "ffn_width") attn.ffn_width = to_size(value);
  else if (key == "fusion_location") attn.fusion_location = fusion_location_from_string(value);
  else if (key == "fusion_fn") attn.fusion_fn = fusion_fn_from_string(value);
  else if (key == "d_e_prime") attn.d_e_prime = to_size(value);
  else if (key == "edge_appearance") feature_mask.appearance = parse_bool(value);
  else if (key == "edge_translation") feature_mask.translation = parse_bool(value);
  else if (key == "edge_interaction") feature_mask.interaction = parse_bool(value);
  else if (key == "edge_modality_pair") feature_mask.modality_pair = parse_bool(value);
  else if (key == "translation_norm") {
    if (value == "image") translation_norm = TranslationNorm::kImageFrame;
    else if (value == "object") translation_norm = TranslationNorm::kObjectSize;
    else throw std::runtime_error("config: unknown translation_norm '" + value + "'");
  }
  else if (key == "d_ft") dims.d_ft = to_size(value);
  else if (key == "d_fr") dims.d_fr = to_size(value);
  else if (key == "d_p") dims.d_p = to_size(value);
  else if (key == "max_decode_steps") dims.max_decode_steps = to_size(value);
  else if (key == "lr") opt.lr = std::stod(value);
  else if (key == "beta1") opt.beta1 = std::stod(value);
  else if (key == "beta2") opt.beta2 = std::stod(value);
  else if (key == "adam_eps") opt.eps = std::stod(value);
  else if (key == "batch_size") opt.batch_size = to_size(value);
  else if (key == "max_updates") opt.max_updates = to_size(value);
  else if (key == "warmup_frac") opt.warmup_frac = std::stod(value);
  else if (key == "decay1_frac") opt.decay1_frac = std::stod(value);
  else if (key == "decay2_frac") opt.decay2_frac = std::stod(value);
  else if (key == "decay_factor") opt.decay_factor = std::stod(value);
  else throw std::runtime_error("config: unknown key '" + key + "'");
}

std::map<std::string, std::string> ExperimentConfig::to_map() const {
  std::map<std::string, std::string> m;
  m["seed"] = std::to_string(seed);
  m["data_dir"] = data_dir;
  m["out_dir"] = out_dir;
  m["eval_every"] = std::to_string(eval_every);
  m["d_in"] = std::to_string(attn.d_in);
  m["n_heads"] = std::to_string(attn.n_heads);
  m["n_layers"] = std::to_string(attn.n_layers);
  m["d_k"] = std::to_string(attn.head_dim_k());
  m["d_v"] = std::to_string(attn.head_dim_v());
  m["ffn_width"] = std::to_string(attn.ffn());
  m["fusion_location"] = to_string(attn.fusion_location);
  m["fusion_fn"] = to_string(attn.fusion_fn);
  m["d_e"] = std::to_string(feature_mask.d_e());
  m["d_e_prime"] = std::to_string(attn.d_e_prime);
  m["edge_appearance"] = feature_mask.appearance ? "true" : "false";
  m["edge_translation"] = feature_mask.translation ? "true" : "false";
  m["edge_interaction"] = feature_mask.interaction ? "true" : "false";
  m["edge_modality_pair"] = feature_mask.modality_pair ? "true" : "false";
  m["translation_norm"] =
      translation_norm == TranslationNorm::kImageFrame ? "image" : "object";
  m["d_ft"] = std::to_string(dims.d_ft);
  m["d_fr"] = std::to_string(dims.d_fr);
  m["d_p"] = std::to_string(dims.d_p);
  m["max_decode_steps"] = std::to_string(dims.max_decode_steps);
  m["lr"] = format_double(opt.lr);
  m["beta1"] = format_double(opt.beta1);
  m["beta2"] = format_double(opt.beta2);
  m["adam_eps"] = format_double(opt.eps);
  m["batch_size"] = std::to_string(opt.batch_size);
  m["max_updates"] = std::to_string(opt.max_updates);
  m["warmup_frac"] = format_double(opt.warmup_frac);
  m["decay1_frac"] = format_double(opt.decay1_frac);
  m["decay2_frac"] = format_double(opt.decay2_frac);
  m["decay_factor"] = format_double(opt.decay_factor);
  return m;
}

std::string ExperimentConfig::hash() const {
  std::string canonical;
  for (const auto& [key, value] : to_map()) {
    if (key == "out_dir") continue;  // location does not change the run
    canonical += key;
    canonical += '=';
    canonical += value;
    canonical += '\n';
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(canonical)));
  return buf;
}

std::string ExperimentConfig::resolved_out_dir() const {
  const char* root = std::getenv("GRT_OUT_ROOT");
  fs::path out(out_dir);
  if (root != nullptr && out.is_relative()) return (fs::path(root) / out).string();
  return out.string();
}

void ExperimentConfig::validate() const {
  attn.validate();
  if (opt.max_updates < 1) throw std::runtime_error("config: max_updates must be >= 1");
  if (opt.batch_size < 1) throw std::runtime_error("config: batch_size must be >= 1");
  if (data_dir.empty()) throw std::runtime_error("config: data_dir not set");
  for (const char* file : {"train.json", "val.json", "question_vocab.txt",
                           "answer_vocab.txt"}) {
    const fs::path p = fs::path(data_dir) / file;
    if (!fs::exists(p)) {
      throw std::runtime_error("config: missing data file " + p.string());
    }
  }
}

Dataset Dataset::load(const std::string& data_dir) {
  Dataset dataset;
  dataset.question_vocab =
      Vocabulary::load((fs::path(data_dir) / "question_vocab.txt").string());
  dataset.answer_vocab =
      Vocabulary::load((fs::path(data_dir) / "answer_vocab.txt").string());
  dataset.train_scenes =
      load_split_file((fs::path(data_dir) / "train.json").string());
  dataset.val_scenes =
      load_split_file((fs::path(data_dir) / "val.json").string());
  return dataset;
}

namespace {

PreparedInstance prepare_instance(const SceneInstance& scene,
                                  const Vocabulary& question_vocab,
                                  const Vocabulary& answer_vocab,
                                  const ExperimentConfig& config,
                                  bool build_edges) {
  PreparedInstance inst;
  inst.scene = &scene;
  SceneFeatures& f = inst.features;
  for (const auto& word : scene.question) {
    const auto id = question_vocab.find(word);
    if (!id) {
      throw std::runtime_error("scene " + scene.id +
                               ": question word not in vocabulary: " + word);
    }
    f.question_ids.push_back(*id);
  }
  f.n_obj = scene.objects.size();
  f.n_ocr = scene.ocr.size();
  const M4CDims& dims = config.dims;
  for (const auto& obj : scene.objects) {
    if (obj.appearance.size() != dims.d_fr) {
      throw std::runtime_error("scene " + scene.id +
                               ": object feature width does not match d_fr");
    }
    f.obj_fr.insert(f.obj_fr.end(), obj.appearance.begin(), obj.appearance.end());
    f.obj_box.insert(f.obj_box.end(), {obj.box.x_min, obj.box.y_min,
                                       obj.box.x_max, obj.box.y_max});
  }
  for (const auto& token : scene.ocr) {
    if (token.word_vec.size() != dims.d_ft ||
        token.appearance_vec.size() != dims.d_fr ||
        token.char_vec.size() != dims.d_p) {
      throw std::runtime_error("scene " + scene.id +
                               ": ocr feature width does not match config");
    }
    f.ocr_ft.insert(f.ocr_ft.end(), token.word_vec.begin(), token.word_vec.end());
    f.ocr_fr.insert(f.ocr_fr.end(), token.appearance_vec.begin(),
                    token.appearance_vec.end());
    f.ocr_p.insert(f.ocr_p.end(), token.char_vec.begin(), token.char_vec.end());
    f.ocr_box.insert(f.ocr_box.end(), {token.box.x_min, token.box.y_min,
                                       token.box.x_max, token.box.y_max});
    f.answer_space.ocr_tokens.push_back(token.text);
  }
  f.answer_space.vocab = &answer_vocab;

  if (build_edges) {
    std::vector<EdgeInput> inputs;
    inputs.resize(scene.question.size());  // question rows: zero edges
    for (const auto& obj : scene.objects) {
      EdgeInput in;
      in.modality = Modality::kVisualObject;
      in.box = obj.box;
      in.embedding = obj.appearance;
      inputs.push_back(std::move(in));
    }
    for (const auto& token : scene.ocr) {
      EdgeInput in;
      in.modality = Modality::kOcrToken;
      in.box = token.box;
      in.embedding = token.appearance_vec;
      inputs.push_back(std::move(in));
    }
    inst.edges = build_edge_tensor(inputs, config.feature_mask,
                                   config.translation_norm);
    f.core_edges = &inst.edges;
  }

  auto targets = build_targets(scene.gt_tokens, f.answer_space);
  if (!targets) {
    throw std::runtime_error("scene " + scene.id +
                             ": ground-truth token not representable");
  }
  inst.targets = std::move(*targets);

  inst.teacher_inputs.push_back({PrevToken::Kind::kBegin, 0});
  for (const auto& token : scene.gt_tokens) {
    // prefer the copy path; it is what greedy decoding feeds back
    bool found = false;
    for (std::size_t p = 0; p < f.answer_space.ocr_tokens.size(); ++p) {
      if (f.answer_space.ocr_tokens[p] == token) {
        inst.teacher_inputs.push_back({PrevToken::Kind::kOcr, p});
        found = true;
        break;
      }
    }
    if (!found) {
      inst.teacher_inputs.push_back(
          {PrevToken::Kind::kVocab, *answer_vocab.find(token)});
    }
  }
  inst.humans = AnswerSet::from(scene.answers);
  return inst;
}

}  // namespace

void Dataset::prepare(const ExperimentConfig& config) {
  const bool build_edges =
      config.attn.fusion_location != FusionLocation::kNone;
  train.clear();
  val.clear();
  std::string skipped;
  for (const auto& scene : train_scenes) {
    train.push_back(prepare_instance(scene, question_vocab, answer_vocab,
                                     config, build_edges));
  }
  for (const auto& scene : val_scenes) {
    val.push_back(prepare_instance(scene, question_vocab, answer_vocab, config,
                                   build_edges));
  }
  // fixups invalidated by vector reallocation
  for (auto& inst : train) {
    if (build_edges) inst.features.core_edges = &inst.edges;
  }
  for (auto& inst : val) {
    if (build_edges) inst.features.core_edges = &inst.edges;
  }
}

void build_model(Model& model, const ExperimentConfig& config,
                 std::size_t question_vocab, std::size_t answer_vocab) {
  model.attn = config.attn;
  model.attn.d_e = config.feature_mask.d_e();
  model.dims = config.dims;
  model.attn.validate();
  model.weights = make_model_weights(model.store, model.attn, model.dims,
                                     question_vocab, answer_vocab);
  Rng rng(Rng::mix_seed(config.seed, 0x1417));
  model.store.initialize(rng);
}

EvalOutcome evaluate(const Model& model,
                     const std::vector<PreparedInstance>& split,
                     std::size_t threads) {
  EvalOutcome outcome;
  outcome.records.resize(split.size());
  parallel_for(split.size(), resolve_threads(threads), [&](std::size_t i) {
    const PreparedInstance& inst = split[i];
    DecodeResult decoded =
        decode_greedy(inst.features, model.weights, model.attn, model.dims);
    EvalRecord& record = outcome.records[i];
    record.scene_id = inst.scene->id;
    record.question = join_tokens(inst.scene->question);
    record.gt_answer = join_tokens(inst.scene->gt_tokens);
    record.predicted = decoded.answer_string();
    for (const auto& token : decoded.tokens) {
      record.token_sources.push_back(
          token.from_ocr ? "ocr:" + std::to_string(token.ocr_position)
                         : "vocab");
    }
    record.accuracy = vqa_accuracy(record.predicted, inst.humans);
  });
  double total = 0.0;
  for (const auto& record : outcome.records) total += record.accuracy;
  outcome.mean_accuracy =
      split.empty() ? 0.0 : total / static_cast<double>(split.size());
  return outcome;
}

double oracle_accuracy(const std::vector<PreparedInstance>& split) {
  double total = 0.0;
  for (const auto& inst : split) {
    total += vqa_accuracy(scene_answer_oracle(*inst.scene), inst.humans);
  }
  return split.empty() ? 0.0 : total / static_cast<double>(split.size());
}

namespace {

double learning_rate(const OptimizerParams& opt, std::size_t update) {
  const double max_updates = static_cast<double>(opt.max_updates);
  const std::size_t warmup = static_cast<std::size_t>(
      std::ceil(opt.warmup_frac * max_updates));
  double lr = opt.lr;
  if (warmup > 0 && update <= warmup) {
    lr *= static_cast<double>(update) / static_cast<double>(warmup);
  }
  if (update > static_cast<std::size_t>(opt.decay1_frac * max_updates)) {
    lr *= opt.decay_factor;
  }
  if (update > static_cast<std::size_t>(opt.decay2_frac * max_updates)) {
    lr *= opt.decay_factor;
  }
  return lr;
}

void write_nan_dump(const std::string& dir, std::size_t update,
                    const std::vector<std::size_t>& batch,
                    const std::vector<double>& losses,
                    const std::vector<PreparedInstance>& train) {
  nlohmann::ordered_json dump;
  dump["update"] = update;
  dump["batch"] = nlohmann::ordered_json::array();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    nlohmann::ordered_json item;
    item["scene_id"] = train[batch[b]].scene->id;
    item["loss"] = losses[b];
    dump["batch"].push_back(std::move(item));
  }
  std::ofstream out(fs::path(dir) / "nan_dump.json");
  out << dump.dump(2);
}

}  // namespace

RunReport train(const ExperimentConfig& config, Dataset& dataset) {
  const auto start = std::chrono::steady_clock::now();
  config.attn.validate();
  if (dataset.train.empty()) {
    throw std::runtime_error("train: dataset has no prepared instances");
  }
  const std::string out_dir = config.resolved_out_dir();
  fs::create_directories(out_dir);

  Model model;
  build_model(model, config, dataset.question_vocab.size(),
              dataset.answer_vocab.size());

  // flat Adam state over all parameters in creation order
  const std::size_t n_params = model.store.total_size();
  std::vector<double> m_state(n_params, 0.0), v_state(n_params, 0.0);
  std::vector<double> grad(n_params, 0.0);
  std::unordered_map<const Parameter*, std::size_t> offsets;
  {
    std::size_t offset = 0;
    for (const auto& p : model.store.all()) {
      offsets[p.get()] = offset;
      offset += p->size();
    }
  }

  const std::size_t threads = resolve_threads(config.threads);
  const std::size_t batch_size =
      std::min(config.opt.batch_size, dataset.train.size());

  Rng order_rng(Rng::mix_seed(config.seed, 0x0D0E));
  std::vector<std::size_t> order(dataset.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  order_rng.shuffle(order);
  std::size_t cursor = 0;

  RunReport report;
  report.config_echo = config.to_map();
  report.revision = source_revision();
  report.checkpoint_path = (fs::path(out_dir) / "best.ckpt").string();
  report.decode_log_path = (fs::path(out_dir) / "decode_log.jsonl").string();
  report.best_val_accuracy = -1.0;

  std::vector<std::size_t> batch(batch_size);
  std::vector<double> losses(batch_size);
  std::vector<std::vector<double>> instance_grads(batch_size);

  fs::create_directories(fs::path(out_dir) / "decode_logs");
  auto write_decode_log = [](const std::string& path,
                             const std::vector<EvalRecord>& records) {
    std::ofstream log(path);
    for (const auto& record : records) {
      nlohmann::ordered_json j;
      j["scene_id"] = record.scene_id;
      j["question"] = record.question;
      j["gt_answer"] = record.gt_answer;
      j["predicted"] = record.predicted;
      j["token_sources"] = record.token_sources;
      j["accuracy"] = record.accuracy;
      log << j.dump() << "\n";
    }
  };
  auto run_eval = [&](std::size_t update) {
    EvalOutcome outcome = evaluate(model, dataset.val, threads);
    report.history.emplace_back(update, outcome.mean_accuracy);
    // one log per eval step keeps every reported accuracy re-derivable
    write_decode_log((fs::path(out_dir) / "decode_logs" /
                      ("step_" + std::to_string(update) + ".jsonl"))
                         .string(),
                     outcome.records);
    if (outcome.mean_accuracy > report.best_val_accuracy) {
      report.best_val_accuracy = outcome.mean_accuracy;
      report.best_step = update;
      auto meta = config.to_map();
      meta.erase("out_dir");  // keep checkpoint bytes location independent
      save_checkpoint(report.checkpoint_path, model.store, meta);
      write_decode_log(report.decode_log_path, outcome.records);
    }
    std::printf("[train] step %zu  val_accuracy %.4f\n", update,
                outcome.mean_accuracy);
    std::fflush(stdout);
    return outcome.mean_accuracy;
  };

  for (std::size_t update = 1; update <= config.opt.max_updates; ++update) {
    for (std::size_t b = 0; b < batch_size; ++b) {
      if (cursor == order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      batch[b] = order[cursor++];
    }

    parallel_for(batch_size, threads, [&](std::size_t b) {
      const PreparedInstance& inst = dataset.train[batch[b]];
      Tape tape;
      WeightBinding binding(tape);
      ForwardResult fwd = m4c_forward(binding, inst.features, model.weights,
                                      model.attn, model.dims,
                                      inst.teacher_inputs);
      Tensor loss = bce_multi_token(tape, fwd.probs, inst.targets);
      tape.backward(loss);
      losses[b] = loss(0);
      auto& g = instance_grads[b];
      g.assign(n_params, 0.0);
      for (const auto& [param, leaf] : binding.entries()) {
        std::span<const double> pg = leaf.grad();
        double* dst = g.data() + offsets.at(param);
        for (std::size_t i = 0; i < pg.size(); ++i) dst[i] += pg[i];
      }
    });

    double batch_loss = 0.0;
    for (double l : losses) batch_loss += l;
    batch_loss /= static_cast<double>(batch_size);
    if (!std::isfinite(batch_loss)) {
      write_nan_dump(out_dir, update, batch, losses, dataset.train);
      throw std::runtime_error(
          "train: non-finite loss at update " + std::to_string(update) +
          "; batch dumped to " + out_dir + "/nan_dump.json");
    }

    // deterministic ordered reduction, then Adam
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t b = 0; b < batch_size; ++b) {
      const auto& g = instance_grads[b];
      for (std::size_t i = 0; i < n_params; ++i) grad[i] += g[i];
    }
    const double inv_batch = 1.0 / static_cast<double>(batch_size);
    const double lr = learning_rate(config.opt, update);
    const double bc1 = 1.0 - std::pow(config.opt.beta1,
                                      static_cast<double>(update));
    const double bc2 = 1.0 - std::pow(config.opt.beta2,
                                      static_cast<double>(update));
    std::size_t offset = 0;
    for (const auto& p : model.store.all()) {
      for (std::size_t i = 0; i < p->size(); ++i) {
        const std::size_t k = offset + i;
        const double g = grad[k] * inv_batch;
        m_state[k] = config.opt.beta1 * m_state[k] + (1.0 - config.opt.beta1) * g;
        v_state[k] = config.opt.beta2 * v_state[k] + (1.0 - config.opt.beta2) * g * g;
        const double mhat = m_state[k] / bc1;
        const double vhat = v_state[k] / bc2;
        p->values[i] -= lr * mhat / (std::sqrt(vhat) + config.opt.eps);
      }
      offset += p->size();
    }

    if (config.eval_every > 0 && update % config.eval_every == 0 &&
        update != config.opt.max_updates) {
      run_eval(update);
    }
  }

  report.final_val_accuracy = run_eval(config.opt.max_updates);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  write_run_report(report, out_dir);
  return report;
}

RunReport train(const ExperimentConfig& config) {
  config.validate();
  Dataset dataset = Dataset::load(config.data_dir);
  dataset.prepare(config);
  return train(config, dataset);
}

void write_run_report(const RunReport& report, const std::string& dir) {
  fs::create_directories(dir);
  nlohmann::ordered_json j;
  j["config"] = report.config_echo;
  j["revision"] = report.revision;
  j["history"] = nlohmann::ordered_json::array();
  for (const auto& [step, acc] : report.history) {
    j["history"].push_back({{"step", step}, {"val_accuracy", acc}});
  }
  j["final_val_accuracy"] = report.final_val_accuracy;
  j["best_val_accuracy"] = report.best_val_accuracy;
  j["best_step"] = report.best_step;
  j["wall_seconds"] = report.wall_seconds;
  j["checkpoint"] = report.checkpoint_path;
  j["decode_log"] = report.decode_log_path;
  std::ofstream out(fs::path(dir) / "report.json");
  out << j.dump(2) << "\n";

  std::ofstream csv(fs::path(dir) / "history.csv");
  csv << "step,val_accuracy\n";
  for (const auto& [step, acc] : report.history) {
    csv << step << "," << format_double(acc) << "\n";
  }
}

namespace {

ExperimentConfig cell_config(const ExperimentConfig& base,
                             FusionLocation location, FusionFn fn,
                             const std::string& cell_name,
                             std::optional<std::size_t> updates_override) {
  ExperimentConfig config = base;
  config.attn.fusion_location = location;
  config.attn.fusion_fn = fn;
  config.out_dir = (fs::path(base.out_dir) / cell_name).string();
  if (updates_override) config.opt.max_updates = *updates_override;
  return config;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string csv_safe(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n') c = ';';
  }
  return s;
}

}  // namespace

std::string GridReport::to_csv() const {
  std::string csv = "fusion_location,fusion_fn,val_accuracy,config_hash,status\n";
  for (const auto& row : rows) {
    csv += row.location + "," + row.fn + "," +
           (row.failed ? "" : fixed(row.accuracy)) + "," + row.config_hash +
           "," + (row.failed ? "failed: " + csv_safe(row.error) : "ok") + "\n";
  }
  return csv;
}

std::string GridReport::to_text() const {
  std::string text;
  text += "fusion location    fn       val acc    config hash\n";
  text += "-------------------------------------------------------------\n";
  for (const auto& row : rows) {
    char line[128];
    std::snprintf(line, sizeof line, "%-18s %-8s %-10s %s\n",
                  row.location.c_str(), row.fn.c_str(),
                  row.failed ? "failed" : fixed(row.accuracy).c_str(),
                  row.config_hash.c_str());
    text += line;
  }
  return text;
}

GridReport fusion_grid(const ExperimentConfig& base,
                       std::optional<std::size_t> updates_override) {
  base.validate();
  Dataset dataset = Dataset::load(base.data_dir);

  struct Cell {
    std::string name;
    FusionLocation location;
    FusionFn fn;
  };
  const std::vector<Cell> cells = {
      {"baseline", FusionLocation::kNone, FusionFn::kAdd},
      {"keys_concat", FusionLocation::kKeys, FusionFn::kConcat},
      {"keys_add", FusionLocation::kKeys, FusionFn::kAdd},
      {"values_concat", FusionLocation::kValues, FusionFn::kConcat},
      {"values_add", FusionLocation::kValues, FusionFn::kAdd},
      {"both_concat", FusionLocation::kKeysAndValues, FusionFn::kConcat},
      {"both_add", FusionLocation::kKeysAndValues, FusionFn::kAdd},
  };

  GridReport report;
  for (const auto& cell : cells) {
    ExperimentConfig config =
        cell_config(base, cell.location, cell.fn, cell.name, updates_override);
    GridRow row;
    row.location = to_string(cell.location);
    row.fn = cell.location == FusionLocation::kNone ? "-" : to_string(cell.fn);
    row.config_hash = config.hash();
    try {
      dataset.prepare(config);
      RunReport run = train(config, dataset);
      row.accuracy = run.final_val_accuracy;
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    report.rows.push_back(std::move(row));
  }
  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const GridRow& a, const GridRow& b) {
                     if (a.failed != b.failed) return !a.failed;
                     return a.accuracy > b.accuracy;
                   });

  const std::string out_dir = base.resolved_out_dir();
  fs::create_directories(out_dir);
  std::ofstream(fs::path(out_dir) / "grid.csv") << report.to_csv();
  std::ofstream(fs::path(out_dir) / "grid.txt") << report.to_text();
  return report;
}

std::string AblationReport::to_csv() const {
  std::string csv = "dropped_feature,mask,val_accuracy,config_hash,status\n";
  for (const auto& row : rows) {
    csv += row.dropped + "," + row.mask_echo + "," +
           (row.failed ? "" : fixed(row.accuracy)) + "," + row.config_hash +
           "," + (row.failed ? "failed: " + csv_safe(row.error) : "ok") + "\n";
  }
  return csv;
}

std::string AblationReport::to_text() const {
  std::string text;
  text += "dropped feature        val acc    mask\n";
  text += "----------------------------------------------------------------\n";
  for (const auto& row : rows) {
    char line[160];
    std::snprintf(line, sizeof line, "%-22s %-10s %s\n", row.dropped.c_str(),
                  row.failed ? "failed" : fixed(row.accuracy).c_str(),
                  row.mask_echo.c_str());
    text += line;
  }
  return text;
}

AblationReport ablation_run(const ExperimentConfig& base,
                            std::optional<std::size_t> updates_override) {
  if (base.attn.fusion_location != FusionLocation::kValues ||
      base.attn.fusion_fn != FusionFn::kAdd) {
    throw std::runtime_error(
        "ablation: base config must fuse at values with the add function");
  }
  base.validate();
  Dataset dataset = Dataset::load(base.data_dir);

  struct Variant {
    std::string dropped;
    EdgeFeatureMask mask;
  };
  std::vector<Variant> variants;
  variants.push_back({"none", base.feature_mask});
  {
    EdgeFeatureMask m = base.feature_mask;
    m.appearance = false;
    variants.push_back({"appearance_similarity", m});
    m = base.feature_mask;
    m.translation = false;
    variants.push_back({"spatial_translation", m});
    m = base.feature_mask;
    m.interaction = false;
    variants.push_back({"spatial_interaction", m});
    m = base.feature_mask;
    m.modality_pair = false;
    variants.push_back({"modality_pair", m});
  }

  AblationReport report;
  for (const auto& variant : variants) {
    ExperimentConfig config = base;
    config.feature_mask = variant.mask;
    config.out_dir = (fs::path(base.out_dir) / ("drop_" + variant.dropped)).string();
    if (updates_override) config.opt.max_updates = *updates_override;
    AblationRow row;
    row.dropped = variant.dropped;
    row.mask_echo = variant.mask.to_string();
    row.config_hash = config.hash();
    try {
      dataset.prepare(config);
      RunReport run = train(config, dataset);
      row.accuracy = run.final_val_accuracy;
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    report.rows.push_back(std::move(row));
  }

  const std::string out_dir = base.resolved_out_dir();
  fs::create_directories(out_dir);
  std::ofstream(fs::path(out_dir) / "ablate.csv") << report.to_csv();
  std::ofstream(fs::path(out_dir) / "ablate.txt") << report.to_text();
  return report;
}

}  // namespace grt
