#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "grt/attention.hpp"
#include "grt/edge_features.hpp"
#include "grt/m4c_lite.hpp"
#include "grt/objectives.hpp"
#include "grt/synthgen.hpp"

namespace grt {

struct OptimizerParams {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t max_updates = 3000;
  std::size_t batch_size = 32;
  double warmup_frac = 0.02;   // linear warmup over the first updates
  double decay1_frac = 0.583;  // stepwise lr decay points
  double decay2_frac = 0.792;
  double decay_factor = 0.1;
};

struct ExperimentConfig {
  AttentionConfig attn;
  EdgeFeatureMask feature_mask;
  TranslationNorm translation_norm = TranslationNorm::kImageFrame;
  M4CDims dims;
  OptimizerParams opt;
  std::string data_dir;
  std::string out_dir = "run";
  std::uint64_t seed = 1;
  std::size_t eval_every = 500;
  std::size_t threads = 0;  // 0 = hardware concurrency

  static ExperimentConfig from_file(const std::string& path);
  void apply_override(const std::string& key, const std::string& value);
  // Canonical key/value echo; drives both reports and the config hash.
  std::map<std::string, std::string> to_map() const;
  std::string hash() const;
  // Resolves out_dir against the GRT_OUT_ROOT environment variable.
  std::string resolved_out_dir() const;
  void validate() const;
};

// One instance made forward-ready: dense feature matrices, targets,
// teacher-forcing inputs, and (when fusing) the edge tensor.
struct PreparedInstance {
  const SceneInstance* scene = nullptr;
  SceneFeatures features;
  EdgeTensor edges;
  TokenTargets targets;
  std::vector<PrevToken> teacher_inputs;
  AnswerSet humans;
};

struct Dataset {
  Vocabulary question_vocab;
  Vocabulary answer_vocab;
  std::vector<SceneInstance> train_scenes;
  std::vector<SceneInstance> val_scenes;
  std::vector<PreparedInstance> train;
  std::vector<PreparedInstance> val;

  static Dataset load(const std::string& data_dir);
  // Builds PreparedInstances; edge tensors only when the config fuses.
  void prepare(const ExperimentConfig& config);
};

struct Model {
  ParameterStore store;
  ModelWeights weights;
  AttentionConfig attn;
  M4CDims dims;
};

// Creates and initializes all weights for a config and dataset. The edge
// width is derived from the feature mask.
void build_model(Model& model, const ExperimentConfig& config,
                 std::size_t question_vocab, std::size_t answer_vocab);

struct EvalRecord {
  std::string scene_id;
  std::string question;
  std::string gt_answer;
  std::string predicted;
  std::vector<std::string> token_sources;  // "vocab" or "ocr:<pos>"
  double accuracy = 0.0;
};

struct EvalOutcome {
  double mean_accuracy = 0.0;
  std::vector<EvalRecord> records;
};

EvalOutcome evaluate(const Model& model, const std::vector<PreparedInstance>& split,
                     std::size_t threads);

struct RunReport {
  std::vector<std::pair<std::size_t, double>> history;  // (step, val accuracy)
  double final_val_accuracy = 0.0;
  double best_val_accuracy = 0.0;
  std::size_t best_step = 0;
  double wall_seconds = 0.0;
  std::map<std::string, std::string> config_echo;
  std::string revision;
  std::string checkpoint_path;
  std::string decode_log_path;
};

void write_run_report(const RunReport& report, const std::string& dir);

// Trains on a prepared dataset. The dataset must have been prepared with the
// same config.
RunReport train(const ExperimentConfig& config, Dataset& dataset);
// Convenience: loads + prepares the dataset from config.data_dir.
RunReport train(const ExperimentConfig& config);

struct GridRow {
  std::string location;
  std::string fn;
  double accuracy = 0.0;
  std::string config_hash;
  bool failed = false;
  std::string error;
};

struct GridReport {
  std::vector<GridRow> rows;  // ranked by accuracy, failures last
  std::string to_csv() const;
  std::string to_text() const;
};

// All six (location, fn) cells plus the vanilla baseline at a short budget.
GridReport fusion_grid(const ExperimentConfig& base,
                       std::optional<std::size_t> updates_override);

struct AblationRow {
  std::string dropped;  // "none" or a feature name
  std::string mask_echo;
  double accuracy = 0.0;
  std::string config_hash;
  bool failed = false;
  std::string error;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::string to_csv() const;
  std::string to_text() const;
};

// All-features plus the four leave-one-out runs; the base config must fuse
// at values with the add function.
AblationReport ablation_run(const ExperimentConfig& base,
                            std::optional<std::size_t> updates_override);

// Mean accuracy of the scene-level answer rule itself (decoder bypass).
double oracle_accuracy(const std::vector<PreparedInstance>& split);

std::string source_revision();

}  // namespace grt
