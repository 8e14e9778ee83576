// Command-line front end: data generation, training, evaluation, and the
// fusion-grid / ablation experiment runners.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "grt/checkpoint.hpp"
#include "grt/harness.hpp"
#include "grt/synthgen.hpp"

namespace fs = std::filesystem;
using namespace grt;

namespace {

struct ConfigArgs {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string data_dir;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> updates;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "flat key=value config file");
    cmd->add_option("--set", overrides, "override: key=value")
        ->type_name("KEY=VALUE");
    cmd->add_option("--data", data_dir, "data directory from gen-data");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "run seed");
    cmd->add_option("--updates", updates, "override max updates");
  }

  ExperimentConfig build() const {
    ExperimentConfig config;
    if (!config_file.empty()) config = ExperimentConfig::from_file(config_file);
    for (const std::string& kv : overrides) {
      const std::size_t eq = kv.find('=');
      if (eq == std::string::npos) {
        throw std::runtime_error("--set expects key=value, got: " + kv);
      }
      config.apply_override(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!data_dir.empty()) config.data_dir = data_dir;
    if (!out_dir.empty()) config.out_dir = out_dir;
    if (seed) config.seed = *seed;
    if (updates) config.opt.max_updates = *updates;
    return config;
  }
};

void write_manifest(const fs::path& dir, std::uint64_t seed,
                    std::size_t n_train, std::size_t n_val,
                    const DifficultyParams& params,
                    const GeneratedSplit& split) {
  nlohmann::ordered_json manifest;
  manifest["seed"] = seed;
  manifest["n_train"] = n_train;
  manifest["n_val"] = n_val;
  manifest["params"] = {
      {"min_objects", params.min_objects}, {"max_objects", params.max_objects},
      {"min_ocr", params.min_ocr},         {"max_ocr", params.max_ocr},
      {"noise_answers", params.noise_answers},
      {"d_ft", params.d_ft},               {"d_fr", params.d_fr},
      {"d_p", params.d_p}};
  nlohmann::ordered_json weights;
  for (const auto& [id, w] : params.template_weights) weights[id] = w;
  manifest["params"]["template_weights"] = std::move(weights);
  nlohmann::ordered_json templates;
  for (const auto& [id, count] : template_histogram(split.train)) {
    templates["train"][id] = count;
  }
  for (const auto& [id, count] : template_histogram(split.val)) {
    templates["val"][id] = count;
  }
  manifest["templates"] = std::move(templates);
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
}

int cmd_gen_data(const std::string& out_dir, std::uint64_t seed,
                 std::size_t n_train, std::size_t n_val,
                 DifficultyParams params,
                 const std::vector<std::string>& template_specs) {
  for (const std::string& spec : template_specs) {
    const std::size_t eq = spec.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("--template expects id=weight, got: " + spec);
    }
    params.template_weights[spec.substr(0, eq)] = std::stod(spec.substr(eq + 1));
  }
  params.validate();

  const fs::path dir(out_dir);
  fs::create_directories(dir);
  GeneratedSplit split = generate_split(seed, n_train, n_val, params);
  write_split_file((dir / "train.json").string(), "train", split.train);
  write_split_file((dir / "val.json").string(), "val", split.val);
  question_vocabulary().save((dir / "question_vocab.txt").string());
  answer_vocabulary().save((dir / "answer_vocab.txt").string());
  write_manifest(dir, seed, n_train, n_val, params, split);

  std::cout << "wrote " << split.train.size() << " train / " << split.val.size()
            << " val scenes to " << dir.string() << "\n";
  for (const auto& [id, count] : template_histogram(split.train)) {
    std::cout << "  train " << id << ": " << count << "\n";
  }
  return 0;
}

int cmd_train(const ConfigArgs& args) {
  ExperimentConfig config = args.build();
  RunReport report = train(config);
  std::cout << "final val accuracy: " << report.final_val_accuracy << "\n"
            << "best val accuracy:  " << report.best_val_accuracy << " (step "
            << report.best_step << ")\n"
            << "wall seconds:       " << report.wall_seconds << "\n"
            << "report:             "
            << (fs::path(config.resolved_out_dir()) / "report.json").string()
            << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& split_file,
             const std::string& log_path, std::size_t threads) {
  // the checkpoint header carries the config used to build the model
  auto meta = checkpoint_meta(checkpoint);
  ExperimentConfig config;
  for (const auto& [key, value] : meta) {
    if (key == "out_dir" || key == "d_e") continue;
    config.apply_override(key, value);
  }

  Dataset dataset;
  const fs::path data_dir = fs::path(config.data_dir);
  dataset.question_vocab =
      Vocabulary::load((data_dir / "question_vocab.txt").string());
  dataset.answer_vocab =
      Vocabulary::load((data_dir / "answer_vocab.txt").string());
  dataset.val_scenes = load_split_file(split_file);
  dataset.train_scenes.clear();
  dataset.prepare(config);

  Model model;
  build_model(model, config, dataset.question_vocab.size(),
              dataset.answer_vocab.size());
  load_checkpoint(checkpoint, model.store);

  EvalOutcome outcome = evaluate(model, dataset.val, threads);
  if (!log_path.empty()) {
    std::ofstream log(log_path);
    for (const auto& record : outcome.records) {
      nlohmann::ordered_json j;
      j["scene_id"] = record.scene_id;
      j["question"] = record.question;
      j["gt_answer"] = record.gt_answer;
      j["predicted"] = record.predicted;
      j["token_sources"] = record.token_sources;
      j["accuracy"] = record.accuracy;
      log << j.dump() << "\n";
    }
  }
  std::cout << "instances: " << outcome.records.size() << "\n"
            << "mean vqa accuracy: " << outcome.mean_accuracy << "\n";
  return 0;
}

int cmd_fusion_grid(const ConfigArgs& args, std::size_t updates) {
  ExperimentConfig config = args.build();
  GridReport report = fusion_grid(config, updates);
  std::cout << report.to_text();
  std::cout << "reports: " << config.resolved_out_dir() << "/grid.{csv,txt}\n";
  return 0;
}

int cmd_ablate(const ConfigArgs& args, std::optional<std::size_t> updates) {
  ExperimentConfig config = args.build();
  config.attn.fusion_location = FusionLocation::kValues;
  config.attn.fusion_fn = FusionFn::kAdd;
  AblationReport report = ablation_run(config, updates);
  std::cout << report.to_text();
  std::cout << "reports: " << config.resolved_out_dir() << "/ablate.{csv,txt}\n";
  return 0;
}

int cmd_report(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "report.json");
  if (!in) throw std::runtime_error("no report.json under " + dir);
  nlohmann::json report = nlohmann::json::parse(in);

  std::cout << "run report (" << dir << ")\n";
  std::cout << "revision: " << report["revision"].get<std::string>() << "\n";
  std::cout << "step        val accuracy   re-derived\n";
  bool all_match = true;
  for (const auto& entry : report["history"]) {
    const std::size_t step = entry["step"].get<std::size_t>();
    const double acc = entry["val_accuracy"].get<double>();
    // integrity: recompute the mean from the per-instance decode log
    const fs::path log_path =
        fs::path(dir) / "decode_logs" / ("step_" + std::to_string(step) + ".jsonl");
    double derived = -1.0;
    std::ifstream log(log_path);
    if (log) {
      double total = 0.0;
      std::size_t count = 0;
      std::string line;
      while (std::getline(log, line)) {
        total += nlohmann::json::parse(line)["accuracy"].get<double>();
        ++count;
      }
      if (count > 0) derived = total / static_cast<double>(count);
    }
    const bool match = std::abs(derived - acc) < 1e-12;
    all_match = all_match && match;
    std::printf("%-11zu %-14.6f %s\n", step, acc,
                match ? "ok" : "MISMATCH");
  }
  std::printf("final: %.6f  best: %.6f (step %zu)\n",
              report["final_val_accuracy"].get<double>(),
              report["best_val_accuracy"].get<double>(),
              report["best_step"].get<std::size_t>());
  if (!all_match) {
    std::cerr << "integrity check failed: logged accuracies do not match\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph relation transformer on synthetic spatial scenes"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::string gen_out = "data";
  std::uint64_t gen_seed = 1;
  std::size_t gen_train = 2000, gen_val = 500;
  DifficultyParams gen_params;
  std::vector<std::string> gen_templates;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--train", gen_train, "train instances");
  gen->add_option("--val", gen_val, "val instances");
  gen->add_option("--noise", gen_params.noise_answers,
                  "answers per 10 replaced by distractors");
  gen->add_option("--min-objects", gen_params.min_objects, "objects lower bound");
  gen->add_option("--max-objects", gen_params.max_objects, "objects upper bound");
  gen->add_option("--min-ocr", gen_params.min_ocr, "ocr tokens lower bound");
  gen->add_option("--max-ocr", gen_params.max_ocr, "ocr tokens upper bound");
  gen->add_option("--d-ft", gen_params.d_ft, "word vector width");
  gen->add_option("--d-fr", gen_params.d_fr, "appearance vector width");
  gen->add_option("--d-p", gen_params.d_p, "character vector width");
  gen->add_option("--template", gen_templates,
                  "template weight, id=weight (repeatable)");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  ConfigArgs train_args;
  train_args.attach(train_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_split, eval_log;
  std::size_t eval_threads = 0;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--split", eval_split, "split json file")->required();
  eval_cmd->add_option("--log", eval_log, "per-instance decode log (jsonl)");
  eval_cmd->add_option("--threads", eval_threads, "worker threads (0 = auto)");

  // fusion-grid
  auto* grid_cmd = app.add_subcommand(
      "fusion-grid", "run all six fusion cells plus the baseline");
  ConfigArgs grid_args;
  grid_args.attach(grid_cmd);
  std::size_t grid_updates = 500;
  grid_cmd->add_option("--screen-updates", grid_updates,
                       "updates per cell (screening budget)");

  // ablate
  auto* ablate_cmd = app.add_subcommand(
      "ablate", "leave-one-out edge feature ablation at values+add");
  ConfigArgs ablate_args;
  ablate_args.attach(ablate_cmd);

  // report
  auto* report_cmd = app.add_subcommand("report", "render and verify a run report");
  std::string report_dir;
  report_cmd->add_option("--dir", report_dir, "run output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return cmd_gen_data(gen_out, gen_seed, gen_train, gen_val, gen_params,
                          gen_templates);
    }
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) {
      return cmd_eval(eval_ckpt, eval_split, eval_log, eval_threads);
    }
    if (grid_cmd->parsed()) return cmd_fusion_grid(grid_args, grid_updates);
    if (ablate_cmd->parsed()) {
      return cmd_ablate(ablate_args, ablate_args.updates);
    }
    if (report_cmd->parsed()) return cmd_report(report_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
