#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "grt/edge_features.hpp"
#include "grt/m4c_lite.hpp"

namespace grt {

struct SceneObject {
  BoundingBox box;
  std::string color;
  std::string shape;
  std::vector<double> appearance;  // d_fr
};

struct SceneOcrToken {
  BoundingBox box;
  std::string text;
  std::vector<double> word_vec;        // d_ft
  std::vector<double> appearance_vec;  // d_fr
  std::vector<double> char_vec;        // d_p
};

// One synthetic TextVQA-like instance with exact ground truth.
struct SceneInstance {
  std::string id;
  std::string template_id;
  std::vector<SceneObject> objects;
  std::vector<SceneOcrToken> ocr;
  std::vector<std::string> question;
  std::vector<std::string> answers;  // 10 human-answer stand-ins
  std::vector<std::string> gt_tokens;
};

struct DifficultyParams {
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
  std::size_t min_ocr = 3;
  std::size_t max_ocr = 6;
  std::size_t noise_answers = 0;  // answers per 10 replaced by distractors
  std::size_t d_ft = 32;
  std::size_t d_fr = 64;
  std::size_t d_p = 16;
  // template id -> sampling weight; empty selects the built-in default mix
  std::map<std::string, double> template_weights;

  void validate() const;
};

// Shipped question templates. Each answer rule is a deterministic geometric
// or relational function of the realized scene.
const std::vector<std::string>& template_ids();

// Recomputes the answer from the serialized scene alone; the model never
// enters this path.
std::string scene_answer_oracle(const SceneInstance& scene);

SceneInstance generate_scene(std::uint64_t seed, const DifficultyParams& params);

struct GeneratedSplit {
  std::vector<SceneInstance> train;
  std::vector<SceneInstance> val;
};

GeneratedSplit generate_split(std::uint64_t seed, std::size_t n_train,
                              std::size_t n_val,
                              const DifficultyParams& params);

// Fixed vocabularies induced by the template family and token pools.
Vocabulary question_vocabulary();
Vocabulary answer_vocabulary();

std::string scene_to_json(const SceneInstance& scene);
SceneInstance scene_from_json(const std::string& json);

void write_split_file(const std::string& path, const std::string& split_name,
                      const std::vector<SceneInstance>& scenes);
std::vector<SceneInstance> load_split_file(const std::string& path);

std::map<std::string, std::size_t> template_histogram(
    const std::vector<SceneInstance>& scenes);

}  // namespace grt
