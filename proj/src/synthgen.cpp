#include "grt/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "grt/rng.hpp"

namespace grt {

namespace {

const std::vector<std::string> kColors = {"red", "green", "blue", "yellow",
                                          "purple"};
const std::vector<std::string> kShapes = {"box", "sign", "plate"};
const std::vector<std::string> kOcrPool = {
    "0",    "1",    "2",    "3",    "4",    "5",    "6",    "7",    "8",
    "9",    "exit", "stop", "open", "sale", "menu", "cafe", "park", "taxi",
    "shop", "gate", "zone", "dock", "east", "west", "nova", "lima"};

const std::vector<std::string> kTemplates = {
    "rightmost", "leftmost", "topmost", "bottommost",
    "inside",    "nearest",  "same_line"};

constexpr std::uint64_t kWordSalt = 0x77D1;
constexpr std::uint64_t kCharSalt = 0x3C4A;
constexpr std::uint64_t kObjSalt = 0x0B3E;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic prototype vector for a tag; scenes add per-instance noise.
std::vector<double> prototype(const std::string& tag, std::uint64_t salt,
                              std::size_t dim) {
  Rng rng(Rng::mix_seed(fnv1a(tag), salt));
  std::vector<double> v(dim);
  for (double& x : v) x = rng.normal();
  return v;
}

std::vector<double> noisy(Rng& rng, const std::vector<double>& proto,
                          double sigma) {
  std::vector<double> v(proto.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = proto[i] + rng.normal(0.0, sigma);
  return v;
}

// All geometry lives on a coarse lattice. Continuous coordinates would make
// every scene a unique fingerprint the model can memorize; on the lattice,
// positions repeat across scenes and only relations distinguish them.
constexpr int kGrid = 24;

double cell(int k) { return static_cast<double>(k) / kGrid; }

int pick_int(Rng& rng, int lo, int hi) {  // inclusive
  return lo + static_cast<int>(rng.uniform_index(hi - lo + 1));
}

struct CellBox {
  int x, y, w, h;  // in lattice cells
  BoundingBox box() const {
    return {cell(x), cell(y), cell(x + w), cell(y + h)};
  }
};

bool cells_overlap(const CellBox& a, const CellBox& b, int gap) {
  return a.x - gap < b.x + b.w && b.x - gap < a.x + a.w &&
         a.y - gap < b.y + b.h && b.y - gap < a.y + a.h;
}

CellBox sample_cell_box(Rng& rng, int w_lo, int w_hi, int h_lo, int h_hi) {
  CellBox c;
  c.w = pick_int(rng, w_lo, w_hi);
  c.h = pick_int(rng, h_lo, h_hi);
  c.x = pick_int(rng, 0, kGrid - c.w);
  c.y = pick_int(rng, 0, kGrid - c.h);
  return c;
}

std::vector<CellBox> place_disjoint_objects(Rng& rng, std::size_t count) {
  std::vector<CellBox> boxes;
  int w_hi = 8, h_hi = 8;
  for (std::size_t i = 0; i < count; ++i) {
    CellBox candidate{};
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      candidate = sample_cell_box(rng, 4, w_hi, 4, h_hi);
      placed = true;
      for (const auto& other : boxes) {
        if (cells_overlap(candidate, other, 1)) {
          placed = false;
          break;
        }
      }
      // crowded layouts get smaller boxes
      if (!placed && attempt % 50 == 49) {
        w_hi = std::max(4, w_hi - 1);
        h_hi = std::max(4, h_hi - 1);
      }
    }
    boxes.push_back(candidate);  // last candidate on give-up; overlaps are rare
  }
  return boxes;
}

CellBox place_ocr_inside(Rng& rng, const CellBox& host) {
  CellBox c;
  c.w = std::min(pick_int(rng, 1, 2), host.w - 2);
  c.h = 1;
  c.x = pick_int(rng, host.x + 1, host.x + host.w - c.w - 1);
  c.y = pick_int(rng, host.y + 1, host.y + host.h - 2);
  return c;
}

CellBox place_ocr_free(Rng& rng, const std::vector<CellBox>& objects) {
  CellBox candidate{};
  for (int attempt = 0; attempt < 200; ++attempt) {
    candidate = sample_cell_box(rng, 1, 2, 1, 1);
    bool clear = true;
    for (const auto& obj : objects) {
      if (cells_overlap(candidate, obj, 0)) {
        clear = false;
        break;
      }
    }
    if (clear) return candidate;
  }
  return candidate;
}

std::vector<std::string> sample_texts(Rng& rng, std::size_t count) {
  std::vector<std::string> pool = kOcrPool;
  rng.shuffle(pool);
  pool.resize(count);
  return pool;
}

std::vector<std::size_t> sample_distinct(Rng& rng, std::size_t count,
                                         std::size_t universe) {
  std::vector<std::size_t> all(universe);
  for (std::size_t i = 0; i < universe; ++i) all[i] = i;
  rng.shuffle(all);
  all.resize(count);
  return all;
}

void fill_objects(Rng& rng, SceneInstance& scene,
                  const std::vector<CellBox>& boxes,
                  const DifficultyParams& params) {
  const auto color_ids = sample_distinct(rng, boxes.size(), kColors.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    SceneObject obj;
    obj.box = boxes[i].box();
    obj.color = kColors[color_ids[i]];
    obj.shape = kShapes[rng.uniform_index(kShapes.size())];
    obj.appearance =
        prototype("obj:" + obj.color + ":" + obj.shape, kObjSalt, params.d_fr);
    scene.objects.push_back(std::move(obj));
  }
}

// Feature vectors are deterministic functions of their semantic factors
// (text or line membership). Instance-unique noise would hand the model a
// per-scene fingerprint to memorize instead of the relational rule.
SceneOcrToken make_ocr_token(Rng& rng, const std::string& text,
                             const BoundingBox& box,
                             const DifficultyParams& params,
                             const std::string& line_tag) {
  SceneOcrToken token;
  token.box = box;
  token.text = text;
  token.word_vec = prototype(text, kWordSalt, params.d_ft);
  token.char_vec = prototype(text, kCharSalt, params.d_p);
  token.appearance_vec =
      line_tag.empty()
          ? prototype("ocrapp:" + text, kObjSalt, params.d_fr)
          : noisy(rng, prototype("line:" + line_tag, kObjSalt, params.d_fr),
                  0.02);
  return token;
}

void finish_answers(Rng& rng, SceneInstance& scene, const std::string& answer,
                    const DifficultyParams& params) {
  scene.gt_tokens = {answer};
  scene.answers.assign(10, answer);
  for (std::size_t k = 0; k < params.noise_answers; ++k) {
    std::string distractor = answer;
    while (distractor == answer) {
      distractor = kOcrPool[rng.uniform_index(kOcrPool.size())];
    }
    scene.answers[rng.uniform_index(10)] = distractor;
  }
}

std::size_t pick_count(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.uniform_index(hi - lo + 1);
}

const std::string& weighted_template(Rng& rng,
                                     const std::map<std::string, double>& w) {
  double total = 0.0;
  for (const auto& [id, weight] : w) total += weight;
  double roll = rng.uniform() * total;
  for (const auto& [id, weight] : w) {
    roll -= weight;
    if (roll <= 0.0) {
      for (const auto& t : kTemplates) {
        if (t == id) return t;
      }
    }
  }
  return kTemplates.back();
}

std::map<std::string, double> default_weights() {
  return {{"rightmost", 0.06}, {"leftmost", 0.06}, {"topmost", 0.06},
          {"bottommost", 0.07}, {"inside", 0.35},  {"nearest", 0.20},
          {"same_line", 0.20}};
}

void build_extreme(Rng& rng, SceneInstance& scene,
                   const DifficultyParams& params) {
  const std::string& dir = scene.template_id == "rightmost" ? "right"
                           : scene.template_id == "leftmost" ? "left"
                           : scene.template_id == "topmost"  ? "top"
                                                             : "bottom";
  scene.question = {"what", "is", "the", "last", "token", "to", "the", dir};

  const std::size_t n_obj = pick_count(rng, params.min_objects,
                                       params.max_objects);
  const std::size_t n_ocr = pick_count(rng, std::max<std::size_t>(2, params.min_ocr),
                                       params.max_ocr);
  auto obj_boxes = place_disjoint_objects(rng, n_obj);
  fill_objects(rng, scene, obj_boxes, params);

  const auto texts = sample_texts(rng, n_ocr);
  // resample until the winning coordinate has some margin over the runner-up
  std::vector<CellBox> boxes(n_ocr);
  for (int attempt = 0; attempt < 50; ++attempt) {
    for (auto& b : boxes) b = place_ocr_free(rng, obj_boxes);
    std::vector<double> coords(n_ocr);
    for (std::size_t i = 0; i < n_ocr; ++i) {
      const BoundingBox b = boxes[i].box();
      coords[i] = scene.template_id == "rightmost"  ? b.center_x()
                  : scene.template_id == "leftmost" ? -b.center_x()
                  : scene.template_id == "topmost"  ? -b.center_y()
                                                    : b.center_y();
    }
    std::sort(coords.begin(), coords.end());
    if (coords[n_ocr - 1] - coords[n_ocr - 2] >= 0.08) break;
  }
  for (std::size_t i = 0; i < n_ocr; ++i) {
    scene.ocr.push_back(
        make_ocr_token(rng, texts[i], boxes[i].box(), params, ""));
  }
}

void build_inside(Rng& rng, SceneInstance& scene,
                  const DifficultyParams& params) {
  const std::size_t n_obj = std::min(
      pick_count(rng, params.min_objects, params.max_objects), params.max_ocr);
  auto obj_boxes = place_disjoint_objects(rng, n_obj);
  fill_objects(rng, scene, obj_boxes, params);

  const std::size_t budget = params.max_ocr - n_obj;
  const std::size_t extra =
      budget == 0 ? 0 : rng.uniform_index(std::min<std::size_t>(budget, 2) + 1);
  const std::size_t n_ocr = n_obj + extra;
  const auto texts = sample_texts(rng, n_ocr);
  // one token inside each object, the rest in free space
  for (std::size_t i = 0; i < n_obj; ++i) {
    scene.ocr.push_back(make_ocr_token(
        rng, texts[i], place_ocr_inside(rng, obj_boxes[i]).box(), params, ""));
  }
  for (std::size_t i = n_obj; i < n_ocr; ++i) {
    scene.ocr.push_back(make_ocr_token(
        rng, texts[i], place_ocr_free(rng, obj_boxes).box(), params, ""));
  }

  const std::size_t target = rng.uniform_index(n_obj);
  scene.question = {"what",
                    "token",
                    "is",
                    "inside",
                    "the",
                    scene.objects[target].color,
                    scene.objects[target].shape};
}

void build_nearest(Rng& rng, SceneInstance& scene,
                   const DifficultyParams& params) {
  const std::size_t n_obj = pick_count(rng, params.min_objects,
                                       params.max_objects);
  auto obj_boxes = place_disjoint_objects(rng, n_obj);
  fill_objects(rng, scene, obj_boxes, params);
  const std::size_t target = rng.uniform_index(n_obj);

  const std::size_t n_ocr = pick_count(
      rng, std::max<std::size_t>(2, params.min_ocr), params.max_ocr);
  const auto texts = sample_texts(rng, n_ocr);
  std::vector<CellBox> boxes(n_ocr);
  const BoundingBox target_box = obj_boxes[target].box();
  const double tx = target_box.center_x();
  const double ty = target_box.center_y();
  for (int attempt = 0; attempt < 50; ++attempt) {
    for (auto& b : boxes) b = place_ocr_free(rng, obj_boxes);
    std::vector<double> dist(n_ocr);
    for (std::size_t i = 0; i < n_ocr; ++i) {
      const BoundingBox b = boxes[i].box();
      dist[i] = std::hypot(b.center_x() - tx, b.center_y() - ty);
    }
    std::sort(dist.begin(), dist.end());
    if (dist[1] - dist[0] >= 0.08) break;
  }
  for (std::size_t i = 0; i < n_ocr; ++i) {
    scene.ocr.push_back(
        make_ocr_token(rng, texts[i], boxes[i].box(), params, ""));
  }
  scene.question = {"which",
                    "token",
                    "is",
                    "nearest",
                    "the",
                    scene.objects[target].color,
                    scene.objects[target].shape};
}

void build_same_line(Rng& rng, SceneInstance& scene,
                     const DifficultyParams& params) {
  const std::size_t n_obj = pick_count(rng, params.min_objects,
                                       params.max_objects);
  auto obj_boxes = place_disjoint_objects(rng, n_obj);
  fill_objects(rng, scene, obj_boxes, params);

  const std::size_t lines_lo = std::max<std::size_t>(1, (params.min_ocr + 1) / 2);
  const std::size_t lines_hi =
      std::max(lines_lo, std::min<std::size_t>(params.max_ocr / 2, 3));
  const std::size_t lines = pick_count(rng, lines_lo, lines_hi);
  const std::size_t n_ocr = lines * 2;
  const auto texts = sample_texts(rng, n_ocr);

  // distinct line heights, at least three cells apart
  std::vector<int> ys;
  for (int attempt = 0; attempt < 100; ++attempt) {
    ys.clear();
    for (std::size_t l = 0; l < lines; ++l) ys.push_back(pick_int(rng, 1, kGrid - 2));
    std::sort(ys.begin(), ys.end());
    bool ok = true;
    for (std::size_t l = 1; l < lines; ++l) ok = ok && (ys[l] - ys[l - 1] >= 3);
    if (ok) break;
  }

  for (std::size_t l = 0; l < lines; ++l) {
    const std::string line_tag =
        std::min(texts[l * 2], texts[l * 2 + 1]) + "|" +
        std::max(texts[l * 2], texts[l * 2 + 1]);
    const int w_left = pick_int(rng, 1, 2);
    const int w_right = pick_int(rng, 1, 2);
    const int x_left = pick_int(rng, 0, kGrid / 2 - w_left - 1);
    const int x_right = pick_int(rng, kGrid / 2 + 1, kGrid - w_right - 1);
    for (std::size_t k = 0; k < 2; ++k) {
      CellBox c{k == 0 ? x_left : x_right, ys[l], k == 0 ? w_left : w_right, 1};
      scene.ocr.push_back(
          make_ocr_token(rng, texts[l * 2 + k], c.box(), params, line_tag));
    }
  }

  const std::size_t anchor = rng.uniform_index(n_ocr);
  scene.question = {"what", "token", "is", "beside", scene.ocr[anchor].text};
}

}  // namespace

void DifficultyParams::validate() const {
  auto fail = [](const std::string& msg) {
    throw std::runtime_error("difficulty params: " + msg);
  };
  if (min_objects < 2 || max_objects > 16 || min_objects > max_objects) {
    fail("object count range must lie within [2, 16]");
  }
  if (min_ocr < 2 || max_ocr > 16 || min_ocr > max_ocr) {
    fail("ocr count range must lie within [2, 16]");
  }
  if (noise_answers > 9) fail("noise_answers must leave at least one answer");
  if (d_ft == 0 || d_fr == 0 || d_p == 0) fail("feature dims must be >= 1");
  for (const auto& [id, weight] : template_weights) {
    if (std::find(kTemplates.begin(), kTemplates.end(), id) ==
        kTemplates.end()) {
      fail("unknown template: " + id);
    }
    if (weight < 0.0) fail("negative weight for template " + id);
  }
  if (!template_weights.empty()) {
    double total = 0.0;
    for (const auto& [id, weight] : template_weights) total += weight;
    if (total <= 0.0) fail("template weights sum to zero");
  }
}

const std::vector<std::string>& template_ids() { return kTemplates; }

std::string scene_answer_oracle(const SceneInstance& scene) {
  const auto& t = scene.template_id;
  if (t == "rightmost" || t == "leftmost" || t == "topmost" ||
      t == "bottommost") {
    std::size_t best = 0;
    for (std::size_t i = 1; i < scene.ocr.size(); ++i) {
      const double c = t == "rightmost"  ? scene.ocr[i].box.center_x()
                       : t == "leftmost" ? -scene.ocr[i].box.center_x()
                       : t == "topmost"  ? -scene.ocr[i].box.center_y()
                                         : scene.ocr[i].box.center_y();
      const double b = t == "rightmost"  ? scene.ocr[best].box.center_x()
                       : t == "leftmost" ? -scene.ocr[best].box.center_x()
                       : t == "topmost"  ? -scene.ocr[best].box.center_y()
                                         : scene.ocr[best].box.center_y();
      if (c > b) best = i;
    }
    return scene.ocr[best].text;
  }
  if (t == "inside" || t == "nearest") {
    const std::string& color = scene.question[5];
    const std::string& shape = scene.question[6];
    const SceneObject* target = nullptr;
    for (const auto& obj : scene.objects) {
      if (obj.color == color && obj.shape == shape) {
        target = &obj;
        break;
      }
    }
    if (!target) throw std::runtime_error("oracle: referenced object missing");
    if (t == "inside") {
      for (const auto& token : scene.ocr) {
        if (spatial_interaction(target->box, token.box, false) ==
            SpatialInteraction::kContains) {
          return token.text;
        }
      }
      throw std::runtime_error("oracle: no token inside the target object");
    }
    std::size_t best = 0;
    double best_dist = HUGE_VAL;
    for (std::size_t i = 0; i < scene.ocr.size(); ++i) {
      const double d = std::hypot(
          scene.ocr[i].box.center_x() - target->box.center_x(),
          scene.ocr[i].box.center_y() - target->box.center_y());
      if (d < best_dist) {
        best_dist = d;
        best = i;
      }
    }
    return scene.ocr[best].text;
  }
  if (t == "same_line") {
    const std::string& anchor_text = scene.question[4];
    std::size_t anchor = scene.ocr.size();
    for (std::size_t i = 0; i < scene.ocr.size(); ++i) {
      if (scene.ocr[i].text == anchor_text) {
        anchor = i;
        break;
      }
    }
    if (anchor == scene.ocr.size()) {
      throw std::runtime_error("oracle: anchor token missing");
    }
    std::size_t best = anchor;
    double best_dy = HUGE_VAL;
    for (std::size_t i = 0; i < scene.ocr.size(); ++i) {
      if (i == anchor) continue;
      const double dy = std::abs(scene.ocr[i].box.center_y() -
                                 scene.ocr[anchor].box.center_y());
      if (dy < best_dy) {
        best_dy = dy;
        best = i;
      }
    }
    return scene.ocr[best].text;
  }
  throw std::runtime_error("oracle: unknown template " + t);
}

SceneInstance generate_scene(std::uint64_t seed,
                             const DifficultyParams& params) {
  params.validate();
  Rng rng(seed);
  SceneInstance scene;
  const auto weights = params.template_weights.empty()
                           ? default_weights()
                           : params.template_weights;
  scene.template_id = weighted_template(rng, weights);

  if (scene.template_id == "inside") {
    build_inside(rng, scene, params);
  } else if (scene.template_id == "nearest") {
    build_nearest(rng, scene, params);
  } else if (scene.template_id == "same_line") {
    build_same_line(rng, scene, params);
  } else {
    build_extreme(rng, scene, params);
  }

  finish_answers(rng, scene, scene_answer_oracle(scene), params);
  return scene;
}

GeneratedSplit generate_split(std::uint64_t seed, std::size_t n_train,
                              std::size_t n_val,
                              const DifficultyParams& params) {
  if (n_train < 1 || n_val < 1) {
    throw std::runtime_error("generate_split: sizes must be >= 1");
  }
  GeneratedSplit split;
  char id[32];
  for (std::size_t i = 0; i < n_train; ++i) {
    SceneInstance scene =
        generate_scene(Rng::mix_seed(Rng::mix_seed(seed, 1), i), params);
    std::snprintf(id, sizeof id, "train-%06zu", i);
    scene.id = id;
    split.train.push_back(std::move(scene));
  }
  for (std::size_t i = 0; i < n_val; ++i) {
    SceneInstance scene =
        generate_scene(Rng::mix_seed(Rng::mix_seed(seed, 2), i), params);
    std::snprintf(id, sizeof id, "val-%06zu", i);
    scene.id = id;
    split.val.push_back(std::move(scene));
  }
  return split;
}

Vocabulary question_vocabulary() {
  std::vector<std::string> tokens = {
      "what", "is",     "the",    "last",    "token",  "to",
      "right", "left",  "top",    "bottom",  "inside", "nearest",
      "beside", "which"};
  tokens.insert(tokens.end(), kColors.begin(), kColors.end());
  tokens.insert(tokens.end(), kShapes.begin(), kShapes.end());
  tokens.insert(tokens.end(), kOcrPool.begin(), kOcrPool.end());
  return Vocabulary::from_tokens(std::move(tokens));
}

Vocabulary answer_vocabulary() {
  std::vector<std::string> tokens = {kEosToken, kBeginToken, "<unk>", "yes",
                                     "no"};
  for (int d = 0; d <= 9; ++d) tokens.push_back(std::to_string(d));
  return Vocabulary::from_tokens(std::move(tokens));
}

namespace {

nlohmann::ordered_json box_to_json(const BoundingBox& b) {
  return nlohmann::ordered_json::array({b.x_min, b.y_min, b.x_max, b.y_max});
}

BoundingBox box_from_json(const nlohmann::json& j) {
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
          j[3].get<double>()};
}

nlohmann::ordered_json scene_to_ordered_json(const SceneInstance& scene) {
  nlohmann::ordered_json j;
  j["id"] = scene.id;
  j["template"] = scene.template_id;
  j["objects"] = nlohmann::ordered_json::array();
  for (const auto& obj : scene.objects) {
    nlohmann::ordered_json o;
    o["box"] = box_to_json(obj.box);
    o["color"] = obj.color;
    o["shape"] = obj.shape;
    o["features"] = obj.appearance;
    j["objects"].push_back(std::move(o));
  }
  j["ocr"] = nlohmann::ordered_json::array();
  for (const auto& token : scene.ocr) {
    nlohmann::ordered_json o;
    o["box"] = box_to_json(token.box);
    o["text"] = token.text;
    o["word_vec"] = token.word_vec;
    o["appearance_vec"] = token.appearance_vec;
    o["char_vec"] = token.char_vec;
    j["ocr"].push_back(std::move(o));
  }
  j["question"] = scene.question;
  j["answers"] = scene.answers;
  j["gt_tokens"] = scene.gt_tokens;
  return j;
}

SceneInstance scene_from_parsed(const nlohmann::json& j) {
  SceneInstance scene;
  scene.id = j.at("id").get<std::string>();
  scene.template_id = j.at("template").get<std::string>();
  for (const auto& o : j.at("objects")) {
    SceneObject obj;
    obj.box = box_from_json(o.at("box"));
    obj.color = o.at("color").get<std::string>();
    obj.shape = o.at("shape").get<std::string>();
    obj.appearance = o.at("features").get<std::vector<double>>();
    scene.objects.push_back(std::move(obj));
  }
  for (const auto& o : j.at("ocr")) {
    SceneOcrToken token;
    token.box = box_from_json(o.at("box"));
    token.text = o.at("text").get<std::string>();
    token.word_vec = o.at("word_vec").get<std::vector<double>>();
    token.appearance_vec = o.at("appearance_vec").get<std::vector<double>>();
    token.char_vec = o.at("char_vec").get<std::vector<double>>();
    scene.ocr.push_back(std::move(token));
  }
  scene.question = j.at("question").get<std::vector<std::string>>();
  scene.answers = j.at("answers").get<std::vector<std::string>>();
  scene.gt_tokens = j.at("gt_tokens").get<std::vector<std::string>>();
  return scene;
}

}  // namespace

std::string scene_to_json(const SceneInstance& scene) {
  return scene_to_ordered_json(scene).dump();
}

SceneInstance scene_from_json(const std::string& json) {
  return scene_from_parsed(nlohmann::json::parse(json));
}

void write_split_file(const std::string& path, const std::string& split_name,
                      const std::vector<SceneInstance>& scenes) {
  nlohmann::ordered_json j;
  j["split"] = split_name;
  j["scenes"] = nlohmann::ordered_json::array();
  for (const auto& scene : scenes) {
    j["scenes"].push_back(scene_to_ordered_json(scene));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write split file: " + path);
  out << j.dump();
}

std::vector<SceneInstance> load_split_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open split file: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  std::vector<SceneInstance> scenes;
  for (const auto& s : j.at("scenes")) scenes.push_back(scene_from_parsed(s));
  return scenes;
}

std::map<std::string, std::size_t> template_histogram(
    const std::vector<SceneInstance>& scenes) {
  std::map<std::string, std::size_t> hist;
  for (const auto& scene : scenes) ++hist[scene.template_id];
  return hist;
}

}  // namespace grt
