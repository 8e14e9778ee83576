#include "grt/edge_features.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace grt {

namespace {

std::atomic<std::uint64_t> g_edge_tensor_builds{0};

double clamp_unit(double v) { return v < -1.0 ? -1.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

std::vector<std::string> EdgeFeatureMask::slot_map() const {
  std::vector<std::string> slots;
  if (appearance) slots.push_back("appearance_similarity");
  if (translation) {
    slots.push_back("translation_dx");
    slots.push_back("translation_dy");
  }
  if (interaction) {
    slots.push_back("is_self");
    slots.push_back("is_contains");
    slots.push_back("is_in");
    slots.push_back("is_overlap");
    slots.push_back("not_overlap");
  }
  if (modality_pair) {
    slots.push_back("is_obj_to_obj");
    slots.push_back("is_obj_to_ocr");
    slots.push_back("is_ocr_to_obj");
    slots.push_back("is_ocr_to_ocr");
  }
  return slots;
}

std::string EdgeFeatureMask::to_string() const {
  std::string s;
  s += appearance ? "appearance," : "";
  s += translation ? "translation," : "";
  s += interaction ? "interaction," : "";
  s += modality_pair ? "modality_pair," : "";
  if (!s.empty()) s.pop_back();
  return s;
}

double appearance_similarity(std::span<const double> u,
                             std::span<const double> v) {
  if (u.size() != v.size()) {
    throw std::invalid_argument(
        "appearance_similarity: vector lengths differ: " +
        std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  nu = std::sqrt(nu);
  nv = std::sqrt(nv);
  if (nu < 1e-12 || nv < 1e-12) return 0.0;
  return clamp_unit(dot / (nu * nv));
}

std::array<double, 2> spatial_translation(const BoundingBox& box_i,
                                          const BoundingBox& box_j,
                                          TranslationNorm norm) {
  double dx = box_j.center_x() - box_i.center_x();
  double dy = box_j.center_y() - box_i.center_y();
  if (norm == TranslationNorm::kObjectSize) {
    dx = box_i.width() > 0.0 ? clamp_unit(dx / box_i.width())
                             : clamp_unit(dx / 1e-12);
    dy = box_i.height() > 0.0 ? clamp_unit(dy / box_i.height())
                              : clamp_unit(dy / 1e-12);
  }
  return {dx, dy};
}

SpatialInteraction spatial_interaction(const BoundingBox& box_i,
                                       const BoundingBox& box_j,
                                       bool same_object) {
  if (same_object) return SpatialInteraction::kSelf;
  const bool i_contains_j = box_i.x_min <= box_j.x_min &&
                            box_j.x_max <= box_i.x_max &&
                            box_i.y_min <= box_j.y_min &&
                            box_j.y_max <= box_i.y_max;
  if (i_contains_j) return SpatialInteraction::kContains;
  const bool j_contains_i = box_j.x_min <= box_i.x_min &&
                            box_i.x_max <= box_j.x_max &&
                            box_j.y_min <= box_i.y_min &&
                            box_i.y_max <= box_j.y_max;
  if (j_contains_i) return SpatialInteraction::kIn;
  const double ix = std::min(box_i.x_max, box_j.x_max) -
                    std::max(box_i.x_min, box_j.x_min);
  const double iy = std::min(box_i.y_max, box_j.y_max) -
                    std::max(box_i.y_min, box_j.y_min);
  if (ix > 0.0 && iy > 0.0) return SpatialInteraction::kOverlap;
  return SpatialInteraction::kNoOverlap;
}

std::optional<ModalityPair> modality_pair(Modality m_i, Modality m_j) {
  if (!is_image_origin(m_i) || !is_image_origin(m_j)) return std::nullopt;
  const bool i_obj = m_i == Modality::kVisualObject;
  const bool j_obj = m_j == Modality::kVisualObject;
  if (i_obj && j_obj) return ModalityPair::kObjToObj;
  if (i_obj && !j_obj) return ModalityPair::kObjToOcr;
  if (!i_obj && j_obj) return ModalityPair::kOcrToObj;
  return ModalityPair::kOcrToOcr;
}

EdgeTensor build_edge_tensor(const std::vector<EdgeInput>& inputs,
                             const EdgeFeatureMask& mask,
                             TranslationNorm norm) {
  g_edge_tensor_builds.fetch_add(1, std::memory_order_relaxed);

  const std::size_t n = inputs.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_image_origin(inputs[i].modality)) continue;
    if (!inputs[i].box.has_value()) {
      throw std::runtime_error("build_edge_tensor: input " + std::to_string(i) +
                               " is image-origin but has no bounding box");
    }
    if (mask.appearance && !inputs[i].embedding.has_value()) {
      throw std::runtime_error("build_edge_tensor: input " + std::to_string(i) +
                               " is image-origin but has no embedding while "
                               "the appearance feature is enabled");
    }
  }

  EdgeTensor edges;
  edges.n_obj = n;
  edges.d_e = mask.d_e();
  edges.mask = mask;
  edges.values.assign(n * n * edges.d_e, 0.0);

  for (std::size_t i = 0; i < n; ++i) {
    if (!is_image_origin(inputs[i].modality)) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (!is_image_origin(inputs[j].modality)) continue;
      double* e = edges.values.data() + (i * n + j) * edges.d_e;
      std::size_t slot = 0;
      if (mask.appearance) {
        e[slot++] = appearance_similarity(*inputs[i].embedding,
                                          *inputs[j].embedding);
      }
      if (mask.translation) {
        const auto t = spatial_translation(*inputs[i].box, *inputs[j].box, norm);
        e[slot++] = t[0];
        e[slot++] = t[1];
      }
      if (mask.interaction) {
        const SpatialInteraction label =
            spatial_interaction(*inputs[i].box, *inputs[j].box, i == j);
        e[slot + static_cast<std::size_t>(label)] = 1.0;
        slot += 5;
      }
      if (mask.modality_pair) {
        const auto pair = modality_pair(inputs[i].modality, inputs[j].modality);
        e[slot + static_cast<std::size_t>(*pair)] = 1.0;
        slot += 4;
      }
    }
  }
  return edges;
}

std::string EdgeTensor::to_json() const {
  nlohmann::ordered_json j;
  j["n_obj"] = n_obj;
  j["d_e"] = d_e;
  j["slot_map"] = mask.slot_map();
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < n_obj; ++i) {
    nlohmann::ordered_json cols = nlohmann::ordered_json::array();
    for (std::size_t jj = 0; jj < n_obj; ++jj) {
      auto e = at(i, jj);
      cols.push_back(std::vector<double>(e.begin(), e.end()));
    }
    rows.push_back(std::move(cols));
  }
  j["values"] = std::move(rows);
  return j.dump();
}

std::uint64_t EdgeTensor::build_count() {
  return g_edge_tensor_builds.load(std::memory_order_relaxed);
}

void EdgeTensor::reset_build_count() {
  g_edge_tensor_builds.store(0, std::memory_order_relaxed);
}

}  // namespace grt
