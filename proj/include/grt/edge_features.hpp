#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace grt {

// Axis-aligned box in normalized image coordinates.
struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  bool valid() const {
    return x_min <= x_max && y_min <= y_max && x_min >= 0.0 && y_min >= 0.0 &&
           x_max <= 1.0 && y_max <= 1.0;
  }
};

enum class Modality { kQuestion, kVisualObject, kOcrToken, kDecodedAnswer };

inline bool is_image_origin(Modality m) {
  return m == Modality::kVisualObject || m == Modality::kOcrToken;
}

// Mutually exclusive pair labels, resolved in this priority order.
enum class SpatialInteraction {
  kSelf = 0,
  kContains = 1,
  kIn = 2,
  kOverlap = 3,
  kNoOverlap = 4,
};

enum class ModalityPair {
  kObjToObj = 0,
  kObjToOcr = 1,
  kOcrToObj = 2,
  kOcrToOcr = 3,
};

enum class TranslationNorm {
  kImageFrame,  // centers already normalized; range is [-1, 1] by construction
  kObjectSize,  // divide by the self box's width/height, clamped to [-1, 1]
};

// Per-feature enable flags; disabled features are removed from the layout.
struct EdgeFeatureMask {
  bool appearance = true;
  bool translation = true;
  bool interaction = true;
  bool modality_pair = true;

  std::size_t d_e() const {
    return (appearance ? 1 : 0) + (translation ? 2 : 0) +
           (interaction ? 5 : 0) + (modality_pair ? 4 : 0);
  }
  std::vector<std::string> slot_map() const;
  std::string to_string() const;
};

struct EdgeInput {
  Modality modality = Modality::kQuestion;
  std::optional<BoundingBox> box;
  std::optional<std::vector<double>> embedding;
};

// Dense n_obj x n_obj x d_e pairwise edge-feature tensor. Rows and columns
// touching question or decoded-answer inputs are all-zero.
struct EdgeTensor {
  std::size_t n_obj = 0;
  std::size_t d_e = 0;
  EdgeFeatureMask mask;
  std::vector<double> values;  // row-major (i, j, slot)

  std::span<const double> at(std::size_t i, std::size_t j) const {
    return {values.data() + (i * n_obj + j) * d_e, d_e};
  }
  std::string to_json() const;

  // Instrumentation for the baseline-isolation property: counts
  // build_edge_tensor invocations process-wide.
  static std::uint64_t build_count();
  static void reset_build_count();
};

// Cosine similarity; vectors with norm below 1e-12 compare as 0.
double appearance_similarity(std::span<const double> u,
                             std::span<const double> v);

// Center-to-center translation from box_i to box_j.
std::array<double, 2> spatial_translation(
    const BoundingBox& box_i, const BoundingBox& box_j,
    TranslationNorm norm = TranslationNorm::kImageFrame);

SpatialInteraction spatial_interaction(const BoundingBox& box_i,
                                       const BoundingBox& box_j,
                                       bool same_object);

// Defined only when both endpoints are image-origin.
std::optional<ModalityPair> modality_pair(Modality m_i, Modality m_j);

EdgeTensor build_edge_tensor(const std::vector<EdgeInput>& inputs,
                             const EdgeFeatureMask& mask = {},
                             TranslationNorm norm = TranslationNorm::kImageFrame);

}  // namespace grt
