#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include "grt/edge_features.hpp"
#include "grt/rng.hpp"
#include "oracles.hpp"

using namespace grt;

namespace {

BoundingBox random_box(Rng& rng, double min_size = 0.02) {
  const double w = rng.uniform(min_size, 0.6);
  const double h = rng.uniform(min_size, 0.6);
  const double x = rng.uniform(0.0, 1.0 - w);
  const double y = rng.uniform(0.0, 1.0 - h);
  return {x, y, x + w, y + h};
}

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

// Rasterized oracle: classify a pair by pixel membership on a 512x512 grid.
// A pixel belongs to a box when its center lies inside the closed box.
struct PixelRect {
  int x0, x1, y0, y1;  // inclusive; empty when x0 > x1 or y0 > y1
  bool empty() const { return x0 > x1 || y0 > y1; }
};

PixelRect rasterize(const BoundingBox& b, int res) {
  auto lo = [&](double v) {
    return static_cast<int>(std::ceil(v * res - 0.5));
  };
  auto hi = [&](double v) {
    return static_cast<int>(std::floor(v * res - 0.5));
  };
  return {lo(b.x_min), hi(b.x_max), lo(b.y_min), hi(b.y_max)};
}

bool rect_subset(const PixelRect& inner, const PixelRect& outer) {
  if (inner.empty()) return true;
  if (outer.empty()) return false;
  return inner.x0 >= outer.x0 && inner.x1 <= outer.x1 &&
         inner.y0 >= outer.y0 && inner.y1 <= outer.y1;
}

bool rect_intersects(const PixelRect& a, const PixelRect& b) {
  if (a.empty() || b.empty()) return false;
  return std::max(a.x0, b.x0) <= std::min(a.x1, b.x1) &&
         std::max(a.y0, b.y0) <= std::min(a.y1, b.y1);
}

SpatialInteraction pixel_grid_interaction(const BoundingBox& bi,
                                          const BoundingBox& bj,
                                          bool same_object, int res = 512) {
  if (same_object) return SpatialInteraction::kSelf;
  const PixelRect ri = rasterize(bi, res);
  const PixelRect rj = rasterize(bj, res);
  if (rect_subset(rj, ri)) return SpatialInteraction::kContains;
  if (rect_subset(ri, rj)) return SpatialInteraction::kIn;
  if (rect_intersects(ri, rj)) return SpatialInteraction::kOverlap;
  return SpatialInteraction::kNoOverlap;
}

// Pairs whose box edges come within two pixels of each other rasterize
// ambiguously and are excluded from the oracle comparison.
bool boundary_too_close(const BoundingBox& a, const BoundingBox& b,
                        double threshold) {
  const double ax[] = {a.x_min, a.x_max};
  const double bx[] = {b.x_min, b.x_max};
  const double ay[] = {a.y_min, a.y_max};
  const double by[] = {b.y_min, b.y_max};
  for (double u : ax)
    for (double v : bx)
      if (std::abs(u - v) < threshold) return true;
  for (double u : ay)
    for (double v : by)
      if (std::abs(u - v) < threshold) return true;
  return false;
}

EdgeInput image_input(Modality m, BoundingBox box, std::vector<double> emb) {
  EdgeInput in;
  in.modality = m;
  in.box = box;
  in.embedding = std::move(emb);
  return in;
}

}  // namespace

TEST_CASE("appearance similarity of identical vectors is one") {
  std::vector<double> u{0.3, -1.2, 4.0};
  CHECK(appearance_similarity(u, u) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("appearance similarity of orthogonal vectors is zero") {
  std::vector<double> u{1.0, 0.0, 0.0};
  std::vector<double> v{0.0, 2.5, 0.0};
  CHECK(appearance_similarity(u, v) == doctest::Approx(0.0));
}

TEST_CASE("appearance similarity of negated vector is minus one") {
  std::vector<double> u{0.5, 2.0, -1.0};
  std::vector<double> v{-0.5, -2.0, 1.0};
  CHECK(appearance_similarity(u, v) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("appearance similarity near-zero norm convention") {
  std::vector<double> u{1e-13, 0.0};
  std::vector<double> v{1.0, 1.0};
  CHECK(appearance_similarity(u, v) == 0.0);
  CHECK(appearance_similarity(v, u) == 0.0);
}

TEST_CASE("appearance similarity is symmetric and bounded") {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    auto u = random_vec(rng, 8);
    auto v = random_vec(rng, 8);
    const double s = appearance_similarity(u, v);
    CHECK(s == appearance_similarity(v, u));
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("spatial translation self is zero") {
  BoundingBox b{0.2, 0.3, 0.6, 0.9};
  auto t = spatial_translation(b, b);
  CHECK(t[0] == 0.0);
  CHECK(t[1] == 0.0);
}

TEST_CASE("spatial translation between opposite corners") {
  BoundingBox bi{0.0, 0.0, 0.0, 0.0};  // center (0,0)
  BoundingBox bj{1.0, 1.0, 1.0, 1.0};  // center (1,1)
  auto t = spatial_translation(bi, bj);
  CHECK(t[0] == doctest::Approx(1.0));
  CHECK(t[1] == doctest::Approx(1.0));
}

TEST_CASE("spatial translation antisymmetry and range") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    BoundingBox bi = random_box(rng);
    BoundingBox bj = random_box(rng);
    auto tij = spatial_translation(bi, bj);
    auto tji = spatial_translation(bj, bi);
    CHECK(tij[0] == doctest::Approx(-tji[0]).epsilon(1e-12));
    CHECK(tij[1] == doctest::Approx(-tji[1]).epsilon(1e-12));
    CHECK(std::abs(tij[0]) <= 1.0);
    CHECK(std::abs(tij[1]) <= 1.0);
  }
}

TEST_CASE("object-size translation normalization stays in range") {
  Rng rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    BoundingBox bi = random_box(rng);
    BoundingBox bj = random_box(rng);
    auto t = spatial_translation(bi, bj, TranslationNorm::kObjectSize);
    CHECK(std::abs(t[0]) <= 1.0);
    CHECK(std::abs(t[1]) <= 1.0);
  }
}

TEST_CASE("spatial interaction self edge") {
  BoundingBox b{0.1, 0.1, 0.4, 0.4};
  CHECK(spatial_interaction(b, b, true) == SpatialInteraction::kSelf);
}

TEST_CASE("spatial interaction containment both directions") {
  BoundingBox outer{0.0, 0.0, 1.0, 1.0};
  BoundingBox inner{0.25, 0.25, 0.5, 0.5};
  CHECK(spatial_interaction(outer, inner, false) ==
        SpatialInteraction::kContains);
  CHECK(spatial_interaction(inner, outer, false) == SpatialInteraction::kIn);
}

TEST_CASE("identical boxes on distinct objects classify as contains") {
  BoundingBox b{0.2, 0.2, 0.7, 0.7};
  CHECK(spatial_interaction(b, b, false) == SpatialInteraction::kContains);
}

TEST_CASE("spatial interaction agrees with 512x512 pixel-grid oracle") {
  Rng rng(23);
  int compared = 0;
  for (int trial = 0; trial < 200; ++trial) {
    BoundingBox bi = random_box(rng);
    BoundingBox bj = random_box(rng);
    if (boundary_too_close(bi, bj, 2.0 / 512.0)) continue;
    ++compared;
    CHECK(spatial_interaction(bi, bj, false) ==
          pixel_grid_interaction(bi, bj, false));
  }
  CHECK(compared > 100);  // the exclusion must not trivialize the check
}

TEST_CASE("contains and in are dual") {
  Rng rng(29);
  for (int trial = 0; trial < 200; ++trial) {
    BoundingBox bi = random_box(rng);
    BoundingBox bj = rng.uniform() < 0.3
                         ? BoundingBox{bi.x_min + 0.01, bi.y_min + 0.01,
                                       bi.x_max - 0.01, bi.y_max - 0.01}
                         : random_box(rng);
    const bool ij_contains =
        spatial_interaction(bi, bj, false) == SpatialInteraction::kContains;
    const bool ji_in =
        spatial_interaction(bj, bi, false) == SpatialInteraction::kIn;
    CHECK(ij_contains == ji_in);
  }
}

TEST_CASE("modality pair labels") {
  CHECK(modality_pair(Modality::kVisualObject, Modality::kOcrToken) ==
        ModalityPair::kObjToOcr);
  CHECK(modality_pair(Modality::kOcrToken, Modality::kOcrToken) ==
        ModalityPair::kOcrToOcr);
  CHECK(modality_pair(Modality::kOcrToken, Modality::kVisualObject) ==
        ModalityPair::kOcrToObj);
  CHECK(modality_pair(Modality::kVisualObject, Modality::kVisualObject) ==
        ModalityPair::kObjToObj);
  CHECK(!modality_pair(Modality::kQuestion, Modality::kOcrToken).has_value());
  CHECK(!modality_pair(Modality::kVisualObject, Modality::kDecodedAnswer)
             .has_value());
}

TEST_CASE("all-question inputs build an all-zero tensor") {
  std::vector<EdgeInput> inputs(3);
  EdgeTensor e = build_edge_tensor(inputs);
  CHECK(e.n_obj == 3);
  CHECK(e.d_e == 12);
  for (double v : e.values) CHECK(v == 0.0);
}

TEST_CASE("single visual object self edge layout") {
  Rng rng(31);
  std::vector<EdgeInput> inputs{image_input(
      Modality::kVisualObject, {0.1, 0.1, 0.5, 0.5}, random_vec(rng, 6))};
  EdgeTensor e = build_edge_tensor(inputs);
  auto self = e.at(0, 0);
  CHECK(self[0] == doctest::Approx(1.0).epsilon(1e-12));  // cos(u, u)
  CHECK(self[1] == 0.0);
  CHECK(self[2] == 0.0);
  CHECK(self[3] == 1.0);  // is_self
  CHECK(self[4] == 0.0);
  CHECK(self[5] == 0.0);
  CHECK(self[6] == 0.0);
  CHECK(self[7] == 0.0);
  CHECK(self[8] == 1.0);  // is_obj_to_obj
  CHECK(self[9] == 0.0);
  CHECK(self[10] == 0.0);
  CHECK(self[11] == 0.0);
}

TEST_CASE("disabling appearance shrinks the layout") {
  Rng rng(33);
  EdgeFeatureMask mask;
  mask.appearance = false;
  CHECK(mask.d_e() == 11);
  CHECK(mask.slot_map()[0] == "translation_dx");

  std::vector<EdgeInput> inputs{
      image_input(Modality::kVisualObject, {0.0, 0.0, 0.4, 0.4}, {}),
      image_input(Modality::kOcrToken, {0.6, 0.6, 0.8, 0.8}, {})};
  inputs[0].embedding.reset();  // not required when appearance is off
  inputs[1].embedding.reset();
  EdgeTensor e = build_edge_tensor(inputs, mask);
  CHECK(e.d_e == 11);
  auto edge = e.at(0, 1);
  CHECK(edge[0] == doctest::Approx(0.5));   // dx
  CHECK(edge[1] == doctest::Approx(0.5));   // dy
  CHECK(edge[2 + 4] == 1.0);                // not_overlap
  CHECK(edge[7 + 1] == 1.0);                // is_obj_to_ocr
}

TEST_CASE("missing box raises a data error naming the input") {
  std::vector<EdgeInput> inputs(2);
  inputs[1].modality = Modality::kOcrToken;
  CHECK_THROWS_WITH_AS(build_edge_tensor(inputs), doctest::Contains("input 1"),
                       std::runtime_error);
}

TEST_CASE("missing embedding raises only when appearance is enabled") {
  std::vector<EdgeInput> inputs{
      image_input(Modality::kVisualObject, {0.0, 0.0, 0.5, 0.5}, {})};
  inputs[0].embedding.reset();
  CHECK_THROWS_AS(build_edge_tensor(inputs), std::runtime_error);
  EdgeFeatureMask mask;
  mask.appearance = false;
  CHECK_NOTHROW(build_edge_tensor(inputs, mask));
}

TEST_CASE("zero rule holds for question and decoded-answer inputs") {
  Rng rng(37);
  std::vector<EdgeInput> inputs;
  inputs.push_back({});  // question
  inputs.push_back(image_input(Modality::kVisualObject, random_box(rng),
                               random_vec(rng, 5)));
  inputs.push_back(image_input(Modality::kOcrToken, random_box(rng),
                               random_vec(rng, 5)));
  EdgeInput dec;
  dec.modality = Modality::kDecodedAnswer;
  inputs.push_back(dec);

  EdgeTensor e = build_edge_tensor(inputs);
  for (std::size_t p : {std::size_t{0}, std::size_t{3}}) {
    for (std::size_t j = 0; j < e.n_obj; ++j) {
      for (double v : e.at(p, j)) CHECK(v == 0.0);
      for (double v : e.at(j, p)) CHECK(v == 0.0);
    }
  }
  // and the image-image edge is not zero
  double mag = 0.0;
  for (double v : e.at(1, 2)) mag += std::abs(v);
  CHECK(mag > 0.0);
}

TEST_CASE("one-hot segments contain at most a single one") {
  Rng rng(39);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<EdgeInput> inputs;
    for (int i = 0; i < 5; ++i) {
      const double roll = rng.uniform();
      if (roll < 0.3) {
        inputs.push_back({});
      } else {
        inputs.push_back(image_input(roll < 0.65 ? Modality::kVisualObject
                                                 : Modality::kOcrToken,
                                     random_box(rng), random_vec(rng, 4)));
      }
    }
    EdgeTensor e = build_edge_tensor(inputs);
    for (std::size_t i = 0; i < e.n_obj; ++i)
      for (std::size_t j = 0; j < e.n_obj; ++j) {
        auto edge = e.at(i, j);
        double inter = 0.0, mod = 0.0;
        for (int s = 3; s < 8; ++s) inter += edge[s];
        for (int s = 8; s < 12; ++s) mod += edge[s];
        CHECK(inter <= 1.0);
        CHECK(mod <= 1.0);
      }
  }
}

TEST_CASE("directional structure: translation negates, contains and in swap") {
  Rng rng(43);
  BoundingBox outer{0.1, 0.1, 0.9, 0.9};
  BoundingBox inner{0.3, 0.3, 0.5, 0.5};
  std::vector<EdgeInput> inputs{
      image_input(Modality::kVisualObject, outer, random_vec(rng, 4)),
      image_input(Modality::kOcrToken, inner, random_vec(rng, 4))};
  EdgeTensor e = build_edge_tensor(inputs);
  auto ij = e.at(0, 1);
  auto ji = e.at(1, 0);
  CHECK(ij[1] == doctest::Approx(-ji[1]).epsilon(1e-12));
  CHECK(ij[2] == doctest::Approx(-ji[2]).epsilon(1e-12));
  CHECK(ij[4] == 1.0);  // outer contains inner
  CHECK(ji[5] == 1.0);  // inner is in outer
  CHECK(ij[9] == 1.0);  // obj -> ocr
  CHECK(ji[10] == 1.0); // ocr -> obj
}

TEST_CASE("permuting inputs permutes both axes of the tensor") {
  Rng rng(47);
  std::vector<EdgeInput> inputs;
  inputs.push_back({});
  for (int i = 0; i < 4; ++i) {
    inputs.push_back(image_input(i % 2 == 0 ? Modality::kVisualObject
                                            : Modality::kOcrToken,
                                 random_box(rng), random_vec(rng, 6)));
  }
  EdgeTensor e = build_edge_tensor(inputs);

  std::vector<std::size_t> perm{3, 0, 4, 2, 1};
  std::vector<EdgeInput> permuted;
  for (std::size_t p : perm) permuted.push_back(inputs[p]);
  EdgeTensor ep = build_edge_tensor(permuted);

  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < perm.size(); ++j) {
      auto lhs = ep.at(i, j);
      auto rhs = e.at(perm[i], perm[j]);
      CHECK(oracle::max_abs_diff(lhs, rhs) == 0.0);
    }
}

TEST_CASE("json debug format round-trips the layout") {
  Rng rng(53);
  std::vector<EdgeInput> inputs{
      image_input(Modality::kVisualObject, random_box(rng), random_vec(rng, 4)),
      image_input(Modality::kOcrToken, random_box(rng), random_vec(rng, 4))};
  EdgeTensor e = build_edge_tensor(inputs);
  auto j = nlohmann::json::parse(e.to_json());
  CHECK(j["n_obj"] == 2);
  CHECK(j["d_e"] == 12);
  CHECK(j["slot_map"].size() == 12);
  CHECK(j["slot_map"][0] == "appearance_similarity");
  CHECK(j["values"].size() == 2);
  CHECK(j["values"][0][1].size() == 12);
  CHECK(j["values"][0][0][3] == 1.0);  // self edge one-hot
}

TEST_CASE("edge tensor build counter instruments every build") {
  EdgeTensor::reset_build_count();
  std::vector<EdgeInput> inputs(2);
  (void)build_edge_tensor(inputs);
  (void)build_edge_tensor(inputs);
  CHECK(EdgeTensor::build_count() == 2);
  EdgeTensor::reset_build_count();
  CHECK(EdgeTensor::build_count() == 0);
}
