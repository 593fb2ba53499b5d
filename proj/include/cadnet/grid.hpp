#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "cadnet/error.hpp"
#include "cadnet/tensor.hpp"

namespace cadnet {

/// Ordered list of detector class names. Channel order in every grid follows
/// this vocabulary exactly.
class ClassVocabulary {
 public:
  ClassVocabulary() = default;
  explicit ClassVocabulary(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.empty()) throw config_error("class vocabulary must not be empty");
    for (std::size_t i = 0; i < names_.size(); ++i)
      for (std::size_t j = i + 1; j < names_.size(); ++j)
        if (names_[i] == names_[j]) throw config_error("duplicate class name: " + names_[i]);
  }

  static ClassVocabulary aerial_default() {
    return ClassVocabulary(
        {"car", "pedestrian", "van", "truck", "bicycle", "motorbike", "trailer", "bus"});
  }

  int size() const { return static_cast<int>(names_.size()); }
  const std::string& name(int index) const { return names_.at(static_cast<std::size_t>(index)); }
  const std::vector<std::string>& names() const { return names_; }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<int>(i);
    throw data_error("unknown class name: " + name);
  }

  bool contains(const std::string& name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
  }

  bool operator==(const ClassVocabulary& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
};

/// S x S x C grid of per-cell class scores, every value in [0, 1].
struct DetectionGrid {
  int size = 0;         // S
  int class_count = 0;  // C
  Tensor<float> scores;

  DetectionGrid() = default;
  DetectionGrid(int s, int c) : size(s), class_count(c), scores({s, s, c}) {
    if (s <= 0 || c <= 0) throw config_error("grid dimensions must be positive");
  }

  float& at(int row, int col, int cls) { return scores(row, col, cls); }
  float at(int row, int col, int cls) const { return scores(row, col, cls); }

  void validate() const {
    if (scores.rank() != 3 || scores.extent(0) != size || scores.extent(1) != size ||
        scores.extent(2) != class_count)
      throw data_error("detection grid storage does not match its dimensions");
    for (std::int64_t i = 0; i < scores.numel(); ++i)
      if (!(scores[i] >= 0.0f && scores[i] <= 1.0f))
        throw data_error("detection grid score outside [0, 1]");
  }
};

/// One raw detector box before suppression. Box geometry lives in grid units:
/// the center is (col + dx, row + dy) and the extent is width x height cells.
struct RawDetection {
  int row = 0;
  int col = 0;
  float dx = 0.5f;
  float dy = 0.5f;
  float width = 1.0f;
  float height = 1.0f;
  float objectness = 0.0f;
  std::vector<float> class_probs;

  int top_class() const {
    return static_cast<int>(std::max_element(class_probs.begin(), class_probs.end()) -
                            class_probs.begin());
  }
};

/// Context attached to a frame: where, when, and what the frame looked like.
struct ContextRecord {
  double latitude = 0.0;
  double longitude = 0.0;
  double time_of_day = 0.0;  // seconds since midnight, [0, 86400)
  std::vector<float> frame_activation;
};

struct GroundTruthCell {
  int row = 0;
  int col = 0;
  int cls = 0;

  friend bool operator==(const GroundTruthCell&, const GroundTruthCell&) = default;
  friend auto operator<=>(const GroundTruthCell&, const GroundTruthCell&) = default;
};

enum class AnomalyKind { none, point, contextual };

inline const char* anomaly_kind_name(AnomalyKind kind) {
  switch (kind) {
    case AnomalyKind::point: return "point";
    case AnomalyKind::contextual: return "contextual";
    default: return "none";
  }
}

inline AnomalyKind anomaly_kind_from_name(const std::string& name) {
  if (name == "point") return AnomalyKind::point;
  if (name == "contextual") return AnomalyKind::contextual;
  if (name == "none") return AnomalyKind::none;
  throw data_error("unknown anomaly kind: " + name);
}

/// One dataset record: an encoded frame with its context and, for evaluation
/// sets, the injected ground-truth anomaly cells.
struct Sample {
  std::uint64_t id = 0;
  std::string point_id;
  std::string heading;
  std::string altitude_band;
  DetectionGrid grid;
  ContextRecord context;
  AnomalyKind kind = AnomalyKind::none;
  std::vector<GroundTruthCell> ground_truth;
};

struct DatasetMeta {
  int grid_size = 13;
  int frame_dim = 256;
  ClassVocabulary classes = ClassVocabulary::aerial_default();

  int class_count() const { return classes.size(); }
};

struct Dataset {
  DatasetMeta meta;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

/// Intersection over union of two boxes in grid units. Degenerate boxes with
/// zero union area yield 0.
inline double iou(const RawDetection& a, const RawDetection& b) {
  const double ax0 = a.col + a.dx - a.width * 0.5, ax1 = a.col + a.dx + a.width * 0.5;
  const double ay0 = a.row + a.dy - a.height * 0.5, ay1 = a.row + a.dy + a.height * 0.5;
  const double bx0 = b.col + b.dx - b.width * 0.5, bx1 = b.col + b.dx + b.width * 0.5;
  const double by0 = b.row + b.dy - b.height * 0.5, by1 = b.row + b.dy + b.height * 0.5;
  const double ix = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double iy = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = ix * iy;
  const double uni = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

/// Greedy per-class non-maximum suppression. Detections are visited in order
/// of descending objectness (ties broken by input order); a detection
/// survives when its IoU with every already-kept detection of the same
/// dominant class stays below the threshold.
inline std::vector<RawDetection> nms(const std::vector<RawDetection>& detections,
                                     double iou_threshold) {
  if (iou_threshold <= 0.0 || iou_threshold > 1.0)
    throw config_error("nms threshold must lie in (0, 1]");
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].objectness > detections[b].objectness;
  });
  std::vector<RawDetection> kept;
  for (std::size_t idx : order) {
    const RawDetection& cand = detections[idx];
    if (cand.class_probs.empty()) throw data_error("detection without class probabilities");
    bool suppressed = false;
    for (const RawDetection& winner : kept) {
      if (winner.top_class() != cand.top_class()) continue;
      if (iou(winner, cand) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

/// Collapses surviving detections into the S x S x C encoder input. Each cell
/// channel holds objectness * class probability; when several detections land
/// in one cell the maximum per channel wins. Offsets are dropped on purpose:
/// the anomaly signal of interest is "what is where", not box geometry.
inline DetectionGrid build_encoder_input(const std::vector<RawDetection>& detections,
                                         int grid_size, int class_count) {
  DetectionGrid grid(grid_size, class_count);
  for (const RawDetection& det : detections) {
    if (det.row < 0 || det.row >= grid_size || det.col < 0 || det.col >= grid_size)
      throw data_error("detection cell (" + std::to_string(det.row) + ", " +
                       std::to_string(det.col) + ") outside the grid");
    if (static_cast<int>(det.class_probs.size()) != class_count)
      throw data_error("detection carries " + std::to_string(det.class_probs.size()) +
                       " class probabilities, expected " + std::to_string(class_count));
    if (!(det.objectness >= 0.0f && det.objectness <= 1.0f))
      throw data_error("objectness outside [0, 1]");
    for (int c = 0; c < class_count; ++c) {
      const float p = det.class_probs[static_cast<std::size_t>(c)];
      if (!(p >= 0.0f && p <= 1.0f)) throw data_error("class probability outside [0, 1]");
      float& cell = grid.at(det.row, det.col, c);
      cell = std::max(cell, det.objectness * p);
    }
  }
  return grid;
}

}  // namespace cadnet
