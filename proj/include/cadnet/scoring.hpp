#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "cadnet/error.hpp"
#include "cadnet/grid.hpp"
#include "cadnet/model.hpp"

namespace cadnet {

struct ScoreThresholds {
  double presence_floor = 0.5;   // a cell only counts as occupied above this
  double error_threshold = 0.6;  // flag when input - reconstruction exceeds this

  void validate() const {
    if (!(presence_floor >= 0 && presence_floor <= 1))
      throw config_error("presence floor must lie in [0, 1]");
    if (!(error_threshold > 0 && error_threshold < 1))
      throw config_error("error threshold must lie in (0, 1)");
  }
};

struct FlaggedCell {
  int row = 0;
  int col = 0;
  int cls = 0;
  float score = 0;           // detector score at the cell
  float reconstruction = 0;  // model output at the cell
  double error = 0;          // score - reconstruction
};

struct AnomalyReport {
  std::uint64_t sample_id = 0;
  std::string point_id;
  std::vector<FlaggedCell> flags;

  bool anomalous() const { return !flags.empty(); }
};

namespace detail {

template <typename T>
void flags_from_pair(const T* x, const T* xhat, int grid_size, int class_count,
                     const ScoreThresholds& th, std::vector<FlaggedCell>& out) {
  const std::int64_t n = static_cast<std::int64_t>(grid_size) * grid_size * class_count;
  for (std::int64_t i = 0; i < n; ++i) {
    const double score = static_cast<double>(x[i]);
    if (score < th.presence_floor) continue;
    const double err = score - static_cast<double>(xhat[i]);
    if (err <= th.error_threshold) continue;
    FlaggedCell cell;
    const int cc = class_count;
    cell.cls = static_cast<int>(i % cc);
    cell.col = static_cast<int>((i / cc) % grid_size);
    cell.row = static_cast<int>(i / (static_cast<std::int64_t>(cc) * grid_size));
    cell.score = static_cast<float>(score);
    cell.reconstruction = static_cast<float>(xhat[i]);
    cell.error = err;
    out.push_back(cell);
  }
}

/// Runs deterministic reconstructions (z = mu) over a dataset in batches and
/// hands each (input, reconstruction) pair to the visitor.
template <typename T, typename Visitor>
void for_each_reconstruction(const CadnetModel<T>& model, const Dataset& dataset, int batch_size,
                             Visitor&& visit) {
  if (dataset.empty()) throw data_error("dataset is empty");
  if (batch_size < 1) throw usage_error("batch size must be positive");
  const int cells = model.config().grid_size * model.config().grid_size *
                    model.config().class_count;
  auto& params = const_cast<CadnetModel<T>&>(model).params();
  for (std::size_t start = 0; start < dataset.samples.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(dataset.samples.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const Sample*> ptrs;
    ptrs.reserve(stop - start);
    for (std::size_t i = start; i < stop; ++i) ptrs.push_back(&dataset.samples[i]);
    Graph<T> g(&params);
    ModelBatch<T> batch = model.make_batch(ptrs);
    ForwardVars<T> fwd = model.forward(g, batch, nullptr);
    const Tensor<T>& xhat = g.value(fwd.xhat);
    for (std::size_t i = start; i < stop; ++i) {
      const std::int64_t off = static_cast<std::int64_t>(i - start) * cells;
      visit(i, batch.x.data() + off, xhat.data() + off);
    }
  }
}

}  // namespace detail

/// Scores one sample: reconstructs at the posterior mean and flags occupied
/// cells whose score exceeds the reconstruction by more than the threshold.
/// Cells the model over-predicts (negative error) are never flagged.
template <typename T>
AnomalyReport score(const CadnetModel<T>& model, const Sample& sample,
                    const ScoreThresholds& thresholds = {}) {
  thresholds.validate();
  Tensor<T> xhat = model.reconstruct(sample);
  AnomalyReport report;
  report.sample_id = sample.id;
  report.point_id = sample.point_id;
  Tensor<T> x({sample.grid.size, sample.grid.size, sample.grid.class_count});
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<T>(sample.grid.scores[i]);
  detail::flags_from_pair(x.data(), xhat.data(), sample.grid.size, sample.grid.class_count,
                          thresholds, report.flags);
  return report;
}

/// Mean over samples of the summed absolute reconstruction deviation,
/// evaluated at the posterior mean. The per-sample term is the grid-wide
/// sum of |x - xhat|; the dataset value is its mean.
template <typename T>
double dataset_reconstruction_error(const CadnetModel<T>& model, const Dataset& dataset,
                                    int batch_size = 256) {
  const int cells = model.config().grid_size * model.config().grid_size *
                    model.config().class_count;
  double total = 0;
  detail::for_each_reconstruction(model, dataset, batch_size,
                                  [&](std::size_t, const T* x, const T* xhat) {
                                    double sum = 0;
                                    for (int i = 0; i < cells; ++i)
                                      sum += std::abs(static_cast<double>(x[i]) -
                                                      static_cast<double>(xhat[i]));
                                    total += sum;
                                  });
  return total / static_cast<double>(dataset.size());
}

struct DetectionStats {
  std::size_t truth_cells = 0;    // injected ground-truth cells
  std::size_t detected = 0;       // ground-truth cells flagged
  std::size_t flagged = 0;        // all flagged cells
  std::size_t false_flags = 0;    // flagged cells not in the ground truth

  /// Percentage of injected anomaly cells the model flagged.
  double accuracy() const {
    return truth_cells ? 100.0 * static_cast<double>(detected) / static_cast<double>(truth_cells)
                       : 0.0;
  }

  /// Percentage of flags that hit no ground-truth cell; 0 when nothing was
  /// flagged.
  double false_positive_rate() const {
    return flagged ? 100.0 * static_cast<double>(false_flags) / static_cast<double>(flagged) : 0.0;
  }
};

/// Flags every sample of an evaluation set and compares against its injected
/// ground truth.
template <typename T>
DetectionStats evaluate_detection(const CadnetModel<T>& model, const Dataset& dataset,
                                  const ScoreThresholds& thresholds = {}, int batch_size = 256) {
  thresholds.validate();
  const int s = model.config().grid_size;
  const int c = model.config().class_count;
  DetectionStats stats;
  detail::for_each_reconstruction(
      model, dataset, batch_size, [&](std::size_t idx, const T* x, const T* xhat) {
        std::vector<FlaggedCell> flags;
        detail::flags_from_pair(x, xhat, s, c, thresholds, flags);
        const auto& truth = dataset.samples[idx].ground_truth;
        std::set<GroundTruthCell> truth_set(truth.begin(), truth.end());
        stats.truth_cells += truth.size();
        stats.flagged += flags.size();
        for (const auto& f : flags) {
          if (truth_set.count(GroundTruthCell{f.row, f.col, f.cls}))
            ++stats.detected;
          else
            ++stats.false_flags;
        }
      });
  return stats;
}

/// One row of the ablation table.
struct EvalRow {
  std::string variant;
  double recon_error = 0;          // held-out normal data
  double point_accuracy = 0;       // %
  double point_fpr = 0;            // %
  double contextual_accuracy = 0;  // %
};

inline std::string format_eval_table(const std::vector<EvalRow>& rows) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-14s %14s %18s %12s %22s\n", "Model", "Recon. error",
                "Point anom. (%)", "FPR (%)", "Contextual anom. (%)");
  out += line;
  out += std::string(84, '-') + "\n";
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-14s %14.4f %18.1f %12.1f %22.1f\n", r.variant.c_str(),
                  r.recon_error, r.point_accuracy, r.point_fpr, r.contextual_accuracy);
    out += line;
  }
  return out;
}

}  // namespace cadnet
