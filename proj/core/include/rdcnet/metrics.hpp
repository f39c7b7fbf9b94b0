#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rdcnet/image.hpp"

namespace rdc {

/// Pairwise overlap statistics between predicted and ground-truth instances.
/// Pixels undefined in the ground truth are ignored everywhere.
struct Overlap {
  std::vector<std::uint16_t> pred_ids;  // sorted
  std::vector<std::uint16_t> gt_ids;    // sorted
  std::vector<std::int64_t> pred_area;
  std::vector<std::int64_t> gt_area;
  /// intersections[i * gt_ids.size() + j]
  std::vector<std::int64_t> intersections;

  std::int64_t intersection(std::size_t i, std::size_t j) const { return intersections[i * gt_ids.size() + j]; }
  std::int64_t union_area(std::size_t i, std::size_t j) const {
    return pred_area[i] + gt_area[j] - intersection(i, j);
  }
  double iou(std::size_t i, std::size_t j) const;
};

Overlap compute_overlap(const LabelMap& pred, const LabelMap& gt);

/// Row-major [n_pred x n_gt] matrix of IoU values.
struct IouMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

IouMatrix iou_matrix(const LabelMap& pred, const LabelMap& gt);

struct Match {
  std::size_t pred = 0;  // row index
  std::size_t gt = 0;    // column index
  double iou = 0.0;
};

/// Greedy one-to-one matching by descending IoU over pairs with IoU > t;
/// ties broken by (pred index, gt index).
std::vector<Match> match_at_threshold(const IouMatrix& ious, double threshold);

struct Prf1 {
  double precision = 1.0;
  double recall = 1.0;
  double f1 = 1.0;
};

/// precision = tp/(tp+fp) (0/0 -> 1), recall likewise, f1 harmonic mean
/// (both-empty -> 1, otherwise 0/0 -> 0).
Prf1 prf1(std::size_t tp, std::size_t n_pred, std::size_t n_gt);

/// Symmetric Best Dice.
double sbd(const LabelMap& pred, const LabelMap& gt);

/// Aggregated Jaccard Index; gt processed in ascending id order, each
/// prediction used at most once.
double aji(const LabelMap& pred, const LabelMap& gt);

struct ImageScores {
  std::string name;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 1.0;
  double recall = 1.0;
  double f1 = 1.0;
  double sbd = 1.0;
  double aji = 1.0;
};

ImageScores score_image(const LabelMap& pred, const LabelMap& gt, double iou_threshold, std::string name = {});

struct EvalReport {
  double iou_threshold = 0.5;
  std::vector<ImageScores> images;
  ImageScores mean;  // arithmetic mean over images (tp/fp/fn summed)
  /// (threshold, mean F1) over the sweep thresholds.
  std::vector<std::pair<double, double>> f1_curve;
};

/// The IoU sweep 0.50, 0.55, ..., 0.90.
std::vector<double> default_iou_sweep();

EvalReport evaluate(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                    const std::vector<std::string>& names, double iou_threshold,
                    const std::vector<double>& sweep = default_iou_sweep());

/// Human-readable report: a [per_image] TSV block, an [aggregate] key/value
/// block and an [f1_curve] TSV block.
std::string format_report(const EvalReport& report);

}  // namespace rdc
