#pragma once

#include <cstdint>
#include <vector>

#include "vdet/box.hpp"
#include "vdet/tensor.hpp"

namespace vdet::metrics {

/// Raised when a metric has no ground truth to be measured against.
struct UndefinedMetricError : Error {
  using Error::Error;
};

/// Predictions and ground truth of one scan (volume); boxes carry their slice index.
struct ScanBoxes {
  std::vector<LesionBox> predictions;
  std::vector<LesionBox> ground_truth;
};

struct MatchedPrediction {
  double score = 0;
  bool true_positive = false;
  std::size_t scan = 0;
  std::size_t index = 0;  // position in the scan's prediction list
  std::int64_t matched_gt = -1;
};

/// Greedy matching by descending score within each scan: a prediction takes the unmatched GT on
/// its slice with the highest IoU, provided IoU >= iou_threshold. Ties in score keep list order.
std::vector<MatchedPrediction> match_predictions(const std::vector<ScanBoxes>& scans, double iou_threshold = 0.5);

struct FrocResult {
  std::vector<double> fp_levels;
  std::vector<double> sensitivity;
  double average = 0;
};

/// Sensitivity at the best operating point whose mean FPs per scan does not exceed each level
/// (step function, no interpolation).
FrocResult froc_sensitivity(const std::vector<ScanBoxes>& scans, std::vector<double> fp_levels = {1, 2, 4, 8},
                            double iou_threshold = 0.5);

/// All-point interpolated average precision.
double average_precision(const std::vector<ScanBoxes>& scans, double iou_threshold = 0.5);

struct EvalReport {
  FrocResult froc;
  double map = 0;
  std::int64_t true_positives = 0, false_positives = 0, false_negatives = 0;
  std::int64_t scans = 0, ground_truth = 0;
};

/// Metrics plus TP/FP/FN counts over all emitted predictions.
EvalReport evaluate(const std::vector<ScanBoxes>& scans, double iou_threshold = 0.5);

}  // namespace vdet::metrics
