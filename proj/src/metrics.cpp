#include "vdet/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace vdet::metrics {

namespace {

std::int64_t total_gt(const std::vector<ScanBoxes>& scans) {
  std::int64_t n = 0;
  for (const auto& s : scans) n += static_cast<std::int64_t>(s.ground_truth.size());
  return n;
}

// Score descending; equal scores fall back to (scan, index) so the order is total.
void rank(std::vector<MatchedPrediction>& m) {
  std::stable_sort(m.begin(), m.end(), [](const MatchedPrediction& a, const MatchedPrediction& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.scan != b.scan) return a.scan < b.scan;
    return a.index < b.index;
  });
}

}  // namespace

std::vector<MatchedPrediction> match_predictions(const std::vector<ScanBoxes>& scans, double iou_threshold) {
  std::vector<MatchedPrediction> out;
  for (std::size_t s = 0; s < scans.size(); ++s) {
    const auto& preds = scans[s].predictions;
    const auto& gts = scans[s].ground_truth;
    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
    std::vector<bool> taken(gts.size(), false);
    for (std::size_t i : order) {
      MatchedPrediction m{preds[i].score, false, s, i, -1};
      double best = iou_threshold;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (taken[g] || gts[g].slice != preds[i].slice) continue;
        const double v = iou(preds[i], gts[g]);
        if (v >= best && (m.matched_gt < 0 || v > best)) {
          best = v;
          m.matched_gt = static_cast<std::int64_t>(g);
        }
      }
      if (m.matched_gt >= 0) {
        taken[static_cast<std::size_t>(m.matched_gt)] = true;
        m.true_positive = true;
      }
      out.push_back(m);
    }
  }
  return out;
}

FrocResult froc_sensitivity(const std::vector<ScanBoxes>& scans, std::vector<double> fp_levels, double iou_threshold) {
  const std::int64_t n_gt = total_gt(scans);
  if (n_gt == 0) throw UndefinedMetricError("FROC sensitivity is undefined without ground-truth lesions");
  auto matched = match_predictions(scans, iou_threshold);
  rank(matched);

  // Operating points: empty set, then one point after each distinct score.
  std::vector<std::pair<double, double>> points{{0.0, 0.0}};  // (mean FPs per scan, sensitivity)
  const double n_scans = static_cast<double>(scans.size());
  std::int64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < matched.size(); ++i) {
    (matched[i].true_positive ? tp : fp) += 1;
    if (i + 1 < matched.size() && matched[i + 1].score == matched[i].score) continue;
    points.emplace_back(static_cast<double>(fp) / n_scans, static_cast<double>(tp) / static_cast<double>(n_gt));
  }

  FrocResult r;
  r.fp_levels = std::move(fp_levels);
  for (double level : r.fp_levels) {
    double best = 0.0;
    for (const auto& [mfp, sens] : points) {
      if (mfp <= level) best = std::max(best, sens);
    }
    r.sensitivity.push_back(best);
  }
  r.average = r.sensitivity.empty()
                  ? 0.0
                  : std::accumulate(r.sensitivity.begin(), r.sensitivity.end(), 0.0) /
                        static_cast<double>(r.sensitivity.size());
  return r;
}

double average_precision(const std::vector<ScanBoxes>& scans, double iou_threshold) {
  const std::int64_t n_gt = total_gt(scans);
  if (n_gt == 0) throw UndefinedMetricError("average precision is undefined without ground-truth lesions");
  auto matched = match_predictions(scans, iou_threshold);
  rank(matched);

  std::vector<double> recall, precision;
  std::int64_t tp = 0;
  for (std::size_t i = 0; i < matched.size(); ++i) {
    if (matched[i].true_positive) ++tp;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  // Precision envelope: best precision at any recall at or beyond this rank.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

EvalReport evaluate(const std::vector<ScanBoxes>& scans, double iou_threshold) {
  EvalReport r;
  r.froc = froc_sensitivity(scans, {1, 2, 4, 8}, iou_threshold);
  r.map = average_precision(scans, iou_threshold);
  r.scans = static_cast<std::int64_t>(scans.size());
  r.ground_truth = total_gt(scans);
  for (const auto& m : match_predictions(scans, iou_threshold)) (m.true_positive ? r.true_positives : r.false_positives) += 1;
  r.false_negatives = r.ground_truth - r.true_positives;
  return r;
}

}  // namespace vdet::metrics
