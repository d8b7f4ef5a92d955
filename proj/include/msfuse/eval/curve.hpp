#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "msfuse/eval/ground_truth.hpp"
#include "msfuse/pipeline/detection.hpp"

namespace msfuse {

/// One operating point: detections with score >= threshold are kept.
struct CurvePoint {
  double threshold = 0.0;
  double fppi = 0.0;
  double miss_rate = 1.0;

  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

/// Miss rate against false positives per image, one point per distinct
/// detection score, in order of decreasing threshold (non-decreasing fppi).
/// Without any detection the curve is the single point (0, 1).
struct MRFPPICurve {
  std::vector<CurvePoint> points;
  std::size_t n_images = 0;
  std::size_t n_gts = 0;
};

/// Per-image detections and ground truths, index-aligned. Ground truths are
/// filtered with filter_reasonable(min_height). Throws ContractViolation when
/// the lists differ in length or no gt is kept.
MRFPPICurve mr_fppi_curve(std::span<const std::vector<Detection>> dets,
                          std::span<const std::vector<GroundTruth>> gts, double iou_thresh = 0.5,
                          float min_height = kReasonableMinHeight);

/// Geometric mean of the miss rate step-sampled at n_points log-spaced fppi
/// values in [lo, hi]. Each sample reads the last point with fppi <= sample,
/// or the first point when there is none; miss rates are clamped to >= 1e-10.
double log_avg_miss_rate(const MRFPPICurve& curve, double lo = 0.1, double hi = 1.0,
                         std::size_t n_points = 9);

/// Fraction of kept gts matched by the first k boxes of each image at
/// iou_thresh, with the greedy matcher. Boxes must be in objectness order.
double proposal_recall(std::span<const std::vector<BBox>> boxes,
                       std::span<const std::vector<GroundTruth>> gts, std::size_t k,
                       double iou_thresh = 0.5, float min_height = kReasonableMinHeight);

}  // namespace msfuse
