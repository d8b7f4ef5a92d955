#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "msfuse/geometry.hpp"
#include "msfuse/pipeline/detection.hpp"

namespace msfuse {

/// Assignment of one image's detections to its kept ground truths. Indices
/// refer to the detection list and the kept gt list passed to the matcher.
struct MatchResult {
  double iou_thresh = 0.5;
  /// (detection, gt) pairs.
  std::vector<std::pair<std::size_t, std::size_t>> tp;
  std::vector<std::size_t> fp;
  /// Detections absorbed by an ignored gt; counted as neither TP nor FP.
  std::vector<std::size_t> ignored;
  std::vector<std::size_t> missed;

  std::size_t evaluated() const { return tp.size() + fp.size(); }
};

/// Greedy matching in list order: each detection takes the highest-IoU
/// unmatched kept gt with IoU > iou_thresh (ties to the lowest index), else
/// is absorbed by any ignored gt with IoU > iou_thresh, else is a false
/// positive. Throws ContractViolation unless dets are sorted by descending score.
MatchResult match_detections(std::span<const Detection> dets, std::span<const BBox> kept,
                             std::span<const BBox> ignored = {}, double iou_thresh = 0.5);

/// Box-only variant used for proposal recall; boxes are taken in list order.
MatchResult match_boxes(std::span<const BBox> boxes, std::span<const BBox> kept,
                        std::span<const BBox> ignored, double iou_thresh);

}  // namespace msfuse
