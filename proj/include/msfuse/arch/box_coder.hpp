#pragma once

#include <array>
#include <span>
#include <vector>

#include "msfuse/geometry.hpp"

namespace msfuse {

/// (dx, dy, dw, dh): center offsets in units of the reference size, then log
/// size ratios.
using BoxDelta = std::array<float, 4>;

BoxDelta encode_bbox(const BBox& reference, const BBox& target);

/// Inverse of encode_bbox. Log-size terms are capped so a wild regression
/// output cannot overflow.
BBox decode_bbox(const BBox& reference, const BoxDelta& delta);

struct ProposalLabel {
  bool positive = false;
  /// Index of the best-overlapping ground truth, -1 when there is none.
  int gt_index = -1;
  double max_iou = 0.0;
  /// Regression target towards gts[gt_index]; zero for negatives.
  BoxDelta target{0.0f, 0.0f, 0.0f, 0.0f};
};

/// A proposal is positive iff its best IoU with any ground truth is strictly
/// greater than pos_iou. Ties pick the lowest gt index.
std::vector<ProposalLabel> assign_proposal_labels(std::span<const BBox> proposals,
                                                  std::span<const BBox> gts,
                                                  double pos_iou = 0.5);

/// RPN anchor labels: +1 positive, 0 negative, -1 not sampled.
struct AnchorTargets {
  std::vector<int> labels;
  std::vector<BoxDelta> targets;
};

/// Positive when IoU >= pos_iou with some gt, or when the anchor is a gt's
/// best match; negative below neg_iou. Anchors overlapping an ignored box by
/// more than 0.5 IoU are never negatives.
AnchorTargets assign_anchor_labels(std::span<const BBox> anchors, std::span<const BBox> gts,
                                   std::span<const BBox> ignored, double pos_iou = 0.7,
                                   double neg_iou = 0.3);

}  // namespace msfuse
