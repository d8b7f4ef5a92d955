#include "msfuse/arch/box_coder.hpp"

#include <algorithm>
#include <cmath>

namespace msfuse {

namespace {
// log(1000 / 16), the usual cap on predicted log-size ratios
constexpr double kMaxLogRatio = 4.135166556742356;
}  // namespace

BoxDelta encode_bbox(const BBox& reference, const BBox& target) {
  require_valid(reference, "encode_bbox reference");
  require_valid(target, "encode_bbox target");
  const double rw = reference.width();
  const double rh = reference.height();
  const double rcx = reference.x1 + 0.5 * rw;
  const double rcy = reference.y1 + 0.5 * rh;
  const double tw = target.width();
  const double th = target.height();
  const double tcx = target.x1 + 0.5 * tw;
  const double tcy = target.y1 + 0.5 * th;
  return {static_cast<float>((tcx - rcx) / rw), static_cast<float>((tcy - rcy) / rh),
          static_cast<float>(std::log(tw / rw)), static_cast<float>(std::log(th / rh))};
}

BBox decode_bbox(const BBox& reference, const BoxDelta& delta) {
  require_valid(reference, "decode_bbox reference");
  const double rw = reference.width();
  const double rh = reference.height();
  const double cx = reference.x1 + 0.5 * rw + static_cast<double>(delta[0]) * rw;
  const double cy = reference.y1 + 0.5 * rh + static_cast<double>(delta[1]) * rh;
  const double w = rw * std::exp(std::min(static_cast<double>(delta[2]), kMaxLogRatio));
  const double h = rh * std::exp(std::min(static_cast<double>(delta[3]), kMaxLogRatio));
  return {static_cast<float>(cx - 0.5 * w), static_cast<float>(cy - 0.5 * h),
          static_cast<float>(cx + 0.5 * w), static_cast<float>(cy + 0.5 * h)};
}

std::vector<ProposalLabel> assign_proposal_labels(std::span<const BBox> proposals,
                                                  std::span<const BBox> gts, double pos_iou) {
  for (const BBox& g : gts) require_valid(g, "assign_proposal_labels gt");
  std::vector<ProposalLabel> out(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    require_valid(proposals[i], "assign_proposal_labels proposal");
    ProposalLabel& label = out[i];
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(proposals[i], gts[g]);
      if (v > label.max_iou) {
        label.max_iou = v;
        label.gt_index = static_cast<int>(g);
      }
    }
    label.positive = label.gt_index >= 0 && label.max_iou > pos_iou;
    if (label.positive) {
      label.target = encode_bbox(proposals[i], gts[static_cast<std::size_t>(label.gt_index)]);
    }
  }
  return out;
}

AnchorTargets assign_anchor_labels(std::span<const BBox> anchors, std::span<const BBox> gts,
                                   std::span<const BBox> ignored, double pos_iou,
                                   double neg_iou) {
  AnchorTargets t;
  t.labels.assign(anchors.size(), -1);
  t.targets.assign(anchors.size(), BoxDelta{0, 0, 0, 0});
  std::vector<double> best_for_gt(gts.size(), 0.0);
  std::vector<double> best_iou(anchors.size(), 0.0);
  std::vector<int> best_gt(anchors.size(), -1);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[a], gts[g]);
      if (v > best_iou[a]) {
        best_iou[a] = v;
        best_gt[a] = static_cast<int>(g);
      }
      best_for_gt[g] = std::max(best_for_gt[g], v);
    }
  }
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    bool near_ignored = false;
    for (const BBox& ig : ignored) near_ignored = near_ignored || iou(anchors[a], ig) > 0.5;
    if (best_iou[a] < neg_iou && !near_ignored) t.labels[a] = 0;
    if (best_iou[a] >= pos_iou) t.labels[a] = 1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (best_for_gt[g] > 0.0 && iou(anchors[a], gts[g]) == best_for_gt[g]) {
        t.labels[a] = 1;
        best_gt[a] = static_cast<int>(g);
      }
    }
    if (t.labels[a] == 1) {
      t.targets[a] = encode_bbox(anchors[a], gts[static_cast<std::size_t>(best_gt[a])]);
    }
  }
  return t;
}

}  // namespace msfuse
