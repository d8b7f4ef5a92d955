#include "msfuse/eval/curve.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "msfuse/errors.hpp"
#include "msfuse/eval/match.hpp"

namespace msfuse {

namespace {

struct Outcome {
  float score;
  int tp;
  int fp;
};

void check_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ContractViolation(std::string(what) + ": " + std::to_string(a) +
                            " detection lists for " + std::to_string(b) + " ground-truth lists");
  }
}

}  // namespace

MRFPPICurve mr_fppi_curve(std::span<const std::vector<Detection>> dets,
                          std::span<const std::vector<GroundTruth>> gts, double iou_thresh,
                          float min_height) {
  check_aligned(dets.size(), gts.size(), "mr_fppi_curve");
  MRFPPICurve curve;
  curve.n_images = gts.size();
  std::vector<Outcome> outcomes;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const FilteredGts f = filter_reasonable(gts[i], min_height);
    curve.n_gts += f.kept.size();
    std::vector<Detection> sorted = dets[i];
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    const MatchResult m = match_detections(sorted, f.kept, f.ignored, iou_thresh);
    for (const auto& [d, g] : m.tp) outcomes.push_back({sorted[d].score, 1, 0});
    for (std::size_t d : m.fp) outcomes.push_back({sorted[d].score, 0, 1});
    for (std::size_t d : m.ignored) outcomes.push_back({sorted[d].score, 0, 0});
  }
  if (curve.n_gts == 0) {
    throw ContractViolation("mr_fppi_curve: no reasonable ground truth, miss rate undefined");
  }
  if (outcomes.empty()) {
    curve.points.push_back({0.0, 0.0, 1.0});
    return curve;
  }
  std::stable_sort(outcomes.begin(), outcomes.end(),
                   [](const Outcome& a, const Outcome& b) { return a.score > b.score; });
  const double n_img = static_cast<double>(curve.n_images);
  const double n_gt = static_cast<double>(curve.n_gts);
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    tp += static_cast<std::size_t>(outcomes[i].tp);
    fp += static_cast<std::size_t>(outcomes[i].fp);
    if (i + 1 < outcomes.size() && outcomes[i + 1].score == outcomes[i].score) continue;
    curve.points.push_back({outcomes[i].score, static_cast<double>(fp) / n_img,
                            1.0 - static_cast<double>(tp) / n_gt});
  }
  return curve;
}

double log_avg_miss_rate(const MRFPPICurve& curve, double lo, double hi, std::size_t n_points) {
  if (curve.points.empty()) throw ContractViolation("log_avg_miss_rate: empty curve");
  if (!(lo > 0.0 && hi >= lo) || n_points == 0) {
    throw ContractViolation("log_avg_miss_rate: need 0 < lo <= hi and at least one sample");
  }
  const double llo = std::log10(lo);
  const double lhi = std::log10(hi);
  double log_sum = 0.0;
  for (std::size_t k = 0; k < n_points; ++k) {
    const double t = n_points == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(n_points - 1);
    const double sample = std::pow(10.0, llo + t * (lhi - llo));
    double mr = curve.points.front().miss_rate;
    for (const CurvePoint& p : curve.points) {
      if (p.fppi <= sample) mr = p.miss_rate;
    }
    log_sum += std::log(std::max(mr, 1e-10));
  }
  return std::exp(log_sum / static_cast<double>(n_points));
}

double proposal_recall(std::span<const std::vector<BBox>> boxes,
                       std::span<const std::vector<GroundTruth>> gts, std::size_t k,
                       double iou_thresh, float min_height) {
  check_aligned(boxes.size(), gts.size(), "proposal_recall");
  std::size_t matched = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const FilteredGts f = filter_reasonable(gts[i], min_height);
    total += f.kept.size();
    const std::size_t n = std::min(k, boxes[i].size());
    const std::span<const BBox> top(boxes[i].data(), n);
    matched += match_boxes(top, f.kept, {}, iou_thresh).tp.size();
  }
  if (total == 0) throw ContractViolation("proposal_recall: no reasonable ground truth");
  return static_cast<double>(matched) / static_cast<double>(total);
}

}  // namespace msfuse
