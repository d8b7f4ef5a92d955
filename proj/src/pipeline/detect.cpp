#include "msfuse/pipeline/detect.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "msfuse/errors.hpp"
#include "msfuse/pipeline/nms.hpp"

namespace msfuse {

namespace {

std::vector<Detection> keep_above(std::vector<Detection> dets, float thresh) {
  std::erase_if(dets, [&](const Detection& d) { return !(d.score > thresh); });
  return dets;
}

}  // namespace

std::vector<Detection> detect_from_trace(const DetectorModel& model, const FeatureTrace& trace,
                                         const DetectOptions& options) {
  const auto proposals = proposals_from_trace(model, trace, options.top_k);
  if (proposals.empty()) return {};
  const auto dets = detection_head_forward(model, trace, proposals);
  return keep_above(nms(dets, options.nms_thresh), options.score_thresh);
}

std::vector<Detection> detect(const DetectorModel& model, const ImagePair& images,
                              const DetectOptions& options) {
  require_aligned(images);
  return detect_from_trace(model, model.forward(images.view()), options);
}

std::vector<Detection> score_fuse(const DetectorModel& color_model,
                                  const DetectorModel& thermal_model, const ImagePair& images,
                                  const ScoreFusionWeights& weights,
                                  const DetectOptions& options) {
  if (color_model.stage() != FusionStage::none_color ||
      thermal_model.stage() != FusionStage::none_thermal) {
    throw ContractViolation("score_fuse needs a none-color and a none-thermal model, got " +
                            std::string(to_string(color_model.stage())) + " and " +
                            std::string(to_string(thermal_model.stage())));
  }
  if (!(weights.color >= 0.0f && weights.thermal >= 0.0f) ||
      std::abs(static_cast<double>(weights.color) + weights.thermal - 1.0) > 1e-6) {
    throw ContractViolation("score_fuse weights must be non-negative and sum to 1");
  }
  require_aligned(images);
  const FeatureTrace color_trace = color_model.forward(images.view());
  const FeatureTrace thermal_trace = thermal_model.forward(images.view());
  DetectOptions unfiltered = options;
  unfiltered.score_thresh = -1.0f;

  std::vector<Detection> merged;
  auto exchange = [&](const DetectorModel& own, const FeatureTrace& own_trace,
                      const DetectorModel& other, const FeatureTrace& other_trace, bool own_is_color) {
    const float w_own = own_is_color ? weights.color : weights.thermal;
    const float w_other = own_is_color ? weights.thermal : weights.color;
    if (w_own == 0.0f) return;
    const auto dets = detect_from_trace(own, own_trace, unfiltered);
    if (dets.empty()) return;
    std::vector<float> other_scores(dets.size(), 0.0f);
    if (w_other != 0.0f) {
      std::vector<BBox> boxes;
      for (const Detection& d : dets) boxes.push_back(d.bbox);
      other_scores = score_boxes(other, other_trace, boxes);
    }
    for (std::size_t i = 0; i < dets.size(); ++i) {
      const float fused = own_is_color ? fused_score(dets[i].score, other_scores[i], weights)
                                       : fused_score(other_scores[i], dets[i].score, weights);
      merged.push_back({dets[i].bbox, fused, FusionStage::score});
    }
  };
  exchange(color_model, color_trace, thermal_model, thermal_trace, true);
  exchange(thermal_model, thermal_trace, color_model, color_trace, false);
  return keep_above(nms(merged, options.nms_thresh), options.score_thresh);
}

}  // namespace msfuse
