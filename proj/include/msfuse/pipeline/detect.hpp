#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "msfuse/arch/detector.hpp"
#include "msfuse/data/image_pair.hpp"
#include "msfuse/pipeline/detection.hpp"

namespace msfuse {

struct DetectOptions {
  /// Detections must score strictly above this.
  float score_thresh = 0.5f;
  double nms_thresh = 0.3;
  std::size_t top_k = 300;
};

/// Proposals, head scoring and box refinement, NMS, then the score filter.
/// Sorted by descending score. Throws InputError for a misaligned pair.
std::vector<Detection> detect(const DetectorModel& model, const ImagePair& images,
                              const DetectOptions& options = {});

std::vector<Detection> detect_from_trace(const DetectorModel& model, const FeatureTrace& trace,
                                         const DetectOptions& options);

struct ScoreFusionWeights {
  float color = 0.5f;
  float thermal = 0.5f;
};

inline float fused_score(float color_score, float thermal_score, const ScoreFusionWeights& w) {
  return std::clamp(w.color * color_score + w.thermal * thermal_score, 0.0f, 1.0f);
}

/// Two single-modality detectors exchange scores: every detection of one
/// model is re-scored by the other model's head on the same box, the fused
/// score is the weighted sum, and the union goes through NMS and the score
/// filter. A model with weight 0 contributes no detections of its own.
std::vector<Detection> score_fuse(const DetectorModel& color_model,
                                  const DetectorModel& thermal_model, const ImagePair& images,
                                  const ScoreFusionWeights& weights = {},
                                  const DetectOptions& options = {});

}  // namespace msfuse
