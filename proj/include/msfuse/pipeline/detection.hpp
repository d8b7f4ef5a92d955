#pragma once

#include "msfuse/arch/fusion_stage.hpp"
#include "msfuse/geometry.hpp"

namespace msfuse {

struct Detection {
  BBox bbox;
  /// Pedestrian confidence in [0, 1].
  float score = 0.0f;
  FusionStage source = FusionStage::none_color;

  friend bool operator==(const Detection&, const Detection&) = default;
};

}  // namespace msfuse
