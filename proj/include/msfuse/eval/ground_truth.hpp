#pragma once

#include <span>
#include <vector>

#include "msfuse/geometry.hpp"

namespace msfuse {

/// Annotated pedestrian.
struct GroundTruth {
  BBox bbox;
  bool occluded = false;
  bool truncated = false;

  float height() const { return bbox.height(); }

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

inline constexpr float kReasonableMinHeight = 50.0f;

/// Ground truths split by the reasonable evaluation setting.
struct FilteredGts {
  std::vector<BBox> kept;
  std::vector<BBox> ignored;
  /// Index into the input list of each kept box.
  std::vector<std::size_t> kept_index;
};

/// kept: not occluded, not truncated and at least min_height tall (inclusive).
/// Everything else is ignored: it neither counts as a miss nor turns a
/// matching detection into a false positive.
FilteredGts filter_reasonable(std::span<const GroundTruth> gts,
                              float min_height = kReasonableMinHeight);

}  // namespace msfuse
