#include "msfuse/arch/anchors.hpp"

#include <cmath>
#include <string>

namespace msfuse {

float Anchor::width() const { return scale / std::sqrt(ratio); }
float Anchor::height() const { return scale * std::sqrt(ratio); }

BBox Anchor::box() const {
  const float hw = 0.5f * width();
  const float hh = 0.5f * height();
  return {center_x - hw, center_y - hh, center_x + hw, center_y + hh};
}

std::vector<Anchor> generate_anchors(std::size_t feat_h, std::size_t feat_w, float stride,
                                     std::span<const float> scales,
                                     std::span<const float> ratios) {
  if (scales.empty()) throw ContractViolation("generate_anchors: scales must not be empty");
  if (ratios.empty()) throw ContractViolation("generate_anchors: ratios must not be empty");
  if (!(stride > 0.0f)) throw ContractViolation("generate_anchors: stride must be positive");
  for (float r : ratios) {
    if (std::abs(r - 0.5f) < 1e-6f) {
      throw ContractViolation(
          "generate_anchors: anchor ratio 0.5 rejected; it describes wide boxes "
          "(height/width 0.5) while pedestrians are tall (height/width about 2)");
    }
    if (!(r > 0.0f)) throw ContractViolation("generate_anchors: ratios must be positive");
  }
  for (float s : scales) {
    if (!(s > 0.0f)) throw ContractViolation("generate_anchors: scales must be positive");
  }

  std::vector<Anchor> out;
  out.reserve(feat_h * feat_w * scales.size() * ratios.size());
  for (std::size_t i = 0; i < feat_h; ++i) {
    for (std::size_t j = 0; j < feat_w; ++j) {
      const float cx = (static_cast<float>(j) + 0.5f) * stride;
      const float cy = (static_cast<float>(i) + 0.5f) * stride;
      for (float s : scales) {
        for (float r : ratios) out.push_back({s, r, cx, cy, stride});
      }
    }
  }
  return out;
}

std::vector<BBox> anchor_boxes(std::span<const Anchor> anchors) {
  std::vector<BBox> out;
  out.reserve(anchors.size());
  for (const Anchor& a : anchors) out.push_back(a.box());
  return out;
}

}  // namespace msfuse
