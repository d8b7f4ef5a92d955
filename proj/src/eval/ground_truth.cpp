#include "msfuse/eval/ground_truth.hpp"

namespace msfuse {

FilteredGts filter_reasonable(std::span<const GroundTruth> gts, float min_height) {
  FilteredGts out;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const GroundTruth& g = gts[i];
    if (!g.occluded && !g.truncated && g.height() >= min_height) {
      out.kept.push_back(g.bbox);
      out.kept_index.push_back(i);
    } else {
      out.ignored.push_back(g.bbox);
    }
  }
  return out;
}

}  // namespace msfuse
