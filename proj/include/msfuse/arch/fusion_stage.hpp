#pragma once

#include <array>
#include <string>
#include <string_view>

#include "msfuse/errors.hpp"

namespace msfuse {

/// Where the color and thermal branches meet. none_* are single-modality
/// detectors; score combines two independently trained none_* models.
enum class FusionStage { none_color, none_thermal, early, halfway, late, score };

inline constexpr std::array<FusionStage, 6> kAllFusionStages{
    FusionStage::none_color, FusionStage::none_thermal, FusionStage::early,
    FusionStage::halfway,    FusionStage::late,         FusionStage::score};

inline std::string_view to_string(FusionStage s) {
  switch (s) {
    case FusionStage::none_color: return "none-color";
    case FusionStage::none_thermal: return "none-thermal";
    case FusionStage::early: return "early";
    case FusionStage::halfway: return "halfway";
    case FusionStage::late: return "late";
    case FusionStage::score: return "score";
  }
  return "unknown";
}

inline FusionStage fusion_stage_from_string(std::string_view text) {
  for (FusionStage s : kAllFusionStages) {
    if (to_string(s) == text) return s;
  }
  throw ConfigError("unknown fusion stage '" + std::string(text) +
                    "' (expected none-color, none-thermal, early, halfway, late or score)");
}

inline bool is_two_branch(FusionStage s) {
  return s == FusionStage::early || s == FusionStage::halfway || s == FusionStage::late;
}

inline bool uses_color(FusionStage s) { return s != FusionStage::none_thermal; }
inline bool uses_thermal(FusionStage s) { return s != FusionStage::none_color; }

}  // namespace msfuse
