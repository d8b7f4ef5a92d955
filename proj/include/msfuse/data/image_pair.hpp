#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "msfuse/arch/detector.hpp"
#include "msfuse/errors.hpp"
#include "msfuse/eval/ground_truth.hpp"
#include "msfuse/nn/tensor.hpp"

namespace msfuse {

enum class Condition { day, night };

inline std::string_view to_string(Condition c) { return c == Condition::day ? "day" : "night"; }

inline Condition condition_from_string(std::string_view text) {
  if (text == "day") return Condition::day;
  if (text == "night") return Condition::night;
  throw ConfigError("unknown condition '" + std::string(text) + "' (expected day or night)");
}

/// Aligned color (1,3,h,w) and thermal (1,1,h,w) frames, values in [0, 1].
struct ImagePair {
  std::string image_id;
  Condition condition = Condition::day;
  nn::Tensor color;
  nn::Tensor thermal;

  ImagePairView view() const { return {&color, &thermal}; }
};

/// Throws InputError unless both frames exist and share h and w.
inline void require_aligned(const ImagePair& p) {
  const nn::Shape c = p.color.shape();
  const nn::Shape t = p.thermal.shape();
  if (c.n != 1 || c.c != 3 || t.n != 1 || t.c != 1 || c.h != t.h || c.w != t.w) {
    throw InputError("image pair " + p.image_id + ": color " + c.str() + " and thermal " +
                     t.str() + " are not an aligned (1,3,h,w)/(1,1,h,w) pair");
  }
}

struct LabeledPair {
  ImagePair images;
  std::vector<GroundTruth> objects;
};

}  // namespace msfuse
