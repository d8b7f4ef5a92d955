#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "msfuse/data/image_pair.hpp"

namespace msfuse {

/// Which modality shows a pedestrian.
enum class Visibility { both, color_only, thermal_only };

std::string_view to_string(Visibility v);
Visibility visibility_from_string(std::string_view text);

struct SynthParams {
  std::size_t n_images = 500;
  std::size_t n_test_images = 100;
  std::size_t image_h = 80;
  std::size_t image_w = 64;
  std::size_t min_pedestrians = 1;
  std::size_t max_pedestrians = 3;
  float min_height = 40.0f;
  float max_height = 76.0f;
  double p_both = 0.5;
  double p_color_only = 0.25;
  double p_thermal_only = 0.25;
  /// Mean number of single-modality distractors per image.
  double distractor_density = 1.5;
  /// Standard deviation of per-pixel Gaussian noise.
  double noise = 0.03;
  double night_fraction = 0.3;
  /// Chance that a pedestrian is placed across the image border.
  double p_truncated = 0.1;
  std::uint64_t seed = 0;

  /// Throws ConfigError for an invalid mix, sizes or ranges.
  void validate() const;
};

/// A generated image pair with annotations and the per-object visibility.
struct SynthImage {
  LabeledPair labeled;
  std::vector<Visibility> visibility;
};

struct SynthData {
  std::vector<SynthImage> train;
  std::vector<SynthImage> test;
};

/// Pixel values are already quantized to 8 bits so the in-memory data equals
/// what the image files hold. Deterministic in params.seed.
SynthData synth_images(const SynthParams& params);

/// Writes images/, train.txt, test.txt and params.txt under `out_dir`.
/// Identical params give byte-identical files.
void synth_dataset(const SynthParams& params, const std::filesystem::path& out_dir);

std::vector<LabeledPair> labeled_pairs(const std::vector<SynthImage>& images);

}  // namespace msfuse
