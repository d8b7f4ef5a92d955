#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "msfuse/data/image_pair.hpp"
#include "msfuse/data/synth.hpp"
#include "msfuse/eval/ground_truth.hpp"
#include "msfuse/pipeline/detection.hpp"

namespace msfuse {

inline constexpr int kAnnotationVersion = 1;

/// One image of a split: where its frames live (relative to the annotation
/// file), its condition and its pedestrians. visibility is either empty or
/// parallel to objects.
struct AnnotationRecord {
  std::string image_id;
  std::string color_path;
  std::string thermal_path;
  Condition condition = Condition::day;
  std::vector<GroundTruth> objects;
  std::vector<Visibility> visibility;

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

std::string format_annotations(std::span<const AnnotationRecord> records);
/// `source` names the input in error messages.
std::vector<AnnotationRecord> parse_annotations(std::string_view text,
                                                const std::string& source = "<annotations>");

void save_annotations(const std::filesystem::path& path, std::span<const AnnotationRecord> records);
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path);

/// Annotations plus both frames of every record, resolved against the
/// annotation file's directory.
std::vector<LabeledPair> load_split(const std::filesystem::path& annotation_path);

/// Detections grouped by image id.
using DetectionSet = std::map<std::string, std::vector<Detection>>;

/// CSV with header "image_id,x1,y1,x2,y2,score". Coordinates use the
/// shortest round-trip form; scores are printed with 6 decimals. Images are
/// written in id order, detections in list order.
std::string format_detections(const DetectionSet& dets);
DetectionSet parse_detections(std::string_view text, const std::string& source = "<detections>",
                              FusionStage source_tag = FusionStage::none_color);

void save_detections(const std::filesystem::path& path, const DetectionSet& dets);
DetectionSet load_detections(const std::filesystem::path& path,
                             FusionStage source_tag = FusionStage::none_color);

}  // namespace msfuse
