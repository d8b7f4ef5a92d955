#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "msfuse/data/image_pair.hpp"
#include "msfuse/eval/ground_truth.hpp"
#include "msfuse/eval/match.hpp"

namespace msfuse {

/// A detector's matching on one image, together with what partition_detections needs
/// to pair its false positives with another detector's.
struct ImageMatch {
  std::string image_id;
  Condition condition = Condition::day;
  /// Kept gts the match indices refer to.
  std::vector<BBox> kept;
  /// Detection boxes the match indices refer to.
  std::vector<BBox> boxes;
  MatchResult match;
};

/// Thresholds (score > score_thresh), filters gts with filter_reasonable and
/// matches. dets must be sorted by descending score.
ImageMatch match_image(const std::string& image_id, Condition condition,
                       std::span<const Detection> dets, std::span<const GroundTruth> gts,
                       float score_thresh = 0.5f, double iou_thresh = 0.5,
                       float min_height = kReasonableMinHeight);

/// Ground truths found by both, one or the other detector, and false
/// positives shared by both or raised by only one.
struct ComplementarityTable {
  std::size_t gt_count = 0;
  std::size_t tp_both = 0;
  std::size_t tp_a_only = 0;
  std::size_t tp_b_only = 0;
  std::size_t fp_both = 0;
  std::size_t fp_a_only = 0;
  std::size_t fp_b_only = 0;
  std::size_t n_images = 0;

  std::size_t tp_a() const { return tp_both + tp_a_only; }
  std::size_t tp_b() const { return tp_both + tp_b_only; }
  std::size_t fp_a() const { return fp_both + fp_a_only; }
  std::size_t fp_b() const { return fp_both + fp_b_only; }

  /// Throws ContractViolation when more gts are found than exist.
  void validate() const;

  friend bool operator==(const ComplementarityTable&, const ComplementarityTable&) = default;
};

/// Per-image matchings of detectors a and b against identical gt lists.
/// False positives of the two detectors are paired per image, highest IoU
/// first, when their IoU is >= fp_iou. Throws ContractViolation when the
/// images or their gts differ.
ComplementarityTable partition_detections(std::span<const ImageMatch> a, std::span<const ImageMatch> b,
                               double fp_iou = 0.5);

/// Greedy pairing of two box sets used by partition_detections: repeatedly joins the
/// highest-IoU pair with IoU >= min_iou (ties to the lowest a then b index).
std::vector<std::pair<std::size_t, std::size_t>> pair_boxes(std::span<const BBox> a,
                                                            std::span<const BBox> b,
                                                            double min_iou);

enum class FpDenominator { images, ground_truths };

std::string_view to_string(FpDenominator d);

/// A false-positive count divided by the named denominator.
struct FpRate {
  FpDenominator denominator = FpDenominator::images;
  std::size_t count = 0;
  std::size_t over = 0;
  /// NaN when the denominator is zero.
  double value = 0.0;
};

/// What an oracle fusion of the two detectors could reach: keep every true
/// detection of either and only the false positives both raise.
struct OracleBound {
  double union_detection_rate = 0.0;
  double detection_rate_a = 0.0;
  double detection_rate_b = 0.0;
  std::size_t shared_fp_count = 0;
  /// Indexed by FpDenominator.
  FpRate fp_rate_a[2];
  FpRate fp_rate_b[2];
  FpRate fp_rate_after[2];
};

/// Throws ContractViolation for gt_count == 0 or an invalid table.
OracleBound oracle_bound(const ComplementarityTable& table);

/// Tables over all images and per condition.
struct ComplementarityReport {
  ComplementarityTable all;
  ComplementarityTable day;
  ComplementarityTable night;

  friend bool operator==(const ComplementarityReport&, const ComplementarityReport&) = default;
};

ComplementarityReport partition_by_condition(std::span<const ImageMatch> a,
                                             std::span<const ImageMatch> b, double fp_iou = 0.5);

/// Aligned text table with one row per condition and the oracle bound of
/// every row that has gts. label_a/label_b name the detectors in headers.
std::string format_complementarity(const ComplementarityReport& report, const std::string& label_a,
                                   const std::string& label_b);

/// CSV: condition,images,gt,tp_both,tp_a_only,tp_b_only,fp_both,fp_a_only,fp_b_only
/// with rows all, day, night.
std::string complementarity_csv(const ComplementarityReport& report);

/// Reads complementarity_csv output back; throws ParseError with the line.
ComplementarityReport parse_complementarity_csv(std::string_view text,
                                                const std::string& source = "<complementarity>");

}  // namespace msfuse
