#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msfuse/arch/anchors.hpp"
#include "msfuse/arch/box_coder.hpp"
#include "msfuse/arch/fusion_stage.hpp"
#include "msfuse/geometry.hpp"
#include "msfuse/nn/layers.hpp"
#include "msfuse/pipeline/detection.hpp"

namespace msfuse {

/// Pooling stages of the template backbone before the fourth pool is removed.
inline constexpr std::size_t kTemplatePoolingStages = 4;
inline constexpr std::size_t kBackboneStages = 5;
/// A 2x2 max pool follows each of the first kPooledStages conv stages.
inline constexpr std::size_t kPooledStages = kTemplatePoolingStages - 1;
inline constexpr std::size_t kColorChannels = 3;
inline constexpr std::size_t kThermalChannels = 1;

/// Desk-scale detector hyperparameters.
struct DetectorConfig {
  std::size_t image_h = 80;
  std::size_t image_w = 64;
  /// Output channels of conv stages C1..C5.
  std::array<std::size_t, kBackboneStages> stage_widths{8, 16, 32, 32, 32};
  /// F6 / F7 width.
  std::size_t fc_width = 128;
  std::size_t rpn_width = 32;
  /// NIN output channels after a conv-stage junction; 0 keeps the width of
  /// the stage the junction follows.
  std::size_t nin_width = 0;
  std::vector<float> anchor_scales{24.0f, 36.0f, 48.0f};
  std::vector<float> anchor_ratios{1.0f, 2.0f};
  std::size_t roi_size = 7;
  float rpn_nms_iou = 0.7f;
  std::size_t rpn_pre_nms = 2000;
  std::size_t rpn_post_nms = 300;
  /// Proposals narrower or shorter than this many pixels are discarded.
  float rpn_min_size = 2.0f;

  std::size_t feature_stride() const { return std::size_t{1} << kPooledStages; }
  std::size_t feature_h() const { return image_h / feature_stride(); }
  std::size_t feature_w() const { return image_w / feature_stride(); }
  std::size_t anchors_per_cell() const { return anchor_scales.size() * anchor_ratios.size(); }

  /// Throws ConfigError when widths are zero or the image is not divisible by
  /// the pooling factor.
  void validate() const;

  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

/// Region proposal with objectness in [0, 1].
struct Proposal {
  BBox bbox;
  float objectness = 0.0f;
};

/// Aligned input pair; a single-modality model reads only its own image.
struct ImagePairView {
  const nn::Tensor* color = nullptr;
  const nn::Tensor* thermal = nullptr;
};

/// Static description of one layer of a built graph, from a dry-run pass.
struct LayerInfo {
  std::string name;
  nn::LayerKind kind;
  std::string hyperparameters;
  nn::Shape output;
  std::vector<const nn::Param*> params;
};

/// Activations of one forward pass through the backbone and RPN head.
struct FeatureTrace {
  std::vector<std::vector<nn::Tensor>> branch;
  nn::Tensor junction;                 // concatenated branch output (early/halfway)
  std::vector<nn::Tensor> trunk;       // layers after the junction
  nn::Tensor rpn_input;                // concatenated C5 maps (late only)
  std::vector<nn::Tensor> rpn;         // shared RPN conv
  nn::Tensor rpn_cls;                  // (1, A, fh, fw) objectness logits
  nn::Tensor rpn_bbox;                 // (1, 4A, fh, fw) anchor deltas
};

/// Activations of the detection head for a batch of RoIs.
struct HeadTrace {
  std::vector<BBox> rois;
  std::vector<nn::Tensor> pooled;                 // per head feature map (R, C, k, k)
  std::vector<std::vector<nn::Tensor>> fc;        // per head branch F6/F7 trace
  nn::Tensor joint;                               // concatenated F7 (R, F, 1, 1)
  nn::Tensor cls_logits;                          // (R, 2, 1, 1)
  nn::Tensor deltas;                              // (R, 4, 1, 1), normalized
};

/// Subtracted from every input pixel before the first convolution.
inline constexpr float kInputMean = 0.5f;

/// Scale applied to head regression outputs before decoding.
inline constexpr BoxDelta kHeadDeltaScale{0.1f, 0.1f, 0.2f, 0.2f};

/// One or two conv branches, an optional fusion junction (concat + NIN), an
/// RPN head and a RoI-pooled fully-connected detection head.
class DetectorModel {
 public:
  /// Builds the graph with zeroed parameters; see build_detector().
  DetectorModel(DetectorConfig config, FusionStage stage);

  DetectorModel(DetectorModel&&) = default;
  DetectorModel& operator=(DetectorModel&&) = default;

  /// Gaussian initialisation, deterministic in `seed`.
  void initialize(std::uint64_t seed);

  FusionStage stage() const { return stage_; }
  const DetectorConfig& config() const { return config_; }
  std::size_t branch_count() const { return branches_.size(); }
  bool has_junction() const { return junction_stage_.has_value(); }
  /// Conv stage (1-based) the junction follows, if any.
  std::optional<std::size_t> junction_stage() const { return junction_stage_; }
  /// NIN layer at the junction, if any.
  const nn::Conv2d* nin() const { return nin_; }
  std::size_t head_maps() const { return head_fc_.size(); }
  const std::vector<Anchor>& anchors() const { return anchors_; }
  const std::vector<BBox>& anchor_box_list() const { return anchor_boxes_; }

  std::vector<nn::Param*> parameters();
  std::vector<const nn::Param*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  /// Every layer in execution order with its output shape for a single
  /// image and a single RoI. Throws ContractViolation if any layer rejects
  /// its input shape.
  std::vector<LayerInfo> describe() const;

  FeatureTrace forward(const ImagePairView& images) const;
  HeadTrace head_forward(const FeatureTrace& trace, std::span<const BBox> rois) const;

  /// Accumulates parameter gradients. Empty gradient tensors skip that part.
  void backward(const FeatureTrace& trace, const nn::Tensor& grad_rpn_cls,
                const nn::Tensor& grad_rpn_bbox, const HeadTrace* head,
                const nn::Tensor& grad_cls_logits, const nn::Tensor& grad_deltas);

  /// Feature map(s) the RoI head pools from (both C5 maps for late fusion).
  std::vector<const nn::Tensor*> head_features(const FeatureTrace& trace) const;
  const nn::Tensor& rpn_features(const FeatureTrace& trace) const;

 private:
  void build();
  const nn::Tensor& branch_input(const ImagePairView& images, std::size_t branch) const;

  DetectorConfig config_;
  FusionStage stage_;
  std::optional<std::size_t> junction_stage_;
  std::vector<std::size_t> branch_channels_;
  std::vector<nn::Sequential> branches_;
  nn::Sequential trunk_;
  nn::Conv2d* nin_ = nullptr;
  nn::Sequential rpn_conv_;
  std::unique_ptr<nn::Conv2d> rpn_cls_;
  std::unique_ptr<nn::Conv2d> rpn_bbox_;
  std::vector<nn::Sequential> head_fc_;
  std::unique_ptr<nn::FullyConnected> cls_;
  std::unique_ptr<nn::FullyConnected> bbox_;
  std::vector<Anchor> anchors_;
  std::vector<BBox> anchor_boxes_;
};

/// Validates the configuration, builds the graph for `stage` and initialises
/// it from `seed`. Score fusion is not a single graph and is rejected.
DetectorModel build_detector(const DetectorConfig& config, FusionStage stage,
                             std::uint64_t seed);

/// Decoded RPN proposals: clipped, small boxes dropped, pre-NMS cap, NMS,
/// then the top_k by descending objectness.
std::vector<Proposal> proposals_from_trace(const DetectorModel& model, const FeatureTrace& trace,
                                           std::size_t top_k);

std::vector<Proposal> rpn_forward(const DetectorModel& model, const ImagePairView& images,
                                  std::size_t top_k = 300);

/// One detection per RoI: the decoded, clipped head regression and the
/// pedestrian softmax score.
std::vector<Detection> detections_from_head(const DetectorModel& model, const HeadTrace& head);

std::vector<Detection> detection_head_forward(const DetectorModel& model,
                                              const FeatureTrace& trace,
                                              std::span<const Proposal> proposals);

/// Pedestrian scores of the head for given boxes, without box refinement.
std::vector<float> score_boxes(const DetectorModel& model, const FeatureTrace& trace,
                               std::span<const BBox> boxes);

}  // namespace msfuse
