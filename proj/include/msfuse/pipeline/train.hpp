#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "msfuse/arch/detector.hpp"
#include "msfuse/data/image_pair.hpp"

namespace msfuse {

/// Two learning-rate phases of SGD over the training set.
struct TrainSchedule {
  std::size_t epochs_phase1 = 4;
  double lr_phase1 = 0.001;
  std::size_t epochs_phase2 = 2;
  double lr_phase2 = 0.0001;
  std::uint64_t seed = 0;

  std::size_t total_epochs() const { return epochs_phase1 + epochs_phase2; }
  double lr_for_epoch(std::size_t epoch) const {
    return epoch < epochs_phase1 ? lr_phase1 : lr_phase2;
  }
  /// Throws ConfigError for non-positive or non-finite rates.
  void validate() const;
};

/// Minibatch sampling and loss settings; one image pair per step.
struct TrainOptions {
  std::size_t rpn_batch = 128;
  double rpn_positive_fraction = 0.5;
  double rpn_positive_iou = 0.7;
  double rpn_negative_iou = 0.3;
  std::size_t head_batch = 64;
  std::size_t head_max_positives = 16;
  double head_positive_iou = 0.5;
  /// RPN proposals handed to the head sampler per step.
  std::size_t proposals_per_step = 300;
  double momentum = 0.9;
  /// Smooth-L1 transition point for RPN and head regression.
  double rpn_smooth_l1_beta = 1.0 / 9.0;
  double head_smooth_l1_beta = 1.0;
  /// Only reasonable objects are positives; others are ignored.
  float min_height = kReasonableMinHeight;
};

struct StepLoss {
  double rpn_cls = 0.0;
  double rpn_bbox = 0.0;
  double head_cls = 0.0;
  double head_bbox = 0.0;

  double total() const { return rpn_cls + rpn_bbox + head_cls + head_bbox; }
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  StepLoss mean;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  double initial_loss() const { return epochs.empty() ? 0.0 : epochs.front().mean.total(); }
  double final_loss() const { return epochs.empty() ? 0.0 : epochs.back().mean.total(); }
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Joint RPN + detection-head training with momentum SGD. Deterministic in
/// schedule.seed. Throws ContractViolation for an empty dataset and
/// TrainingDiverged when a step produces a non-finite loss.
TrainLog train(DetectorModel& model, std::span<const LabeledPair> data,
               const TrainSchedule& schedule, const TrainOptions& options = {},
               const EpochCallback& on_epoch = {});

}  // namespace msfuse
