#include "msfuse/pipeline/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "msfuse/arch/box_coder.hpp"
#include "msfuse/errors.hpp"
#include "msfuse/nn/ops.hpp"
#include "msfuse/nn/optim.hpp"

namespace msfuse {

using nn::Tensor;

namespace {

// Smooth L1 and its derivative.
double smooth_l1(double x, double beta) {
  const double a = std::abs(x);
  return a < beta ? 0.5 * x * x / beta : a - 0.5 * beta;
}
double smooth_l1_grad(double x, double beta) {
  if (std::abs(x) < beta) return x / beta;
  return x > 0 ? 1.0 : -1.0;
}

// Random subset of `pool` of at most n elements, in pool order.
std::vector<std::size_t> sample(std::vector<std::size_t> pool, std::size_t n,
                                std::mt19937_64& rng) {
  if (pool.size() <= n) return pool;
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(n);
  std::sort(pool.begin(), pool.end());
  return pool;
}

StepLoss rpn_loss(const DetectorModel& model, const FeatureTrace& tr, const FilteredGts& gts,
                  const TrainOptions& opt, std::mt19937_64& rng, Tensor& g_cls, Tensor& g_bbox) {
  const auto& anchors = model.anchor_box_list();
  const AnchorTargets t = assign_anchor_labels(anchors, gts.kept, gts.ignored,
                                               opt.rpn_positive_iou, opt.rpn_negative_iou);
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t i = 0; i < t.labels.size(); ++i) {
    if (t.labels[i] == 1) pos.push_back(i);
    if (t.labels[i] == 0) neg.push_back(i);
  }
  const auto max_pos = static_cast<std::size_t>(
      std::floor(opt.rpn_positive_fraction * static_cast<double>(opt.rpn_batch)));
  pos = sample(std::move(pos), max_pos, rng);
  neg = sample(std::move(neg), opt.rpn_batch - pos.size(), rng);

  g_cls = Tensor(tr.rpn_cls.shape());
  g_bbox = Tensor(tr.rpn_bbox.shape());
  StepLoss loss;
  const std::size_t n = pos.size() + neg.size();
  if (n == 0) return loss;
  const double inv_n = 1.0 / static_cast<double>(n);
  const std::size_t a_per = model.config().anchors_per_cell();
  const std::size_t fw = model.config().feature_w();
  auto locate = [&](std::size_t idx) {
    const std::size_t a = idx % a_per;
    const std::size_t cell = idx / a_per;
    return std::array<std::size_t, 3>{a, cell / fw, cell % fw};
  };
  auto add_cls = [&](std::size_t idx, double label) {
    const auto [a, y, x] = locate(idx);
    const double z = tr.rpn_cls.at(0, a, y, x);
    // numerically stable binary cross-entropy with logits
    loss.rpn_cls += (std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z)))) * inv_n;
    const double p = 1.0 / (1.0 + std::exp(-z));
    g_cls.at(0, a, y, x) = static_cast<float>((p - label) * inv_n);
  };
  for (std::size_t idx : pos) add_cls(idx, 1.0);
  for (std::size_t idx : neg) add_cls(idx, 0.0);
  for (std::size_t idx : pos) {
    const auto [a, y, x] = locate(idx);
    for (std::size_t j = 0; j < 4; ++j) {
      const double d = tr.rpn_bbox.at(0, a * 4 + j, y, x) - t.targets[idx][j];
      loss.rpn_bbox += smooth_l1(d, opt.rpn_smooth_l1_beta) * inv_n;
      g_bbox.at(0, a * 4 + j, y, x) =
          static_cast<float>(smooth_l1_grad(d, opt.rpn_smooth_l1_beta) * inv_n);
    }
  }
  return loss;
}

struct HeadBatch {
  std::vector<BBox> rois;
  std::vector<int> labels;
  std::vector<BoxDelta> targets;
};

HeadBatch sample_head_batch(const std::vector<Proposal>& proposals, const FilteredGts& gts,
                            const TrainOptions& opt, std::mt19937_64& rng) {
  std::vector<BBox> candidates;
  for (const Proposal& p : proposals) candidates.push_back(p.bbox);
  candidates.insert(candidates.end(), gts.kept.begin(), gts.kept.end());
  const auto labels = assign_proposal_labels(candidates, gts.kept, opt.head_positive_iou);
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (labels[i].positive) {
      pos.push_back(i);
      continue;
    }
    // a box that only overlaps an unreasonable object is neither
    bool near_ignored = false;
    for (const BBox& ig : gts.ignored) {
      near_ignored = near_ignored || iou(candidates[i], ig) > opt.head_positive_iou;
    }
    if (!near_ignored) neg.push_back(i);
  }
  pos = sample(std::move(pos), std::min(opt.head_max_positives, opt.head_batch), rng);
  neg = sample(std::move(neg), opt.head_batch - pos.size(), rng);
  HeadBatch b;
  for (std::size_t i : pos) {
    b.rois.push_back(candidates[i]);
    b.labels.push_back(1);
    BoxDelta t = labels[i].target;
    for (std::size_t j = 0; j < 4; ++j) t[j] /= kHeadDeltaScale[j];
    b.targets.push_back(t);
  }
  for (std::size_t i : neg) {
    b.rois.push_back(candidates[i]);
    b.labels.push_back(0);
    b.targets.push_back({0, 0, 0, 0});
  }
  return b;
}

StepLoss head_loss(const HeadTrace& h, const HeadBatch& batch, const TrainOptions& opt,
                   Tensor& g_cls, Tensor& g_deltas) {
  StepLoss loss;
  const std::size_t n = batch.rois.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  const Tensor probs = nn::softmax(h.cls_logits);
  g_cls = Tensor(h.cls_logits.shape());
  g_deltas = Tensor(h.deltas.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const auto label = static_cast<std::size_t>(batch.labels[r]);
    // log-softmax directly from the logits for stability
    const double z0 = h.cls_logits.at(r, 0, 0, 0);
    const double z1 = h.cls_logits.at(r, 1, 0, 0);
    const double m = std::max(z0, z1);
    const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
    loss.head_cls += (lse - (label == 1 ? z1 : z0)) * inv_n;
    for (std::size_t c = 0; c < 2; ++c) {
      g_cls.at(r, c, 0, 0) =
          static_cast<float>((probs.at(r, c, 0, 0) - (c == label ? 1.0 : 0.0)) * inv_n);
    }
    if (label != 1) continue;
    for (std::size_t j = 0; j < 4; ++j) {
      const double d = h.deltas.at(r, j, 0, 0) - batch.targets[r][j];
      loss.head_bbox += smooth_l1(d, opt.head_smooth_l1_beta) * inv_n;
      g_deltas.at(r, j, 0, 0) =
          static_cast<float>(smooth_l1_grad(d, opt.head_smooth_l1_beta) * inv_n);
    }
  }
  return loss;
}

}  // namespace

void TrainSchedule::validate() const {
  auto check = [](double lr, const char* what) {
    if (!(std::isfinite(lr) && lr > 0.0)) {
      throw ConfigError(std::string(what) + " must be a positive learning rate");
    }
  };
  check(lr_phase1, "lr_phase1");
  check(lr_phase2, "lr_phase2");
}

TrainLog train(DetectorModel& model, std::span<const LabeledPair> data,
               const TrainSchedule& schedule, const TrainOptions& opt,
               const EpochCallback& on_epoch) {
  schedule.validate();
  if (data.empty()) throw ContractViolation("train: empty dataset");
  if (model.stage() == FusionStage::score) {
    throw ContractViolation("train: score fusion trains its two models separately");
  }
  for (const LabeledPair& p : data) require_aligned(p.images);

  std::mt19937_64 rng(schedule.seed);
  nn::MomentumSgd sgd(static_cast<float>(opt.momentum));
  const auto params = model.parameters();
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  TrainLog log;
  for (std::size_t epoch = 0; epoch < schedule.total_epochs(); ++epoch) {
    const double lr = schedule.lr_for_epoch(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    StepLoss sum;
    for (std::size_t step = 0; step < order.size(); ++step) {
      const LabeledPair& ex = data[order[step]];
      const FilteredGts gts = filter_reasonable(ex.objects, opt.min_height);
      const FeatureTrace tr = model.forward(ex.images.view());

      Tensor g_rpn_cls;
      Tensor g_rpn_bbox;
      StepLoss loss = rpn_loss(model, tr, gts, opt, rng, g_rpn_cls, g_rpn_bbox);

      const auto proposals = proposals_from_trace(model, tr, opt.proposals_per_step);
      const HeadBatch batch = sample_head_batch(proposals, gts, opt, rng);
      Tensor g_cls;
      Tensor g_deltas;
      HeadTrace head;
      if (!batch.rois.empty()) {
        head = model.head_forward(tr, batch.rois);
        const StepLoss hl = head_loss(head, batch, opt, g_cls, g_deltas);
        loss.head_cls = hl.head_cls;
        loss.head_bbox = hl.head_bbox;
      }
      if (!std::isfinite(loss.total())) {
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch + 1) +
                               ", step " + std::to_string(step + 1) + " (image " +
                               ex.images.image_id + ")");
      }
      model.zero_grad();
      model.backward(tr, g_rpn_cls, g_rpn_bbox, batch.rois.empty() ? nullptr : &head, g_cls,
                     g_deltas);
      sgd.step(params, nn::collect_gradients(params), static_cast<float>(lr));

      sum.rpn_cls += loss.rpn_cls;
      sum.rpn_bbox += loss.rpn_bbox;
      sum.head_cls += loss.head_cls;
      sum.head_bbox += loss.head_bbox;
    }
    const double inv = 1.0 / static_cast<double>(order.size());
    EpochLog e{epoch + 1, lr,
               {sum.rpn_cls * inv, sum.rpn_bbox * inv, sum.head_cls * inv, sum.head_bbox * inv}};
    log.epochs.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  return log;
}

}  // namespace msfuse
