#include "msfuse/arch/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>

#include "msfuse/errors.hpp"
#include "msfuse/nn/ops.hpp"
#include "msfuse/pipeline/nms.hpp"

namespace msfuse {

using nn::Shape;
using nn::Tensor;

namespace {

std::string branch_prefix(FusionStage stage, std::size_t branch) {
  if (stage == FusionStage::none_thermal) return "thermal";
  return branch == 0 ? "color" : "thermal";
}

void add_stage(nn::Sequential& seq, const std::string& prefix, std::size_t stage,
               std::size_t in_ch, std::size_t out_ch) {
  const std::string s = std::to_string(stage);
  seq.add(std::make_unique<nn::Conv2d>(prefix + ".conv" + s, in_ch, out_ch, 3, 1, 1));
  seq.add(std::make_unique<nn::Relu>(prefix + ".relu" + s));
  if (stage <= kPooledStages) seq.add(std::make_unique<nn::MaxPool2x2>(prefix + ".pool" + s));
}

Tensor add_tensors(Tensor a, const Tensor& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.shape() != b.shape()) {
    throw ContractViolation("gradient shape " + a.shape().str() + " does not match " +
                            b.shape().str());
  }
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

void append_infos(std::vector<LayerInfo>& out, const nn::Sequential& seq, Shape& shape) {
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const nn::Layer& layer = seq.layer(i);
    try {
      shape = layer.output_shape(shape);
    } catch (const ContractViolation& e) {
      throw ContractViolation("layer " + layer.name() + ": " + e.what());
    }
    out.push_back({layer.name(), layer.kind(), layer.hyperparameters(), shape, layer.params()});
  }
}

Shape concat_shape(const std::string& name, const Shape& a, const Shape& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w) {
    throw ContractViolation("layer " + name + ": cannot concatenate " + a.str() + " and " +
                            b.str());
  }
  return {a.n, a.c + b.c, a.h, a.w};
}

float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

}  // namespace

void DetectorConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw ConfigError(std::string(what) + " must be positive");
  };
  for (std::size_t w : stage_widths) positive(w, "stage width");
  positive(fc_width, "fc width");
  positive(rpn_width, "rpn width");
  positive(roi_size, "roi size");
  positive(image_h, "image height");
  positive(image_w, "image width");
  positive(rpn_post_nms, "rpn post-NMS count");
  positive(rpn_pre_nms, "rpn pre-NMS count");
  const std::size_t f = feature_stride();
  if (image_h % f != 0 || image_w % f != 0) {
    throw ConfigError("image size " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                      " is not divisible by the pooling factor " + std::to_string(f));
  }
  if (anchor_scales.empty()) throw ConfigError("anchor scales must not be empty");
  if (anchor_ratios.empty()) throw ConfigError("anchor ratios must not be empty");
  if (!(rpn_nms_iou > 0.0f && rpn_nms_iou < 1.0f)) {
    throw ConfigError("rpn NMS IoU must lie in (0, 1)");
  }
}

DetectorModel::DetectorModel(DetectorConfig config, FusionStage stage)
    : config_(std::move(config)), stage_(stage) {
  if (stage_ == FusionStage::score) {
    throw ConfigError("score fusion combines two trained single-modality models; build "
                      "none-color and none-thermal instead");
  }
  config_.validate();
  build();
}

void DetectorModel::build() {
  const auto& w = config_.stage_widths;
  if (is_two_branch(stage_)) {
    branch_channels_ = {kColorChannels, kThermalChannels};
  } else {
    branch_channels_ = {uses_color(stage_) ? kColorChannels : kThermalChannels};
  }
  const std::size_t branch_stages = stage_ == FusionStage::early     ? 1
                                    : stage_ == FusionStage::halfway ? 4
                                                                     : kBackboneStages;
  if (stage_ == FusionStage::early || stage_ == FusionStage::halfway) {
    junction_stage_ = branch_stages;
  }

  for (std::size_t b = 0; b < branch_channels_.size(); ++b) {
    nn::Sequential seq;
    const std::string prefix = branch_prefix(stage_, b);
    std::size_t in = branch_channels_[b];
    for (std::size_t s = 1; s <= branch_stages; ++s) {
      if (s == branch_stages && junction_stage_) {
        // the pool after the junction stage moves behind the NIN
        const std::string n = std::to_string(s);
        seq.add(std::make_unique<nn::Conv2d>(prefix + ".conv" + n, in, w[s - 1], 3, 1, 1));
        seq.add(std::make_unique<nn::Relu>(prefix + ".relu" + n));
      } else {
        add_stage(seq, prefix, s, in, w[s - 1]);
      }
      in = w[s - 1];
    }
    branches_.push_back(std::move(seq));
  }

  if (junction_stage_) {
    const std::size_t j = *junction_stage_;
    const std::size_t joined = 2 * w[j - 1];
    const std::size_t out = config_.nin_width == 0 ? w[j - 1] : config_.nin_width;
    nin_ = &trunk_.add(nn::make_nin("fused.nin", joined, out));
    trunk_.add(std::make_unique<nn::Relu>("fused.nin_relu"));
    if (j <= kPooledStages) {
      trunk_.add(std::make_unique<nn::MaxPool2x2>("fused.pool" + std::to_string(j)));
    }
    std::size_t in = out;
    for (std::size_t s = j + 1; s <= kBackboneStages; ++s) {
      add_stage(trunk_, "fused", s, in, w[s - 1]);
      in = w[s - 1];
    }
  }

  const std::size_t c5 = w[kBackboneStages - 1];
  const std::size_t rpn_in = stage_ == FusionStage::late ? 2 * c5 : c5;
  const std::size_t a = config_.anchors_per_cell();
  rpn_conv_.add(std::make_unique<nn::Conv2d>("rpn.conv", rpn_in, config_.rpn_width, 3, 1, 1));
  rpn_conv_.add(std::make_unique<nn::Relu>("rpn.relu"));
  rpn_cls_ = std::make_unique<nn::Conv2d>("rpn.cls", config_.rpn_width, a, 1, 1, 0);
  rpn_bbox_ = std::make_unique<nn::Conv2d>("rpn.bbox", config_.rpn_width, 4 * a, 1, 1, 0);

  const std::size_t pooled = c5 * config_.roi_size * config_.roi_size;
  const std::size_t maps = stage_ == FusionStage::late ? 2 : 1;
  for (std::size_t m = 0; m < maps; ++m) {
    const std::string prefix =
        stage_ == FusionStage::late ? branch_prefix(stage_, m) + ".head" : std::string("head");
    nn::Sequential seq;
    seq.add(std::make_unique<nn::FullyConnected>(prefix + ".fc6", pooled, config_.fc_width));
    seq.add(std::make_unique<nn::Relu>(prefix + ".relu6"));
    seq.add(std::make_unique<nn::FullyConnected>(prefix + ".fc7", config_.fc_width,
                                                 config_.fc_width));
    seq.add(std::make_unique<nn::Relu>(prefix + ".relu7"));
    head_fc_.push_back(std::move(seq));
  }
  cls_ = std::make_unique<nn::FullyConnected>("head.cls", maps * config_.fc_width, 2);
  bbox_ = std::make_unique<nn::FullyConnected>("head.bbox", maps * config_.fc_width, 4);

  anchors_ = generate_anchors(config_.feature_h(), config_.feature_w(),
                              static_cast<float>(config_.feature_stride()),
                              config_.anchor_scales, config_.anchor_ratios);
  anchor_boxes_ = anchor_boxes(anchors_);
}

void DetectorModel::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto params = parameters();
  for (std::size_t i = 0; i + 1 < params.size(); i += 2) {
    nn::Param& weight = *params[i];
    nn::Param& bias = *params[i + 1];
    const Shape s = weight.value.shape();
    const double fan_in = static_cast<double>(s.c * s.h * s.w);
    double stddev = std::sqrt(2.0 / fan_in);
    if (weight.name == "rpn.cls.weight" || weight.name == "head.cls.weight") stddev = 0.01;
    if (weight.name == "rpn.bbox.weight" || weight.name == "head.bbox.weight") stddev = 0.001;
    nn::init_gaussian(weight, bias, stddev, rng);
  }
  zero_grad();
}

std::vector<nn::Param*> DetectorModel::parameters() {
  std::vector<nn::Param*> out;
  auto take = [&](std::vector<nn::Param*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
  for (auto& b : branches_) take(b.params());
  take(trunk_.params());
  take(rpn_conv_.params());
  take(rpn_cls_->params());
  take(rpn_bbox_->params());
  for (auto& h : head_fc_) take(h.params());
  take(cls_->params());
  take(bbox_->params());
  return out;
}

std::vector<const nn::Param*> DetectorModel::parameters() const {
  auto ps = const_cast<DetectorModel*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::size_t DetectorModel::parameter_count() const {
  std::size_t n = 0;
  for (const nn::Param* p : parameters()) n += p->value.size();
  return n;
}

void DetectorModel::zero_grad() {
  for (nn::Param* p : parameters()) p->zero_grad();
}

std::vector<LayerInfo> DetectorModel::describe() const {
  std::vector<LayerInfo> out;
  std::vector<Shape> ends;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    Shape s{1, branch_channels_[b], config_.image_h, config_.image_w};
    append_infos(out, branches_[b], s);
    ends.push_back(s);
  }
  Shape feature = ends[0];
  if (junction_stage_) {
    feature = concat_shape("fused.concat", ends[0], ends[1]);
    out.push_back({"fused.concat", nn::LayerKind::concat_channels, {}, feature, {}});
    append_infos(out, trunk_, feature);
  }
  Shape rpn = feature;
  if (stage_ == FusionStage::late) {
    rpn = concat_shape("rpn.concat", ends[0], ends[1]);
    out.push_back({"rpn.concat", nn::LayerKind::concat_channels, {}, rpn, {}});
  }
  append_infos(out, rpn_conv_, rpn);
  Shape cls = rpn;
  Shape box = rpn;
  auto single = [&](const nn::Layer& layer, Shape& s) {
    try {
      s = layer.output_shape(s);
    } catch (const ContractViolation& e) {
      throw ContractViolation("layer " + layer.name() + ": " + e.what());
    }
    out.push_back({layer.name(), layer.kind(), layer.hyperparameters(), s, layer.params()});
  };
  single(*rpn_cls_, cls);
  single(*rpn_bbox_, box);

  const std::size_t k = config_.roi_size;
  std::vector<Shape> heads;
  for (std::size_t m = 0; m < head_fc_.size(); ++m) {
    const Shape map = stage_ == FusionStage::late ? ends[m] : feature;
    const std::string prefix =
        stage_ == FusionStage::late ? branch_prefix(stage_, m) + ".head" : std::string("head");
    Shape s{1, map.c, k, k};
    out.push_back({prefix + ".roi_pool", nn::LayerKind::roi_pool,
                   "size=" + std::to_string(k) + " scale=1/" +
                       std::to_string(config_.feature_stride()),
                   s, {}});
    append_infos(out, head_fc_[m], s);
    heads.push_back(s);
  }
  Shape joint = heads[0];
  if (heads.size() == 2) {
    joint = concat_shape("head.concat", heads[0], heads[1]);
    out.push_back({"head.concat", nn::LayerKind::concat_channels, {}, joint, {}});
  }
  Shape logits = joint;
  Shape deltas = joint;
  single(*cls_, logits);
  out.push_back({"head.softmax", nn::LayerKind::softmax, {}, logits, {}});
  single(*bbox_, deltas);
  return out;
}

const Tensor& DetectorModel::branch_input(const ImagePairView& images, std::size_t branch) const {
  const bool color = branch_channels_[branch] == kColorChannels;
  const Tensor* t = color ? images.color : images.thermal;
  const char* what = color ? "color" : "thermal";
  if (t == nullptr) throw ContractViolation(std::string("missing ") + what + " image");
  const Shape expected{1, branch_channels_[branch], config_.image_h, config_.image_w};
  if (t->shape() != expected) {
    throw ContractViolation(std::string(what) + " image shape " + t->shape().str() +
                            " does not match model input " + expected.str());
  }
  return *t;
}

FeatureTrace DetectorModel::forward(const ImagePairView& images) const {
  FeatureTrace tr;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    nn::Tensor x = branch_input(images, b);
    for (float& v : x.values()) v -= kInputMean;
    tr.branch.push_back(branches_[b].forward(x));
  }
  if (junction_stage_) {
    tr.junction = nn::concat_channels(tr.branch[0].back(), tr.branch[1].back());
    tr.trunk = trunk_.forward(tr.junction);
  }
  if (stage_ == FusionStage::late) {
    tr.rpn_input = nn::concat_channels(tr.branch[0].back(), tr.branch[1].back());
  }
  tr.rpn = rpn_conv_.forward(rpn_features(tr));
  tr.rpn_cls = rpn_cls_->forward(tr.rpn.back());
  tr.rpn_bbox = rpn_bbox_->forward(tr.rpn.back());
  return tr;
}

const Tensor& DetectorModel::rpn_features(const FeatureTrace& trace) const {
  if (stage_ == FusionStage::late) return trace.rpn_input;
  if (junction_stage_) return trace.trunk.back();
  return trace.branch[0].back();
}

std::vector<const Tensor*> DetectorModel::head_features(const FeatureTrace& trace) const {
  if (stage_ == FusionStage::late) return {&trace.branch[0].back(), &trace.branch[1].back()};
  return {&rpn_features(trace)};
}

HeadTrace DetectorModel::head_forward(const FeatureTrace& trace,
                                      std::span<const BBox> rois) const {
  if (rois.empty()) throw ContractViolation("detection head needs at least one RoI");
  HeadTrace h;
  h.rois.assign(rois.begin(), rois.end());
  const float scale = 1.0f / static_cast<float>(config_.feature_stride());
  const std::size_t k = config_.roi_size;
  const auto maps = head_features(trace);
  for (std::size_t m = 0; m < maps.size(); ++m) {
    h.pooled.push_back(nn::roi_pool(*maps[m], rois, scale, k, k));
    h.fc.push_back(head_fc_[m].forward(h.pooled.back()));
  }
  h.joint = h.fc.size() == 2 ? nn::concat_channels(h.fc[0].back(), h.fc[1].back())
                             : h.fc[0].back();
  h.cls_logits = cls_->forward(h.joint);
  h.deltas = bbox_->forward(h.joint);
  return h;
}

void DetectorModel::backward(const FeatureTrace& trace, const Tensor& grad_rpn_cls,
                             const Tensor& grad_rpn_bbox, const HeadTrace* head,
                             const Tensor& grad_cls_logits, const Tensor& grad_deltas) {
  // gradient at the RPN input map
  Tensor g_rpn_top;
  if (!grad_rpn_cls.empty()) {
    g_rpn_top = rpn_cls_->backward(trace.rpn.back(), trace.rpn_cls, grad_rpn_cls);
  }
  if (!grad_rpn_bbox.empty()) {
    g_rpn_top = add_tensors(std::move(g_rpn_top),
                            rpn_bbox_->backward(trace.rpn.back(), trace.rpn_bbox, grad_rpn_bbox));
  }
  Tensor g_rpn_in;
  if (!g_rpn_top.empty()) g_rpn_in = rpn_conv_.backward(trace.rpn, g_rpn_top);

  // gradient at each head feature map
  std::vector<Tensor> g_maps(head_fc_.size());
  if (head != nullptr && (!grad_cls_logits.empty() || !grad_deltas.empty())) {
    Tensor g_joint;
    if (!grad_cls_logits.empty()) {
      g_joint = cls_->backward(head->joint, head->cls_logits, grad_cls_logits);
    }
    if (!grad_deltas.empty()) {
      g_joint = add_tensors(std::move(g_joint),
                            bbox_->backward(head->joint, head->deltas, grad_deltas));
    }
    std::vector<Tensor> g_fc;
    if (head_fc_.size() == 2) {
      auto [a, b] = nn::split_channels(g_joint, config_.fc_width);
      g_fc.push_back(std::move(a));
      g_fc.push_back(std::move(b));
    } else {
      g_fc.push_back(std::move(g_joint));
    }
    const auto maps = head_features(trace);
    const float scale = 1.0f / static_cast<float>(config_.feature_stride());
    const std::size_t k = config_.roi_size;
    for (std::size_t m = 0; m < head_fc_.size(); ++m) {
      const Tensor g_pooled = head_fc_[m].backward(head->fc[m], g_fc[m]);
      g_maps[m] = nn::roi_pool_backward(*maps[m], head->rois, scale, k, k, g_pooled);
    }
  }

  std::vector<Tensor> g_branch(branches_.size());
  if (stage_ == FusionStage::late) {
    if (!g_rpn_in.empty()) {
      auto [a, b] = nn::split_channels(g_rpn_in, trace.branch[0].back().shape().c);
      g_branch[0] = std::move(a);
      g_branch[1] = std::move(b);
    }
    for (std::size_t b = 0; b < 2; ++b) g_branch[b] = add_tensors(g_branch[b], g_maps[b]);
  } else {
    Tensor g_top = add_tensors(std::move(g_rpn_in), g_maps[0]);
    if (g_top.empty()) return;
    if (junction_stage_) {
      const Tensor g_junction = trunk_.backward(trace.trunk, g_top);
      auto [a, b] = nn::split_channels(g_junction, trace.branch[0].back().shape().c);
      g_branch[0] = std::move(a);
      g_branch[1] = std::move(b);
    } else {
      g_branch[0] = std::move(g_top);
    }
  }
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    if (!g_branch[b].empty()) branches_[b].backward(trace.branch[b], g_branch[b]);
  }
}

DetectorModel build_detector(const DetectorConfig& config, FusionStage stage,
                             std::uint64_t seed) {
  DetectorModel model(config, stage);
  model.initialize(seed);
  return model;
}

std::vector<Proposal> proposals_from_trace(const DetectorModel& model, const FeatureTrace& trace,
                                           std::size_t top_k) {
  const DetectorConfig& cfg = model.config();
  const std::size_t a_per = cfg.anchors_per_cell();
  const std::size_t fh = cfg.feature_h();
  const std::size_t fw = cfg.feature_w();
  const auto& anchors = model.anchor_box_list();
  const float img_w = static_cast<float>(cfg.image_w);
  const float img_h = static_cast<float>(cfg.image_h);

  std::vector<BBox> boxes;
  std::vector<float> scores;
  boxes.reserve(anchors.size());
  scores.reserve(anchors.size());
  for (std::size_t y = 0; y < fh; ++y) {
    for (std::size_t x = 0; x < fw; ++x) {
      for (std::size_t a = 0; a < a_per; ++a) {
        const std::size_t idx = (y * fw + x) * a_per + a;
        const BoxDelta d{trace.rpn_bbox.at(0, a * 4 + 0, y, x), trace.rpn_bbox.at(0, a * 4 + 1, y, x),
                         trace.rpn_bbox.at(0, a * 4 + 2, y, x), trace.rpn_bbox.at(0, a * 4 + 3, y, x)};
        const BBox box = clip_to(decode_bbox(anchors[idx], d), img_w, img_h);
        if (!box.valid() || box.width() < cfg.rpn_min_size || box.height() < cfg.rpn_min_size) {
          continue;
        }
        boxes.push_back(box);
        scores.push_back(sigmoid(trace.rpn_cls.at(0, a, y, x)));
      }
    }
  }
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return scores[i] > scores[j]; });
  if (order.size() > cfg.rpn_pre_nms) order.resize(cfg.rpn_pre_nms);
  std::vector<BBox> cand_boxes;
  std::vector<float> cand_scores;
  for (std::size_t i : order) {
    cand_boxes.push_back(boxes[i]);
    cand_scores.push_back(scores[i]);
  }
  const auto kept = nms_indices(cand_boxes, cand_scores, cfg.rpn_nms_iou);
  std::vector<Proposal> out;
  for (std::size_t i : kept) {
    if (out.size() >= top_k) break;
    out.push_back({cand_boxes[i], cand_scores[i]});
  }
  return out;
}

std::vector<Proposal> rpn_forward(const DetectorModel& model, const ImagePairView& images,
                                  std::size_t top_k) {
  return proposals_from_trace(model, model.forward(images), top_k);
}

std::vector<Detection> detections_from_head(const DetectorModel& model, const HeadTrace& head) {
  const Tensor probs = nn::softmax(head.cls_logits);
  const float img_w = static_cast<float>(model.config().image_w);
  const float img_h = static_cast<float>(model.config().image_h);
  std::vector<Detection> out;
  out.reserve(head.rois.size());
  for (std::size_t r = 0; r < head.rois.size(); ++r) {
    BoxDelta d;
    for (std::size_t j = 0; j < 4; ++j) d[j] = head.deltas.at(r, j, 0, 0) * kHeadDeltaScale[j];
    BBox box = clip_to(decode_bbox(head.rois[r], d), img_w, img_h);
    if (!box.valid()) box = head.rois[r];
    const float score = std::clamp(probs.at(r, 1, 0, 0), 0.0f, 1.0f);
    out.push_back({box, score, model.stage()});
  }
  return out;
}

std::vector<Detection> detection_head_forward(const DetectorModel& model,
                                              const FeatureTrace& trace,
                                              std::span<const Proposal> proposals) {
  std::vector<BBox> rois;
  rois.reserve(proposals.size());
  for (const Proposal& p : proposals) rois.push_back(p.bbox);
  return detections_from_head(model, model.head_forward(trace, rois));
}

std::vector<float> score_boxes(const DetectorModel& model, const FeatureTrace& trace,
                               std::span<const BBox> boxes) {
  if (boxes.empty()) return {};
  const HeadTrace head = model.head_forward(trace, boxes);
  const Tensor probs = nn::softmax(head.cls_logits);
  std::vector<float> out(boxes.size());
  for (std::size_t r = 0; r < boxes.size(); ++r) out[r] = probs.at(r, 1, 0, 0);
  return out;
}

}  // namespace msfuse
