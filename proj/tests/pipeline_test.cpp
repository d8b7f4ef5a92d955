#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "msfuse/data/synth.hpp"
#include "msfuse/errors.hpp"
#include "msfuse/pipeline/detect.hpp"
#include "msfuse/pipeline/nms.hpp"
#include "msfuse/pipeline/train.hpp"

using namespace msfuse;

namespace {

double area(const BBox& b) { return (double(b.x2) - b.x1) * (double(b.y2) - b.y1); }

double overlap(const BBox& a, const BBox& b) {
  const double w = std::min<double>(a.x2, b.x2) - std::max<double>(a.x1, b.x1);
  const double h = std::min<double>(a.y2, b.y2) - std::max<double>(a.y1, b.y1);
  if (w <= 0 || h <= 0) return 0.0;
  return w * h / (area(a) + area(b) - w * h);
}

// Repeatedly take the best remaining detection (first in input order among
// equal scores) and strike everything overlapping it too much.
std::vector<Detection> exhaustive_greedy(std::vector<Detection> pool, double thresh) {
  std::vector<Detection> out;
  std::vector<bool> alive(pool.size(), true);
  while (true) {
    std::size_t best = pool.size();
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (alive[i] && (best == pool.size() || pool[i].score > pool[best].score)) best = i;
    }
    if (best == pool.size()) break;
    out.push_back(pool[best]);
    alive[best] = false;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (alive[i] && overlap(pool[i].bbox, pool[best].bbox) > thresh) alive[i] = false;
    }
  }
  return out;
}

std::vector<Detection> random_set(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count(0, 20);
  std::uniform_real_distribution<float> pos(0.0f, 40.0f);
  std::uniform_real_distribution<float> size(2.0f, 30.0f);
  // a coarse score grid forces ties
  std::uniform_int_distribution<int> score(0, 10);
  std::vector<Detection> d(static_cast<std::size_t>(count(rng)));
  for (Detection& x : d) {
    const float x1 = pos(rng), y1 = pos(rng);
    x.bbox = {x1, y1, x1 + size(rng), y1 + size(rng)};
    x.score = static_cast<float>(score(rng)) / 10.0f;
  }
  return d;
}

ImagePair blank_pair(std::size_t h = 80, std::size_t w = 64) {
  ImagePair p;
  p.image_id = "blank";
  p.color = nn::Tensor({1, 3, h, w});
  p.thermal = nn::Tensor({1, 1, h, w});
  return p;
}

std::vector<LabeledPair> tiny_data(std::size_t n, std::uint64_t seed) {
  SynthParams sp;
  sp.n_images = n;
  sp.n_test_images = 0;
  sp.seed = seed;
  return labeled_pairs(synth_images(sp).train);
}

std::vector<std::vector<float>> snapshot(const DetectorModel& m) {
  std::vector<std::vector<float>> out;
  for (const nn::Param* p : m.parameters()) {
    out.emplace_back(p->value.values().begin(), p->value.values().end());
  }
  return out;
}

bool bit_identical(const std::vector<std::vector<float>>& a, const std::vector<std::vector<float>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size() ||
        std::memcmp(a[i].data(), b[i].data(), a[i].size() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST(Nms, MatchesExhaustiveGreedyOracle) {
  std::mt19937_64 rng(12);
  const double thresholds[] = {0.1, 0.3, 0.5, 0.7};
  for (int trial = 0; trial < 1000; ++trial) {
    const auto dets = random_set(rng);
    const double t = thresholds[trial % 4];
    EXPECT_EQ(nms(dets, t), exhaustive_greedy(dets, t)) << "trial " << trial;
  }
}

TEST(Nms, SubsetAndPairwiseCompatible) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const auto dets = random_set(rng);
    const auto kept = nms(dets, 0.3);
    for (std::size_t i = 0; i < kept.size(); ++i) {
      EXPECT_NE(std::find(dets.begin(), dets.end(), kept[i]), dets.end());
      if (i > 0) EXPECT_GE(kept[i - 1].score, kept[i].score);
      for (std::size_t j = i + 1; j < kept.size(); ++j) {
        EXPECT_LE(iou(kept[i].bbox, kept[j].bbox), 0.3);
      }
    }
  }
}

TEST(Nms, Examples) {
  const Detection one{{0, 0, 10, 20}, 0.4f};
  EXPECT_EQ(nms(std::vector{one}, 0.3), std::vector{one});
  const Detection a{{0, 0, 10, 20}, 0.8f};
  const Detection b{{0, 0, 10, 20}, 0.9f};
  EXPECT_EQ(nms(std::vector{a, b}, 0.3), std::vector{b});
  // equal scores: the earlier one survives
  const Detection c{{0, 0, 10, 20}, 0.8f, FusionStage::halfway};
  EXPECT_EQ(nms(std::vector{a, c}, 0.3), std::vector{a});
  EXPECT_TRUE(nms(std::vector<Detection>{}, 0.3).empty());
}

TEST(TrainSchedule, Validation) {
  TrainSchedule s;
  EXPECT_EQ(s.total_epochs(), 6u);
  EXPECT_EQ(s.lr_for_epoch(3), 0.001);
  EXPECT_EQ(s.lr_for_epoch(4), 0.0001);
  s.lr_phase1 = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s.lr_phase1 = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Train, ZeroEpochsLeavesParametersUnchanged) {
  DetectorModel m = build_detector({}, FusionStage::halfway, 3);
  const auto before = snapshot(m);
  const auto data = tiny_data(3, 1);
  TrainSchedule s;
  s.epochs_phase1 = 0;
  s.epochs_phase2 = 0;
  const TrainLog log = train(m, data, s);
  EXPECT_TRUE(log.epochs.empty());
  EXPECT_TRUE(bit_identical(before, snapshot(m)));
}

TEST(Train, SameSeedGivesBitIdenticalParameters) {
  const auto data = tiny_data(6, 2);
  TrainSchedule s;
  s.epochs_phase1 = 1;
  s.epochs_phase2 = 1;
  s.seed = 5;
  DetectorModel a = build_detector({}, FusionStage::early, 4);
  DetectorModel b = build_detector({}, FusionStage::early, 4);
  std::vector<std::size_t> seen;
  const TrainLog la = train(a, data, s, {}, [&](const EpochLog& e) { seen.push_back(e.epoch); });
  const TrainLog lb = train(b, data, s);
  EXPECT_TRUE(bit_identical(snapshot(a), snapshot(b)));
  EXPECT_EQ(la.final_loss(), lb.final_loss());
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(la.epochs[1].lr, 0.0001);
  EXPECT_FALSE(bit_identical(snapshot(a), snapshot(build_detector({}, FusionStage::early, 4))));

  s.seed = 6;
  DetectorModel c = build_detector({}, FusionStage::early, 4);
  train(c, data, s);
  EXPECT_FALSE(bit_identical(snapshot(a), snapshot(c)));
}

TEST(Train, NonFiniteLossNamesTheBatch) {
  const auto data = tiny_data(20, 3);
  DetectorModel m = build_detector({}, FusionStage::none_thermal, 1);
  TrainSchedule s;
  s.epochs_phase1 = 3;
  s.epochs_phase2 = 0;
  s.lr_phase1 = 1e6;
  try {
    train(m, data, s);
    FAIL() << "training with an absurd learning rate did not abort";
  } catch (const TrainingDiverged& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("epoch "), std::string::npos) << what;
    EXPECT_NE(what.find("step "), std::string::npos) << what;
    EXPECT_NE(what.find("(image train_00"), std::string::npos) << what;
  }
}

TEST(Train, Preconditions) {
  DetectorModel m = build_detector({}, FusionStage::halfway, 1);
  EXPECT_THROW(train(m, std::span<const LabeledPair>{}, TrainSchedule{}), ContractViolation);
  auto data = tiny_data(1, 1);
  data[0].images.thermal = nn::Tensor({1, 1, 80, 60});
  EXPECT_THROW(train(m, data, TrainSchedule{}), InputError);
}

TEST(Train, SixEpochsOn500ImagesHalveTheLoss) {
  const auto data = tiny_data(500, 1);
  DetectorModel m = build_detector({}, FusionStage::none_thermal, 7);
  TrainSchedule s;
  s.seed = 3;
  const TrainLog log = train(m, data, s);
  ASSERT_EQ(log.epochs.size(), 6u);
  EXPECT_LT(log.final_loss(), 0.5 * log.initial_loss())
      << log.initial_loss() << " -> " << log.final_loss();
}

TEST(Detect, DeterministicAndSorted) {
  const DetectorModel m = build_detector({}, FusionStage::halfway, 8);
  DetectOptions opts;
  opts.score_thresh = 0.0f;
  const ImagePair blank = blank_pair();
  const auto a = detect(m, blank, opts);
  const auto b = detect(m, blank, opts);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a.empty());
  const auto data = tiny_data(3, 4);
  for (const LabeledPair& p : data) {
    const auto d = detect(m, p.images, opts);
    EXPECT_EQ(d, detect(m, p.images, opts));
    for (std::size_t i = 0; i < d.size(); ++i) {
      EXPECT_EQ(d[i].source, FusionStage::halfway);
      EXPECT_TRUE(d[i].score >= 0.0f && d[i].score <= 1.0f);
      EXPECT_TRUE(d[i].bbox.valid());
      if (i > 0) EXPECT_GE(d[i - 1].score, d[i].score);
    }
  }
}

TEST(Detect, ThresholdOneIsEmptyAndHigherThresholdsNeverAdd) {
  const DetectorModel m = build_detector({}, FusionStage::late, 9);
  const auto data = tiny_data(3, 5);
  for (const LabeledPair& p : data) {
    std::size_t last = std::numeric_limits<std::size_t>::max();
    for (float t : {0.0f, 0.2f, 0.4f, 0.5f, 0.6f, 0.8f, 0.99f, 1.0f}) {
      DetectOptions o;
      o.score_thresh = t;
      const auto d = detect(m, p.images, o);
      EXPECT_LE(d.size(), last);
      last = d.size();
      for (const Detection& x : d) EXPECT_GT(x.score, t);
    }
    EXPECT_EQ(last, 0u);
  }
}

TEST(Detect, MisalignedPairIsInputError) {
  const DetectorModel m = build_detector({}, FusionStage::none_color, 1);
  ImagePair p = blank_pair();
  p.thermal = nn::Tensor({1, 1, 80, 56});
  EXPECT_THROW(detect(m, p), InputError);
  p.thermal = nn::Tensor({1, 3, 80, 64});
  EXPECT_THROW(detect(m, p), InputError);
}

TEST(ScoreFusion, Arithmetic) {
  EXPECT_FLOAT_EQ(fused_score(0.8f, 0.4f, {}), 0.6f);
  for (float s : {0.0f, 0.13f, 0.5f, 0.77f, 1.0f}) EXPECT_FLOAT_EQ(fused_score(s, s, {0.3f, 0.7f}), s);
  EXPECT_EQ(fused_score(0.8f, 0.4f, {1.0f, 0.0f}), 0.8f);
}

struct FusionPair {
  DetectorModel color = build_detector({}, FusionStage::none_color, 21);
  DetectorModel thermal = build_detector({}, FusionStage::none_thermal, 22);
};

TEST(ScoreFusion, EveryFusedScoreIsTheWeightedExchange) {
  const FusionPair fp;
  DetectOptions all;
  all.score_thresh = -1.0f;
  for (const LabeledPair& p : tiny_data(3, 6)) {
    const auto fused = score_fuse(fp.color, fp.thermal, p.images, {}, all);
    ASSERT_FALSE(fused.empty());
    const FeatureTrace tc = fp.color.forward(p.images.view());
    const FeatureTrace tt = fp.thermal.forward(p.images.view());
    const auto own_c = detect_from_trace(fp.color, tc, all);
    const auto own_t = detect_from_trace(fp.thermal, tt, all);
    for (const Detection& f : fused) {
      EXPECT_EQ(f.source, FusionStage::score);
      const std::vector<BBox> box{f.bbox};
      auto in = [&](const std::vector<Detection>& v) {
        return std::find_if(v.begin(), v.end(), [&](const Detection& d) { return d.bbox == f.bbox; });
      };
      // head batches of different sizes sum in a different order
      if (auto it = in(own_c); it != own_c.end()) {
        EXPECT_NEAR(f.score, fused_score(it->score, score_boxes(fp.thermal, tt, box)[0], {}), 1e-6);
      } else {
        auto jt = in(own_t);
        ASSERT_NE(jt, own_t.end());
        EXPECT_NEAR(f.score, fused_score(score_boxes(fp.color, tc, box)[0], jt->score, {}), 1e-6);
      }
    }
  }
}

TEST(ScoreFusion, FullColorWeightReproducesColorDetector) {
  const FusionPair fp;
  for (const LabeledPair& p : tiny_data(3, 7)) {
    for (float t : {0.0f, 0.5f}) {
      DetectOptions o;
      o.score_thresh = t;
      auto want = detect(fp.color, p.images, o);
      for (Detection& d : want) d.source = FusionStage::score;
      EXPECT_EQ(score_fuse(fp.color, fp.thermal, p.images, {1.0f, 0.0f}, o), want);
    }
  }
}

TEST(ScoreFusion, DuplicateBoxesFromBothModelsCollapse) {
  const FusionPair fp;
  DetectOptions o;
  o.score_thresh = -1.0f;
  const ImagePair img = tiny_data(1, 8)[0].images;
  const auto fused = score_fuse(fp.color, fp.thermal, img, {}, o);
  for (std::size_t i = 0; i < fused.size(); ++i) {
    for (std::size_t j = i + 1; j < fused.size(); ++j) EXPECT_LE(iou(fused[i].bbox, fused[j].bbox), 0.3);
  }
  const std::vector<Detection> dup{{{0, 0, 10, 20}, 0.6f, FusionStage::score},
                                   {{0, 0, 10, 20}, 0.6f, FusionStage::score}};
  EXPECT_EQ(nms(dup, 0.3).size(), 1u);
}

TEST(ScoreFusion, Preconditions) {
  const FusionPair fp;
  const ImagePair img = blank_pair();
  EXPECT_THROW(score_fuse(fp.thermal, fp.color, img), ContractViolation);
  EXPECT_THROW(score_fuse(fp.color, fp.thermal, img, {0.7f, 0.7f}), ContractViolation);
  EXPECT_THROW(score_fuse(fp.color, fp.thermal, img, {1.2f, -0.2f}), ContractViolation);
  ImagePair bad = img;
  bad.thermal = nn::Tensor({1, 1, 72, 64});
  EXPECT_THROW(score_fuse(fp.color, fp.thermal, bad), InputError);
}
