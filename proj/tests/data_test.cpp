#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <map>
#include <string>

#include "msfuse/data/annotations.hpp"
#include "msfuse/data/atomic_file.hpp"
#include "msfuse/data/image_io.hpp"
#include "msfuse/data/model_io.hpp"
#include "msfuse/data/synth.hpp"
#include "msfuse/errors.hpp"
#include "msfuse/pipeline/detect.hpp"

namespace fs = std::filesystem;
using namespace msfuse;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("msfuse_data_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return out;
}

SynthParams small(std::size_t n, std::uint64_t seed) {
  SynthParams p;
  p.n_images = n;
  p.n_test_images = n / 2;
  p.seed = seed;
  return p;
}

std::string expect_parse_error(const std::string& text) {
  try {
    parse_annotations(text, "ann.txt");
  } catch (const ParseError& e) {
    return e.what();
  }
  ADD_FAILURE() << "no ParseError for:\n" << text;
  return {};
}

bool bit_equal(float a, float b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST(Synth, SameSeedGivesByteIdenticalFiles) {
  const fs::path a = scratch("det_a");
  const fs::path b = scratch("det_b");
  synth_dataset(small(12, 5), a);
  synth_dataset(small(12, 5), b);
  const auto ta = tree(a);
  EXPECT_EQ(ta.size(), 3u + 2u * 18u);
  EXPECT_EQ(ta, tree(b));
  const fs::path c = scratch("det_c");
  synth_dataset(small(12, 6), c);
  EXPECT_NE(ta, tree(c));
}

TEST(Synth, FilesMatchInMemoryData) {
  const fs::path dir = scratch("mem");
  const SynthParams p = small(6, 11);
  synth_dataset(p, dir);
  const SynthData d = synth_images(p);
  const auto train = load_split(dir / "train.txt");
  ASSERT_EQ(train.size(), d.train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const LabeledPair& want = d.train[i].labeled;
    EXPECT_EQ(train[i].images.image_id, want.images.image_id);
    EXPECT_EQ(train[i].images.condition, want.images.condition);
    EXPECT_EQ(train[i].objects, want.objects);
    ASSERT_EQ(train[i].images.color.size(), want.images.color.size());
    for (std::size_t k = 0; k < want.images.color.size(); ++k) {
      ASSERT_TRUE(bit_equal(train[i].images.color[k], want.images.color[k]));
    }
    for (std::size_t k = 0; k < want.images.thermal.size(); ++k) {
      ASSERT_TRUE(bit_equal(train[i].images.thermal[k], want.images.thermal[k]));
    }
  }
  const auto records = load_annotations(dir / "test.txt");
  ASSERT_EQ(records.size(), d.test.size());
  for (std::size_t i = 0; i < records.size(); ++i) EXPECT_EQ(records[i].visibility, d.test[i].visibility);
}

TEST(Synth, InvalidMixIsConfigError) {
  SynthParams p;
  p.p_both = 0.6;
  EXPECT_THROW(synth_images(p), ConfigError);
  p = SynthParams{};
  p.p_color_only = -0.1;
  p.p_both = 0.85;
  EXPECT_THROW(synth_images(p), ConfigError);
  p = SynthParams{};
  p.image_w = 60;
  EXPECT_THROW(synth_images(p), ConfigError);
}

// Mean thermal level on pedestrian silhouettes minus the mean elsewhere.
double thermal_contrast(const SynthParams& p) {
  const SynthData d = synth_images(p);
  double on = 0.0, off = 0.0;
  std::size_t n_on = 0, n_off = 0;
  for (const SynthImage& s : d.train) {
    const nn::Tensor& t = s.labeled.images.thermal;
    const std::size_t h = t.shape().h, w = t.shape().w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        bool inside = false;
        for (const GroundTruth& g : s.labeled.objects) {
          const float cx = static_cast<float>(x) + 0.5f, cy = static_cast<float>(y) + 0.5f;
          // torso band, which the silhouette always covers
          const float v = (cy - g.bbox.y1) / g.bbox.height();
          const float u = (cx - g.bbox.x1) / g.bbox.width();
          inside |= v > 0.2f && v < 0.55f && u > 0.1f && u < 0.9f;
        }
        (inside ? on : off) += t[y * w + x];
        ++(inside ? n_on : n_off);
      }
    }
  }
  return on / static_cast<double>(n_on) - off / static_cast<double>(n_off);
}

TEST(Synth, ColorOnlyPedestriansLeaveThermalAtBackground) {
  SynthParams p = small(200, 3);
  p.distractor_density = 0.0;
  p.p_both = 0.0;
  p.p_thermal_only = 0.0;
  p.p_color_only = 1.0;
  EXPECT_LT(std::abs(thermal_contrast(p)), 0.02);
  p.p_color_only = 0.0;
  p.p_thermal_only = 1.0;
  EXPECT_GT(thermal_contrast(p), 0.2);
}

TEST(Synth, ColorOnlyThermalFrameEqualsBackgroundWithoutNoise) {
  // identical random stream, so the only difference is what the pedestrian paints
  SynthParams p = small(40, 9);
  p.distractor_density = 0.0;
  p.noise = 0.0;
  p.p_both = 0.0;
  p.p_thermal_only = 0.0;
  p.p_color_only = 1.0;
  const SynthData color_only = synth_images(p);
  p.p_color_only = 0.0;
  p.p_thermal_only = 1.0;
  const SynthData thermal_only = synth_images(p);
  std::size_t changed_outside = 0, changed_inside = 0;
  for (std::size_t i = 0; i < color_only.train.size(); ++i) {
    const nn::Tensor& a = color_only.train[i].labeled.images.thermal;
    const nn::Tensor& b = thermal_only.train[i].labeled.images.thermal;
    const std::size_t w = a.shape().w;
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (a[k] == b[k]) continue;
      const float cx = static_cast<float>(k % w) + 0.5f, cy = static_cast<float>(k / w) + 0.5f;
      bool inside = false;
      for (const GroundTruth& g : color_only.train[i].labeled.objects) {
        inside |= cx > g.bbox.x1 && cx < g.bbox.x2 && cy > g.bbox.y1 && cy < g.bbox.y2;
      }
      ++(inside ? changed_inside : changed_outside);
    }
  }
  EXPECT_EQ(changed_outside, 0u);
  EXPECT_GT(changed_inside, 0u);
}

TEST(Synth, VisibilityFractionsFollowMix) {
  SynthParams p = small(500, 21);
  p.n_test_images = 0;
  const SynthData d = synth_images(p);
  std::map<Visibility, double> count;
  double total = 0;
  for (const SynthImage& s : d.train) {
    for (Visibility v : s.visibility) {
      count[v] += 1;
      total += 1;
    }
  }
  EXPECT_NEAR(count[Visibility::both] / total, 0.5, 0.05);
  EXPECT_NEAR(count[Visibility::color_only] / total, 0.25, 0.05);
  EXPECT_NEAR(count[Visibility::thermal_only] / total, 0.25, 0.05);
}

TEST(Synth, BoxesInBoundsUnlessTruncatedAndPixelsInRange) {
  const SynthData d = synth_images(small(300, 4));
  std::size_t truncated = 0, night = 0, occluded = 0;
  for (const SynthImage& s : d.train) {
    const LabeledPair& l = s.labeled;
    ASSERT_NO_THROW(require_aligned(l.images));
    night += l.images.condition == Condition::night;
    for (const GroundTruth& g : l.objects) {
      EXPECT_TRUE(g.bbox.valid());
      const bool inside = g.bbox.x1 >= 0 && g.bbox.y1 >= 0 && g.bbox.x2 <= 64 && g.bbox.y2 <= 80;
      EXPECT_TRUE(inside || g.truncated) << g.bbox.str();
      EXPECT_NEAR(g.bbox.height() / g.bbox.width(), 2.0, 0.4);
      truncated += g.truncated;
      occluded += g.occluded;
    }
    for (float v : l.images.color.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
    for (float v : l.images.thermal.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
  EXPECT_GT(truncated, 0u);
  EXPECT_GT(occluded, 0u);
  EXPECT_GT(night, 50u);
  EXPECT_LT(night, 130u);
}

TEST(Synth, NightReducesColorContrast) {
  const SynthData d = synth_images(small(200, 8));
  double day_sd = 0, night_sd = 0;
  std::size_t n_day = 0, n_night = 0;
  for (const SynthImage& s : d.train) {
    const auto& v = s.labeled.images.color.values();
    double m = 0, sq = 0;
    for (float x : v) m += x;
    m /= static_cast<double>(v.size());
    for (float x : v) sq += (x - m) * (x - m);
    const double sd = std::sqrt(sq / static_cast<double>(v.size()));
    if (s.labeled.images.condition == Condition::night) {
      night_sd += sd;
      ++n_night;
    } else {
      day_sd += sd;
      ++n_day;
    }
  }
  EXPECT_LT(night_sd / static_cast<double>(n_night), 0.5 * day_sd / static_cast<double>(n_day));
}

TEST(ImageIo, RoundTripIsExactForQuantizedValues) {
  const fs::path dir = scratch("img");
  nn::Tensor c({1, 3, 4, 5});
  nn::Tensor g({1, 1, 4, 5});
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = static_cast<float>((i * 37) % 256) / 255.0f;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>((i * 91) % 256) / 255.0f;
  save_ppm(dir / "c.ppm", c);
  save_pgm(dir / "g.pgm", g);
  const nn::Tensor c2 = load_ppm(dir / "c.ppm");
  const nn::Tensor g2 = load_pgm(dir / "g.pgm");
  EXPECT_EQ(c2.shape(), c.shape());
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(c2[i], c[i]);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(g2[i], g[i]);
  EXPECT_THROW(load_pgm(dir / "c.ppm"), ParseError);
  EXPECT_THROW(load_ppm(dir / "missing.ppm"), InputError);
  write_file_atomic(dir / "short.pgm", "P5\n5 4\n255\nabc");
  EXPECT_THROW(load_pgm(dir / "short.pgm"), ParseError);
  const char pgm[] = "P5\n# made by hand\n2 1\n255\n\x00\xff";
  write_file_atomic(dir / "comment.pgm", std::string(pgm, sizeof pgm - 1));
  const nn::Tensor t = load_pgm(dir / "comment.pgm");
  EXPECT_EQ(t[0], 0.0f);
  EXPECT_EQ(t[1], 1.0f);
}

TEST(Annotations, EmptyListRoundTrips) {
  const std::string text = format_annotations({});
  EXPECT_TRUE(parse_annotations(text).empty());
  const fs::path dir = scratch("empty");
  save_annotations(dir / "a.txt", {});
  EXPECT_TRUE(load_annotations(dir / "a.txt").empty());
}

TEST(Annotations, BoxSurvivesBitExactly) {
  AnnotationRecord r;
  r.image_id = "im0";
  r.color_path = "c.ppm";
  r.thermal_path = "t.pgm";
  r.condition = Condition::night;
  r.objects = {{{1.5f, 2.0f, 10.25f, 40.0f}, true, false},
               {{0.1f, 1.0f / 3.0f, 7.123456789f, 9.87654321f}, false, true}};
  const std::vector<AnnotationRecord> in{r};
  const auto out = parse_annotations(format_annotations(in));
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], r);
  for (std::size_t i = 0; i < r.objects.size(); ++i) {
    EXPECT_TRUE(bit_equal(out[0].objects[i].bbox.x1, r.objects[i].bbox.x1));
    EXPECT_TRUE(bit_equal(out[0].objects[i].bbox.y1, r.objects[i].bbox.y1));
    EXPECT_TRUE(bit_equal(out[0].objects[i].bbox.x2, r.objects[i].bbox.x2));
    EXPECT_TRUE(bit_equal(out[0].objects[i].bbox.y2, r.objects[i].bbox.y2));
  }
}

TEST(Annotations, WorkedExampleParses) {
  const auto r = parse_annotations(
      "msfuse-annotations 1\n"
      "# two images\n"
      "image a day images/a_color.ppm images/a_thermal.pgm 2\n"
      "object 1.5 2 10.25 40 0 0 both\n"
      "object 30 10 52 54 1 0 thermal\n"
      "\n"
      "image b night images/b_color.ppm images/b_thermal.pgm 0\n");
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].objects.size(), 2u);
  EXPECT_TRUE(r[0].objects[1].occluded);
  EXPECT_EQ(r[0].visibility[1], Visibility::thermal_only);
  EXPECT_EQ(r[1].condition, Condition::night);
  EXPECT_TRUE(r[1].objects.empty());
}

TEST(Annotations, ErrorsNameLineAndField) {
  const std::string head = "msfuse-annotations 1\nimage a day c.ppm t.pgm 1\n";
  std::string e = expect_parse_error(head + "object 1 2 abc 4 0 0\n");
  EXPECT_NE(e.find("ann.txt:3"), std::string::npos) << e;
  EXPECT_NE(e.find("field 'x2'"), std::string::npos) << e;
  e = expect_parse_error(head + "object 1 2 3 4 2 0\n");
  EXPECT_NE(e.find("field 'occluded'"), std::string::npos) << e;
  e = expect_parse_error("msfuse-annotations 1\nimage a dusk c.ppm t.pgm 0\n");
  EXPECT_NE(e.find("ann.txt:2"), std::string::npos) << e;
  EXPECT_NE(e.find("field 'condition'"), std::string::npos) << e;
  e = expect_parse_error(head);
  EXPECT_NE(e.find("declares 1"), std::string::npos) << e;
  e = expect_parse_error(head + "object 1 2 3\n");
  EXPECT_NE(e.find("ann.txt:3"), std::string::npos) << e;
  e = expect_parse_error("not-a-header\n");
  EXPECT_NE(e.find("header"), std::string::npos) << e;
}

TEST(Annotations, RejectsInvalidBoxes) {
  const std::string head = "msfuse-annotations 1\nimage a day c.ppm t.pgm 1\n";
  EXPECT_NE(expect_parse_error(head + "object 10 2 5 40 0 0\n").find("invalid box"), std::string::npos);
  EXPECT_NE(expect_parse_error(head + "object 1 2 5 2 0 0\n").find("invalid box"), std::string::npos);
  EXPECT_NE(expect_parse_error(head + "object 1 2 nan 8 0 0\n").find("x2"), std::string::npos);
}

TEST(Annotations, VersionMismatchIsExplicit) {
  const std::string e = expect_parse_error("msfuse-annotations 2\n");
  EXPECT_NE(e.find("unsupported annotation version 2"), std::string::npos) << e;
}

TEST(Detections, CsvRoundTrip) {
  DetectionSet set;
  set["img_b"] = {{{1.5f, 2.0f, 10.25f, 40.0f}, 0.875f, FusionStage::halfway},
                  {{0.1f, 0.2f, 3.3f, 9.9f}, 0.5f, FusionStage::halfway}};
  set["img_a"] = {};
  set["img_c"] = {{{5, 5, 20, 45}, 1.0f, FusionStage::halfway}};
  const std::string text = format_detections(set);
  EXPECT_EQ(text.substr(0, text.find('\n')), "image_id,x1,y1,x2,y2,score");
  const DetectionSet back = parse_detections(text, "d.csv", FusionStage::halfway);
  // images without detections leave no rows
  set.erase("img_a");
  EXPECT_EQ(back, set);
  EXPECT_EQ(format_detections(back), text);

  const fs::path dir = scratch("dets");
  save_detections(dir / "d.csv", set);
  EXPECT_EQ(load_detections(dir / "d.csv", FusionStage::halfway), set);
}

TEST(Detections, ParseErrors) {
  const std::string head = "image_id,x1,y1,x2,y2,score\n";
  auto err = [&](const std::string& body) {
    try {
      parse_detections(head + body, "d.csv");
    } catch (const ParseError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(err("a,1,2,3,4\n").find("d.csv:2"), std::string::npos);
  EXPECT_NE(err("a,1,2,3,4,1.5\n").find("field 'score'"), std::string::npos);
  EXPECT_NE(err("a,1,2,x,4,0.5\n").find("field 'x2'"), std::string::npos);
  EXPECT_NE(err(",1,2,3,4,0.5\n").find("image_id"), std::string::npos);
  EXPECT_THROW(parse_detections("id,box\n"), ParseError);
}

class ModelIo : public ::testing::TestWithParam<FusionStage> {};

TEST_P(ModelIo, SaveLoadGivesBitIdenticalDetections) {
  const fs::path dir = scratch(std::string("model_") + std::string(to_string(GetParam())));
  const DetectorModel model = build_detector(DetectorConfig{}, GetParam(), 17);
  save_model(dir / "m.model", model);
  const DetectorModel back = load_model(dir / "m.model");
  EXPECT_EQ(back.stage(), model.stage());
  EXPECT_EQ(back.config(), model.config());
  EXPECT_EQ(format_model_manifest(back), format_model_manifest(model));
  const auto pa = model.parameters();
  const auto pb = back.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(std::memcmp(pa[i]->value.values().data(), pb[i]->value.values().data(),
                          pa[i]->value.size() * sizeof(float)),
              0)
        << pa[i]->name;
  }
  const SynthData d = synth_images(small(4, 2));
  DetectOptions opts;
  opts.score_thresh = 0.0f;
  for (const SynthImage& s : d.train) {
    const auto before = detect(model, s.labeled.images, opts);
    const auto after = detect(back, s.labeled.images, opts);
    EXPECT_FALSE(before.empty());
    EXPECT_EQ(before, after);
  }
}

INSTANTIATE_TEST_SUITE_P(Stages, ModelIo,
                         ::testing::Values(FusionStage::none_color, FusionStage::none_thermal,
                                           FusionStage::early, FusionStage::halfway,
                                           FusionStage::late),
                         [](const auto& info) {
                           std::string s(to_string(info.param));
                           for (char& ch : s) ch = ch == '-' ? '_' : ch;
                           return s;
                         });

TEST(ModelIoErrors, RejectsTamperedFiles) {
  const fs::path dir = scratch("model_bad");
  DetectorConfig cfg;
  cfg.nin_width = 24;
  const DetectorModel model = build_detector(cfg, FusionStage::halfway, 1);
  save_model(dir / "m.model", model);
  const std::string manifest = read_file(dir / "m.model");
  const std::string blob = read_file(dir / "m.model.bin");
  EXPECT_EQ(load_model(dir / "m.model").config().nin_width, 24u);

  auto expect_error = [&](const std::string& m, const std::string& b, const std::string& needle) {
    write_file_atomic(dir / "x.model", m);
    write_file_atomic(dir / "x.model.bin", b);
    try {
      load_model(dir / "x.model");
      ADD_FAILURE() << "loaded a bad model, expected " << needle;
    } catch (const ParseError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  auto replace = [](std::string s, const std::string& from, const std::string& to) {
    const auto at = s.find(from);
    EXPECT_NE(at, std::string::npos) << from;
    return s.replace(at, from.size(), to);
  };
  expect_error(replace(manifest, "msfuse-model 1", "msfuse-model 2"), blob, "unsupported model version 2");
  expect_error(manifest, blob.substr(4), "bytes");
  expect_error(replace(manifest, "fusion halfway", "fusion sideways"), blob, "field 'fusion'");
  expect_error(replace(manifest, "nin_width 24", "nin_width 16"), blob, "does not match");
  expect_error(replace(manifest, "fc_width 128", "fc_width many"), blob, "field 'fc_width'");
  expect_error(manifest.substr(0, manifest.size() - 4), blob, "'end'");
}
