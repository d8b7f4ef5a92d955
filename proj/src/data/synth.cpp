#include "msfuse/data/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>

#include "msfuse/data/annotations.hpp"
#include "msfuse/data/atomic_file.hpp"
#include "msfuse/data/image_io.hpp"
#include "msfuse/errors.hpp"

namespace msfuse {

std::string_view to_string(Visibility v) {
  switch (v) {
    case Visibility::both: return "both";
    case Visibility::color_only: return "color";
    case Visibility::thermal_only: return "thermal";
  }
  return "both";
}

Visibility visibility_from_string(std::string_view text) {
  if (text == "both") return Visibility::both;
  if (text == "color") return Visibility::color_only;
  if (text == "thermal") return Visibility::thermal_only;
  throw ConfigError("unknown visibility '" + std::string(text) +
                    "' (expected both, color or thermal)");
}

void SynthParams::validate() const {
  auto prob = [](double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(what) + " must lie in [0, 1]");
  };
  prob(p_both, "p_both");
  prob(p_color_only, "p_color_only");
  prob(p_thermal_only, "p_thermal_only");
  prob(night_fraction, "night_fraction");
  prob(p_truncated, "p_truncated");
  if (std::abs(p_both + p_color_only + p_thermal_only - 1.0) > 1e-9) {
    throw ConfigError("visibility mix must sum to 1");
  }
  if (image_h == 0 || image_w == 0 || image_h % 8 != 0 || image_w % 8 != 0) {
    throw ConfigError("image size " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                      " must be positive and divisible by the pooling factor 8");
  }
  if (min_pedestrians > max_pedestrians) {
    throw ConfigError("min_pedestrians exceeds max_pedestrians");
  }
  if (!(min_height > 4.0f && min_height <= max_height &&
        max_height <= static_cast<float>(image_h))) {
    throw ConfigError("pedestrian heights must satisfy 4 < min <= max <= image height");
  }
  if (!(distractor_density >= 0.0) || !(noise >= 0.0)) {
    throw ConfigError("distractor density and noise must be non-negative");
  }
}

namespace {

using Rgb = std::array<float, 3>;

struct Canvas {
  std::size_t h;
  std::size_t w;
  std::vector<float> color;    // 3 planes
  std::vector<float> thermal;  // 1 plane
  std::vector<int> owner;      // pedestrian silhouette depth map, -1 = none

  Canvas(std::size_t hh, std::size_t ww)
      : h(hh), w(ww), color(3 * hh * ww), thermal(hh * ww), owner(hh * ww, -1) {}

  void set_color(std::size_t y, std::size_t x, const Rgb& c) {
    for (std::size_t k = 0; k < 3; ++k) color[k * h * w + y * w + x] = c[k];
  }
};

enum class Part { none, head, torso, legs };

// Upright person silhouette inside its box, in box-relative coordinates.
Part silhouette(float u, float v) {
  if (u < 0.0f || u >= 1.0f || v < 0.0f || v >= 1.0f) return Part::none;
  if (v < 0.18f) return std::abs(u - 0.5f) < 0.2f ? Part::head : Part::none;
  if (v < 0.58f) return (u > 0.06f && u < 0.94f) ? Part::torso : Part::none;
  return ((u > 0.12f && u < 0.46f) || (u > 0.54f && u < 0.88f)) ? Part::legs : Part::none;
}

// Calls fn(y, x) for every in-image pixel whose centre lies inside box.
template <typename Fn>
void for_pixels(const Canvas& c, const BBox& b, Fn&& fn) {
  const auto lo = [](float v) { return static_cast<long>(std::ceil(v - 0.5f)); };
  const long y0 = std::max(0L, lo(b.y1));
  const long y1 = std::min(static_cast<long>(c.h), lo(b.y2));
  const long x0 = std::max(0L, lo(b.x1));
  const long x1 = std::min(static_cast<long>(c.w), lo(b.x2));
  for (long y = y0; y < y1; ++y) {
    for (long x = x0; x < x1; ++x) fn(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  }
}

class Generator {
 public:
  explicit Generator(const SynthParams& p) : p_(p), rng_(p.seed) {}

  SynthImage make(const std::string& id) {
    Canvas c(p_.image_h, p_.image_w);
    const bool night = uniform(0.0, 1.0) < p_.night_fraction;
    background(c, night);
    distractors(c, night);

    SynthImage out;
    out.labeled.images.image_id = id;
    out.labeled.images.condition = night ? Condition::night : Condition::day;
    const std::size_t n = static_cast<std::size_t>(
        std::uniform_int_distribution<std::size_t>(p_.min_pedestrians, p_.max_pedestrians)(rng_));
    std::vector<BBox> boxes;
    std::vector<bool> truncated;
    for (std::size_t i = 0; i < n; ++i) {
      const BBox b = place_pedestrian(truncated);
      const Visibility vis = sample_visibility();
      pedestrian(c, b, vis, night, static_cast<int>(i));
      boxes.push_back(b);
      out.visibility.push_back(vis);
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t own = 0;
      std::size_t shown = 0;
      for_pixels(c, boxes[i], [&](std::size_t y, std::size_t x) {
        const float u = (static_cast<float>(x) + 0.5f - boxes[i].x1) / boxes[i].width();
        const float v = (static_cast<float>(y) + 0.5f - boxes[i].y1) / boxes[i].height();
        if (silhouette(u, v) == Part::none) return;
        ++own;
        if (c.owner[y * c.w + x] == static_cast<int>(i)) ++shown;
      });
      const bool occluded = own > 0 && static_cast<double>(shown) < 0.7 * static_cast<double>(own);
      out.labeled.objects.push_back({boxes[i], occluded, truncated[i]});
    }
    finish(c, night, out.labeled.images);
    return out;
  }

 private:
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  float uniformf(double lo, double hi) { return static_cast<float>(uniform(lo, hi)); }
  Rgb random_rgb(double lo, double hi) { return {uniformf(lo, hi), uniformf(lo, hi), uniformf(lo, hi)}; }

  Visibility sample_visibility() {
    const double r = uniform(0.0, 1.0);
    if (r < p_.p_both) return Visibility::both;
    if (r < p_.p_both + p_.p_color_only) return Visibility::color_only;
    return Visibility::thermal_only;
  }

  void background(Canvas& c, bool night) {
    const Rgb top = random_rgb(0.35, 0.9);
    const Rgb bottom = random_rgb(0.2, 0.7);
    const float t_base = night ? uniformf(0.12, 0.3) : uniformf(0.35, 0.55);
    const float t_slope = uniformf(-0.08, 0.08);
    for (std::size_t y = 0; y < c.h; ++y) {
      const float a = static_cast<float>(y) / static_cast<float>(c.h - 1);
      Rgb col;
      for (std::size_t k = 0; k < 3; ++k) col[k] = (1.0f - a) * top[k] + a * bottom[k];
      for (std::size_t x = 0; x < c.w; ++x) {
        c.set_color(y, x, col);
        c.thermal[y * c.w + x] = t_base + t_slope * (a - 0.5f);
      }
    }
    // scenery blocks, faint in thermal
    const int blocks = std::uniform_int_distribution<int>(1, 3)(rng_);
    for (int i = 0; i < blocks; ++i) {
      const float bw = uniformf(10, 40);
      const float bh = uniformf(10, 50);
      const float x = uniformf(-5, static_cast<double>(c.w) - 5);
      const float y = uniformf(-5, static_cast<double>(c.h) - 5);
      const Rgb col = random_rgb(0.2, 0.9);
      const float dt = uniformf(-0.05, 0.05);
      for_pixels(c, {x, y, x + bw, y + bh}, [&](std::size_t yy, std::size_t xx) {
        c.set_color(yy, xx, col);
        c.thermal[yy * c.w + xx] += dt;
      });
    }
  }

  void distractors(Canvas& c, bool night) {
    const int n = std::poisson_distribution<int>(p_.distractor_density)(rng_);
    for (int i = 0; i < n; ++i) {
      const bool in_color = uniform(0.0, 1.0) < 0.5;
      const float h = uniformf(12, 50);
      const float w = h / uniformf(0.5, 2.2);
      const float x = uniformf(0, std::max(1.0, static_cast<double>(c.w) - w));
      const float y = uniformf(0, std::max(1.0, static_cast<double>(c.h) - h));
      const BBox b{x, y, x + w, y + h};
      if (in_color) {
        const Rgb a = random_rgb(0.0, 1.0);
        const Rgb d = random_rgb(0.0, 1.0);
        const float period = uniformf(3, 8);
        for_pixels(c, b, [&](std::size_t yy, std::size_t xx) {
          const bool stripe = std::fmod(static_cast<float>(yy) + 0.5f, period) < period * 0.5f;
          c.set_color(yy, xx, stripe ? a : d);
        });
      } else {
        const float t = night ? uniformf(0.6, 0.9) : uniformf(0.65, 0.85);
        for_pixels(c, b, [&](std::size_t yy, std::size_t xx) { c.thermal[yy * c.w + xx] = t; });
      }
    }
  }

  BBox place_pedestrian(std::vector<bool>& truncated) {
    const float h = uniformf(p_.min_height, p_.max_height);
    const float w = 0.5f * h * uniformf(0.85, 1.15);
    const float W = static_cast<float>(p_.image_w);
    const float H = static_cast<float>(p_.image_h);
    const float y = uniformf(0, H - h);
    const bool cut = uniform(0.0, 1.0) < p_.p_truncated;
    float x;
    if (cut) {
      const float outside = w * uniformf(0.2, 0.5);
      x = uniform(0.0, 1.0) < 0.5 ? -outside : W - w + outside;
    } else {
      x = uniformf(0, W - w);
    }
    const BBox b{x, y, x + w, y + h};
    truncated.push_back(b.x1 < 0.0f || b.y1 < 0.0f || b.x2 > W || b.y2 > H);
    return b;
  }

  void pedestrian(Canvas& c, const BBox& b, Visibility vis, bool night, int id) {
    const Rgb upper = random_rgb(0.0, 1.0);
    const Rgb lower = random_rgb(0.0, 0.8);
    const float skin_scale = uniformf(0.6, 1.1);
    const Rgb skin{0.85f * skin_scale, 0.65f * skin_scale, 0.5f * skin_scale};
    const float body_t = night ? uniformf(0.72, 0.9) : uniformf(0.68, 0.82);
    const float period = uniformf(2.5, 6);
    const bool color = vis != Visibility::thermal_only;
    const bool thermal = vis != Visibility::color_only;
    for_pixels(c, b, [&](std::size_t y, std::size_t x) {
      const float u = (static_cast<float>(x) + 0.5f - b.x1) / b.width();
      const float v = (static_cast<float>(y) + 0.5f - b.y1) / b.height();
      const Part part = silhouette(u, v);
      if (part == Part::none) return;
      c.owner[y * c.w + x] = id;
      if (color) {
        Rgb col = part == Part::head ? skin : part == Part::torso ? upper : lower;
        const float tex = 1.0f + 0.12f * std::sin(6.2831853f * static_cast<float>(y) / period);
        for (float& k : col) k = std::clamp(k * tex, 0.0f, 1.0f);
        c.set_color(y, x, col);
      }
      if (thermal) {
        c.thermal[y * c.w + x] = part == Part::head ? body_t + 0.06f : body_t;
      }
    });
  }

  void finish(Canvas& c, bool night, ImagePair& out) {
    std::normal_distribution<double> noise(0.0, p_.noise);
    auto quantize = [](double v) {
      const double clamped = std::clamp(v, 0.0, 1.0);
      return static_cast<float>(std::lround(clamped * 255.0)) / 255.0f;
    };
    out.color = nn::Tensor({1, 3, c.h, c.w});
    out.thermal = nn::Tensor({1, 1, c.h, c.w});
    for (std::size_t i = 0; i < c.color.size(); ++i) {
      double v = c.color[i];
      if (night) v = 0.04 + 0.22 * v;
      out.color[i] = quantize(v + (p_.noise > 0 ? noise(rng_) : 0.0));
    }
    for (std::size_t i = 0; i < c.thermal.size(); ++i) {
      out.thermal[i] = quantize(c.thermal[i] + (p_.noise > 0 ? noise(rng_) : 0.0));
    }
  }

  const SynthParams& p_;
  std::mt19937_64 rng_;
};

std::string image_id(const char* split, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04zu", split, i);
  return buf;
}

}  // namespace

SynthData synth_images(const SynthParams& params) {
  params.validate();
  Generator gen(params);
  SynthData d;
  for (std::size_t i = 0; i < params.n_images; ++i) d.train.push_back(gen.make(image_id("train", i)));
  for (std::size_t i = 0; i < params.n_test_images; ++i) {
    d.test.push_back(gen.make(image_id("test", i)));
  }
  return d;
}

namespace {

std::string format_params(const SynthParams& p) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::string out = "msfuse-synth 1\n";
  out += "seed " + std::to_string(p.seed) + "\n";
  out += "n_images " + std::to_string(p.n_images) + "\n";
  out += "n_test_images " + std::to_string(p.n_test_images) + "\n";
  out += "image_h " + std::to_string(p.image_h) + "\n";
  out += "image_w " + std::to_string(p.image_w) + "\n";
  out += "pedestrians " + std::to_string(p.min_pedestrians) + " " + std::to_string(p.max_pedestrians) + "\n";
  out += "height " + num(p.min_height) + " " + num(p.max_height) + "\n";
  out += "visibility_mix " + num(p.p_both) + " " + num(p.p_color_only) + " " + num(p.p_thermal_only) + "\n";
  out += "distractor_density " + num(p.distractor_density) + "\n";
  out += "noise " + num(p.noise) + "\n";
  out += "night_fraction " + num(p.night_fraction) + "\n";
  out += "p_truncated " + num(p.p_truncated) + "\n";
  return out;
}

void write_split(const std::filesystem::path& out_dir, const char* name,
                 const std::vector<SynthImage>& images) {
  std::vector<AnnotationRecord> records;
  records.reserve(images.size());
  for (const SynthImage& s : images) {
    const ImagePair& im = s.labeled.images;
    AnnotationRecord r;
    r.image_id = im.image_id;
    r.condition = im.condition;
    r.color_path = "images/" + im.image_id + "_color.ppm";
    r.thermal_path = "images/" + im.image_id + "_thermal.pgm";
    r.objects = s.labeled.objects;
    r.visibility = s.visibility;
    save_ppm(out_dir / r.color_path, im.color);
    save_pgm(out_dir / r.thermal_path, im.thermal);
    records.push_back(std::move(r));
  }
  save_annotations(out_dir / name, records);
}

}  // namespace

void synth_dataset(const SynthParams& params, const std::filesystem::path& out_dir) {
  const SynthData d = synth_images(params);
  write_split(out_dir, "train.txt", d.train);
  write_split(out_dir, "test.txt", d.test);
  write_file_atomic(out_dir / "params.txt", format_params(params));
}

std::vector<LabeledPair> labeled_pairs(const std::vector<SynthImage>& images) {
  std::vector<LabeledPair> out;
  out.reserve(images.size());
  for (const SynthImage& s : images) out.push_back(s.labeled);
  return out;
}

}  // namespace msfuse
