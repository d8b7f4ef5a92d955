#include "msfuse/data/model_io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <sstream>

#include "msfuse/data/atomic_file.hpp"
#include "msfuse/errors.hpp"

namespace msfuse {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kModelMagic = "msfuse-model";

fs::path blob_path(const fs::path& manifest) {
  fs::path p = manifest;
  p += ".bin";
  return p;
}

std::string shape_text(const nn::Shape& s) {
  return std::to_string(s.n) + " " + std::to_string(s.c) + " " + std::to_string(s.h) + " " +
         std::to_string(s.w);
}

std::string join_floats(const std::vector<float>& v) {
  std::string out;
  for (float f : v) out += " " + format_float(f);
  return out;
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

class ManifestReader {
 public:
  ManifestReader(const std::string& text, std::string source) : in_(text), source_(std::move(source)) {}

  // Next non-empty line split into whitespace tokens; empty at end of input.
  std::vector<std::string> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_;
      std::istringstream ss(line);
      std::vector<std::string> toks;
      for (std::string t; ss >> t;) toks.push_back(t);
      if (!toks.empty()) return toks;
    }
    return {};
  }

  std::vector<std::string> expect(const std::string& key, std::size_t min_values) {
    auto t = next();
    if (t.empty() || t[0] != key || t.size() < min_values + 1) {
      fail("expected '" + key + "' with " + std::to_string(min_values) + " value(s)");
    }
    return t;
  }

  std::size_t size(const std::string& tok, const std::string& field) const {
    std::size_t v = 0;
    const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (r.ec != std::errc() || r.ptr != tok.data() + tok.size()) {
      fail("field '" + field + "': expected an integer, got '" + tok + "'");
    }
    return v;
  }

  float number(const std::string& tok, const std::string& field) const {
    float v = 0.0f;
    const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (r.ec != std::errc() || r.ptr != tok.data() + tok.size()) {
      fail("field '" + field + "': expected a number, got '" + tok + "'");
    }
    return v;
  }

  std::vector<float> numbers(const std::vector<std::string>& t, const std::string& field) const {
    std::vector<float> out;
    for (std::size_t i = 1; i < t.size(); ++i) out.push_back(number(t[i], field));
    return out;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(source_ + ":" + std::to_string(line_) + ": " + what);
  }

 private:
  std::istringstream in_;
  std::string source_;
  std::size_t line_ = 0;
};

}  // namespace

std::string format_model_manifest(const DetectorModel& model) {
  const DetectorConfig& c = model.config();
  std::string out = std::string(kModelMagic) + " " + std::to_string(kModelVersion) + "\n";
  out += "fusion " + std::string(to_string(model.stage())) + "\n";
  out += "image_h " + std::to_string(c.image_h) + "\n";
  out += "image_w " + std::to_string(c.image_w) + "\n";
  out += "stage_widths";
  for (std::size_t w : c.stage_widths) out += " " + std::to_string(w);
  out += "\n";
  out += "fc_width " + std::to_string(c.fc_width) + "\n";
  out += "rpn_width " + std::to_string(c.rpn_width) + "\n";
  out += "nin_width " + std::to_string(c.nin_width) + "\n";
  out += "anchor_scales" + join_floats(c.anchor_scales) + "\n";
  out += "anchor_ratios" + join_floats(c.anchor_ratios) + "\n";
  out += "roi_size " + std::to_string(c.roi_size) + "\n";
  out += "rpn_nms_iou " + format_float(c.rpn_nms_iou) + "\n";
  out += "rpn_pre_nms " + std::to_string(c.rpn_pre_nms) + "\n";
  out += "rpn_post_nms " + std::to_string(c.rpn_post_nms) + "\n";
  out += "rpn_min_size " + format_float(c.rpn_min_size) + "\n";
  for (const LayerInfo& l : model.describe()) {
    out += "layer " + l.name + " " + std::string(nn::to_string(l.kind)) + " " +
           shape_text(l.output);
    if (!l.hyperparameters.empty()) out += " " + l.hyperparameters;
    out += "\n";
  }
  for (const nn::Param* p : model.parameters()) {
    out += "param " + p->name + " " + shape_text(p->value.shape()) + "\n";
  }
  out += "end\n";
  return out;
}

void save_model(const fs::path& path, const DetectorModel& model) {
  std::string blob;
  for (const nn::Param* p : model.parameters()) {
    for (float v : p->value.values()) {
      const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(v));
      char bytes[4];
      std::memcpy(bytes, &bits, 4);
      blob.append(bytes, 4);
    }
  }
  // blob first so a manifest never points at a missing or stale blob
  write_file_atomic(blob_path(path), blob);
  write_file_atomic(path, format_model_manifest(model));
}

DetectorModel load_model(const fs::path& path) {
  const std::string text = read_file(path);
  ManifestReader r(text, path.string());
  auto head = r.next();
  if (head.size() != 2 || head[0] != kModelMagic) {
    r.fail("expected header '" + std::string(kModelMagic) + " <version>'");
  }
  if (r.size(head[1], "version") != static_cast<std::size_t>(kModelVersion)) {
    r.fail("unsupported model version " + head[1] + " (expected " + std::to_string(kModelVersion) +
           ")");
  }
  FusionStage stage;
  try {
    stage = fusion_stage_from_string(r.expect("fusion", 1)[1]);
  } catch (const ConfigError& e) {
    r.fail(std::string("field 'fusion': ") + e.what());
  }
  DetectorConfig c;
  c.image_h = r.size(r.expect("image_h", 1)[1], "image_h");
  c.image_w = r.size(r.expect("image_w", 1)[1], "image_w");
  const auto widths = r.expect("stage_widths", kBackboneStages);
  if (widths.size() != kBackboneStages + 1) r.fail("stage_widths needs 5 values");
  for (std::size_t i = 0; i < kBackboneStages; ++i) c.stage_widths[i] = r.size(widths[i + 1], "stage_widths");
  c.fc_width = r.size(r.expect("fc_width", 1)[1], "fc_width");
  c.rpn_width = r.size(r.expect("rpn_width", 1)[1], "rpn_width");
  c.nin_width = r.size(r.expect("nin_width", 1)[1], "nin_width");
  c.anchor_scales = r.numbers(r.expect("anchor_scales", 1), "anchor_scales");
  c.anchor_ratios = r.numbers(r.expect("anchor_ratios", 1), "anchor_ratios");
  c.roi_size = r.size(r.expect("roi_size", 1)[1], "roi_size");
  c.rpn_nms_iou = r.number(r.expect("rpn_nms_iou", 1)[1], "rpn_nms_iou");
  c.rpn_pre_nms = r.size(r.expect("rpn_pre_nms", 1)[1], "rpn_pre_nms");
  c.rpn_post_nms = r.size(r.expect("rpn_post_nms", 1)[1], "rpn_post_nms");
  c.rpn_min_size = r.number(r.expect("rpn_min_size", 1)[1], "rpn_min_size");

  std::optional<DetectorModel> built;
  try {
    built.emplace(c, stage);
  } catch (const std::invalid_argument& e) {
    r.fail(std::string("inconsistent configuration: ") + e.what());
  }
  DetectorModel& model = *built;

  const auto layers = model.describe();
  for (const LayerInfo& l : layers) {
    const auto t = r.expect("layer", 6);
    if (t[1] != l.name || t[2] != nn::to_string(l.kind) || t[3] != std::to_string(l.output.n) ||
        t[4] != std::to_string(l.output.c) || t[5] != std::to_string(l.output.h) ||
        t[6] != std::to_string(l.output.w)) {
      r.fail("layer '" + t[1] + "' does not match the graph rebuilt from the configuration "
             "(expected " + l.name + " " + std::string(nn::to_string(l.kind)) + " " +
             shape_text(l.output) + ")");
    }
  }
  const auto params = model.parameters();
  std::size_t floats = 0;
  for (nn::Param* p : params) {
    const auto t = r.expect("param", 5);
    if (t[1] != p->name || t.size() != 6 ||
        t[2] + " " + t[3] + " " + t[4] + " " + t[5] != shape_text(p->value.shape())) {
      r.fail("param '" + t[1] + "' does not match expected " + p->name + " " +
             shape_text(p->value.shape()));
    }
    floats += p->value.size();
  }
  if (r.expect("end", 0)[0] != "end") r.fail("missing 'end'");

  const std::string blob = read_file(blob_path(path));
  if (blob.size() != floats * 4) {
    throw ParseError(blob_path(path).string() + ": holds " + std::to_string(blob.size()) +
                     " bytes, manifest needs " + std::to_string(floats * 4));
  }
  std::size_t off = 0;
  for (nn::Param* p : params) {
    for (float& v : p->value.values()) {
      std::uint32_t bits;
      std::memcpy(&bits, blob.data() + off, 4);
      v = std::bit_cast<float>(to_little(bits));
      off += 4;
    }
    p->zero_grad();
  }
  return std::move(model);
}

}  // namespace msfuse
