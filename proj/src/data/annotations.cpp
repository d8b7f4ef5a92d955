#include "msfuse/data/annotations.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "msfuse/data/atomic_file.hpp"
#include "msfuse/data/image_io.hpp"
#include "msfuse/errors.hpp"

namespace msfuse {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kAnnotationMagic = "msfuse-annotations";
constexpr std::string_view kDetectionHeader = "image_id,x1,y1,x2,y2,score";

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  if (sep == ' ') {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      const std::size_t start = i;
      while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
      if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
  }
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == sep) {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

// Line-oriented reader that prefixes errors with source and line number.
class Lines {
 public:
  Lines(std::string_view text, std::string source) : text_(text), source_(std::move(source)) {}

  bool next(std::string_view& line) {
    while (pos_ < text_.size()) {
      const std::size_t end = std::min(text_.find('\n', pos_), text_.size());
      line = text_.substr(pos_, end - pos_);
      pos_ = end + 1;
      ++number_;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (skip_blank_ && (line.empty() || line.front() == '#')) continue;
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(source_ + ":" + std::to_string(number_) + ": " + what);
  }

  float number(std::string_view tok, const char* field) const {
    float v = 0.0f;
    const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (r.ec != std::errc() || r.ptr != tok.data() + tok.size() || !std::isfinite(v)) {
      fail(std::string("field '") + field + "': expected a number, got '" + std::string(tok) + "'");
    }
    return v;
  }

  std::size_t count(std::string_view tok, const char* field) const {
    std::size_t v = 0;
    const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (r.ec != std::errc() || r.ptr != tok.data() + tok.size()) {
      fail(std::string("field '") + field + "': expected a count, got '" + std::string(tok) + "'");
    }
    return v;
  }

  bool flag(std::string_view tok, const char* field) const {
    if (tok == "0") return false;
    if (tok == "1") return true;
    fail(std::string("field '") + field + "': expected 0 or 1, got '" + std::string(tok) + "'");
  }

  BBox box(std::span<const std::string_view> toks) const {
    const BBox b{number(toks[0], "x1"), number(toks[1], "y1"), number(toks[2], "x2"),
                 number(toks[3], "y2")};
    if (!b.valid()) fail("invalid box " + b.str() + " (need x2 > x1 and y2 > y1)");
    return b;
  }

  void keep_blank() { skip_blank_ = false; }

 private:
  std::string_view text_;
  std::string source_;
  std::size_t pos_ = 0;
  std::size_t number_ = 0;
  bool skip_blank_ = true;
};

void require_token(const std::string& v, const char* what) {
  if (v.empty() || v.find_first_of(" \t\n\r,") != std::string::npos) {
    throw ContractViolation(std::string(what) + " '" + v +
                            "' must be non-empty without whitespace or commas");
  }
}

}  // namespace

std::string format_annotations(std::span<const AnnotationRecord> records) {
  std::string out = std::string(kAnnotationMagic) + " " + std::to_string(kAnnotationVersion) + "\n";
  for (const AnnotationRecord& r : records) {
    require_token(r.image_id, "image id");
    require_token(r.color_path, "color path");
    require_token(r.thermal_path, "thermal path");
    if (!r.visibility.empty() && r.visibility.size() != r.objects.size()) {
      throw ContractViolation("image " + r.image_id + ": visibility list does not match objects");
    }
    out += "image " + r.image_id + " " + std::string(to_string(r.condition)) + " " + r.color_path +
           " " + r.thermal_path + " " + std::to_string(r.objects.size()) + "\n";
    for (std::size_t i = 0; i < r.objects.size(); ++i) {
      const GroundTruth& g = r.objects[i];
      require_valid(g.bbox, "annotation");
      out += "object " + format_float(g.bbox.x1) + " " + format_float(g.bbox.y1) + " " +
             format_float(g.bbox.x2) + " " + format_float(g.bbox.y2) + " " +
             (g.occluded ? "1" : "0") + " " + (g.truncated ? "1" : "0");
      if (!r.visibility.empty()) out += " " + std::string(to_string(r.visibility[i]));
      out += "\n";
    }
  }
  return out;
}

std::vector<AnnotationRecord> parse_annotations(std::string_view text, const std::string& source) {
  Lines lines(text, source);
  std::string_view line;
  if (!lines.next(line)) lines.fail("empty file, expected header '" + std::string(kAnnotationMagic) + " 1'");
  const auto head = split(line, ' ');
  if (head.size() != 2 || head[0] != kAnnotationMagic) {
    lines.fail("expected header '" + std::string(kAnnotationMagic) + " <version>'");
  }
  const std::size_t version = lines.count(head[1], "version");
  if (version != static_cast<std::size_t>(kAnnotationVersion)) {
    lines.fail("unsupported annotation version " + std::to_string(version) + " (expected " +
               std::to_string(kAnnotationVersion) + ")");
  }
  std::vector<AnnotationRecord> out;
  std::size_t expected = 0;
  auto close = [&]() {
    if (!out.empty() && out.back().objects.size() != expected) {
      lines.fail("image " + out.back().image_id + " declares " + std::to_string(expected) +
                 " objects but lists " + std::to_string(out.back().objects.size()));
    }
  };
  while (lines.next(line)) {
    const auto t = split(line, ' ');
    if (t[0] == "image") {
      close();
      if (t.size() != 6) lines.fail("image record needs 5 fields: id condition color thermal count");
      AnnotationRecord r;
      r.image_id = std::string(t[1]);
      try {
        r.condition = condition_from_string(t[2]);
      } catch (const ConfigError& e) {
        lines.fail(std::string("field 'condition': ") + e.what());
      }
      r.color_path = std::string(t[3]);
      r.thermal_path = std::string(t[4]);
      expected = lines.count(t[5], "count");
      out.push_back(std::move(r));
    } else if (t[0] == "object") {
      if (out.empty()) lines.fail("object record before any image record");
      if (t.size() != 7 && t.size() != 8) {
        lines.fail("object record needs x1 y1 x2 y2 occluded truncated [visibility]");
      }
      AnnotationRecord& r = out.back();
      const GroundTruth g{lines.box(std::span(t).subspan(1, 4)), lines.flag(t[5], "occluded"),
                          lines.flag(t[6], "truncated")};
      const bool has_vis = t.size() == 8;
      if (!r.objects.empty() && has_vis != (r.visibility.size() == r.objects.size())) {
        lines.fail("field 'visibility': give it for every object of an image or for none");
      }
      if (has_vis) {
        try {
          r.visibility.push_back(visibility_from_string(t[7]));
        } catch (const ConfigError& e) {
          lines.fail(std::string("field 'visibility': ") + e.what());
        }
      }
      r.objects.push_back(g);
    } else {
      lines.fail("unknown record '" + std::string(t[0]) + "' (expected image or object)");
    }
  }
  close();
  return out;
}

void save_annotations(const fs::path& path, std::span<const AnnotationRecord> records) {
  write_file_atomic(path, format_annotations(records));
}

std::vector<AnnotationRecord> load_annotations(const fs::path& path) {
  return parse_annotations(read_file(path), path.string());
}

std::vector<LabeledPair> load_split(const fs::path& annotation_path) {
  const auto records = load_annotations(annotation_path);
  const fs::path dir = annotation_path.parent_path();
  std::vector<LabeledPair> out;
  out.reserve(records.size());
  for (const AnnotationRecord& r : records) {
    LabeledPair p;
    p.images.image_id = r.image_id;
    p.images.condition = r.condition;
    p.images.color = load_ppm(dir / r.color_path);
    p.images.thermal = load_pgm(dir / r.thermal_path);
    require_aligned(p.images);
    p.objects = r.objects;
    out.push_back(std::move(p));
  }
  return out;
}

std::string format_detections(const DetectionSet& dets) {
  std::string out = std::string(kDetectionHeader) + "\n";
  char score[32];
  for (const auto& [id, list] : dets) {
    require_token(id, "image id");
    for (const Detection& d : list) {
      std::snprintf(score, sizeof score, "%.6f", static_cast<double>(d.score));
      out += id + "," + format_float(d.bbox.x1) + "," + format_float(d.bbox.y1) + "," +
             format_float(d.bbox.x2) + "," + format_float(d.bbox.y2) + "," + score + "\n";
    }
  }
  return out;
}

DetectionSet parse_detections(std::string_view text, const std::string& source,
                              FusionStage source_tag) {
  Lines lines(text, source);
  std::string_view line;
  if (!lines.next(line) || line != kDetectionHeader) {
    lines.fail("expected header '" + std::string(kDetectionHeader) + "'");
  }
  DetectionSet out;
  while (lines.next(line)) {
    const auto t = split(line, ',');
    if (t.size() != 6) {
      lines.fail("expected 6 comma-separated fields, got " + std::to_string(t.size()));
    }
    if (t[0].empty()) lines.fail("field 'image_id': empty");
    const BBox b = lines.box(std::span(t).subspan(1, 4));
    const float s = lines.number(t[5], "score");
    if (s < 0.0f || s > 1.0f) lines.fail("field 'score': " + std::string(t[5]) + " outside [0, 1]");
    out[std::string(t[0])].push_back({b, s, source_tag});
  }
  return out;
}

void save_detections(const fs::path& path, const DetectionSet& dets) {
  write_file_atomic(path, format_detections(dets));
}

DetectionSet load_detections(const fs::path& path, FusionStage source_tag) {
  return parse_detections(read_file(path), path.string(), source_tag);
}

}  // namespace msfuse
