#include "msfuse/complementarity/complementarity.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>
#include <cstdio>
#include <limits>

#include "msfuse/errors.hpp"

namespace msfuse {

ImageMatch match_image(const std::string& image_id, Condition condition,
                       std::span<const Detection> dets, std::span<const GroundTruth> gts,
                       float score_thresh, double iou_thresh, float min_height) {
  const FilteredGts f = filter_reasonable(gts, min_height);
  std::vector<Detection> above;
  for (const Detection& d : dets) {
    if (d.score > score_thresh) above.push_back(d);
  }
  ImageMatch out;
  out.image_id = image_id;
  out.condition = condition;
  out.kept = f.kept;
  for (const Detection& d : above) out.boxes.push_back(d.bbox);
  out.match = match_detections(above, f.kept, f.ignored, iou_thresh);
  return out;
}

void ComplementarityTable::validate() const {
  if (tp_a() > gt_count || tp_b() > gt_count || tp_both + tp_a_only + tp_b_only > gt_count) {
    throw ContractViolation("complementarity table finds more ground truths (" +
                            std::to_string(tp_both + tp_a_only + tp_b_only) + ") than exist (" +
                            std::to_string(gt_count) + ")");
  }
}

std::vector<std::pair<std::size_t, std::size_t>> pair_boxes(std::span<const BBox> a,
                                                            std::span<const BBox> b,
                                                            double min_iou) {
  struct Cand {
    double iou;
    std::size_t i;
    std::size_t j;
  };
  std::vector<Cand> cands;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double v = iou(a[i], b[j]);
      if (v >= min_iou) cands.push_back({v, i, j});
    }
  }
  // stable on (i, j) order, which the loops above produce
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) { return x.iou > y.iou; });
  std::vector<bool> used_a(a.size(), false);
  std::vector<bool> used_b(b.size(), false);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const Cand& c : cands) {
    if (used_a[c.i] || used_b[c.j]) continue;
    used_a[c.i] = used_b[c.j] = true;
    out.emplace_back(c.i, c.j);
  }
  return out;
}

ComplementarityTable partition_detections(std::span<const ImageMatch> a, std::span<const ImageMatch> b,
                               double fp_iou) {
  if (a.size() != b.size()) {
    throw ContractViolation("partition: detector a covers " + std::to_string(a.size()) +
                            " images, detector b " + std::to_string(b.size()));
  }
  ComplementarityTable t;
  t.n_images = a.size();
  for (std::size_t n = 0; n < a.size(); ++n) {
    const ImageMatch& ma = a[n];
    const ImageMatch& mb = b[n];
    if (ma.image_id != mb.image_id || ma.kept != mb.kept) {
      throw ContractViolation("partition: image " + std::to_string(n) + " ('" + ma.image_id +
                              "' vs '" + mb.image_id + "') has different ground truths");
    }
    const std::size_t g = ma.kept.size();
    std::vector<bool> hit_a(g, false);
    std::vector<bool> hit_b(g, false);
    for (const auto& [d, gi] : ma.match.tp) hit_a.at(gi) = true;
    for (const auto& [d, gi] : mb.match.tp) hit_b.at(gi) = true;
    t.gt_count += g;
    for (std::size_t i = 0; i < g; ++i) {
      t.tp_both += hit_a[i] && hit_b[i];
      t.tp_a_only += hit_a[i] && !hit_b[i];
      t.tp_b_only += !hit_a[i] && hit_b[i];
    }
    std::vector<BBox> fa;
    std::vector<BBox> fb;
    for (std::size_t d : ma.match.fp) fa.push_back(ma.boxes.at(d));
    for (std::size_t d : mb.match.fp) fb.push_back(mb.boxes.at(d));
    const std::size_t shared = pair_boxes(fa, fb, fp_iou).size();
    t.fp_both += shared;
    t.fp_a_only += fa.size() - shared;
    t.fp_b_only += fb.size() - shared;
  }
  return t;
}

std::string_view to_string(FpDenominator d) {
  return d == FpDenominator::images ? "images" : "ground_truths";
}

namespace {

FpRate rate(std::size_t count, std::size_t over, FpDenominator d) {
  const double v = over == 0 ? std::numeric_limits<double>::quiet_NaN()
                             : static_cast<double>(count) / static_cast<double>(over);
  return {d, count, over, v};
}

void fill(FpRate (&out)[2], std::size_t count, const ComplementarityTable& t) {
  out[static_cast<int>(FpDenominator::images)] = rate(count, t.n_images, FpDenominator::images);
  out[static_cast<int>(FpDenominator::ground_truths)] =
      rate(count, t.gt_count, FpDenominator::ground_truths);
}

}  // namespace

OracleBound oracle_bound(const ComplementarityTable& t) {
  if (t.gt_count == 0) throw ContractViolation("oracle_bound: table has no ground truths");
  t.validate();
  const double gts = static_cast<double>(t.gt_count);
  OracleBound b;
  b.union_detection_rate = static_cast<double>(t.tp_both + t.tp_a_only + t.tp_b_only) / gts;
  b.detection_rate_a = static_cast<double>(t.tp_a()) / gts;
  b.detection_rate_b = static_cast<double>(t.tp_b()) / gts;
  b.shared_fp_count = t.fp_both;
  fill(b.fp_rate_a, t.fp_a(), t);
  fill(b.fp_rate_b, t.fp_b(), t);
  fill(b.fp_rate_after, t.fp_both, t);
  return b;
}

ComplementarityReport partition_by_condition(std::span<const ImageMatch> a,
                                             std::span<const ImageMatch> b, double fp_iou) {
  ComplementarityReport r;
  r.all = partition_detections(a, b, fp_iou);
  for (Condition c : {Condition::day, Condition::night}) {
    std::vector<ImageMatch> sa;
    std::vector<ImageMatch> sb;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].condition != b[i].condition) {
        throw ContractViolation("partition: image '" + a[i].image_id +
                                "' has different condition tags");
      }
      if (a[i].condition == c) {
        sa.push_back(a[i]);
        sb.push_back(b[i]);
      }
    }
    (c == Condition::day ? r.day : r.night) =
        partition_detections(std::span<const ImageMatch>(sa), std::span<const ImageMatch>(sb), fp_iou);
  }
  return r;
}

namespace {

struct Row {
  const char* name;
  const ComplementarityTable* table;
};

std::vector<Row> rows(const ComplementarityReport& r) {
  return {{"all", &r.all}, {"day", &r.day}, {"night", &r.night}};
}

std::string fp_text(const FpRate& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%zu/%zu = %.4f", r.count, r.over, r.value);
  return buf;
}

}  // namespace

std::string format_complementarity(const ComplementarityReport& report, const std::string& label_a,
                                   const std::string& label_b) {
  const std::string both = label_a + "," + label_b;
  const std::vector<std::string> head{"condition", "images", "gt",
                                      "TP(" + both + ")", "TP(" + label_a + ")",
                                      "TP(" + label_b + ")", "FP(" + both + ")",
                                      "FP(" + label_a + ")", "FP(" + label_b + ")"};
  std::vector<std::vector<std::string>> cells{head};
  for (const Row& row : rows(report)) {
    const ComplementarityTable& t = *row.table;
    cells.push_back({row.name, std::to_string(t.n_images), std::to_string(t.gt_count),
                     std::to_string(t.tp_both), std::to_string(t.tp_a_only),
                     std::to_string(t.tp_b_only), std::to_string(t.fp_both),
                     std::to_string(t.fp_a_only), std::to_string(t.fp_b_only)});
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  std::string out;
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (i > 0) out += "  ";
      out += std::string(width[i] - line[i].size(), ' ') + line[i];
    }
    out += "\n";
  }
  for (const Row& row : rows(report)) {
    if (row.table->gt_count == 0) continue;
    const OracleBound b = oracle_bound(*row.table);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s: detection rate %s %.4f, %s %.4f, oracle union %.4f\n",
                  row.name, label_a.c_str(), b.detection_rate_a, label_b.c_str(),
                  b.detection_rate_b, b.union_detection_rate);
    out += buf;
    for (int d = 0; d < 2; ++d) {
      out += std::string(row.name) + ": false positives per " +
             std::string(to_string(static_cast<FpDenominator>(d))) + " " + label_a + " " +
             fp_text(b.fp_rate_a[d]) + ", " + label_b + " " + fp_text(b.fp_rate_b[d]) +
             ", shared " + fp_text(b.fp_rate_after[d]) + "\n";
    }
  }
  return out;
}

namespace {

constexpr std::string_view kCsvHeader =
    "condition,images,gt,tp_both,tp_a_only,tp_b_only,fp_both,fp_a_only,fp_b_only";

}  // namespace

ComplementarityReport parse_complementarity_csv(std::string_view text, const std::string& source) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t number = 0;
  auto fail = [&](const std::string& what) {
    throw ParseError(source + ":" + std::to_string(number) + ": " + what);
  };
  ++number;
  if (!std::getline(in, line) || line != kCsvHeader) fail("expected header '" + std::string(kCsvHeader) + "'");
  ComplementarityReport r;
  bool seen[3] = {false, false, false};
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 9) fail("expected 9 fields, got " + std::to_string(f.size()));
    std::size_t v[8];
    for (std::size_t i = 0; i < 8; ++i) {
      const std::string& c = f[i + 1];
      const auto res = std::from_chars(c.data(), c.data() + c.size(), v[i]);
      if (res.ec != std::errc() || res.ptr != c.data() + c.size()) {
        fail("field " + std::to_string(i + 2) + ": expected a count, got '" + c + "'");
      }
    }
    const ComplementarityTable t{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[0]};
    int slot = f[0] == "all" ? 0 : f[0] == "day" ? 1 : f[0] == "night" ? 2 : -1;
    if (slot < 0) fail("unknown condition '" + f[0] + "' (expected all, day or night)");
    if (seen[slot]) fail("duplicate row '" + f[0] + "'");
    seen[slot] = true;
    try {
      t.validate();
    } catch (const ContractViolation& e) {
      fail(e.what());
    }
    (slot == 0 ? r.all : slot == 1 ? r.day : r.night) = t;
  }
  return r;
}

std::string complementarity_csv(const ComplementarityReport& report) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const Row& row : rows(report)) {
    const ComplementarityTable& t = *row.table;
    out += std::string(row.name) + "," + std::to_string(t.n_images) + "," +
           std::to_string(t.gt_count) + "," + std::to_string(t.tp_both) + "," +
           std::to_string(t.tp_a_only) + "," + std::to_string(t.tp_b_only) + "," +
           std::to_string(t.fp_both) + "," + std::to_string(t.fp_a_only) + "," +
           std::to_string(t.fp_b_only) + "\n";
  }
  return out;
}

}  // namespace msfuse
