#include "msfuse/cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>

#include "msfuse/complementarity/complementarity.hpp"
#include "msfuse/data/annotations.hpp"
#include "msfuse/data/atomic_file.hpp"
#include "msfuse/data/model_io.hpp"
#include "msfuse/data/synth.hpp"
#include "msfuse/errors.hpp"
#include "msfuse/eval/curve.hpp"
#include "msfuse/pipeline/detect.hpp"
#include "msfuse/pipeline/train.hpp"

namespace msfuse {

namespace fs = std::filesystem;

namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

using Settings = std::vector<std::pair<std::string, std::string>>;

void print_config(std::ostream& out, const std::string& command, const Settings& s) {
  out << "msfuse " << command << "\n";
  std::size_t width = 0;
  for (const auto& [k, v] : s) width = std::max(width, k.size());
  for (const auto& [k, v] : s) out << "  " << k << std::string(width - k.size(), ' ') << " = " << v << "\n";
}

// Flag values shared by several subcommands.
struct Common {
  std::string data;
  std::string out;
  std::string split = "test";
  std::string condition = "all";
  std::uint64_t seed = 0;
  float score_thresh = 0.5f;
  double nms = 0.3;
  std::size_t topk = 300;
  double iou = 0.5;
};

fs::path split_file(const Common& c) { return fs::path(c.data) / (c.split + ".txt"); }

bool keep_condition(const Common& c, Condition cond) {
  return c.condition == "all" || c.condition == to_string(cond);
}

DetectOptions detect_options(const Common& c) {
  DetectOptions o;
  o.score_thresh = c.score_thresh;
  o.nms_thresh = c.nms;
  o.top_k = c.topk;
  return o;
}

std::vector<LabeledPair> load_pairs(const Common& c) {
  std::vector<LabeledPair> all = load_split(split_file(c));
  std::erase_if(all, [&](const LabeledPair& p) { return !keep_condition(c, p.images.condition); });
  return all;
}

std::vector<AnnotationRecord> load_records(const Common& c) {
  std::vector<AnnotationRecord> all = load_annotations(split_file(c));
  std::erase_if(all, [&](const AnnotationRecord& r) { return !keep_condition(c, r.condition); });
  return all;
}

// Detections of every annotated image, in annotation order; unknown image ids are an error.
std::vector<std::vector<Detection>> align_detections(const DetectionSet& dets,
                                                     const std::vector<AnnotationRecord>& all_records,
                                                     const std::vector<AnnotationRecord>& records,
                                                     const std::string& source) {
  std::set<std::string> known;
  for (const AnnotationRecord& r : all_records) known.insert(r.image_id);
  for (const auto& [id, list] : dets) {
    if (!known.count(id)) {
      throw InputError(source + ": detections for image '" + id + "' which the split does not contain");
    }
  }
  std::vector<std::vector<Detection>> out;
  for (const AnnotationRecord& r : records) {
    const auto it = dets.find(r.image_id);
    out.push_back(it == dets.end() ? std::vector<Detection>{} : it->second);
  }
  return out;
}

int run_synth(const Common& c, std::size_t images, std::size_t test_images, std::ostream& out) {
  SynthParams p;
  p.n_images = images;
  p.n_test_images = test_images;
  p.seed = c.seed;
  print_config(out, "synth",
               {{"out", c.out},
                {"images", std::to_string(p.n_images)},
                {"test-images", std::to_string(p.n_test_images)},
                {"seed", std::to_string(p.seed)},
                {"image", std::to_string(p.image_h) + "x" + std::to_string(p.image_w)},
                {"visibility mix", num(p.p_both) + "/" + num(p.p_color_only) + "/" + num(p.p_thermal_only)},
                {"distractor density", num(p.distractor_density)},
                {"noise", num(p.noise)},
                {"night fraction", num(p.night_fraction)}});
  synth_dataset(p, c.out);
  out << "wrote " << p.n_images << " training and " << p.n_test_images << " test pairs to " << c.out
      << "\n";
  return kExitOk;
}

int run_train(const Common& c, const std::string& fusion, const TrainSchedule& sched_in,
              std::ostream& out) {
  const FusionStage stage = fusion_stage_from_string(fusion);
  if (stage == FusionStage::score) {
    throw ConfigError("score fusion combines two trained models; train none-color and none-thermal, then run score-fuse");
  }
  TrainSchedule sched = sched_in;
  sched.seed = c.seed;
  sched.validate();
  const DetectorConfig cfg;
  print_config(out, "train",
               {{"data", split_file(c).string()},
                {"out", c.out},
                {"fusion", fusion},
                {"epochs1", std::to_string(sched.epochs_phase1)},
                {"lr1", num(sched.lr_phase1)},
                {"epochs2", std::to_string(sched.epochs_phase2)},
                {"lr2", num(sched.lr_phase2)},
                {"seed", std::to_string(c.seed)},
                {"image", std::to_string(cfg.image_h) + "x" + std::to_string(cfg.image_w)}});
  const auto data = load_split(split_file(c));
  DetectorModel model = build_detector(cfg, stage, c.seed);
  out << "parameters " << model.parameter_count() << ", training pairs " << data.size() << "\n";
  const TrainLog log = train(model, data, sched, {}, [&](const EpochLog& e) {
    out << "epoch " << e.epoch << " lr " << num(e.lr) << " loss " << fixed(e.mean.total(), 4)
        << " (rpn_cls " << fixed(e.mean.rpn_cls, 4) << " rpn_bbox " << fixed(e.mean.rpn_bbox, 4)
        << " head_cls " << fixed(e.mean.head_cls, 4) << " head_bbox " << fixed(e.mean.head_bbox, 4)
        << ")\n"
        << std::flush;
  });
  save_model(c.out, model);
  out << "saved " << c.out << "\n";
  return kExitOk;
}

int run_detect(const Common& c, const std::string& model_path, std::ostream& out) {
  print_config(out, "detect",
               {{"data", split_file(c).string()},
                {"model", model_path},
                {"out", c.out},
                {"condition", c.condition},
                {"score-thresh", num(c.score_thresh)},
                {"nms", num(c.nms)},
                {"topk", std::to_string(c.topk)}});
  const DetectorModel model = load_model(model_path);
  const DetectOptions opts = detect_options(c);
  DetectionSet dets;
  std::size_t n = 0;
  for (const LabeledPair& p : load_pairs(c)) {
    auto d = detect(model, p.images, opts);
    n += d.size();
    dets[p.images.image_id] = std::move(d);
  }
  save_detections(c.out, dets);
  out << "fusion " << to_string(model.stage()) << ": " << n << " detections on " << dets.size()
      << " images written to " << c.out << "\n";
  return kExitOk;
}

int run_score_fuse(const Common& c, const std::vector<std::string>& models, std::ostream& out) {
  print_config(out, "score-fuse",
               {{"data", split_file(c).string()},
                {"model (1)", models[0]},
                {"model (2)", models[1]},
                {"out", c.out},
                {"condition", c.condition},
                {"weights", "0.5/0.5"},
                {"score-thresh", num(c.score_thresh)},
                {"nms", num(c.nms)},
                {"topk", std::to_string(c.topk)}});
  DetectorModel a = load_model(models[0]);
  DetectorModel b = load_model(models[1]);
  if (a.stage() == FusionStage::none_thermal && b.stage() == FusionStage::none_color) std::swap(a, b);
  if (a.stage() != FusionStage::none_color || b.stage() != FusionStage::none_thermal) {
    throw ContractViolation("score-fuse needs one none-color and one none-thermal model, got " +
                            std::string(to_string(a.stage())) + " and " +
                            std::string(to_string(b.stage())));
  }
  const DetectOptions opts = detect_options(c);
  DetectionSet dets;
  std::size_t n = 0;
  for (const LabeledPair& p : load_pairs(c)) {
    auto d = score_fuse(a, b, p.images, {}, opts);
    n += d.size();
    dets[p.images.image_id] = std::move(d);
  }
  save_detections(c.out, dets);
  out << "score fusion: " << n << " detections on " << dets.size() << " images written to " << c.out
      << "\n";
  return kExitOk;
}

int run_eval(const Common& c, const std::string& dets_path, const std::string& curve_path,
             std::ostream& out) {
  print_config(out, "eval",
               {{"data", split_file(c).string()},
                {"dets", dets_path},
                {"condition", c.condition},
                {"iou", num(c.iou)},
                {"reasonable min height", num(kReasonableMinHeight)},
                {"curve", curve_path.empty() ? "-" : curve_path}});
  const auto all = load_annotations(split_file(c));
  const auto records = load_records(c);
  const auto dets = align_detections(load_detections(dets_path), all, records, dets_path);
  std::vector<std::vector<GroundTruth>> gts;
  for (const AnnotationRecord& r : records) gts.push_back(r.objects);
  const MRFPPICurve curve = mr_fppi_curve(dets, gts, c.iou);
  const double mr = log_avg_miss_rate(curve);
  if (!curve_path.empty()) {
    std::string csv = "fppi,miss_rate\n";
    for (const CurvePoint& p : curve.points) csv += fixed(p.fppi, 6) + "," + fixed(p.miss_rate, 6) + "\n";
    write_file_atomic(curve_path, csv);
  }
  out << "images " << curve.n_images << ", reasonable ground truths " << curve.n_gts
      << ", curve points " << curve.points.size() << "\n";
  out << "MR=" << fixed(mr, 4) << "\n";
  return kExitOk;
}

int run_compare(const Common& c, const std::vector<std::string>& det_paths, std::ostream& out) {
  print_config(out, "compare",
               {{"data", split_file(c).string()},
                {"dets (a)", det_paths[0]},
                {"dets (b)", det_paths[1]},
                {"score-thresh", num(c.score_thresh)},
                {"iou", num(c.iou)},
                {"fp pairing iou", num(0.5)},
                {"out", c.out.empty() ? "-" : c.out}});
  const auto records = load_annotations(split_file(c));
  std::vector<ImageMatch> ma;
  std::vector<ImageMatch> mb;
  for (int side = 0; side < 2; ++side) {
    const auto dets = align_detections(load_detections(det_paths[side]), records, records, det_paths[side]);
    for (std::size_t i = 0; i < records.size(); ++i) {
      (side == 0 ? ma : mb)
          .push_back(match_image(records[i].image_id, records[i].condition, dets[i],
                                 records[i].objects, c.score_thresh, c.iou));
    }
  }
  const ComplementarityReport report = partition_by_condition(ma, mb);
  out << format_complementarity(report, "a", "b");
  if (!c.out.empty()) write_file_atomic(c.out, complementarity_csv(report));
  return kExitOk;
}

int run_proposals(const Common& c, const std::string& model_path, const std::string& vs_k,
                  const std::string& vs_iou, std::ostream& out) {
  print_config(out, "proposals",
               {{"data", split_file(c).string()},
                {"model", model_path},
                {"condition", c.condition},
                {"topk", std::to_string(c.topk)},
                {"iou", num(c.iou)},
                {"recall-vs-k", vs_k.empty() ? "-" : vs_k},
                {"recall-vs-iou", vs_iou.empty() ? "-" : vs_iou}});
  const DetectorModel model = load_model(model_path);
  std::vector<std::vector<BBox>> boxes;
  std::vector<std::vector<GroundTruth>> gts;
  for (const LabeledPair& p : load_pairs(c)) {
    std::vector<BBox> b;
    for (const Proposal& q : rpn_forward(model, p.images.view(), c.topk)) b.push_back(q.bbox);
    boxes.push_back(std::move(b));
    gts.push_back(p.objects);
  }
  if (!vs_k.empty()) {
    std::string csv = "k,recall\n";
    std::vector<std::size_t> ks{1, 2, 3, 5, 10, 20, 30, 50, 100, 200, 300, 500, 1000};
    std::erase_if(ks, [&](std::size_t k) { return k > c.topk; });
    if (ks.empty() || ks.back() != c.topk) ks.push_back(c.topk);
    for (std::size_t k : ks) {
      csv += std::to_string(k) + "," + fixed(proposal_recall(boxes, gts, k, c.iou), 6) + "\n";
    }
    write_file_atomic(vs_k, csv);
  }
  if (!vs_iou.empty()) {
    std::string csv = "iou,recall\n";
    for (int step = 0; step <= 9; ++step) {
      const double t = 0.5 + 0.05 * step;
      csv += fixed(t, 2) + "," + fixed(proposal_recall(boxes, gts, c.topk, t), 6) + "\n";
    }
    write_file_atomic(vs_iou, csv);
  }
  out << "fusion " << to_string(model.stage()) << ": recall@" << c.topk << " (iou " << num(c.iou)
      << ") = " << fixed(proposal_recall(boxes, gts, c.topk, c.iou), 4) << "\n";
  return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multispectral (color + thermal) pedestrian detection toolkit", "msfuse"};
  app.require_subcommand(1, 1);

  Common c;
  const std::vector<std::string> fusions{"none-color", "none-thermal", "early", "halfway", "late"};
  const auto conditions = CLI::IsMember({"all", "day", "night"});
  const auto unit = CLI::Range(0.0, 1.0);

  auto add_data = [&](CLI::App* s, const std::string& split) {
    s->add_option("--data", c.data, "Dataset directory (reads " + split + ".txt and images/)")->required();
  };
  auto add_condition = [&](CLI::App* s) {
    s->add_option("--condition", c.condition, "Restrict to day or night images")
        ->check(conditions)
        ->capture_default_str();
  };
  auto add_detect_opts = [&](CLI::App* s) {
    s->add_option("--score-thresh", c.score_thresh, "Keep detections scoring above this")
        ->check(unit)
        ->capture_default_str();
    s->add_option("--nms", c.nms, "Detection NMS IoU threshold")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    s->add_option("--topk", c.topk, "Proposals per image")->check(CLI::PositiveNumber)->capture_default_str();
  };

  std::size_t images = 500;
  std::size_t test_images = 100;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic color/thermal dataset");
  synth->add_option("--out", c.out, "Output directory")->required();
  synth->add_option("--images", images, "Training pairs")->capture_default_str();
  synth->add_option("--test-images", test_images, "Test pairs")->capture_default_str();
  synth->add_option("--seed", c.seed, "Generator seed")->capture_default_str();

  std::string fusion;
  TrainSchedule sched;
  auto* train_cmd = app.add_subcommand("train", "Train one detector variant");
  add_data(train_cmd, "train");
  train_cmd->add_option("--out", c.out, "Model file to write (plus <out>.bin)")->required();
  train_cmd->add_option("--fusion", fusion, "Fusion variant")->required()->check(CLI::IsMember(fusions));
  train_cmd->add_option("--epochs1", sched.epochs_phase1, "Epochs at the first learning rate")->capture_default_str();
  train_cmd->add_option("--lr1", sched.lr_phase1, "First learning rate")->capture_default_str();
  train_cmd->add_option("--epochs2", sched.epochs_phase2, "Epochs at the second learning rate")->capture_default_str();
  train_cmd->add_option("--lr2", sched.lr_phase2, "Second learning rate")->capture_default_str();
  train_cmd->add_option("--seed", c.seed, "Initialization and sampling seed")->capture_default_str();

  std::string model_path;
  auto* detect_cmd = app.add_subcommand("detect", "Run a trained model over a split");
  add_data(detect_cmd, "test");
  detect_cmd->add_option("--model", model_path, "Model file")->required();
  detect_cmd->add_option("--out", c.out, "Detection CSV to write")->required();
  add_condition(detect_cmd);
  add_detect_opts(detect_cmd);

  std::vector<std::string> models;
  auto* fuse_cmd = app.add_subcommand("score-fuse", "Combine a color and a thermal model by score exchange");
  add_data(fuse_cmd, "test");
  fuse_cmd->add_option("--model", models, "Give twice: the none-color and the none-thermal model")->required();
  fuse_cmd->add_option("--out", c.out, "Detection CSV to write")->required();
  add_condition(fuse_cmd);
  add_detect_opts(fuse_cmd);

  std::vector<std::string> dets;
  std::string curve;
  auto* eval_cmd = app.add_subcommand("eval", "Log-average miss rate of a detection file");
  add_data(eval_cmd, "test");
  eval_cmd->add_option("--dets", dets, "Detection CSV")->required();
  eval_cmd->add_option("--iou", c.iou, "Matching IoU threshold")->check(unit)->capture_default_str();
  eval_cmd->add_option("--curve", curve, "Write the miss rate / FPPI curve as CSV");
  add_condition(eval_cmd);

  auto* compare_cmd = app.add_subcommand("compare", "Complementarity of two detection files");
  add_data(compare_cmd, "test");
  compare_cmd->add_option("--dets", dets, "Give twice: detector a, then detector b")->required();
  compare_cmd->add_option("--score-thresh", c.score_thresh, "Operating point")->check(unit)->capture_default_str();
  compare_cmd->add_option("--iou", c.iou, "Matching IoU threshold")->check(unit)->capture_default_str();
  compare_cmd->add_option("--out", c.out, "Write the table as CSV");

  std::string vs_k;
  std::string vs_iou;
  auto* prop_cmd = app.add_subcommand("proposals", "Proposal recall of a model's RPN");
  add_data(prop_cmd, "test");
  prop_cmd->add_option("--model", model_path, "Model file")->required();
  prop_cmd->add_option("--topk", c.topk, "Proposals per image")->check(CLI::PositiveNumber)->capture_default_str();
  prop_cmd->add_option("--iou", c.iou, "Recall IoU threshold")->check(unit)->capture_default_str();
  prop_cmd->add_option("--recall-vs-k", vs_k, "Write recall against proposal count as CSV");
  prop_cmd->add_option("--recall-vs-iou", vs_iou, "Write recall against IoU threshold as CSV");
  add_condition(prop_cmd);

  std::vector<std::string> argv_store{"msfuse"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const std::string& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "msfuse: " << e.what() << "\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kExitUsage;
  }

  auto usage = [&](const std::string& what) {
    err << "msfuse: " << what << "\n";
    return kExitUsage;
  };
  if (train_cmd->parsed()) c.split = "train";
  try {
    if (synth->parsed()) return run_synth(c, images, test_images, out);
    if (train_cmd->parsed()) return run_train(c, fusion, sched, out);
    if (detect_cmd->parsed()) return run_detect(c, model_path, out);
    if (fuse_cmd->parsed()) {
      if (models.size() != 2) return usage("score-fuse needs --model twice (color and thermal)");
      return run_score_fuse(c, models, out);
    }
    if (eval_cmd->parsed()) {
      if (dets.size() != 1) return usage("eval takes exactly one --dets");
      return run_eval(c, dets[0], curve, out);
    }
    if (compare_cmd->parsed()) {
      if (dets.size() != 2) return usage("compare needs --dets twice");
      return run_compare(c, dets, out);
    }
    if (prop_cmd->parsed()) return run_proposals(c, model_path, vs_k, vs_iou, out);
  } catch (const ConfigError& e) {
    return usage(e.what());
  } catch (const std::exception& e) {
    err << "msfuse: error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace msfuse
