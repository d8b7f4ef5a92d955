#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "msfuse/cli/cli.hpp"
#include "msfuse/data/atomic_file.hpp"

namespace fs = std::filesystem;
using namespace msfuse;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("msfuse_cli_test_" + name);
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

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string p(const fs::path& path) { return path.string(); }

// One small dataset and one briefly trained model per single modality, shared by the tests below.
class CliWorkflow : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = scratch("workflow");
    ASSERT_EQ(run({"synth", "--out", p(dir_ / "d"), "--images", "12", "--test-images", "6", "--seed", "5"}).code, 0);
    for (const std::string f : {"none-color", "none-thermal"}) {
      const Outcome r = run({"train", "--data", p(dir_ / "d"), "--out", p(dir_ / (f + ".model")), "--fusion", f,
                         "--epochs1", "1", "--epochs2", "0", "--seed", "2"});
      ASSERT_EQ(r.code, 0) << r.err;
    }
  }
  static fs::path dir_;
};

fs::path CliWorkflow::dir_;

}  // namespace

TEST(Cli, SynthTwiceWithSameSeedGivesIdenticalDirectories) {
  const fs::path root = scratch("synth");
  for (const char* name : {"a", "b"}) {
    const Outcome r = run({"synth", "--out", p(root / name), "--images", "10", "--seed", "7"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  const auto a = tree(root / "a");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, tree(root / "b"));
}

TEST(Cli, PrintsResolvedConfiguration) {
  const fs::path root = scratch("config");
  const Outcome r = run({"synth", "--out", p(root / "d"), "--images", "2", "--test-images", "1", "--seed", "9"});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("msfuse synth"), std::string::npos);
  EXPECT_NE(r.out.find("seed"), std::string::npos);
  EXPECT_NE(r.out.find("= 9"), std::string::npos);
  EXPECT_NE(r.out.find("noise"), std::string::npos);
}

TEST(Cli, TrainWithoutDataIsAUsageError) {
  const Outcome r = run({"train", "--fusion", "halfway"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("--data"), std::string::npos);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(run({"synth", "--out", "x", "--colour", "1"}).code, kExitUsage);
  EXPECT_EQ(run({"train", "--data", "d", "--out", "m", "--fusion", "score"}).code, kExitUsage);
  EXPECT_EQ(run({"train", "--data", "d", "--out", "m", "--fusion", "sideways"}).code, kExitUsage);
  EXPECT_EQ(run({"train", "--data", "d", "--out", "m", "--fusion", "early", "--lr1", "-1"}).code, kExitUsage);
  EXPECT_EQ(run({"detect", "--data", "d", "--model", "m", "--out", "o", "--score-thresh", "1.5"}).code, kExitUsage);
  EXPECT_EQ(run({"eval", "--data", "d", "--dets", "x", "--condition", "dusk"}).code, kExitUsage);
  EXPECT_EQ(run({"eval", "--data", "d", "--dets", "x", "--dets", "y"}).code, kExitUsage);
  EXPECT_EQ(run({"compare", "--data", "d", "--dets", "x"}).code, kExitUsage);
}

TEST(Cli, HelpExitsZero) {
  const Outcome r = run({"--help"});
  EXPECT_EQ(r.code, kExitOk);
  for (const char* sub : {"synth", "train", "detect", "score-fuse", "eval", "compare", "proposals"}) {
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
  }
  EXPECT_EQ(run({"train", "--help"}).code, kExitOk);
}

TEST(Cli, MissingFilesAreDataErrors) {
  const fs::path root = scratch("missing");
  const Outcome r = run({"eval", "--data", p(root), "--dets", p(root / "none.csv")});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("error"), std::string::npos);
  EXPECT_EQ(run({"detect", "--data", p(root), "--model", p(root / "m"), "--out", p(root / "o.csv")}).code,
            kExitData);
}

TEST_F(CliWorkflow, DetectEvalRerunIsByteIdentical) {
  std::vector<std::string> mrs;
  for (const char* tag : {"1", "2"}) {
    const std::string dets = p(dir_ / (std::string("dets") + tag + ".csv"));
    const std::string curve = p(dir_ / (std::string("curve") + tag + ".csv"));
    ASSERT_EQ(run({"detect", "--data", p(dir_ / "d"), "--model", p(dir_ / "none-color.model"), "--out", dets,
                   "--score-thresh", "0"})
                  .code,
              0);
    const Outcome r = run({"eval", "--data", p(dir_ / "d"), "--dets", dets, "--curve", curve});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto at = r.out.find("MR=");
    ASSERT_NE(at, std::string::npos);
    mrs.push_back(r.out.substr(at, 9));
  }
  EXPECT_EQ(read_file(dir_ / "dets1.csv"), read_file(dir_ / "dets2.csv"));
  EXPECT_EQ(read_file(dir_ / "curve1.csv"), read_file(dir_ / "curve2.csv"));
  EXPECT_EQ(read_file(dir_ / "curve1.csv").rfind("fppi,miss_rate\n", 0), 0u);
  EXPECT_EQ(mrs[0], mrs[1]);
  EXPECT_EQ(mrs[0].size(), 9u);  // MR=0.1234
}

TEST_F(CliWorkflow, TrainRerunGivesIdenticalModel) {
  const Outcome r = run({"train", "--data", p(dir_ / "d"), "--out", p(dir_ / "again.model"), "--fusion",
                     "none-color", "--epochs1", "1", "--epochs2", "0", "--seed", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("epoch 1 "), std::string::npos);
  EXPECT_EQ(read_file(dir_ / "again.model.bin"), read_file(dir_ / "none-color.model.bin"));
}

TEST_F(CliWorkflow, ScoreFuseAcceptsEitherModelOrder) {
  const std::string c = p(dir_ / "none-color.model");
  const std::string t = p(dir_ / "none-thermal.model");
  for (const auto& [first, second, out] :
       {std::tuple{c, t, std::string("sf1.csv")}, std::tuple{t, c, std::string("sf2.csv")}}) {
    const Outcome r = run({"score-fuse", "--data", p(dir_ / "d"), "--model", first, "--model", second, "--out",
                       p(dir_ / out), "--score-thresh", "0"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(read_file(dir_ / "sf1.csv"), read_file(dir_ / "sf2.csv"));
  const Outcome same = run({"score-fuse", "--data", p(dir_ / "d"), "--model", c, "--model", c, "--out",
                        p(dir_ / "sf3.csv")});
  EXPECT_EQ(same.code, kExitData);
  EXPECT_NE(same.err.find("none-thermal"), std::string::npos);
}

TEST_F(CliWorkflow, EvalRejectsDetectionsForUnknownImages) {
  write_file_atomic(dir_ / "stray.csv", "image_id,x1,y1,x2,y2,score\nnot_an_image,1,1,20,40,0.900000\n");
  const Outcome r = run({"eval", "--data", p(dir_ / "d"), "--dets", p(dir_ / "stray.csv")});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("not_an_image"), std::string::npos);
}

TEST_F(CliWorkflow, CompareWritesTheTable) {
  for (const std::string f : {"none-color", "none-thermal"}) {
    ASSERT_EQ(run({"detect", "--data", p(dir_ / "d"), "--model", p(dir_ / (f + ".model")), "--out",
                   p(dir_ / (f + ".csv")), "--score-thresh", "0"})
                  .code,
              0);
  }
  const Outcome r = run({"compare", "--data", p(dir_ / "d"), "--dets", p(dir_ / "none-color.csv"), "--dets",
                     p(dir_ / "none-thermal.csv"), "--score-thresh", "0.3", "--out", p(dir_ / "cmp.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("oracle union"), std::string::npos);
  const std::string csv = read_file(dir_ / "cmp.csv");
  EXPECT_EQ(csv.rfind("condition,images,gt,", 0), 0u);
  EXPECT_NE(csv.find("\nall,6,"), std::string::npos);
}

TEST_F(CliWorkflow, ProposalCurvesAreMonotone) {
  const Outcome r = run({"proposals", "--data", p(dir_ / "d"), "--model", p(dir_ / "none-thermal.model"), "--topk",
                     "50", "--recall-vs-k", p(dir_ / "k.csv"), "--recall-vs-iou", p(dir_ / "iou.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("recall@50"), std::string::npos);
  auto column = [](const std::string& text) {
    std::vector<std::pair<double, double>> rows;
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      rows.emplace_back(std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
    }
    return rows;
  };
  const auto by_k = column(read_file(dir_ / "k.csv"));
  ASSERT_FALSE(by_k.empty());
  EXPECT_EQ(by_k.back().first, 50.0);
  for (std::size_t i = 1; i < by_k.size(); ++i) EXPECT_GE(by_k[i].second, by_k[i - 1].second);
  const auto by_iou = column(read_file(dir_ / "iou.csv"));
  ASSERT_EQ(by_iou.size(), 10u);
  EXPECT_DOUBLE_EQ(by_iou.front().first, 0.5);
  EXPECT_DOUBLE_EQ(by_iou.back().first, 0.95);
  for (std::size_t i = 1; i < by_iou.size(); ++i) EXPECT_LE(by_iou[i].second, by_iou[i - 1].second);
}
