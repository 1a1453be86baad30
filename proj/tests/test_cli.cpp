#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"
#include "mkgan/harness.h"
#include "mkgan/ops.h"
#include "mkgan/raster_io.h"
#include "mkgan/segmentation.h"
#include "test_util.h"

namespace fs = std::filesystem;
using namespace mkgan;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli.log";
  const std::string cmd = std::string("\"") + MKGAN_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json run_json_without_timing(const fs::path& p) {
  nlohmann::json j = nlohmann::json::parse(slurp(p));
  j.erase("timing");
  return j;
}

constexpr const char* kTinyConfig = R"({
  "kernelgan": {"iterations": 6, "crop_size": 32, "width": 8},
  "zssr": {"iterations": 6, "crop": 16, "layers": 3, "width": 8}
})";

// Composite corpus entry with a 64x64 LR image; returns the entry directory.
fs::path tiny_corpus(const fs::path& dir, int count = 1) {
  CorpusSpec spec;
  spec.count = count;
  spec.hr_size = 128;
  spec.seed = 7;
  build_corpus(spec, dir / "corpus");
  std::ofstream(dir / "tiny.json") << kTinyConfig;
  return dir / "corpus" / "img000";
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  const auto dir = mkgan::test::scratch_dir("cli_usage");
  EXPECT_EQ(run("", dir).code, 2);
  EXPECT_EQ(run("frobnicate", dir).code, 2);
  EXPECT_EQ(run("pipeline " + (dir / "missing.png").string(), dir).code, 2);
  save_image(Image(64, 64, 1, 0.5), dir / "flat.png");
  EXPECT_EQ(run("segment " + (dir / "flat.png").string() + " --method edges --edge-low 0.5 --edge-high 0.2 -o " +
                    dir.string(),
                dir)
                .code,
            2);
  EXPECT_EQ(run("segment " + (dir / "flat.png").string() + " --method external -o " + dir.string(), dir).code, 2);
  EXPECT_EQ(run("metrics " + (dir / "flat.png").string() + " --border -1 " + (dir / "flat.png").string(), dir).code, 2);
  EXPECT_EQ(run("--version", dir).code, 0);
}

TEST(Cli, UnknownConfigKeyIsUsageError) {
  const auto dir = mkgan::test::scratch_dir("cli_badcfg");
  save_image(mkgan::test::random_image(64, 64, 3, 1), dir / "in.png");
  std::ofstream(dir / "bad.json") << R"({"kernelgan": {"iterations": 5, "learning_rat": 1}})";
  const RunResult r = run("segment " + (dir / "in.png").string() + " --config " + (dir / "bad.json").string() +
                              " -o " + dir.string(),
                          dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("learning_rat"), std::string::npos);
}

TEST(Cli, ExternalMaskPassThrough) {
  const auto dir = mkgan::test::scratch_dir("cli_external");
  save_image(mkgan::test::random_image(40, 48, 3, 2), dir / "in.png");
  const BinaryMask mask = make_split_mask(40, 48, 3);
  save_mask(mask, dir / "mask.png");
  const RunResult r = run("segment " + (dir / "in.png").string() + " --mask " + (dir / "mask.png").string() +
                              " -o " + dir.string() + " --stem s",
                          dir);
  ASSERT_EQ(r.code, 0) << r.output;
  const BinaryMask fg = load_mask(dir / "s.fg.png", MaskLoadMode::strict);
  EXPECT_EQ(fg, blockify_mask(mask, 2));
  EXPECT_EQ(load_mask(dir / "s.bg.png", MaskLoadMode::strict), fg.complement());
}

TEST(Cli, ExternalMaskAtTargetResolution) {
  const auto dir = mkgan::test::scratch_dir("cli_external_hr");
  save_image(mkgan::test::random_image(32, 32, 3, 4), dir / "in.png");
  const BinaryMask hr_mask = make_split_mask(64, 64, 5);
  save_mask(hr_mask, dir / "mask.png");
  ASSERT_EQ(run("segment " + (dir / "in.png").string() + " --mask " + (dir / "mask.png").string() + " --strict -o " +
                    dir.string() + " --stem s",
                dir)
                .code,
            0);
  EXPECT_EQ(load_mask(dir / "s.fg.png"), blockify_mask(lr_mask_from_hr(hr_mask, 2), 2));
}

TEST(Cli, StrictMaskRejectsGrayLevels) {
  const auto dir = mkgan::test::scratch_dir("cli_strict");
  save_image(mkgan::test::random_image(16, 16, 3, 6), dir / "in.png");
  Raster8 r{16, 16, 1, std::vector<std::uint8_t>(256, 200)};
  for (int i = 0; i < 128; ++i) r.samples[i] = 0;
  write_png(dir / "mask.png", r);
  const std::string base = "segment " + (dir / "in.png").string() + " --mask " + (dir / "mask.png").string() +
                           " -o " + dir.string();
  EXPECT_EQ(run(base, dir).code, 0);
  EXPECT_EQ(run(base + " --strict", dir).code, 3);
}

TEST(Cli, FftMethodSelectsTexturedHalf) {
  const auto dir = mkgan::test::scratch_dir("cli_fft");
  Image img(64, 64, 3);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        img.at(c, y, x) = x < 32 ? 0.2 + 0.4 * x / 64.0 : (((y / 2) + (x / 2)) % 2 ? 0.9 : 0.1);
      }
    }
  }
  for (double& v : img.data()) v = quantize(v) / 255.0;
  save_image(img, dir / "in.png");
  ASSERT_EQ(run("segment " + (dir / "in.png").string() + " --method fft -o " + dir.string() + " --stem s", dir).code, 0);
  const BinaryMask fg = load_mask(dir / "s.fg.png", MaskLoadMode::strict);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) EXPECT_EQ(fg(y, x), x >= 32);
  }
}

TEST(Cli, RegionTooSmallExitsThreeWithHint) {
  const auto dir = mkgan::test::scratch_dir("cli_small");
  save_image(mkgan::test::random_image(32, 32, 3, 7), dir / "in.png");
  save_mask(BinaryMask(32, 32, false), dir / "mask.png");
  const RunResult r = run("segment " + (dir / "in.png").string() + " --mask " + (dir / "mask.png").string() +
                              " -o " + dir.string(),
                          dir);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.output.find("hint:"), std::string::npos);
}

TEST(Cli, PipelineArtifactSetAndDeterminism) {
  const auto dir = mkgan::test::scratch_dir("cli_pipeline");
  const fs::path entry = tiny_corpus(dir);
  const std::string base = "pipeline " + (entry / "lr.png").string() + " --mask " + (entry / "mask.png").string() +
                           " --config " + (dir / "tiny.json").string() + " --stem s --seed 5 -o ";
  ASSERT_EQ(run(base + (dir / "a").string(), dir).code, 0);
  std::set<std::string> files;
  for (const auto& e : fs::directory_iterator(dir / "a")) files.insert(e.path().filename().string());
  const std::set<std::string> expected = {"s.fg.png", "s.bg.png", "s.fg.kernel.txt", "s.bg.kernel.txt",
                                          "s.fg.kernel.png", "s.bg.kernel.png", "s.fg.sr.png", "s.bg.sr.png",
                                          "s.sr.png", "run.json"};
  EXPECT_EQ(files, expected);
  const Image sr = load_image(dir / "a" / "s.sr.png");
  EXPECT_EQ(sr.height(), 128);
  EXPECT_EQ(sr.width(), 128);

  const nlohmann::json report = nlohmann::json::parse(slurp(dir / "a" / "run.json"));
  for (const char* key : {"config", "config_hash", "seed", "version", "timing", "regions"}) {
    EXPECT_TRUE(report.contains(key)) << key;
  }
  EXPECT_EQ(report.at("seed").get<int>(), 5);

  ASSERT_EQ(run(base + (dir / "b").string() + " --jobs 2", dir).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "s.sr.png"), slurp(dir / "b" / "s.sr.png"));
  nlohmann::json ja = run_json_without_timing(dir / "a" / "run.json");
  nlohmann::json jb = run_json_without_timing(dir / "b" / "run.json");
  ja["config"].erase("jobs");
  jb["config"].erase("jobs");
  EXPECT_EQ(ja, jb);
}

TEST(Cli, DegenerateConfigMatchesSingleKernel) {
  const auto dir = mkgan::test::scratch_dir("cli_degenerate");
  const fs::path entry = tiny_corpus(dir);
  std::ofstream(dir / "same.json") << R"({
    "shared_seed": true, "region_sampling": "full",
    "kernelgan": {"iterations": 6, "crop_size": 32, "width": 8},
    "zssr": {"iterations": 6, "crop": 16, "layers": 3, "width": 8}
  })";
  const std::string common = (entry / "lr.png").string() + " --config " + (dir / "same.json").string() +
                             " --stem s --seed 3 ";
  ASSERT_EQ(run("pipeline " + common + "--mask " + (entry / "mask.png").string() + " -o " + (dir / "multi").string(),
                dir)
                .code,
            0);
  ASSERT_EQ(run("pipeline " + common + "--single-kernel -o " + (dir / "single").string(), dir).code, 0);
  const Image multi = load_image(dir / "multi" / "s.sr.png"), single = load_image(dir / "single" / "s.sr.png");
  EXPECT_LE(mkgan::test::max_abs_diff(multi, single), 1.0 / 255.0 + 1e-12);
}

TEST(Cli, CompareWritesDocumentedCsv) {
  const auto dir = mkgan::test::scratch_dir("cli_compare");
  tiny_corpus(dir);
  const RunResult r = run("compare " + (dir / "corpus").string() + " " + (dir / "out.csv").string() + " --config " +
                              (dir / "tiny.json").string() + " --artifacts " + (dir / "art").string(),
                          dir);
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream in(dir / "out.csv");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  ASSERT_EQ(lines.size(), 7u);
  EXPECT_EQ(lines[0], "image,method,psnr,ssim,mse");
  const std::vector<std::string> prefixes = {"img000,multi,", "img000,single,", "img000,difference,",
                                             "average,multi,", "average,single,", "average,difference,"};
  for (std::size_t i = 0; i < prefixes.size(); ++i) EXPECT_EQ(lines[i + 1].rfind(prefixes[i], 0), 0u) << lines[i + 1];
  EXPECT_TRUE(fs::exists(dir / "art" / "img000" / "img000.sr.png"));
  EXPECT_TRUE(fs::exists(dir / "art" / "img000" / "img000.single.sr.png"));
}

TEST(Cli, CompareEmptyCorpusExitsThree) {
  const auto dir = mkgan::test::scratch_dir("cli_empty");
  fs::create_directories(dir / "corpus");
  EXPECT_EQ(run("compare " + (dir / "corpus").string() + " " + (dir / "out.csv").string(), dir).code, 3);
}

TEST(Cli, DegradeAndMetrics) {
  const auto dir = mkgan::test::scratch_dir("cli_degrade");
  Image hr = mkgan::test::random_image(32, 30, 3, 8);
  for (double& v : hr.data()) v = quantize(v) / 255.0;
  save_image(hr, dir / "hr.png");
  ASSERT_EQ(run("degrade " + (dir / "hr.png").string() + " " + (dir / "lr.png").string() + " --kernel delta", dir).code,
            0);
  EXPECT_EQ(load_image(dir / "lr.png"), subsample(hr, 2));
  ASSERT_EQ(run("degrade " + (dir / "hr.png").string() + " " + (dir / "g.png").string() + " --kernel gaussian:1.5",
                dir)
                .code,
            0);
  EXPECT_EQ(run("degrade " + (dir / "hr.png").string() + " " + (dir / "x.png").string() + " --kernel wobble:2", dir).code,
            2);

  const RunResult same = run("metrics " + (dir / "lr.png").string() + " " + (dir / "lr.png").string(), dir);
  ASSERT_EQ(same.code, 0);
  const auto j = nlohmann::json::parse(same.output);
  EXPECT_DOUBLE_EQ(j.at("psnr").get<double>(), 100.0);
  EXPECT_DOUBLE_EQ(j.at("mse").get<double>(), 0.0);
  EXPECT_EQ(run("metrics " + (dir / "lr.png").string() + " " + (dir / "hr.png").string(), dir).code, 3);
}
