// mkgan: segmentation, per-region kernel estimation and super-resolution,
// plus the synthetic corpus and comparison tooling.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "mkgan/error.h"
#include "mkgan/harness.h"
#include "mkgan/kernel_io.h"
#include "mkgan/metrics.h"
#include "mkgan/pipeline.h"
#include "mkgan/raster_io.h"

namespace fs = std::filesystem;
using namespace mkgan;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitTraining = 4;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& path, const char* what) {
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path.string());
}

std::string stem_of(const fs::path& input) { return input.stem().string(); }

// Command-line overrides applied on top of the config file.
struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<int> restarts;
  std::optional<int> kgan_iterations;
  std::optional<int> zssr_iterations;
  std::optional<double> min_area;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON config file (see config/schema.json)");
    app->add_option("--seed", seed, "Base random seed");
    app->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
    app->add_option("--restarts", restarts, "Kernel estimation runs per region; lowest final loss wins")
        ->check(CLI::PositiveNumber);
    app->add_option("--kernelgan-iterations", kgan_iterations, "Override kernelgan.iterations");
    app->add_option("--zssr-iterations", zssr_iterations, "Override zssr.iterations");
    app->add_option("--min-area", min_area, "Minimum area fraction of each region");
  }

  PipelineConfig resolve() const {
    PipelineConfig cfg;
    if (!config.empty()) {
      require_file(config, "config file");
      cfg = load_config(config);
    }
    if (seed) cfg.seed = *seed;
    if (jobs) cfg.jobs = *jobs;
    if (restarts) cfg.kernelgan.restarts = *restarts;
    if (kgan_iterations) cfg.kernelgan.iterations = *kgan_iterations;
    if (zssr_iterations) cfg.zssr.iterations = *zssr_iterations;
    if (min_area) cfg.min_area_fraction = *min_area;
    cfg.validate();
    return cfg;
  }
};

struct SegmentOptions {
  std::string method;
  std::string mask;
  std::optional<int> patch_size;
  std::optional<int> min_island;
  std::optional<double> edge_low;
  std::optional<double> edge_high;
  std::optional<double> anchor_fraction;
  std::optional<int> dilation;
  bool strict = false;

  void attach(CLI::App* app) {
    app->add_option("--method", method, "fft | edges | anchors | external")
        ->check(CLI::IsMember({"fft", "edges", "anchors", "external"}));
    app->add_option("--mask", mask, "External mask PNG (implies --method external)");
    app->add_option("--patch-size", patch_size, "FFT tile side (power of two)");
    app->add_option("--min-island", min_island, "Smallest component kept, pixels");
    app->add_option("--edge-low", edge_low, "Hysteresis low threshold");
    app->add_option("--edge-high", edge_high, "Hysteresis high threshold");
    app->add_option("--anchor-fraction", anchor_fraction, "Share of anchor tiles kept");
    app->add_option("--dilation", dilation, "Dilation radius, pixels");
    app->add_flag("--strict", strict, "Require an external mask of exactly {0, 255}");
  }

  void apply(PipelineConfig& cfg) const {
    if (!mask.empty() && method.empty()) cfg.segment_method = SegmentMethod::external;
    if (!method.empty()) cfg.segment_method = parse_segment_method(method);
    if (cfg.segment_method == SegmentMethod::external && mask.empty()) {
      throw UsageError("--method external requires --mask");
    }
    if (strict) cfg.external_mask_mode = MaskLoadMode::strict;
    MaskGenParams& p = cfg.mask_params;
    if (patch_size) p.patch_size = *patch_size;
    if (min_island) p.min_island_px = *min_island;
    if (edge_low) p.edge_low = *edge_low;
    if (edge_high) p.edge_high = *edge_high;
    if (anchor_fraction) p.anchor_top_fraction = *anchor_fraction;
    if (dilation) p.dilation_radius = *dilation;
    cfg.validate();
  }

  std::optional<fs::path> external() const {
    if (mask.empty()) return std::nullopt;
    require_file(mask, "mask file");
    return fs::path(mask);
  }
};

KernelSpec parse_kernel_spec(const std::string& text) {
  // gaussian:SIGMA | gaussian:SX,SY,THETA_DEG | motion:LEN,THETA_DEG | delta
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  std::vector<double> args;
  if (colon != std::string::npos) {
    std::stringstream ss(text.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        args.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw UsageError("bad kernel parameter '" + item + "'");
      }
    }
  }
  constexpr double deg = 3.14159265358979323846 / 180.0;
  if (kind == "delta" && args.empty()) return KernelSpec::delta();
  if (kind == "gaussian" && args.size() == 1) return KernelSpec::isotropic(args[0]);
  if (kind == "gaussian" && args.size() == 3) return KernelSpec::gaussian(args[0], args[1], args[2] * deg);
  if (kind == "motion" && args.size() == 2) return KernelSpec::motion(args[0], args[1] * deg);
  throw UsageError("bad kernel spec '" + text + "'");
}

Kernel resolve_kernel(const std::string& text, int size) {
  if (fs::is_regular_file(text)) return load_kernel_text(text);
  return make_kernel(parse_kernel_spec(text), size);
}

int cmd_segment(const std::string& input, const std::string& out_dir, const std::string& stem_opt,
                const CommonOptions& common, const SegmentOptions& seg) {
  require_file(input, "input image");
  PipelineConfig cfg = common.resolve();
  seg.apply(cfg);
  const Image image = load_image(input);
  const RegionSet regions = segment_image(image, cfg, seg.external());
  const std::string stem = stem_opt.empty() ? stem_of(input) : stem_opt;
  fs::create_directories(out_dir);
  save_regions(regions, out_dir, stem);
  std::printf("%s: foreground %.4f of %dx%d -> %s/%s.{fg,bg}.png\n", input.c_str(), regions.fg_area_fraction,
              image.width(), image.height(), out_dir.c_str(), stem.c_str());
  return kExitOk;
}

int cmd_pipeline(const std::string& input, const std::string& out_dir, const std::string& stem_opt,
                 bool single_kernel, const CommonOptions& common, const SegmentOptions& seg) {
  require_file(input, "input image");
  PipelineConfig cfg = common.resolve();
  seg.apply(cfg);
  const Image image = load_image(input);
  const std::string stem = stem_opt.empty() ? stem_of(input) : stem_opt;
  fs::create_directories(out_dir);
  if (single_kernel) {
    const PipelineResult result = run_single_kernel(image, cfg);
    save_kernel_text(result.regions[0].kernel.kernel, fs::path(out_dir) / (stem + ".single.kernel.txt"));
    save_kernel_png(result.regions[0].kernel.kernel, fs::path(out_dir) / (stem + ".single.kernel.png"));
    save_image(result.sr, fs::path(out_dir) / (stem + ".sr.png"));
    std::ofstream(fs::path(out_dir) / "run.json") << result.report.dump(2) << '\n';
  } else {
    const RegionSet regions = segment_image(image, cfg, seg.external());
    run_pipeline(image, regions, cfg, fs::path(out_dir), stem);
  }
  std::printf("%s -> %s/%s.sr.png\n", input.c_str(), out_dir.c_str(), stem.c_str());
  return kExitOk;
}

int cmd_compare(const std::string& corpus, const std::string& out_csv, const std::string& artifacts,
                const CommonOptions& common) {
  if (!fs::is_directory(corpus)) throw UsageError("corpus directory not found: " + corpus);
  CompareOptions opts;
  opts.config = common.resolve();
  opts.verbose = true;
  if (!artifacts.empty()) opts.artifacts_dir = fs::path(artifacts);
  const std::vector<MetricsRow> rows = compare_corpus(corpus, opts);
  if (fs::path(out_csv).has_parent_path()) fs::create_directories(fs::path(out_csv).parent_path());
  write_metrics_csv(rows, out_csv);
  for (const MetricsRow& r : rows) {
    if (r.image == "average") {
      std::printf("average %-10s psnr %9.4f  ssim %7.4f  mse %10.4f\n", r.method.c_str(), r.report.psnr,
                  r.report.ssim, r.report.mse);
    }
  }
  return kExitOk;
}

int cmd_degrade(const std::string& input, const std::string& output, const std::string& kernel_text,
                int kernel_size, const DegradeConfig& dcfg) {
  require_file(input, "input image");
  const Image hr = load_image(input);
  save_image(degrade(hr, resolve_kernel(kernel_text, kernel_size), dcfg), output);
  return kExitOk;
}

int cmd_metrics(const std::string& result, const std::string& reference, int border) {
  require_file(result, "result image");
  require_file(reference, "reference image");
  std::printf("%s\n", to_json(evaluate(load_image(result), load_image(reference), border)).c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-kernel blind super-resolution"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  CommonOptions common;
  SegmentOptions seg;
  std::string input, out_dir = ".", stem, out_csv, artifacts, output, kernel_text = "gaussian:1.5", reference;
  bool single_kernel = false;
  int kernel_size = 13, border = 2;
  DegradeConfig dcfg;
  CorpusSpec corpus;
  double fg_sigma = 0.8, bg_sigma = 2.2;

  CLI::App* segment = app.add_subcommand("segment", "Write <stem>.fg.png / <stem>.bg.png region masks");
  segment->add_option("input", input, "Input image")->required();
  segment->add_option("-o,--out", out_dir, "Output directory");
  segment->add_option("--stem", stem, "Artifact name stem (default: input file stem)");
  common.attach(segment);
  seg.attach(segment);

  CLI::App* pipeline = app.add_subcommand("pipeline", "Segment, estimate kernels, super-resolve and merge");
  pipeline->add_option("input", input, "Input (low-resolution) image")->required();
  pipeline->add_option("-o,--out", out_dir, "Output directory");
  pipeline->add_option("--stem", stem, "Artifact name stem (default: input file stem)");
  pipeline->add_flag("--single-kernel", single_kernel, "One kernel and one SR network for the whole image");
  common.attach(pipeline);
  seg.attach(pipeline);

  CLI::App* compare = app.add_subcommand("compare", "Multi-kernel vs single-kernel on a synthetic corpus");
  compare->add_option("corpus", input, "Corpus directory (see make-corpus)")->required();
  compare->add_option("csv", out_csv, "Output CSV")->required();
  compare->add_option("--artifacts", artifacts, "Keep per-image outputs under this directory");
  common.attach(compare);

  CLI::App* degrade_cmd = app.add_subcommand("degrade", "Blur, subsample and add noise to an image");
  degrade_cmd->add_option("input", input, "High-resolution image")->required();
  degrade_cmd->add_option("output", output, "Output PNG")->required();
  degrade_cmd->add_option("--kernel", kernel_text,
                          "gaussian:S | gaussian:SX,SY,DEG | motion:LEN,DEG | delta | path to .kernel.txt");
  degrade_cmd->add_option("--kernel-size", kernel_size, "Side of generated kernels")->check(CLI::PositiveNumber);
  degrade_cmd->add_option("--scale", dcfg.scale, "Subsampling factor (1, 2 or 4)");
  degrade_cmd->add_option("--noise", dcfg.noise_sigma, "Gaussian noise sigma in [0, 0.2]");
  degrade_cmd->add_option("--seed", dcfg.seed, "Noise seed");

  CLI::App* make_corpus = app.add_subcommand("make-corpus", "Build a two-kernel synthetic corpus");
  make_corpus->add_option("dir", out_dir, "Output directory")->required();
  make_corpus->add_option("--count", corpus.count, "Number of images")->check(CLI::PositiveNumber);
  make_corpus->add_option("--size", corpus.hr_size, "HR side, pixels")->check(CLI::PositiveNumber);
  make_corpus->add_option("--fg-sigma", fg_sigma, "Foreground Gaussian sigma");
  make_corpus->add_option("--bg-sigma", bg_sigma, "Background Gaussian sigma");
  make_corpus->add_option("--noise", corpus.noise_sigma, "Gaussian noise sigma");
  make_corpus->add_option("--seed", corpus.seed, "Corpus seed");

  CLI::App* metrics_cmd = app.add_subcommand("metrics", "PSNR / SSIM / MSE of one image pair as JSON");
  metrics_cmd->add_option("result", input, "Result image")->required();
  metrics_cmd->add_option("reference", reference, "Reference image")->required();
  metrics_cmd->add_option("--border", border, "Pixels cropped from each side")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (segment->parsed()) return cmd_segment(input, out_dir, stem, common, seg);
    if (pipeline->parsed()) return cmd_pipeline(input, out_dir, stem, single_kernel, common, seg);
    if (compare->parsed()) return cmd_compare(input, out_csv, artifacts, common);
    if (degrade_cmd->parsed()) return cmd_degrade(input, output, kernel_text, kernel_size, dcfg);
    if (metrics_cmd->parsed()) return cmd_metrics(input, reference, border);
    if (make_corpus->parsed()) {
      corpus.fg = KernelSpec::isotropic(fg_sigma);
      corpus.bg = KernelSpec::isotropic(bg_sigma);
      build_corpus(corpus, out_dir);
      std::printf("wrote %d entries to %s\n", corpus.count, out_dir.c_str());
      return kExitOk;
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const RegionTooSmall& e) {
    std::fprintf(stderr,
                 "error: %s\nhint: the %s region is below the minimum area; supply a different mask "
                 "(--mask), another --method, or lower --min-area\n",
                 e.what(), e.region().c_str());
    return kExitData;
  } catch (const TrainingDiverged& e) {
    std::fprintf(stderr, "error: %s\nhint: retry with --restarts or another --seed\n", e.what());
    return kExitTraining;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
