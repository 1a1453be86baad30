#include "mkgan/pipeline.h"

#include <array>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "mkgan/compose.h"
#include "mkgan/error.h"
#include "mkgan/harness.h"
#include "mkgan/kernel_io.h"
#include "mkgan/raster_io.h"

namespace mkgan {

namespace fs = std::filesystem;
using nlohmann::json;

SegmentMethod parse_segment_method(const std::string& name) {
  if (name == "fft") return SegmentMethod::fft;
  if (name == "edges") return SegmentMethod::edges;
  if (name == "anchors") return SegmentMethod::anchors;
  if (name == "external") return SegmentMethod::external;
  throw InvalidArgument("unknown segmentation method: " + name);
}

std::string to_string(SegmentMethod method) {
  switch (method) {
    case SegmentMethod::fft: return "fft";
    case SegmentMethod::edges: return "edges";
    case SegmentMethod::anchors: return "anchors";
    case SegmentMethod::external: return "external";
  }
  return "fft";
}

void PipelineConfig::validate() const {
  if (scale != 2) throw InvalidArgument("scale: only 2 is supported");
  if (!(min_area_fraction > 0.0 && min_area_fraction < 0.5)) {
    throw InvalidArgument("min_area_fraction must lie in (0, 0.5)");
  }
  if (feather < 0) throw InvalidArgument("feather must be >= 0");
  if (jobs < 1) throw InvalidArgument("jobs must be >= 1");
  mask_params.validate();
  kernelgan.validate();
  zssr.validate();
}

namespace {

// Copies known keys out of a JSON object and rejects anything else.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw InvalidArgument(where_ + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& target) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      target = it->get<T>();
    } catch (const json::exception&) {
      throw InvalidArgument(where_ + "." + key + ": wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw InvalidArgument(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json kernel_json(const Kernel& k) {
  json rows = json::array();
  for (int r = 0; r < k.size(); ++r) {
    json row = json::array();
    for (int c = 0; c < k.size(); ++c) row.push_back(k(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw FormatError("write failed: " + path.string());
}

struct RegionJob {
  std::string name;
  BinaryMask sample_mask;
  double area_fraction = 0.0;
  std::uint64_t seed = 0;
};

json region_report(const RegionOutcome& r, bool with_sr) {
  json trace_g = json::array(), trace_d = json::array(), trace_r = json::array();
  for (const LossRecord& l : r.kernel.loss_trace) {
    trace_g.push_back(l.generator);
    trace_d.push_back(l.discriminator);
    trace_r.push_back(l.regularization);
  }
  json out = {
      {"area_fraction", r.area_fraction},
      {"kernel", kernel_json(r.kernel.kernel)},
      {"kernelgan",
       {{"seed", r.kernelgan_seed},
        {"restart_seed", r.kernel.seed},
        {"iterations", r.kernel.iterations_run},
        {"final_generator_loss", r.kernel.final_generator_loss},
        {"tail_loss_variance", r.kernel.tail_loss_variance},
        {"loss_trace", {{"generator", trace_g}, {"discriminator", trace_d}, {"regularization", trace_r}}}}},
  };
  if (with_sr) {
    out["zssr"] = {{"seed", r.zssr_seed}, {"iterations", r.sr.iterations_run}, {"loss_trace", r.sr.loss_trace}};
  }
  return out;
}

// Estimates kernels and SR images for each job; `on_kernels` runs between
// the two stages so kernel artifacts exist even when SR fails.
std::vector<RegionOutcome> run_regions(const Image& image, const std::vector<RegionJob>& jobs, const PipelineConfig& cfg,
                                       const std::function<void(const std::vector<RegionOutcome>&)>& on_kernels) {
  std::vector<RegionOutcome> out(jobs.size());
  const int threads = std::min<int>(cfg.jobs, static_cast<int>(jobs.size()));
  parallel_for(static_cast<int>(jobs.size()), threads, [&](int i) {
    const RegionJob& job = jobs[i];
    RegionOutcome& r = out[i];
    r.name = job.name;
    r.area_fraction = job.area_fraction;
    KernelGanConfig kcfg = cfg.kernelgan;
    kcfg.scale = cfg.scale;
    kcfg.seed = job.seed;
    r.kernelgan_seed = job.seed;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      r.kernel = estimate_kernel(image, job.sample_mask, kcfg);
    } catch (const RegionTooSmall& e) {
      throw RegionTooSmall(job.name, job.area_fraction, std::string("kernel estimation: ") + e.what());
    }
    r.kernelgan_seconds = seconds_since(t0);
  });
  if (on_kernels) on_kernels(out);
  parallel_for(static_cast<int>(jobs.size()), threads, [&](int i) {
    const RegionJob& job = jobs[i];
    RegionOutcome& r = out[i];
    ZssrConfig zcfg = cfg.zssr;
    zcfg.scale = cfg.scale;
    zcfg.seed = job.seed;
    r.zssr_seed = job.seed;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      r.sr = zssr_upscale(image, r.kernel.kernel, job.sample_mask, zcfg);
    } catch (const RegionTooSmall& e) {
      throw RegionTooSmall(job.name, job.area_fraction, std::string("super-resolution: ") + e.what());
    }
    r.zssr_seconds = seconds_since(t0);
  });
  return out;
}

json base_report(const Image& image, const PipelineConfig& cfg, const std::string& stem) {
  return {{"version", kVersion},
          {"stem", stem},
          {"input", {{"height", image.height()}, {"width", image.width()}, {"channels", image.channels()}}},
          {"config", config_to_json(cfg)},
          {"config_hash", config_hash(cfg)},
          {"seed", cfg.seed}};
}

}  // namespace

PipelineConfig config_from_json(const json& j) {
  PipelineConfig cfg;
  ObjectReader top(j, "config");
  top.read("scale", cfg.scale);
  top.read("seed", cfg.seed);
  top.read("min_area_fraction", cfg.min_area_fraction);
  top.read("shared_seed", cfg.shared_seed);
  top.read("jobs", cfg.jobs);
  std::string sampling = "masked";
  top.read("region_sampling", sampling);
  if (sampling == "masked") {
    cfg.region_sampling = RegionSampling::masked;
  } else if (sampling == "full") {
    cfg.region_sampling = RegionSampling::full;
  } else {
    throw InvalidArgument("config.region_sampling: expected 'masked' or 'full'");
  }

  if (const json* s = top.child("segmentation")) {
    ObjectReader r(*s, "config.segmentation");
    std::string method = to_string(cfg.segment_method);
    r.read("method", method);
    cfg.segment_method = parse_segment_method(method);
    r.read("postprocess", cfg.postprocess);
    std::string mode = "lenient";
    r.read("external_mask_mode", mode);
    if (mode == "lenient") {
      cfg.external_mask_mode = MaskLoadMode::lenient;
    } else if (mode == "strict") {
      cfg.external_mask_mode = MaskLoadMode::strict;
    } else {
      throw InvalidArgument("config.segmentation.external_mask_mode: expected 'lenient' or 'strict'");
    }
    MaskGenParams& p = cfg.mask_params;
    r.read("patch_size", p.patch_size);
    r.read("min_island_px", p.min_island_px);
    r.read("edge_low", p.edge_low);
    r.read("edge_high", p.edge_high);
    r.read("anchor_patch", p.anchor_patch);
    r.read("anchor_top_fraction", p.anchor_top_fraction);
    r.read("dilation_radius", p.dilation_radius);
    r.read("blur_post", p.blur_post);
    r.finish();
  }
  if (const json* s = top.child("kernelgan")) {
    ObjectReader r(*s, "config.kernelgan");
    KernelGanConfig& k = cfg.kernelgan;
    r.read("iterations", k.iterations);
    r.read("crop_size", k.crop_size);
    r.read("batch", k.batch);
    r.read("lr_generator", k.lr_generator);
    r.read("lr_discriminator", k.lr_discriminator);
    r.read("beta1", k.beta1);
    r.read("mask_coverage_min", k.mask_coverage_min);
    r.read("reg_warmup_fraction", k.reg_warmup_fraction);
    r.read("width", k.width);
    r.read("spectral_norm_all", k.spectral_norm_all);
    r.read("min_valid_crops", k.min_valid_crops);
    r.read("restarts", k.restarts);
    if (const json* w = r.child("reg_weights")) {
      ObjectReader rw(*w, "config.kernelgan.reg_weights");
      rw.read("sum_to_one", k.reg.sum_to_one);
      rw.read("boundary", k.reg.boundary);
      rw.read("sparsity", k.reg.sparsity);
      rw.read("center", k.reg.center);
      rw.finish();
    }
    r.finish();
  }
  if (const json* s = top.child("zssr")) {
    ObjectReader r(*s, "config.zssr");
    ZssrConfig& z = cfg.zssr;
    r.read("layers", z.layers);
    r.read("width", z.width);
    r.read("iterations", z.iterations);
    r.read("learning_rate", z.learning_rate);
    r.read("lr_halving_interval", z.lr_halving_interval);
    r.read("crop", z.crop);
    r.read("augment", z.augment);
    r.read("mask_coverage_min", z.mask_coverage_min);
    r.read("ensemble", z.ensemble);
    r.finish();
  }
  if (const json* s = top.child("compose")) {
    ObjectReader r(*s, "config.compose");
    r.read("feather", cfg.feather);
    r.finish();
  }
  top.finish();
  cfg.kernelgan.scale = cfg.scale;
  cfg.zssr.scale = cfg.scale;
  cfg.validate();
  return cfg;
}

json config_to_json(const PipelineConfig& cfg) {
  const MaskGenParams& p = cfg.mask_params;
  const KernelGanConfig& k = cfg.kernelgan;
  const ZssrConfig& z = cfg.zssr;
  return {
      {"scale", cfg.scale},
      {"seed", cfg.seed},
      {"min_area_fraction", cfg.min_area_fraction},
      {"shared_seed", cfg.shared_seed},
      {"region_sampling", cfg.region_sampling == RegionSampling::full ? "full" : "masked"},
      {"jobs", cfg.jobs},
      {"segmentation",
       {{"method", to_string(cfg.segment_method)},
        {"postprocess", cfg.postprocess},
        {"external_mask_mode", cfg.external_mask_mode == MaskLoadMode::strict ? "strict" : "lenient"},
        {"patch_size", p.patch_size},
        {"min_island_px", p.min_island_px},
        {"edge_low", p.edge_low},
        {"edge_high", p.edge_high},
        {"anchor_patch", p.anchor_patch},
        {"anchor_top_fraction", p.anchor_top_fraction},
        {"dilation_radius", p.dilation_radius},
        {"blur_post", p.blur_post}}},
      {"kernelgan",
       {{"iterations", k.iterations},
        {"crop_size", k.crop_size},
        {"batch", k.batch},
        {"lr_generator", k.lr_generator},
        {"lr_discriminator", k.lr_discriminator},
        {"beta1", k.beta1},
        {"mask_coverage_min", k.mask_coverage_min},
        {"reg_warmup_fraction", k.reg_warmup_fraction},
        {"width", k.width},
        {"spectral_norm_all", k.spectral_norm_all},
        {"min_valid_crops", k.min_valid_crops},
        {"restarts", k.restarts},
        {"reg_weights",
         {{"sum_to_one", k.reg.sum_to_one},
          {"boundary", k.reg.boundary},
          {"sparsity", k.reg.sparsity},
          {"center", k.reg.center}}}}},
      {"zssr",
       {{"layers", z.layers},
        {"width", z.width},
        {"iterations", z.iterations},
        {"learning_rate", z.learning_rate},
        {"lr_halving_interval", z.lr_halving_interval},
        {"crop", z.crop},
        {"augment", z.augment},
        {"mask_coverage_min", z.mask_coverage_min},
        {"ensemble", z.ensemble}}},
      {"compose", {{"feather", cfg.feather}}},
  };
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const PipelineConfig& cfg) {
  json j = config_to_json(cfg);
  // Thread count does not change results.
  j.erase("jobs");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RegionSet segment_image(const Image& image, const PipelineConfig& cfg, const std::optional<fs::path>& external_mask) {
  BinaryMask mask;
  switch (cfg.segment_method) {
    case SegmentMethod::fft: mask = fft_texture_mask(image, cfg.mask_params); break;
    case SegmentMethod::edges: mask = edge_contour_mask(image, cfg.mask_params); break;
    case SegmentMethod::anchors: mask = anchor_pixel_mask(image, cfg.mask_params); break;
    case SegmentMethod::external:
      if (!external_mask) throw InvalidArgument("external segmentation needs a mask file");
      mask = load_mask(*external_mask, cfg.external_mask_mode);
      // A mask drawn at the target resolution is reduced to the input grid.
      if (mask.height() == image.height() * cfg.scale && mask.width() == image.width() * cfg.scale) {
        mask = lr_mask_from_hr(mask, cfg.scale);
      }
      if (!mask.matches(image)) throw ShapeError("external mask dims differ from image dims");
      break;
  }
  if (cfg.postprocess && cfg.segment_method != SegmentMethod::external) mask = postprocess_mask(mask, cfg.mask_params);
  return split_regions(blockify_mask(mask, cfg.scale), cfg.min_area_fraction);
}

PipelineResult run_pipeline(const Image& image, const RegionSet& regions, const PipelineConfig& cfg,
                            const std::optional<fs::path>& out_dir, const std::string& stem) {
  cfg.validate();
  if (!regions.foreground.matches(image) || !regions.background.matches(image)) {
    throw ShapeError("pipeline: region dims differ from image dims");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const bool full = cfg.region_sampling == RegionSampling::full;
  const BinaryMask everything(image.height(), image.width(), true);
  std::vector<RegionJob> jobs = {
      {"fg", full ? everything : regions.foreground, regions.fg_area_fraction, cfg.seed},
      {"bg", full ? everything : regions.background, 1.0 - regions.fg_area_fraction, cfg.seed + (cfg.shared_seed ? 0 : 1)},
  };

  PipelineResult result;
  result.report = base_report(image, cfg, stem);
  if (out_dir) {
    fs::create_directories(*out_dir);
    save_regions(regions, *out_dir, stem);
  }
  auto on_kernels = [&](const std::vector<RegionOutcome>& outcomes) {
    if (!out_dir) return;
    for (const RegionOutcome& r : outcomes) {
      save_kernel_text(r.kernel.kernel, *out_dir / (stem + "." + r.name + ".kernel.txt"));
      save_kernel_png(r.kernel.kernel, *out_dir / (stem + "." + r.name + ".kernel.png"));
    }
  };
  try {
    result.regions = run_regions(image, jobs, cfg, on_kernels);
  } catch (const std::exception& e) {
    if (out_dir) {
      json failed = result.report;
      failed["error"] = e.what();
      write_json(failed, *out_dir / "run.json");
    }
    throw;
  }
  result.sr = merge(result.regions[0].sr.image, result.regions[1].sr.image, regions.foreground, cfg.scale, cfg.feather);

  json timing = json::object();
  for (const RegionOutcome& r : result.regions) {
    result.report["regions"][r.name] = region_report(r, true);
    timing[r.name] = {{"kernelgan_seconds", r.kernelgan_seconds}, {"zssr_seconds", r.zssr_seconds}};
  }
  result.report["output"] = {{"height", result.sr.height()}, {"width", result.sr.width()}};
  timing["total_seconds"] = seconds_since(t0);
  result.report["timing"] = timing;
  if (out_dir) {
    for (const RegionOutcome& r : result.regions) save_image(r.sr.image, *out_dir / (stem + "." + r.name + ".sr.png"));
    save_image(result.sr, *out_dir / (stem + ".sr.png"));
    write_json(result.report, *out_dir / "run.json");
  }
  return result;
}

PipelineResult run_single_kernel(const Image& image, const PipelineConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<RegionJob> jobs = {{"single", BinaryMask(image.height(), image.width(), true), 1.0, cfg.seed}};
  PipelineResult result;
  result.report = base_report(image, cfg, "single");
  result.regions = run_regions(image, jobs, cfg, {});
  result.sr = result.regions[0].sr.image;
  result.report["regions"]["single"] = region_report(result.regions[0], true);
  result.report["timing"] = {{"total_seconds", seconds_since(t0)}};
  return result;
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  jobs = std::max(1, std::min(jobs, n));
  std::vector<std::exception_ptr> errors(n);
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) {
      pool.emplace_back([&] {
        for (int i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (std::thread& th : pool) th.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<MetricsRow> compare_corpus(const fs::path& corpus_dir, const CompareOptions& options) {
  const PipelineConfig& base = options.config;
  base.validate();
  const std::vector<fs::path> entries = list_corpus(corpus_dir);
  if (entries.empty()) throw FormatError("corpus is empty: " + corpus_dir.string());

  // Parallelize across images first; leftover threads go to the regions.
  const int n = static_cast<int>(entries.size());
  const int outer = std::min(base.jobs, n);
  PipelineConfig per_image = base;
  per_image.jobs = std::max(1, base.jobs / outer);

  std::vector<std::array<MetricsReport, 2>> scores(n);
  std::vector<std::string> stems(n);
  std::mutex log_mutex;
  parallel_for(n, outer, [&](int i) {
    const CorpusEntry entry = load_corpus_entry(entries[i]);
    const Composite& c = entry.composite;
    if (c.truth.config.scale != per_image.scale) {
      throw FormatError(entry.stem + ": corpus scale differs from the configured scale");
    }
    stems[i] = entry.stem;
    const RegionSet regions = split_regions(blockify_mask(c.lr_mask, per_image.scale), per_image.min_area_fraction);
    std::optional<fs::path> dir;
    if (options.artifacts_dir) dir = *options.artifacts_dir / entry.stem;
    const PipelineResult multi = run_pipeline(c.lr, regions, per_image, dir, entry.stem);
    const PipelineResult single = run_single_kernel(c.lr, per_image);
    if (dir) save_image(single.sr, *dir / (entry.stem + ".single.sr.png"));
    scores[i][0] = evaluate(multi.sr, c.truth.hr, per_image.scale);
    scores[i][1] = evaluate(single.sr, c.truth.hr, per_image.scale);
    if (options.verbose) {
      const std::lock_guard lock(log_mutex);
      std::fprintf(stderr, "%s: multi %.4f dB, single %.4f dB\n", entry.stem.c_str(), scores[i][0].psnr,
                   scores[i][1].psnr);
    }
  });

  auto difference = [](const MetricsReport& a, const MetricsReport& b) {
    return MetricsReport{a.psnr - b.psnr, a.ssim - b.ssim, a.mse - b.mse};
  };
  std::vector<MetricsRow> rows;
  MetricsReport mean_multi, mean_single;
  for (int i = 0; i < n; ++i) {
    rows.push_back({stems[i], "multi", scores[i][0]});
    rows.push_back({stems[i], "single", scores[i][1]});
    rows.push_back({stems[i], "difference", difference(scores[i][0], scores[i][1])});
    for (int m = 0; m < 2; ++m) {
      MetricsReport& acc = m == 0 ? mean_multi : mean_single;
      acc.psnr += scores[i][m].psnr / n;
      acc.ssim += scores[i][m].ssim / n;
      acc.mse += scores[i][m].mse / n;
    }
  }
  rows.push_back({"average", "multi", mean_multi});
  rows.push_back({"average", "single", mean_single});
  rows.push_back({"average", "difference", difference(mean_multi, mean_single)});
  return rows;
}

}  // namespace mkgan
