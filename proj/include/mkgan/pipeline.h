#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mkgan/kernelgan.h"
#include "mkgan/metrics.h"
#include "mkgan/segmentation.h"
#include "mkgan/zssr.h"

namespace mkgan {

inline constexpr const char* kVersion = "0.1.0";

enum class SegmentMethod { fft, edges, anchors, external };
SegmentMethod parse_segment_method(const std::string& name);
std::string to_string(SegmentMethod method);

// Training crops come from the region (masked) or from the whole image
// (full); `full` with a shared seed degenerates to the single-kernel run.
enum class RegionSampling { masked, full };

struct PipelineConfig {
  int scale = 2;
  std::uint64_t seed = 0;
  double min_area_fraction = kDefaultMinAreaFraction;
  SegmentMethod segment_method = SegmentMethod::fft;
  MaskGenParams mask_params;
  bool postprocess = true;
  MaskLoadMode external_mask_mode = MaskLoadMode::lenient;
  KernelGanConfig kernelgan;
  ZssrConfig zssr;
  int feather = 0;
  bool shared_seed = false;
  RegionSampling region_sampling = RegionSampling::masked;
  int jobs = 1;

  void validate() const;
};

// Missing keys keep their defaults; unknown keys are rejected.
PipelineConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const PipelineConfig& cfg);
PipelineConfig load_config(const std::filesystem::path& path);
// FNV-1a over the canonical JSON dump, as 16 hex digits.
std::string config_hash(const PipelineConfig& cfg);

// Mask generation, optional island removal, blockify(scale) and the area
// check. `external_mask` is required for SegmentMethod::external and may be
// at the input size or at scale times the input size.
RegionSet segment_image(const Image& image, const PipelineConfig& cfg,
                        const std::optional<std::filesystem::path>& external_mask = std::nullopt);

struct RegionOutcome {
  std::string name;  // "fg", "bg" or "single"
  double area_fraction = 0.0;
  EstimatedKernel kernel;
  ZssrResult sr;
  std::uint64_t kernelgan_seed = 0;
  std::uint64_t zssr_seed = 0;
  double kernelgan_seconds = 0.0;
  double zssr_seconds = 0.0;
};

struct PipelineResult {
  Image sr;
  std::vector<RegionOutcome> regions;
  nlohmann::json report;  // contents of run.json
};

// Two-region run. With out_dir set, writes <stem>.fg/.bg.png,
// <stem>.fg/.bg.kernel.txt and .kernel.png, <stem>.fg/.bg.sr.png,
// <stem>.sr.png and run.json; artifacts of finished stages survive a
// failure in a later one.
PipelineResult run_pipeline(const Image& image, const RegionSet& regions, const PipelineConfig& cfg,
                            const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                            const std::string& stem = "image");

// One kernel and one SR network for the whole image.
PipelineResult run_single_kernel(const Image& image, const PipelineConfig& cfg);

struct CompareOptions {
  PipelineConfig config;
  std::optional<std::filesystem::path> artifacts_dir;  // per-image SR outputs
  bool verbose = false;
};

// Multi-kernel pipeline with oracle masks and the single-kernel baseline on
// every corpus entry, scored against the HR image after a `scale`-pixel
// border crop. Rows per image: multi, single, difference (multi - single);
// then the same three for "average". Throws FormatError on an empty corpus.
std::vector<MetricsRow> compare_corpus(const std::filesystem::path& corpus_dir, const CompareOptions& options);

// Runs fn(0..n-1) on up to `jobs` threads; rethrows the first failure by index.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

}  // namespace mkgan
