#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mkgan/image.h"
#include "mkgan/ops.h"
#include "mkgan/segmentation.h"

namespace mkgan {

struct KernelSpec {
  enum class Type { delta, gaussian, motion };
  Type type = Type::delta;
  double sigma_x = 1.0;
  double sigma_y = 1.0;
  double theta = 0.0;   // radians
  double length = 0.0;  // motion only, pixels

  static KernelSpec gaussian(double sigma_x, double sigma_y, double theta = 0.0);
  static KernelSpec isotropic(double sigma) { return gaussian(sigma, sigma); }
  static KernelSpec motion(double length, double theta);
  static KernelSpec delta() { return {}; }
};

// Sampled on the size x size grid around the center and normalized to sum 1.
Kernel make_kernel(const KernelSpec& spec, int size = 13);

struct CompositeTruth {
  Image hr;
  BinaryMask mask;  // HR dims, as supplied
  Kernel fg_kernel;
  Kernel bg_kernel;
  DegradeConfig config;
};

struct Composite {
  Image lr;
  BinaryMask lr_mask;  // provenance of each LR pixel: true = fg_kernel
  CompositeTruth truth;
};

// LR pixels come from degrade(hr, k_fg) where the blockified mask,
// subsampled, is true and from degrade(hr, k_bg) elsewhere. Both use the
// same noise seed.
Composite make_composite(const Image& hr, const BinaryMask& mask, const Kernel& k_fg, const Kernel& k_bg,
                         const DegradeConfig& cfg, double min_area_fraction = kDefaultMinAreaFraction);

// The LR-resolution mask implied by an HR mask.
BinaryMask lr_mask_from_hr(const BinaryMask& hr_mask, int scale);

// Dead-leaves RGB image: occluding disks with power-law radii and random
// colors, 4x4 supersampled.
Image dead_leaves(int height, int width, std::uint64_t seed);

// Two-region mask split by a gently waving line; the foreground share lies
// in [0.45, 0.55] and orientation and polarity vary with the seed.
BinaryMask make_split_mask(int height, int width, std::uint64_t seed);

struct CorpusEntry {
  std::string stem;
  Composite composite;
};

struct CorpusSpec {
  int count = 10;
  int hr_size = 256;
  KernelSpec fg = KernelSpec::isotropic(0.8);
  KernelSpec bg = KernelSpec::isotropic(2.2);
  int kernel_size = 13;
  int scale = 2;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

CorpusEntry make_corpus_entry(const CorpusSpec& spec, int index);

// <dir>/<stem>/{hr.png, lr.png, mask.png, fg.kernel.txt, bg.kernel.txt, meta.json}
void save_corpus_entry(const CorpusEntry& entry, const std::filesystem::path& dir);
CorpusEntry load_corpus_entry(const std::filesystem::path& entry_dir);
// Entry directories (those holding meta.json), sorted by name.
std::vector<std::filesystem::path> list_corpus(const std::filesystem::path& dir);
void build_corpus(const CorpusSpec& spec, const std::filesystem::path& dir);

}  // namespace mkgan
