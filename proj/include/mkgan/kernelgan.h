#pragma once

#include <cstdint>
#include <vector>

#include "mkgan/image.h"
#include "mkgan/nn.h"
#include "mkgan/segmentation.h"

namespace mkgan {

struct KernelRegWeights {
  double sum_to_one = 0.5;
  double boundary = 0.5;
  double sparsity = 5.0;
  double center = 1.0;
};

struct KernelGanConfig {
  int scale = 2;
  int iterations = 3000;
  int crop_size = 64;
  int batch = 2;
  double lr_generator = 2e-4;
  double lr_discriminator = 2e-4;
  double beta1 = 0.5;
  double mask_coverage_min = 0.9;
  KernelRegWeights reg;
  // Sparsity and centering terms switch on after this fraction of iterations.
  double reg_warmup_fraction = 0.5;
  int width = 64;
  // Spectral normalization on every discriminator layer instead of the
  // first (7x7) layer only.
  bool spectral_norm_all = false;
  int min_valid_crops = 10;
  int restarts = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossRecord {
  double generator = 0.0;       // adversarial part
  double discriminator = 0.0;
  double regularization = 0.0;
};

struct EstimatedKernel {
  Kernel kernel;  // 13 x 13, post-processed
  Kernel raw_kernel;
  std::vector<LossRecord> loss_trace;
  int iterations_run = 0;
  // Mean and variance of the generator loss over the last 20% of iterations.
  double final_generator_loss = 0.0;
  double tail_loss_variance = 0.0;
  std::uint64_t seed = 0;
};

// Deep linear generator: conv 7,5,3,1,1, width cfg.width, no bias, stride
// cfg.scale on the last layer, valid border; near-delta initialization.
nn::Network build_generator(const KernelGanConfig& cfg);

// Patch discriminator: 7x7 conv, four hidden 1x1 convs and a final 1x1 conv
// with sigmoid; leaky-relu(0.2) on hidden layers. Spectral normalization on
// the first layer, or on all of them with cfg.spectral_norm_all.
nn::Network build_discriminator(const KernelGanConfig& cfg);

// Impulse response of the stride-removed generator. Throws InvalidState for
// a nonlinear network.
Kernel extract_kernel(const nn::Network& generator);

// Valid-region action of a generator with explicit kernel `k`:
// out(i, j) = sum_{a,b} flip(k)(a, b) * in(s*i + a, s*j + b).
Image downscale_valid(const Image& image, const Kernel& k, int scale);

struct RegularizationTerms {
  double sum_to_one = 0.0;
  double boundary = 0.0;
  double sparsity = 0.0;
  double center = 0.0;
  double total = 0.0;
  Kernel gradient;  // d(total)/dk
};

RegularizationTerms kernel_regularization(const Kernel& kernel, const KernelRegWeights& weights);
// Penalty that is 0 near the center and grows towards the kernel edge.
Kernel boundary_penalty_mask(int size);

// Zeroes weights below 0.02 * max, recenters by whole-pixel shifts and
// normalizes to unit sum.
Kernel postprocess_kernel(const Kernel& raw);

// Pixels that any admissible crop may read, for a region and config.
BinaryMask crop_footprint(const BinaryMask& region, const KernelGanConfig& cfg);

EstimatedKernel estimate_kernel(const Image& image, const BinaryMask& region, const KernelGanConfig& cfg);

}  // namespace mkgan
