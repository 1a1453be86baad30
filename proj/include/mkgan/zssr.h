#pragma once

#include <cstdint>
#include <vector>

#include "mkgan/image.h"
#include "mkgan/nn.h"
#include "mkgan/segmentation.h"

namespace mkgan {

struct ZssrConfig {
  int scale = 2;
  int layers = 8;
  int width = 64;
  int iterations = 2000;
  double learning_rate = 1e-3;
  int lr_halving_interval = 500;
  int crop = 96;
  bool augment = true;
  double mask_coverage_min = 0.9;
  // Average the eight dihedral variants at inference.
  bool ensemble = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ZssrResult {
  Image image;  // H*scale x W*scale, clamped to [0, 1]
  std::vector<double> loss_trace;
  int iterations_run = 0;
};

// degrade(image, kernel, {scale, 0}).
Image make_lr_son(const Image& image, const Kernel& kernel, int scale);

// Element t in [0, 8) of the dihedral group: t % 4 quarter turns
// counter-clockwise, preceded by a horizontal mirror when t >= 4.
Image dihedral(const Image& image, int t);
Image dihedral_inverse(const Image& image, int t);

// 3x3 convs with relu, "same" zero padding; the last layer is linear and
// zero-initialized so an untrained network adds nothing to the bicubic base.
nn::Network build_zssr_network(const ZssrConfig& cfg, int channels);

// bicubic(x) + net(bicubic(x)), clamped.
Image zssr_apply(const nn::Network& net, const Image& image, int scale);

// Odd-sized stand-in for bicubic x2 downscaling: the Catmull-Rom kernel
// stretched by 2 and sampled at integer offsets.
Kernel bicubic_kernel();

ZssrResult zssr_upscale(const Image& image, const Kernel& kernel, const BinaryMask& region, const ZssrConfig& cfg);

}  // namespace mkgan
