#pragma once

#include <cstdint>

#include <Eigen/Core>

#include "mkgan/image.h"

namespace mkgan {

enum class Border { reflect, zero };

// Mirror index into [0, n) without repeating the edge sample (d c b | a b c d).
int reflect_index(int i, int n);

// "Same"-size true convolution, per channel.
Image conv2d(const Image& image, const Kernel& kernel, Border border = Border::reflect);

// Keeps samples at (i*s, j*s).
Image subsample(const Image& image, int s);

struct DegradeConfig {
  int scale = 2;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// clamp((hr * k) subsampled by s + n), n ~ N(0, sigma^2) i.i.d. from seed.
Image degrade(const Image& hr, const Kernel& kernel, const DegradeConfig& cfg);

// Nearest-neighbour resampling; output (y, x) samples floor((2y + 1) * h / (2 * out_h)).
Image resize_nearest(const Image& image, int out_h, int out_w);

// Separable Catmull-Rom (a = -0.5) resampling with pixel-center alignment.
// Output dims are round(in * scale); downscaling widens the kernel to
// antialias. Result is clamped to [0, 1].
Image resize_bicubic(const Image& image, double scale);
double cubic_weight(double x);

// Unnormalized, unshifted |DFT2| of a single-channel power-of-two square patch.
Eigen::MatrixXd fft2_magnitude(const Image& patch);
bool is_power_of_two(int n);

// Sobel gradient magnitude, reflect border.
Image gradient_magnitude(const Image& image);

// Rec.601 luma.
Image to_gray(const Image& image);

// Normalized sampled Gaussian of radius ceil(3 sigma).
Kernel gaussian_kernel(double sigma);
Image gaussian_blur(const Image& image, double sigma);

// Full 2-D convolution of two kernels; result size ka + kb - 1.
Kernel compose_kernels(const Kernel& a, const Kernel& b);

// Mirror a kernel through its center (180 degree rotation).
Kernel flip(const Kernel& k);

}  // namespace mkgan
