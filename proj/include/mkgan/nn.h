#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "mkgan/image.h"

namespace mkgan::nn {

// Vectorized reductions peel by address alignment; fixed alignment keeps
// results bit-identical across runs.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

// Dense N x C x H x W batch.
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  Buffer data;

  Tensor() = default;
  Tensor(int n, int c, int h, int w, double fill = 0.0);

  std::size_t size() const { return data.size(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }
  double& at(int b, int ch, int y, int x) { return data[offset(b, ch, y, x)]; }
  double at(int b, int ch, int y, int x) const { return data[offset(b, ch, y, x)]; }
  double* item(int b) { return data.data() + static_cast<std::size_t>(b) * c * plane_size(); }
  const double* item(int b) const {
    return data.data() + static_cast<std::size_t>(b) * c * plane_size();
  }
  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

 private:
  std::size_t offset(int b, int ch, int y, int x) const {
    return ((static_cast<std::size_t>(b) * c + ch) * h + y) * w + x;
  }
};

Tensor from_image(const Image& image);
// Stacks same-shaped images into one batch.
Tensor from_images(const std::vector<Image>& images);
Image to_image(const Tensor& t, int item = 0);

enum class Activation { none, relu, leaky_relu, sigmoid };
enum class Padding { valid, same };

inline constexpr double kLeakySlope = 0.2;

struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_size = 1;
  int stride = 1;
  bool has_bias = true;
  Activation activation = Activation::none;
  bool spectral_norm = false;

  // out x in x k x k, cross-correlation layout.
  Buffer weight;
  Buffer bias;
  Buffer weight_grad;
  Buffer bias_grad;

  // Power-iteration state: left/right singular vector estimates of the
  // out x (in*k*k) weight matrix.
  Buffer sn_u;
  Buffer sn_v;

  std::size_t fan_in() const {
    return static_cast<std::size_t>(in_channels) * kernel_size * kernel_size;
  }
  // uᵀ W v, floored at a small epsilon; 1 when spectral norm is off.
  double spectral_scale() const;
};

// One power-iteration update of the leading singular vectors.
void spectral_normalize(ConvLayer& layer);

class Network {
 public:
  explicit Network(Padding padding = Padding::valid) : padding_(padding) {}

  ConvLayer& add_conv(int in_channels, int out_channels, int kernel_size, int stride = 1,
                      bool has_bias = true, Activation activation = Activation::none,
                      bool spectral_norm = false);

  // Runs all layers and records the intermediates needed by backward().
  Tensor forward(const Tensor& x);
  // Pure inference; safe to call concurrently on a shared network.
  Tensor infer(const Tensor& x) const;
  // Accumulates parameter gradients for the last forward(); returns the
  // gradient with respect to the network input when requested.
  Tensor backward(const Tensor& grad_out, bool need_input_grad = true);

  void zero_grad();
  bool is_linear() const;
  // Spatial extent of one output sample's dependence on the input.
  int receptive_field() const;
  std::pair<int, int> output_dims(int h, int w) const;

  Padding padding() const { return padding_; }
  std::vector<ConvLayer>& layers() { return layers_; }
  const std::vector<ConvLayer>& layers() const { return layers_; }
  std::size_t parameter_count() const;

 private:
  Padding padding_;
  std::vector<ConvLayer> layers_;
  std::vector<Tensor> inputs_;   // per layer, recorded by forward()
  std::vector<Tensor> outputs_;  // per layer, post-activation
  bool has_cache_ = false;
};

// He-normal weights N(0, sqrt(2 / fan_in)), zero bias, random unit
// spectral-norm vectors.
void init_he(Network& net, std::mt19937_64& rng);

class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Applies one bias-corrected update and resets gradients to zero.
  void step(Network& net);

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Buffer> m_;
  std::vector<Buffer> v_;
};

// Checkpoint: "MKGN", u32 version, u32 layer count, per layer seven u32
// (in, out, k, stride, has_bias, activation, spectral_norm), then per layer
// weights followed by bias as little-endian float32.
void save_parameters(const Network& net, const std::filesystem::path& path);
void load_parameters(Network& net, const std::filesystem::path& path);

}  // namespace mkgan::nn
