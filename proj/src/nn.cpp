#include "mkgan/nn.h"

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "mkgan/error.h"

namespace mkgan::nn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

namespace {

constexpr double kSigmaFloor = 1e-12;
// Upper bound on im2col buffer entries per chunk (16 MiB of doubles).
constexpr std::size_t kColumnBudget = std::size_t{1} << 21;

struct Geometry {
  int in_h, in_w, out_h, out_w, pad, k, stride;
};

Geometry geometry(const ConvLayer& layer, Padding padding, int h, int w) {
  Geometry g{};
  g.in_h = h;
  g.in_w = w;
  g.k = layer.kernel_size;
  g.stride = layer.stride;
  g.pad = padding == Padding::same ? (layer.kernel_size - 1) / 2 : 0;
  const int span_h = h + 2 * g.pad - g.k, span_w = w + 2 * g.pad - g.k;
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("conv: input " + std::to_string(h) + "x" + std::to_string(w) +
                     " smaller than kernel " + std::to_string(g.k));
  }
  g.out_h = span_h / g.stride + 1;
  g.out_w = span_w / g.stride + 1;
  return g;
}

bool direct_columns(const Geometry& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

int rows_per_chunk(const Geometry& g, std::size_t cols_rows) {
  const std::size_t per_row = cols_rows * static_cast<std::size_t>(g.out_w);
  return static_cast<int>(std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(per_row, 1), 1,
                                                  static_cast<std::size_t>(g.out_h)));
}

// Column matrix (C*k*k) x (rows * out_w) for output rows [y0, y1).
void im2col(const double* in, int channels, const Geometry& g, int y0, int y1, double* cols) {
  const int p = (y1 - y0) * g.out_w;
  const std::size_t plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  for (int ci = 0; ci < channels; ++ci) {
    const double* src = in + ci * plane;
    for (int u = 0; u < g.k; ++u) {
      for (int v = 0; v < g.k; ++v) {
        double* row = cols + static_cast<std::size_t>((ci * g.k + u) * g.k + v) * p;
        for (int oy = y0; oy < y1; ++oy) {
          const int iy = oy * g.stride + u - g.pad;
          double* dst = row + static_cast<std::size_t>(oy - y0) * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* line = src + static_cast<std::size_t>(iy) * g.in_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride + v - g.pad;
            dst[ox] = (ix >= 0 && ix < g.in_w) ? line[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, int channels, const Geometry& g, int y0, int y1, double* out) {
  const int p = (y1 - y0) * g.out_w;
  const std::size_t plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  for (int ci = 0; ci < channels; ++ci) {
    double* dst = out + ci * plane;
    for (int u = 0; u < g.k; ++u) {
      for (int v = 0; v < g.k; ++v) {
        const double* row = cols + static_cast<std::size_t>((ci * g.k + u) * g.k + v) * p;
        for (int oy = y0; oy < y1; ++oy) {
          const int iy = oy * g.stride + u - g.pad;
          if (iy < 0 || iy >= g.in_h) continue;
          const double* src = row + static_cast<std::size_t>(oy - y0) * g.out_w;
          double* line = dst + static_cast<std::size_t>(iy) * g.in_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride + v - g.pad;
            if (ix >= 0 && ix < g.in_w) line[ix] += src[ox];
          }
        }
      }
    }
  }
}

double activate(Activation a, double z) {
  switch (a) {
    case Activation::none: return z;
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::leaky_relu: return z > 0.0 ? z : kLeakySlope * z;
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
  }
  return z;
}

// d(activation)/dz expressed through the activation output y.
double activation_slope(Activation a, double y) {
  switch (a) {
    case Activation::none: return 1.0;
    case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
    case Activation::leaky_relu: return y > 0.0 ? 1.0 : kLeakySlope;
    case Activation::sigmoid: return y * (1.0 - y);
  }
  return 1.0;
}

Buffer effective_weight(const ConvLayer& layer) {
  if (!layer.spectral_norm) return layer.weight;
  const double sigma = layer.spectral_scale();
  Buffer w(layer.weight.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = layer.weight[i] / sigma;
  return w;
}

Tensor conv_forward(const ConvLayer& layer, const Buffer& weff, const Tensor& x,
                    Padding padding) {
  if (x.c != layer.in_channels) {
    throw ShapeError("conv: expected " + std::to_string(layer.in_channels) + " input channels, got " +
                     std::to_string(x.c));
  }
  const Geometry g = geometry(layer, padding, x.h, x.w);
  const int cout = layer.out_channels;
  const int kdim = static_cast<int>(layer.fan_in());
  Tensor out(x.n, cout, g.out_h, g.out_w);
  const ConstMatrixMap w(weff.data(), cout, kdim);
  const std::size_t out_plane = out.plane_size();
  const std::size_t in_plane = x.plane_size();
  const int chunk = rows_per_chunk(g, direct_columns(g) ? 0 : kdim);
  Buffer cols;
  for (int b = 0; b < x.n; ++b) {
    for (int y0 = 0; y0 < g.out_h; y0 += chunk) {
      const int y1 = std::min(g.out_h, y0 + chunk);
      const int p = (y1 - y0) * g.out_w;
      StridedMap dst(out.item(b) + static_cast<std::size_t>(y0) * g.out_w, cout, p,
                     Eigen::OuterStride<>(static_cast<Eigen::Index>(out_plane)));
      if (direct_columns(g)) {
        const ConstStridedMap src(x.item(b) + static_cast<std::size_t>(y0) * g.in_w, x.c, p,
                                  Eigen::OuterStride<>(static_cast<Eigen::Index>(in_plane)));
        dst.noalias() = w * src;
      } else {
        cols.resize(static_cast<std::size_t>(kdim) * p);
        im2col(x.item(b), x.c, g, y0, y1, cols.data());
        dst.noalias() = w * ConstMatrixMap(cols.data(), kdim, p);
      }
    }
    for (int co = 0; co < cout; ++co) {
      double* plane = out.item(b) + co * out_plane;
      const double bias = layer.has_bias ? layer.bias[co] : 0.0;
      for (std::size_t i = 0; i < out_plane; ++i) plane[i] = activate(layer.activation, plane[i] + bias);
    }
  }
  return out;
}

}  // namespace

Tensor::Tensor(int n_, int c_, int h_, int w_, double fill) : n(n_), c(c_), h(h_), w(w_) {
  if (n < 1 || c < 1 || h < 1 || w < 1) throw ShapeError("tensor dimensions must be >= 1");
  data.assign(static_cast<std::size_t>(n) * c * h * w, fill);
}

Tensor from_image(const Image& image) {
  Tensor t(1, image.channels(), image.height(), image.width());
  std::copy(image.data().begin(), image.data().end(), t.data.begin());
  return t;
}

Tensor from_images(const std::vector<Image>& images) {
  if (images.empty()) throw ShapeError("from_images: empty batch");
  const Image& first = images.front();
  Tensor t(static_cast<int>(images.size()), first.channels(), first.height(), first.width());
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].same_shape(first)) throw ShapeError("from_images: mismatched image shapes");
    std::copy(images[i].data().begin(), images[i].data().end(), t.item(static_cast<int>(i)));
  }
  return t;
}

Image to_image(const Tensor& t, int item) {
  if (t.c != 1 && t.c != 3) throw ShapeError("to_image: tensor must have 1 or 3 channels");
  Image img(t.h, t.w, t.c);
  const double* src = t.item(item);
  std::copy(src, src + img.data().size(), img.data().begin());
  return img;
}

double ConvLayer::spectral_scale() const {
  if (!spectral_norm) return 1.0;
  const int kdim = static_cast<int>(fan_in());
  const ConstMatrixMap w(weight.data(), out_channels, kdim);
  const Eigen::Map<const Eigen::VectorXd> u(sn_u.data(), out_channels);
  const Eigen::Map<const Eigen::VectorXd> v(sn_v.data(), kdim);
  return std::max(u.dot(w * v), kSigmaFloor);
}

void spectral_normalize(ConvLayer& layer) {
  const int kdim = static_cast<int>(layer.fan_in());
  const ConstMatrixMap w(layer.weight.data(), layer.out_channels, kdim);
  if (layer.sn_u.size() != static_cast<std::size_t>(layer.out_channels)) {
    layer.sn_u.assign(layer.out_channels, 1.0 / std::sqrt(static_cast<double>(layer.out_channels)));
  }
  Eigen::Map<Eigen::VectorXd> u(layer.sn_u.data(), layer.out_channels);
  Eigen::VectorXd v = w.transpose() * u;
  v /= std::max(v.norm(), kSigmaFloor);
  u = w * v;
  u /= std::max(u.norm(), kSigmaFloor);
  layer.sn_v.assign(v.data(), v.data() + kdim);
}

ConvLayer& Network::add_conv(int in_channels, int out_channels, int kernel_size, int stride,
                             bool has_bias, Activation activation, bool spectral_norm) {
  if (in_channels < 1 || out_channels < 1) throw InvalidArgument("conv: channel counts must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw InvalidArgument("conv: kernel size must be odd");
  if (stride < 1) throw InvalidArgument("conv: stride must be >= 1");
  if (!layers_.empty() && layers_.back().out_channels != in_channels) {
    throw ShapeError("conv: input channels do not chain with previous layer");
  }
  ConvLayer layer;
  layer.in_channels = in_channels;
  layer.out_channels = out_channels;
  layer.kernel_size = kernel_size;
  layer.stride = stride;
  layer.has_bias = has_bias;
  layer.activation = activation;
  layer.spectral_norm = spectral_norm;
  layer.weight.assign(layer.fan_in() * out_channels, 0.0);
  layer.weight_grad.assign(layer.weight.size(), 0.0);
  if (has_bias) {
    layer.bias.assign(out_channels, 0.0);
    layer.bias_grad.assign(out_channels, 0.0);
  }
  if (spectral_norm) {
    layer.sn_u.assign(out_channels, 1.0 / std::sqrt(static_cast<double>(out_channels)));
    layer.sn_v.assign(layer.fan_in(), 1.0 / std::sqrt(static_cast<double>(layer.fan_in())));
  }
  layers_.push_back(std::move(layer));
  has_cache_ = false;
  return layers_.back();
}

Tensor Network::forward(const Tensor& x) {
  inputs_.clear();
  outputs_.clear();
  Tensor cur = x;
  for (const ConvLayer& layer : layers_) {
    Tensor next = conv_forward(layer, effective_weight(layer), cur, padding_);
    inputs_.push_back(std::move(cur));
    outputs_.push_back(next);
    cur = std::move(next);
  }
  has_cache_ = true;
  return cur;
}

Tensor Network::infer(const Tensor& x) const {
  Tensor cur = x;
  for (const ConvLayer& layer : layers_) cur = conv_forward(layer, effective_weight(layer), cur, padding_);
  return cur;
}

Tensor Network::backward(const Tensor& grad_out, bool need_input_grad) {
  if (!has_cache_ || outputs_.size() != layers_.size() || layers_.empty()) {
    throw InvalidState("backward called without a matching forward");
  }
  if (!grad_out.same_shape(outputs_.back())) throw ShapeError("backward: gradient shape mismatch");

  Tensor grad = grad_out;
  for (int li = static_cast<int>(layers_.size()) - 1; li >= 0; --li) {
    ConvLayer& layer = layers_[li];
    const Tensor& x = inputs_[li];
    const Tensor& y = outputs_[li];
    const Geometry g = geometry(layer, padding_, x.h, x.w);
    const int cout = layer.out_channels;
    const int kdim = static_cast<int>(layer.fan_in());
    const Buffer weff = effective_weight(layer);
    const ConstMatrixMap w(weff.data(), cout, kdim);

    for (std::size_t i = 0; i < grad.data.size(); ++i) grad.data[i] *= activation_slope(layer.activation, y.data[i]);

    RowMatrix dw = RowMatrix::Zero(cout, kdim);
    const bool want_dx = need_input_grad || li > 0;
    Tensor dx;
    if (want_dx) dx = Tensor(x.n, x.c, x.h, x.w);
    const std::size_t out_plane = grad.plane_size();
    const std::size_t in_plane = x.plane_size();
    const int chunk = rows_per_chunk(g, direct_columns(g) ? 0 : kdim);
    Buffer cols, dcols;
    for (int b = 0; b < x.n; ++b) {
      for (int y0 = 0; y0 < g.out_h; y0 += chunk) {
        const int y1 = std::min(g.out_h, y0 + chunk);
        const int p = (y1 - y0) * g.out_w;
        const ConstStridedMap dz(grad.item(b) + static_cast<std::size_t>(y0) * g.out_w, cout, p,
                                 Eigen::OuterStride<>(static_cast<Eigen::Index>(out_plane)));
        if (layer.has_bias) {
          for (int co = 0; co < cout; ++co) layer.bias_grad[co] += dz.row(co).sum();
        }
        if (direct_columns(g)) {
          const ConstStridedMap src(x.item(b) + static_cast<std::size_t>(y0) * g.in_w, x.c, p,
                                    Eigen::OuterStride<>(static_cast<Eigen::Index>(in_plane)));
          dw.noalias() += dz * src.transpose();
          if (want_dx) {
            StridedMap dst(dx.item(b) + static_cast<std::size_t>(y0) * g.in_w, x.c, p,
                           Eigen::OuterStride<>(static_cast<Eigen::Index>(in_plane)));
            dst.noalias() += w.transpose() * dz;
          }
        } else {
          cols.resize(static_cast<std::size_t>(kdim) * p);
          im2col(x.item(b), x.c, g, y0, y1, cols.data());
          const ConstMatrixMap cm(cols.data(), kdim, p);
          dw.noalias() += dz * cm.transpose();
          if (want_dx) {
            dcols.resize(cols.size());
            Eigen::Map<RowMatrix> dc(dcols.data(), kdim, p);
            dc.noalias() = w.transpose() * dz;
            col2im_add(dcols.data(), x.c, g, y0, y1, dx.item(b));
          }
        }
      }
    }

    if (layer.spectral_norm) {
      // W_eff = W / (uᵀWv):  dL/dW = (G - <G, W_eff> u vᵀ) / sigma
      const double sigma = layer.spectral_scale();
      const double inner = (dw.array() * w.array()).sum();
      const Eigen::Map<const Eigen::VectorXd> u(layer.sn_u.data(), cout);
      const Eigen::Map<const Eigen::VectorXd> v(layer.sn_v.data(), kdim);
      dw = (dw - inner * u * v.transpose()) / sigma;
    }
    for (std::size_t i = 0; i < layer.weight_grad.size(); ++i) layer.weight_grad[i] += dw.data()[i];
    if (want_dx) grad = std::move(dx);
  }
  return need_input_grad ? grad : Tensor();
}

void Network::zero_grad() {
  for (ConvLayer& layer : layers_) {
    std::fill(layer.weight_grad.begin(), layer.weight_grad.end(), 0.0);
    std::fill(layer.bias_grad.begin(), layer.bias_grad.end(), 0.0);
  }
}

bool Network::is_linear() const {
  return std::all_of(layers_.begin(), layers_.end(),
                     [](const ConvLayer& l) { return l.activation == Activation::none; });
}

int Network::receptive_field() const {
  int field = 1, jump = 1;
  for (const ConvLayer& layer : layers_) {
    field += (layer.kernel_size - 1) * jump;
    jump *= layer.stride;
  }
  return field;
}

std::pair<int, int> Network::output_dims(int h, int w) const {
  for (const ConvLayer& layer : layers_) {
    const Geometry g = geometry(layer, padding_, h, w);
    h = g.out_h;
    w = g.out_w;
  }
  return {h, w};
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const ConvLayer& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

void init_he(Network& net, std::mt19937_64& rng) {
  for (ConvLayer& layer : net.layers()) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(layer.fan_in())));
    for (double& w : layer.weight) w = dist(rng);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
    if (layer.spectral_norm) {
      std::normal_distribution<double> unit(0.0, 1.0);
      double norm = 0.0;
      for (double& u : layer.sn_u) {
        u = unit(rng);
        norm += u * u;
      }
      norm = std::sqrt(std::max(norm, kSigmaFloor));
      for (double& u : layer.sn_u) u /= norm;
      spectral_normalize(layer);
    }
  }
}

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(Network& net) {
  auto& layers = net.layers();
  if (m_.empty()) {
    for (const ConvLayer& l : layers) {
      m_.emplace_back(l.weight.size(), 0.0);
      m_.emplace_back(l.bias.size(), 0.0);
    }
    v_ = m_;
  }
  if (m_.size() != 2 * layers.size()) throw ShapeError("adam: optimizer bound to a different network");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto update = [&](Buffer& p, Buffer& g, Buffer& m,
                    Buffer& v) {
    if (m.size() != p.size()) throw ShapeError("adam: parameter shape changed");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      g[i] = 0.0;
    }
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, layers[l].weight_grad, m_[2 * l], v_[2 * l]);
    update(layers[l].bias, layers[l].bias_grad, m_[2 * l + 1], v_[2 * l + 1]);
  }
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("checkpoint: truncated");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

double get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

std::uint32_t layer_field(const ConvLayer& l, int i) {
  switch (i) {
    case 0: return l.in_channels;
    case 1: return l.out_channels;
    case 2: return l.kernel_size;
    case 3: return l.stride;
    case 4: return l.has_bias;
    case 5: return static_cast<std::uint32_t>(l.activation);
    default: return l.spectral_norm;
  }
}

}  // namespace

void save_parameters(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("checkpoint: cannot write " + path.string());
  out.write("MKGN", 4);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(net.layers().size()));
  for (const ConvLayer& l : net.layers()) {
    for (int i = 0; i < 7; ++i) put_u32(out, layer_field(l, i));
  }
  for (const ConvLayer& l : net.layers()) {
    for (double w : l.weight) put_f32(out, w);
    for (double b : l.bias) put_f32(out, b);
  }
}

void load_parameters(Network& net, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "MKGN", 4) != 0) throw FormatError("checkpoint: bad magic");
  if (get_u32(in) != 1) throw FormatError("checkpoint: unsupported version");
  if (get_u32(in) != net.layers().size()) throw ShapeError("checkpoint: layer count mismatch");
  for (const ConvLayer& l : net.layers()) {
    for (int i = 0; i < 7; ++i) {
      if (get_u32(in) != layer_field(l, i)) throw ShapeError("checkpoint: layer shape mismatch");
    }
  }
  for (ConvLayer& l : net.layers()) {
    for (double& w : l.weight) w = get_f32(in);
    for (double& b : l.bias) b = get_f32(in);
  }
}

}  // namespace mkgan::nn
