#include "mkgan/ops.h"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "mkgan/error.h"

namespace mkgan {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Image conv2d(const Image& image, const Kernel& kernel, Border border) {
  if (image.empty()) throw InvalidArgument("conv2d: empty image");
  if (kernel.size() % 2 == 0) {
    throw InvalidArgument("conv2d: kernel size must be odd, got " + std::to_string(kernel.size()));
  }
  const int h = image.height(), w = image.width(), k = kernel.size(), r = k / 2;
  const int ph = h + 2 * r, pw = w + 2 * r;
  Image out(h, w, image.channels());
  std::vector<double> padded(static_cast<std::size_t>(ph) * pw);
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < ph; ++y) {
      for (int x = 0; x < pw; ++x) {
        const int sy = y - r, sx = x - r;
        double v;
        if (border == Border::zero) {
          v = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? image.at(c, sy, sx) : 0.0;
        } else {
          v = image.at(c, reflect_index(sy, h), reflect_index(sx, w));
        }
        padded[static_cast<std::size_t>(y) * pw + x] = v;
      }
    }
    // out(y, x) = sum_{u,v} k(u, v) * in(y - (u - r), x - (v - r))
    for (int y = 0; y < h; ++y) {
      double* dst = &out.at(c, y, 0);
      for (int u = 0; u < k; ++u) {
        const double* row = &padded[static_cast<std::size_t>(y + 2 * r - u) * pw + 2 * r];
        for (int v = 0; v < k; ++v) {
          const double kv = kernel(u, v);
          if (kv == 0.0) continue;
          const double* src = row - v;
          for (int x = 0; x < w; ++x) dst[x] += kv * src[x];
        }
      }
    }
  }
  return out;
}

Image subsample(const Image& image, int s) {
  if (s < 1) throw InvalidArgument("subsample: factor must be >= 1");
  const int oh = image.height() / s, ow = image.width() / s;
  if (oh < 1 || ow < 1) throw InvalidArgument("subsample: image smaller than factor");
  Image out(oh, ow, image.channels());
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) out.at(c, y, x) = image.at(c, y * s, x * s);
    }
  }
  return out;
}

void DegradeConfig::validate() const {
  if (scale != 1 && scale != 2 && scale != 4) throw InvalidArgument("degrade: scale must be 1, 2 or 4");
  if (!(noise_sigma >= 0.0 && noise_sigma <= 0.2)) {
    throw InvalidArgument("degrade: noise sigma must be within [0, 0.2]");
  }
}

Image degrade(const Image& hr, const Kernel& kernel, const DegradeConfig& cfg) {
  kernel.validate();
  cfg.validate();
  Image lr = subsample(conv2d(hr, kernel, Border::reflect), cfg.scale);
  if (cfg.noise_sigma > 0.0) {
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (double& v : lr.data()) v += noise(rng);
  }
  lr.clamp01();
  return lr;
}

Image resize_nearest(const Image& image, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw InvalidArgument("resize_nearest: target dims must be >= 1");
  const int h = image.height(), w = image.width();
  Image out(out_h, out_w, image.channels());
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < out_h; ++y) {
      const int sy = static_cast<int>((2LL * y + 1) * h / (2LL * out_h));
      for (int x = 0; x < out_w; ++x) {
        const int sx = static_cast<int>((2LL * x + 1) * w / (2LL * out_w));
        out.at(c, y, x) = image.at(c, sy, sx);
      }
    }
  }
  return out;
}

double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

namespace {

struct Tap {
  int index;
  double weight;
};

// Per output sample, the input taps along one axis.
std::vector<std::vector<Tap>> bicubic_taps(int in, int out, double scale) {
  const double support_scale = scale < 1.0 ? 1.0 / scale : 1.0;
  const double radius = 2.0 * support_scale;
  std::vector<std::vector<Tap>> taps(out);
  for (int d = 0; d < out; ++d) {
    const double src = (d + 0.5) / scale - 0.5;
    const int lo = static_cast<int>(std::floor(src - radius)) + 1;
    const int hi = static_cast<int>(std::floor(src + radius));
    double total = 0.0;
    for (int j = lo; j <= hi; ++j) {
      const double wgt = cubic_weight((src - j) / support_scale);
      if (wgt == 0.0) continue;
      // half-sample symmetric extension
      int idx = j;
      if (in == 1) {
        idx = 0;
      } else {
        const int period = 2 * in;
        idx %= period;
        if (idx < 0) idx += period;
        if (idx >= in) idx = period - 1 - idx;
      }
      taps[d].push_back({idx, wgt});
      total += wgt;
    }
    for (Tap& t : taps[d]) t.weight /= total;
  }
  return taps;
}

}  // namespace

Image resize_bicubic(const Image& image, double scale) {
  if (!(scale > 0.0)) throw InvalidArgument("resize_bicubic: scale must be > 0");
  const int h = image.height(), w = image.width();
  const int oh = std::max(1, static_cast<int>(std::lround(h * scale)));
  const int ow = std::max(1, static_cast<int>(std::lround(w * scale)));
  const auto col_taps = bicubic_taps(w, ow, scale);
  const auto row_taps = bicubic_taps(h, oh, scale);
  Image out(oh, ow, image.channels());
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (const Tap& t : col_taps[x]) acc += t.weight * image.at(c, y, t.index);
        tmp[static_cast<std::size_t>(y) * ow + x] = acc;
      }
    }
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (const Tap& t : row_taps[y]) acc += t.weight * tmp[static_cast<std::size_t>(t.index) * ow + x];
        out.at(c, y, x) = acc;
      }
    }
  }
  out.clamp01();
  return out;
}

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

namespace {

void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> wk =
            k == 0 ? std::complex<double>(1.0, 0.0) : std::polar(1.0, angle * static_cast<double>(k));
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * wk;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

}  // namespace

Eigen::MatrixXd fft2_magnitude(const Image& patch) {
  if (patch.channels() != 1) throw InvalidArgument("fft2_magnitude: single-channel patch required");
  const int n = patch.height();
  if (patch.width() != n || !is_power_of_two(n)) {
    throw InvalidArgument("fft2_magnitude: square power-of-two patch required");
  }
  std::vector<std::vector<std::complex<double>>> rows(n, std::vector<std::complex<double>>(n));
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) rows[y][x] = patch.at(0, y, x);
    fft_inplace(rows[y]);
  }
  Eigen::MatrixXd mag(n, n);
  std::vector<std::complex<double>> col(n);
  for (int x = 0; x < n; ++x) {
    for (int y = 0; y < n; ++y) col[y] = rows[y][x];
    fft_inplace(col);
    for (int y = 0; y < n; ++y) mag(y, x) = std::abs(col[y]);
  }
  return mag;
}

Image gradient_magnitude(const Image& image) {
  if (image.channels() != 1) throw InvalidArgument("gradient_magnitude: single-channel image required");
  const int h = image.height(), w = image.width();
  Image out(h, w, 1);
  auto px = [&](int y, int x) { return image.at(0, reflect_index(y, h), reflect_index(x, w)); };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = (px(y - 1, x + 1) + 2.0 * px(y, x + 1) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2.0 * px(y, x - 1) + px(y + 1, x - 1));
      const double gy = (px(y + 1, x - 1) + 2.0 * px(y + 1, x) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2.0 * px(y - 1, x) + px(y - 1, x + 1));
      out.at(0, y, x) = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

Image to_gray(const Image& image) {
  if (image.channels() == 1) return image;
  Image out(image.height(), image.width(), 1);
  const auto r = image.plane(0), g = image.plane(1), b = image.plane(2);
  auto dst = out.plane(0);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  return out;
}

Kernel gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("gaussian_kernel: sigma must be > 0");
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  const int size = 2 * radius + 1;
  Kernel k(size);
  double total = 0.0;
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double dy = r - radius, dx = c - radius;
      k(r, c) = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      total += k(r, c);
    }
  }
  for (double& v : k.weights()) v /= total;
  return k;
}

Image gaussian_blur(const Image& image, double sigma) {
  return conv2d(image, gaussian_kernel(sigma), Border::reflect);
}

Kernel compose_kernels(const Kernel& a, const Kernel& b) {
  const int n = a.size() + b.size() - 1;
  Kernel out(n);
  for (int i = 0; i < a.size(); ++i) {
    for (int j = 0; j < a.size(); ++j) {
      for (int u = 0; u < b.size(); ++u) {
        for (int v = 0; v < b.size(); ++v) out(i + u, j + v) += a(i, j) * b(u, v);
      }
    }
  }
  return out;
}

Kernel flip(const Kernel& k) {
  Kernel out(k.size());
  const int n = k.size();
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) out(r, c) = k(n - 1 - r, n - 1 - c);
  }
  return out;
}

}  // namespace mkgan
