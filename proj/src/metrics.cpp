#include "mkgan/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"

#include "mkgan/error.h"
#include "mkgan/ops.h"

namespace mkgan {

namespace {

constexpr double kPeak = 255.0;
constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;

void require_same(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": images differ in shape");
  if (a.empty()) throw InvalidArgument(std::string(what) + ": empty image");
}

// Separable valid-window filter with the normalized 1-D Gaussian.
std::vector<double> window_filter(const std::vector<double>& src, int h, int w, const std::vector<double>& g) {
  const int oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * src[static_cast<std::size_t>(y) * w + x + k];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

double mse(const Image& a, const Image& b) {
  require_same(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double d = kPeak * (a.data()[i] - b.data()[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.data().size());
}

double psnr_from_mse(double m) {
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(kPeak * kPeak / m));
}

double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

double ssim(const Image& a, const Image& b) {
  require_same(a, b, "ssim");
  if (a.height() < kWindow || a.width() < kWindow) throw InvalidArgument("ssim: image smaller than 11x11 window");
  const Image ga = to_gray(a), gb = to_gray(b);
  const int h = a.height(), w = a.width();
  std::vector<double> g(kWindow);
  double total = 0.0;
  for (int k = 0; k < kWindow; ++k) {
    const double d = k - kWindow / 2;
    g[k] = std::exp(-d * d / (2.0 * kWindowSigma * kWindowSigma));
    total += g[k];
  }
  for (double& v : g) v /= total;

  const std::size_t n = ga.plane_size();
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = kPeak * ga.data()[i];
    y[i] = kPeak * gb.data()[i];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = window_filter(x, h, w, g), my = window_filter(y, h, w, g);
  const auto sxx = window_filter(xx, h, w, g), syy = window_filter(yy, h, w, g), sxy = window_filter(xy, h, w, g);
  const double c1 = (0.01 * kPeak) * (0.01 * kPeak), c2 = (0.03 * kPeak) * (0.03 * kPeak);
  double acc = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
    acc += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
           ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return acc / static_cast<double>(mx.size());
}

MetricsReport measure(const Image& result, const Image& reference) {
  MetricsReport r;
  r.mse = mse(result, reference);
  r.psnr = psnr_from_mse(r.mse);
  r.ssim = ssim(result, reference);
  return r;
}

MetricsReport evaluate(const Image& result, const Image& reference, int border) {
  require_same(result, reference, "evaluate");
  if (border < 0 || 2 * border >= result.height() || 2 * border >= result.width()) {
    throw InvalidArgument("evaluate: border crop leaves no pixels");
  }
  const int h = result.height() - 2 * border, w = result.width() - 2 * border;
  return measure(result.crop(border, border, h, w), reference.crop(border, border, h, w));
}

std::string to_json(const MetricsReport& report) {
  const nlohmann::json j = {{"psnr", report.psnr}, {"ssim", report.ssim}, {"mse", report.mse}};
  return j.dump();
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "image,method,psnr,ssim,mse\n";
  char buf[128];
  for (const MetricsRow& row : rows) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f", row.report.psnr, row.report.ssim, row.report.mse);
    out << row.image << ',' << row.method << ',' << buf << '\n';
  }
  if (!out) throw FormatError("write failed: " + path.string());
}

}  // namespace mkgan
