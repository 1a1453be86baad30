#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mkgan/image.h"

namespace mkgan {

inline constexpr double kPsnrCap = 100.0;

struct MetricsReport {
  double psnr = 0.0;  // dB
  double ssim = 0.0;
  double mse = 0.0;   // 8-bit units squared
};

// Mean squared difference on the 0..255 scale over all samples.
double mse(const Image& a, const Image& b);
// 10 log10(255^2 / mse), kPsnrCap when the images are identical.
double psnr(const Image& a, const Image& b);
double psnr_from_mse(double mse);
// Mean SSIM over valid 11x11 Gaussian (sigma 1.5) windows of the luma.
double ssim(const Image& a, const Image& b);

MetricsReport measure(const Image& result, const Image& reference);
// Crops `border` pixels from every side of both images first.
MetricsReport evaluate(const Image& result, const Image& reference, int border);

std::string to_json(const MetricsReport& report);

struct MetricsRow {
  std::string image;
  std::string method;
  MetricsReport report;
};

// Columns: image,method,psnr,ssim,mse.
void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);

}  // namespace mkgan
