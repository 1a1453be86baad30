#include "mkgan/image.h"

#include <algorithm>
#include <numeric>
#include <string>

#include "mkgan/error.h"

namespace mkgan {

RegionTooSmall::RegionTooSmall(std::string region, double fraction, const std::string& detail)
    : std::runtime_error("region too small: " + region + " covers " + std::to_string(fraction) +
                         (detail.empty() ? std::string() : " (" + detail + ")")),
      region_(std::move(region)),
      fraction_(fraction) {}

TrainingDiverged::TrainingDiverged(const std::string& stage, int iteration)
    : std::runtime_error(stage + " training diverged at iteration " + std::to_string(iteration)),
      iteration_(iteration) {}

Image::Image(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 1 || width < 1) throw InvalidArgument("image dimensions must be >= 1");
  if (channels != 1 && channels != 3) throw InvalidArgument("image must have 1 or 3 channels");
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

void Image::clamp01() {
  for (double& v : data_) v = std::clamp(v, 0.0, 1.0);
}

Image Image::crop(int y0, int x0, int h, int w) const {
  if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > height_ || x0 + w > width_) {
    throw InvalidArgument("crop rectangle outside image");
  }
  Image out(h, w, channels_);
  for (int c = 0; c < channels_; ++c) {
    for (int y = 0; y < h; ++y) {
      const double* src = &data_[index(c, y0 + y, x0)];
      std::copy(src, src + w, &out.at(c, y, 0));
    }
  }
  return out;
}

Kernel::Kernel(int size, double fill) : size_(size) {
  if (size < 1) throw InvalidArgument("kernel size must be >= 1");
  weights_.assign(static_cast<std::size_t>(size) * size, fill);
}

Kernel::Kernel(int size, std::vector<double> weights) : size_(size), weights_(std::move(weights)) {
  if (size < 1) throw InvalidArgument("kernel size must be >= 1");
  if (weights_.size() != static_cast<std::size_t>(size) * size) {
    throw ShapeError("kernel weight count does not match size^2");
  }
}

Kernel Kernel::delta(int size) {
  Kernel k(size);
  k(size / 2, size / 2) = 1.0;
  return k;
}

double Kernel::sum() const { return std::accumulate(weights_.begin(), weights_.end(), 0.0); }

std::pair<double, double> Kernel::center_of_mass() const {
  double total = 0.0, row = 0.0, col = 0.0;
  for (int r = 0; r < size_; ++r) {
    for (int c = 0; c < size_; ++c) {
      const double w = (*this)(r, c);
      total += w;
      row += w * r;
      col += w * c;
    }
  }
  if (total == 0.0) return {center(), center()};
  return {row / total, col / total};
}

void Kernel::validate() const {
  if (size_ % 2 == 0 || size_ < kMinSize || size_ > kMaxSize) {
    throw InvalidArgument("kernel size must be odd and within [3, 33], got " +
                          std::to_string(size_));
  }
}

}  // namespace mkgan
