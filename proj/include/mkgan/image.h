#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace mkgan {

// H x W x C raster of real intensities, stored planar: one row-major plane
// per channel.
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }

  double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::span<double> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const double> plane(int c) const {
    return {data_.data() + c * plane_size(), plane_size()};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  // Clamps every sample into [0, 1].
  void clamp01();

  // Copies the rectangle [y0, y0+h) x [x0, x0+w) of every channel.
  Image crop(int y0, int x0, int h, int w) const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

// Square k x k blur kernel, row-major. Sizes used by the degradation model
// are odd and in [3, 33] (see validate()); other sizes are representable so
// that low-level operations can report their own errors.
class Kernel {
 public:
  static constexpr int kMinSize = 3;
  static constexpr int kMaxSize = 33;

  Kernel() = default;
  explicit Kernel(int size, double fill = 0.0);
  Kernel(int size, std::vector<double> weights);

  static Kernel delta(int size);

  int size() const { return size_; }
  int center() const { return size_ / 2; }
  double operator()(int r, int c) const { return weights_[static_cast<std::size_t>(r) * size_ + c]; }
  double& operator()(int r, int c) { return weights_[static_cast<std::size_t>(r) * size_ + c]; }

  std::span<const double> weights() const { return weights_; }
  std::span<double> weights() { return weights_; }

  double sum() const;
  // Weighted mean position (row, col); the geometric center if the sum is 0.
  std::pair<double, double> center_of_mass() const;
  // Throws InvalidArgument unless the size is odd and within [3, 33].
  void validate() const;

  friend bool operator==(const Kernel&, const Kernel&) = default;

 private:
  int size_ = 0;
  std::vector<double> weights_;
};

}  // namespace mkgan
