#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mkgan/image.h"

namespace mkgan {

// H x W boolean raster; true = foreground (Mask B), false = background (Mask A).
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, bool fill = false);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return bits_.size(); }

  bool operator()(int y, int x) const { return bits_[index(y, x)] != 0; }
  void set(int y, int x, bool v) { bits_[index(y, x)] = v ? 1 : 0; }
  bool at(std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool v) { bits_[i] = v ? 1 : 0; }

  std::size_t count() const;
  double fraction() const { return bits_.empty() ? 0.0 : static_cast<double>(count()) / bits_.size(); }
  BinaryMask complement() const;
  bool matches(const Image& image) const { return height_ == image.height() && width_ == image.width(); }

  Image to_image() const;  // 1.0 / 0.0 single-channel
  static BinaryMask threshold(const Image& image, double level = 0.5);  // channel 0 > level

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t index(int y, int x) const { return static_cast<std::size_t>(y) * width_ + x; }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct RegionSet {
  BinaryMask foreground;
  BinaryMask background;
  double fg_area_fraction = 0.0;
};

struct MaskGenParams {
  int patch_size = 16;
  int min_island_px = 64;
  double edge_low = 0.1;
  double edge_high = 0.3;
  int anchor_patch = 8;
  double anchor_top_fraction = 0.1;
  int dilation_radius = 2;
  bool blur_post = false;  // Gaussian(sigma=1) + re-threshold at 0.5 before island removal

  void validate() const;
};

inline constexpr double kDefaultMinAreaFraction = 0.10;

// Mean non-DC spectral magnitude of each patch_size^2 tile; tiles strictly
// above the mean over tiles become foreground. Remainder pixels join the
// last tile row/column. Returns the per-tile scores through `scores` when
// non-null (row-major over the tile grid).
BinaryMask fft_texture_mask(const Image& image, const MaskGenParams& params,
                            std::vector<double>* scores = nullptr);

// Flips 8-connected components (either polarity) smaller than
// min_island_px into the surrounding polarity, smallest first.
BinaryMask postprocess_mask(const BinaryMask& mask, const MaskGenParams& params);
BinaryMask remove_small_islands(const BinaryMask& mask, int min_island_px);
BinaryMask blur_rethreshold(const BinaryMask& mask);

// Canny-style edges, dilated and cleaned of small islands.
BinaryMask edge_contour_mask(const Image& image, const MaskGenParams& params);
// Hysteresis edge map before dilation; magnitudes are Sobel / 4 after
// Gaussian(sigma = 1) smoothing.
BinaryMask canny_edges(const Image& gray, double low, double high);

// Top anchor_top_fraction of anchor_patch tiles by mean gradient magnitude,
// dilated by dilation_radius.
BinaryMask anchor_pixel_mask(const Image& image, const MaskGenParams& params);

// Disk structuring element of the given radius.
BinaryMask dilate(const BinaryMask& mask, int radius);

BinaryMask resize_nearest(const BinaryMask& mask, int out_h, int out_w);
BinaryMask blockify_mask(const BinaryMask& mask, int s);

// Throws RegionTooSmall when either side covers less than min_area_fraction.
RegionSet split_regions(const BinaryMask& mask, double min_area_fraction = kDefaultMinAreaFraction);

struct CropPosition {
  int y = 0;
  int x = 0;
};

// Top-left corners of crop x crop windows whose in-region share is at least
// min_coverage, in raster order.
std::vector<CropPosition> admissible_crops(const BinaryMask& region, int crop, double min_coverage);

enum class MaskLoadMode { strict, lenient };

// Lenient: pixel > 127 is foreground; RGB is reduced to luma first.
// Strict: single-channel file containing only {0, 255}.
BinaryMask load_mask(const std::filesystem::path& path, MaskLoadMode mode = MaskLoadMode::lenient);
void save_mask(const BinaryMask& mask, const std::filesystem::path& path);

// <dir>/<stem>.fg.png and <dir>/<stem>.bg.png
void save_regions(const RegionSet& regions, const std::filesystem::path& dir, const std::string& stem);

}  // namespace mkgan
