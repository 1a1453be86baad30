#include "mkgan/segmentation.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <string>

#include "mkgan/error.h"
#include "mkgan/ops.h"
#include "mkgan/raster_io.h"

namespace mkgan {

BinaryMask::BinaryMask(int height, int width, bool fill) : height_(height), width_(width) {
  if (height < 1 || width < 1) throw InvalidArgument("mask dimensions must be >= 1");
  bits_.assign(static_cast<std::size_t>(height) * width, fill ? 1 : 0);
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

BinaryMask BinaryMask::complement() const {
  BinaryMask out = *this;
  for (auto& b : out.bits_) b = b ? 0 : 1;
  return out;
}

Image BinaryMask::to_image() const {
  Image img(height_, width_, 1);
  auto plane = img.plane(0);
  for (std::size_t i = 0; i < bits_.size(); ++i) plane[i] = bits_[i] ? 1.0 : 0.0;
  return img;
}

BinaryMask BinaryMask::threshold(const Image& image, double level) {
  BinaryMask m(image.height(), image.width());
  const auto plane = image.plane(0);
  for (std::size_t i = 0; i < plane.size(); ++i) m.bits_[i] = plane[i] > level ? 1 : 0;
  return m;
}

void MaskGenParams::validate() const {
  if (patch_size < 4 || !is_power_of_two(patch_size)) {
    throw InvalidArgument("patch_size must be a power of two >= 4");
  }
  if (anchor_patch < 4) throw InvalidArgument("anchor_patch must be >= 4");
  if (min_island_px < 0) throw InvalidArgument("min_island_px must be >= 0");
  if (dilation_radius < 0) throw InvalidArgument("dilation_radius must be >= 0");
  if (!(edge_low >= 0.0 && edge_high <= 1.0)) throw InvalidArgument("edge thresholds must lie in [0, 1]");
  if (edge_low >= edge_high) throw InvalidArgument("edge_low must be < edge_high");
  if (!(anchor_top_fraction > 0.0 && anchor_top_fraction <= 1.0)) {
    throw InvalidArgument("anchor_top_fraction must lie in (0, 1]");
  }
}

namespace {

// Tile index for a pixel coordinate; remainder pixels join the last tile.
int tile_of(int coord, int tile, int tiles) { return std::min(coord / tile, tiles - 1); }

}  // namespace

BinaryMask fft_texture_mask(const Image& image, const MaskGenParams& params, std::vector<double>* scores) {
  const int p = params.patch_size;
  if (p < 4 || !is_power_of_two(p)) throw InvalidArgument("patch_size must be a power of two >= 4");
  const Image gray = to_gray(image);
  const int ty = gray.height() / p, tx = gray.width() / p;
  if (ty < 1 || tx < 1) throw InvalidArgument("fft_texture_mask: image smaller than one patch");

  std::vector<double> score(static_cast<std::size_t>(ty) * tx);
  for (int i = 0; i < ty; ++i) {
    for (int j = 0; j < tx; ++j) {
      const Eigen::MatrixXd mag = fft2_magnitude(gray.crop(i * p, j * p, p, p));
      score[static_cast<std::size_t>(i) * tx + j] = (mag.sum() - mag(0, 0)) / (p * p - 1);
    }
  }
  const double mean = std::accumulate(score.begin(), score.end(), 0.0) / static_cast<double>(score.size());
  // Strictly above the mean; the slack absorbs summation rounding on equal scores.
  const double cut = mean + 1e-12 * std::max(1.0, std::abs(mean));
  BinaryMask mask(gray.height(), gray.width());
  for (int y = 0; y < gray.height(); ++y) {
    const int i = tile_of(y, p, ty);
    for (int x = 0; x < gray.width(); ++x) {
      mask.set(y, x, score[static_cast<std::size_t>(i) * tx + tile_of(x, p, tx)] > cut);
    }
  }
  if (scores) *scores = std::move(score);
  return mask;
}

namespace {

struct Components {
  std::vector<int> label;  // per pixel
  std::vector<int> size;   // per label
};

Components label_components(const BinaryMask& mask) {
  const int h = mask.height(), w = mask.width();
  Components comp;
  comp.label.assign(mask.size(), -1);
  std::vector<int> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t start = static_cast<std::size_t>(y) * w + x;
      if (comp.label[start] >= 0) continue;
      const int id = static_cast<int>(comp.size.size());
      const bool polarity = mask.at(start);
      int count = 0;
      comp.label[start] = id;
      stack.assign(1, static_cast<int>(start));
      while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        ++count;
        const int cy = cur / w, cx = cur % w;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = cy + dy, nx = cx + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            const std::size_t n = static_cast<std::size_t>(ny) * w + nx;
            if (comp.label[n] < 0 && mask.at(n) == polarity) {
              comp.label[n] = id;
              stack.push_back(static_cast<int>(n));
            }
          }
        }
      }
      comp.size.push_back(count);
    }
  }
  return comp;
}

}  // namespace

BinaryMask remove_small_islands(const BinaryMask& mask, int min_island_px) {
  BinaryMask out = mask;
  const int h = out.height(), w = out.width();
  for (;;) {
    const Components comp = label_components(out);
    const int n = static_cast<int>(comp.size.size());
    if (n <= 1) break;
    std::vector<char> small(n), touches_small(n, 0);
    bool any_small = false;
    for (int i = 0; i < n; ++i) {
      small[i] = comp.size[i] < min_island_px;
      any_small = any_small || small[i];
    }
    if (!any_small) break;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int a = comp.label[static_cast<std::size_t>(y) * w + x];
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            const int b = comp.label[static_cast<std::size_t>(ny) * w + nx];
            if (b != a && small[b]) touches_small[a] = 1;
          }
        }
      }
    }
    // Small components bordered only by large ones can flip together;
    // otherwise flip the single smallest (lowest label on ties).
    std::vector<char> flip(n, 0);
    bool batch = false;
    for (int i = 0; i < n; ++i) {
      if (small[i] && !touches_small[i]) flip[i] = batch = 1;
    }
    if (!batch) {
      int best = -1;
      for (int i = 0; i < n; ++i) {
        if (small[i] && (best < 0 || comp.size[i] < comp.size[best])) best = i;
      }
      flip[best] = 1;
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (flip[comp.label[i]]) out.set(i, !out.at(i));
    }
  }
  return out;
}

BinaryMask blur_rethreshold(const BinaryMask& mask) {
  return BinaryMask::threshold(gaussian_blur(mask.to_image(), 1.0), 0.5);
}

BinaryMask postprocess_mask(const BinaryMask& mask, const MaskGenParams& params) {
  if (params.min_island_px < 0) throw InvalidArgument("min_island_px must be >= 0");
  const BinaryMask base = params.blur_post ? blur_rethreshold(mask) : mask;
  return remove_small_islands(base, params.min_island_px);
}

BinaryMask dilate(const BinaryMask& mask, int radius) {
  if (radius < 0) throw InvalidArgument("dilation radius must be >= 0");
  if (radius == 0) return mask;
  const int h = mask.height(), w = mask.width();
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dy * dy + dx * dx <= radius * radius) offsets.emplace_back(dy, dx);
    }
  }
  BinaryMask out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      for (auto [dy, dx] : offsets) {
        const int ny = y + dy, nx = x + dx;
        if (ny >= 0 && ny < h && nx >= 0 && nx < w) out.set(ny, nx, true);
      }
    }
  }
  return out;
}

BinaryMask canny_edges(const Image& gray_in, double low, double high) {
  if (low >= high) throw InvalidArgument("edge_low must be < edge_high");
  const Image smooth = gaussian_blur(to_gray(gray_in), 1.0);
  const int h = smooth.height(), w = smooth.width();
  auto px = [&](int y, int x) { return smooth.at(0, reflect_index(y, h), reflect_index(x, w)); };
  std::vector<double> gx(smooth.plane_size()), gy(gx.size()), mag(gx.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      gx[i] = ((px(y - 1, x + 1) + 2.0 * px(y, x + 1) + px(y + 1, x + 1)) -
               (px(y - 1, x - 1) + 2.0 * px(y, x - 1) + px(y + 1, x - 1))) / 4.0;
      gy[i] = ((px(y + 1, x - 1) + 2.0 * px(y + 1, x) + px(y + 1, x + 1)) -
               (px(y - 1, x - 1) + 2.0 * px(y - 1, x) + px(y - 1, x + 1))) / 4.0;
      mag[i] = std::hypot(gx[i], gy[i]);
    }
  }
  auto m = [&](int y, int x) {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
    return mag[static_cast<std::size_t>(y) * w + x];
  };
  // Non-maximum suppression along the quantized gradient direction.
  std::vector<double> thin(mag.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (mag[i] == 0.0) continue;
      double angle = std::atan2(gy[i], gx[i]) * 180.0 / 3.14159265358979323846;
      if (angle < 0) angle += 180.0;
      int dy = 0, dx = 1;
      if (angle >= 22.5 && angle < 67.5) {
        dy = 1;
        dx = 1;
      } else if (angle >= 67.5 && angle < 112.5) {
        dy = 1;
        dx = 0;
      } else if (angle >= 112.5 && angle < 157.5) {
        dy = 1;
        dx = -1;
      }
      if (mag[i] > m(y - dy, x - dx) && mag[i] >= m(y + dy, x + dx)) thin[i] = mag[i];
    }
  }
  BinaryMask edges(h, w);
  std::queue<int> frontier;
  for (std::size_t i = 0; i < thin.size(); ++i) {
    if (thin[i] >= high) {
      edges.set(i, true);
      frontier.push(static_cast<int>(i));
    }
  }
  while (!frontier.empty()) {
    const int cur = frontier.front();
    frontier.pop();
    const int cy = cur / w, cx = cur % w;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int ny = cy + dy, nx = cx + dx;
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        const std::size_t n = static_cast<std::size_t>(ny) * w + nx;
        if (!edges.at(n) && thin[n] >= low) {
          edges.set(n, true);
          frontier.push(static_cast<int>(n));
        }
      }
    }
  }
  return edges;
}

BinaryMask edge_contour_mask(const Image& image, const MaskGenParams& params) {
  if (params.edge_low >= params.edge_high) throw InvalidArgument("edge_low must be < edge_high");
  if (params.edge_low < 0.0 || params.edge_high > 1.0) throw InvalidArgument("edge thresholds must lie in [0, 1]");
  const BinaryMask edges = canny_edges(to_gray(image), params.edge_low, params.edge_high);
  return remove_small_islands(dilate(edges, params.dilation_radius), params.min_island_px);
}

BinaryMask anchor_pixel_mask(const Image& image, const MaskGenParams& params) {
  const double f = params.anchor_top_fraction;
  if (!(f > 0.0 && f <= 1.0)) throw InvalidArgument("anchor_top_fraction must lie in (0, 1]");
  const int p = params.anchor_patch;
  if (p < 1) throw InvalidArgument("anchor_patch must be >= 1");
  if (image.height() <= p || image.width() <= p) {
    throw InvalidArgument("anchor_pixel_mask: image must be larger than anchor_patch");
  }
  const Image grad = gradient_magnitude(to_gray(image));
  const int h = grad.height(), w = grad.width();
  const int ty = h / p, tx = w / p;
  std::vector<double> sum(static_cast<std::size_t>(ty) * tx, 0.0);
  std::vector<int> count(sum.size(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t t = static_cast<std::size_t>(tile_of(y, p, ty)) * tx + tile_of(x, p, tx);
      sum[t] += grad.at(0, y, x);
      ++count[t];
    }
  }
  std::vector<int> order(sum.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return sum[a] / count[a] > sum[b] / count[b];
  });
  const auto keep = static_cast<std::size_t>(std::ceil(f * static_cast<double>(order.size()) - 1e-9));
  std::vector<char> selected(order.size(), 0);
  for (std::size_t i = 0; i < keep; ++i) selected[order[i]] = 1;
  BinaryMask mask(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      mask.set(y, x, selected[static_cast<std::size_t>(tile_of(y, p, ty)) * tx + tile_of(x, p, tx)] != 0);
    }
  }
  return dilate(mask, params.dilation_radius);
}

BinaryMask resize_nearest(const BinaryMask& mask, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw InvalidArgument("resize_nearest: target dims must be >= 1");
  BinaryMask out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const int sy = static_cast<int>((2LL * y + 1) * mask.height() / (2LL * out_h));
    for (int x = 0; x < out_w; ++x) {
      const int sx = static_cast<int>((2LL * x + 1) * mask.width() / (2LL * out_w));
      out.set(y, x, mask(sy, sx));
    }
  }
  return out;
}

BinaryMask blockify_mask(const BinaryMask& mask, int s) {
  if (s < 1) throw InvalidArgument("blockify_mask: factor must be >= 1");
  if (mask.height() < s || mask.width() < s) throw InvalidArgument("blockify_mask: mask smaller than factor");
  const BinaryMask down = resize_nearest(mask, mask.height() / s, mask.width() / s);
  return resize_nearest(down, mask.height(), mask.width());
}

RegionSet split_regions(const BinaryMask& mask, double min_area_fraction) {
  if (!(min_area_fraction > 0.0 && min_area_fraction < 0.5)) {
    throw InvalidArgument("min_area_fraction must lie in (0, 0.5)");
  }
  const double fg = mask.fraction();
  if (fg < min_area_fraction) throw RegionTooSmall("foreground", fg);
  if (1.0 - fg < min_area_fraction) throw RegionTooSmall("background", 1.0 - fg);
  return RegionSet{mask, mask.complement(), fg};
}

std::vector<CropPosition> admissible_crops(const BinaryMask& region, int crop, double min_coverage) {
  if (crop < 1) throw InvalidArgument("crop size must be >= 1");
  const int h = region.height(), w = region.width();
  std::vector<CropPosition> out;
  if (crop > h || crop > w) return out;
  // Summed-area table with a zero border row/column.
  std::vector<long long> sat(static_cast<std::size_t>(h + 1) * (w + 1), 0);
  for (int y = 0; y < h; ++y) {
    long long row = 0;
    for (int x = 0; x < w; ++x) {
      row += region(y, x) ? 1 : 0;
      sat[static_cast<std::size_t>(y + 1) * (w + 1) + x + 1] = sat[static_cast<std::size_t>(y) * (w + 1) + x + 1] + row;
    }
  }
  const double need = min_coverage * crop * crop - 1e-9;
  auto s = [&](int y, int x) { return sat[static_cast<std::size_t>(y) * (w + 1) + x]; };
  for (int y = 0; y + crop <= h; ++y) {
    for (int x = 0; x + crop <= w; ++x) {
      const long long inside = s(y + crop, x + crop) - s(y, x + crop) - s(y + crop, x) + s(y, x);
      if (static_cast<double>(inside) >= need) out.push_back({y, x});
    }
  }
  return out;
}

BinaryMask load_mask(const std::filesystem::path& path, MaskLoadMode mode) {
  const Raster8 r = read_raster(path);
  if (mode == MaskLoadMode::strict && r.channels != 1) {
    throw FormatError("mask must be single-channel: " + path.string());
  }
  BinaryMask mask(r.height, r.width);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    double v;
    if (r.channels == 1) {
      v = r.samples[i];
    } else {
      v = 0.299 * r.samples[3 * i] + 0.587 * r.samples[3 * i + 1] + 0.114 * r.samples[3 * i + 2];
    }
    if (mode == MaskLoadMode::strict && v != 0.0 && v != 255.0) {
      throw FormatError("mask contains values outside {0, 255}: " + path.string());
    }
    mask.set(i, v > 127.0);
  }
  return mask;
}

void save_mask(const BinaryMask& mask, const std::filesystem::path& path) {
  Raster8 r{mask.height(), mask.width(), 1, {}};
  r.samples.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) r.samples[i] = mask.at(i) ? 255 : 0;
  write_png(path, r);
}

void save_regions(const RegionSet& regions, const std::filesystem::path& dir, const std::string& stem) {
  save_mask(regions.foreground, dir / (stem + ".fg.png"));
  save_mask(regions.background, dir / (stem + ".bg.png"));
}

}  // namespace mkgan
