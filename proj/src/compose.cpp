#include "mkgan/compose.h"

#include <algorithm>
#include <limits>
#include <vector>

#include "mkgan/error.h"

namespace mkgan {

namespace {

// Chessboard distance from each pixel to the nearest pixel of the other
// polarity, by two-pass propagation.
std::vector<int> seam_distance(const BinaryMask& m) {
  const int h = m.height(), w = m.width();
  const int inf = std::numeric_limits<int>::max() / 2;
  std::vector<int> d(static_cast<std::size_t>(h) * w, inf);
  auto idx = [w](int y, int x) { return static_cast<std::size_t>(y) * w + x; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < h && xx >= 0 && xx < w && m(yy, xx) != m(y, x)) d[idx(y, x)] = 1;
        }
      }
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int& v = d[idx(y, x)];
      if (y > 0) v = std::min(v, d[idx(y - 1, x)] + 1);
      if (x > 0) v = std::min(v, d[idx(y, x - 1)] + 1);
      if (y > 0 && x > 0) v = std::min(v, d[idx(y - 1, x - 1)] + 1);
      if (y > 0 && x + 1 < w) v = std::min(v, d[idx(y - 1, x + 1)] + 1);
    }
  }
  for (int y = h - 1; y >= 0; --y) {
    for (int x = w - 1; x >= 0; --x) {
      int& v = d[idx(y, x)];
      if (y + 1 < h) v = std::min(v, d[idx(y + 1, x)] + 1);
      if (x + 1 < w) v = std::min(v, d[idx(y, x + 1)] + 1);
      if (y + 1 < h && x + 1 < w) v = std::min(v, d[idx(y + 1, x + 1)] + 1);
      if (y + 1 < h && x > 0) v = std::min(v, d[idx(y + 1, x - 1)] + 1);
    }
  }
  return d;
}

}  // namespace

BinaryMask upscaled_selection(const BinaryMask& mask, int scale) {
  if (scale < 1) throw InvalidArgument("merge: scale must be >= 1");
  const BinaryMask blocky = blockify_mask(mask, scale);
  return resize_nearest(blocky, mask.height() * scale, mask.width() * scale);
}

Image merge(const Image& sr_fg, const Image& sr_bg, const BinaryMask& mask, int scale, int feather) {
  if (!sr_fg.same_shape(sr_bg)) throw ShapeError("merge: foreground and background SR differ in shape");
  if (sr_fg.height() != mask.height() * scale || sr_fg.width() != mask.width() * scale) {
    throw ShapeError("merge: SR dims must equal mask dims times scale");
  }
  if (feather < 0) throw InvalidArgument("merge: feather must be >= 0");
  const BinaryMask sel = upscaled_selection(mask, scale);
  Image out(sr_fg.height(), sr_fg.width(), sr_fg.channels());
  const std::size_t plane = out.plane_size();
  if (feather == 0) {
    for (int c = 0; c < out.channels(); ++c) {
      const auto f = sr_fg.plane(c), b = sr_bg.plane(c);
      auto o = out.plane(c);
      for (std::size_t i = 0; i < plane; ++i) o[i] = sel.at(i) ? f[i] : b[i];
    }
    return out;
  }
  const std::vector<int> dist = seam_distance(sel);
  for (int c = 0; c < out.channels(); ++c) {
    const auto f = sr_fg.plane(c), b = sr_bg.plane(c);
    auto o = out.plane(c);
    for (std::size_t i = 0; i < plane; ++i) {
      // Distance 1 sits on the seam; weight 0.5 there, 1 at feather + 1 px.
      const double t = std::min(1.0, 0.5 + 0.5 * (dist[i] - 1) / feather);
      const double wf = sel.at(i) ? t : 1.0 - t;
      o[i] = wf * f[i] + (1.0 - wf) * b[i];
    }
  }
  return out;
}

}  // namespace mkgan
