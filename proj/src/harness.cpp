#include "mkgan/harness.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "json.hpp"
#include "mkgan/error.h"
#include "mkgan/kernel_io.h"
#include "mkgan/raster_io.h"

namespace mkgan {

namespace fs = std::filesystem;

KernelSpec KernelSpec::gaussian(double sigma_x, double sigma_y, double theta) {
  KernelSpec s;
  s.type = Type::gaussian;
  s.sigma_x = sigma_x;
  s.sigma_y = sigma_y;
  s.theta = theta;
  return s;
}

KernelSpec KernelSpec::motion(double length, double theta) {
  KernelSpec s;
  s.type = Type::motion;
  s.length = length;
  s.theta = theta;
  return s;
}

Kernel make_kernel(const KernelSpec& spec, int size) {
  if (size < 1 || size % 2 == 0) throw InvalidArgument("make_kernel: size must be odd");
  const int c = size / 2;
  Kernel k(size);
  switch (spec.type) {
    case KernelSpec::Type::delta:
      k(c, c) = 1.0;
      return k;
    case KernelSpec::Type::gaussian: {
      if (!(spec.sigma_x > 0.0 && spec.sigma_y > 0.0)) throw InvalidArgument("make_kernel: sigmas must be > 0");
      const double ct = std::cos(spec.theta), st = std::sin(spec.theta);
      for (int r = 0; r < size; ++r) {
        for (int col = 0; col < size; ++col) {
          const double x = col - c, y = r - c;
          const double u = ct * x + st * y, v = -st * x + ct * y;
          k(r, col) = std::exp(-0.5 * (u * u / (spec.sigma_x * spec.sigma_x) + v * v / (spec.sigma_y * spec.sigma_y)));
        }
      }
      break;
    }
    case KernelSpec::Type::motion: {
      if (!(spec.length >= 0.0) || spec.length > size - 1) {
        throw InvalidArgument("make_kernel: motion length must lie in [0, size - 1]");
      }
      // Bilinear splats of points spread uniformly along the segment.
      const int samples = std::max(1, static_cast<int>(std::ceil(spec.length * 16.0))) + 1;
      const double ct = std::cos(spec.theta), st = std::sin(spec.theta);
      for (int i = 0; i < samples; ++i) {
        const double t = samples == 1 ? 0.0 : spec.length * (static_cast<double>(i) / (samples - 1) - 0.5);
        const double x = c + t * ct, y = c - t * st;
        const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
        const double fx = x - x0, fy = y - y0;
        for (int dy = 0; dy <= 1; ++dy) {
          for (int dx = 0; dx <= 1; ++dx) {
            const int yy = y0 + dy, xx = x0 + dx;
            if (yy < 0 || yy >= size || xx < 0 || xx >= size) continue;
            k(yy, xx) += (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
          }
        }
      }
      break;
    }
  }
  const double total = k.sum();
  for (double& v : k.weights()) v /= total;
  return k;
}

BinaryMask lr_mask_from_hr(const BinaryMask& hr_mask, int scale) {
  const BinaryMask blocky = blockify_mask(hr_mask, scale);
  BinaryMask out(hr_mask.height() / scale, hr_mask.width() / scale);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) out.set(y, x, blocky(y * scale, x * scale));
  }
  return out;
}

Composite make_composite(const Image& hr, const BinaryMask& mask, const Kernel& k_fg, const Kernel& k_bg,
                         const DegradeConfig& cfg, double min_area_fraction) {
  if (!mask.matches(hr)) throw ShapeError("make_composite: mask dims differ from image dims");
  split_regions(mask, min_area_fraction);
  const Image a = degrade(hr, k_fg, cfg);
  const Image b = degrade(hr, k_bg, cfg);
  Composite out;
  out.lr_mask = lr_mask_from_hr(mask, cfg.scale);
  out.lr = b;
  for (int c = 0; c < out.lr.channels(); ++c) {
    for (int y = 0; y < out.lr.height(); ++y) {
      for (int x = 0; x < out.lr.width(); ++x) {
        if (out.lr_mask(y, x)) out.lr.at(c, y, x) = a.at(c, y, x);
      }
    }
  }
  out.truth = CompositeTruth{hr, mask, k_fg, k_bg, cfg};
  return out;
}

Image dead_leaves(int height, int width, std::uint64_t seed) {
  if (height < 1 || width < 1) throw InvalidArgument("dead_leaves: dims must be >= 1");
  constexpr int ss = 4;
  const int sh = height * ss, sw = width * ss;
  std::vector<float> canvas(static_cast<std::size_t>(sh) * sw * 3, 0.0f);
  std::vector<std::uint8_t> covered(static_cast<std::size_t>(sh) * sw, 0);
  std::size_t remaining = covered.size();

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double rmin = 1.0, rmax = 0.25 * std::min(height, width);
  // Density ~ r^-3 by inverse-CDF sampling.
  const double a = 1.0 / (rmin * rmin), b = 1.0 / (rmax * rmax);
  const int max_disks = 200000;
  for (int n = 0; n < max_disks && remaining > 0; ++n) {
    const double r = 1.0 / std::sqrt(a - unit(rng) * (a - b));
    const double cy = unit(rng) * height, cx = unit(rng) * width;
    const float col[3] = {static_cast<float>(unit(rng)), static_cast<float>(unit(rng)), static_cast<float>(unit(rng))};
    const double rs = r * ss, cys = cy * ss, cxs = cx * ss;
    const int y0 = std::max(0, static_cast<int>(std::floor(cys - rs))), y1 = std::min(sh - 1, static_cast<int>(std::ceil(cys + rs)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cxs - rs))), x1 = std::min(sw - 1, static_cast<int>(std::ceil(cxs + rs)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * sw + x;
        if (covered[i]) continue;
        const double dy = y + 0.5 - cys, dx = x + 0.5 - cxs;
        if (dy * dy + dx * dx > rs * rs) continue;
        covered[i] = 1;
        --remaining;
        for (int c = 0; c < 3; ++c) canvas[i * 3 + c] = col[c];
      }
    }
  }
  Image out(height, width, 3);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double acc = 0.0;
        for (int dy = 0; dy < ss; ++dy) {
          for (int dx = 0; dx < ss; ++dx) {
            acc += canvas[(static_cast<std::size_t>(y * ss + dy) * sw + x * ss + dx) * 3 + c];
          }
        }
        // Snap to the 8-bit grid so PNG persistence is lossless.
        out.at(c, y, x) = quantize(acc / (ss * ss)) / 255.0;
      }
    }
  }
  return out;
}

BinaryMask make_split_mask(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool vertical = unit(rng) < 0.5;
  const bool flip = unit(rng) < 0.5;
  const int along = vertical ? height : width, across = vertical ? width : height;
  const double offset = 0.45 + 0.1 * unit(rng);
  const double amplitude = 0.04 * across * unit(rng);
  const double period = along * (0.5 + unit(rng));
  const double phase = 2.0 * std::numbers::pi * unit(rng);
  BinaryMask m(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int t = vertical ? y : x, s = vertical ? x : y;
      const double edge = offset * across + amplitude * std::sin(2.0 * std::numbers::pi * t / period + phase);
      m.set(y, x, (s < edge) != flip);
    }
  }
  // Retry with a derived seed when the wave pushes the share out of band.
  const double frac = m.fraction();
  if (frac < 0.45 || frac > 0.55) return make_split_mask(height, width, seed + 0x9e3779b97f4a7c15ULL);
  return m;
}

CorpusEntry make_corpus_entry(const CorpusSpec& spec, int index) {
  const std::uint64_t seed = spec.seed * 1000003ULL + static_cast<std::uint64_t>(index);
  const Image hr = dead_leaves(spec.hr_size, spec.hr_size, seed);
  const BinaryMask mask = make_split_mask(spec.hr_size, spec.hr_size, seed ^ 0xabcdefULL);
  DegradeConfig cfg;
  cfg.scale = spec.scale;
  cfg.noise_sigma = spec.noise_sigma;
  cfg.seed = seed;
  CorpusEntry entry;
  char stem[32];
  std::snprintf(stem, sizeof stem, "img%03d", index);
  entry.stem = stem;
  entry.composite = make_composite(hr, mask, make_kernel(spec.fg, spec.kernel_size), make_kernel(spec.bg, spec.kernel_size), cfg);
  for (double& v : entry.composite.lr.data()) v = quantize(v) / 255.0;
  return entry;
}

void save_corpus_entry(const CorpusEntry& entry, const fs::path& dir) {
  const fs::path d = dir / entry.stem;
  fs::create_directories(d);
  const Composite& c = entry.composite;
  save_image(c.truth.hr, d / "hr.png");
  save_image(c.lr, d / "lr.png");
  save_mask(c.truth.mask, d / "mask.png");
  save_kernel_text(c.truth.fg_kernel, d / "fg.kernel.txt");
  save_kernel_text(c.truth.bg_kernel, d / "bg.kernel.txt");
  const nlohmann::json meta = {{"scale", c.truth.config.scale},
                               {"sigma", c.truth.config.noise_sigma},
                               {"seed", c.truth.config.seed}};
  std::ofstream out(d / "meta.json");
  out << meta.dump(2) << '\n';
  if (!out) throw FormatError("write failed: " + (d / "meta.json").string());
}

CorpusEntry load_corpus_entry(const fs::path& entry_dir) {
  std::ifstream in(entry_dir / "meta.json");
  if (!in) throw FormatError("missing meta.json in " + entry_dir.string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(entry_dir.string() + "/meta.json: " + e.what());
  }
  CorpusEntry entry;
  entry.stem = entry_dir.filename().string();
  CompositeTruth& t = entry.composite.truth;
  try {
    t.config.scale = meta.at("scale").get<int>();
    t.config.noise_sigma = meta.at("sigma").get<double>();
    t.config.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(entry_dir.string() + "/meta.json: " + e.what());
  }
  t.config.validate();
  t.hr = load_image(entry_dir / "hr.png");
  t.mask = load_mask(entry_dir / "mask.png", MaskLoadMode::strict);
  t.fg_kernel = load_kernel_text(entry_dir / "fg.kernel.txt");
  t.bg_kernel = load_kernel_text(entry_dir / "bg.kernel.txt");
  entry.composite.lr = load_image(entry_dir / "lr.png");
  if (!t.mask.matches(t.hr)) throw FormatError(entry_dir.string() + ": mask dims differ from hr dims");
  entry.composite.lr_mask = lr_mask_from_hr(t.mask, t.config.scale);
  if (!entry.composite.lr_mask.matches(entry.composite.lr)) {
    throw FormatError(entry_dir.string() + ": lr dims do not match hr dims / scale");
  }
  return entry;
}

std::vector<fs::path> list_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("corpus directory not found: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / "meta.json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void build_corpus(const CorpusSpec& spec, const fs::path& dir) {
  fs::create_directories(dir);
  for (int i = 0; i < spec.count; ++i) save_corpus_entry(make_corpus_entry(spec, i), dir);
}

}  // namespace mkgan
