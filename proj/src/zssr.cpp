#include "mkgan/zssr.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "mkgan/error.h"
#include "mkgan/ops.h"

namespace mkgan {

void ZssrConfig::validate() const {
  if (scale != 2) throw InvalidArgument("zssr: only scale 2 is supported");
  if (layers < 2) throw InvalidArgument("zssr: layers must be >= 2");
  if (width < 1) throw InvalidArgument("zssr: width must be >= 1");
  if (iterations < 0) throw InvalidArgument("zssr: iterations must be >= 0");
  if (!(learning_rate > 0.0)) throw InvalidArgument("zssr: learning rate must be > 0");
  if (lr_halving_interval < 1) throw InvalidArgument("zssr: lr_halving_interval must be >= 1");
  if (crop < 2 * scale || crop % scale != 0) throw InvalidArgument("zssr: crop must be a multiple of scale");
  if (!(mask_coverage_min > 0.0 && mask_coverage_min <= 1.0)) {
    throw InvalidArgument("zssr: mask_coverage_min must lie in (0, 1]");
  }
}

Image make_lr_son(const Image& image, const Kernel& kernel, int scale) {
  DegradeConfig cfg;
  cfg.scale = scale;
  return degrade(image, kernel, cfg);
}

Image dihedral(const Image& image, int t) {
  if (t < 0 || t > 7) throw InvalidArgument("dihedral: index must lie in [0, 8)");
  Image cur = image;
  if (t >= 4) {
    for (int c = 0; c < cur.channels(); ++c) {
      for (int y = 0; y < cur.height(); ++y) {
        for (int x = 0; x < cur.width(); ++x) cur.at(c, y, x) = image.at(c, y, image.width() - 1 - x);
      }
    }
  }
  for (int r = 0; r < t % 4; ++r) {
    Image rot(cur.width(), cur.height(), cur.channels());
    for (int c = 0; c < cur.channels(); ++c) {
      for (int y = 0; y < rot.height(); ++y) {
        for (int x = 0; x < rot.width(); ++x) rot.at(c, y, x) = cur.at(c, x, cur.width() - 1 - y);
      }
    }
    cur = std::move(rot);
  }
  return cur;
}

Image dihedral_inverse(const Image& image, int t) {
  if (t < 0 || t > 7) throw InvalidArgument("dihedral: index must lie in [0, 8)");
  Image cur = image;
  for (int r = 0; r < (4 - t % 4) % 4; ++r) cur = dihedral(cur, 1);
  return t >= 4 ? dihedral(cur, 4) : cur;
}

nn::Network build_zssr_network(const ZssrConfig& cfg, int channels) {
  nn::Network net(nn::Padding::same);
  int in = channels;
  for (int i = 0; i + 1 < cfg.layers; ++i) {
    net.add_conv(in, cfg.width, 3, 1, true, nn::Activation::relu);
    in = cfg.width;
  }
  net.add_conv(in, channels, 3, 1, true, nn::Activation::none);
  std::mt19937_64 rng(cfg.seed ^ 0x5a55a55a5ULL);
  nn::init_he(net, rng);
  nn::ConvLayer& last = net.layers().back();
  std::fill(last.weight.begin(), last.weight.end(), 0.0);
  return net;
}

Image zssr_apply(const nn::Network& net, const Image& image, int scale) {
  const Image base = resize_bicubic(image, scale);
  const nn::Tensor residual = net.infer(nn::from_image(base));
  Image out = base;
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] += residual.data[i];
  out.clamp01();
  return out;
}

Kernel bicubic_kernel() {
  constexpr int n = 7;
  double taps[n];
  for (int i = 0; i < n; ++i) taps[i] = cubic_weight((i - n / 2) / 2.0) / 2.0;
  Kernel k(n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) k(r, c) = taps[r] * taps[c];
  }
  return k;
}

ZssrResult zssr_upscale(const Image& image, const Kernel& kernel, const BinaryMask& region, const ZssrConfig& cfg) {
  cfg.validate();
  kernel.validate();
  if (!region.matches(image)) throw ShapeError("zssr: mask dims differ from image dims");
  if (region.count() == 0) throw RegionTooSmall("region", 0.0, "empty mask");

  int crop = std::min({cfg.crop, image.height(), image.width()});
  crop -= crop % cfg.scale;
  if (crop < 2 * cfg.scale) throw RegionTooSmall("region", region.fraction(), "image smaller than a training crop");
  const auto positions = admissible_crops(region, crop, cfg.mask_coverage_min);
  if (positions.empty()) {
    throw RegionTooSmall("region", region.fraction(), "no " + std::to_string(crop) + "px crop meets the coverage rule");
  }

  nn::Network net = build_zssr_network(cfg, image.channels());
  nn::Adam opt(cfg.learning_rate);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, positions.size() - 1);
  std::uniform_int_distribution<int> pick_t(0, 7);

  ZssrResult result;
  result.loss_trace.reserve(cfg.iterations);
  for (int it = 0; it < cfg.iterations; ++it) {
    opt.set_learning_rate(cfg.learning_rate * std::pow(0.5, it / cfg.lr_halving_interval));
    const CropPosition p = positions[pick(rng)];
    const int t = pick_t(rng);
    Image father = image.crop(p.y, p.x, crop, crop);
    if (cfg.augment) father = dihedral(father, t);
    const Image base = resize_bicubic(make_lr_son(father, kernel, cfg.scale), cfg.scale);
    const nn::Tensor residual = net.forward(nn::from_image(base));

    nn::Tensor grad(residual.n, residual.c, residual.h, residual.w);
    const double norm = static_cast<double>(residual.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < residual.size(); ++i) {
      const double d = base.data()[i] + residual.data[i] - father.data()[i];
      loss += std::abs(d);
      grad.data[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / norm;
    }
    loss /= norm;
    if (!std::isfinite(loss)) throw TrainingDiverged("zssr", it);
    net.backward(grad, false);
    opt.step(net);
    result.loss_trace.push_back(loss);
  }
  result.iterations_run = cfg.iterations;

  for (const nn::ConvLayer& layer : net.layers()) {
    for (double w : layer.weight) {
      if (!std::isfinite(w)) throw TrainingDiverged("zssr", cfg.iterations);
    }
  }
  if (!cfg.ensemble) {
    result.image = zssr_apply(net, image, cfg.scale);
    return result;
  }
  Image acc;
  for (int t = 0; t < 8; ++t) {
    const Image sr = dihedral_inverse(zssr_apply(net, dihedral(image, t), cfg.scale), t);
    if (t == 0) {
      acc = sr;
    } else {
      for (std::size_t i = 0; i < acc.data().size(); ++i) acc.data()[i] += sr.data()[i];
    }
  }
  for (double& v : acc.data()) v /= 8.0;
  result.image = std::move(acc);
  return result;
}

}  // namespace mkgan
