#include "mkgan/kernelgan.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "mkgan/error.h"
#include "mkgan/ops.h"

namespace mkgan {

namespace {

// Relative scale of the Gaussian perturbation added to the delta path.
constexpr double kGeneratorInitNoise = 0.1;
constexpr double kNegligibleWeight = 0.02;

// splitmix64 finalizer over seed + salt.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

nn::Tensor impulse_canvas(int field) {
  const int side = 2 * field - 1;
  nn::Tensor t(1, 1, side, side);
  t.at(0, 0, field - 1, field - 1) = 1.0;
  return t;
}

nn::Tensor kernel_tensor(const Kernel& k) {
  nn::Tensor t(1, 1, k.size(), k.size());
  std::copy(k.weights().begin(), k.weights().end(), t.data.begin());
  return t;
}

double mean_of(const std::vector<LossRecord>& trace, std::size_t from, double LossRecord::*field) {
  double s = 0.0;
  for (std::size_t i = from; i < trace.size(); ++i) s += trace[i].*field;
  return s / static_cast<double>(std::max<std::size_t>(1, trace.size() - from));
}

}  // namespace

void KernelGanConfig::validate() const {
  if (scale != 2) throw InvalidArgument("kernelgan: only scale 2 is supported");
  if (iterations < 1) throw InvalidArgument("kernelgan: iterations must be >= 1");
  if (batch < 1) throw InvalidArgument("kernelgan: batch must be >= 1");
  if (width < 1) throw InvalidArgument("kernelgan: width must be >= 1");
  if (restarts < 1) throw InvalidArgument("kernelgan: restarts must be >= 1");
  if (!(mask_coverage_min > 0.0 && mask_coverage_min <= 1.0)) {
    throw InvalidArgument("kernelgan: mask_coverage_min must lie in (0, 1]");
  }
  if (!(reg_warmup_fraction >= 0.0 && reg_warmup_fraction <= 1.0)) {
    throw InvalidArgument("kernelgan: reg_warmup_fraction must lie in [0, 1]");
  }
  // 13-px receptive field, then at least one 7x7 discriminator window.
  if ((crop_size - 12 - 1) / scale + 1 < 7) throw InvalidArgument("kernelgan: crop_size too small");
}

nn::Network build_generator(const KernelGanConfig& cfg) {
  const int w = cfg.width;
  nn::Network g(nn::Padding::valid);
  g.add_conv(1, w, 7, 1, false);
  g.add_conv(w, w, 5, 1, false);
  g.add_conv(w, w, 3, 1, false);
  g.add_conv(w, w, 1, 1, false);
  g.add_conv(w, 1, 1, cfg.scale, false);

  std::mt19937_64 rng(mix_seed(cfg.seed, 1));
  for (nn::ConvLayer& layer : g.layers()) {
    std::normal_distribution<double> noise(0.0, kGeneratorInitNoise / std::sqrt(static_cast<double>(layer.fan_in())));
    for (double& v : layer.weight) v = noise(rng);
    // Channel 0 -> channel 0 carries a centered delta through every layer.
    const int c = layer.kernel_size / 2;
    layer.weight[static_cast<std::size_t>(c) * layer.kernel_size + c] += 1.0;
  }
  return g;
}

nn::Network build_discriminator(const KernelGanConfig& cfg) {
  const int w = cfg.width;
  using nn::Activation;
  nn::Network d(nn::Padding::valid);
  d.add_conv(1, w, 7, 1, true, Activation::leaky_relu, true);
  const bool sn_all = cfg.spectral_norm_all;
  for (int i = 0; i < 4; ++i) d.add_conv(w, w, 1, 1, true, Activation::leaky_relu, sn_all);
  d.add_conv(w, 1, 1, 1, true, Activation::sigmoid, sn_all);
  std::mt19937_64 rng(mix_seed(cfg.seed, 2));
  nn::init_he(d, rng);
  return d;
}

Kernel extract_kernel(const nn::Network& generator) {
  if (!generator.is_linear()) throw InvalidState("extract_kernel: generator must be linear");
  if (generator.layers().empty() || generator.layers().front().in_channels != 1 ||
      generator.layers().back().out_channels != 1) {
    throw InvalidState("extract_kernel: generator must map one channel to one channel");
  }
  nn::Network unit = generator;
  for (nn::ConvLayer& layer : unit.layers()) layer.stride = 1;
  const int field = unit.receptive_field();
  const nn::Tensor canvas = impulse_canvas(field);
  const nn::Tensor response = unit.infer(canvas);
  // Subtract the zero-input response so bias terms do not leak into the kernel.
  const nn::Tensor offset = unit.infer(nn::Tensor(1, 1, canvas.h, canvas.w));
  std::vector<double> w(response.data.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = response.data[i] - offset.data[i];
  return Kernel(field, std::move(w));
}

Image downscale_valid(const Image& image, const Kernel& k, int scale) {
  const int n = k.size();
  if (image.height() < n || image.width() < n) throw ShapeError("downscale_valid: image smaller than kernel");
  const int oh = (image.height() - n) / scale + 1, ow = (image.width() - n) / scale + 1;
  Image out(oh, ow, image.channels());
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int a = 0; a < n; ++a) {
          for (int b = 0; b < n; ++b) acc += k(n - 1 - a, n - 1 - b) * image.at(c, scale * y + a, scale * x + b);
        }
        out.at(c, y, x) = acc;
      }
    }
  }
  return out;
}

Kernel boundary_penalty_mask(int size) {
  Kernel m(size);
  const double c = size / 2;
  const double free_radius = 2.0;
  const double far = std::sqrt(2.0) * c - free_radius;
  for (int r = 0; r < size; ++r) {
    for (int col = 0; col < size; ++col) {
      const double d = std::hypot(r - c, col - c);
      const double excess = std::max(0.0, d - free_radius) / far;
      m(r, col) = excess * excess;
    }
  }
  return m;
}

RegularizationTerms kernel_regularization(const Kernel& k, const KernelRegWeights& weights) {
  const int n = k.size();
  const double c = n / 2;
  const auto taps = static_cast<double>(n) * n;
  RegularizationTerms out;
  out.gradient = Kernel(n);
  const Kernel mask = boundary_penalty_mask(n);

  const double total = k.sum();
  out.sum_to_one = weights.sum_to_one * (1.0 - total) * (1.0 - total);
  const double d_sum = -2.0 * weights.sum_to_one * (1.0 - total);

  const auto [com_r, com_c] = k.center_of_mass();
  const bool has_mass = std::abs(total) > 1e-12;
  if (has_mass) {
    out.center = weights.center * ((com_r - c) * (com_r - c) + (com_c - c) * (com_c - c));
  }

  for (int r = 0; r < n; ++r) {
    for (int col = 0; col < n; ++col) {
      const double v = k(r, col);
      const double a = std::abs(v);
      const double sign = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      out.boundary += weights.boundary * a * mask(r, col);
      out.sparsity += weights.sparsity * std::sqrt(a) / taps;
      double g = d_sum + weights.boundary * sign * mask(r, col);
      if (a > 0.0) g += weights.sparsity * 0.5 * sign / (std::sqrt(a) * taps);
      if (has_mass) {
        g += weights.center * 2.0 * ((com_r - c) * (r - com_r) + (com_c - c) * (col - com_c)) / total;
      }
      out.gradient(r, col) = g;
    }
  }
  out.total = out.sum_to_one + out.boundary + out.sparsity + out.center;
  return out;
}

Kernel postprocess_kernel(const Kernel& raw) {
  const int n = raw.size();
  const double peak = *std::max_element(raw.weights().begin(), raw.weights().end());
  if (!(peak > 0.0) || !std::isfinite(peak)) throw InvalidState("postprocess_kernel: kernel has no positive weight");
  Kernel k = raw;
  for (double& v : k.weights()) {
    if (v < kNegligibleWeight * peak) v = 0.0;
  }
  const int c = n / 2;
  for (int pass = 0; pass < 4; ++pass) {
    const auto [com_r, com_c] = k.center_of_mass();
    const int dr = static_cast<int>(std::lround(c - com_r));
    const int dc = static_cast<int>(std::lround(c - com_c));
    if (dr == 0 && dc == 0) break;
    Kernel shifted(n);
    for (int r = 0; r < n; ++r) {
      for (int col = 0; col < n; ++col) {
        const int sr = r - dr, sc = col - dc;
        if (sr >= 0 && sr < n && sc >= 0 && sc < n) shifted(r, col) = k(sr, sc);
      }
    }
    if (!(shifted.sum() > 0.0)) break;
    k = std::move(shifted);
  }
  const double total = k.sum();
  for (double& v : k.weights()) v /= total;
  return k;
}

BinaryMask crop_footprint(const BinaryMask& region, const KernelGanConfig& cfg) {
  BinaryMask out(region.height(), region.width());
  const int fake = (cfg.crop_size - 13) / cfg.scale + 1;
  for (int crop : {cfg.crop_size, fake}) {
    for (const CropPosition& p : admissible_crops(region, crop, cfg.mask_coverage_min)) {
      for (int y = p.y; y < p.y + crop; ++y) {
        for (int x = p.x; x < p.x + crop; ++x) out.set(y, x, true);
      }
    }
  }
  return out;
}

namespace {

EstimatedKernel run_estimation(const Image& gray, const BinaryMask& region, const KernelGanConfig& cfg) {
  nn::Network gen = build_generator(cfg);
  nn::Network disc = build_discriminator(cfg);
  const int field = gen.receptive_field();
  // Training reads the kernel through the stride-removed impulse response;
  // the end-to-end stride is applied when sampling the fake patches.
  gen.layers().back().stride = 1;

  const int crop = cfg.crop_size;
  const int fake_side = (crop - field) / cfg.scale + 1;
  const auto g_positions = admissible_crops(region, crop, cfg.mask_coverage_min);
  const auto d_positions = admissible_crops(region, fake_side, cfg.mask_coverage_min);
  if (static_cast<int>(g_positions.size()) < cfg.min_valid_crops ||
      static_cast<int>(d_positions.size()) < cfg.min_valid_crops) {
    throw RegionTooSmall("region", region.fraction(),
                         std::to_string(g_positions.size()) + " admissible " + std::to_string(crop) + "px crops");
  }

  std::mt19937_64 rng(mix_seed(cfg.seed, 3));
  std::uniform_int_distribution<std::size_t> pick_g(0, g_positions.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_d(0, d_positions.size() - 1);
  nn::Adam opt_g(cfg.lr_generator, cfg.beta1);
  nn::Adam opt_d(cfg.lr_discriminator, cfg.beta1);
  const nn::Tensor canvas = impulse_canvas(field);
  const int warmup = static_cast<int>(std::lround(cfg.reg_warmup_fraction * cfg.iterations));

  EstimatedKernel result;
  result.seed = cfg.seed;
  result.loss_trace.reserve(cfg.iterations);
  const int batch = cfg.batch;
  std::vector<Image> crops(batch);
  nn::Tensor d_input(2 * batch, 1, fake_side, fake_side);

  for (int it = 0; it < cfg.iterations; ++it) {
    // Real patches first, then generator outputs, in one discriminator batch.
    for (int b = 0; b < batch; ++b) {
      const CropPosition pd = d_positions[pick_d(rng)];
      for (int y = 0; y < fake_side; ++y) {
        for (int x = 0; x < fake_side; ++x) d_input.at(b, 0, y, x) = gray.at(0, pd.y + y, pd.x + x);
      }
      const CropPosition pg = g_positions[pick_g(rng)];
      crops[b] = gray.crop(pg.y, pg.x, crop, crop);
    }

    const nn::Tensor response = gen.forward(canvas);
    const Kernel kernel(field, {response.data.begin(), response.data.end()});
    for (int b = 0; b < batch; ++b) {
      const Image fake = downscale_valid(crops[b], kernel, cfg.scale);
      std::copy(fake.data().begin(), fake.data().end(), d_input.item(batch + b));
    }

    for (nn::ConvLayer& layer : disc.layers()) {
      if (layer.spectral_norm) nn::spectral_normalize(layer);
    }
    const nn::Tensor d_out = disc.forward(d_input);
    const std::size_t map = d_out.plane_size();
    const double norm = static_cast<double>(batch * map);
    double loss_real = 0.0, loss_fake = 0.0, loss_g = 0.0;
    for (int b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < map; ++i) {
        const double real = d_out.item(b)[i], fake = d_out.item(batch + b)[i];
        loss_real += (real - 1.0) * (real - 1.0);
        loss_fake += fake * fake;
        loss_g += (fake - 1.0) * (fake - 1.0);
      }
    }
    loss_real /= norm;
    loss_fake /= norm;
    loss_g /= norm;

    // Generator step: LSGAN target 1 on fakes, back through D into the kernel.
    nn::Tensor up(d_out.n, d_out.c, d_out.h, d_out.w);
    for (int b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < map; ++i) up.item(batch + b)[i] = 2.0 * (d_out.item(batch + b)[i] - 1.0) / norm;
    }
    const nn::Tensor d_in_grad = disc.backward(up, true);
    disc.zero_grad();
    Kernel corr_grad(field);
    for (int b = 0; b < batch; ++b) {
      const double* g = d_in_grad.item(batch + b);
      for (int a = 0; a < field; ++a) {
        for (int c = 0; c < field; ++c) {
          double acc = 0.0;
          for (int y = 0; y < fake_side; ++y) {
            for (int x = 0; x < fake_side; ++x) {
              acc += g[static_cast<std::size_t>(y) * fake_side + x] * crops[b].at(0, cfg.scale * y + a, cfg.scale * x + c);
            }
          }
          corr_grad(a, c) += acc;
        }
      }
    }
    KernelRegWeights reg_weights = cfg.reg;
    if (it < warmup) {
      reg_weights.sparsity = 0.0;
      reg_weights.center = 0.0;
    }
    const RegularizationTerms reg = kernel_regularization(kernel, reg_weights);
    Kernel kernel_grad = flip(corr_grad);
    for (std::size_t i = 0; i < kernel_grad.weights().size(); ++i) {
      kernel_grad.weights()[i] += reg.gradient.weights()[i];
    }
    gen.backward(kernel_tensor(kernel_grad), false);
    opt_g.step(gen);

    // Discriminator step on the same (detached) fakes.
    for (int b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < map; ++i) {
        up.item(b)[i] = (d_out.item(b)[i] - 1.0) / norm;
        up.item(batch + b)[i] = d_out.item(batch + b)[i] / norm;
      }
    }
    disc.backward(up, false);
    opt_d.step(disc);

    const LossRecord rec{loss_g, 0.5 * (loss_real + loss_fake), reg.total};
    if (!std::isfinite(rec.generator) || !std::isfinite(rec.discriminator) || !std::isfinite(rec.regularization)) {
      throw TrainingDiverged("kernelgan", it);
    }
    result.loss_trace.push_back(rec);
  }

  const nn::Tensor response = gen.infer(canvas);
  result.raw_kernel = Kernel(field, {response.data.begin(), response.data.end()});
  for (double v : result.raw_kernel.weights()) {
    if (!std::isfinite(v)) throw TrainingDiverged("kernelgan", cfg.iterations);
  }
  try {
    result.kernel = postprocess_kernel(result.raw_kernel);
  } catch (const InvalidState&) {
    throw TrainingDiverged("kernelgan", cfg.iterations);
  }
  result.iterations_run = cfg.iterations;
  const std::size_t tail = result.loss_trace.size() - std::max<std::size_t>(1, result.loss_trace.size() / 5);
  result.final_generator_loss = mean_of(result.loss_trace, tail, &LossRecord::generator);
  double var = 0.0;
  for (std::size_t i = tail; i < result.loss_trace.size(); ++i) {
    const double d = result.loss_trace[i].generator - result.final_generator_loss;
    var += d * d;
  }
  result.tail_loss_variance = var / static_cast<double>(result.loss_trace.size() - tail);
  return result;
}

}  // namespace

EstimatedKernel estimate_kernel(const Image& image, const BinaryMask& region, const KernelGanConfig& cfg) {
  cfg.validate();
  if (!region.matches(image)) throw ShapeError("estimate_kernel: mask dims differ from image dims");
  if (region.count() == 0) throw RegionTooSmall("region", 0.0, "empty mask");
  const Image gray = to_gray(image);

  EstimatedKernel best;
  bool have = false;
  for (int r = 0; r < cfg.restarts; ++r) {
    KernelGanConfig run = cfg;
    run.seed = r == 0 ? cfg.seed : mix_seed(cfg.seed, 100 + static_cast<std::uint64_t>(r));
    EstimatedKernel est;
    try {
      est = run_estimation(gray, region, run);
    } catch (const TrainingDiverged&) {
      if (r + 1 == cfg.restarts && !have) throw;
      continue;
    }
    if (!have || est.final_generator_loss < best.final_generator_loss) {
      best = std::move(est);
      have = true;
    }
  }
  return best;
}

}  // namespace mkgan
