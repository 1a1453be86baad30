#include "mkgan/kernel_io.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "mkgan/error.h"
#include "mkgan/raster_io.h"

namespace mkgan {

void save_kernel_text(const Kernel& kernel, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", kernel.sum());
  out << "# blur kernel, row-major, rows sum to " << buf << " in total\n";
  out << kernel.size() << '\n';
  for (int r = 0; r < kernel.size(); ++r) {
    for (int c = 0; c < kernel.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", kernel(r, c));
      out << (c ? " " : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw FormatError("write failed: " + path.string());
}

Kernel load_kernel_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::stringstream body;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    body << line << '\n';
  }
  int k = 0;
  if (!(body >> k) || k < 1 || k % 2 == 0 || k > Kernel::kMaxSize) {
    throw FormatError(path.string() + ": bad kernel size");
  }
  Kernel kernel(k);
  for (double& v : kernel.weights()) {
    if (!(body >> v)) throw FormatError(path.string() + ": truncated kernel matrix");
  }
  std::string extra;
  if (body >> extra) throw FormatError(path.string() + ": trailing data after kernel matrix");
  return kernel;
}

void save_kernel_png(const Kernel& kernel, const std::filesystem::path& path) {
  const auto w = kernel.weights();
  const double peak = w.empty() ? 0.0 : *std::max_element(w.begin(), w.end());
  Image img(kernel.size(), kernel.size(), 1);
  for (std::size_t i = 0; i < w.size(); ++i) img.data()[i] = peak > 0.0 ? std::max(0.0, w[i]) / peak : 0.0;
  save_image(img, path);
}

}  // namespace mkgan
