#pragma once

#include <filesystem>

#include "mkgan/image.h"

namespace mkgan {

// Text matrix: '#' comment lines, then k, then k rows of k reals.
void save_kernel_text(const Kernel& kernel, const std::filesystem::path& path);
Kernel load_kernel_text(const std::filesystem::path& path);

// Gray PNG visualization, weights scaled so the largest maps to 255.
void save_kernel_png(const Kernel& kernel, const std::filesystem::path& path);

}  // namespace mkgan
