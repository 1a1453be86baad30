#pragma once

#include "mkgan/image.h"
#include "mkgan/segmentation.h"

namespace mkgan {

// Selects sr_fg where the blockified mask (upscaled by `scale`) is true and
// sr_bg elsewhere. feather > 0 replaces the hard seam with a linear ramp of
// that many output pixels on either side.
Image merge(const Image& sr_fg, const Image& sr_bg, const BinaryMask& mask, int scale, int feather = 0);

// The mask as it is applied to the merged output.
BinaryMask upscaled_selection(const BinaryMask& mask, int scale);

}  // namespace mkgan
