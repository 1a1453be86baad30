#include "mkgan/raster_io.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "mkgan/error.h"

namespace mkgan {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw FormatError("cannot open " + path.string());
  return f;
}

[[noreturn]] void png_error_handler(png_structp, png_const_charp message) {
  throw FormatError(std::string("png: ") + message);
}

void png_warning_handler(png_structp, png_const_charp) {}

Raster8 read_png(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
  if (!png) throw FormatError("png: cannot allocate read struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw FormatError("png: cannot allocate info struct");
  }
  struct Guard {
    png_structp* png;
    png_infop* info;
    ~Guard() { png_destroy_read_struct(png, info, nullptr); }
  } guard{&png, &info};

  png_init_io(png, file.get());
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);

  Raster8 r;
  r.width = static_cast<int>(png_get_image_width(png, info));
  r.height = static_cast<int>(png_get_image_height(png, info));
  r.channels = png_get_channels(png, info);
  if (r.channels != 1 && r.channels != 3) {
    throw FormatError("png: unsupported channel layout in " + path.string());
  }
  const std::size_t stride = png_get_rowbytes(png, info);
  r.samples.resize(stride * r.height);
  std::vector<png_bytep> rows(r.height);
  for (int y = 0; y < r.height; ++y) rows[y] = r.samples.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  return r;
}

// Skips whitespace and '#' comments between PNM header tokens.
int read_pnm_int(std::istream& in) {
  for (;;) {
    int ch = in.peek();
    if (ch == '#') {
      std::string discard;
      std::getline(in, discard);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  int value = 0;
  if (!(in >> value)) throw FormatError("pgm: malformed header");
  return value;
}

Raster8 read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  char magic[2];
  in.read(magic, 2);
  if (magic[0] != 'P' || (magic[1] != '5' && magic[1] != '2')) {
    throw FormatError("pgm: unsupported magic in " + path.string());
  }
  Raster8 r;
  r.channels = 1;
  r.width = read_pnm_int(in);
  r.height = read_pnm_int(in);
  const int maxval = read_pnm_int(in);
  if (r.width < 1 || r.height < 1 || maxval < 1 || maxval > 65535) {
    throw FormatError("pgm: invalid header in " + path.string());
  }
  const std::size_t n = static_cast<std::size_t>(r.width) * r.height;
  r.samples.resize(n);
  auto rescale = [maxval](int v) {
    return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0, maxval) / maxval));
  };
  if (magic[1] == '2') {
    for (std::size_t i = 0; i < n; ++i) r.samples[i] = rescale(read_pnm_int(in));
    return r;
  }
  in.get();  // single whitespace after maxval
  const int bytes = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(n * bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw FormatError("pgm: truncated data in " + path.string());
  }
  for (std::size_t i = 0; i < n; ++i) {
    const int v = bytes == 2 ? (raw[2 * i] << 8) | raw[2 * i + 1] : raw[i];
    r.samples[i] = maxval == 255 ? static_cast<std::uint8_t>(v) : rescale(v);
  }
  return r;
}

}  // namespace

Raster8 read_raster(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FormatError("missing file " + path.string());
  std::ifstream probe(path, std::ios::binary);
  unsigned char sig[8] = {};
  probe.read(reinterpret_cast<char*>(sig), 8);
  if (probe.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0) return read_png(path);
  if (sig[0] == 'P' && (sig[1] == '5' || sig[1] == '2')) return read_pgm(path);
  throw FormatError("unrecognized raster format: " + path.string());
}

void write_png(const std::filesystem::path& path, const Raster8& raster) {
  if (raster.channels != 1 && raster.channels != 3) throw InvalidArgument("png: 1 or 3 channels");
  if (raster.samples.size() !=
      static_cast<std::size_t>(raster.width) * raster.height * raster.channels) {
    throw ShapeError("png: sample count does not match dimensions");
  }
  FilePtr file = open_file(path, "wb");
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
  if (!png) throw FormatError("png: cannot allocate write struct");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* png;
    png_infop* info;
    ~Guard() { png_destroy_write_struct(png, info); }
  } guard{&png, &info};
  if (!info) throw FormatError("png: cannot allocate info struct");

  png_init_io(png, file.get());
  png_set_IHDR(png, info, raster.width, raster.height, 8,
               raster.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(raster.width) * raster.channels;
  for (int y = 0; y < raster.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(raster.samples.data() + y * stride));
  }
  png_write_end(png, nullptr);
}

std::uint8_t quantize(double v) {
  const double scaled = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(std::min(scaled, 255.0));
}

Image to_image(const Raster8& raster) {
  Image img(raster.height, raster.width, raster.channels);
  for (int y = 0; y < raster.height; ++y) {
    for (int x = 0; x < raster.width; ++x) {
      for (int c = 0; c < raster.channels; ++c) {
        const std::size_t i = (static_cast<std::size_t>(y) * raster.width + x) * raster.channels + c;
        img.at(c, y, x) = raster.samples[i] / 255.0;
      }
    }
  }
  return img;
}

Raster8 to_raster(const Image& image) {
  Raster8 r{image.height(), image.width(), image.channels(), {}};
  r.samples.resize(image.plane_size() * image.channels());
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      for (int c = 0; c < r.channels; ++c) {
        const std::size_t i = (static_cast<std::size_t>(y) * r.width + x) * r.channels + c;
        r.samples[i] = quantize(image.at(c, y, x));
      }
    }
  }
  return r;
}

Image load_image(const std::filesystem::path& path) { return to_image(read_raster(path)); }

void save_image(const Image& image, const std::filesystem::path& path) {
  write_png(path, to_raster(image));
}

}  // namespace mkgan
