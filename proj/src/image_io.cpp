#include "raw/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>

#include <fmt/format.h>

#include "raw/error.hpp"

namespace raw {
namespace fs = std::filesystem;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError(fmt::format("cannot open '{}'", path.string()));
  return f;
}

// Converts interleaved samples to a channel-major image with the requested
// channel count.
Image from_interleaved(const std::vector<double>& samples, int height, int width,
                       int file_channels, int channels) {
  if (channels != 1 && channels != 3) {
    throw DimensionError(fmt::format("unsupported channel count {}", channels));
  }
  Tensor3 t({channels, height, width});
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * width + x) * file_channels;
      if (file_channels == channels) {
        for (int c = 0; c < channels; ++c) t.at(c, y, x) = static_cast<float>(samples[base + c]);
      } else if (file_channels == 1) {
        for (int c = 0; c < channels; ++c) t.at(c, y, x) = static_cast<float>(samples[base]);
      } else {
        const double luma =
            0.299 * samples[base] + 0.587 * samples[base + 1] + 0.114 * samples[base + 2];
        t.at(0, y, x) = static_cast<float>(luma);
      }
    }
  }
  return clip01(std::move(t));
}

}  // namespace

unsigned char quantize8(float v) {
  const double scaled = std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0;
  return static_cast<unsigned char>(std::floor(scaled + 0.5));
}

Image load_png(const fs::path& path, int channels) {
  FilePtr file = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError(fmt::format("'{}' is not a PNG file", path.string()));
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }

  int width = 0, height = 0, depth = 0, color = 0;
  std::vector<unsigned char> raw_rows;
  volatile std::size_t rowbytes = 0;
  std::vector<png_bytep> rows;
  volatile bool bad_format = false;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(fmt::format("libpng failed while reading '{}'", path.string()));
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  depth = png_get_bit_depth(png, info);
  color = png_get_color_type(png, info);

  if ((depth != 8 && depth != 16) || color == PNG_COLOR_TYPE_PALETTE) {
    bad_format = true;
  } else {
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    rowbytes = png_get_rowbytes(png, info);
    raw_rows.resize(rowbytes * height);
    rows.resize(height);
    for (int y = 0; y < height; ++y) rows[y] = raw_rows.data() + rowbytes * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);

  if (bad_format) {
    throw FormatError(fmt::format("'{}': unsupported PNG (bit depth {}, color type {})",
                                  path.string(), depth, color));
  }
  const int file_channels = (color & PNG_COLOR_MASK_COLOR) ? 3 : 1;
  const double maxval = depth == 16 ? 65535.0 : 255.0;
  std::vector<double> samples(static_cast<std::size_t>(width) * height * file_channels);
  for (int y = 0; y < height; ++y) {
    const unsigned char* row = raw_rows.data() + rowbytes * y;
    for (std::size_t i = 0; i < static_cast<std::size_t>(width) * file_channels; ++i) {
      const double s = depth == 16 ? (row[2 * i] << 8 | row[2 * i + 1]) : row[i];
      samples[static_cast<std::size_t>(y) * width * file_channels + i] = s / maxval;
    }
  }
  return from_interleaved(samples, height, width, file_channels, channels);
}

void save_png(const Image& img, const fs::path& path) {
  const int channels = img.channels();
  if (channels != 1 && channels != 3) {
    throw DimensionError(fmt::format("save_png: unsupported channel count {}", channels));
  }
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  const int h = img.height();
  const int w = img.width();
  std::vector<unsigned char> buffer(static_cast<std::size_t>(h) * w * channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        buffer[(static_cast<std::size_t>(y) * w + x) * channels + c] = quantize8(img.at(c, y, x));
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buffer.data() + static_cast<std::size_t>(y) * w * channels;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(fmt::format("libpng failed while writing '{}'", path.string()));
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, w, h, 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

namespace {

// Reads the next whitespace-delimited header token, skipping comments.
int read_pnm_int(std::istream& in, const fs::path& path) {
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string ignored;
      std::getline(in, ignored);
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      in.unget();
      break;
    }
  }
  int v = -1;
  if (!(in >> v) || v < 0) throw FormatError(fmt::format("'{}': bad PNM header", path.string()));
  return v;
}

}  // namespace

Image load_ppm(const fs::path& path, int channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6" && magic != "P5") {
    throw FormatError(fmt::format("'{}' is not a binary PPM/PGM file", path.string()));
  }
  const int file_channels = magic == "P6" ? 3 : 1;
  const int width = read_pnm_int(in, path);
  const int height = read_pnm_int(in, path);
  const int maxval = read_pnm_int(in, path);
  if (width < 1 || height < 1 || maxval < 1 || maxval > 65535) {
    throw FormatError(fmt::format("'{}': bad PNM dimensions or maxval", path.string()));
  }
  in.get();  // single whitespace before the raster
  const int bytes = maxval > 255 ? 2 : 1;
  const std::size_t count = static_cast<std::size_t>(width) * height * file_channels;
  std::vector<unsigned char> raster(count * bytes);
  if (!in.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()))) {
    throw IoError(fmt::format("'{}': truncated raster", path.string()));
  }
  std::vector<double> samples(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int s = bytes == 2 ? (raster[2 * i] << 8 | raster[2 * i + 1]) : raster[i];
    samples[i] = std::min(1.0, static_cast<double>(s) / maxval);
  }
  return from_interleaved(samples, height, width, file_channels, channels);
}

void save_ppm(const Image& img, const fs::path& path) {
  const int channels = img.channels();
  if (channels != 1 && channels != 3) {
    throw DimensionError(fmt::format("save_ppm: unsupported channel count {}", channels));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out << (channels == 3 ? "P6" : "P5") << '\n' << img.width() << ' ' << img.height() << "\n255\n";
  std::vector<unsigned char> raster(img.size());
  std::size_t i = 0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < channels; ++c) raster[i++] = quantize8(img.at(c, y, x));
  out.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

Image load_image(const fs::path& path, int channels) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  if (ext == ".png") return load_png(path, channels);
  return load_ppm(path, channels);
}

void save_image(const Image& img, const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  if (ext == ".png") {
    save_png(img, path);
  } else {
    save_ppm(img, path);
  }
}

}  // namespace raw
