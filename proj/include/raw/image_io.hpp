#pragma once

#include <filesystem>

#include "raw/image.hpp"

namespace raw {

// 8- or 16-bit PNG, grayscale or RGB (alpha dropped). Intensities are scaled
// by the bit-depth maximum. With channels == 3 a grayscale file is
// replicated; with channels == 1 an RGB file is converted to luma.
Image load_png(const std::filesystem::path& path, int channels = 3);

// 8-bit PNG (RGB for 3 channels, grayscale for 1); byte = round-half-up(v * 255).
void save_png(const Image& img, const std::filesystem::path& path);

// Binary PPM (P6) / PGM (P5), maxval up to 65535.
Image load_ppm(const std::filesystem::path& path, int channels = 3);
void save_ppm(const Image& img, const std::filesystem::path& path);

// Dispatch on extension: .png, otherwise .ppm/.pgm/.pnm.
Image load_image(const std::filesystem::path& path, int channels = 3);
void save_image(const Image& img, const std::filesystem::path& path);

// Quantization used by both writers.
unsigned char quantize8(float v);

}  // namespace raw
