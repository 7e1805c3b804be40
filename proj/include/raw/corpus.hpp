#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "raw/image.hpp"

namespace raw {

enum class Generator { kLowFreqFourier, kGradientField, kShapeCollage, kFilteredNoise };

struct CorpusSpec {
  int n_images = 200;
  int channels = 3;
  int height = 64;
  int width = 64;
  std::uint64_t seed = 0;
  // Mixture weights over {low_freq_fourier, gradient_field, shape_collage, filtered_noise}.
  std::array<double, 4> weights{1.0, 1.0, 1.0, 1.0};

  Shape shape() const { return {channels, height, width}; }
  void validate() const;
  bool operator==(const CorpusSpec&) const = default;
};

// Deterministic synthetic corpus; image i depends only on (seed, i, size,
// weights), so images are generated in parallel.
std::vector<Image> generate(const CorpusSpec& spec);

// One image from one generator family.
Image generate_one(Generator family, Shape shape, std::uint64_t seed);

// Loads every .png / .ppm / .pgm / .pnm file in byte-lexicographic order,
// resizing bilinearly to `shape` where needed.
std::vector<Image> ingest_dir(const std::filesystem::path& dir, Shape shape);

// Writes img_00000.png, ... into `dir` (created if missing).
void write_corpus(std::span<const Image> images, const std::filesystem::path& dir,
                  const std::string& extension = ".png");

namespace serial {
std::vector<Image> generate(const CorpusSpec& spec);
}  // namespace serial

}  // namespace raw
