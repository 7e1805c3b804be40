#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "raw/verifier.hpp"
#include "raw/watermark.hpp"

namespace raw {

// Model artifact (.rawm), all integers and floats little-endian:
//
//   "RAWM"             4 bytes
//   version            u32 (= kModelVersion)
//   C, H, W            u32 each
//   c1, c2             f64 each
//   arch tag           u32 length + ASCII bytes (= kArchTag)
//   10 arrays          each u32 count + count f32 values, in the order
//                      u, v, conv1.w, conv1.b, conv2.w, conv2.b,
//                      conv3.w, conv3.b, dense.w, dense.b
//   CRC-32             u32 over every preceding byte
inline constexpr std::uint32_t kModelVersion = 1;
inline constexpr const char* kArchTag = "conv3x3s2-16-32-64-gap-dense1";

struct ModelArtifact {
  WatermarkPair watermark;
  VerifierParams params;

  Shape shape() const { return watermark.v.shape(); }
  bool operator==(const ModelArtifact&) const = default;
};

std::vector<std::uint8_t> serialize_model(const ModelArtifact& model);
// FormatError on bad magic, version, tag or layout; CorruptionError on a
// CRC mismatch.
ModelArtifact deserialize_model(const std::vector<std::uint8_t>& bytes);

void save_model(const ModelArtifact& model, const std::filesystem::path& path);
ModelArtifact load_model(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const void* data, std::size_t size);

}  // namespace raw
