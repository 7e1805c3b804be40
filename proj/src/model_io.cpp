#include "raw/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string_view>

#include <fmt/format.h>
#include <zlib.h>

#include "raw/error.hpp"

namespace raw {

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void array(std::span<const float> values) {
    u32(static_cast<std::uint32_t>(values.size()));
    for (float f : values) u32(std::bit_cast<std::uint32_t>(f));
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  void need(std::size_t n) const {
    if (size_ - pos_ < n) throw FormatError("model file is truncated");
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    std::string_view s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    const std::uint64_t hi = u32();
    return lo | (hi << 32);
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<float> array(std::size_t expected, const char* name) {
    const std::uint32_t n = u32();
    if (n != expected) {
      throw FormatError(fmt::format("model file: array {} holds {} values, header implies {}", name, n, expected));
    }
    need(static_cast<std::size_t>(n) * 4);
    std::vector<float> out(n);
    for (auto& f : out) f = std::bit_cast<float>(u32());
    return out;
  }
  std::size_t position() const { return pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const ModelArtifact& model) {
  model.watermark.validate();
  model.params.validate();
  const Shape s = model.shape();
  Writer w;
  w.bytes("RAWM", 4);
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(s.channels));
  w.u32(static_cast<std::uint32_t>(s.height));
  w.u32(static_cast<std::uint32_t>(s.width));
  w.f64(model.watermark.c1);
  w.f64(model.watermark.c2);
  const std::string_view tag(kArchTag);
  w.u32(static_cast<std::uint32_t>(tag.size()));
  w.bytes(tag.data(), tag.size());
  w.array(model.watermark.u.data());
  w.array(model.watermark.v.data());
  for (auto block : model.params.blocks()) w.array(block);
  auto& buf = w.buffer();
  const std::uint32_t crc = crc_of(buf.data(), buf.size());
  w.u32(crc);
  return std::move(buf);
}

ModelArtifact deserialize_model(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "RAWM", 4) != 0) throw FormatError("not a model file (bad magic)");
  Reader r(bytes.data(), bytes.size());
  r.bytes(4);
  const std::uint32_t version = r.u32();
  if (version != kModelVersion) {
    throw FormatError(fmt::format("unsupported model format version {} (expected {})", version, kModelVersion));
  }
  if (bytes.size() < 12) throw FormatError("model file is truncated");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[body + i]) << (8 * i);
  if (crc_of(bytes.data(), body) != stored) throw CorruptionError("model file CRC-32 mismatch");

  Reader h(bytes.data(), body);
  h.bytes(8);
  Shape shape;
  shape.channels = static_cast<int>(h.u32());
  shape.height = static_cast<int>(h.u32());
  shape.width = static_cast<int>(h.u32());
  if (shape.channels < 1 || shape.height < 1 || shape.width < 1 || shape.channels > 4 || shape.height > 1 << 14 ||
      shape.width > 1 << 14) {
    throw FormatError(fmt::format("model file: implausible image shape {}", shape.str()));
  }
  ModelArtifact m;
  m.watermark.c1 = h.f64();
  m.watermark.c2 = h.f64();
  const std::uint32_t tag_len = h.u32();
  if (tag_len > 256) throw FormatError("model file: architecture tag too long");
  const std::string_view tag = h.bytes(tag_len);
  if (tag != kArchTag) throw FormatError(fmt::format("model file: unknown architecture '{}'", tag));

  m.watermark.u = Tensor3(shape, h.array(shape.size(), "u"));
  m.watermark.v = Tensor3(shape, h.array(shape.size(), "v"));
  m.params = VerifierParams::zeros();
  static constexpr const char* kNames[] = {"conv1.w", "conv1.b", "conv2.w", "conv2.b",
                                           "conv3.w", "conv3.b", "dense.w", "dense.b"};
  auto blocks = m.params.blocks();
  for (int b = 0; b < VerifierParams::kBlocks; ++b) {
    const auto values = h.array(blocks[b].size(), kNames[b]);
    std::copy(values.begin(), values.end(), blocks[b].begin());
  }
  if (h.position() != body) throw FormatError("model file: trailing bytes after the payload");
  m.watermark.validate();
  m.params.validate();
  return m;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(fmt::format("read from '{}' failed", path.string()));
  return data;
}

void write_file(const std::filesystem::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

void save_model(const ModelArtifact& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  write_file(path, bytes.data(), bytes.size());
}

ModelArtifact load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

}  // namespace raw
