#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "raw/image.hpp"
#include "raw/rng.hpp"

namespace testing {

inline raw::Image random_image(raw::Shape s, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
  raw::Rng rng(seed);
  std::vector<float> v(s.size());
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return raw::Image(s, std::move(v));
}

inline raw::Tensor3 random_tensor(raw::Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  raw::Rng rng(seed);
  raw::Tensor3 t(s);
  for (auto& x : t.data()) x = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("rawtest_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
