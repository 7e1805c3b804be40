#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "raw/certify.hpp"
#include "raw/corpus.hpp"
#include "raw/training.hpp"

namespace raw {

struct CertifyConfig {
  double alpha = 0.05;
  double delta = 0.05;
  double gamma = 0.001;
  int calibration_images = 2000;
  int pgd_steps = 10;
  OffsetConvention offset = OffsetConvention::kConservative;

  void validate() const;
  bool operator==(const CertifyConfig&) const = default;
};

// Grammar, one item per line:
//
//   # comment                 ignored, as are blank lines
//   [section]                 run | augment | smoothing | corpus | certify
//   key = value               scalar; whitespace around '=' is ignored
//   spec = kind k=v ...       [augment] only, repeatable; the listed specs
//                             replace the default pool
//
// Unknown sections or keys and duplicate scalar keys are errors. Keys not
// present keep their defaults and are listed in `defaulted`.
struct ConfigFile {
  RunConfig run;
  SmoothingConfig smoothing;
  CorpusSpec corpus;
  CertifyConfig certify;
  std::vector<std::string> defaulted;

  void validate() const;
  std::string serialize() const;
  static ConfigFile parse(const std::string& text);
  static ConfigFile load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  bool operator==(const ConfigFile& o) const {
    return run == o.run && smoothing == o.smoothing && corpus == o.corpus && certify == o.certify;
  }
};

}  // namespace raw
