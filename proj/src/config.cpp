#include "raw/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "raw/error.hpp"
#include "raw/model_io.hpp"

namespace raw {

void CertifyConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError(fmt::format("certify.alpha = {} outside (0, 1)", alpha));
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError(fmt::format("certify.delta = {} outside (0, 1)", delta));
  if (!(gamma >= 0.0)) throw ConfigError(fmt::format("certify.gamma = {} must be >= 0", gamma));
  if (calibration_images < 2) throw ConfigError("certify.calibration_images must be >= 2");
  if (pgd_steps < 0) throw ConfigError("certify.pgd_steps must be >= 0");
}

void ConfigFile::validate() const {
  run.validate();
  smoothing.validate();
  corpus.validate();
  certify.validate();
}

namespace {

std::string trim(std::string_view s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string_view::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return std::string(s.substr(a, b - a + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(fmt::format("config: bad value '{}' for {}", text, key));
  }
  return v;
}

struct Field {
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

template <typename T>
Field number(const std::string& key, T& ref) {
  return {[&ref] { return fmt::format("{}", ref); },
          [&ref, key](const std::string& v) { ref = parse_number<T>(key, v); }};
}

Field text(std::string& ref) {
  return {[&ref] { return ref; }, [&ref](const std::string& v) { ref = v; }};
}

using Section = std::vector<std::pair<std::string, Field>>;

std::map<std::string, Section> schema(ConfigFile& c) {
  std::map<std::string, Section> s;
  RunConfig& r = c.run;
  s["run"] = {
      {"epochs", number("run.epochs", r.epochs)},
      {"batch_size", number("run.batch_size", r.batch_size)},
      {"verifier_lr", number("run.verifier_lr", r.verifier_lr)},
      {"momentum", number("run.momentum", r.momentum)},
      {"watermark_lr", number("run.watermark_lr", r.watermark_lr)},
      {"c1", number("run.c1", r.c1)},
      {"c2", number("run.c2", r.c2)},
      {"views", number("run.views", r.views)},
      {"seed", number("run.seed", r.seed)},
      {"channels", number("run.channels", r.channels)},
      {"height", number("run.height", r.height)},
      {"width", number("run.width", r.width)},
      {"corpus_dir", text(r.corpus_dir)},
      {"heldout_dir", text(r.heldout_dir)},
  };
  SmoothingConfig& m = c.smoothing;
  s["smoothing"] = {
      {"sigma", number("smoothing.sigma", m.sigma)},
      {"n_mc", number("smoothing.n_mc", m.n_mc)},
      {"clamp_eps", number("smoothing.clamp_eps", m.clamp_eps)},
      {"seed", number("smoothing.seed", m.seed)},
  };
  CorpusSpec& p = c.corpus;
  s["corpus"] = {
      {"n_images", number("corpus.n_images", p.n_images)},
      {"channels", number("corpus.channels", p.channels)},
      {"height", number("corpus.height", p.height)},
      {"width", number("corpus.width", p.width)},
      {"seed", number("corpus.seed", p.seed)},
      {"weights",
       {[&p] { return fmt::format("{} {} {} {}", p.weights[0], p.weights[1], p.weights[2], p.weights[3]); },
        [&p](const std::string& v) {
          std::istringstream in(v);
          std::string tok;
          std::size_t i = 0;
          while (in >> tok) {
            if (i >= 4) throw ConfigError("corpus.weights takes exactly 4 values");
            p.weights[i++] = parse_number<double>("corpus.weights", tok);
          }
          if (i != 4) throw ConfigError("corpus.weights takes exactly 4 values");
        }}},
  };
  CertifyConfig& f = c.certify;
  s["certify"] = {
      {"alpha", number("certify.alpha", f.alpha)},
      {"delta", number("certify.delta", f.delta)},
      {"gamma", number("certify.gamma", f.gamma)},
      {"calibration_images", number("certify.calibration_images", f.calibration_images)},
      {"pgd_steps", number("certify.pgd_steps", f.pgd_steps)},
      {"offset",
       {[&f] { return std::string(f.offset == OffsetConvention::kConservative ? "conservative" : "literal"); },
        [&f](const std::string& v) {
          if (v == "conservative") f.offset = OffsetConvention::kConservative;
          else if (v == "literal") f.offset = OffsetConvention::kLiteral;
          else throw ConfigError(fmt::format("certify.offset must be conservative or literal, got '{}'", v));
        }}},
  };
  return s;
}

constexpr const char* kSectionOrder[] = {"run", "augment", "smoothing", "corpus", "certify"};

}  // namespace

std::string ConfigFile::serialize() const {
  ConfigFile copy = *this;
  auto s = schema(copy);
  std::string out;
  for (const char* name : kSectionOrder) {
    if (!out.empty()) out += '\n';
    out += fmt::format("[{}]\n", name);
    if (std::string_view(name) == "augment") {
      for (const auto& a : run.augmentations) out += fmt::format("spec = {}\n", a.to_string());
      continue;
    }
    for (const auto& [key, field] : s[name]) out += fmt::format("{} = {}\n", key, field.get());
  }
  return out;
}

ConfigFile ConfigFile::parse(const std::string& text) {
  ConfigFile c;
  auto s = schema(c);
  std::set<std::string> seen;
  std::vector<AugmentationSpec> pool;
  bool augment_seen = false;
  std::string section;
  std::istringstream in(text);
  std::string raw_line;
  int line_no = 0;
  while (std::getline(in, raw_line)) {
    ++line_no;
    const std::string line = trim(raw_line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(fmt::format("config line {}: malformed section header", line_no));
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section == "augment") {
        augment_seen = true;
      } else if (!s.count(section)) {
        throw ConfigError(fmt::format("config line {}: unknown section [{}]", line_no, section));
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("config line {}: expected key = value", line_no));
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (section.empty()) throw ConfigError(fmt::format("config line {}: key '{}' outside a section", line_no, key));
    if (section == "augment") {
      if (key != "spec") throw ConfigError(fmt::format("config line {}: unknown key augment.{}", line_no, key));
      try {
        pool.push_back(AugmentationSpec::parse(value));
      } catch (const Error& e) {
        throw ConfigError(fmt::format("config line {}: {}", line_no, e.what()));
      }
      continue;
    }
    const std::string full = section + "." + key;
    auto& fields = s[section];
    auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.first == key; });
    if (it == fields.end()) throw ConfigError(fmt::format("config line {}: unknown key {}", line_no, full));
    if (!seen.insert(full).second) throw ConfigError(fmt::format("config line {}: duplicate key {}", line_no, full));
    it->second.set(value);
  }
  if (augment_seen) {
    if (pool.empty()) throw ConfigError("config: [augment] lists no spec lines");
    c.run.augmentations = std::move(pool);
  } else {
    c.defaulted.push_back("augment.spec");
  }
  for (const char* name : kSectionOrder) {
    if (std::string_view(name) == "augment") continue;
    for (const auto& [key, field] : s[name]) {
      const std::string full = std::string(name) + "." + key;
      if (!seen.count(full)) c.defaulted.push_back(full);
    }
  }
  c.validate();
  return c;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse(std::string(bytes.begin(), bytes.end()));
}

void ConfigFile::save(const std::filesystem::path& path) const {
  const std::string text = serialize();
  write_file(path, text.data(), text.size());
}

}  // namespace raw
