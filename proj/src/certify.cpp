#include "raw/certify.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "raw/error.hpp"
#include "raw/rng.hpp"

namespace raw {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw NumericError(fmt::format("normal_quantile: p = {} outside (0, 1)", p));
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r +
                45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r +
             133.14166789178437745) * r + 3.387132872796366608) /
           (((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r +
                21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r +
             42.313330701600911252) * r + 1.0);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r +
               1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r +
            4.6303378461565452959) * r + 1.42343711074968357734) /
          (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r +
               0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r +
            2.05319162663775882187) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r +
               0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r +
            5.4637849111641143699) * r + 6.6579046435011037772) /
          (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r +
               7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r +
            0.59983220655588793769) * r + 1.0);
  }
  return q < 0.0 ? -val : val;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

void SmoothingConfig::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError(fmt::format("smoothing sigma must be > 0, got {}", sigma));
  if (n_mc < 1) throw ConfigError(fmt::format("n_mc must be >= 1, got {}", n_mc));
  if (!(clamp_eps > 0.0 && clamp_eps < 0.5)) throw ConfigError("clamp eps must be in (0, 0.5)");
}

namespace {

// Monte-Carlo samples per noise block. Each block has its own stream, so
// the estimate is identical however blocks are spread over threads.
constexpr int kBlock = 16;

double block_sum(const VerifierParams& params, const Tensor3& x, const SmoothingConfig& cfg, std::uint64_t seed,
                 int block) {
  const int first = block * kBlock;
  const int count = std::min(kBlock, cfg.n_mc - first);
  Tensor3 noisy(x.shape());
  auto dst = noisy.data();
  auto src = x.data();
  double sum = 0.0;
  for (int j = 0; j < count; ++j) {
    fill_normal(dst, derive_seed(seed, static_cast<std::uint64_t>(first + j)), cfg.sigma);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    sum += score(params, noisy);
  }
  return sum;
}

SmoothedEstimate finish(double total, const SmoothingConfig& cfg) {
  SmoothedEstimate e;
  e.mean = total / cfg.n_mc;
  e.score = normal_quantile(std::clamp(e.mean, cfg.clamp_eps, 1.0 - cfg.clamp_eps));
  return e;
}

int block_count(const SmoothingConfig& cfg) { return (cfg.n_mc + kBlock - 1) / kBlock; }

}  // namespace

namespace serial {

SmoothedEstimate smooth_estimate(const VerifierParams& params, const Tensor3& x, const SmoothingConfig& cfg,
                                 std::uint64_t seed) {
  cfg.validate();
  const int blocks = block_count(cfg);
  double total = 0.0;
  for (int b = 0; b < blocks; ++b) total += block_sum(params, x, cfg, seed, b);
  return finish(total, cfg);
}

}  // namespace serial

SmoothedEstimate smooth_estimate(const VerifierParams& params, const Tensor3& x, const SmoothingConfig& cfg,
                                 std::uint64_t seed) {
  cfg.validate();
  const int blocks = block_count(cfg);
  std::vector<double> sums(blocks, 0.0);
#pragma omp parallel for schedule(dynamic, 1)
  for (int b = 0; b < blocks; ++b) sums[b] = block_sum(params, x, cfg, seed, b);
  double total = 0.0;
  for (double s : sums) total += s;
  return finish(total, cfg);
}

double smooth_score(const VerifierParams& params, const Tensor3& x, const SmoothingConfig& cfg,
                    std::uint64_t seed) {
  return smooth_estimate(params, x, cfg, seed).score;
}

std::vector<double> smooth_scores(const VerifierParams& params, std::span<const Image> images,
                                  const SmoothingConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto n = static_cast<std::ptrdiff_t>(images.size());
  std::vector<double> out(images.size());
  // Parallel over images; each image runs its blocks serially. Same block
  // sums and summation order as smooth_estimate.
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[i] = serial::smooth_estimate(params, images[i].tensor(), cfg,
                                     derive_seed(seed, static_cast<std::uint64_t>(i)))
                 .score;
  }
  return out;
}

double dkw_correction(std::size_t n, double delta) {
  return std::sqrt(std::log(2.0 / delta) / (2.0 * static_cast<double>(n)));
}

double min_feasible_alpha(std::size_t n, double delta) {
  return dkw_correction(n, delta) + 1.0 / static_cast<double>(n);
}

namespace {

std::size_t order_index(std::size_t n, double alpha, double correction) {
  const double raw_k = (alpha - correction) * static_cast<double>(n);
  // Guards against (alpha - c) * n landing a hair below an integer.
  return raw_k <= 0.0 ? 0 : static_cast<std::size_t>(std::floor(raw_k + 1e-9));
}

}  // namespace

void check_calibration_request(std::size_t n, double alpha, double delta, double gamma) {
  if (n < 2) throw ConfigError(fmt::format("calibration needs at least 2 images, got {}", n));
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError(fmt::format("alpha = {} outside (0, 1)", alpha));
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError(fmt::format("delta = {} outside (0, 1)", delta));
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError(fmt::format("gamma = {} must be >= 0", gamma));
  const double c = dkw_correction(n, delta);
  if (alpha <= c || order_index(n, alpha, c) < 1) throw InfeasibleAlphaError(alpha, c, c + 1.0 / static_cast<double>(n), n);
}

CalibrationResult calibrate_from_scores(std::vector<double> scores, double alpha, double delta, double gamma,
                                        const SmoothingConfig& cfg, OffsetConvention convention) {
  cfg.validate();
  check_calibration_request(scores.size(), alpha, delta, gamma);
  for (double s : scores)
    if (!std::isfinite(s)) throw NumericError("calibration score is not finite");
  std::sort(scores.begin(), scores.end());
  CalibrationResult r;
  r.alpha = alpha;
  r.delta = delta;
  r.gamma = gamma;
  r.sigma = cfg.sigma;
  r.n_mc = cfg.n_mc;
  r.n = scores.size();
  r.correction = dkw_correction(r.n, delta);
  r.k = order_index(r.n, alpha, r.correction);
  r.convention = convention;
  r.tau_quantile = scores[r.k - 1];
  const double offset = gamma / cfg.sigma;
  r.tau = convention == OffsetConvention::kConservative ? r.tau_quantile - offset : r.tau_quantile + offset;
  r.sorted_scores = std::move(scores);
  return r;
}

CalibrationResult calibrate(const VerifierParams& params, const WatermarkPair& wm,
                            std::span<const Image> calib_set, double alpha, double delta, double gamma,
                            const SmoothingConfig& cfg, OffsetConvention convention) {
  cfg.validate();
  // Fail before the expensive part.
  check_calibration_request(calib_set.size(), alpha, delta, gamma);
  const std::vector<Image> marked = embed_batch(calib_set, wm);
  std::vector<double> scores = smooth_scores(params, marked, cfg, derive_seed(cfg.seed, stream::kCalibration));
  return calibrate_from_scores(std::move(scores), alpha, delta, gamma, cfg, convention);
}

CalibrationResult recalibrate(const CalibrationResult& cal, double alpha) {
  SmoothingConfig cfg;
  cfg.sigma = cal.sigma;
  cfg.n_mc = cal.n_mc;
  return calibrate_from_scores(cal.sorted_scores, alpha, cal.delta, cal.gamma, cfg, cal.convention);
}

Decision decide_score(const CalibrationResult& cal, double smoothed_score) {
  return {smoothed_score >= cal.tau, smoothed_score, cal.tau};
}

Decision decide(const VerifierParams& params, const CalibrationResult& cal, const Tensor3& x,
                const SmoothingConfig& cfg, std::uint64_t seed) {
  if (cfg.sigma != cal.sigma) {
    throw ConfigError(fmt::format("smoothing sigma {} differs from the calibration's sigma {}", cfg.sigma, cal.sigma));
  }
  return decide_score(cal, smooth_score(params, x, cfg, seed));
}

namespace {

std::string convention_name(OffsetConvention c) {
  return c == OffsetConvention::kConservative ? "conservative" : "literal";
}

double to_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw FormatError(fmt::format("calibration file: bad number '{}' for {}", text, key));
  }
  return v;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::string CalibrationResult::serialize() const {
  std::string out = "# rawmark calibration v1\n";
  out += fmt::format("tau = {}\n", tau);
  out += fmt::format("tau_quantile = {}\n", tau_quantile);
  out += fmt::format("alpha = {}\n", alpha);
  out += fmt::format("delta = {}\n", delta);
  out += fmt::format("gamma = {}\n", gamma);
  out += fmt::format("sigma = {}\n", sigma);
  out += fmt::format("n_mc = {}\n", n_mc);
  out += fmt::format("n = {}\n", n);
  out += fmt::format("k = {}\n", k);
  out += fmt::format("correction = {}\n", correction);
  out += fmt::format("convention = {}\n", convention_name(convention));
  out += fmt::format("scores = {}\n", sorted_scores.size());
  for (double s : sorted_scores) out += fmt::format("{}\n", s);
  return out;
}

CalibrationResult CalibrationResult::parse(const std::string& text) {
  CalibrationResult r;
  std::istringstream in(text);
  std::string line;
  std::size_t expected_scores = 0;
  bool in_scores = false;
  int seen = 0;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (in_scores) {
      r.sorted_scores.push_back(to_double("score", line));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(fmt::format("calibration file: cannot parse '{}'", line));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    ++seen;
    if (key == "tau") r.tau = to_double(key, value);
    else if (key == "tau_quantile") r.tau_quantile = to_double(key, value);
    else if (key == "alpha") r.alpha = to_double(key, value);
    else if (key == "delta") r.delta = to_double(key, value);
    else if (key == "gamma") r.gamma = to_double(key, value);
    else if (key == "sigma") r.sigma = to_double(key, value);
    else if (key == "n_mc") r.n_mc = static_cast<int>(to_double(key, value));
    else if (key == "n") r.n = static_cast<std::size_t>(to_double(key, value));
    else if (key == "k") r.k = static_cast<std::size_t>(to_double(key, value));
    else if (key == "correction") r.correction = to_double(key, value);
    else if (key == "convention") {
      if (value == "conservative") r.convention = OffsetConvention::kConservative;
      else if (value == "literal") r.convention = OffsetConvention::kLiteral;
      else throw FormatError(fmt::format("calibration file: unknown convention '{}'", value));
    } else if (key == "scores") {
      expected_scores = static_cast<std::size_t>(to_double(key, value));
      in_scores = true;
    } else {
      throw FormatError(fmt::format("calibration file: unknown key '{}'", key));
    }
  }
  if (seen != 12) throw FormatError("calibration file: missing keys");
  if (r.sorted_scores.size() != expected_scores || r.sorted_scores.size() != r.n) {
    throw FormatError(fmt::format("calibration file: expected {} scores, found {}", r.n, r.sorted_scores.size()));
  }
  if (!std::is_sorted(r.sorted_scores.begin(), r.sorted_scores.end())) {
    throw FormatError("calibration file: scores are not sorted");
  }
  if (r.k < 1 || r.k > r.n || !std::isfinite(r.tau)) throw FormatError("calibration file: inconsistent threshold");
  return r;
}

void CalibrationResult::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out << serialize();
  if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

CalibrationResult CalibrationResult::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

Image pgd_l2_attack(const VerifierParams& params, const Image& x, const PgdConfig& cfg) {
  if (!(cfg.radius >= 0.0) || cfg.steps < 0) throw ConfigError("pgd: radius must be >= 0 and steps >= 0");
  if (cfg.radius == 0.0 || cfg.steps == 0) return x;
  const double step = cfg.step_size > 0.0 ? cfg.step_size : 2.5 * cfg.radius / cfg.steps;
  const auto base = x.data();
  std::vector<double> delta(base.size(), 0.0);
  Tensor3 current = x.tensor();

  auto project = [&](std::vector<double>& d) {
    double norm = 0.0;
    for (double v : d) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > cfg.radius) {
      const double s = cfg.radius / norm;
      for (double& v : d) v *= s;
    }
  };
  auto materialize = [&]() {
    auto dst = current.data();
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i] = static_cast<float>(std::clamp(base[i] + delta[i], 0.0, 1.0));
  };

  for (int t = 0; t < cfg.steps; ++t) {
    const Tensor3 batch[1] = {current};
    ForwardResult fwd = forward(params, std::span<const Tensor3>(batch));
    const double slope = fwd.trace.samples[0].slope;
    if (!(slope > 0.0)) break;
    // Unit gradient on the logit rather than the saturating score.
    const double upstream[1] = {1.0 / slope};
    const BackwardResult back = backward(params, fwd.trace, upstream, {false, true});
    const auto g = back.grad_input[0].data();
    double gnorm = 0.0;
    for (float v : g) gnorm += static_cast<double>(v) * v;
    gnorm = std::sqrt(gnorm);
    if (!(gnorm > 0.0)) break;
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= step * g[i] / gnorm;
    project(delta);
    materialize();
  }

  // Clipping onto the box that contains x cannot increase the distance, but
  // float rounding can; shrink until the bound holds exactly.
  materialize();
  for (int attempt = 0; attempt < 8 && l2_distance(current.data(), base) > cfg.radius; ++attempt) {
    for (double& v : delta) v *= 0.999999;
    project(delta);
    materialize();
  }
  if (l2_distance(current.data(), base) > cfg.radius) return x;
  return clip01(std::move(current));
}

std::vector<Image> pgd_l2_attack_batch(const VerifierParams& params, std::span<const Image> xs,
                                       const PgdConfig& cfg) {
  std::vector<Image> out(xs.size());
  const auto n = static_cast<std::ptrdiff_t>(xs.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = pgd_l2_attack(params, xs[i], cfg);
  return out;
}

}  // namespace raw
