#include "raw/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "raw/error.hpp"
#include "raw/rng.hpp"

namespace raw {

double auroc(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) throw ConfigError("auroc needs non-empty positive and negative lists");
  const std::size_t np = positives.size();
  const std::size_t n = np + negatives.size();
  std::vector<std::pair<double, bool>> all;
  all.reserve(n);
  for (double s : positives) all.emplace_back(s, true);
  for (double s : negatives) all.emplace_back(s, false);
  for (const auto& [s, pos] : all)
    if (std::isnan(s)) throw NumericError("auroc: NaN score");
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  // Twice the rank sum keeps midranks integral, so U is exact and the
  // result is a single correctly rounded division.
  std::uint64_t rank_sum2 = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && all[j].first == all[i].first) ++j;
    const std::uint64_t midrank2 = i + 1 + j;  // 2 * mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (all[t].second) rank_sum2 += midrank2;
    i = j;
  }
  const std::uint64_t u2 = rank_sum2 - static_cast<std::uint64_t>(np) * (np + 1);
  return (static_cast<double>(u2) / 2.0) / (static_cast<double>(np) * static_cast<double>(negatives.size()));
}

std::string Manipulation::name() const {
  return augmentation ? std::string(kind_name(augmentation->kind)) : std::string("pgd_l2");
}

std::vector<Manipulation> default_manipulations(const PgdConfig& pgd) {
  std::vector<Manipulation> out;
  for (const auto& spec : default_augmentation_pool()) out.push_back(Manipulation::of(spec));
  out.push_back(Manipulation::pgd_l2(pgd));
  return out;
}

double EvalReport::mean_manipulation_auroc() const {
  double sum = 0.0;
  int count = 0;
  for (const auto& r : rows) {
    if (!r.in_scope || r.name == "identity" || r.name == "pgd_l2") continue;
    sum += r.auroc;
    ++count;
  }
  return count == 0 ? 0.0 : sum / count;
}

std::string EvalReport::to_csv(bool include_timing) const {
  std::string out = "section,name,value,n\n";
  for (const auto& r : rows) out += fmt::format("auroc,{},{:.6f},{}\n", r.name, r.auroc, r.n_pos + r.n_neg);
  for (const auto& r : out_of_scope) out += fmt::format("auroc,{},out_of_scope,0\n", r.name);
  out += fmt::format("summary,clean_auroc,{:.6f},{}\n", clean_auroc, rows.empty() ? 0 : rows[0].n_pos + rows[0].n_neg);
  out += fmt::format("summary,mean_manipulation_auroc,{:.6f},{}\n", mean_manipulation_auroc(), rows.size());
  out += fmt::format("summary,mean_psnr_db,{:.4f},{}\n", mean_psnr, psnr_n);
  out += fmt::format("summary,embed_seconds,{:.6f},{}\n", include_timing ? embed_seconds : 0.0, throughput_n);
  out += fmt::format("summary,images_per_second,{:.2f},{}\n", include_timing ? images_per_second : 0.0,
                     throughput_n);
  for (const auto& f : fpr) {
    out += fmt::format("fpr_clean,alpha={},{:.6f},{}\n", f.alpha, f.fpr_clean, f.n);
    out += fmt::format("fpr_attacked,alpha={},{:.6f},{}\n", f.alpha, f.fpr_attacked, f.n);
  }
  return out;
}

std::string EvalReport::to_text(bool include_timing) const {
  std::string out = fmt::format("{:<16} {:>8} {:>8}\n", "manipulation", "AUROC", "n");
  for (const auto& r : rows) out += fmt::format("{:<16} {:>8.4f} {:>8}\n", r.name, r.auroc, r.n_pos + r.n_neg);
  for (const auto& r : out_of_scope) out += fmt::format("{:<16} {:>8} {:>8}\n", r.name, "n/a", "out of scope");
  out += fmt::format("\nclean AUROC       {:.4f}\n", clean_auroc);
  out += fmt::format("mean AUROC        {:.4f}\n", mean_manipulation_auroc());
  out += fmt::format("mean PSNR (dB)    {:.2f}  (n = {})\n", mean_psnr, psnr_n);
  if (throughput_n > 0) {
    out += fmt::format("embed {} images  {:.4f} s  ({:.1f} images/s)\n", throughput_n,
                       include_timing ? embed_seconds : 0.0, include_timing ? images_per_second : 0.0);
  }
  if (!fpr.empty()) {
    out += fmt::format("\n{:>8} {:>10} {:>10} {:>12} {:>6}\n", "alpha", "tau", "FPR clean", "FPR attacked", "n");
    for (const auto& f : fpr)
      out += fmt::format("{:>8} {:>10.4f} {:>10.4f} {:>12.4f} {:>6}\n", f.alpha, f.tau, f.fpr_clean, f.fpr_attacked, f.n);
  }
  return out;
}

namespace {

std::vector<Image> manipulate(const Manipulation& m, const VerifierParams& params, std::span<const Image> images,
                              std::uint64_t seed) {
  if (m.augmentation) return apply_batch(*m.augmentation, images, seed);
  return pgd_l2_attack_batch(params, images, m.pgd);
}

ManipulationRow evaluate_cell(const Manipulation& m, const VerifierParams& params, std::span<const Image> clean,
                              std::span<const Image> marked, std::uint64_t seed) {
  const auto neg = manipulate(m, params, clean, seed);
  const auto pos = manipulate(m, params, marked, seed);
  const auto sn = score(params, std::span<const Image>(neg));
  const auto sp = score(params, std::span<const Image>(pos));
  return {m.name(), true, auroc(sp, sn), sp.size(), sn.size()};
}

}  // namespace

double time_embed_batch(std::span<const Image> images, const WatermarkPair& wm) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto out = serial::embed_batch(images, wm);
  const auto t1 = std::chrono::steady_clock::now();
  if (out.size() != images.size()) throw StateError("embed_batch size mismatch");
  return std::chrono::duration<double>(t1 - t0).count();
}

EvalReport run_robustness_suite(const VerifierParams& params, const WatermarkPair& wm,
                                std::span<const Image> test_set, std::span<const Manipulation> manipulations,
                                const EvalConfig& cfg) {
  if (test_set.empty()) throw ConfigError("robustness suite needs a non-empty test set");
  EvalReport report;
  const std::vector<Image> marked = embed_batch(test_set, wm);

  std::vector<Manipulation> cells;
  cells.push_back(Manipulation::of(AugmentationSpec::of(AugmentKind::kIdentity)));
  cells.insert(cells.end(), manipulations.begin(), manipulations.end());
  for (std::size_t j = 0; j < cells.size(); ++j) {
    const std::uint64_t cell_seed = derive_seed(cfg.seed, stream::kEval, j);
    report.rows.push_back(evaluate_cell(cells[j], params, test_set, marked, cell_seed));
  }
  report.clean_auroc = report.rows[0].auroc;
  for (const char* name : {"VAE Att1", "VAE Att2", "Diff Att"}) report.out_of_scope.push_back({name, false, 0.0, 0, 0});

  double psnr_sum = 0.0;
  for (std::size_t i = 0; i < test_set.size(); ++i) psnr_sum += psnr(test_set[i], marked[i]);
  report.psnr_n = test_set.size();
  report.mean_psnr = psnr_sum / static_cast<double>(test_set.size());

  if (cfg.throughput_images > 0) {
    std::vector<Image> batch;
    batch.reserve(cfg.throughput_images);
    for (std::size_t i = 0; i < cfg.throughput_images; ++i) batch.push_back(test_set[i % test_set.size()]);
    report.throughput_n = batch.size();
    report.embed_seconds = time_embed_batch(batch, wm);
    report.images_per_second = report.embed_seconds > 0.0 ? batch.size() / report.embed_seconds : 0.0;
  }
  return report;
}

FreshScores fresh_watermarked_scores(const VerifierParams& params, const WatermarkPair& wm,
                                     std::span<const Image> originals, const SmoothingConfig& smoothing,
                                     const PgdConfig& pgd, std::uint64_t seed) {
  const std::vector<Image> marked = embed_batch(originals, wm);
  const std::vector<Image> attacked = pgd_l2_attack_batch(params, marked, pgd);
  FreshScores out;
  out.clean = smooth_scores(params, marked, smoothing, derive_seed(seed, stream::kFresh, 0));
  out.attacked = smooth_scores(params, attacked, smoothing, derive_seed(seed, stream::kFresh, 1));
  return out;
}

std::vector<FprRow> fpr_table(const CalibrationResult& cal, const FreshScores& scores,
                              std::span<const double> alphas) {
  if (scores.clean.size() != scores.attacked.size()) throw DimensionError("fresh score lists differ in length");
  std::vector<FprRow> rows;
  for (double alpha : alphas) {
    const CalibrationResult c = recalibrate(cal, alpha);
    FprRow row{alpha, c.tau, 0.0, 0.0, scores.clean.size()};
    std::size_t miss_clean = 0, miss_attacked = 0;
    for (double s : scores.clean) miss_clean += !decide_score(c, s).watermarked;
    for (double s : scores.attacked) miss_attacked += !decide_score(c, s).watermarked;
    if (row.n > 0) {
      row.fpr_clean = static_cast<double>(miss_clean) / row.n;
      row.fpr_attacked = static_cast<double>(miss_attacked) / row.n;
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<FprRow> run_fpr_suite(const VerifierParams& params, const WatermarkPair& wm,
                                  const CalibrationResult& cal, std::span<const Image> fresh_originals,
                                  std::span<const double> alphas, const SmoothingConfig& smoothing,
                                  const PgdConfig& pgd, std::uint64_t seed) {
  if (smoothing.sigma != cal.sigma) throw ConfigError("smoothing sigma differs from the calibration's sigma");
  PgdConfig attack = pgd;
  attack.radius = cal.gamma;
  return fpr_table(cal, fresh_watermarked_scores(params, wm, fresh_originals, smoothing, attack, seed), alphas);
}

HeldoutMetrics heldout_metrics(const VerifierParams& params, const WatermarkPair& wm,
                               std::span<const Image> images, const AugmentationSpec& manipulation,
                               std::uint64_t seed) {
  HeldoutMetrics m;
  m.n = 2 * images.size();
  if (images.empty()) return m;
  const std::vector<Image> marked = embed_batch(images, wm);
  const auto clean_m = apply_batch(manipulation, images, derive_seed(seed, 0));
  const auto marked_m = apply_batch(manipulation, marked, derive_seed(seed, 1));
  std::vector<double> scores = score(params, std::span<const Image>(clean_m));
  const auto s1 = score(params, std::span<const Image>(marked_m));
  scores.insert(scores.end(), s1.begin(), s1.end());
  std::vector<int> labels(scores.size(), 0);
  std::fill(labels.begin() + images.size(), labels.end(), 1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) correct += (scores[i] >= 0.5) == (labels[i] == 1);
  m.accuracy = static_cast<double>(correct) / scores.size();
  m.loss = bce_loss(scores, labels).loss;
  return m;
}

bool AblationResult::joint_not_worse() const { return joint.clean.accuracy >= fixed.clean.accuracy; }

bool AblationResult::no_spatial_underperforms() const {
  if (no_spatial.noise.accuracy != joint.noise.accuracy) return no_spatial.noise.accuracy < joint.noise.accuracy;
  return no_spatial.noise.loss > joint.noise.loss;
}

std::string AblationResult::to_csv(bool include_timing) const {
  std::string out = "arm,epoch,L0,LAug,Lraw,train_acc,heldout_acc,seconds\n";
  for (const AblationArm* arm : {&joint, &fixed, &no_spatial}) {
    for (const auto& e : arm->result.report.epochs) {
      out += fmt::format("{},{},{:.9g},{:.9g},{:.9g},{:.6f},{:.6f},{:.3f}\n", arm->name, e.epoch, e.l0, e.laug, e.lraw,
                         e.train_accuracy, e.heldout_accuracy, include_timing ? e.seconds : 0.0);
    }
  }
  out += "arm,clean_acc,clean_loss,noise_acc,noise_loss,signsgd_steps\n";
  for (const AblationArm* arm : {&joint, &fixed, &no_spatial}) {
    out += fmt::format("{},{:.6f},{:.9g},{:.6f},{:.9g},{}\n", arm->name, arm->clean.accuracy, arm->clean.loss,
                       arm->noise.accuracy, arm->noise.loss, arm->signsgd_steps);
  }
  return out;
}

namespace {

AblationArm run_arm(std::string name, const RunConfig& config, std::span<const Image> corpus,
                    std::span<const Image> heldout, bool freeze) {
  AblationArm arm;
  arm.name = std::move(name);
  TrainOptions options;
  options.heldout = heldout;
  options.freeze_watermark = freeze;
  options.step_hook = [&arm](const StepEvent& e) {
    if (e.kind == StepEvent::Kind::kWatermark) ++arm.signsgd_steps;
  };
  arm.result = train_joint(config, corpus, options);
  const std::uint64_t eval_seed = derive_seed(config.seed, stream::kEval);
  arm.clean = heldout_metrics(arm.result.params, arm.result.watermark, heldout,
                              AugmentationSpec::of(AugmentKind::kIdentity), eval_seed);
  arm.noise = heldout_metrics(arm.result.params, arm.result.watermark, heldout,
                              AugmentationSpec::of(AugmentKind::kGaussianNoise), eval_seed);
  return arm;
}

}  // namespace

AblationResult run_ablations(const RunConfig& config, std::span<const Image> corpus,
                             std::span<const Image> heldout) {
  config.validate();
  if (heldout.empty()) throw ConfigError("ablations need a held-out set");
  AblationResult r;
  r.joint = run_arm("joint", config, corpus, heldout, false);
  r.fixed = run_arm("fixed", config, corpus, heldout, true);
  RunConfig no_spatial = config;
  no_spatial.c2 = 0.0;
  r.no_spatial = run_arm("no_spatial", no_spatial, corpus, heldout, false);
  return r;
}

}  // namespace raw
