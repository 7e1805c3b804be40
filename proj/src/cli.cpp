#include "raw/cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <json.hpp>
#include <fmt/format.h>
#include <optional>
#include <ostream>

#include "raw/certify.hpp"
#include "raw/config.hpp"
#include "raw/corpus.hpp"
#include "raw/error.hpp"
#include "raw/eval.hpp"
#include "raw/image_io.hpp"
#include "raw/model_io.hpp"
#include "raw/rng.hpp"
#include "raw/training.hpp"

namespace raw {

namespace {

using Json = nlohmann::ordered_json;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool json = false;
  std::string config;
  bool no_timing = false;
};

struct Context {
  const Globals& g;
  std::ostream& out;
  std::ostream& err;
  ConfigFile cfg;

  void emit(const Json& j, const std::string& text) {
    if (g.json) out << j.dump(2) << '\n';
    else out << text;
  }
};

ConfigFile load_config(const Globals& g, std::ostream& err) {
  ConfigFile cfg;
  if (!g.config.empty()) {
    cfg = ConfigFile::load(g.config);
    if (!cfg.defaulted.empty()) {
      std::string keys;
      for (const auto& k : cfg.defaulted) keys += (keys.empty() ? "" : ", ") + k;
      err << fmt::format("note: {} config keys defaulted: {}\n", cfg.defaulted.size(), keys);
    }
  }
  if (g.seed) {
    cfg.run.seed = *g.seed;
    cfg.corpus.seed = *g.seed;
    cfg.smoothing.seed = *g.seed;
  }
  return cfg;
}

template <typename T>
void set_if(T& target, const std::optional<T>& value) {
  if (value) target = *value;
}

CorpusSpec synthetic_spec(const ConfigFile& cfg, Shape shape, int n, std::uint64_t tag) {
  CorpusSpec spec = cfg.corpus;
  spec.channels = shape.channels;
  spec.height = shape.height;
  spec.width = shape.width;
  spec.n_images = n;
  spec.seed = tag == 0 ? cfg.corpus.seed : derive_seed(cfg.corpus.seed, tag);
  return spec;
}

std::vector<Image> images_from(const std::string& dir, const ConfigFile& cfg, Shape shape, int n,
                               std::uint64_t tag) {
  if (!dir.empty()) {
    auto images = ingest_dir(dir, shape);
    if (n > 0 && static_cast<std::size_t>(n) < images.size()) images.resize(n);
    return images;
  }
  return generate(synthetic_spec(cfg, shape, n, tag));
}

Json scores_json(const std::vector<FprRow>& rows) {
  Json arr = Json::array();
  for (const auto& r : rows) {
    arr.push_back({{"alpha", r.alpha}, {"tau", r.tau}, {"fpr_clean", r.fpr_clean}, {"fpr_attacked", r.fpr_attacked},
                   {"n", r.n}});
  }
  return arr;
}

// gen-corpus ---------------------------------------------------------------

struct GenCorpusArgs {
  std::string out_dir;
  std::optional<int> n, height, width;
  std::string format = "png";
};

void run_gen_corpus(Context& ctx, const GenCorpusArgs& a) {
  set_if(ctx.cfg.corpus.n_images, a.n);
  set_if(ctx.cfg.corpus.height, a.height);
  set_if(ctx.cfg.corpus.width, a.width);
  ctx.cfg.corpus.validate();
  const auto images = generate(ctx.cfg.corpus);
  write_corpus(images, a.out_dir, a.format);
  ctx.emit({{"command", "gen-corpus"}, {"images", images.size()}, {"dir", a.out_dir}, {"seed", ctx.cfg.corpus.seed}},
           fmt::format("wrote {} images to {}\n", images.size(), a.out_dir));
}

// train --------------------------------------------------------------------

struct TrainArgs {
  std::string out;
  std::optional<std::string> corpus_dir, heldout_dir, report;
  std::optional<int> epochs, batch_size, heldout_n;
  std::optional<double> c1, c2, verifier_lr, watermark_lr;
  bool freeze_watermark = false;
};

void run_train(Context& ctx, const TrainArgs& a) {
  RunConfig& run = ctx.cfg.run;
  set_if(run.corpus_dir, a.corpus_dir);
  set_if(run.heldout_dir, a.heldout_dir);
  set_if(run.epochs, a.epochs);
  set_if(run.batch_size, a.batch_size);
  set_if(run.c1, a.c1);
  set_if(run.c2, a.c2);
  set_if(run.verifier_lr, a.verifier_lr);
  set_if(run.watermark_lr, a.watermark_lr);
  run.validate();
  const Shape shape = run.shape();
  const auto corpus = images_from(run.corpus_dir, ctx.cfg, shape, run.corpus_dir.empty() ? ctx.cfg.corpus.n_images : 0, 0);
  const auto heldout = images_from(run.heldout_dir, ctx.cfg, shape, a.heldout_n.value_or(100), stream::kHeldout);

  TrainOptions options;
  options.heldout = heldout;
  options.freeze_watermark = a.freeze_watermark;
  const TrainResult r = train_joint(run, corpus, options);
  save_model({r.watermark, r.params}, a.out);
  const std::string csv = r.report.to_csv(!ctx.g.no_timing);
  if (a.report) write_file(*a.report, csv.data(), csv.size());

  Json j{{"command", "train"}, {"model", a.out}, {"corpus_images", corpus.size()}, {"heldout_images", heldout.size()}};
  Json epochs = Json::array();
  for (const auto& e : r.report.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"L0", e.l0}, {"LAug", e.laug}, {"Lraw", e.lraw},
                      {"train_acc", e.train_accuracy}, {"heldout_acc", e.heldout_accuracy},
                      {"seconds", ctx.g.no_timing ? 0.0 : e.seconds}});
  }
  j["epochs"] = epochs;
  std::string text = fmt::format("trained on {} images for {} epochs -> {}\n", corpus.size(), run.epochs, a.out);
  if (!r.report.epochs.empty()) {
    const auto& e = r.report.epochs.back();
    text += fmt::format("final Lraw {:.6f}  train acc {:.4f}  held-out acc {:.4f}\n", e.lraw, e.train_accuracy,
                        e.heldout_accuracy);
  }
  ctx.emit(j, text);
}

// embed --------------------------------------------------------------------

struct EmbedArgs {
  std::string model, in, out;
  bool resize = false;
};

Image load_for_model(const std::string& path, Shape shape, bool resize) {
  Image img = load_image(path, shape.channels);
  if (img.tensor().shape() == shape) return img;
  if (!resize) {
    throw DimensionError(fmt::format("'{}' is {} but the model expects {} (use --resize)", path,
                                     img.tensor().shape().str(), shape.str()));
  }
  return resize_bilinear(img, shape.height, shape.width);
}

void run_embed(Context& ctx, const EmbedArgs& a) {
  const ModelArtifact m = load_model(a.model);
  const Image x = load_for_model(a.in, m.shape(), a.resize);
  const Image y = embed(x, m.watermark);
  save_image(y, a.out);
  const double p = psnr(x, y);
  ctx.emit({{"command", "embed"}, {"input", a.in}, {"output", a.out}, {"psnr_db", p}},
           fmt::format("embedded {} -> {} (PSNR {:.2f} dB)\n", a.in, a.out, p));
}

// calibrate ----------------------------------------------------------------

struct CalibrateArgs {
  std::string model, out;
  std::optional<std::string> corpus_dir;
  std::optional<int> n, n_mc;
  std::optional<double> alpha, delta, gamma, sigma;
  bool literal = false;
};

void run_calibrate(Context& ctx, const CalibrateArgs& a) {
  CertifyConfig& c = ctx.cfg.certify;
  set_if(c.alpha, a.alpha);
  set_if(c.delta, a.delta);
  set_if(c.gamma, a.gamma);
  set_if(c.calibration_images, a.n);
  set_if(ctx.cfg.smoothing.n_mc, a.n_mc);
  set_if(ctx.cfg.smoothing.sigma, a.sigma);
  if (a.literal) c.offset = OffsetConvention::kLiteral;
  ctx.cfg.smoothing.validate();
  if (!a.corpus_dir) check_calibration_request(c.calibration_images, c.alpha, c.delta, c.gamma);

  const ModelArtifact m = load_model(a.model);
  const auto images =
      images_from(a.corpus_dir.value_or(""), ctx.cfg, m.shape(), c.calibration_images, stream::kCalibration);
  const CalibrationResult cal =
      calibrate(m.params, m.watermark, images, c.alpha, c.delta, c.gamma, ctx.cfg.smoothing, c.offset);
  cal.save(a.out);
  ctx.emit({{"command", "calibrate"}, {"output", a.out}, {"n", cal.n}, {"alpha", cal.alpha}, {"delta", cal.delta},
            {"gamma", cal.gamma}, {"sigma", cal.sigma}, {"correction", cal.correction}, {"k", cal.k},
            {"tau_quantile", cal.tau_quantile}, {"tau", cal.tau}},
           fmt::format("calibrated on {} images: k = {}, tau' = {:.6f}, tau = {:.6f} -> {}\n", cal.n, cal.k,
                       cal.tau_quantile, cal.tau, a.out));
}

// detect -------------------------------------------------------------------

struct DetectArgs {
  std::string model, calibration, in;
  std::optional<int> n_mc;
  bool resize = false;
};

void run_detect(Context& ctx, const DetectArgs& a) {
  const ModelArtifact m = load_model(a.model);
  const CalibrationResult cal = CalibrationResult::load(a.calibration);
  SmoothingConfig s = ctx.cfg.smoothing;
  s.sigma = cal.sigma;
  s.n_mc = cal.n_mc;
  set_if(s.n_mc, a.n_mc);
  const Image x = load_for_model(a.in, m.shape(), a.resize);
  const Decision d = decide(m.params, cal, x.tensor(), s, derive_seed(s.seed, stream::kSmoothing));
  const char* verdict = d.watermarked ? "watermarked" : "unwatermarked";
  ctx.emit({{"command", "detect"}, {"input", a.in}, {"score", d.score}, {"tau", d.tau}, {"verdict", verdict}},
           fmt::format("score {:.6f}\ntau   {:.6f}\nverdict {}\n", d.score, d.tau, verdict));
}

// evaluate -----------------------------------------------------------------

struct EvaluateArgs {
  std::string model;
  std::optional<std::string> test_dir, calibration, report;
  int n = 1000;
  int fresh_n = 1000;
  int throughput_n = 500;
  std::vector<double> alphas;
  bool no_pgd = false;
  std::optional<double> min_clean_auroc, min_cell_auroc;
};

void run_evaluate(Context& ctx, const EvaluateArgs& a) {
  const ModelArtifact m = load_model(a.model);
  const auto test = images_from(a.test_dir.value_or(""), ctx.cfg, m.shape(), a.n, stream::kTest);
  PgdConfig pgd;
  pgd.radius = ctx.cfg.certify.gamma;
  pgd.steps = ctx.cfg.certify.pgd_steps;
  std::vector<Manipulation> manipulations;
  for (const auto& spec : ctx.cfg.run.augmentations) manipulations.push_back(Manipulation::of(spec));
  if (!a.no_pgd) manipulations.push_back(Manipulation::pgd_l2(pgd));
  EvalConfig ec;
  ec.seed = derive_seed(ctx.cfg.run.seed, stream::kEval);
  ec.throughput_images = static_cast<std::size_t>(a.throughput_n);
  EvalReport report = run_robustness_suite(m.params, m.watermark, test, manipulations, ec);

  if (a.calibration) {
    const CalibrationResult cal = CalibrationResult::load(*a.calibration);
    SmoothingConfig s = ctx.cfg.smoothing;
    s.sigma = cal.sigma;
    s.n_mc = cal.n_mc;
    const auto fresh = images_from("", ctx.cfg, m.shape(), a.fresh_n, stream::kFresh);
    std::vector<double> alphas = a.alphas.empty() ? std::vector<double>{cal.alpha} : a.alphas;
    report.fpr = run_fpr_suite(m.params, m.watermark, cal, fresh, alphas, s, pgd, derive_seed(s.seed, stream::kFresh));
  }

  const bool timing = !ctx.g.no_timing;
  const std::string csv = report.to_csv(timing);
  if (a.report) write_file(*a.report, csv.data(), csv.size());

  Json rows = Json::array();
  for (const auto& r : report.rows) rows.push_back({{"name", r.name}, {"auroc", r.auroc}, {"n", r.n_pos + r.n_neg}});
  for (const auto& r : report.out_of_scope) rows.push_back({{"name", r.name}, {"auroc", nullptr}, {"n", 0}});
  Json j{{"command", "evaluate"},
         {"clean_auroc", report.clean_auroc},
         {"mean_manipulation_auroc", report.mean_manipulation_auroc()},
         {"rows", rows},
         {"mean_psnr_db", report.mean_psnr},
         {"embed_seconds", timing ? report.embed_seconds : 0.0},
         {"throughput_images", report.throughput_n},
         {"fpr", scores_json(report.fpr)}};
  ctx.emit(j, report.to_text(timing));

  std::vector<std::string> missed;
  if (a.min_clean_auroc && report.clean_auroc < *a.min_clean_auroc)
    missed.push_back(fmt::format("clean AUROC {:.4f} < {}", report.clean_auroc, *a.min_clean_auroc));
  if (a.min_cell_auroc) {
    for (const auto& r : report.rows)
      if (r.auroc < *a.min_cell_auroc) missed.push_back(fmt::format("{} AUROC {:.4f} < {}", r.name, r.auroc, *a.min_cell_auroc));
  }
  if (!missed.empty()) {
    std::string msg = "acceptance thresholds missed:";
    for (const auto& s : missed) msg += "\n  " + s;
    throw StateError(msg);
  }
}

// ablate -------------------------------------------------------------------

struct AblateArgs {
  std::optional<std::string> corpus_dir, report;
  std::optional<int> epochs;
  int heldout_n = 200;
};

void run_ablate(Context& ctx, const AblateArgs& a) {
  RunConfig& run = ctx.cfg.run;
  set_if(run.corpus_dir, a.corpus_dir);
  set_if(run.epochs, a.epochs);
  run.validate();
  const auto corpus = images_from(run.corpus_dir, ctx.cfg, run.shape(), run.corpus_dir.empty() ? ctx.cfg.corpus.n_images : 0, 0);
  const auto heldout = images_from(run.heldout_dir, ctx.cfg, run.shape(), a.heldout_n, stream::kHeldout);
  const AblationResult r = run_ablations(run, corpus, heldout);
  const std::string csv = r.to_csv(!ctx.g.no_timing);
  if (a.report) write_file(*a.report, csv.data(), csv.size());

  Json arms = Json::array();
  std::string text = fmt::format("{:<12} {:>10} {:>10} {:>10} {:>10} {:>8}\n", "arm", "clean acc", "clean loss",
                                 "noise acc", "noise loss", "signsgd");
  for (const AblationArm* arm : {&r.joint, &r.fixed, &r.no_spatial}) {
    arms.push_back({{"name", arm->name}, {"clean_acc", arm->clean.accuracy}, {"clean_loss", arm->clean.loss},
                    {"noise_acc", arm->noise.accuracy}, {"noise_loss", arm->noise.loss},
                    {"signsgd_steps", arm->signsgd_steps}});
    text += fmt::format("{:<12} {:>10.4f} {:>10.4f} {:>10.4f} {:>10.4f} {:>8}\n", arm->name, arm->clean.accuracy,
                        arm->clean.loss, arm->noise.accuracy, arm->noise.loss, arm->signsgd_steps);
  }
  text += fmt::format("joint >= fixed: {}\nno_spatial underperforms under noise: {}\n",
                      r.joint_not_worse() ? "yes" : "no", r.no_spatial_underperforms() ? "yes" : "no");
  ctx.emit({{"command", "ablate"},
            {"arms", arms},
            {"joint_not_worse", r.joint_not_worse()},
            {"no_spatial_underperforms", r.no_spatial_underperforms()}},
           text);
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"rawmark: learned image watermarks with certified detection"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random stream");
  app.add_option("--threads", g.threads, "OpenMP thread count")->check(CLI::PositiveNumber);
  app.add_flag("--json", g.json, "Machine-readable output");
  app.add_option("--config", g.config, "Configuration file")->check(CLI::ExistingFile);
  app.add_flag("--no-timing", g.no_timing, "Write 0 for wall-clock fields in reports");

  GenCorpusArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Write a synthetic corpus");
  gen_cmd->add_option("--out", gen.out_dir, "Output directory")->required();
  gen_cmd->add_option("--n", gen.n, "Number of images");
  gen_cmd->add_option("--height", gen.height);
  gen_cmd->add_option("--width", gen.width);
  gen_cmd->add_option("--format", gen.format)->check(CLI::IsMember({"png", "ppm"}));

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Jointly train watermark and verifier");
  train_cmd->add_option("--out", train.out, "Model artifact (.rawm)")->required();
  train_cmd->add_option("--corpus", train.corpus_dir, "Training image directory (default: synthetic)");
  train_cmd->add_option("--heldout-dir", train.heldout_dir, "Held-out image directory (default: synthetic)");
  train_cmd->add_option("--heldout-n", train.heldout_n, "Synthetic held-out size (default 100)");
  train_cmd->add_option("--epochs", train.epochs);
  train_cmd->add_option("--batch-size", train.batch_size);
  train_cmd->add_option("--c1", train.c1);
  train_cmd->add_option("--c2", train.c2);
  train_cmd->add_option("--verifier-lr", train.verifier_lr);
  train_cmd->add_option("--watermark-lr", train.watermark_lr);
  train_cmd->add_flag("--freeze-watermark", train.freeze_watermark, "Fixed-watermark ablation");
  train_cmd->add_option("--report", train.report, "Per-epoch CSV report");

  EmbedArgs emb;
  auto* embed_cmd = app.add_subcommand("embed", "Embed the watermark into an image");
  embed_cmd->add_option("--model", emb.model)->required()->check(CLI::ExistingFile);
  embed_cmd->add_option("--in", emb.in)->required()->check(CLI::ExistingFile);
  embed_cmd->add_option("--out", emb.out)->required();
  embed_cmd->add_flag("--resize", emb.resize, "Resize the input to the model size");

  DetectArgs det;
  auto* detect_cmd = app.add_subcommand("detect", "Certified watermark detection");
  detect_cmd->add_option("--model", det.model)->required()->check(CLI::ExistingFile);
  detect_cmd->add_option("--calibration", det.calibration)->required()->check(CLI::ExistingFile);
  detect_cmd->add_option("--in", det.in)->required()->check(CLI::ExistingFile);
  detect_cmd->add_option("--n-mc", det.n_mc)->check(CLI::PositiveNumber);
  detect_cmd->add_flag("--resize", det.resize, "Resize the input to the model size");

  CalibrateArgs cal;
  auto* cal_cmd = app.add_subcommand("calibrate", "Compute the certified detection threshold");
  cal_cmd->add_option("--model", cal.model)->required()->check(CLI::ExistingFile);
  cal_cmd->add_option("--out", cal.out, "Calibration file")->required();
  cal_cmd->add_option("--corpus", cal.corpus_dir, "Calibration image directory (default: synthetic)");
  cal_cmd->add_option("--n", cal.n, "Number of calibration images");
  cal_cmd->add_option("--alpha", cal.alpha);
  cal_cmd->add_option("--delta", cal.delta);
  cal_cmd->add_option("--gamma", cal.gamma);
  cal_cmd->add_option("--sigma", cal.sigma);
  cal_cmd->add_option("--n-mc", cal.n_mc)->check(CLI::PositiveNumber);
  cal_cmd->add_flag("--literal-offset", cal.literal, "Add gamma/sigma to the quantile instead of subtracting");

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Robustness and certified-FPR report");
  eval_cmd->add_option("--model", ev.model)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--test", ev.test_dir, "Test image directory (default: synthetic)");
  eval_cmd->add_option("--n", ev.n, "Synthetic test-set size")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--calibration", ev.calibration, "Adds the certified FPR table")->check(CLI::ExistingFile);
  eval_cmd->add_option("--fresh-n", ev.fresh_n, "Fresh images for the FPR table")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--alphas", ev.alphas, "Target FPRs (default: the calibration's alpha)");
  eval_cmd->add_option("--throughput-n", ev.throughput_n, "Images in the timing run, 0 to skip")
      ->check(CLI::NonNegativeNumber);
  eval_cmd->add_flag("--no-pgd", ev.no_pgd, "Skip the pgd_l2 row");
  eval_cmd->add_option("--min-clean-auroc", ev.min_clean_auroc, "Exit 1 if the clean AUROC is lower");
  eval_cmd->add_option("--min-cell-auroc", ev.min_cell_auroc, "Exit 1 if any AUROC cell is lower");
  eval_cmd->add_option("--report", ev.report, "CSV report");

  AblateArgs abl;
  auto* ablate_cmd = app.add_subcommand("ablate", "Joint vs fixed watermark and c2 = 0 ablations");
  ablate_cmd->add_option("--corpus", abl.corpus_dir);
  ablate_cmd->add_option("--epochs", abl.epochs);
  ablate_cmd->add_option("--heldout-n", abl.heldout_n)->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--report", abl.report, "CSV report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "rawmark: " << e.what() << "\n";
    return 2;
  }

  try {
    if (g.threads) omp_set_num_threads(*g.threads);
    Context ctx{g, out, err, load_config(g, err)};
    if (*gen_cmd) run_gen_corpus(ctx, gen);
    else if (*train_cmd) run_train(ctx, train);
    else if (*embed_cmd) run_embed(ctx, emb);
    else if (*detect_cmd) run_detect(ctx, det);
    else if (*cal_cmd) run_calibrate(ctx, cal);
    else if (*eval_cmd) run_evaluate(ctx, ev);
    else if (*ablate_cmd) run_ablate(ctx, abl);
    return 0;
  } catch (const InfeasibleAlphaError& e) {
    err << "rawmark: usage error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    err << "rawmark: usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "rawmark: error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace raw
