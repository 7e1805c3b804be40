#include "raw/training.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include <fmt/format.h>

#include "raw/error.hpp"
#include "raw/rng.hpp"

namespace raw {

void RunConfig::validate() const {
  if (epochs < 0) throw ConfigError(fmt::format("epochs must be >= 0, got {}", epochs));
  if (batch_size < 2 || batch_size % 2 != 0) {
    throw ConfigError(fmt::format("batch size must be even and >= 2, got {}", batch_size));
  }
  if (!(verifier_lr > 0.0)) throw ConfigError("verifier learning rate must be positive");
  if (!(watermark_lr > 0.0)) throw ConfigError("watermark learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(c1 > 0.0) || !(c2 >= 0.0)) throw ConfigError("visibilities need c1 > 0 and c2 >= 0");
  if (augmentations.empty()) throw ConfigError("augmentation pool is empty");
  for (const auto& a : augmentations) a.validate();
  if (views != 2) throw ConfigError(fmt::format("only two-view augmentation is supported (views = {})", views));
  if (channels != 3 || height < 8 || width < 8) {
    throw ConfigError(fmt::format("image size {}x{}x{} unsupported (need 3 channels, H, W >= 8)", channels,
                                  height, width));
  }
}

std::string TrainReport::to_csv(bool include_timing) const {
  std::string out = "epoch,L0,LAug,Lraw,train_acc,heldout_acc,seconds\n";
  for (const auto& e : epochs) {
    out += fmt::format("{},{:.9g},{:.9g},{:.9g},{:.6f},{:.6f},{:.3f}\n", e.epoch, e.l0, e.laug, e.lraw,
                       e.train_accuracy, e.heldout_accuracy, include_timing ? e.seconds : 0.0);
  }
  return out;
}

namespace {

struct TermResult {
  double loss;
  VerifierParams grad_params;
  std::vector<Tensor3> grad_input;  // gradients w.r.t. the term's inputs
  std::vector<double> scores;
};

TermResult run_term(const VerifierParams& params, std::span<const Image> images, std::span<const int> labels,
                    GradientRequest request) {
  ForwardResult fwd = forward(params, images);
  BceResult bce = bce_loss(fwd.scores, labels);
  BackwardResult back = backward(params, fwd.trace, bce.dloss_dscore, {request.params, request.watermark});
  return {bce.loss, std::move(back.grad_params), std::move(back.grad_input), std::move(fwd.scores)};
}

void add_into(VerifierParams& total, const VerifierParams& g) {
  auto dst = total.blocks();
  auto src = g.blocks();
  for (int b = 0; b < VerifierParams::kBlocks; ++b)
    for (std::size_t i = 0; i < dst[b].size(); ++i) dst[b][i] += src[b][i];
}

void add_into(Tensor3& total, const Tensor3& g) {
  auto dst = total.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

LossEvaluation compute_loss_raw(const VerifierParams& params, const WatermarkPair& wm,
                                std::span<const Image> batch, const ViewPair& views,
                                std::uint64_t view_seed, GradientRequest request) {
  if (batch.empty()) throw ConfigError("compute_loss_raw: empty batch");
  const std::size_t half = batch.size();
  std::vector<Image> combined(batch.begin(), batch.end());
  {
    std::vector<Image> marked = embed_batch(batch, wm);
    combined.insert(combined.end(), std::make_move_iterator(marked.begin()),
                    std::make_move_iterator(marked.end()));
  }
  std::vector<int> labels(2 * half, 0);
  std::fill(labels.begin() + static_cast<std::ptrdiff_t>(half), labels.end(), 1);

  LossEvaluation out;
  if (request.params) out.grad_params = VerifierParams::zeros();
  // Gradient of the loss w.r.t. each embedded image, summed over the terms.
  std::vector<Tensor3> upstream;
  if (request.watermark) upstream.assign(half, Tensor3(wm.shape()));

  TermResult base = run_term(params, combined, labels, request);
  out.loss.l0 = base.loss;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < combined.size(); ++i) correct += (base.scores[i] >= 0.5) == (labels[i] == 1);
  out.accuracy = static_cast<double>(correct) / combined.size();
  if (request.params) add_into(out.grad_params, base.grad_params);
  if (request.watermark)
    for (std::size_t i = 0; i < half; ++i) add_into(upstream[i], base.grad_input[half + i]);

  const std::array<const AugmentationSpec*, 2> specs{&views.first, &views.second};
  for (int k = 0; k < 2; ++k) {
    std::vector<AugmentTrace> traces;
    const std::vector<Image> augmented =
        apply_batch(*specs[k], combined, derive_seed(view_seed, static_cast<std::uint64_t>(k)), &traces);
    const bool through = request.watermark && specs[k]->kind != AugmentKind::kJpegApprox;
    TermResult term = run_term(params, augmented, labels, {request.params, through});
    out.loss.laug += term.loss;
    if (request.params) add_into(out.grad_params, term.grad_params);
    if (through) {
      for (std::size_t i = 0; i < half; ++i)
        add_into(upstream[i], apply_vjp(*specs[k], traces[half + i], term.grad_input[half + i]));
    }
  }

  if (request.watermark) out.grad_watermark = embed_gradient_sum(batch, wm, upstream);
  return out;
}

void sgd_step(VerifierParams& params, const VerifierParams& grad, double lr, double momentum,
              VerifierParams& velocity) {
  auto p = params.blocks();
  auto g = grad.blocks();
  auto v = velocity.blocks();
  for (int b = 0; b < VerifierParams::kBlocks; ++b) {
    if (g[b].size() != p[b].size() || v[b].size() != p[b].size()) {
      throw DimensionError(fmt::format("sgd_step: block {} shape mismatch", b));
    }
    for (std::size_t i = 0; i < p[b].size(); ++i) {
      v[b][i] = static_cast<float>(momentum * v[b][i] + g[b][i]);
      p[b][i] = static_cast<float>(p[b][i] - lr * v[b][i]);
    }
  }
}

void signsgd_step(WatermarkPair& wm, const WatermarkGradient& grad, double lr) {
  if (grad.u.shape() != wm.u.shape() || grad.v.shape() != wm.v.shape()) {
    throw DimensionError("signsgd_step: gradient shape does not match watermark");
  }
  auto step = [lr](std::span<float> w, std::span<const float> g) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      const float s = g[i] > 0.0f ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f);
      w[i] = static_cast<float>(w[i] - lr * s);
    }
  };
  step(wm.u.data(), grad.u.data());
  step(wm.v.data(), grad.v.data());
}

double heldout_accuracy(const VerifierParams& params, const WatermarkPair& wm,
                        std::span<const Image> images, const AugmentationSpec& manipulation,
                        std::uint64_t seed) {
  if (images.empty()) return 0.0;
  const std::vector<Image> marked = embed_batch(images, wm);
  const auto clean_m = apply_batch(manipulation, images, derive_seed(seed, 0));
  const auto marked_m = apply_batch(manipulation, marked, derive_seed(seed, 1));
  const auto s0 = score(params, std::span<const Image>(clean_m));
  const auto s1 = score(params, std::span<const Image>(marked_m));
  std::size_t correct = 0;
  for (double s : s0) correct += s < 0.5;
  for (double s : s1) correct += s >= 0.5;
  return static_cast<double>(correct) / (2.0 * images.size());
}

TrainResult train_joint(const RunConfig& config, std::span<const Image> corpus, const TrainOptions& options) {
  config.validate();
  const int half = config.batch_size / 2;
  if (corpus.size() < static_cast<std::size_t>(half)) {
    throw ConfigError(fmt::format("corpus has {} images; a batch needs {}", corpus.size(), half));
  }
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].shape() != config.shape()) {
      throw DimensionError(fmt::format("corpus image {} is {}, config expects {}", i, corpus[i].shape().str(),
                                       config.shape().str()));
    }
  }

  TrainResult result{init_params(config.seed), init_watermark(config.shape(), config.c1, config.c2, config.seed),
                     {}};
  VerifierParams velocity = VerifierParams::zeros();
  const std::size_t iterations = corpus.size() / half;
  std::vector<std::size_t> order(corpus.size());
  std::vector<Image> batch(half);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, stream::kShuffle, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

    EpochStats stats;
    stats.epoch = epoch + 1;
    for (std::size_t it = 0; it < iterations; ++it) {
      for (int j = 0; j < half; ++j) batch[j] = corpus[order[it * half + j]];
      const std::uint64_t step_seed =
          derive_seed(derive_seed(config.seed, stream::kViews, static_cast<std::uint64_t>(epoch)), it);
      Rng view_rng(step_seed);
      const ViewPair views = sample_two_views(config.augmentations, view_rng);
      const std::uint64_t view_seed = derive_seed(step_seed, stream::kAugment);
      const int iteration = static_cast<int>(it);

      if (!options.freeze_watermark) {
        const LossEvaluation wm_eval =
            compute_loss_raw(result.params, result.watermark, batch, views, view_seed, {false, true});
        signsgd_step(result.watermark, wm_eval.grad_watermark, config.watermark_lr);
        if (options.step_hook) options.step_hook({StepEvent::Kind::kWatermark, epoch, iteration});
      }
      const LossEvaluation theta_eval =
          compute_loss_raw(result.params, result.watermark, batch, views, view_seed, {true, false});
      sgd_step(result.params, theta_eval.grad_params, config.verifier_lr, config.momentum, velocity);
      if (options.step_hook) options.step_hook({StepEvent::Kind::kVerifier, epoch, iteration});

      stats.l0 += theta_eval.loss.l0;
      stats.laug += theta_eval.loss.laug;
      stats.train_accuracy += theta_eval.accuracy;
    }
    stats.l0 /= static_cast<double>(iterations);
    stats.laug /= static_cast<double>(iterations);
    stats.lraw = stats.l0 + stats.laug;
    stats.train_accuracy /= static_cast<double>(iterations);
    if (!options.heldout.empty()) {
      stats.heldout_accuracy =
          heldout_accuracy(result.params, result.watermark, options.heldout, options.heldout_manipulation,
                           derive_seed(config.seed, stream::kHeldout, static_cast<std::uint64_t>(epoch)));
    }
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.report.epochs.push_back(stats);
  }
  return result;
}

}  // namespace raw
