#include "raw/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <fmt/format.h>

#include "raw/error.hpp"
#include "raw/rng.hpp"

namespace raw {

namespace {

constexpr double kScoreEps = 1e-12;

constexpr std::size_t conv_weights(int layer) {
  return static_cast<std::size_t>(VerifierParams::kChannels[layer + 1]) *
         VerifierParams::kChannels[layer] * 9;
}

}  // namespace

VerifierParams VerifierParams::zeros() {
  VerifierParams p;
  p.conv1_w.assign(conv_weights(0), 0.0f);
  p.conv1_b.assign(kChannels[1], 0.0f);
  p.conv2_w.assign(conv_weights(1), 0.0f);
  p.conv2_b.assign(kChannels[2], 0.0f);
  p.conv3_w.assign(conv_weights(2), 0.0f);
  p.conv3_b.assign(kChannels[3], 0.0f);
  p.dense_w.assign(kChannels[3], 0.0f);
  p.dense_b.assign(1, 0.0f);
  return p;
}

std::array<std::span<float>, VerifierParams::kBlocks> VerifierParams::blocks() {
  return {conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b, dense_w, dense_b};
}

std::array<std::span<const float>, VerifierParams::kBlocks> VerifierParams::blocks() const {
  return {conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b, dense_w, dense_b};
}

std::size_t VerifierParams::parameter_count() const {
  std::size_t n = 0;
  for (auto b : blocks()) n += b.size();
  return n;
}

void VerifierParams::validate() const {
  const VerifierParams ref = zeros();
  const auto mine = blocks();
  const auto want = ref.blocks();
  for (int i = 0; i < kBlocks; ++i) {
    if (mine[i].size() != want[i].size()) {
      throw DimensionError(fmt::format("verifier parameter block {} has {} values, expected {}", i,
                                       mine[i].size(), want[i].size()));
    }
    for (float v : mine[i])
      if (!std::isfinite(v)) throw NumericError(fmt::format("verifier parameter block {} is not finite", i));
  }
}

std::uint64_t VerifierParams::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (auto b : blocks()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(b.data());
    for (std::size_t i = 0; i < b.size_bytes(); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
    h ^= b.size();
    h *= 1099511628211ULL;
  }
  return h;
}

VerifierParams init_params(std::uint64_t seed) {
  VerifierParams p = VerifierParams::zeros();
  Rng rng(derive_seed(seed, stream::kVerifierInit));
  auto fill = [&rng](std::vector<float>& w, int fan_in) {
    const double s = std::sqrt(6.0 / fan_in);
    for (float& v : w) v = static_cast<float>(rng.uniform(-s, s));
  };
  fill(p.conv1_w, VerifierParams::kChannels[0] * 9);
  fill(p.conv2_w, VerifierParams::kChannels[1] * 9);
  fill(p.conv3_w, VerifierParams::kChannels[2] * 9);
  fill(p.dense_w, VerifierParams::kChannels[3]);
  return p;
}

namespace {

void check_input(const Tensor3& x, std::size_t index) {
  if (x.channels() != VerifierParams::kChannels[0]) {
    throw DimensionError(fmt::format("verifier input {} has {} channels, expected {}", index,
                                     x.channels(), VerifierParams::kChannels[0]));
  }
  if (x.height() < 8 || x.width() < 8) {
    throw DimensionError(fmt::format("verifier input {} is {}, need H, W >= 8", index, x.shape().str()));
  }
}

struct Logit {
  double logit;
  double score;
  double slope;
};

Logit squash(double z) {
  // Both tails evaluated without cancellation.
  const double pos = 1.0 / (1.0 + std::exp(-z));
  const double neg = 1.0 / (1.0 + std::exp(z));
  return {z, std::clamp(pos, kScoreEps, 1.0 - kScoreEps), pos * neg};
}

// Runs one image. When `keep` is non-null every intermediate is stored there
// for backward(); otherwise thread-local scratch is reused.
Logit forward_one(const VerifierParams& p, const Tensor3& x, ForwardTrace::Sample* keep) {
  thread_local ForwardTrace::Sample scratch;
  ForwardTrace::Sample& s = keep ? *keep : scratch;
  constexpr auto ch = VerifierParams::kChannels;
  s.shape = x.shape();
  s.geom[0] = kernels::conv_geometry(ch[0], ch[1], x.height(), x.width());
  s.geom[1] = kernels::conv_geometry(ch[1], ch[2], s.geom[0].out_h, s.geom[0].out_w);
  s.geom[2] = kernels::conv_geometry(ch[2], ch[3], s.geom[1].out_h, s.geom[1].out_w);

  const std::array<const std::vector<float>*, 3> weights{&p.conv1_w, &p.conv2_w, &p.conv3_w};
  const std::array<const std::vector<float>*, 3> biases{&p.conv1_b, &p.conv2_b, &p.conv3_b};
  const std::array<std::vector<float>*, 3> cols{&s.col1, &s.col2, &s.col3};
  const std::array<std::vector<float>*, 3> acts{&s.act1, &s.act2, &s.act3};

  const float* in = x.data().data();
  for (int layer = 0; layer < 3; ++layer) {
    const auto& g = s.geom[layer];
    cols[layer]->resize(g.col_size());
    acts[layer]->resize(g.out_size());
    kernels::im2col(in, g, cols[layer]->data());
    kernels::conv_gemm_relu(weights[layer]->data(), biases[layer]->data(), cols[layer]->data(),
                            g.out_ch, g.taps(), g.positions(), acts[layer]->data());
    in = acts[layer]->data();
  }

  const auto& g3 = s.geom[2];
  const int P = g3.positions();
  s.pooled.assign(g3.out_ch, 0.0f);
  double z = p.dense_b[0];
  for (int c = 0; c < g3.out_ch; ++c) {
    const float* a = s.act3.data() + static_cast<std::size_t>(c) * P;
    double sum = 0.0;
    for (int j = 0; j < P; ++j) sum += a[j];
    s.pooled[c] = static_cast<float>(sum / P);
    z += static_cast<double>(p.dense_w[c]) * s.pooled[c];
  }
  const Logit out = squash(z);
  s.logit = out.logit;
  s.slope = out.slope;
  return out;
}

// Gradient contributions of one sample; grads must be zero-initialized.
void backward_one(const VerifierParams& p, const ForwardTrace::Sample& s, double dscore,
                  VerifierParams* grads, Tensor3* gin) {
  const double dz = dscore * s.slope;
  const auto& g1 = s.geom[0];
  const auto& g2 = s.geom[1];
  const auto& g3 = s.geom[2];
  const int C3 = g3.out_ch;
  const int P3 = g3.positions();

  if (grads) {
    for (int c = 0; c < C3; ++c) grads->dense_w[c] = static_cast<float>(dz * s.pooled[c]);
    grads->dense_b[0] = static_cast<float>(dz);
  }

  std::vector<float> d3(g3.out_size());
  for (int c = 0; c < C3; ++c) {
    const float v = static_cast<float>(dz * p.dense_w[c] / P3);
    std::fill(d3.begin() + static_cast<std::ptrdiff_t>(c) * P3,
              d3.begin() + static_cast<std::ptrdiff_t>(c + 1) * P3, v);
  }

  std::vector<float> dcol3(g3.col_size());
  kernels::conv_gemm_relu_backward(p.conv3_w.data(), s.col3.data(), s.act3.data(), d3.data(), C3,
                                   g3.taps(), P3, grads ? grads->conv3_w.data() : nullptr,
                                   grads ? grads->conv3_b.data() : nullptr, dcol3.data());
  std::vector<float> d2(g2.out_size(), 0.0f);
  kernels::col2im_add(dcol3.data(), g3, d2.data());

  std::vector<float> dcol2(g2.col_size());
  kernels::conv_gemm_relu_backward(p.conv2_w.data(), s.col2.data(), s.act2.data(), d2.data(),
                                   g2.out_ch, g2.taps(), g2.positions(),
                                   grads ? grads->conv2_w.data() : nullptr,
                                   grads ? grads->conv2_b.data() : nullptr, dcol2.data());
  std::vector<float> d1(g1.out_size(), 0.0f);
  kernels::col2im_add(dcol2.data(), g2, d1.data());

  std::vector<float> dcol1;
  if (gin) dcol1.resize(g1.col_size());
  kernels::conv_gemm_relu_backward(p.conv1_w.data(), s.col1.data(), s.act1.data(), d1.data(),
                                   g1.out_ch, g1.taps(), g1.positions(),
                                   grads ? grads->conv1_w.data() : nullptr,
                                   grads ? grads->conv1_b.data() : nullptr,
                                   gin ? dcol1.data() : nullptr);
  if (gin) {
    *gin = Tensor3(s.shape);
    kernels::col2im_add(dcol1.data(), g1, gin->data().data());
  }
}

void check_backward_inputs(const VerifierParams& params, const ForwardTrace& trace,
                           std::span<const double> dloss_dscore) {
  if (trace.params_fingerprint != params.fingerprint()) {
    throw StateError("backward: trace was recorded with different verifier parameters");
  }
  if (dloss_dscore.size() != trace.samples.size()) {
    throw DimensionError(fmt::format("backward: {} upstream values for {} traced samples",
                                     dloss_dscore.size(), trace.samples.size()));
  }
}

void sum_in_order(const std::vector<VerifierParams>& per_sample, VerifierParams& total) {
  auto dst = total.blocks();
  for (const auto& g : per_sample) {
    auto src = g.blocks();
    for (int b = 0; b < VerifierParams::kBlocks; ++b)
      for (std::size_t i = 0; i < dst[b].size(); ++i) dst[b][i] += src[b][i];
  }
}

std::vector<Tensor3> as_tensors(std::span<const Image> batch) {
  std::vector<Tensor3> out;
  out.reserve(batch.size());
  for (const auto& img : batch) out.push_back(img.tensor());
  return out;
}

}  // namespace

namespace serial {

ForwardResult forward(const VerifierParams& params, std::span<const Tensor3> batch) {
  ForwardResult r;
  for (std::size_t i = 0; i < batch.size(); ++i) check_input(batch[i], i);
  r.trace.samples.resize(batch.size());
  r.trace.params_fingerprint = params.fingerprint();
  r.scores.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    r.scores[i] = forward_one(params, batch[i], &r.trace.samples[i]).score;
  return r;
}

std::vector<double> score(const VerifierParams& params, std::span<const Tensor3> batch) {
  for (std::size_t i = 0; i < batch.size(); ++i) check_input(batch[i], i);
  std::vector<double> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) out[i] = forward_one(params, batch[i], nullptr).score;
  return out;
}

BackwardResult backward(const VerifierParams& params, const ForwardTrace& trace,
                        std::span<const double> dloss_dscore, BackwardOptions options) {
  check_backward_inputs(params, trace, dloss_dscore);
  const std::size_t n = trace.samples.size();
  BackwardResult r;
  std::vector<VerifierParams> per_sample;
  if (options.params) per_sample.assign(n, VerifierParams::zeros());
  if (options.input) r.grad_input.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    backward_one(params, trace.samples[i], dloss_dscore[i], options.params ? &per_sample[i] : nullptr,
                 options.input ? &r.grad_input[i] : nullptr);
  }
  if (options.params) {
    r.grad_params = VerifierParams::zeros();
    sum_in_order(per_sample, r.grad_params);
  }
  return r;
}

}  // namespace serial

ForwardResult forward(const VerifierParams& params, std::span<const Tensor3> batch) {
  ForwardResult r;
  for (std::size_t i = 0; i < batch.size(); ++i) check_input(batch[i], i);
  const auto n = static_cast<std::ptrdiff_t>(batch.size());
  r.trace.samples.resize(batch.size());
  r.trace.params_fingerprint = params.fingerprint();
  r.scores.resize(batch.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    r.scores[i] = forward_one(params, batch[i], &r.trace.samples[i]).score;
  return r;
}

ForwardResult forward(const VerifierParams& params, std::span<const Image> batch) {
  const auto tensors = as_tensors(batch);
  return forward(params, std::span<const Tensor3>(tensors));
}

std::vector<double> score(const VerifierParams& params, std::span<const Tensor3> batch) {
  for (std::size_t i = 0; i < batch.size(); ++i) check_input(batch[i], i);
  const auto n = static_cast<std::ptrdiff_t>(batch.size());
  std::vector<double> out(batch.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = forward_one(params, batch[i], nullptr).score;
  return out;
}

std::vector<double> score(const VerifierParams& params, std::span<const Image> batch) {
  const auto tensors = as_tensors(batch);
  return score(params, std::span<const Tensor3>(tensors));
}

double score(const VerifierParams& params, const Tensor3& x) {
  check_input(x, 0);
  return forward_one(params, x, nullptr).score;
}

BackwardResult backward(const VerifierParams& params, const ForwardTrace& trace,
                        std::span<const double> dloss_dscore, BackwardOptions options) {
  check_backward_inputs(params, trace, dloss_dscore);
  const std::size_t n = trace.samples.size();
  BackwardResult r;
  std::vector<VerifierParams> per_sample;
  if (options.params) per_sample.assign(n, VerifierParams::zeros());
  if (options.input) r.grad_input.resize(n);
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    backward_one(params, trace.samples[i], dloss_dscore[i], options.params ? &per_sample[i] : nullptr,
                 options.input ? &r.grad_input[i] : nullptr);
  }
  if (options.params) {
    r.grad_params = VerifierParams::zeros();
    sum_in_order(per_sample, r.grad_params);
  }
  return r;
}

BceResult bce_loss(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError(fmt::format("bce_loss: {} scores vs {} labels", scores.size(), labels.size()));
  }
  if (scores.empty()) throw ConfigError("bce_loss: empty batch");
  const double n = static_cast<double>(scores.size());
  BceResult r;
  r.dloss_dscore.resize(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int y = labels[i];
    if (y != 0 && y != 1) throw ConfigError(fmt::format("bce_loss: label {} is not 0 or 1", y));
    const double s = std::clamp(scores[i], kBceClamp, 1.0 - kBceClamp);
    total += y == 1 ? -std::log(s) : -std::log(1.0 - s);
    r.dloss_dscore[i] = (y == 1 ? -1.0 / s : 1.0 / (1.0 - s)) / n;
  }
  r.loss = total / n;
  return r;
}

}  // namespace raw
