#include <doctest.h>

#include <omp.h>

#include "raw/augment.hpp"
#include "raw/certify.hpp"
#include "raw/corpus.hpp"
#include "raw/spectral.hpp"
#include "raw/training.hpp"
#include "raw/verifier.hpp"
#include "raw/watermark.hpp"
#include "support.hpp"

using namespace raw;

namespace {

class ThreadCount {
 public:
  explicit ThreadCount(int n) : saved_(omp_get_max_threads()) { omp_set_num_threads(n); }
  ~ThreadCount() { omp_set_num_threads(saved_); }

 private:
  int saved_;
};

const int kThreadCounts[] = {1, 2, 3, 8};

std::vector<Image> images(int n, Shape s, std::uint64_t seed) {
  std::vector<Image> out;
  for (int i = 0; i < n; ++i) out.push_back(testing::random_image(s, seed + i));
  return out;
}

}  // namespace

TEST_CASE("fft2 and ifft2 match the serial reference bitwise") {
  for (Shape s : {Shape{3, 64, 64}, Shape{3, 12, 20}, Shape{1, 7, 5}}) {
    const Tensor3 x = testing::random_tensor(s, 1);
    const Spectrum ref = serial::fft2(x);
    double ref_imag = 0.0;
    const Tensor3 back = serial::ifft2(ref, &ref_imag);
    for (int t : kThreadCounts) {
      ThreadCount tc(t);
      const Spectrum f = fft2(x);
      CHECK(f.re == ref.re);
      CHECK(f.im == ref.im);
      double imag = 0.0;
      CHECK(ifft2(ref, &imag) == back);
      CHECK(imag == ref_imag);
    }
  }
}

TEST_CASE("embed_batch matches the serial reference bitwise") {
  const Shape s{3, 32, 32};
  const auto xs = images(9, s, 10);
  const WatermarkPair wm = init_watermark(s, 1.0, 0.01, 2);
  const auto ref = serial::embed_batch(xs, wm);
  for (int t : kThreadCounts) {
    ThreadCount tc(t);
    CHECK(embed_batch(xs, wm) == ref);
  }
}

TEST_CASE("verifier forward and backward match the serial reference bitwise") {
  const Shape s{3, 32, 32};
  std::vector<Tensor3> xs;
  for (int i = 0; i < 7; ++i) xs.push_back(testing::random_tensor(s, 30 + i, 0.0f, 1.0f));
  const VerifierParams params = init_params(5);
  const ForwardResult ref = serial::forward(params, xs);
  std::vector<double> dl(xs.size());
  for (std::size_t i = 0; i < dl.size(); ++i) dl[i] = 0.3 - 0.1 * static_cast<double>(i);
  const BackwardResult ref_b = serial::backward(params, ref.trace, dl);
  for (int t : kThreadCounts) {
    ThreadCount tc(t);
    const ForwardResult f = forward(params, xs);
    CHECK(f.scores == ref.scores);
    CHECK(score(params, std::span<const Tensor3>(xs)) == serial::score(params, xs));
    const BackwardResult b = backward(params, f.trace, dl);
    CHECK(b.grad_params == ref_b.grad_params);
    REQUIRE(b.grad_input.size() == ref_b.grad_input.size());
    for (std::size_t i = 0; i < b.grad_input.size(); ++i) CHECK(b.grad_input[i] == ref_b.grad_input[i]);
  }
}

TEST_CASE("apply_batch matches the serial reference bitwise") {
  const Shape s{3, 32, 32};
  const auto xs = images(6, s, 50);
  for (const auto& spec : default_augmentation_pool()) {
    std::vector<AugmentTrace> ref_traces;
    const auto ref = serial::apply_batch(spec, xs, 7, &ref_traces);
    for (int t : kThreadCounts) {
      ThreadCount tc(t);
      CHECK(apply_batch(spec, xs, 7) == ref);
    }
  }
}

TEST_CASE("corpus generation matches the serial reference bitwise") {
  CorpusSpec spec;
  spec.n_images = 20;
  spec.height = 32;
  spec.width = 32;
  spec.seed = 4;
  const auto ref = serial::generate(spec);
  for (int t : kThreadCounts) {
    ThreadCount tc(t);
    CHECK(generate(spec) == ref);
  }
}

TEST_CASE("smoothing is independent of the thread count") {
  const Tensor3 x = testing::random_tensor({3, 32, 32}, 3, 0.0f, 1.0f);
  const VerifierParams params = init_params(6);
  SmoothingConfig cfg;
  cfg.n_mc = 70;
  const SmoothedEstimate ref = serial::smooth_estimate(params, x, cfg, 21);
  const auto imgs = images(5, {3, 32, 32}, 90);
  std::vector<double> ref_scores;
  {
    ThreadCount tc(1);
    ref_scores = smooth_scores(params, imgs, cfg, 3);
  }
  for (int t : kThreadCounts) {
    ThreadCount tc(t);
    const SmoothedEstimate e = smooth_estimate(params, x, cfg, 21);
    CHECK(e.mean == ref.mean);
    CHECK(e.score == ref.score);
    CHECK(smooth_scores(params, imgs, cfg, 3) == ref_scores);
  }
}

TEST_CASE("training is independent of the thread count") {
  CorpusSpec spec;
  spec.n_images = 16;
  spec.height = 16;
  spec.width = 16;
  const auto corpus = generate(spec);
  RunConfig c;
  c.epochs = 1;
  c.batch_size = 8;
  c.height = 16;
  c.width = 16;
  TrainResult ref;
  {
    ThreadCount tc(1);
    ref = train_joint(c, corpus);
  }
  for (int t : {2, 8}) {
    ThreadCount tc(t);
    const TrainResult r = train_joint(c, corpus);
    CHECK(r.params == ref.params);
    CHECK(r.watermark == ref.watermark);
  }
}
