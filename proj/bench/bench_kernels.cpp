#include <benchmark/benchmark.h>

#include "raw/certify.hpp"
#include "raw/corpus.hpp"
#include "raw/spectral.hpp"
#include "raw/verifier.hpp"
#include "raw/watermark.hpp"

using namespace raw;

namespace {

const Shape kShape{3, 64, 64};

std::vector<Image> corpus(int n) {
  CorpusSpec s;
  s.n_images = n;
  return generate(s);
}

void BM_fft2_serial(benchmark::State& st) {
  const Image x = corpus(1)[0];
  for (auto _ : st) benchmark::DoNotOptimize(serial::fft2(x.tensor()));
}

void BM_fft2_omp(benchmark::State& st) {
  const Image x = corpus(1)[0];
  for (auto _ : st) benchmark::DoNotOptimize(fft2(x.tensor()));
}

void BM_embed_batch_serial(benchmark::State& st) {
  const auto xs = corpus(static_cast<int>(st.range(0)));
  const WatermarkPair wm = init_watermark(kShape, 1.0, 0.01, 1);
  for (auto _ : st) benchmark::DoNotOptimize(serial::embed_batch(xs, wm));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_embed_batch_omp(benchmark::State& st) {
  const auto xs = corpus(static_cast<int>(st.range(0)));
  const WatermarkPair wm = init_watermark(kShape, 1.0, 0.01, 1);
  for (auto _ : st) benchmark::DoNotOptimize(embed_batch(xs, wm));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

std::vector<Tensor3> tensors(int n) {
  std::vector<Tensor3> out;
  for (const auto& img : corpus(n)) out.push_back(img.tensor());
  return out;
}

void BM_forward_serial(benchmark::State& st) {
  const auto xs = tensors(32);
  const VerifierParams p = init_params(1);
  for (auto _ : st) benchmark::DoNotOptimize(serial::forward(p, xs));
}

void BM_forward_omp(benchmark::State& st) {
  const auto xs = tensors(32);
  const VerifierParams p = init_params(1);
  for (auto _ : st) benchmark::DoNotOptimize(forward(p, xs));
}

void BM_smoothing_serial(benchmark::State& st) {
  const Image x = corpus(1)[0];
  const VerifierParams p = init_params(1);
  SmoothingConfig cfg;
  for (auto _ : st) benchmark::DoNotOptimize(serial::smooth_estimate(p, x.tensor(), cfg, 1));
}

void BM_smoothing_omp(benchmark::State& st) {
  const Image x = corpus(1)[0];
  const VerifierParams p = init_params(1);
  SmoothingConfig cfg;
  for (auto _ : st) benchmark::DoNotOptimize(smooth_estimate(p, x.tensor(), cfg, 1));
}

}  // namespace

BENCHMARK(BM_fft2_serial);
BENCHMARK(BM_fft2_omp);
BENCHMARK(BM_embed_batch_serial)->Arg(100)->Arg(500)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_embed_batch_omp)->Arg(100)->Arg(500)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_forward_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_forward_omp)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_smoothing_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_smoothing_omp)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
