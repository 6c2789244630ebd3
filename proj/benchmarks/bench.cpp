#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "idfe/audio.hpp"
#include "idfe/corpus.hpp"
#include "idfe/metrics.hpp"
#include "idfe/model.hpp"
#include "idfe/rng.hpp"
#include "idfe/tape.hpp"
#include "idfe/train.hpp"

namespace {

idfe::Tensor randn(const idfe::Shape& s, std::uint64_t seed) {
  auto eng = idfe::make_engine(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  idfe::Tensor t(s);
  for (auto& v : t.data) v = nd(eng);
  return t;
}

void bm_tape_mlp_forward_backward(benchmark::State& state) {
  const std::int64_t b = state.range(0);
  const idfe::Tensor x = randn({b, 64}, 1);
  const idfe::Tensor w1 = randn({64, 128}, 2);
  const idfe::Tensor w2 = randn({128, 2}, 3);
  const std::vector<int> targets(static_cast<std::size_t>(b), 0);
  for (auto _ : state) {
    idfe::Tape t;
    idfe::Value h = t.relu(t.matmul(t.leaf(x), t.leaf(w1)));
    idfe::Value logits = t.matmul(h, t.leaf(w2));
    idfe::Value loss = t.cross_entropy(logits, targets, {1.0, 1.0});
    t.backward(loss);
    benchmark::DoNotOptimize(t.grad(loss.id));
  }
  state.SetItemsProcessed(state.iterations() * b);
}
BENCHMARK(bm_tape_mlp_forward_backward)->Arg(8)->Arg(32);

// one optimizer step over a synthetic batch: the unit the training loop repeats
void bm_train_step(benchmark::State& state) {
  const std::int64_t b = state.range(0);
  const auto spec = idfe::make_synth_spec(2, 8, 2, 8, 16, 1.0, 1.0, 1.0, 11);
  const auto data = idfe::synth_generate(spec, 32, 12);

  idfe::ModelConfig mcfg;
  mcfg.frame_encoder = true;
  mcfg.mhfa.num_layers = 2;
  mcfg.mhfa.frame_dim = 8;
  mcfg.mhfa.num_heads = 2;
  mcfg.mhfa.value_dim = 4;
  mcfg.mhfa.embedding_dim = 16;
  mcfg.spoof.hidden_dim = 32;
  mcfg.spoof.dropout_rate = 0.2;
  mcfg.spoof.num_outputs = 2;
  mcfg.domain = mcfg.spoof;

  auto params = idfe::init_model_params(mcfg, 13);
  idfe::AdamState<double> opt;
  const auto batches = idfe::make_batches(data, b, 14, 0);
  const idfe::Batch& batch = batches.front();

  std::uint64_t step = 0;
  for (auto _ : state) {
    const auto stats =
        idfe::train_step(batch, params, mcfg, opt, 0.1, 0.9, 1e-3, {1.0, 1.0}, 15 + step, step);
    benchmark::DoNotOptimize(stats.loss_s);
    ++step;
  }
  state.SetItemsProcessed(state.iterations() * b);
}
BENCHMARK(bm_train_step)->Arg(8)->Arg(32);

void bm_eer(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  auto eng = idfe::make_engine(21);
  std::normal_distribution<double> bona_d(1.0, 1.0), spoof_d(-1.0, 1.0);
  std::vector<double> bona, spoof;
  for (std::int64_t i = 0; i < n; ++i) {
    bona.push_back(bona_d(eng));
    spoof.push_back(spoof_d(eng));
  }
  for (auto _ : state) {
    const auto r = idfe::eer(bona, spoof);
    benchmark::DoNotOptimize(r.eer);
  }
  state.SetItemsProcessed(state.iterations() * 2 * n);
}
BENCHMARK(bm_eer)->Arg(1000)->Arg(100000);

void bm_mix_at_snr(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  auto eng = idfe::make_engine(31);
  std::normal_distribution<double> nd(0.0, 0.1);
  idfe::Waveform speech, noise;
  for (std::int64_t i = 0; i < n; ++i) {
    speech.samples.push_back(nd(eng));
    noise.samples.push_back(nd(eng));
  }
  for (auto _ : state) {
    auto mixed = idfe::mix_at_snr(speech, noise, 10.0, 41);
    benchmark::DoNotOptimize(mixed.samples.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(bm_mix_at_snr)->Arg(16000)->Arg(64000);

void bm_convolve_ir(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  auto eng = idfe::make_engine(51);
  std::normal_distribution<double> nd(0.0, 0.05);
  idfe::Waveform speech, ir;
  for (std::int64_t i = 0; i < n; ++i) speech.samples.push_back(nd(eng));
  for (int i = 0; i < 512; ++i) ir.samples.push_back(nd(eng) / (1.0 + i));
  for (auto _ : state) {
    auto wet = idfe::convolve_ir(speech, ir);
    benchmark::DoNotOptimize(wet.samples.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(bm_convolve_ir)->Arg(16000)->Arg(64000);

}  // namespace

BENCHMARK_MAIN();
