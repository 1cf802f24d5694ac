// Microbenchmarks for the hot paths: dense kernels, attention, the codec,
// simulator stepping/rendering and a full policy-head training step.

#include <benchmark/benchmark.h>

#include "minivla/codec/action_codec.hpp"
#include "minivla/core/ops.hpp"
#include "minivla/data/episode.hpp"
#include "minivla/sim/minimanip.hpp"
#include "minivla/vla/trainer.hpp"

using namespace minivla;

namespace {
const std::string kScenes = std::string(MINIVLA_REPO_DIR) + "/data/scenes.json";
const std::string kVocab = std::string(MINIVLA_REPO_DIR) + "/data/vocab.txt";

core::Tensor rand_tensor(core::Rng& rng, core::Shape shape, bool rg = false) {
  core::Tensor t = core::Tensor::zeros(shape, rg);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-1, 1);
  return t;
}
}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  core::Rng rng(1);
  core::Tensor a = rand_tensor(rng, {n, n});
  core::Tensor b = rand_tensor(rng, {n, n});
  for (auto _ : state) {
    core::NoGradGuard ng;
    benchmark::DoNotOptimize(core::matmul(a, b).data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n * 2);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

static void BM_BlockAttention(benchmark::State& state) {
  const int64_t frames = state.range(0), t = 26, d = 64;
  core::Rng rng(2);
  core::Tensor q = rand_tensor(rng, {frames * t, d});
  core::Tensor k = rand_tensor(rng, {frames * t, d});
  core::Tensor v = rand_tensor(rng, {frames * t, d});
  std::vector<core::AttentionBlock> blocks;
  for (int64_t f = 0; f < frames; ++f)
    blocks.push_back({f * t, t, f * t, t, nullptr});
  for (auto _ : state) {
    core::NoGradGuard ng;
    benchmark::DoNotOptimize(core::block_attention(q, k, v, blocks, 4).data());
  }
}
BENCHMARK(BM_BlockAttention)->Arg(8)->Arg(64);

static void BM_CodecRoundTrip(benchmark::State& state) {
  core::Rng rng(3);
  std::vector<codec::RawAction> sample(1000);
  for (auto& a : sample)
    for (size_t d = 0; d < 7; ++d) a[d] = rng.uniform(-1, 1);
  const auto stats = codec::compute_norm_stats(sample);
  const codec::TokenLayout layout{1024, 10};
  codec::RawAction a;
  for (size_t d = 0; d < 7; ++d) a[d] = rng.uniform(-2, 2);
  for (auto _ : state) {
    const auto n = codec::normalize(a, stats);
    const auto toks = codec::tokenize(codec::discretize(n), layout);
    benchmark::DoNotOptimize(codec::denormalize(codec::detokenize(toks, layout), stats));
  }
}
BENCHMARK(BM_CodecRoundTrip);

static void BM_SimStepAndRender(benchmark::State& state) {
  auto scene = sim::SceneConfig::load(kScenes, "A", "A");
  sim::MiniManip simu(scene);
  simu.reset_for_task(sim::TaskId::kLiftRedBlock, 1);
  for (auto _ : state) {
    if (simu.done()) simu.reset_for_task(sim::TaskId::kLiftRedBlock, 1);
    benchmark::DoNotOptimize(simu.step(simu.expert()).obs.images[0].data());
  }
}
BENCHMARK(BM_SimStepAndRender);

static void BM_PolicyHeadTrainStep(benchmark::State& state) {
  auto eps = data::generate_episodes(kScenes, {"A"}, "A", 48, 5);
  auto vocab = backbone::Vocabulary::load(kVocab);
  auto stats = data::fit_stats(eps, "A");
  backbone::BackboneConfig bcfg;
  bcfg.dim = 64;
  bcfg.depth = 2;
  bcfg.heads = 4;
  vla::FormulationConfig fcfg;
  fcfg.kind = vla::FormulationKind::kPolicyHeadContinuous;
  fcfg.window = 8;
  fcfg.chunk = 10;
  fcfg.head = vla::HeadKind::kRnn;
  vla::VlaModel model(bcfg, fcfg, 1);
  data::WindowSampler::Source src;
  for (const auto& ep : eps) src.episodes.push_back(&ep);
  data::WindowSampler sampler({src}, 8, 10, 1, vocab, kScenes, 1, stats);
  vla::TrainConfig tc;
  tc.batch_size = 8;
  tc.log_every = 0;
  vla::Trainer trainer(model, tc);
  for (auto _ : state) trainer.run([&] { return sampler.next(); }, 1);
}
BENCHMARK(BM_PolicyHeadTrainStep);

BENCHMARK_MAIN();
