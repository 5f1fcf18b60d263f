#include <benchmark/benchmark.h>

#include <map>
#include <random>

#include "rgr/inference.hpp"
#include "rgr/neural_core.hpp"
#include "rgr/rsp.hpp"
#include "rgr/serving_sim.hpp"
#include "rgr/sid_tokenizer.hpp"
#include "rgr/training_objectives.hpp"

using namespace rgr;

namespace {

std::vector<ItemFeature> random_features(int n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<ItemFeature> out;
  for (int i = 0; i < n; ++i) {
    FeatureVector v(d);
    for (int k = 0; k < d; ++k) v(k) = g(rng) + (i % 9);
    out.push_back({i, v});
  }
  return out;
}

SidIndex random_corpus(const ModelConfig& mc, int n, std::mt19937_64& rng) {
  std::vector<SemanticId> all;
  for (int a = 0; a < mc.vocab_sizes[0]; ++a)
    for (int b = 0; b < mc.vocab_sizes[1]; ++b) all.push_back(SemanticId{{a, b}});
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(static_cast<std::size_t>(n));
  std::map<std::int64_t, SemanticId> m;
  for (std::size_t i = 0; i < all.size(); ++i) m[static_cast<std::int64_t>(i)] = all[i];
  return SidIndex(m);
}

}  // namespace

static void BM_HiddenStates(benchmark::State& state) {
  ModelConfig mc;
  Backbone<float> model(mc, 1);
  const int n = static_cast<int>(state.range(0));
  std::vector<int> tokens(static_cast<std::size_t>(n)), pos(tokens.size());
  for (int i = 0; i < n; ++i) {
    tokens[static_cast<std::size_t>(i)] = i == 0 ? ModelConfig::kBos : mc.token(i % 2, i % mc.vocab_sizes[i % 2]);
    pos[static_cast<std::size_t>(i)] = i;
  }
  const AttentionMask mask = AttentionMask::causal(n);
  for (auto _ : state) benchmark::DoNotOptimize(hidden_states(model, tokens, pos, mask));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_HiddenStates)->Arg(16)->Arg(64)->Arg(128);

static void BM_TrainCodebooks(benchmark::State& state) {
  const auto fs = random_features(static_cast<int>(state.range(0)), 16, 3);
  const int sizes[] = {32, 64};
  for (auto _ : state) benchmark::DoNotOptimize(train_codebooks(fs, sizes, 7));
}
BENCHMARK(BM_TrainCodebooks)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

static void BM_BeamSearch(benchmark::State& state) {
  ModelConfig mc;
  std::mt19937_64 rng(2);
  Backbone<float> model(mc, 1);
  RankHead<float> head(mc.d_model, 2);
  SidIndex corpus = random_corpus(mc, 2000, rng);
  std::vector<SemanticId> history;
  for (int i = 0; i < 20; ++i) history.push_back(SemanticId{{i % mc.vocab_sizes[0], (7 * i) % mc.vocab_sizes[1]}});
  BeamOptions opts;
  opts.beams = {static_cast<int>(state.range(0)), static_cast<int>(state.range(1))};
  for (auto _ : state) benchmark::DoNotOptimize(beam_search(history, model, &head, corpus, opts));
}
BENCHMARK(BM_BeamSearch)->Args({8, 128})->Args({16, 256})->Unit(benchmark::kMillisecond);

static void BM_LdpoLoss(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  TierScores s;
  for (auto& tier : s)
    for (int i = 0; i < state.range(0); ++i) tier.push_back(g(rng));
  for (auto _ : state) benchmark::DoNotOptimize(ldpo_loss(s, 1.0));
}
BENCHMARK(BM_LdpoLoss)->Arg(4)->Arg(64);

static void BM_ServingSim(benchmark::State& state) {
  SimConfig c;
  c.duration_ms = 3600000;
  c.request_rate = static_cast<double>(state.range(0));
  ServingHandles h;
  h.retrieve = [](int version, std::int64_t user) { return std::to_string(version) + ":" + std::to_string(user); };
  for (auto _ : state) benchmark::DoNotOptimize(run_simulation(c, h));
}
BENCHMARK(BM_ServingSim)->Arg(1)->Arg(10)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
