#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fedsurg/aggregation.hpp"
#include "fedsurg/datagen.hpp"
#include "fedsurg/metrics.hpp"
#include "fedsurg/models.hpp"
#include "fedsurg/ranking.hpp"

using namespace fedsurg;

namespace {

std::vector<int> random_labels(std::mt19937_64& rng, int n, int c) {
  std::vector<int> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = static_cast<int>(rng() % c);
  return out;
}

void BM_MetricReport(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const auto truths = random_labels(rng, 70, 6);
  const auto preds = random_labels(rng, 70, 6);
  for (auto _ : state) {
    const auto report = metric_report(build_confusion_matrix(truths, preds, LabelSpace{6}));
    benchmark::DoNotOptimize(report.f1_macro);
  }
}
BENCHMARK(BM_MetricReport);

void BM_FedAvg(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> dist(0.0, 1.0);
  const auto dim = static_cast<std::size_t>(state.range(0));
  std::vector<ClientUpdate> updates;
  for (int k = 0; k < 8; ++k) {
    ParameterVector p(dim);
    for (auto& v : p) v = dist(rng);
    updates.push_back({"c" + std::to_string(k), std::move(p), 10 + k, 0.0});
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(fed_avg(updates));
  }
}
BENCHMARK(BM_FedAvg)->Arg(1000)->Arg(100000);

void BM_FedMedian(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> dist(0.0, 1.0);
  const auto dim = static_cast<std::size_t>(state.range(0));
  std::vector<ClientUpdate> updates;
  for (int k = 0; k < 8; ++k) {
    ParameterVector p(dim);
    for (auto& v : p) v = dist(rng);
    updates.push_back({"c" + std::to_string(k), std::move(p), 1, 0.0});
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(fed_median(updates));
  }
}
BENCHMARK(BM_FedMedian)->Arg(1000)->Arg(100000);

void BM_HybridSampler(benchmark::State& state) {
  std::mt19937_64 rng(4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_indices_hybrid(200, 32, 16, 0.6, rng));
  }
}
BENCHMARK(BM_HybridSampler);

void BM_SoftmaxGradient(benchmark::State& state) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> dist(0.0, 1.0);
  auto model = softmax_head_model(8, 6);
  model->randomize(rng, 0.3);
  std::vector<std::vector<double>> storage;
  std::vector<Sample> batch;
  for (int k = 0; k < 128; ++k) {
    std::vector<double> x(8);
    for (auto& v : x) v = dist(rng);
    storage.push_back(std::move(x));
    batch.push_back({storage.back(), static_cast<int>(rng() % 6)});
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(model->loss_and_gradient(std::span<const Sample>(batch)));
  }
}
BENCHMARK(BM_SoftmaxGradient);

void BM_WilcoxonExact(benchmark::State& state) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> dist(0.0, 1.0);
  const int n = static_cast<int>(state.range(0));
  std::vector<double> x(n), y(n);
  for (int i = 0; i < n; ++i) {
    y[i] = dist(rng);
    x[i] = y[i] + dist(rng);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(wilcoxon_signed_rank(x, y, WilcoxonMode::Exact));
  }
}
BENCHMARK(BM_WilcoxonExact)->Arg(25)->Arg(100);

void BM_WilcoxonNormal(benchmark::State& state) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> x(10000), y(10000);
  for (int i = 0; i < 10000; ++i) {
    y[i] = dist(rng);
    x[i] = y[i] + dist(rng);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(wilcoxon_signed_rank(x, y, WilcoxonMode::NormalApprox));
  }
}
BENCHMARK(BM_WilcoxonNormal);

void BM_BootstrapRanking(benchmark::State& state) {
  std::mt19937_64 rng(8);
  const auto truths = random_labels(rng, 70, 6);
  std::vector<TeamPredictions> teams;
  for (const auto* name : {"A", "B", "C"}) {
    TeamPredictions team;
    team.team = name;
    CaseGroup g;
    g.truths = truths;
    for (int k = 0; k < 70; ++k) g.preds.push_back((truths[k] + static_cast<int>(rng() % 3)) % 6);
    team.by_center["4"] = std::move(g);
    teams.push_back(std::move(team));
  }
  BootstrapSpec spec;
  spec.iterations = static_cast<int>(state.range(0));
  spec.seed = 9;
  spec.labels = LabelSpace{6};
  for (auto _ : state) {
    benchmark::DoNotOptimize(bootstrap_ranking(teams, spec));
  }
}
BENCHMARK(BM_BootstrapRanking)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
