#include "fedsurg/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include "fedsurg/errors.hpp"
#include "fedsurg/rng.hpp"

namespace fedsurg {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt_double(double v) {
  if (std::isnan(v)) return "NaN";
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string fmt_rank(double v) {
  // Ranks are integers after competition ranking; averages may be *.5.
  if (v == std::floor(v)) return std::to_string(static_cast<long long>(v));
  return fmt_double(v);
}

}  // namespace

std::vector<double> rank_values(std::span<const double> values, RankDirection direction) {
  if (values.empty()) throw ValidationError("rank_values: empty input");
  for (double v : values) {
    if (!std::isfinite(v)) throw ValidationError("rank_values: non-finite value");
  }
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return direction == RankDirection::LowerBetter ? values[a] < values[b]
                                                   : values[a] > values[b];
  });
  std::vector<double> ranks(values.size(), 0.0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i > 0 && values[order[i]] == values[order[i - 1]]) {
      ranks[order[i]] = ranks[order[i - 1]];
    } else {
      ranks[order[i]] = static_cast<double>(i + 1);
    }
  }
  return ranks;
}

TaskRanking task_ranks(const MetricTable& table, int task) {
  const auto teams = table.teams();
  if (teams.empty()) throw ValidationError("metric table has no teams");
  const auto centers = table.centers(task);
  if (centers.empty()) {
    throw ValidationError("metric table has no centers for task " + std::to_string(task));
  }

  std::vector<std::string> missing;
  auto mean_metric = [&](const std::string& team, Metric metric) {
    double sum = 0.0;
    for (const auto& center : centers) {
      MetricTable::Key key{team, task, center, metric};
      if (!table.contains(key)) {
        missing.push_back("team=" + team + " task=" + std::to_string(task) + " center=" +
                          center + " metric=" + metric_name(metric));
        continue;
      }
      sum += table.at(key);
    }
    return sum / static_cast<double>(centers.size());
  };

  std::vector<double> ec_values, f1_values;
  for (const auto& team : teams) {
    ec_values.push_back(mean_metric(team, Metric::EC));
    f1_values.push_back(mean_metric(team, Metric::F1));
  }
  if (!missing.empty()) {
    std::string msg = "metric table is missing cells:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw ValidationError(msg);
  }

  const auto ec_ranks = rank_values(ec_values, RankDirection::LowerBetter);
  const auto f1_ranks = rank_values(f1_values, RankDirection::HigherBetter);
  std::vector<double> avg(teams.size());
  for (std::size_t i = 0; i < teams.size(); ++i) avg[i] = 0.5 * (ec_ranks[i] + f1_ranks[i]);
  const auto task_rank = rank_values(avg, RankDirection::LowerBetter);

  TaskRanking out;
  out.task = task;
  for (std::size_t i = 0; i < teams.size(); ++i) {
    out.teams.push_back({teams[i], ec_values[i], f1_values[i], ec_ranks[i], f1_ranks[i], avg[i],
                         task_rank[i]});
  }
  return out;
}

RankTable final_leaderboard(const TaskRanking& task1, const TaskRanking& task2) {
  if (task1.teams.size() != task2.teams.size()) {
    throw ValidationError("final_leaderboard: team sets differ between tasks");
  }
  for (std::size_t i = 0; i < task1.teams.size(); ++i) {
    if (task1.teams[i].team != task2.teams[i].team) {
      throw ValidationError("final_leaderboard: team sets differ between tasks");
    }
  }
  std::vector<double> final_scores(task1.teams.size());
  for (std::size_t i = 0; i < task1.teams.size(); ++i) {
    final_scores[i] = 0.5 * (task1.teams[i].task_rank + task2.teams[i].task_rank);
  }
  const auto final_ranks = rank_values(final_scores, RankDirection::LowerBetter);

  RankTable out;
  for (std::size_t i = 0; i < task1.teams.size(); ++i) {
    out.rows.push_back({task1.teams[i].team, task1.teams[i], task2.teams[i], final_scores[i],
                        final_ranks[i]});
  }
  return out;
}

RankTable leaderboard_from_table(const MetricTable& table) {
  return final_leaderboard(task_ranks(table, 1), task_ranks(table, 2));
}

// --- Wilcoxon ----------------------------------------------------------------

namespace {

struct SignedRanks {
  std::vector<double> ranks;  // average ranks of |d|
  std::vector<int> signs;
  double w_plus = 0.0;
  double tie_sum = 0.0;  // sum over tie groups of t^3 - t
};

SignedRanks rank_abs_differences(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw ValidationError("wilcoxon_signed_rank: unpaired samples (length mismatch)");
  }
  std::vector<double> abs_d;
  std::vector<int> signs;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw ValidationError("wilcoxon_signed_rank: non-finite value");
    }
    const double d = x[i] - y[i];
    if (d == 0.0) continue;
    abs_d.push_back(std::abs(d));
    signs.push_back(d > 0.0 ? 1 : -1);
  }
  if (abs_d.empty()) {
    throw ComputationError("degenerate paired sample: all differences are zero");
  }

  const std::size_t n = abs_d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return abs_d[a] < abs_d[b]; });

  SignedRanks out;
  out.ranks.assign(n, 0.0);
  out.signs = std::move(signs);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && abs_d[order[j + 1]] == abs_d[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) out.ranks[order[k]] = avg_rank;
    const double t = static_cast<double>(j - i + 1);
    out.tie_sum += t * t * t - t;
    i = j + 1;
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (out.signs[k] > 0) out.w_plus += out.ranks[k];
  }
  return out;
}

double wilcoxon_exact_p(const SignedRanks& sr) {
  const std::size_t n = sr.ranks.size();
  if (n > 500) {
    throw ValidationError("wilcoxon exact mode supports n <= 500; use normal_approx");
  }
  // Distribution of 2*W+ over all 2^n sign assignments via the generating
  // function product (1 + z^{2 r_i}); average ranks make 2 r_i integral.
  std::vector<long long> scaled(n);
  long long total_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    scaled[i] = std::llround(2.0 * sr.ranks[i]);
    total_sum += scaled[i];
  }
  std::vector<double> count(static_cast<std::size_t>(total_sum) + 1, 0.0);
  count[0] = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (long long w = total_sum; w >= scaled[i]; --w) {
      count[w] += count[w - scaled[i]];
    }
  }
  const double total = std::pow(2.0, static_cast<double>(n));
  const long long w_obs = std::llround(2.0 * sr.w_plus);
  double p_le = 0.0, p_ge = 0.0;
  for (long long w = 0; w <= total_sum; ++w) {
    if (w <= w_obs) p_le += count[w];
    if (w >= w_obs) p_ge += count[w];
  }
  const double p = 2.0 * std::min(p_le, p_ge) / total;
  return std::min(1.0, p);
}

double wilcoxon_normal_p(const SignedRanks& sr) {
  const double n = static_cast<double>(sr.ranks.size());
  const double mean = n * (n + 1.0) / 4.0;
  const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - sr.tie_sum / 48.0;
  const double diff = sr.w_plus - mean;
  const double correction = diff > 0.0 ? 0.5 : (diff < 0.0 ? -0.5 : 0.0);
  const double z = (diff - correction) / std::sqrt(var);
  const double p = std::erfc(std::abs(z) / std::sqrt(2.0));
  return std::min(1.0, std::max(0.0, p));
}

}  // namespace

double wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y,
                            WilcoxonMode mode) {
  const SignedRanks sr = rank_abs_differences(x, y);
  if (mode == WilcoxonMode::Auto) {
    mode = sr.ranks.size() <= 25 ? WilcoxonMode::Exact : WilcoxonMode::NormalApprox;
  }
  return mode == WilcoxonMode::Exact ? wilcoxon_exact_p(sr) : wilcoxon_normal_p(sr);
}

// --- Bootstrap ----------------------------------------------------------------

namespace {

struct CenterFrame {
  std::string center;
  std::size_t num_cases = 0;
  // Per team, aligned with the shared case order of this center.
  std::vector<std::vector<int>> truths;  // [team][case]
  std::vector<std::vector<int>> preds;
};

/// Validates pairing and rearranges predictions into per-center frames with
/// team-major label arrays.
std::vector<CenterFrame> build_frames(std::span<const TeamPredictions> teams) {
  if (teams.empty()) throw ValidationError("bootstrap_ranking: no teams");
  const auto& reference = teams.front();
  for (const auto& team : teams) {
    if (team.by_center.size() != reference.by_center.size()) {
      throw ValidationError("bootstrap_ranking: team '" + team.team +
                            "' covers a different center set");
    }
  }

  std::vector<CenterFrame> frames;
  for (const auto& [center, ref_group] : reference.by_center) {
    CenterFrame frame;
    frame.center = center;
    frame.num_cases = ref_group.truths.size();
    if (frame.num_cases == 0) {
      throw ValidationError("bootstrap_ranking: center '" + center + "' has no cases");
    }
    for (const auto& team : teams) {
      auto it = team.by_center.find(center);
      if (it == team.by_center.end()) {
        throw ValidationError("bootstrap_ranking: team '" + team.team +
                              "' is missing center '" + center + "'");
      }
      const auto& group = it->second;
      const bool same_cases =
          group.truths.size() == frame.num_cases &&
          group.truths == ref_group.truths &&
          (group.case_ids.empty() || ref_group.case_ids.empty() ||
           group.case_ids == ref_group.case_ids);
      if (!same_cases) {
        throw ValidationError("bootstrap_ranking: unpaired case sets for team '" + team.team +
                              "' at center '" + center + "'");
      }
      frame.truths.push_back(group.truths);
      frame.preds.push_back(group.preds);
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

std::vector<CenterFrame> pool_frames(const std::vector<CenterFrame>& frames) {
  CenterFrame pooled;
  pooled.center = "pooled";
  const std::size_t n_teams = frames.front().truths.size();
  pooled.truths.resize(n_teams);
  pooled.preds.resize(n_teams);
  for (const auto& frame : frames) {
    pooled.num_cases += frame.num_cases;
    for (std::size_t t = 0; t < n_teams; ++t) {
      pooled.truths[t].insert(pooled.truths[t].end(), frame.truths[t].begin(),
                              frame.truths[t].end());
      pooled.preds[t].insert(pooled.preds[t].end(), frame.preds[t].begin(),
                             frame.preds[t].end());
    }
  }
  return {std::move(pooled)};
}

double metric_from_counts(const std::vector<std::int64_t>& counts, int c, Metric metric,
                          F1Convention convention) {
  ConfusionMatrix cm(LabelSpace{c});
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < c; ++j) {
      const auto n = counts[static_cast<std::size_t>(i) * c + j];
      if (n) cm.add(i, j, n);
    }
  }
  return metric == Metric::F1 ? macro_f1(cm, convention) : expected_cost(cm);
}

double percentile_nearest_rank(const std::vector<double>& sorted, double q) {
  const std::size_t n = sorted.size();
  const auto idx = static_cast<std::size_t>(
      std::max<long long>(0, std::llround(std::ceil(q * static_cast<double>(n))) - 1));
  return sorted[std::min(idx, n - 1)];
}

}  // namespace

BootstrapResult bootstrap_ranking(std::span<const TeamPredictions> teams,
                                  const BootstrapSpec& spec) {
  if (spec.iterations < 1) throw ValidationError("bootstrap_ranking: iterations must be >= 1");
  if (spec.metrics.empty()) throw ValidationError("bootstrap_ranking: no metrics requested");
  if (teams.size() > 255) {
    throw ValidationError("bootstrap_ranking: at most 255 teams supported");
  }

  auto frames = build_frames(teams);
  if (!spec.stratified) frames = pool_frames(frames);

  const std::size_t n_teams = teams.size();
  const std::size_t n_metrics = spec.metrics.size();
  const int c = spec.labels.num_classes;
  const int b_total = spec.iterations;

  BootstrapResult result;
  result.iterations = b_total;
  for (const auto& team : teams) result.teams.push_back(team.team);

  // values[m][team * B + b]; ranks likewise, stored per iteration.
  std::vector<std::vector<double>> values(n_metrics,
                                          std::vector<double>(n_teams * b_total, 0.0));
  std::vector<std::vector<std::uint8_t>> ranks(n_metrics,
                                               std::vector<std::uint8_t>(n_teams * b_total, 0));

  auto run_chunk = [&](int b_begin, int b_end) {
    std::vector<std::size_t> indices;
    std::vector<std::int64_t> counts(static_cast<std::size_t>(c) * c, 0);
    std::vector<double> team_metric(n_teams);
    std::vector<std::vector<double>> sums(n_metrics, std::vector<double>(n_teams, 0.0));
    for (int b = b_begin; b < b_end; ++b) {
      auto rng = make_rng(derive_seed(spec.seed, static_cast<std::uint64_t>(b)));
      for (auto& row : sums) std::fill(row.begin(), row.end(), 0.0);

      for (const auto& frame : frames) {
        indices.resize(frame.num_cases);
        std::uniform_int_distribution<std::size_t> pick(0, frame.num_cases - 1);
        for (auto& idx : indices) idx = pick(rng);

        for (std::size_t t = 0; t < n_teams; ++t) {
          std::fill(counts.begin(), counts.end(), 0);
          const auto& truths = frame.truths[t];
          const auto& preds = frame.preds[t];
          for (const std::size_t idx : indices) {
            counts[static_cast<std::size_t>(truths[idx]) * c + preds[idx]] += 1;
          }
          for (std::size_t m = 0; m < n_metrics; ++m) {
            sums[m][t] += metric_from_counts(counts, c, spec.metrics[m], spec.f1_convention);
          }
        }
      }

      const double inv_centers = 1.0 / static_cast<double>(frames.size());
      for (std::size_t m = 0; m < n_metrics; ++m) {
        for (std::size_t t = 0; t < n_teams; ++t) team_metric[t] = sums[m][t] * inv_centers;
        const auto r = rank_values(team_metric, lower_is_better(spec.metrics[m])
                                                    ? RankDirection::LowerBetter
                                                    : RankDirection::HigherBetter);
        for (std::size_t t = 0; t < n_teams; ++t) {
          values[m][t * b_total + b] = team_metric[t];
          ranks[m][t * b_total + b] = static_cast<std::uint8_t>(r[t]);
        }
      }
    }
  };

  const int workers = std::max(1, spec.workers);
  if (workers == 1) {
    run_chunk(0, b_total);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (b_total + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const int begin = w * chunk;
      const int end = std::min(b_total, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(run_chunk, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  // Full-sample metrics for the original ranking.
  const double alpha = 1.0 - spec.ci_level;
  for (std::size_t m = 0; m < n_metrics; ++m) {
    MetricBootstrap mb;
    mb.metric = spec.metrics[m];

    std::vector<double> original(n_teams, 0.0);
    for (const auto& frame : frames) {
      std::vector<std::int64_t> counts(static_cast<std::size_t>(c) * c, 0);
      for (std::size_t t = 0; t < n_teams; ++t) {
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t k = 0; k < frame.num_cases; ++k) {
          counts[static_cast<std::size_t>(frame.truths[t][k]) * c + frame.preds[t][k]] += 1;
        }
        original[t] += metric_from_counts(counts, c, spec.metrics[m], spec.f1_convention);
      }
    }
    for (auto& v : original) v /= static_cast<double>(frames.size());
    mb.original_value = original;
    mb.original_rank = rank_values(original, lower_is_better(spec.metrics[m])
                                                 ? RankDirection::LowerBetter
                                                 : RankDirection::HigherBetter);

    mb.rank_freq.assign(n_teams, std::vector<double>(n_teams, 0.0));
    mb.median_rank.assign(n_teams, 0.0);
    mb.ci_lo.assign(n_teams, 0.0);
    mb.ci_hi.assign(n_teams, 0.0);
    std::vector<double> team_ranks(b_total);
    for (std::size_t t = 0; t < n_teams; ++t) {
      for (int b = 0; b < b_total; ++b) {
        const int r = ranks[m][t * b_total + b];
        mb.rank_freq[t][static_cast<std::size_t>(r - 1)] += 1.0;
        team_ranks[b] = r;
      }
      for (auto& f : mb.rank_freq[t]) f /= static_cast<double>(b_total);
      std::sort(team_ranks.begin(), team_ranks.end());
      mb.median_rank[t] = b_total % 2 == 1
                              ? team_ranks[b_total / 2]
                              : 0.5 * (team_ranks[b_total / 2 - 1] + team_ranks[b_total / 2]);
      mb.ci_lo[t] = percentile_nearest_rank(team_ranks, alpha / 2.0);
      mb.ci_hi[t] = percentile_nearest_rank(team_ranks, 1.0 - alpha / 2.0);
    }

    mb.win_prob.assign(n_teams, std::vector<double>(n_teams, kNaN));
    mb.wilcoxon_p.assign(n_teams, std::vector<double>(n_teams, kNaN));
    for (std::size_t a = 0; a < n_teams; ++a) {
      for (std::size_t bt = 0; bt < n_teams; ++bt) {
        if (a == bt) continue;
        std::int64_t wins = 0;
        for (int b = 0; b < b_total; ++b) {
          if (ranks[m][a * b_total + b] < ranks[m][bt * b_total + b]) ++wins;
        }
        mb.win_prob[a][bt] = static_cast<double>(wins) / static_cast<double>(b_total);
        if (a < bt) {
          std::span<const double> va(values[m].data() + a * b_total,
                                     static_cast<std::size_t>(b_total));
          std::span<const double> vb(values[m].data() + bt * b_total,
                                     static_cast<std::size_t>(b_total));
          double p;
          try {
            p = wilcoxon_signed_rank(va, vb, spec.wilcoxon_mode);
          } catch (const ComputationError&) {
            p = kNaN;  // identical metric streams carry no signal
          }
          mb.wilcoxon_p[a][bt] = p;
          mb.wilcoxon_p[bt][a] = p;
        }
      }
    }
    result.per_metric.push_back(std::move(mb));
  }
  return result;
}

// --- Report files ------------------------------------------------------------

void write_leaderboard_csv(const RankTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "team,task1_ec_rank,task1_f1_rank,task1_avg_rank,"
         "task2_ec_rank,task2_f1_rank,task2_avg_rank,final_rank\n";
  for (const auto& row : table.rows) {
    out << row.team << ',' << fmt_rank(row.task1.ec_rank) << ',' << fmt_rank(row.task1.f1_rank)
        << ',' << fmt_rank(row.task1.task_rank) << ',' << fmt_rank(row.task2.ec_rank) << ','
        << fmt_rank(row.task2.f1_rank) << ',' << fmt_rank(row.task2.task_rank) << ','
        << fmt_rank(row.final_rank) << '\n';
  }
}

void write_bootstrap_csvs(std::span<const LabeledBootstrap> results,
                          const std::filesystem::path& dir) {
  std::ofstream freq(dir / "bootstrap_rankfreq.csv");
  std::ofstream win(dir / "winprob.csv");
  std::ofstream wilcox(dir / "wilcoxon.csv");
  std::ofstream plot(dir / "rankstability_plotdata.csv");
  if (!freq || !win || !wilcox || !plot) {
    throw ValidationError("cannot write bootstrap outputs into " + dir.string());
  }
  freq << "task,metric,team,rank,frequency\n";
  win << "task,metric,team,opponent,win_prob\n";
  wilcox << "task,metric,team,opponent,p_value\n";
  plot << "task,metric,team,rank,frequency,median,ci_lo,ci_hi\n";

  for (const auto& labeled : results) {
    const auto& teams = labeled.result.teams;
    for (const auto& mb : labeled.result.per_metric) {
      const auto name = metric_name(mb.metric);
      for (std::size_t t = 0; t < teams.size(); ++t) {
        for (std::size_t r = 0; r < teams.size(); ++r) {
          freq << labeled.task << ',' << name << ',' << teams[t] << ',' << (r + 1) << ','
               << fmt_double(mb.rank_freq[t][r]) << '\n';
          plot << labeled.task << ',' << name << ',' << teams[t] << ',' << (r + 1) << ','
               << fmt_double(mb.rank_freq[t][r]) << ',' << fmt_double(mb.median_rank[t]) << ','
               << fmt_rank(mb.ci_lo[t]) << ',' << fmt_rank(mb.ci_hi[t]) << '\n';
        }
        for (std::size_t o = 0; o < teams.size(); ++o) {
          if (o == t) continue;
          win << labeled.task << ',' << name << ',' << teams[t] << ',' << teams[o] << ','
              << fmt_double(mb.win_prob[t][o]) << '\n';
          wilcox << labeled.task << ',' << name << ',' << teams[t] << ',' << teams[o] << ','
                 << fmt_double(mb.wilcoxon_p[t][o]) << '\n';
        }
      }
    }
  }
}

}  // namespace fedsurg
