#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedsurg/datagen.hpp"
#include "fedsurg/metric_table.hpp"
#include "fedsurg/metrics.hpp"

namespace fedsurg {

enum class RankDirection { LowerBetter, HigherBetter };

/// Competition ("min") ranking: the best value gets rank 1, exact ties share
/// the minimal rank, and the next distinct value accounts for the tie-group
/// size. Throws ValidationError on empty or non-finite input.
std::vector<double> rank_values(std::span<const double> values, RankDirection direction);

struct TeamTaskRanks {
  std::string team;
  double ec_value = 0.0;  // task 2: arithmetic mean across the task's centers
  double f1_value = 0.0;
  double ec_rank = 0.0;
  double f1_rank = 0.0;
  double avg_rank = 0.0;   // mean of the two metric ranks
  double task_rank = 0.0;  // rank of avg_rank across teams, lower better
};

struct TaskRanking {
  int task = 1;
  std::vector<TeamTaskRanks> teams;  // sorted by team name
};

/// Per-metric ranks for one task. Task 2 averages each metric across the
/// task's centers before ranking; task 1 normally has the single hold-out
/// center. Missing cells raise a ValidationError listing every gap.
TaskRanking task_ranks(const MetricTable& table, int task);

struct LeaderboardRow {
  std::string team;
  TeamTaskRanks task1;
  TeamTaskRanks task2;
  double final_score = 0.0;  // mean of the two task ranks
  double final_rank = 0.0;
};

struct RankTable {
  std::vector<LeaderboardRow> rows;  // sorted by team name
};

/// Throws ValidationError if the two rankings cover different team sets.
RankTable final_leaderboard(const TaskRanking& task1, const TaskRanking& task2);

RankTable leaderboard_from_table(const MetricTable& table);

// --- Wilcoxon signed-rank test ---------------------------------------------

enum class WilcoxonMode { Exact, NormalApprox, Auto };

/// Two-sided paired Wilcoxon signed-rank p-value. Zero differences are
/// dropped; tied |d| get average ranks. Exact mode evaluates the full
/// distribution of W+ over all 2^n sign assignments (n <= 500); the normal
/// approximation applies tie and continuity corrections. Auto picks exact
/// for n <= 25. Throws ComputationError when all differences are zero.
double wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y,
                            WilcoxonMode mode = WilcoxonMode::Auto);

// --- Bootstrap rank stability ----------------------------------------------

struct BootstrapSpec {
  int iterations = 10000;
  std::uint64_t seed = 0;
  int workers = 1;
  /// Resample within each center and average metrics across centers per
  /// iteration; false pools all cases into one resampling frame.
  bool stratified = true;
  LabelSpace labels;
  F1Convention f1_convention = F1Convention::IncludeAbsent;
  std::vector<Metric> metrics = {Metric::EC, Metric::F1};
  double ci_level = 0.95;
  WilcoxonMode wilcoxon_mode = WilcoxonMode::Auto;
};

struct MetricBootstrap {
  Metric metric = Metric::F1;
  std::vector<double> original_value;            // full-sample metric per team
  std::vector<double> original_rank;
  std::vector<std::vector<double>> rank_freq;    // [team][rank-1]; rows sum to 1
  std::vector<double> median_rank;
  std::vector<double> ci_lo;
  std::vector<double> ci_hi;
  std::vector<std::vector<double>> win_prob;     // [a][b] = P(a strictly outranks b); diagonal NaN
  std::vector<std::vector<double>> wilcoxon_p;   // pairwise, on the B per-iteration values; diagonal NaN
};

struct BootstrapResult {
  int iterations = 0;
  std::vector<std::string> teams;
  std::vector<MetricBootstrap> per_metric;
};

/// Paired case resampling: each iteration draws one resample of case indices
/// and applies it to every team. Iteration b uses an RNG stream derived from
/// (seed, b), so results are identical for any worker count. Throws
/// ValidationError when the teams' case sets are not paired.
BootstrapResult bootstrap_ranking(std::span<const TeamPredictions> teams,
                                  const BootstrapSpec& spec);

// --- Report files ------------------------------------------------------------

void write_leaderboard_csv(const RankTable& table, const std::filesystem::path& path);

struct LabeledBootstrap {
  int task = 1;
  BootstrapResult result;
};

/// Emits bootstrap_rankfreq.csv, winprob.csv, wilcoxon.csv and
/// rankstability_plotdata.csv into `dir`.
void write_bootstrap_csvs(std::span<const LabeledBootstrap> results,
                          const std::filesystem::path& dir);

}  // namespace fedsurg
