#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "experiment_config.hpp"
#include "fedsurg/datagen.hpp"
#include "fedsurg/errors.hpp"
#include "fedsurg/fedsim.hpp"
#include "fedsurg/json_io.hpp"
#include "fedsurg/metrics.hpp"
#include "fedsurg/ranking.hpp"
#include "fedsurg/rng.hpp"

namespace fedsurg::cli {
namespace {

namespace fs = std::filesystem;

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", v * 100.0);
  return buf;
}

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  std::string f1_convention;
};

ExperimentConfig resolve_config(const CommonArgs& args) {
  ExperimentConfig config = args.config_path.empty()
                                ? default_experiment_config()
                                : load_experiment_config(args.config_path);
  if (args.seed_set) config.seed = args.seed;
  if (!args.out.empty()) config.output = args.out;
  if (!args.f1_convention.empty()) {
    config.evaluation.f1_convention = parse_f1_convention(args.f1_convention);
  }
  config.generator.seed = config.seed;
  return config;
}

// --- gen-data ---------------------------------------------------------------

int cmd_gen_data(const CommonArgs& args) {
  ExperimentConfig config = resolve_config(args);
  const auto centers = generate_multicenter(config.generator);
  save_dataset(centers, config.generator, config.output);
  std::cout << "wrote dataset bundle to " << config.output << "\n";
  for (const auto& center : centers) {
    std::cout << "  center " << center.center_id << ": " << center.train.size() << " train / "
              << center.test.size() << " test\n";
  }
  return 0;
}

// --- simulate ---------------------------------------------------------------

int cmd_simulate(const CommonArgs& args, const std::string& data_path,
                 const std::vector<std::string>& pipeline_names) {
  ExperimentConfig config = resolve_config(args);

  std::vector<CenterDataset> centers;
  std::string provenance;
  std::string effective_path = !data_path.empty() ? data_path
                               : config.data_path ? *config.data_path
                                                  : "";
  if (!effective_path.empty()) {
    auto loaded = load_dataset(effective_path);
    centers = std::move(loaded.centers);
    provenance = nlohmann::json{{"path", effective_path}}.dump();
  } else {
    centers = generate_multicenter(config.generator);
    provenance = nlohmann::json{{"generator", generator_config_to_json(config.generator)}}.dump();
  }

  if (!pipeline_names.empty()) {
    std::vector<StrategyPipeline> selected;
    for (const auto& name : pipeline_names) {
      bool found = false;
      for (const auto& p : config.pipelines) {
        if (p.name == name) {
          selected.push_back(p);
          found = true;
          break;
        }
      }
      if (!found) selected.push_back(StrategyPipeline::preset(name));
    }
    config.pipelines = std::move(selected);
  }
  finalize_pipelines(config);

  ChallengeResult result = run_challenge(config.pipelines, centers);
  result.data_provenance = provenance;
  write_results_bundle(result, config.pipelines, config.output);

  std::printf("%-18s %10s %10s %10s %10s\n", "pipeline", "task1 EC", "task1 F1", "task2 EC",
              "task2 F1");
  for (const auto& pr : result.pipelines) {
    std::printf("%-18s %10s %10s %10s %10s\n", pr.pipeline.c_str(),
                pct(pr.task1.expected_cost).c_str(), pct(pr.task1.f1_macro).c_str(),
                pct(pr.task2.average.expected_cost).c_str(),
                pct(pr.task2.average.f1_macro).c_str());
  }
  std::cout << "results bundle written to " << config.output << "\n";
  return 0;
}

// --- rank ---------------------------------------------------------------------

void print_leaderboard(const RankTable& table) {
  std::printf("%-14s %5s %5s %6s %5s %5s %6s %6s\n", "team", "t1.EC", "t1.F1", "t1.avg",
              "t2.EC", "t2.F1", "t2.avg", "final");
  auto rank_str = [](double v) {
    char buf[16];
    if (v == static_cast<long long>(v)) {
      std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(v));
    } else {
      std::snprintf(buf, sizeof(buf), "%.1f", v);
    }
    return std::string(buf);
  };
  for (const auto& row : table.rows) {
    std::printf("%-14s %5s %5s %6s %5s %5s %6s %6s\n", row.team.c_str(),
                rank_str(row.task1.ec_rank).c_str(), rank_str(row.task1.f1_rank).c_str(),
                rank_str(row.task1.task_rank).c_str(), rank_str(row.task2.ec_rank).c_str(),
                rank_str(row.task2.f1_rank).c_str(), rank_str(row.task2.task_rank).c_str(),
                rank_str(row.final_rank).c_str());
  }
}

MetricTable table_from_predictions(std::span<const TeamPredictions> teams,
                                   const std::string& holdout, LabelSpace labels,
                                   F1Convention convention) {
  MetricTable table;
  for (const auto& team : teams) {
    for (const auto& [center, group] : team.by_center) {
      const auto cm = build_confusion_matrix(group.truths, group.preds, labels);
      const int task = center == holdout ? 1 : 2;
      table.insert({team.team, task, center, Metric::F1}, macro_f1(cm, convention));
      table.insert({team.team, task, center, Metric::EC}, expected_cost(cm));
    }
  }
  return table;
}

std::vector<TeamPredictions> filter_task(std::span<const TeamPredictions> teams,
                                         const std::string& holdout, int task) {
  std::vector<TeamPredictions> out;
  for (const auto& team : teams) {
    TeamPredictions filtered;
    filtered.team = team.team;
    for (const auto& [center, group] : team.by_center) {
      if ((center == holdout) == (task == 1)) filtered.by_center.emplace(center, group);
    }
    if (!filtered.by_center.empty()) out.push_back(std::move(filtered));
  }
  return out;
}

int cmd_rank(const CommonArgs& args, const std::string& metric_table_path,
             const std::string& predictions_path, int bootstrap_iters, int workers,
             const std::string& wilcoxon_mode, const std::string& holdout, bool pooled,
             double ci_level, int num_classes) {
  ExperimentConfig config = resolve_config(args);
  auto& eval = config.evaluation;
  if (bootstrap_iters > 0) eval.bootstrap_iters = bootstrap_iters;
  if (workers > 0) eval.workers = workers;
  if (!wilcoxon_mode.empty()) eval.wilcoxon_mode = parse_wilcoxon_mode(wilcoxon_mode);
  if (!holdout.empty()) eval.holdout_center = holdout;
  if (pooled) eval.stratified = false;
  if (ci_level > 0.0) eval.ci_level = ci_level;

  if (metric_table_path.empty() == predictions_path.empty()) {
    throw ValidationError("rank needs exactly one of --metric-table or --predictions");
  }

  const fs::path out_dir = config.output;
  std::error_code ec;
  fs::create_directories(out_dir, ec);

  if (!metric_table_path.empty()) {
    const auto table = load_metric_table(metric_table_path);
    const auto leaderboard = leaderboard_from_table(table);
    write_leaderboard_csv(leaderboard, out_dir / "leaderboard.csv");
    print_leaderboard(leaderboard);
    std::cout << "leaderboard written to " << (out_dir / "leaderboard.csv").string() << "\n";
    return 0;
  }

  const LabelSpace labels{num_classes};
  const auto teams = load_predictions(predictions_path, labels);
  if (teams.empty()) throw ValidationError("predictions file contains no rows");

  const auto table =
      table_from_predictions(teams, eval.holdout_center, labels, eval.f1_convention);
  if (!table.has_task(1)) {
    throw ValidationError("no predictions for hold-out center '" + eval.holdout_center + "'");
  }
  if (!table.has_task(2)) {
    throw ValidationError("no predictions outside the hold-out center; cannot rank task 2");
  }
  const auto leaderboard = leaderboard_from_table(table);
  write_leaderboard_csv(leaderboard, out_dir / "leaderboard.csv");
  print_leaderboard(leaderboard);

  BootstrapSpec spec;
  spec.iterations = eval.bootstrap_iters;
  spec.seed = config.seed;
  spec.workers = eval.workers;
  spec.labels = labels;
  spec.f1_convention = eval.f1_convention;
  spec.metrics = eval.metrics;
  spec.ci_level = eval.ci_level;
  spec.wilcoxon_mode = eval.wilcoxon_mode;

  std::vector<LabeledBootstrap> results;
  {
    BootstrapSpec task1_spec = spec;
    task1_spec.stratified = true;  // single center; stratification is a no-op
    const auto task1_teams = filter_task(teams, eval.holdout_center, 1);
    results.push_back({1, bootstrap_ranking(task1_teams, task1_spec)});
  }
  {
    BootstrapSpec task2_spec = spec;
    task2_spec.stratified = eval.stratified;
    task2_spec.seed = derive_seed(config.seed, 2);
    const auto task2_teams = filter_task(teams, eval.holdout_center, 2);
    results.push_back({2, bootstrap_ranking(task2_teams, task2_spec)});
  }
  write_bootstrap_csvs(results, out_dir);
  std::cout << "leaderboard and bootstrap outputs written to " << out_dir.string() << "\n";
  return 0;
}

// --- metrics -------------------------------------------------------------------

int cmd_metrics(const CommonArgs& args, const std::string& predictions_path, int num_classes) {
  ExperimentConfig config = resolve_config(args);
  const LabelSpace labels{num_classes};
  const auto teams = load_predictions(predictions_path, labels);
  if (teams.empty()) throw ValidationError("predictions file contains no rows");

  const fs::path out_path = args.out.empty() ? fs::path("metrics.csv") : fs::path(args.out);
  std::ofstream out(out_path);
  if (!out) throw ValidationError("cannot write " + out_path.string());
  out << "team,center,n,f1_macro,expected_cost\n";
  std::printf("%-14s %-8s %6s %10s %10s\n", "team", "center", "n", "F1", "EC");
  for (const auto& team : teams) {
    for (const auto& [center, group] : team.by_center) {
      const auto report = metric_report(
          build_confusion_matrix(group.truths, group.preds, labels),
          config.evaluation.f1_convention);
      char f1_buf[32], ec_buf[32];
      std::snprintf(f1_buf, sizeof(f1_buf), "%.12g", report.f1_macro);
      std::snprintf(ec_buf, sizeof(ec_buf), "%.12g", report.expected_cost);
      out << team.team << ',' << center << ',' << group.truths.size() << ',' << f1_buf << ','
          << ec_buf << '\n';
      std::printf("%-14s %-8s %6zu %10s %10s\n", team.team.c_str(), center.c_str(),
                  group.truths.size(), pct(report.f1_macro).c_str(),
                  pct(report.expected_cost).c_str());
    }
  }
  std::cout << "metric report written to " << out_path.string() << "\n";
  return 0;
}

}  // namespace
}  // namespace fedsurg::cli

int main(int argc, char** argv) try {
  using namespace fedsurg;
  using namespace fedsurg::cli;

  CLI::App app{"fedsurg: federated-learning challenge engine"};
  app.require_subcommand(1);

  CommonArgs common;
  auto add_common = [&common](CLI::App* cmd) {
    cmd->add_option("--config", common.config_path, "experiment config file (JSON)");
    cmd->add_option("--seed", common.seed, "master seed")->each([&common](const std::string&) {
      common.seed_set = true;
    });
    cmd->add_option("--out", common.out, "output directory or file");
    cmd->add_option("--f1-absent-convention", common.f1_convention,
                    "include-absent|exclude-absent");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-center dataset");
  add_common(gen);

  auto* sim = app.add_subcommand("simulate", "run federated training plus both tasks");
  add_common(sim);
  std::string sim_data;
  std::vector<std::string> sim_pipelines;
  sim->add_option("--data", sim_data, "dataset bundle (directory or manifest.json)");
  sim->add_option("--pipelines", sim_pipelines, "comma-separated pipeline names")
      ->delimiter(',');

  auto* rank = app.add_subcommand("rank", "leaderboard and bootstrap rank stability");
  add_common(rank);
  std::string rank_table, rank_preds, rank_wilcoxon, rank_holdout;
  int rank_iters = 0, rank_workers = 0, rank_classes = 6;
  double rank_ci = 0.0;
  bool rank_pooled = false;
  rank->add_option("--metric-table", rank_table, "team,task,center,metric,value CSV");
  rank->add_option("--predictions", rank_preds, "per-case predictions CSV");
  rank->add_option("--bootstrap-iters", rank_iters, "bootstrap iterations (default 10000)");
  rank->add_option("--workers", rank_workers, "bootstrap worker threads");
  rank->add_option("--wilcoxon-mode", rank_wilcoxon, "exact|normal_approx|auto");
  rank->add_option("--holdout-center", rank_holdout, "center treated as task 1 (default 4)");
  rank->add_flag("--pooled", rank_pooled, "pool task-2 centers instead of stratifying");
  rank->add_option("--ci-level", rank_ci, "bootstrap CI level (default 0.95)");
  rank->add_option("--num-classes", rank_classes, "label count (default 6)");

  auto* metrics = app.add_subcommand("metrics", "per-team, per-center metric report");
  add_common(metrics);
  std::string metrics_preds;
  int metrics_classes = 6;
  metrics->add_option("--predictions", metrics_preds, "per-case predictions CSV")->required();
  metrics->add_option("--num-classes", metrics_classes, "label count (default 6)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(common);
    if (sim->parsed()) return cmd_simulate(common, sim_data, sim_pipelines);
    if (rank->parsed()) {
      return cmd_rank(common, rank_table, rank_preds, rank_iters, rank_workers, rank_wilcoxon,
                      rank_holdout, rank_pooled, rank_ci, rank_classes);
    }
    if (metrics->parsed()) return cmd_metrics(common, metrics_preds, metrics_classes);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ComputationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
} catch (const std::exception& e) {
  std::cerr << "error: " << e.what() << "\n";
  return 2;
}
