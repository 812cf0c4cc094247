#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedsurg/datagen.hpp"
#include "fedsurg/fedsim.hpp"
#include "fedsurg/ranking.hpp"

namespace fedsurg::cli {

struct EvaluationConfig {
  int bootstrap_iters = 10000;
  std::vector<Metric> metrics = {Metric::EC, Metric::F1};
  double ci_level = 0.95;
  WilcoxonMode wilcoxon_mode = WilcoxonMode::Auto;
  int workers = 1;
  F1Convention f1_convention = F1Convention::IncludeAbsent;
  std::string holdout_center = "4";
  bool stratified = true;
};

/// One experiment: where the data comes from, which pipelines run, and how
/// results are evaluated. Parsed from a JSON file with sections `data`,
/// `pipelines` and `evaluation`; unknown keys anywhere are rejected.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output = "out";
  std::optional<std::string> data_path;  // otherwise data is generated
  GeneratorConfig generator = GeneratorConfig::desk_scale();
  std::vector<StrategyPipeline> pipelines;
  EvaluationConfig evaluation;
};

ExperimentConfig default_experiment_config();

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

WilcoxonMode parse_wilcoxon_mode(const std::string& name);

/// Pushes the master seed, hold-out center and F1 convention into every
/// pipeline's federated config.
void finalize_pipelines(ExperimentConfig& config);

}  // namespace fedsurg::cli
