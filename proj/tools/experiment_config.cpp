#include "experiment_config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "fedsurg/errors.hpp"
#include "fedsurg/json_io.hpp"

namespace fedsurg::cli {

using nlohmann::json;

WilcoxonMode parse_wilcoxon_mode(const std::string& name) {
  if (name == "exact") return WilcoxonMode::Exact;
  if (name == "normal" || name == "normal_approx") return WilcoxonMode::NormalApprox;
  if (name == "auto") return WilcoxonMode::Auto;
  throw ValidationError("unknown wilcoxon mode '" + name + "' (exact|normal_approx|auto)");
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig config;
  for (const auto& name : StrategyPipeline::preset_names()) {
    config.pipelines.push_back(StrategyPipeline::preset(name));
  }
  return config;
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const char* where) {
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) {
      throw ValidationError(std::string(where) + ": unknown key '" + key + "'");
    }
  }
}

EvaluationConfig parse_evaluation(const json& j, EvaluationConfig base) {
  reject_unknown(j,
                 {"bootstrap_iters", "metrics", "ci_level", "wilcoxon_mode", "workers",
                  "f1_absent_convention", "holdout_center", "stratified"},
                 "evaluation");
  base.bootstrap_iters = j.value("bootstrap_iters", base.bootstrap_iters);
  if (j.contains("metrics")) {
    base.metrics.clear();
    for (const auto& m : j.at("metrics")) base.metrics.push_back(parse_metric(m));
  }
  base.ci_level = j.value("ci_level", base.ci_level);
  if (j.contains("wilcoxon_mode")) {
    base.wilcoxon_mode = parse_wilcoxon_mode(j.at("wilcoxon_mode"));
  }
  base.workers = j.value("workers", base.workers);
  if (j.contains("f1_absent_convention")) {
    base.f1_convention = parse_f1_convention(j.at("f1_absent_convention"));
  }
  base.holdout_center = j.value("holdout_center", base.holdout_center);
  base.stratified = j.value("stratified", base.stratified);
  return base;
}

}  // namespace

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  reject_unknown(j, {"seed", "output", "data", "pipelines", "evaluation"}, "config");

  ExperimentConfig config;
  try {
    config.seed = j.value("seed", config.seed);
    config.output = j.value("output", config.output);

    if (j.contains("data")) {
      const auto& jd = j.at("data");
      reject_unknown(jd, {"path", "generator"}, "data");
      if (jd.contains("path") && jd.contains("generator")) {
        throw ValidationError("data: give either 'path' or 'generator', not both");
      }
      if (jd.contains("path")) {
        config.data_path = jd.at("path").get<std::string>();
      } else if (jd.contains("generator")) {
        config.generator = generator_config_from_json(jd.at("generator"));
      }
    }

    if (j.contains("pipelines")) {
      for (const auto& jp : j.at("pipelines")) {
        if (jp.is_string()) {
          config.pipelines.push_back(StrategyPipeline::preset(jp.get<std::string>()));
        } else if (jp.is_object()) {
          StrategyPipeline base;
          if (jp.contains("base")) {
            base = StrategyPipeline::preset(jp.at("base").get<std::string>());
          }
          config.pipelines.push_back(pipeline_from_json(jp, base));
        } else {
          throw ValidationError("pipelines entries must be preset names or objects");
        }
      }
    } else {
      for (const auto& name : StrategyPipeline::preset_names()) {
        config.pipelines.push_back(StrategyPipeline::preset(name));
      }
    }

    if (j.contains("evaluation")) {
      config.evaluation = parse_evaluation(j.at("evaluation"), config.evaluation);
    }
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return config;
}

void finalize_pipelines(ExperimentConfig& config) {
  std::set<std::string> names;
  for (auto& pipeline : config.pipelines) {
    if (!names.insert(pipeline.name).second) {
      throw ValidationError("duplicate pipeline name '" + pipeline.name + "'");
    }
    pipeline.fed.seed = config.seed;
    pipeline.fed.holdout_center = config.evaluation.holdout_center;
    pipeline.fed.f1_convention = config.evaluation.f1_convention;
  }
}

}  // namespace fedsurg::cli
