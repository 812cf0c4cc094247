#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fedsurg/metric_table.hpp"
#include "fedsurg/metrics.hpp"
#include "fedsurg/models.hpp"

namespace fedsurg {

struct CenterSpec {
  std::string center_id;
  int num_videos = 0;
  double test_fraction = 0.0;     // in (0, 1]
  std::vector<double> class_priors;
};

/// Synthetic multi-center generator settings. The default centers mirror the
/// challenge cohort sizes (50/42/102/29 videos, center 4 all-test) with
/// skewed mid-heavy class priors that differ per center.
struct GeneratorConfig {
  int num_classes = 6;
  int frames_per_video = 200;
  int feature_dim = 8;
  double class_spacing = 2.0;   // distance between adjacent latent class vectors
  double feature_skew = 1.0;    // per-center affine scale/shift magnitude
  double noise_level = 0.25;    // per-frame gaussian noise
  double temporal_drift = 0.5;  // linear ramp across frames so frame order matters
  std::uint64_t seed = 0;
  std::vector<CenterSpec> centers;

  /// Challenge-shaped defaults at full sequence length (200 frames).
  static GeneratorConfig defaults();
  /// Same centers with short sequences (20 frames), sized for fast runs.
  static GeneratorConfig desk_scale();
};

/// One simulated hospital. Train may be empty (the hold-out center).
struct CenterDataset {
  std::string center_id;
  std::vector<double> class_priors;
  std::vector<VideoInstance> train;
  std::vector<VideoInstance> test;
};

/// Validates the config; throws ValidationError on bad priors or fractions.
void validate_config(const GeneratorConfig& cfg);

/// Deterministic per seed; per-center streams are derived so the output is
/// independent of generation order.
std::vector<CenterDataset> generate_multicenter(const GeneratorConfig& cfg);

/// Writes manifest.json (config + seed + file list) plus one JSON file per
/// center into `dir`.
void save_dataset(const std::vector<CenterDataset>& centers, const GeneratorConfig& cfg,
                  const std::filesystem::path& dir);

struct LoadedDataset {
  GeneratorConfig config;
  std::vector<CenterDataset> centers;
};

/// Accepts the bundle directory or its manifest.json path.
LoadedDataset load_dataset(const std::filesystem::path& path);

/// Reads a `team,task,center,metric,value` CSV. Values above 1.0 are treated
/// as percentages and normalized to fractions.
MetricTable load_metric_table(const std::filesystem::path& path);

/// Paired prediction sequences for one team, grouped by center.
struct CaseGroup {
  std::vector<std::string> case_ids;
  std::vector<int> truths;
  std::vector<int> preds;
};

struct TeamPredictions {
  std::string team;
  std::map<std::string, CaseGroup> by_center;
};

/// Reads a `case_id,center,true_label,pred_label` CSV, with an optional
/// leading `team` column for multi-team files. Errors carry line numbers.
std::vector<TeamPredictions> load_predictions(const std::filesystem::path& path,
                                              LabelSpace labels);

}  // namespace fedsurg
