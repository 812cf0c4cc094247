#include "fedsurg/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "fedsurg/csv.hpp"
#include "fedsurg/errors.hpp"
#include "fedsurg/json_io.hpp"
#include "fedsurg/rng.hpp"

namespace fedsurg {

namespace {

using nlohmann::json;

std::vector<CenterSpec> default_centers() {
  // Cohort sizes 50/42/102/29 with center 4 entirely held out for testing;
  // priors are declared synthetic defaults (mid-heavy, varying per center).
  return {
      {"1", 50, 10.0 / 50.0, {0.05, 0.10, 0.30, 0.35, 0.15, 0.05}},
      {"2", 42, 9.0 / 42.0, {0.02, 0.08, 0.40, 0.30, 0.15, 0.05}},
      {"3", 102, 22.0 / 102.0, {0.05, 0.15, 0.25, 0.30, 0.20, 0.05}},
      {"4", 29, 1.0, {0.03, 0.07, 0.25, 0.40, 0.20, 0.05}},
  };
}

int draw_class(const std::vector<double>& priors, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = u(rng);
  for (std::size_t c = 0; c < priors.size(); ++c) {
    r -= priors[c];
    if (r <= 0.0) return static_cast<int>(c);
  }
  return static_cast<int>(priors.size()) - 1;
}

}  // namespace

GeneratorConfig GeneratorConfig::defaults() {
  GeneratorConfig cfg;
  cfg.centers = default_centers();
  return cfg;
}

GeneratorConfig GeneratorConfig::desk_scale() {
  GeneratorConfig cfg = defaults();
  cfg.frames_per_video = 20;
  cfg.feature_dim = 8;
  return cfg;
}

void validate_config(const GeneratorConfig& cfg) {
  if (cfg.num_classes < 2) throw ValidationError("num_classes must be >= 2");
  if (cfg.frames_per_video < 1) throw ValidationError("frames_per_video must be >= 1");
  if (cfg.feature_dim < 1) throw ValidationError("feature_dim must be >= 1");
  if (cfg.noise_level < 0.0 || cfg.feature_skew < 0.0 || cfg.temporal_drift < 0.0) {
    throw ValidationError("noise_level, feature_skew and temporal_drift must be >= 0");
  }
  if (cfg.centers.empty()) throw ValidationError("no centers configured");
  std::set<std::string> ids;
  for (const auto& center : cfg.centers) {
    if (center.center_id.empty()) throw ValidationError("center_id must be non-empty");
    if (!ids.insert(center.center_id).second) {
      throw ValidationError("duplicate center_id '" + center.center_id + "'");
    }
    if (center.num_videos < 1) {
      throw ValidationError("center " + center.center_id + ": num_videos must be >= 1");
    }
    if (!(center.test_fraction > 0.0) || center.test_fraction > 1.0) {
      throw ValidationError("center " + center.center_id + ": test_fraction must be in (0, 1]");
    }
    if (static_cast<int>(center.class_priors.size()) != cfg.num_classes) {
      throw ValidationError("center " + center.center_id + ": expected " +
                            std::to_string(cfg.num_classes) + " class priors");
    }
    double sum = 0.0;
    for (double p : center.class_priors) {
      if (p < 0.0) throw ValidationError("center " + center.center_id + ": negative prior");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw ValidationError("center " + center.center_id + ": priors sum to " +
                            std::to_string(sum) + ", expected 1");
    }
  }
}

std::vector<CenterDataset> generate_multicenter(const GeneratorConfig& cfg) {
  validate_config(cfg);

  const int n_classes = cfg.num_classes;
  const int n_frames = cfg.frames_per_video;
  const int dim = cfg.feature_dim;

  // Equally spaced latent class vectors along the first feature axis, so
  // the label space keeps its ordinal geometry.
  std::vector<std::vector<double>> codebook(static_cast<std::size_t>(n_classes),
                                            std::vector<double>(static_cast<std::size_t>(dim), 0.0));
  for (int c = 0; c < n_classes; ++c) {
    codebook[c][0] = (c - 0.5 * (n_classes - 1)) * cfg.class_spacing;
  }
  const int drift_axis = dim > 1 ? 1 : 0;

  std::vector<CenterDataset> out;
  out.reserve(cfg.centers.size());
  for (const auto& spec : cfg.centers) {
    const std::uint64_t center_seed = derive_seed(cfg.seed, hash_id(spec.center_id));

    // Per-center affine distortion: A = I + skew * G / sqrt(D), b = skew * h.
    std::vector<double> a_matrix(static_cast<std::size_t>(dim) * dim, 0.0);
    std::vector<double> b_shift(static_cast<std::size_t>(dim), 0.0);
    {
      auto rng = make_rng(derive_seed(center_seed, 1));
      std::normal_distribution<double> gauss(0.0, 1.0);
      const double scale = cfg.feature_skew / std::sqrt(static_cast<double>(dim));
      for (int i = 0; i < dim; ++i) {
        for (int j = 0; j < dim; ++j) {
          a_matrix[static_cast<std::size_t>(i) * dim + j] =
              (i == j ? 1.0 : 0.0) + scale * gauss(rng);
        }
      }
      for (int i = 0; i < dim; ++i) b_shift[i] = cfg.feature_skew * gauss(rng);
    }

    const int n_test = static_cast<int>(std::lround(spec.test_fraction * spec.num_videos));
    const int n_train = spec.num_videos - n_test;

    CenterDataset center;
    center.center_id = spec.center_id;
    center.class_priors = spec.class_priors;

    std::vector<double> base(static_cast<std::size_t>(dim));
    for (int v = 0; v < spec.num_videos; ++v) {
      auto rng = make_rng(derive_seed(center_seed, 2, static_cast<std::uint64_t>(v)));
      std::normal_distribution<double> gauss(0.0, 1.0);

      VideoInstance instance;
      instance.center_id = spec.center_id;
      char buf[16];
      std::snprintf(buf, sizeof(buf), "_v%03d", v);
      instance.case_id = "c" + spec.center_id + buf;
      instance.label = draw_class(spec.class_priors, rng);
      instance.num_frames = n_frames;
      instance.feature_dim = dim;
      instance.frame_data.resize(static_cast<std::size_t>(n_frames) * dim);

      for (int t = 0; t < n_frames; ++t) {
        const double ramp =
            n_frames > 1 ? (static_cast<double>(t) / (n_frames - 1) - 0.5) : 0.0;
        base = codebook[static_cast<std::size_t>(instance.label)];
        base[drift_axis] += cfg.temporal_drift * ramp;
        auto frame = instance.frame(t);
        for (int i = 0; i < dim; ++i) {
          double value = b_shift[i];
          const double* row = a_matrix.data() + static_cast<std::size_t>(i) * dim;
          for (int j = 0; j < dim; ++j) value += row[j] * base[j];
          frame[i] = value + cfg.noise_level * gauss(rng);
        }
      }

      if (v < n_train) {
        center.train.push_back(std::move(instance));
      } else {
        center.test.push_back(std::move(instance));
      }
    }
    out.push_back(std::move(center));
  }
  return out;
}

// --- JSON serialization ---------------------------------------------------

json generator_config_to_json(const GeneratorConfig& cfg) {
  json centers = json::array();
  for (const auto& c : cfg.centers) {
    centers.push_back({{"center_id", c.center_id},
                       {"num_videos", c.num_videos},
                       {"test_fraction", c.test_fraction},
                       {"class_priors", c.class_priors}});
  }
  return {{"num_classes", cfg.num_classes},
          {"frames_per_video", cfg.frames_per_video},
          {"feature_dim", cfg.feature_dim},
          {"class_spacing", cfg.class_spacing},
          {"feature_skew", cfg.feature_skew},
          {"noise_level", cfg.noise_level},
          {"temporal_drift", cfg.temporal_drift},
          {"seed", cfg.seed},
          {"centers", centers}};
}

GeneratorConfig generator_config_from_json(const json& j, const GeneratorConfig& base) {
  if (!j.is_object()) throw ValidationError("generator config must be a JSON object");
  static const std::set<std::string> known = {
      "num_classes",  "frames_per_video", "feature_dim", "class_spacing",
      "feature_skew", "noise_level",      "temporal_drift", "seed", "centers"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ValidationError("unknown generator config key '" + key + "'");
  }
  GeneratorConfig cfg = base;
  try {
    cfg.num_classes = j.value("num_classes", cfg.num_classes);
    cfg.frames_per_video = j.value("frames_per_video", cfg.frames_per_video);
    cfg.feature_dim = j.value("feature_dim", cfg.feature_dim);
    cfg.class_spacing = j.value("class_spacing", cfg.class_spacing);
    cfg.feature_skew = j.value("feature_skew", cfg.feature_skew);
    cfg.noise_level = j.value("noise_level", cfg.noise_level);
    cfg.temporal_drift = j.value("temporal_drift", cfg.temporal_drift);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("centers")) {
      cfg.centers.clear();
      for (const auto& jc : j.at("centers")) {
        static const std::set<std::string> center_keys = {"center_id", "num_videos",
                                                          "test_fraction", "class_priors"};
        for (const auto& [key, _] : jc.items()) {
          if (!center_keys.count(key)) {
            throw ValidationError("unknown center config key '" + key + "'");
          }
        }
        CenterSpec spec;
        spec.center_id = jc.at("center_id").get<std::string>();
        spec.num_videos = jc.at("num_videos").get<int>();
        spec.test_fraction = jc.at("test_fraction").get<double>();
        spec.class_priors = jc.at("class_priors").get<std::vector<double>>();
        cfg.centers.push_back(std::move(spec));
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad generator config: ") + e.what());
  }
  return cfg;
}

json center_dataset_to_json(const CenterDataset& center) {
  auto instances_to_json = [](const std::vector<VideoInstance>& instances) {
    json arr = json::array();
    for (const auto& inst : instances) {
      json frames = json::array();
      for (int t = 0; t < inst.num_frames; ++t) {
        const auto f = inst.frame(t);
        frames.push_back(std::vector<double>(f.begin(), f.end()));
      }
      arr.push_back({{"case_id", inst.case_id},
                     {"label", inst.label},
                     {"frames", std::move(frames)}});
    }
    return arr;
  };
  return {{"center_id", center.center_id},
          {"class_priors", center.class_priors},
          {"train", instances_to_json(center.train)},
          {"test", instances_to_json(center.test)}};
}

CenterDataset center_dataset_from_json(const json& j) {
  CenterDataset center;
  try {
    center.center_id = j.at("center_id").get<std::string>();
    center.class_priors = j.at("class_priors").get<std::vector<double>>();
    auto parse_instances = [&](const json& arr, std::vector<VideoInstance>& out) {
      for (const auto& ji : arr) {
        VideoInstance inst;
        inst.case_id = ji.at("case_id").get<std::string>();
        inst.center_id = center.center_id;
        inst.label = ji.at("label").get<int>();
        const auto& frames = ji.at("frames");
        inst.num_frames = static_cast<int>(frames.size());
        if (inst.num_frames == 0) throw ValidationError("instance with no frames");
        inst.feature_dim = static_cast<int>(frames.at(0).size());
        inst.frame_data.reserve(static_cast<std::size_t>(inst.num_frames) * inst.feature_dim);
        for (const auto& frame : frames) {
          if (static_cast<int>(frame.size()) != inst.feature_dim) {
            throw ValidationError("ragged frame dimensions in " + inst.case_id);
          }
          for (const auto& v : frame) inst.frame_data.push_back(v.get<double>());
        }
        out.push_back(std::move(inst));
      }
    };
    parse_instances(j.at("train"), center.train);
    parse_instances(j.at("test"), center.test);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad center dataset: ") + e.what());
  }
  return center;
}

void save_dataset(const std::vector<CenterDataset>& centers, const GeneratorConfig& cfg,
                  const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);

  json manifest = {{"format", "fedsurg-dataset"},
                   {"version", 1},
                   {"config", generator_config_to_json(cfg)},
                   {"center_files", json::array()}};
  for (const auto& center : centers) {
    const std::string filename = "center_" + center.center_id + ".json";
    manifest["center_files"].push_back(filename);
    std::ofstream out(dir / filename);
    if (!out) throw ValidationError("cannot write " + (dir / filename).string());
    out << center_dataset_to_json(center).dump(0) << '\n';
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw ValidationError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

LoadedDataset load_dataset(const std::filesystem::path& path) {
  std::filesystem::path manifest_path = path;
  if (std::filesystem::is_directory(path)) manifest_path = path / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw ValidationError("cannot open " + manifest_path.string());

  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw ValidationError(manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "fedsurg-dataset") {
    throw ValidationError(manifest_path.string() + ": not a dataset manifest");
  }

  LoadedDataset loaded;
  loaded.config = generator_config_from_json(manifest.at("config"), GeneratorConfig{});
  const auto dir = manifest_path.parent_path();
  for (const auto& jf : manifest.at("center_files")) {
    const auto file = dir / jf.get<std::string>();
    std::ifstream cin(file);
    if (!cin) throw ValidationError("cannot open " + file.string());
    json jc;
    try {
      cin >> jc;
    } catch (const json::exception& e) {
      throw ValidationError(file.string() + ": " + e.what());
    }
    loaded.centers.push_back(center_dataset_from_json(jc));
  }
  return loaded;
}

// --- External tables ------------------------------------------------------

MetricTable load_metric_table(const std::filesystem::path& path) {
  const auto table = csv::read_file(path);
  const std::vector<std::string> expected = {"team", "task", "center", "metric", "value"};
  if (table.header != expected) {
    throw ValidationError(path.string() + ": expected header team,task,center,metric,value");
  }

  MetricTable out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto where = path.string() + ":" + std::to_string(table.line_numbers[r]);
    MetricTable::Key key;
    key.team = row[0];
    try {
      key.task = std::stoi(row[1]);
    } catch (...) {
      throw ValidationError(where + ": bad task '" + row[1] + "'");
    }
    if (key.task != 1 && key.task != 2) {
      throw ValidationError(where + ": task must be 1 or 2");
    }
    key.center = row[2];
    key.metric = parse_metric(row[3]);
    double value;
    try {
      value = std::stod(row[4]);
    } catch (...) {
      throw ValidationError(where + ": bad value '" + row[4] + "'");
    }
    if (value < 0.0 || value > 100.0) {
      throw ValidationError(where + ": value out of range [0, 100]");
    }
    if (value > 1.0) value /= 100.0;  // percent input
    out.insert(std::move(key), value);
  }
  return out;
}

std::vector<TeamPredictions> load_predictions(const std::filesystem::path& path,
                                              LabelSpace labels) {
  const auto table = csv::read_file(path);
  const int team_col = table.column("team");
  const int case_col = table.column("case_id");
  const int center_col = table.column("center");
  const int truth_col = table.column("true_label");
  const int pred_col = table.column("pred_label");
  if (case_col < 0 || center_col < 0 || truth_col < 0 || pred_col < 0) {
    throw ValidationError(path.string() +
                          ": expected header [team,]case_id,center,true_label,pred_label");
  }

  std::map<std::string, TeamPredictions> by_team;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto where = path.string() + ":" + std::to_string(table.line_numbers[r]);

    auto parse_label = [&](int col, const char* what) {
      int value;
      try {
        value = std::stoi(row[static_cast<std::size_t>(col)]);
      } catch (...) {
        throw ValidationError(where + ": bad " + std::string(what) + " '" +
                              row[static_cast<std::size_t>(col)] + "'");
      }
      if (value < 0 || value >= labels.num_classes) {
        throw ValidationError(where + ": " + what + " " + std::to_string(value) +
                              " out of range 0.." + std::to_string(labels.num_classes - 1));
      }
      return value;
    };

    const std::string team = team_col >= 0 ? row[static_cast<std::size_t>(team_col)] : "";
    auto& tp = by_team[team];
    tp.team = team;
    auto& group = tp.by_center[row[static_cast<std::size_t>(center_col)]];
    const auto& case_id = row[static_cast<std::size_t>(case_col)];
    if (std::find(group.case_ids.begin(), group.case_ids.end(), case_id) !=
        group.case_ids.end()) {
      throw ValidationError(where + ": duplicate case_id '" + case_id + "'");
    }
    group.case_ids.push_back(case_id);
    group.truths.push_back(parse_label(truth_col, "true_label"));
    group.preds.push_back(parse_label(pred_col, "pred_label"));
  }

  std::vector<TeamPredictions> out;
  out.reserve(by_team.size());
  for (auto& [_, tp] : by_team) {
    // Canonical case order so files written in any order pair up.
    for (auto& entry : tp.by_center) {
      CaseGroup& group = entry.second;
      std::vector<std::size_t> order(group.case_ids.size());
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&group](std::size_t a, std::size_t b) {
        return group.case_ids[a] < group.case_ids[b];
      });
      CaseGroup sorted;
      for (std::size_t i : order) {
        sorted.case_ids.push_back(group.case_ids[i]);
        sorted.truths.push_back(group.truths[i]);
        sorted.preds.push_back(group.preds[i]);
      }
      group = std::move(sorted);
    }
    out.push_back(std::move(tp));
  }
  return out;
}

}  // namespace fedsurg
