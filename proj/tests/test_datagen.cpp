#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "fedsurg/datagen.hpp"
#include "fedsurg/errors.hpp"
#include "fedsurg/json_io.hpp"

using namespace fedsurg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("fedsurg_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("default config matches the challenge cohort shape") {
  const auto cfg = GeneratorConfig::desk_scale();
  const auto centers = generate_multicenter(cfg);
  REQUIRE(centers.size() == 4);
  const std::vector<std::pair<int, int>> expected = {{40, 10}, {33, 9}, {80, 22}, {0, 29}};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(static_cast<int>(centers[i].train.size()) == expected[i].first);
    CHECK(static_cast<int>(centers[i].test.size()) == expected[i].second);
    CHECK(static_cast<int>(centers[i].train.size() + centers[i].test.size()) ==
          cfg.centers[i].num_videos);
  }
  // Hold-out center has no training data; everything else does.
  CHECK(centers[3].train.empty());
  CHECK(centers[3].test.size() == 29);
}

TEST_CASE("degenerate generator collapses every frame to the class vector") {
  GeneratorConfig cfg = GeneratorConfig::desk_scale();
  cfg.feature_skew = 0.0;
  cfg.noise_level = 0.0;
  cfg.temporal_drift = 0.0;
  const auto centers = generate_multicenter(cfg);
  for (const auto& center : centers) {
    for (const auto* list : {&center.train, &center.test}) {
      for (const auto& video : *list) {
        const double expected0 = (video.label - 2.5) * cfg.class_spacing;
        for (int t = 0; t < video.num_frames; ++t) {
          const auto f = video.frame(t);
          CHECK(f[0] == doctest::Approx(expected0).epsilon(1e-12));
          for (int d = 1; d < video.feature_dim; ++d) CHECK(f[d] == doctest::Approx(0.0));
        }
      }
    }
  }
}

TEST_CASE("generation is deterministic per seed") {
  GeneratorConfig cfg = GeneratorConfig::desk_scale();
  cfg.seed = 1234;
  const auto a = generate_multicenter(cfg);
  const auto b = generate_multicenter(cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].train.size() == b[i].train.size());
    for (std::size_t v = 0; v < a[i].train.size(); ++v) {
      CHECK(a[i].train[v].label == b[i].train[v].label);
      CHECK(a[i].train[v].frame_data == b[i].train[v].frame_data);
    }
  }

  cfg.seed = 1235;
  const auto c = generate_multicenter(cfg);
  bool any_difference = false;
  for (std::size_t v = 0; v < a[0].train.size(); ++v) {
    if (a[0].train[v].frame_data != c[0].train[v].frame_data) any_difference = true;
  }
  CHECK(any_difference);
}

TEST_CASE("empirical class frequencies converge to the priors") {
  GeneratorConfig cfg;
  cfg.num_classes = 6;
  cfg.frames_per_video = 1;
  cfg.feature_dim = 2;
  cfg.seed = 5;
  cfg.centers = {{"1", 10000, 0.5, {0.05, 0.10, 0.30, 0.35, 0.15, 0.05}},
                 {"2", 10000, 0.5, {0.02, 0.08, 0.40, 0.30, 0.15, 0.05}}};
  const auto centers = generate_multicenter(cfg);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    std::vector<double> freq(6, 0.0);
    int total = 0;
    for (const auto* list : {&centers[i].train, &centers[i].test}) {
      for (const auto& video : *list) {
        freq[static_cast<std::size_t>(video.label)] += 1.0;
        ++total;
      }
    }
    for (int c = 0; c < 6; ++c) {
      CHECK(std::abs(freq[c] / total - cfg.centers[i].class_priors[c]) < 0.02);
    }
  }
}

TEST_CASE("feature skew makes centers linearly separable") {
  GeneratorConfig cfg = GeneratorConfig::desk_scale();
  cfg.seed = 9;
  const auto centers = generate_multicenter(cfg);

  // Logistic probe on mean-pooled features, pairwise over centers.
  auto mean_features = [](const CenterDataset& center) {
    std::vector<std::vector<double>> out;
    for (const auto* list : {&center.train, &center.test}) {
      for (const auto& video : *list) {
        std::vector<double> mean(static_cast<std::size_t>(video.feature_dim), 0.0);
        for (int t = 0; t < video.num_frames; ++t) {
          const auto f = video.frame(t);
          for (int d = 0; d < video.feature_dim; ++d) mean[d] += f[d];
        }
        for (auto& v : mean) v /= video.num_frames;
        out.push_back(std::move(mean));
      }
    }
    return out;
  };

  for (std::size_t a = 0; a < centers.size(); ++a) {
    for (std::size_t b = a + 1; b < centers.size(); ++b) {
      const auto fa = mean_features(centers[a]);
      const auto fb = mean_features(centers[b]);
      const int dim = static_cast<int>(fa.front().size());

      std::vector<double> w(static_cast<std::size_t>(dim) + 1, 0.0);
      for (int epoch = 0; epoch < 400; ++epoch) {
        auto step = [&](const std::vector<double>& x, double y) {
          double z = w[dim];
          for (int d = 0; d < dim; ++d) z += w[d] * x[d];
          const double p = 1.0 / (1.0 + std::exp(-z));
          const double g = p - y;
          for (int d = 0; d < dim; ++d) w[d] -= 0.1 * g * x[d];
          w[dim] -= 0.1 * g;
        };
        for (const auto& x : fa) step(x, 0.0);
        for (const auto& x : fb) step(x, 1.0);
      }
      int correct = 0, total = 0;
      auto eval = [&](const std::vector<double>& x, double y) {
        double z = w[dim];
        for (int d = 0; d < dim; ++d) z += w[d] * x[d];
        if ((z > 0.0) == (y > 0.5)) ++correct;
        ++total;
      };
      for (const auto& x : fa) eval(x, 0.0);
      for (const auto& x : fb) eval(x, 1.0);
      CHECK(static_cast<double>(correct) / total > 0.9);
    }
  }
}

TEST_CASE("dataset bundle round-trips through disk") {
  const auto dir = temp_dir("bundle");
  GeneratorConfig cfg = GeneratorConfig::desk_scale();
  cfg.seed = 77;
  const auto centers = generate_multicenter(cfg);
  save_dataset(centers, cfg, dir);

  CHECK(fs::exists(dir / "manifest.json"));
  for (const auto& center : centers) {
    CHECK(fs::exists(dir / ("center_" + center.center_id + ".json")));
  }

  const auto loaded = load_dataset(dir);
  REQUIRE(loaded.centers.size() == centers.size());
  CHECK(loaded.config.seed == cfg.seed);
  CHECK(loaded.config.frames_per_video == cfg.frames_per_video);
  CHECK(load_dataset(dir / "manifest.json").centers.size() == centers.size());
  for (std::size_t i = 0; i < centers.size(); ++i) {
    CHECK(loaded.centers[i].center_id == centers[i].center_id);
    REQUIRE(loaded.centers[i].train.size() == centers[i].train.size());
    REQUIRE(loaded.centers[i].test.size() == centers[i].test.size());
    for (std::size_t v = 0; v < centers[i].test.size(); ++v) {
      CHECK(loaded.centers[i].test[v].case_id == centers[i].test[v].case_id);
      CHECK(loaded.centers[i].test[v].label == centers[i].test[v].label);
      CHECK(loaded.centers[i].test[v].frame_data == centers[i].test[v].frame_data);
    }
  }
}

TEST_CASE("invalid generator configs are rejected") {
  GeneratorConfig cfg = GeneratorConfig::desk_scale();
  SUBCASE("priors must sum to one") {
    cfg.centers[0].class_priors[0] += 0.5;
    CHECK_THROWS_AS(generate_multicenter(cfg), ValidationError);
  }
  SUBCASE("negative priors") {
    cfg.centers[1].class_priors = {-0.1, 0.3, 0.3, 0.3, 0.1, 0.1};
    CHECK_THROWS_AS(generate_multicenter(cfg), ValidationError);
  }
  SUBCASE("test fraction bounds") {
    cfg.centers[2].test_fraction = 0.0;
    CHECK_THROWS_AS(generate_multicenter(cfg), ValidationError);
    cfg.centers[2].test_fraction = 1.5;
    CHECK_THROWS_AS(generate_multicenter(cfg), ValidationError);
  }
  SUBCASE("duplicate center ids") {
    cfg.centers[1].center_id = cfg.centers[0].center_id;
    CHECK_THROWS_AS(generate_multicenter(cfg), ValidationError);
  }
}

TEST_CASE("load_metric_table") {
  const auto dir = temp_dir("metric_table");
  SUBCASE("percent values are normalized, fractions kept") {
    std::ofstream(dir / "t.csv") << "team,task,center,metric,value\n"
                                    "Santhi,1,4,ec,12.41\n"
                                    "Santhi,1,4,f1,0.2303\n";
    const auto table = load_metric_table(dir / "t.csv");
    CHECK(table.at({"Santhi", 1, "4", Metric::EC}) == doctest::Approx(0.1241).epsilon(1e-12));
    CHECK(table.at({"Santhi", 1, "4", Metric::F1}) == doctest::Approx(0.2303).epsilon(1e-12));
  }
  SUBCASE("duplicate cells are rejected") {
    std::ofstream(dir / "dup.csv") << "team,task,center,metric,value\n"
                                      "A,1,4,ec,10\nA,1,4,ec,11\n";
    CHECK_THROWS_AS(load_metric_table(dir / "dup.csv"), ValidationError);
  }
  SUBCASE("bad header is rejected") {
    std::ofstream(dir / "bad.csv") << "team,task,value\nA,1,10\n";
    CHECK_THROWS_AS(load_metric_table(dir / "bad.csv"), ValidationError);
  }
  SUBCASE("unknown metric is rejected") {
    std::ofstream(dir / "m.csv") << "team,task,center,metric,value\nA,1,4,auc,10\n";
    CHECK_THROWS_AS(load_metric_table(dir / "m.csv"), ValidationError);
  }
}

TEST_CASE("load_predictions") {
  const auto dir = temp_dir("predictions");
  SUBCASE("grouping by team and center") {
    std::ofstream out(dir / "p.csv");
    out << "team,case_id,center,true_label,pred_label\n";
    for (int k = 0; k < 29; ++k) {
      out << "A,case" << k << ",4," << (k % 6) << "," << ((k + 1) % 6) << "\n";
    }
    out << "A,x0,1,2,2\nB,x0,1,2,3\n";
    out.close();
    const auto teams = load_predictions(dir / "p.csv", LabelSpace{6});
    REQUIRE(teams.size() == 2);
    CHECK(teams[0].team == "A");
    CHECK(teams[0].by_center.at("4").truths.size() == 29);
    CHECK(teams[0].by_center.at("1").truths.size() == 1);
    CHECK(teams[1].by_center.at("1").preds[0] == 3);
  }
  SUBCASE("header-only file is empty") {
    std::ofstream(dir / "empty.csv") << "case_id,center,true_label,pred_label\n";
    CHECK(load_predictions(dir / "empty.csv", LabelSpace{6}).empty());
  }
  SUBCASE("out-of-range labels name the line") {
    std::ofstream(dir / "range.csv") << "case_id,center,true_label,pred_label\n"
                                        "a,1,2,3\n"
                                        "b,1,7,0\n";
    try {
      load_predictions(dir / "range.csv", LabelSpace{6});
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find(":3") != std::string::npos);
    }
  }
  SUBCASE("duplicate case ids are rejected") {
    std::ofstream(dir / "dup.csv") << "case_id,center,true_label,pred_label\n"
                                      "a,1,2,3\n"
                                      "a,1,2,3\n";
    CHECK_THROWS_AS(load_predictions(dir / "dup.csv", LabelSpace{6}), ValidationError);
  }
}

TEST_CASE("generator config json round trip rejects unknown keys") {
  const auto cfg = GeneratorConfig::desk_scale();
  const auto j = generator_config_to_json(cfg);
  const auto back = generator_config_from_json(j, GeneratorConfig{});
  CHECK(back.frames_per_video == cfg.frames_per_video);
  CHECK(back.centers.size() == cfg.centers.size());

  auto bad = j;
  bad["frames_per_vid"] = 10;
  CHECK_THROWS_AS(generator_config_from_json(bad, GeneratorConfig{}), ValidationError);
}
