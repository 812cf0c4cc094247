#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "fedsurg/datagen.hpp"
#include "fedsurg/errors.hpp"
#include "fedsurg/fedsim.hpp"
#include "fedsurg/json_io.hpp"

using namespace fedsurg;

namespace {

GeneratorConfig tiny_config(std::uint64_t seed) {
  GeneratorConfig cfg = GeneratorConfig::desk_scale();
  cfg.seed = seed;
  cfg.centers = {
      {"1", 20, 0.25, {0.05, 0.10, 0.30, 0.35, 0.15, 0.05}},
      {"2", 18, 0.25, {0.02, 0.08, 0.40, 0.30, 0.15, 0.05}},
      {"3", 24, 0.25, {0.05, 0.15, 0.25, 0.30, 0.20, 0.05}},
      {"4", 12, 1.0, {0.03, 0.07, 0.25, 0.40, 0.20, 0.05}},
  };
  return cfg;
}

StrategyPipeline fast_pipeline(std::uint64_t seed) {
  StrategyPipeline p = StrategyPipeline::santhi_like();
  p.fed.fl_rounds = 2;
  p.fed.local_epochs = 2;
  p.fed.fine_tune_epochs = 1;
  p.fed.seed = seed;
  return p;
}

/// Test stand-in that always predicts one fixed class.
class ConstantModel final : public Model {
 public:
  ConstantModel(int input_dim, int num_classes, int target)
      : input_dim_(input_dim), num_classes_(num_classes), target_(target) {}

  std::unique_ptr<Model> clone() const override { return std::make_unique<ConstantModel>(*this); }
  std::size_t param_count() const override { return 1; }
  ParameterVector params() const override { return {0.0}; }
  void set_params(const ParameterVector&) override {}
  void randomize(std::mt19937_64&, double) override {}
  const LossConfig& loss_config() const override { return loss_; }
  void set_loss_config(LossConfig cfg) override { loss_ = std::move(cfg); }
  std::pair<double, ParameterVector> loss_and_gradient(std::span<const Sample>) const override {
    return {0.0, {0.0}};
  }
  std::vector<double> predict_proba(std::span<const double>) const override {
    std::vector<double> p(static_cast<std::size_t>(num_classes_), 0.0);
    p[static_cast<std::size_t>(target_)] = 1.0;
    return p;
  }
  int num_classes() const override { return num_classes_; }
  int input_dim() const override { return input_dim_; }

 private:
  int input_dim_;
  int num_classes_;
  int target_;
  LossConfig loss_;
};

/// Test stand-in that inverts the degenerate generator: nearest latent class
/// vector along the first feature axis.
class CodebookModel final : public Model {
 public:
  CodebookModel(int input_dim, int num_classes, double spacing)
      : input_dim_(input_dim), num_classes_(num_classes), spacing_(spacing) {}

  std::unique_ptr<Model> clone() const override { return std::make_unique<CodebookModel>(*this); }
  std::size_t param_count() const override { return 1; }
  ParameterVector params() const override { return {0.0}; }
  void set_params(const ParameterVector&) override {}
  void randomize(std::mt19937_64&, double) override {}
  const LossConfig& loss_config() const override { return loss_; }
  void set_loss_config(LossConfig cfg) override { loss_ = std::move(cfg); }
  std::pair<double, ParameterVector> loss_and_gradient(std::span<const Sample>) const override {
    return {0.0, {0.0}};
  }
  std::vector<double> predict_proba(std::span<const double> x) const override {
    std::vector<double> p(static_cast<std::size_t>(num_classes_), 0.0);
    int best = 0;
    double best_dist = 1e300;
    for (int c = 0; c < num_classes_; ++c) {
      const double mu = (c - 0.5 * (num_classes_ - 1)) * spacing_;
      const double dist = std::abs(x[0] - mu);
      if (dist < best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    p[static_cast<std::size_t>(best)] = 1.0;
    return p;
  }
  int num_classes() const override { return num_classes_; }
  int input_dim() const override { return input_dim_; }

 private:
  int input_dim_;
  int num_classes_;
  double spacing_;
  LossConfig loss_;
};

}  // namespace

TEST_CASE("presets carry the published schedules") {
  const auto santhi = StrategyPipeline::santhi_like();
  CHECK(santhi.fed.strategy == AggregationKind::FedAvg);
  CHECK(santhi.fed.fl_rounds == 5);
  CHECK(santhi.fed.local_epochs == 20);
  CHECK(santhi.fed.learning_rate == doctest::Approx(1e-4));
  CHECK(santhi.fed.batch_size == 4);
  CHECK(santhi.sample_count == 32);

  const auto elb = StrategyPipeline::elbflorenz_like();
  CHECK(elb.fed.strategy == AggregationKind::FedOpt);
  CHECK(elb.optimizer == ClientOptimizerKind::Sam);
  CHECK(elb.fed.fl_rounds == 50);
  CHECK(elb.fed.local_epochs == 2);
  CHECK(elb.fed.learning_rate == doctest::Approx(1e-3));
  CHECK(elb.fed.batch_size == 128);
  CHECK(elb.sample_count == 100);
  CHECK(elb.loss == LossKind::WeightedCrossEntropy);

  const auto camma = StrategyPipeline::camma_like();
  CHECK(camma.fed.strategy == AggregationKind::FedMedian);
  CHECK(camma.fed.fl_rounds == 10);
  CHECK(camma.fed.local_epochs == 5);
  CHECK(camma.warmup_epochs == 10);
  CHECK(camma.fed.learning_rate == doctest::Approx(1e-6));
  CHECK(camma.fed.batch_size == 1);
  CHECK(camma.loss == LossKind::TripletMargin);

  CHECK_THROWS_AS(StrategyPipeline::preset("nonesuch"), ValidationError);
}

TEST_CASE("incompatible pipeline combinations are rejected") {
  const auto data = generate_multicenter(tiny_config(3));
  StrategyPipeline p = fast_pipeline(3);
  p.inference = InferenceKind::Prototype;  // prototype without an embedding model
  CHECK_THROWS_AS(run_federated_training(p, data), ValidationError);

  StrategyPipeline q = fast_pipeline(3);
  q.loss = LossKind::TripletMargin;
  CHECK_THROWS_AS(run_federated_training(q, data), ValidationError);
}

TEST_CASE("single client, one round, one epoch reduces to local training") {
  auto cfg = tiny_config(11);
  cfg.centers.resize(1);                 // only center 1 trains
  cfg.centers.push_back(tiny_config(11).centers[3]);  // hold-out center 4
  const auto data = generate_multicenter(cfg);

  StrategyPipeline p = fast_pipeline(11);
  p.fed.fl_rounds = 1;
  p.fed.local_epochs = 1;

  const auto outcome = run_federated_training(p, data);
  const auto initial = initial_global_model(p, data[0].train[0].feature_dim, 6);
  const auto local = train_local_round(*initial, p, data[0], 0);
  CHECK(outcome.model->params() == local.best_params);
}

TEST_CASE("zero learning rate leaves the global model at its initialization") {
  const auto data = generate_multicenter(tiny_config(12));
  for (auto base : {StrategyPipeline::santhi_like(), StrategyPipeline::elbflorenz_like(),
                    StrategyPipeline::camma_like()}) {
    base.fed.fl_rounds = 2;
    base.fed.local_epochs = 1;
    base.warmup_epochs = std::min(base.warmup_epochs, 1);
    base.fed.learning_rate = 0.0;
    base.fed.seed = 12;
    const auto outcome = run_federated_training(base, data);
    const auto initial = initial_global_model(base, data[0].train[0].feature_dim, 6);
    CHECK(outcome.model->params() == initial->params());
  }
}

TEST_CASE("federated rounds equal manual local-train plus aggregate composition") {
  const auto data = generate_multicenter(tiny_config(13));
  StrategyPipeline p = fast_pipeline(13);
  const auto outcome = run_federated_training(p, data);

  auto model = initial_global_model(p, data[0].train[0].feature_dim, 6);
  ParameterVector global = model->params();
  for (int round = 0; round < p.fed.fl_rounds; ++round) {
    std::vector<ClientUpdate> updates;
    model->set_params(global);
    for (const auto& center : data) {
      if (center.center_id == p.fed.holdout_center || center.train.empty()) continue;
      auto local = train_local_round(*model, p, center, round);
      updates.push_back({center.center_id, std::move(local.best_params), local.num_train,
                         local.best_score});
    }
    global = fed_avg(updates);
  }
  CHECK(outcome.model->params() == global);
}

TEST_CASE("best checkpoint score is the maximum epoch score") {
  const auto data = generate_multicenter(tiny_config(14));
  StrategyPipeline p = fast_pipeline(14);
  p.fed.local_epochs = 4;
  const auto outcome = run_federated_training(p, data);
  for (const auto& round : outcome.telemetry) {
    for (const auto& client : round.clients) {
      REQUIRE(!client.epoch_scores.empty());
      CHECK(static_cast<int>(client.epoch_scores.size()) == p.fed.local_epochs);
      double max_score = -1.0;
      for (double s : client.epoch_scores) max_score = std::max(max_score, s);
      CHECK(client.local_best_score == doctest::Approx(max_score));
    }
  }
}

TEST_CASE("telemetry bookkeeping is complete and ordered") {
  const auto data = generate_multicenter(tiny_config(15));
  StrategyPipeline p = fast_pipeline(15);
  const auto outcome = run_federated_training(p, data);
  REQUIRE(static_cast<int>(outcome.telemetry.size()) == p.fed.fl_rounds);
  for (std::size_t r = 0; r < outcome.telemetry.size(); ++r) {
    CHECK(outcome.telemetry[r].round == static_cast<int>(r));
    CHECK(outcome.telemetry[r].clients.size() == 3);  // centers 1..3 train
    CHECK(outcome.telemetry[r].clients[0].client_id == "1");
    CHECK(outcome.telemetry[r].clients[1].client_id == "2");
    CHECK(outcome.telemetry[r].clients[2].client_id == "3");
  }
}

TEST_CASE("evaluate_task1 with a perfect oracle on degenerate data") {
  GeneratorConfig cfg = tiny_config(16);
  cfg.feature_skew = 0.0;
  cfg.noise_level = 0.0;
  cfg.temporal_drift = 0.0;
  const auto data = generate_multicenter(cfg);

  StrategyPipeline p = fast_pipeline(16);
  p.sampler = SamplerKind::Equidistant;
  p.fed.f1_convention = F1Convention::ExcludeAbsent;
  const CodebookModel oracle(cfg.feature_dim, 6, cfg.class_spacing);
  const auto report = evaluate_task1(oracle, p, data, data[3]);
  CHECK(report.expected_cost == doctest::Approx(0.0));
  CHECK(report.f1_macro == doctest::Approx(1.0));
  for (std::size_t c = 0; c < report.f1_per_class.size(); ++c) {
    if (report.support[c] > 0) CHECK(report.f1_per_class[c] == doctest::Approx(1.0));
  }
}

TEST_CASE("evaluate_task1 with a constant model matches the closed-form cost") {
  const auto data = generate_multicenter(tiny_config(17));
  StrategyPipeline p = fast_pipeline(17);
  p.sampler = SamplerKind::Equidistant;

  const auto& holdout = data[3];
  for (int target : {0, 2, 5}) {
    const ConstantModel constant(8, 6, target);
    const auto report = evaluate_task1(constant, p, data, holdout);
    double expected = 0.0;
    for (const auto& video : holdout.test) {
      expected += std::abs(video.label - target) / 5.0;
    }
    expected /= static_cast<double>(holdout.test.size());
    CHECK(report.expected_cost == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("a label-blind uniform predictor lands near the closed-form expected cost") {
  GeneratorConfig cfg = tiny_config(18);
  cfg.centers[3].num_videos = 3000;  // large hold-out for concentration
  cfg.centers[3].test_fraction = 1.0;
  const auto data = generate_multicenter(cfg);
  const auto& holdout = data[3];

  // Pseudo-random but deterministic per input: hash the feature bytes.
  class UniformModel final : public Model {
   public:
    explicit UniformModel(int dim) : dim_(dim) {}
    std::unique_ptr<Model> clone() const override { return std::make_unique<UniformModel>(*this); }
    std::size_t param_count() const override { return 1; }
    ParameterVector params() const override { return {0.0}; }
    void set_params(const ParameterVector&) override {}
    void randomize(std::mt19937_64&, double) override {}
    const LossConfig& loss_config() const override { return loss_; }
    void set_loss_config(LossConfig cfg) override { loss_ = std::move(cfg); }
    std::pair<double, ParameterVector> loss_and_gradient(std::span<const Sample>) const override {
      return {0.0, {0.0}};
    }
    std::vector<double> predict_proba(std::span<const double> x) const override {
      std::uint64_t h = 1469598103934665603ULL;
      for (double v : x) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        h = (h ^ bits) * 1099511628211ULL;
      }
      std::vector<double> p(6, 0.0);
      p[h % 6] = 1.0;
      return p;
    }
    int num_classes() const override { return 6; }
    int input_dim() const override { return dim_; }

   private:
    int dim_;
    LossConfig loss_;
  };

  StrategyPipeline p = fast_pipeline(18);
  p.sampler = SamplerKind::Equidistant;
  const UniformModel uniform(8);
  const auto report = evaluate_task1(uniform, p, data, holdout);

  // E[EC] = sum_i P(true = i) * mean_j |i - j| / 5 under uniform predictions.
  std::vector<double> label_freq(6, 0.0);
  for (const auto& video : holdout.test) label_freq[video.label] += 1.0;
  for (auto& f : label_freq) f /= static_cast<double>(holdout.test.size());
  double expected = 0.0;
  for (int i = 0; i < 6; ++i) {
    double mean_dist = 0.0;
    for (int j = 0; j < 6; ++j) mean_dist += std::abs(i - j) / 5.0;
    expected += label_freq[i] * mean_dist / 6.0;
  }
  CHECK(report.expected_cost == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("task2 with zero fine-tune epochs evaluates the global model locally") {
  const auto data = generate_multicenter(tiny_config(19));
  StrategyPipeline p = fast_pipeline(19);
  p.sampler = SamplerKind::Equidistant;
  p.fed.fine_tune_epochs = 0;

  const auto outcome = run_federated_training(p, data);
  const auto task2 = run_task2_adaptation(*outcome.model, p, data);
  REQUIRE(task2.per_center.size() == 3);

  double f1_sum = 0.0, ec_sum = 0.0;
  for (const auto& [center_id, report] : task2.per_center) {
    const CenterDataset* center = nullptr;
    for (const auto& c : data) {
      if (c.center_id == center_id) center = &c;
    }
    REQUIRE(center != nullptr);
    std::vector<int> truths, preds;
    for (const auto& video : center->test) {
      truths.push_back(video.label);
      preds.push_back(predict_video(*outcome.model, video, p, 0, nullptr));
    }
    const auto direct =
        metric_report(build_confusion_matrix(truths, preds, LabelSpace{6}));
    CHECK(report.f1_macro == doctest::Approx(direct.f1_macro));
    CHECK(report.expected_cost == doctest::Approx(direct.expected_cost));
    f1_sum += report.f1_macro;
    ec_sum += report.expected_cost;
  }
  CHECK(task2.average.f1_macro == doctest::Approx(f1_sum / 3.0).epsilon(1e-12));
  CHECK(task2.average.expected_cost == doctest::Approx(ec_sum / 3.0).epsilon(1e-12));
}

TEST_CASE("run_challenge shape and determinism") {
  const auto data = generate_multicenter(tiny_config(20));
  std::vector<StrategyPipeline> pipelines;
  for (auto base : {StrategyPipeline::santhi_like(), StrategyPipeline::elbflorenz_like(),
                    StrategyPipeline::camma_like()}) {
    base.fed.fl_rounds = 2;
    base.fed.local_epochs = 1;
    base.warmup_epochs = std::min(base.warmup_epochs, 2);
    base.fed.fine_tune_epochs = 1;
    base.fed.seed = 20;
    pipelines.push_back(std::move(base));
  }

  const auto a = run_challenge(pipelines, data);
  REQUIRE(a.pipelines.size() == 3);
  for (const auto& pr : a.pipelines) {
    CHECK(pr.task2.per_center.size() == 3);
    CHECK(!pr.task1_predictions.empty());
    CHECK(pr.task1_predictions.size() == data[3].test.size());
  }

  const auto b = run_challenge(pipelines, data);
  for (std::size_t i = 0; i < a.pipelines.size(); ++i) {
    CHECK(a.pipelines[i].task1.f1_macro == b.pipelines[i].task1.f1_macro);
    CHECK(a.pipelines[i].task1.expected_cost == b.pipelines[i].task1.expected_cost);
    CHECK(a.pipelines[i].task2.average.f1_macro == b.pipelines[i].task2.average.f1_macro);
    for (std::size_t k = 0; k < a.pipelines[i].task1_predictions.size(); ++k) {
      CHECK(a.pipelines[i].task1_predictions[k].pred ==
            b.pipelines[i].task1_predictions[k].pred);
    }
  }

  CHECK_THROWS_AS(run_challenge({}, data), ValidationError);
}

TEST_CASE("pipeline json round trips and rejects unknown keys") {
  const auto p = StrategyPipeline::camma_like();
  const auto j = pipeline_to_json(p);
  // Deserialize on top of a different base: every field must come back.
  const auto q = pipeline_from_json(j, StrategyPipeline::santhi_like());
  CHECK(q.name == p.name);
  CHECK(q.model == p.model);
  CHECK(q.loss == p.loss);
  CHECK(q.optimizer == p.optimizer);
  CHECK(q.sampler == p.sampler);
  CHECK(q.inference == p.inference);
  CHECK(q.prototype_mode == p.prototype_mode);
  CHECK(q.sample_count == p.sample_count);
  CHECK(q.warmup_epochs == p.warmup_epochs);
  CHECK(q.embed_dim == p.embed_dim);
  CHECK(q.triplet_margin == p.triplet_margin);
  CHECK(q.fed.strategy == p.fed.strategy);
  CHECK(q.fed.fl_rounds == p.fed.fl_rounds);
  CHECK(q.fed.local_epochs == p.fed.local_epochs);
  CHECK(q.fed.learning_rate == p.fed.learning_rate);
  CHECK(q.fed.batch_size == p.fed.batch_size);
  CHECK(q.fed.sam.adaptive == p.fed.sam.adaptive);

  auto bad = j;
  bad["fl_round"] = 3;
  CHECK_THROWS_AS(pipeline_from_json(bad, p), ValidationError);

  auto bad_value = j;
  bad_value["optimizer"] = "adamw";
  CHECK_THROWS_AS(pipeline_from_json(bad_value, p), ValidationError);
}

TEST_CASE("enum names round trip") {
  for (auto v : {AggregationKind::FedAvg, AggregationKind::FedMedian, AggregationKind::FedOpt}) {
    CHECK(parse_aggregation_kind(to_string(v)) == v);
  }
  for (auto v : {SamplerKind::Hybrid, SamplerKind::Equidistant, SamplerKind::SimilarityTopK}) {
    CHECK(parse_sampler_kind(to_string(v)) == v);
  }
  for (auto v : {InferenceKind::DirectSoftmax, InferenceKind::MajorityVote,
                 InferenceKind::Prototype}) {
    CHECK(parse_inference_kind(to_string(v)) == v);
  }
  for (auto v : {LossKind::CrossEntropy, LossKind::WeightedCrossEntropy,
                 LossKind::TripletMargin}) {
    CHECK(parse_loss_kind(to_string(v)) == v);
  }
  CHECK_THROWS_AS(parse_model_kind("resnet"), ValidationError);
}

TEST_CASE("centers with missing data are rejected") {
  auto data = generate_multicenter(tiny_config(21));
  StrategyPipeline p = fast_pipeline(21);

  SUBCASE("no training centers at all") {
    std::vector<CenterDataset> only_holdout = {data[3]};
    CHECK_THROWS_AS(run_federated_training(p, only_holdout), ValidationError);
  }
  SUBCASE("missing hold-out center") {
    std::vector<CenterDataset> no_holdout = {data[0], data[1], data[2]};
    std::vector<StrategyPipeline> pipelines = {p};
    CHECK_THROWS_AS(run_challenge(pipelines, no_holdout), ValidationError);
  }
  SUBCASE("adaptation requires local test data") {
    data[1].test.clear();
    const auto initial = initial_global_model(p, 8, 6);
    CHECK_THROWS_AS(run_task2_adaptation(*initial, p, data), ValidationError);
  }
}
