#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedsurg/aggregation.hpp"
#include "fedsurg/datagen.hpp"
#include "fedsurg/metrics.hpp"
#include "fedsurg/models.hpp"

namespace fedsurg {

enum class AggregationKind { FedAvg, FedMedian, FedOpt };
enum class ClientOptimizerKind { Sgd, Adam, Sam };
enum class SamplerKind { Hybrid, Equidistant, SimilarityTopK };
enum class InferenceKind { DirectSoftmax, MajorityVote, Prototype };
enum class ModelKind { SoftmaxHead, Embedding };

struct FederatedConfig {
  AggregationKind strategy = AggregationKind::FedAvg;
  int fl_rounds = 5;
  int local_epochs = 1;
  double learning_rate = 1e-3;
  int batch_size = 4;
  int fine_tune_epochs = 5;
  std::string holdout_center = "4";
  std::uint64_t seed = 0;
  F1Convention f1_convention = F1Convention::IncludeAbsent;
  ServerOptConfig server_opt;  // FedOpt strategy
  SamConfig sam;               // Sam optimizer; base_lr is taken from learning_rate
};

/// One submission recipe: model family, loss, frame sampler, video-level
/// inference rule and the federated schedule.
struct StrategyPipeline {
  std::string name;
  ModelKind model = ModelKind::SoftmaxHead;
  LossKind loss = LossKind::CrossEntropy;
  double triplet_margin = 0.5;
  int embed_dim = 16;
  ClientOptimizerKind optimizer = ClientOptimizerKind::Adam;
  SamplerKind sampler = SamplerKind::Hybrid;
  int sample_count = 32;       // frames per video (clamped to the sequence length)
  int window_halfwidth = 16;   // hybrid sampler window (clamped to fit)
  double center_bias = 0.6;    // hybrid sampler mass on the window
  InferenceKind inference = InferenceKind::DirectSoftmax;
  PrototypeMode prototype_mode = PrototypeMode::Prototype;
  int warmup_epochs = 0;  // cross-entropy epochs preceding the triplet epochs each round
  double init_scale = 0.1;
  FederatedConfig fed;

  static StrategyPipeline santhi_like();
  static StrategyPipeline elbflorenz_like();
  static StrategyPipeline camma_like();
  /// Looks a preset up by name; throws ValidationError for unknown names.
  static StrategyPipeline preset(const std::string& name);
  static std::vector<std::string> preset_names();
};

struct RoundClientStat {
  std::string client_id;
  std::int64_t num_examples = 0;
  double local_best_score = 0.0;
  std::vector<double> epoch_scores;
};

struct RoundTelemetry {
  int round = 0;
  std::vector<RoundClientStat> clients;
  double global_score = 0.0;  // mean local-validation macro-F1 of the aggregated model
};

struct LocalTrainResult {
  ParameterVector best_params;
  double best_score = 0.0;
  std::vector<double> epoch_scores;
  std::int64_t num_train = 0;
};

/// One client's local work for one round: initialize from the global
/// parameters, train the scheduled epochs, score a fixed stratified
/// validation split after every epoch, and return the best checkpoint.
LocalTrainResult train_local_round(const Model& global_model, const StrategyPipeline& pipeline,
                                   const CenterDataset& center, int round_index);

struct TrainingOutcome {
  std::unique_ptr<Model> model;
  std::vector<RoundTelemetry> telemetry;
};

/// The seeded model run_federated_training starts from: the pipeline's
/// architecture with parameters drawn from the pipeline's init stream.
std::unique_ptr<Model> initial_global_model(const StrategyPipeline& pipeline, int input_dim,
                                            int num_classes);

/// Synchronous federated rounds over every non-holdout center with training
/// data: broadcast, local best-checkpoint training, aggregation. All
/// randomness derives from (seed, center, round, epoch) streams, so the
/// result does not depend on scheduling.
TrainingOutcome run_federated_training(const StrategyPipeline& pipeline,
                                       std::span<const CenterDataset> datasets);

struct CasePrediction {
  std::string case_id;
  std::string center_id;
  int truth = 0;
  int pred = 0;
};

/// Predicts one video with the pipeline's inference rule. `support` is
/// required for prototype inference and ignored otherwise; `eval_salt`
/// seeds any stochastic frame sampling per case.
int predict_video(const Model& model, const VideoInstance& instance,
                  const StrategyPipeline& pipeline, std::uint64_t eval_salt,
                  const SupportSet* support);

/// Embeds the training videos of `centers` into a per-class support set.
SupportSet build_support_set(const Model& model, const StrategyPipeline& pipeline,
                             std::span<const CenterDataset> centers);

/// Global-model evaluation on the hold-out center's test set.
MetricReport evaluate_task1(const Model& model, const StrategyPipeline& pipeline,
                            std::span<const CenterDataset> datasets,
                            const CenterDataset& holdout,
                            std::vector<CasePrediction>* predictions = nullptr);

struct AverageMetrics {
  double f1_macro = 0.0;
  double expected_cost = 0.0;
};

struct Task2Outcome {
  std::vector<std::pair<std::string, MetricReport>> per_center;
  AverageMetrics average;
  std::vector<CasePrediction> predictions;
};

/// Per-center adaptation: copy the global model, fine-tune on the center's
/// training data, evaluate on its test set; metrics are also averaged
/// arithmetically across centers.
Task2Outcome run_task2_adaptation(const Model& global_model, const StrategyPipeline& pipeline,
                                  std::span<const CenterDataset> datasets);

struct PipelineResult {
  std::string pipeline;
  MetricReport task1;
  std::vector<CasePrediction> task1_predictions;
  Task2Outcome task2;
  std::vector<RoundTelemetry> telemetry;
};

struct ChallengeResult {
  std::uint64_t seed = 0;
  std::string holdout_center;
  std::string data_provenance;  // JSON value describing the data source, for the bundle
  std::vector<PipelineResult> pipelines;
};

/// Runs training plus both tasks for every pipeline. Per-pipeline streams
/// are salted with the pipeline name, so a run with a subset of pipelines
/// reproduces the same per-pipeline numbers.
ChallengeResult run_challenge(std::span<const StrategyPipeline> pipelines,
                              std::span<const CenterDataset> datasets);

/// Writes results.json plus predictions_<pipeline>.csv files into `dir`.
/// Output bytes depend only on the result contents.
void write_results_bundle(const ChallengeResult& result,
                          std::span<const StrategyPipeline> pipelines,
                          const std::filesystem::path& dir);

// Config-facing names for the pipeline enums.
std::string to_string(AggregationKind v);
std::string to_string(ClientOptimizerKind v);
std::string to_string(SamplerKind v);
std::string to_string(InferenceKind v);
std::string to_string(ModelKind v);
std::string to_string(LossKind v);
std::string to_string(PrototypeMode v);
AggregationKind parse_aggregation_kind(const std::string& name);
ClientOptimizerKind parse_client_optimizer(const std::string& name);
SamplerKind parse_sampler_kind(const std::string& name);
InferenceKind parse_inference_kind(const std::string& name);
ModelKind parse_model_kind(const std::string& name);
LossKind parse_loss_kind(const std::string& name);
PrototypeMode parse_prototype_mode(const std::string& name);

}  // namespace fedsurg
