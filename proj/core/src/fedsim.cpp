#include "fedsurg/fedsim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <tuple>

#include "fedsurg/errors.hpp"
#include "fedsurg/json_io.hpp"
#include "fedsurg/rng.hpp"

namespace fedsurg {

namespace {

using nlohmann::json;

// Stream salts; every random decision hangs off (pipeline seed, salt, ...).
constexpr std::uint64_t kSaltInit = 1;
constexpr std::uint64_t kSaltSplit = 2;
constexpr std::uint64_t kSaltEpoch = 3;
constexpr std::uint64_t kSaltEval = 4;
constexpr std::uint64_t kSaltFineTune = 5;
constexpr std::uint64_t kSaltTask1 = 6;
constexpr std::uint64_t kSaltTask2 = 7;

std::uint64_t pipeline_seed(const StrategyPipeline& pipeline) {
  return derive_seed(pipeline.fed.seed, hash_id(pipeline.name));
}

void validate_pipeline(const StrategyPipeline& pipeline) {
  if (pipeline.name.empty()) throw ValidationError("pipeline name must be non-empty");
  const auto& fed = pipeline.fed;
  if (fed.fl_rounds < 1) throw ValidationError("fl_rounds must be >= 1");
  if (fed.local_epochs < 1) throw ValidationError("local_epochs must be >= 1");
  if (fed.batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (fed.fine_tune_epochs < 0) throw ValidationError("fine_tune_epochs must be >= 0");
  if (fed.learning_rate < 0.0) throw ValidationError("learning_rate must be >= 0");
  if (pipeline.sample_count < 1) throw ValidationError("sample_count must be >= 1");
  if (pipeline.warmup_epochs < 0) throw ValidationError("warmup_epochs must be >= 0");

  const bool embedding = pipeline.model == ModelKind::Embedding;
  if (embedding != (pipeline.inference == InferenceKind::Prototype)) {
    throw ValidationError("pipeline '" + pipeline.name +
                          "': prototype inference and embedding models go together");
  }
  if (pipeline.loss == LossKind::TripletMargin && !embedding) {
    throw ValidationError("pipeline '" + pipeline.name +
                          "': triplet loss needs an embedding model");
  }
  if (pipeline.sampler == SamplerKind::SimilarityTopK && !embedding) {
    throw ValidationError("pipeline '" + pipeline.name +
                          "': similarity frame selection needs an embedding model");
  }
}

std::unique_ptr<Model> make_model(const StrategyPipeline& pipeline, int input_dim,
                                  int num_classes) {
  LossConfig loss;
  loss.kind = pipeline.loss;
  loss.margin = pipeline.triplet_margin;
  if (pipeline.model == ModelKind::Embedding) {
    return embedding_model(input_dim, num_classes, pipeline.embed_dim, std::move(loss));
  }
  return softmax_head_model(input_dim, num_classes, std::move(loss));
}

struct SamplerParams {
  int count = 1;
  int window = 0;
};

/// Clamps the configured sampler to a concrete sequence length.
SamplerParams effective_sampler(const StrategyPipeline& pipeline, int seq_len) {
  SamplerParams p;
  p.count = std::min(pipeline.sample_count, seq_len);
  const int center = seq_len / 2;
  p.window = std::min({pipeline.window_halfwidth, center, seq_len - 1 - center});
  if (p.window < 0) p.window = 0;
  return p;
}

std::vector<int> training_indices(const StrategyPipeline& pipeline, const Model& model,
                                  const VideoInstance& video, std::mt19937_64& rng) {
  const auto p = effective_sampler(pipeline, video.num_frames);
  switch (pipeline.sampler) {
    case SamplerKind::Hybrid:
      return sample_indices_hybrid(video.num_frames, p.count, p.window, pipeline.center_bias,
                                   rng);
    case SamplerKind::Equidistant:
      return sample_indices_equidistant(video.num_frames, p.count);
    case SamplerKind::SimilarityTopK:
      return select_frames_by_similarity(video, model, p.count);
  }
  throw ValidationError("unknown sampler");
}

std::vector<double> pool_frames(const VideoInstance& video, std::span<const int> indices) {
  std::vector<double> pooled(static_cast<std::size_t>(video.feature_dim), 0.0);
  for (int t : indices) {
    const auto f = video.frame(t);
    for (int d = 0; d < video.feature_dim; ++d) pooled[d] += f[d];
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  for (double& v : pooled) v *= inv;
  return pooled;
}

std::vector<double> video_embedding(const Model& model, const StrategyPipeline& pipeline,
                                    const VideoInstance& video) {
  const auto p = effective_sampler(pipeline, video.num_frames);
  const auto indices = pipeline.sampler == SamplerKind::SimilarityTopK
                           ? select_frames_by_similarity(video, model, p.count)
                           : sample_indices_equidistant(video.num_frames, p.count);
  std::vector<double> mean;
  for (int t : indices) {
    const auto e = model.embed(video.frame(t));
    if (mean.empty()) mean.assign(e.size(), 0.0);
    for (std::size_t d = 0; d < e.size(); ++d) mean[d] += e[d];
  }
  double norm_sq = 0.0;
  for (double v : mean) norm_sq += v * v;
  const double norm = std::sqrt(norm_sq);
  if (norm < 1e-12) {
    std::fill(mean.begin(), mean.end(), 0.0);
    mean[0] = 1.0;
    return mean;
  }
  for (double& v : mean) v /= norm;
  return mean;
}

struct LocalSplit {
  std::vector<const VideoInstance*> train;
  std::vector<const VideoInstance*> val;
};

/// Fixed 80/20 stratified split of a client's training videos, derived from
/// the pipeline seed and center id so it is identical every round.
LocalSplit split_center(const CenterDataset& center, const StrategyPipeline& pipeline,
                        int num_classes) {
  LocalSplit split;
  std::vector<std::vector<const VideoInstance*>> by_class(
      static_cast<std::size_t>(num_classes));
  for (const auto& video : center.train) {
    by_class[static_cast<std::size_t>(video.label)].push_back(&video);
  }
  auto rng = make_rng(derive_seed(pipeline_seed(pipeline), hash_id(center.center_id), kSaltSplit));
  for (auto& group : by_class) {
    std::shuffle(group.begin(), group.end(), rng);
    const auto n_val = group.size() / 5;
    for (std::size_t i = 0; i < group.size(); ++i) {
      (i < n_val ? split.val : split.train).push_back(group[i]);
    }
  }
  if (split.val.empty()) split.val = split.train;  // tiny clients self-validate on train
  return split;
}

std::vector<double> local_class_weights(std::span<const VideoInstance* const> train,
                                        int num_classes) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (const auto* video : train) counts[static_cast<std::size_t>(video->label)] += 1;
  const auto total = static_cast<double>(train.size());
  std::vector<double> weights(static_cast<std::size_t>(num_classes), 0.0);
  double max_weight = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    if (counts[c] > 0) {
      weights[c] = total / (static_cast<double>(num_classes) * static_cast<double>(counts[c]));
      max_weight = std::max(max_weight, weights[c]);
    }
  }
  if (max_weight == 0.0) max_weight = 1.0;
  for (double& w : weights) {
    if (w == 0.0) w = max_weight;  // locally absent classes get the largest weight
  }
  return weights;
}

double score_videos(const Model& model, const StrategyPipeline& pipeline,
                    std::span<const VideoInstance* const> videos, const SupportSet* support,
                    std::uint64_t eval_salt, int num_classes, F1Convention convention) {
  std::vector<int> truths, preds;
  truths.reserve(videos.size());
  preds.reserve(videos.size());
  for (const auto* video : videos) {
    truths.push_back(video->label);
    preds.push_back(predict_video(model, *video, pipeline, eval_salt, support));
  }
  return macro_f1(build_confusion_matrix(truths, preds, LabelSpace{num_classes}), convention);
}

class AdamState {
 public:
  explicit AdamState(std::size_t dim) : m_(dim, 0.0), v_(dim, 0.0) {}

  void step(ParameterVector& w, const ParameterVector& g, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t d = 0; d < w.size(); ++d) {
      m_[d] = kBeta1 * m_[d] + (1.0 - kBeta1) * g[d];
      v_[d] = kBeta2 * v_[d] + (1.0 - kBeta2) * g[d] * g[d];
      w[d] -= lr * (m_[d] / bc1) / (std::sqrt(v_[d] / bc2) + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  ParameterVector m_, v_;
  std::int64_t t_ = 0;
};

struct FramePoolEntry {
  const VideoInstance* video = nullptr;
  int frame = 0;
  int label = 0;
};

/// One client's epoch-by-epoch trainer for a single round.
class LocalTrainer {
 public:
  LocalTrainer(Model& model, const StrategyPipeline& pipeline, const CenterDataset& center,
               int round_index, const LocalSplit& split)
      : model_(model),
        pipeline_(pipeline),
        center_(center),
        round_(round_index),
        split_(split),
        adam_(model.param_count()) {}

  void run_epoch(int epoch_index, bool triplet_phase) {
    auto rng = make_rng(derive_seed(pipeline_seed(pipeline_), hash_id(center_.center_id),
                                    kSaltEpoch,
                                    (static_cast<std::uint64_t>(round_) << 20) |
                                        static_cast<std::uint64_t>(epoch_index)));
    if (pipeline_.fed.learning_rate == 0.0) return;  // nothing can move
    if (triplet_phase) {
      run_triplet_epoch(rng);
    } else {
      run_classifier_epoch(rng);
    }
  }

 private:
  void check_loss(double loss) const {
    if (!std::isfinite(loss)) {
      throw ComputationError("non-finite loss at round " + std::to_string(round_) +
                             " client '" + center_.center_id + "'");
    }
  }

  void apply_step(const std::function<std::pair<double, ParameterVector>(void)>& eval_current,
                  const std::function<ParameterVector(const ParameterVector&)>& grad_at) {
    ParameterVector w = model_.params();
    const double lr = pipeline_.fed.learning_rate;
    switch (pipeline_.optimizer) {
      case ClientOptimizerKind::Sgd: {
        auto [loss, g] = eval_current();
        check_loss(loss);
        for (std::size_t d = 0; d < w.size(); ++d) w[d] -= lr * g[d];
        break;
      }
      case ClientOptimizerKind::Adam: {
        auto [loss, g] = eval_current();
        check_loss(loss);
        adam_.step(w, g, lr);
        break;
      }
      case ClientOptimizerKind::Sam: {
        auto [loss, g] = eval_current();
        check_loss(loss);
        SamConfig cfg = pipeline_.fed.sam;
        cfg.base_lr = lr;
        w = sam_step(grad_at, w, cfg);
        break;
      }
    }
    model_.set_params(w);
  }

  void run_classifier_epoch(std::mt19937_64& rng) {
    // Materialize this epoch's samples: pooled per video for direct softmax,
    // per selected frame otherwise.
    std::vector<std::vector<double>> pooled_storage;
    std::vector<Sample> samples;
    const bool pool = pipeline_.inference == InferenceKind::DirectSoftmax;
    for (const auto* video : split_.train) {
      const auto indices = training_indices(pipeline_, model_, *video, rng);
      if (pool) {
        pooled_storage.push_back(pool_frames(*video, indices));
      } else {
        for (int t : indices) samples.push_back({video->frame(t), video->label});
      }
    }
    if (pool) {
      samples.reserve(pooled_storage.size());
      for (std::size_t i = 0; i < pooled_storage.size(); ++i) {
        samples.push_back({pooled_storage[i], split_.train[i]->label});
      }
    }
    std::shuffle(samples.begin(), samples.end(), rng);

    const auto bs = static_cast<std::size_t>(pipeline_.fed.batch_size);
    for (std::size_t begin = 0; begin < samples.size(); begin += bs) {
      const std::span<const Sample> batch(samples.data() + begin,
                                          std::min(bs, samples.size() - begin));
      apply_step([&] { return model_.loss_and_gradient(batch); },
                 [&](const ParameterVector& p) {
                   model_.set_params(p);
                   return model_.loss_and_gradient(batch).second;
                 });
    }
  }

  void run_triplet_epoch(std::mt19937_64& rng) {
    // Frame pool over the frames each video's sampler selects, grouped by
    // label for positive/negative draws.
    std::vector<FramePoolEntry> pool;
    for (const auto* video : split_.train) {
      const auto indices = training_indices(pipeline_, model_, *video, rng);
      for (int t : indices) pool.push_back({video, t, video->label});
    }
    std::vector<std::vector<std::size_t>> by_label(
        static_cast<std::size_t>(model_.num_classes()));
    for (std::size_t i = 0; i < pool.size(); ++i) {
      by_label[static_cast<std::size_t>(pool[i].label)].push_back(i);
    }
    std::vector<std::size_t> other_count(by_label.size(), 0);
    for (std::size_t c = 0; c < by_label.size(); ++c) {
      other_count[c] = pool.size() - by_label[c].size();
    }

    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<Triplet> batch;
    auto flush = [&] {
      if (batch.empty()) return;
      const std::span<const Triplet> view(batch);
      apply_step([&] { return model_.loss_and_gradient(view); },
                 [&](const ParameterVector& p) {
                   model_.set_params(p);
                   return model_.loss_and_gradient(view).second;
                 });
      batch.clear();
    };

    for (const std::size_t anchor_idx : order) {
      const auto& anchor = pool[anchor_idx];
      const auto& same = by_label[static_cast<std::size_t>(anchor.label)];
      if (other_count[static_cast<std::size_t>(anchor.label)] == 0) continue;
      std::uniform_int_distribution<std::size_t> pick_same(0, same.size() - 1);
      const auto& positive = pool[same[pick_same(rng)]];
      // Rejection-sample a negative; the label check terminates because a
      // different-label entry exists.
      std::uniform_int_distribution<std::size_t> pick_any(0, pool.size() - 1);
      std::size_t neg_idx = pick_any(rng);
      while (pool[neg_idx].label == anchor.label) neg_idx = pick_any(rng);
      const auto& negative = pool[neg_idx];
      batch.push_back({anchor.video->frame(anchor.frame), positive.video->frame(positive.frame),
                       negative.video->frame(negative.frame)});
      if (batch.size() == static_cast<std::size_t>(pipeline_.fed.batch_size)) flush();
    }
    flush();
  }

  Model& model_;
  const StrategyPipeline& pipeline_;
  const CenterDataset& center_;
  int round_;
  const LocalSplit& split_;
  AdamState adam_;
};

std::vector<const CenterDataset*> training_centers(std::span<const CenterDataset> datasets,
                                                   const std::string& holdout) {
  std::vector<const CenterDataset*> out;
  for (const auto& center : datasets) {
    if (center.center_id == holdout || center.train.empty()) continue;
    out.push_back(&center);
  }
  std::sort(out.begin(), out.end(), [](const CenterDataset* a, const CenterDataset* b) {
    return a->center_id < b->center_id;
  });
  return out;
}

const CenterDataset* find_center(std::span<const CenterDataset> datasets,
                                 const std::string& center_id) {
  for (const auto& center : datasets) {
    if (center.center_id == center_id) return &center;
  }
  return nullptr;
}

int dataset_feature_dim(std::span<const CenterDataset> datasets) {
  for (const auto& center : datasets) {
    for (const auto* list : {&center.train, &center.test}) {
      if (!list->empty()) return list->front().feature_dim;
    }
  }
  throw ValidationError("datasets contain no videos");
}

int dataset_num_classes(std::span<const CenterDataset> datasets) {
  int max_label = -1;
  std::size_t priors = 0;
  for (const auto& center : datasets) {
    priors = std::max(priors, center.class_priors.size());
    for (const auto* list : {&center.train, &center.test}) {
      for (const auto& video : *list) max_label = std::max(max_label, video.label);
    }
  }
  return std::max(static_cast<int>(priors), max_label + 1);
}

SupportSet build_support_from_videos(const Model& model, const StrategyPipeline& pipeline,
                                     std::span<const VideoInstance* const> videos,
                                     int num_classes) {
  SupportSet support;
  support.members.resize(static_cast<std::size_t>(num_classes));
  for (const auto* video : videos) {
    support.members[static_cast<std::size_t>(video->label)].push_back(
        video_embedding(model, pipeline, *video));
  }
  return support;
}

MetricReport evaluate_on_videos(const Model& model, const StrategyPipeline& pipeline,
                                std::span<const VideoInstance* const> videos,
                                const SupportSet* support, std::uint64_t eval_salt,
                                int num_classes, std::vector<CasePrediction>* predictions) {
  if (videos.empty()) throw ValidationError("evaluation set is empty");
  std::vector<int> truths, preds;
  truths.reserve(videos.size());
  preds.reserve(videos.size());
  for (const auto* video : videos) {
    const int pred = predict_video(model, *video, pipeline, eval_salt, support);
    truths.push_back(video->label);
    preds.push_back(pred);
    if (predictions) {
      predictions->push_back({video->case_id, video->center_id, video->label, pred});
    }
  }
  return metric_report(build_confusion_matrix(truths, preds, LabelSpace{num_classes}),
                       pipeline.fed.f1_convention);
}

std::vector<const VideoInstance*> video_pointers(const std::vector<VideoInstance>& videos) {
  std::vector<const VideoInstance*> out;
  out.reserve(videos.size());
  for (const auto& v : videos) out.push_back(&v);
  return out;
}

void fine_tune(Model& model, const StrategyPipeline& pipeline, const CenterDataset& center,
               int num_classes) {
  LocalSplit all;
  all.train = video_pointers(center.train);
  all.val = all.train;
  // Reuses the round trainer with a dedicated stream; no checkpoint
  // selection, adaptation keeps the final epoch.
  LocalTrainer trainer(model, pipeline, center, /*round_index=*/0, all);
  if (pipeline.loss == LossKind::WeightedCrossEntropy) {
    LossConfig cfg = model.loss_config();
    cfg.kind = LossKind::WeightedCrossEntropy;
    cfg.class_weights = local_class_weights(all.train, num_classes);
    model.set_loss_config(cfg);
  }
  const bool triplet = pipeline.loss == LossKind::TripletMargin;
  for (int epoch = 0; epoch < pipeline.fed.fine_tune_epochs; ++epoch) {
    // Salted away from the round streams via a large epoch offset.
    trainer.run_epoch(static_cast<int>(kSaltFineTune << 10) + epoch, triplet);
  }
}

}  // namespace

// --- Presets ---------------------------------------------------------------

StrategyPipeline StrategyPipeline::santhi_like() {
  StrategyPipeline p;
  p.name = "santhi-like";
  p.model = ModelKind::SoftmaxHead;
  p.loss = LossKind::CrossEntropy;
  p.optimizer = ClientOptimizerKind::Adam;
  p.sampler = SamplerKind::Hybrid;
  p.sample_count = 32;
  p.window_halfwidth = 16;
  p.center_bias = 0.6;
  p.inference = InferenceKind::DirectSoftmax;
  p.fed.strategy = AggregationKind::FedAvg;
  p.fed.fl_rounds = 5;
  p.fed.local_epochs = 20;
  p.fed.learning_rate = 1e-4;
  p.fed.batch_size = 4;
  return p;
}

StrategyPipeline StrategyPipeline::elbflorenz_like() {
  StrategyPipeline p;
  p.name = "elbflorenz-like";
  p.model = ModelKind::SoftmaxHead;
  p.loss = LossKind::WeightedCrossEntropy;
  p.optimizer = ClientOptimizerKind::Sam;
  p.sampler = SamplerKind::Equidistant;
  p.sample_count = 100;
  p.inference = InferenceKind::MajorityVote;
  p.fed.strategy = AggregationKind::FedOpt;
  p.fed.fl_rounds = 50;
  p.fed.local_epochs = 2;
  p.fed.learning_rate = 1e-3;
  p.fed.batch_size = 128;
  p.fed.sam.rho = 0.05;
  p.fed.sam.adaptive = true;
  return p;
}

StrategyPipeline StrategyPipeline::camma_like() {
  StrategyPipeline p;
  p.name = "camma-like";
  p.model = ModelKind::Embedding;
  p.loss = LossKind::TripletMargin;
  p.triplet_margin = 0.5;
  p.embed_dim = 16;
  p.optimizer = ClientOptimizerKind::Adam;
  p.sampler = SamplerKind::SimilarityTopK;
  p.sample_count = 8;
  p.inference = InferenceKind::Prototype;
  p.prototype_mode = PrototypeMode::Prototype;
  p.warmup_epochs = 10;
  p.fed.strategy = AggregationKind::FedMedian;
  p.fed.fl_rounds = 10;
  p.fed.local_epochs = 5;
  p.fed.learning_rate = 1e-6;
  p.fed.batch_size = 1;
  return p;
}

StrategyPipeline StrategyPipeline::preset(const std::string& name) {
  if (name == "santhi-like") return santhi_like();
  if (name == "elbflorenz-like") return elbflorenz_like();
  if (name == "camma-like") return camma_like();
  throw ValidationError("unknown pipeline preset '" + name + "'");
}

std::vector<std::string> StrategyPipeline::preset_names() {
  return {"santhi-like", "elbflorenz-like", "camma-like"};
}

// --- Training ----------------------------------------------------------------

LocalTrainResult train_local_round(const Model& global_model, const StrategyPipeline& pipeline,
                                   const CenterDataset& center, int round_index) {
  if (center.train.empty()) {
    throw ValidationError("client '" + center.center_id + "' has no training data");
  }
  const int num_classes = global_model.num_classes();
  const LocalSplit split = split_center(center, pipeline, num_classes);

  auto model = global_model.clone();
  if (pipeline.loss == LossKind::WeightedCrossEntropy) {
    LossConfig cfg = model->loss_config();
    cfg.class_weights = local_class_weights(split.train, num_classes);
    model->set_loss_config(cfg);
  }

  const std::uint64_t eval_salt =
      derive_seed(pipeline_seed(pipeline), hash_id(center.center_id), kSaltEval,
                  static_cast<std::uint64_t>(round_index));
  auto validation_score = [&](const Model& m) {
    const SupportSet support =
        pipeline.inference == InferenceKind::Prototype
            ? build_support_from_videos(m, pipeline, split.train, num_classes)
            : SupportSet{};
    return score_videos(m, pipeline, split.val,
                        pipeline.inference == InferenceKind::Prototype ? &support : nullptr,
                        eval_salt, num_classes, pipeline.fed.f1_convention);
  };

  const bool two_phase = pipeline.loss == LossKind::TripletMargin;
  const int warmup = two_phase ? pipeline.warmup_epochs : 0;
  const int total_epochs = warmup + pipeline.fed.local_epochs;

  LocalTrainer trainer(*model, pipeline, center, round_index, split);
  LocalTrainResult result;
  result.num_train = static_cast<std::int64_t>(split.train.size());
  result.best_score = -1.0;
  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    const bool warmup_phase = epoch < warmup;
    if (two_phase) {
      LossConfig cfg = model->loss_config();
      cfg.kind = warmup_phase ? LossKind::CrossEntropy : LossKind::TripletMargin;
      model->set_loss_config(cfg);
    }
    trainer.run_epoch(epoch, two_phase && !warmup_phase);
    const double score = validation_score(*model);
    result.epoch_scores.push_back(score);
    if (score > result.best_score) {
      result.best_score = score;
      result.best_params = model->params();
    }
  }
  return result;
}

std::unique_ptr<Model> initial_global_model(const StrategyPipeline& pipeline, int input_dim,
                                            int num_classes) {
  auto model = make_model(pipeline, input_dim, num_classes);
  auto rng = make_rng(derive_seed(pipeline_seed(pipeline), kSaltInit));
  model->randomize(rng, pipeline.init_scale);
  return model;
}

TrainingOutcome run_federated_training(const StrategyPipeline& pipeline,
                                       std::span<const CenterDataset> datasets) {
  validate_pipeline(pipeline);
  const auto clients = training_centers(datasets, pipeline.fed.holdout_center);
  if (clients.empty()) {
    throw ValidationError("no training centers besides the hold-out '" +
                          pipeline.fed.holdout_center + "'");
  }
  const int feature_dim = dataset_feature_dim(datasets);
  const int num_classes = dataset_num_classes(datasets);

  auto model = initial_global_model(pipeline, feature_dim, num_classes);
  ParameterVector global = model->params();
  ServerOptState server_state;
  server_state.config = pipeline.fed.server_opt;

  TrainingOutcome outcome;
  for (int round = 0; round < pipeline.fed.fl_rounds; ++round) {
    std::vector<ClientUpdate> updates;
    RoundTelemetry telemetry;
    telemetry.round = round;
    model->set_params(global);
    for (const auto* client : clients) {
      auto local = train_local_round(*model, pipeline, *client, round);
      telemetry.clients.push_back({client->center_id, local.num_train, local.best_score,
                                   local.epoch_scores});
      updates.push_back({client->center_id, std::move(local.best_params), local.num_train,
                         local.best_score});
    }

    switch (pipeline.fed.strategy) {
      case AggregationKind::FedAvg:
        global = fed_avg(updates);
        break;
      case AggregationKind::FedMedian:
        global = fed_median(updates);
        break;
      case AggregationKind::FedOpt: {
        auto [next, state] = fed_opt_apply(server_state, global, fed_avg(updates));
        global = std::move(next);
        server_state = std::move(state);
        break;
      }
    }

    model->set_params(global);
    double score_sum = 0.0;
    for (const auto* client : clients) {
      const LocalSplit split = split_center(*client, pipeline, num_classes);
      const std::uint64_t eval_salt =
          derive_seed(pipeline_seed(pipeline), hash_id(client->center_id), kSaltEval,
                      static_cast<std::uint64_t>(round));
      const SupportSet support =
          pipeline.inference == InferenceKind::Prototype
              ? build_support_from_videos(*model, pipeline, split.train, num_classes)
              : SupportSet{};
      score_sum += score_videos(
          *model, pipeline, split.val,
          pipeline.inference == InferenceKind::Prototype ? &support : nullptr, eval_salt,
          num_classes, pipeline.fed.f1_convention);
    }
    telemetry.global_score = score_sum / static_cast<double>(clients.size());
    outcome.telemetry.push_back(std::move(telemetry));
  }

  model->set_params(global);
  outcome.model = std::move(model);
  return outcome;
}

// --- Inference -----------------------------------------------------------------

int predict_video(const Model& model, const VideoInstance& instance,
                  const StrategyPipeline& pipeline, std::uint64_t eval_salt,
                  const SupportSet* support) {
  const auto params = effective_sampler(pipeline, instance.num_frames);
  std::vector<int> indices;
  switch (pipeline.sampler) {
    case SamplerKind::Hybrid: {
      auto rng = make_rng(derive_seed(eval_salt, hash_id(instance.case_id)));
      indices = sample_indices_hybrid(instance.num_frames, params.count, params.window,
                                      pipeline.center_bias, rng);
      break;
    }
    case SamplerKind::Equidistant:
      indices = sample_indices_equidistant(instance.num_frames, params.count);
      break;
    case SamplerKind::SimilarityTopK:
      indices = select_frames_by_similarity(instance, model, params.count);
      break;
  }

  switch (pipeline.inference) {
    case InferenceKind::DirectSoftmax: {
      const auto pooled = pool_frames(instance, indices);
      const auto probs = model.predict_proba(pooled);
      return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    }
    case InferenceKind::MajorityVote: {
      std::vector<std::vector<double>> frame_probs;
      frame_probs.reserve(indices.size());
      for (int t : indices) frame_probs.push_back(model.predict_proba(instance.frame(t)));
      return majority_vote(frame_probs);
    }
    case InferenceKind::Prototype: {
      if (!support) throw ValidationError("prototype inference needs a support set");
      const auto query = video_embedding(model, pipeline, instance);
      return prototype_classify(query, *support, pipeline.prototype_mode);
    }
  }
  throw ValidationError("unknown inference kind");
}

SupportSet build_support_set(const Model& model, const StrategyPipeline& pipeline,
                             std::span<const CenterDataset> centers) {
  std::vector<const VideoInstance*> videos;
  for (const auto& center : centers) {
    for (const auto& video : center.train) videos.push_back(&video);
  }
  return build_support_from_videos(model, pipeline, videos, model.num_classes());
}

MetricReport evaluate_task1(const Model& model, const StrategyPipeline& pipeline,
                            std::span<const CenterDataset> datasets,
                            const CenterDataset& holdout,
                            std::vector<CasePrediction>* predictions) {
  if (holdout.test.empty()) {
    throw ValidationError("hold-out center '" + holdout.center_id + "' has an empty test set");
  }
  SupportSet support;
  if (pipeline.inference == InferenceKind::Prototype) {
    std::vector<const VideoInstance*> videos;
    for (const auto* center : training_centers(datasets, pipeline.fed.holdout_center)) {
      for (const auto& video : center->train) videos.push_back(&video);
    }
    support = build_support_from_videos(model, pipeline, videos, model.num_classes());
  }
  const std::uint64_t eval_salt =
      derive_seed(pipeline_seed(pipeline), hash_id(holdout.center_id), kSaltEval, kSaltTask1);
  const auto videos = video_pointers(holdout.test);
  return evaluate_on_videos(model, pipeline, videos,
                            pipeline.inference == InferenceKind::Prototype ? &support : nullptr,
                            eval_salt, model.num_classes(), predictions);
}

Task2Outcome run_task2_adaptation(const Model& global_model, const StrategyPipeline& pipeline,
                                  std::span<const CenterDataset> datasets) {
  const auto clients = training_centers(datasets, pipeline.fed.holdout_center);
  if (clients.empty()) throw ValidationError("no centers to adapt to");

  Task2Outcome outcome;
  double f1_sum = 0.0, ec_sum = 0.0;
  for (const auto* center : clients) {
    if (center->test.empty()) {
      throw ValidationError("center '" + center->center_id +
                            "' has an empty test set; cannot run adaptation");
    }
    auto model = global_model.clone();
    fine_tune(*model, pipeline, *center, model->num_classes());

    SupportSet support;
    if (pipeline.inference == InferenceKind::Prototype) {
      const auto train_videos = video_pointers(center->train);
      support = build_support_from_videos(*model, pipeline, train_videos,
                                          model->num_classes());
    }
    const std::uint64_t eval_salt =
        derive_seed(pipeline_seed(pipeline), hash_id(center->center_id), kSaltEval, kSaltTask2);
    const auto videos = video_pointers(center->test);
    auto report = evaluate_on_videos(
        *model, pipeline, videos,
        pipeline.inference == InferenceKind::Prototype ? &support : nullptr, eval_salt,
        model->num_classes(), &outcome.predictions);
    f1_sum += report.f1_macro;
    ec_sum += report.expected_cost;
    outcome.per_center.emplace_back(center->center_id, std::move(report));
  }
  outcome.average.f1_macro = f1_sum / static_cast<double>(clients.size());
  outcome.average.expected_cost = ec_sum / static_cast<double>(clients.size());
  return outcome;
}

ChallengeResult run_challenge(std::span<const StrategyPipeline> pipelines,
                              std::span<const CenterDataset> datasets) {
  if (pipelines.empty()) throw ValidationError("no pipelines to run");

  ChallengeResult result;
  result.seed = pipelines.front().fed.seed;
  result.holdout_center = pipelines.front().fed.holdout_center;
  for (const auto& pipeline : pipelines) {
    validate_pipeline(pipeline);
    const auto* holdout = find_center(datasets, pipeline.fed.holdout_center);
    if (!holdout) {
      throw ValidationError("hold-out center '" + pipeline.fed.holdout_center +
                            "' is not in the dataset");
    }

    PipelineResult pr;
    pr.pipeline = pipeline.name;
    auto trained = run_federated_training(pipeline, datasets);
    pr.telemetry = std::move(trained.telemetry);
    pr.task1 = evaluate_task1(*trained.model, pipeline, datasets, *holdout,
                              &pr.task1_predictions);
    pr.task2 = run_task2_adaptation(*trained.model, pipeline, datasets);
    result.pipelines.push_back(std::move(pr));
  }
  return result;
}

// --- Names -------------------------------------------------------------------

std::string to_string(AggregationKind v) {
  switch (v) {
    case AggregationKind::FedAvg: return "fedavg";
    case AggregationKind::FedMedian: return "fedmedian";
    case AggregationKind::FedOpt: return "fedopt";
  }
  return "?";
}
std::string to_string(ClientOptimizerKind v) {
  switch (v) {
    case ClientOptimizerKind::Sgd: return "sgd";
    case ClientOptimizerKind::Adam: return "adam";
    case ClientOptimizerKind::Sam: return "sam";
  }
  return "?";
}
std::string to_string(SamplerKind v) {
  switch (v) {
    case SamplerKind::Hybrid: return "hybrid";
    case SamplerKind::Equidistant: return "equidistant";
    case SamplerKind::SimilarityTopK: return "similarity_topk";
  }
  return "?";
}
std::string to_string(InferenceKind v) {
  switch (v) {
    case InferenceKind::DirectSoftmax: return "direct_softmax";
    case InferenceKind::MajorityVote: return "majority_vote";
    case InferenceKind::Prototype: return "prototype";
  }
  return "?";
}
std::string to_string(ModelKind v) {
  return v == ModelKind::SoftmaxHead ? "softmax_head" : "embedding";
}
std::string to_string(LossKind v) {
  switch (v) {
    case LossKind::CrossEntropy: return "cross_entropy";
    case LossKind::WeightedCrossEntropy: return "weighted_cross_entropy";
    case LossKind::TripletMargin: return "triplet_margin";
  }
  return "?";
}
std::string to_string(PrototypeMode v) {
  return v == PrototypeMode::Prototype ? "prototype" : "per_sample";
}

namespace {

template <typename T>
T parse_name(const std::string& name, std::initializer_list<T> values, const char* what) {
  for (T v : values) {
    if (to_string(v) == name) return v;
  }
  throw ValidationError(std::string("unknown ") + what + " '" + name + "'");
}

}  // namespace

AggregationKind parse_aggregation_kind(const std::string& name) {
  return parse_name(name, {AggregationKind::FedAvg, AggregationKind::FedMedian,
                           AggregationKind::FedOpt},
                    "aggregation strategy");
}
ClientOptimizerKind parse_client_optimizer(const std::string& name) {
  return parse_name(name, {ClientOptimizerKind::Sgd, ClientOptimizerKind::Adam,
                           ClientOptimizerKind::Sam},
                    "client optimizer");
}
SamplerKind parse_sampler_kind(const std::string& name) {
  return parse_name(name, {SamplerKind::Hybrid, SamplerKind::Equidistant,
                           SamplerKind::SimilarityTopK},
                    "frame sampler");
}
InferenceKind parse_inference_kind(const std::string& name) {
  return parse_name(name, {InferenceKind::DirectSoftmax, InferenceKind::MajorityVote,
                           InferenceKind::Prototype},
                    "inference strategy");
}
ModelKind parse_model_kind(const std::string& name) {
  return parse_name(name, {ModelKind::SoftmaxHead, ModelKind::Embedding}, "model kind");
}
LossKind parse_loss_kind(const std::string& name) {
  return parse_name(name, {LossKind::CrossEntropy, LossKind::WeightedCrossEntropy,
                           LossKind::TripletMargin},
                    "loss");
}
PrototypeMode parse_prototype_mode(const std::string& name) {
  return parse_name(name, {PrototypeMode::Prototype, PrototypeMode::PerSample},
                    "prototype mode");
}

// --- Serialization ----------------------------------------------------------

namespace {

json report_to_json(const MetricReport& report) {
  return {{"f1_macro", report.f1_macro},
          {"expected_cost", report.expected_cost},
          {"f1_per_class", report.f1_per_class},
          {"support", report.support}};
}

}  // namespace

json pipeline_to_json(const StrategyPipeline& p) {
  return {{"name", p.name},
          {"model", to_string(p.model)},
          {"loss", to_string(p.loss)},
          {"triplet_margin", p.triplet_margin},
          {"embed_dim", p.embed_dim},
          {"optimizer", to_string(p.optimizer)},
          {"sampler", to_string(p.sampler)},
          {"sample_count", p.sample_count},
          {"window_halfwidth", p.window_halfwidth},
          {"center_bias", p.center_bias},
          {"inference", to_string(p.inference)},
          {"prototype_mode", to_string(p.prototype_mode)},
          {"warmup_epochs", p.warmup_epochs},
          {"init_scale", p.init_scale},
          {"strategy", to_string(p.fed.strategy)},
          {"fl_rounds", p.fed.fl_rounds},
          {"local_epochs", p.fed.local_epochs},
          {"learning_rate", p.fed.learning_rate},
          {"batch_size", p.fed.batch_size},
          {"fine_tune_epochs", p.fed.fine_tune_epochs},
          {"sam_rho", p.fed.sam.rho},
          {"sam_adaptive", p.fed.sam.adaptive},
          {"server_opt_mode", p.fed.server_opt.mode == ServerOptMode::Adam ? "adam" : "sgd"},
          {"server_lr", p.fed.server_opt.server_lr}};
}

StrategyPipeline pipeline_from_json(const json& j, const StrategyPipeline& base) {
  if (!j.is_object()) throw ValidationError("pipeline spec must be a JSON object");
  static const std::set<std::string> known = {
      "base",        "name",         "model",           "loss",
      "triplet_margin", "embed_dim", "optimizer",       "sampler",
      "sample_count", "window_halfwidth", "center_bias", "inference",
      "prototype_mode", "warmup_epochs", "init_scale",  "strategy",
      "fl_rounds",   "local_epochs", "learning_rate",   "batch_size",
      "fine_tune_epochs", "sam_rho", "sam_adaptive",    "server_opt_mode",
      "server_lr"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ValidationError("unknown pipeline key '" + key + "'");
  }
  StrategyPipeline p = base;
  try {
    p.name = j.value("name", p.name);
    if (j.contains("model")) p.model = parse_model_kind(j.at("model"));
    if (j.contains("loss")) p.loss = parse_loss_kind(j.at("loss"));
    p.triplet_margin = j.value("triplet_margin", p.triplet_margin);
    p.embed_dim = j.value("embed_dim", p.embed_dim);
    if (j.contains("optimizer")) p.optimizer = parse_client_optimizer(j.at("optimizer"));
    if (j.contains("sampler")) p.sampler = parse_sampler_kind(j.at("sampler"));
    p.sample_count = j.value("sample_count", p.sample_count);
    p.window_halfwidth = j.value("window_halfwidth", p.window_halfwidth);
    p.center_bias = j.value("center_bias", p.center_bias);
    if (j.contains("inference")) p.inference = parse_inference_kind(j.at("inference"));
    if (j.contains("prototype_mode")) {
      p.prototype_mode = parse_prototype_mode(j.at("prototype_mode"));
    }
    p.warmup_epochs = j.value("warmup_epochs", p.warmup_epochs);
    p.init_scale = j.value("init_scale", p.init_scale);
    if (j.contains("strategy")) p.fed.strategy = parse_aggregation_kind(j.at("strategy"));
    p.fed.fl_rounds = j.value("fl_rounds", p.fed.fl_rounds);
    p.fed.local_epochs = j.value("local_epochs", p.fed.local_epochs);
    p.fed.learning_rate = j.value("learning_rate", p.fed.learning_rate);
    p.fed.batch_size = j.value("batch_size", p.fed.batch_size);
    p.fed.fine_tune_epochs = j.value("fine_tune_epochs", p.fed.fine_tune_epochs);
    p.fed.sam.rho = j.value("sam_rho", p.fed.sam.rho);
    p.fed.sam.adaptive = j.value("sam_adaptive", p.fed.sam.adaptive);
    if (j.contains("server_opt_mode")) {
      const std::string mode = j.at("server_opt_mode");
      if (mode != "adam" && mode != "sgd") {
        throw ValidationError("unknown server_opt_mode '" + mode + "'");
      }
      p.fed.server_opt.mode = mode == "adam" ? ServerOptMode::Adam : ServerOptMode::Sgd;
    }
    p.fed.server_opt.server_lr = j.value("server_lr", p.fed.server_opt.server_lr);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad pipeline spec: ") + e.what());
  }
  return p;
}

void write_results_bundle(const ChallengeResult& result,
                          std::span<const StrategyPipeline> pipelines,
                          const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);

  json out = {{"format", "fedsurg-results"},
              {"version", 1},
              {"seed", result.seed},
              {"holdout_center", result.holdout_center},
              {"pipelines", json::array()}};
  if (!result.data_provenance.empty()) {
    try {
      out["data"] = json::parse(result.data_provenance);
    } catch (const json::exception&) {
      out["data"] = result.data_provenance;
    }
  }
  for (std::size_t i = 0; i < result.pipelines.size(); ++i) {
    const auto& pr = result.pipelines[i];
    json telemetry = json::array();
    for (const auto& round : pr.telemetry) {
      json clients = json::array();
      for (const auto& c : round.clients) {
        clients.push_back({{"client_id", c.client_id},
                           {"num_examples", c.num_examples},
                           {"local_best_score", c.local_best_score},
                           {"epoch_scores", c.epoch_scores}});
      }
      telemetry.push_back({{"round", round.round},
                           {"global_score", round.global_score},
                           {"clients", std::move(clients)}});
    }
    json per_center = json::array();
    for (const auto& [center, report] : pr.task2.per_center) {
      json entry = report_to_json(report);
      entry["center"] = center;
      per_center.push_back(std::move(entry));
    }
    json jp = {{"name", pr.pipeline},
               {"task1", report_to_json(pr.task1)},
               {"task2",
                {{"per_center", std::move(per_center)},
                 {"average",
                  {{"f1_macro", pr.task2.average.f1_macro},
                   {"expected_cost", pr.task2.average.expected_cost}}}}},
               {"telemetry", std::move(telemetry)}};
    if (i < pipelines.size()) jp["config"] = pipeline_to_json(pipelines[i]);
    out["pipelines"].push_back(std::move(jp));
  }

  {
    std::ofstream f(dir / "results.json");
    if (!f) throw ValidationError("cannot write " + (dir / "results.json").string());
    f << out.dump(2) << '\n';
  }

  for (const auto& pr : result.pipelines) {
    auto rows = pr.task1_predictions;
    rows.insert(rows.end(), pr.task2.predictions.begin(), pr.task2.predictions.end());
    std::sort(rows.begin(), rows.end(), [](const CasePrediction& a, const CasePrediction& b) {
      return std::tie(a.center_id, a.case_id) < std::tie(b.center_id, b.case_id);
    });
    const auto path = dir / ("predictions_" + pr.pipeline + ".csv");
    std::ofstream f(path);
    if (!f) throw ValidationError("cannot write " + path.string());
    f << "team,case_id,center,true_label,pred_label\n";
    for (const auto& row : rows) {
      f << pr.pipeline << ',' << row.case_id << ',' << row.center_id << ',' << row.truth << ','
        << row.pred << '\n';
    }
  }
}

}  // namespace fedsurg
