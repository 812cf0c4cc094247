#pragma once

#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedsurg/aggregation.hpp"

namespace fedsurg {

/// One case: a fixed-length sequence of per-frame feature vectors plus the
/// video-level ordinal label.
struct VideoInstance {
  std::string case_id;
  std::string center_id;
  int label = 0;
  int num_frames = 0;
  int feature_dim = 0;
  std::vector<double> frame_data;  // row-major num_frames x feature_dim

  std::span<const double> frame(int t) const {
    return {frame_data.data() + static_cast<std::size_t>(t) * feature_dim,
            static_cast<std::size_t>(feature_dim)};
  }
  std::span<double> frame(int t) {
    return {frame_data.data() + static_cast<std::size_t>(t) * feature_dim,
            static_cast<std::size_t>(feature_dim)};
  }
};

/// One training example: a feature vector (a frame, or a pooled video) and
/// its label.
struct Sample {
  std::span<const double> features;
  int label = 0;
};

struct Triplet {
  std::span<const double> anchor;
  std::span<const double> positive;
  std::span<const double> negative;
};

enum class LossKind { CrossEntropy, WeightedCrossEntropy, TripletMargin };

struct LossConfig {
  LossKind kind = LossKind::CrossEntropy;
  std::vector<double> class_weights;  // WeightedCrossEntropy only; one per class
  double margin = 0.5;                // TripletMargin only
};

/// Uniform training contract shared by the toy models. Parameters travel as
/// flat vectors so aggregation stays model-agnostic.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::unique_ptr<Model> clone() const = 0;
  virtual std::size_t param_count() const = 0;
  virtual ParameterVector params() const = 0;
  virtual void set_params(const ParameterVector& p) = 0;
  virtual void randomize(std::mt19937_64& rng, double scale) = 0;

  virtual const LossConfig& loss_config() const = 0;
  virtual void set_loss_config(LossConfig cfg) = 0;

  virtual std::pair<double, ParameterVector> loss_and_gradient(
      std::span<const Sample> batch) const = 0;
  virtual std::pair<double, ParameterVector> loss_and_gradient(
      std::span<const Triplet> batch) const;

  /// Class probabilities for one feature vector; entries sum to 1.
  virtual std::vector<double> predict_proba(std::span<const double> input) const;
  /// Unit-norm embedding of one feature vector (embedding models only).
  virtual std::vector<double> embed(std::span<const double> input) const;
  virtual bool is_embedding_model() const { return false; }

  virtual int num_classes() const = 0;
  virtual int input_dim() const = 0;
};

/// Linear map + softmax over mean-pooled or per-frame features, trained with
/// (weighted) cross-entropy.
std::unique_ptr<Model> softmax_head_model(int input_dim, int num_classes, LossConfig loss = {});

/// Linear map + L2 normalization producing unit embeddings, trained with the
/// triplet margin loss. Carries a small classification head on top of the
/// embedding so cross-entropy phases and probability readouts work too.
std::unique_ptr<Model> embedding_model(int input_dim, int num_classes, int embed_dim = 16,
                                       LossConfig loss = {LossKind::TripletMargin, {}, 0.5});

/// Triplet margin loss over unit embeddings with cosine distance
/// d(x, y) = 1 - cos(x, y): max(0, d(a,p) - d(a,n) + margin).
double triplet_margin_loss(std::span<const double> anchor, std::span<const double> positive,
                           std::span<const double> negative, double margin);

/// Video-level class from per-frame probability vectors: most-voted argmax
/// class; vote ties go to the class whose supporting frames are more
/// confident on average, then to the lower class index.
int majority_vote(std::span<const std::vector<double>> frame_probs);

/// Labeled reference embeddings used at inference by metric-learning models.
struct SupportSet {
  std::vector<std::vector<std::vector<double>>> members;  // [class][member][dim]

  int num_classes() const { return static_cast<int>(members.size()); }
};

enum class PrototypeMode { Prototype, PerSample };

/// Nearest class by cosine similarity: against re-normalized class mean
/// embeddings (Prototype) or the mean similarity over all class members
/// (PerSample). Empty classes are skipped; ties go to the lower index.
int prototype_classify(std::span<const double> query, const SupportSet& support,
                       PrototypeMode mode);

/// Frame sampler mixing a dense window around the sequence center with
/// biased draws from the full range: ceil(2k/3) indices uniformly from
/// [center-w, center+w], the rest with probability mass `center_bias` on the
/// window and the remainder spread uniformly outside. Sorted and distinct.
std::vector<int> sample_indices_hybrid(int seq_len, int k, int window_halfwidth,
                                       double center_bias, std::mt19937_64& rng);

/// k equidistant indices: floor(i * seq_len / k) for i = 0..k-1.
std::vector<int> sample_indices_equidistant(int seq_len, int k);

/// The center keyframe plus the k-1 frames whose embeddings are most
/// cosine-similar to the keyframe embedding; ties to the lower index.
std::vector<int> select_frames_by_similarity(const VideoInstance& instance, const Model& embedder,
                                             int k);

}  // namespace fedsurg
