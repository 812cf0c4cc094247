#include "fedsurg/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedsurg/errors.hpp"

namespace fedsurg {

namespace {

constexpr double kNormFloor = 1e-12;

void softmax_inplace(std::vector<double>& z) {
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - zmax);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double sample_weight(const LossConfig& loss, int label, int num_classes) {
  if (loss.kind != LossKind::WeightedCrossEntropy) return 1.0;
  if (static_cast<int>(loss.class_weights.size()) != num_classes) {
    throw ValidationError("class_weights size does not match the number of classes");
  }
  const double w = loss.class_weights[static_cast<std::size_t>(label)];
  if (w <= 0.0) throw ValidationError("class weights must be positive");
  return w;
}

void check_input_dim(std::span<const double> input, int dim, const char* what) {
  if (static_cast<int>(input.size()) != dim) {
    throw ValidationError(std::string(what) + ": input dimension " +
                          std::to_string(input.size()) + " != " + std::to_string(dim));
  }
}

void fill_normal(ParameterVector& p, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> dist(0.0, scale);
  for (double& v : p) v = dist(rng);
}

/// Linear head: C x D weights followed by C biases, softmax output.
class LinearSoftmaxModel final : public Model {
 public:
  LinearSoftmaxModel(int input_dim, int num_classes, LossConfig loss)
      : input_dim_(input_dim), num_classes_(num_classes), loss_(std::move(loss)) {
    if (input_dim < 1) throw ValidationError("input_dim must be >= 1");
    if (num_classes < 2) throw ValidationError("num_classes must be >= 2");
    if (loss_.kind == LossKind::TripletMargin) {
      throw ValidationError("softmax head cannot train with a triplet loss");
    }
    params_.assign(param_count(), 0.0);
  }

  std::unique_ptr<Model> clone() const override {
    return std::make_unique<LinearSoftmaxModel>(*this);
  }

  std::size_t param_count() const override {
    return static_cast<std::size_t>(num_classes_) * input_dim_ + num_classes_;
  }

  ParameterVector params() const override { return params_; }

  void set_params(const ParameterVector& p) override {
    if (p.size() != param_count()) {
      throw ValidationError("set_params: expected " + std::to_string(param_count()) +
                            " parameters, got " + std::to_string(p.size()));
    }
    check_finite(p, "model parameters");
    params_ = p;
  }

  void randomize(std::mt19937_64& rng, double scale) override {
    fill_normal(params_, rng, scale);
  }

  const LossConfig& loss_config() const override { return loss_; }
  void set_loss_config(LossConfig cfg) override {
    if (cfg.kind == LossKind::TripletMargin) {
      throw ValidationError("softmax head cannot train with a triplet loss");
    }
    loss_ = std::move(cfg);
  }

  std::vector<double> predict_proba(std::span<const double> input) const override {
    check_input_dim(input, input_dim_, "predict_proba");
    std::vector<double> z(static_cast<std::size_t>(num_classes_));
    for (int c = 0; c < num_classes_; ++c) {
      z[c] = dot(weights(c), input) + bias(c);
    }
    softmax_inplace(z);
    return z;
  }

  std::pair<double, ParameterVector> loss_and_gradient(
      std::span<const Sample> batch) const override {
    if (batch.empty()) throw ValidationError("empty batch");
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    ParameterVector grad(param_count(), 0.0);
    for (const Sample& s : batch) {
      check_input_dim(s.features, input_dim_, "loss_and_gradient");
      if (s.label < 0 || s.label >= num_classes_) {
        throw ValidationError("sample label out of range: " + std::to_string(s.label));
      }
      auto p = predict_proba(s.features);
      const double w = sample_weight(loss_, s.label, num_classes_);
      loss += -w * std::log(std::max(p[s.label], 1e-300)) * inv_n;
      for (int c = 0; c < num_classes_; ++c) {
        const double dz = w * (p[c] - (c == s.label ? 1.0 : 0.0)) * inv_n;
        double* gw = grad.data() + static_cast<std::size_t>(c) * input_dim_;
        for (int d = 0; d < input_dim_; ++d) gw[d] += dz * s.features[d];
        grad[static_cast<std::size_t>(num_classes_) * input_dim_ + c] += dz;
      }
    }
    return {loss, std::move(grad)};
  }

  int num_classes() const override { return num_classes_; }
  int input_dim() const override { return input_dim_; }

 private:
  std::span<const double> weights(int c) const {
    return {params_.data() + static_cast<std::size_t>(c) * input_dim_,
            static_cast<std::size_t>(input_dim_)};
  }
  double bias(int c) const {
    return params_[static_cast<std::size_t>(num_classes_) * input_dim_ + c];
  }

  int input_dim_;
  int num_classes_;
  LossConfig loss_;
  ParameterVector params_;
};

/// Linear trunk E x D with L2-normalized output, plus a C x E (+C) softmax
/// head on the embedding. Triplet loss trains the trunk only; cross-entropy
/// flows through head and trunk.
class LinearEmbeddingModel final : public Model {
 public:
  LinearEmbeddingModel(int input_dim, int num_classes, int embed_dim, LossConfig loss)
      : input_dim_(input_dim),
        num_classes_(num_classes),
        embed_dim_(embed_dim),
        loss_(std::move(loss)) {
    if (input_dim < 1 || embed_dim < 1) throw ValidationError("dimensions must be >= 1");
    if (num_classes < 2) throw ValidationError("num_classes must be >= 2");
    if (loss_.margin < 0.0) throw ValidationError("triplet margin must be >= 0");
    params_.assign(param_count(), 0.0);
  }

  std::unique_ptr<Model> clone() const override {
    return std::make_unique<LinearEmbeddingModel>(*this);
  }

  std::size_t param_count() const override {
    return static_cast<std::size_t>(embed_dim_) * input_dim_ +
           static_cast<std::size_t>(num_classes_) * embed_dim_ + num_classes_;
  }

  ParameterVector params() const override { return params_; }

  void set_params(const ParameterVector& p) override {
    if (p.size() != param_count()) {
      throw ValidationError("set_params: expected " + std::to_string(param_count()) +
                            " parameters, got " + std::to_string(p.size()));
    }
    check_finite(p, "model parameters");
    params_ = p;
  }

  void randomize(std::mt19937_64& rng, double scale) override {
    fill_normal(params_, rng, scale);
  }

  const LossConfig& loss_config() const override { return loss_; }
  void set_loss_config(LossConfig cfg) override {
    if (cfg.margin < 0.0) throw ValidationError("triplet margin must be >= 0");
    loss_ = std::move(cfg);
  }

  bool is_embedding_model() const override { return true; }

  std::vector<double> embed(std::span<const double> input) const override {
    check_input_dim(input, input_dim_, "embed");
    std::vector<double> y(static_cast<std::size_t>(embed_dim_));
    for (int e = 0; e < embed_dim_; ++e) y[e] = dot(trunk_row(e), input);
    const double norm = std::sqrt(dot(y, y));
    if (norm < kNormFloor) {
      // Degenerate direction: fall back to a fixed unit vector.
      std::fill(y.begin(), y.end(), 0.0);
      y[0] = 1.0;
      return y;
    }
    for (double& v : y) v /= norm;
    return y;
  }

  std::vector<double> predict_proba(std::span<const double> input) const override {
    const auto e = embed(input);
    std::vector<double> z(static_cast<std::size_t>(num_classes_));
    for (int c = 0; c < num_classes_; ++c) z[c] = dot(head_row(c), e) + head_bias(c);
    softmax_inplace(z);
    return z;
  }

  std::pair<double, ParameterVector> loss_and_gradient(
      std::span<const Sample> batch) const override {
    if (loss_.kind == LossKind::TripletMargin) {
      throw ValidationError("triplet loss needs triplet batches, not labeled samples");
    }
    if (batch.empty()) throw ValidationError("empty batch");
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    ParameterVector grad(param_count(), 0.0);
    std::vector<double> de(static_cast<std::size_t>(embed_dim_));
    for (const Sample& s : batch) {
      if (s.label < 0 || s.label >= num_classes_) {
        throw ValidationError("sample label out of range: " + std::to_string(s.label));
      }
      const auto e = embed(s.features);
      std::vector<double> p(static_cast<std::size_t>(num_classes_));
      for (int c = 0; c < num_classes_; ++c) p[c] = dot(head_row(c), e) + head_bias(c);
      softmax_inplace(p);
      const double w = sample_weight(loss_, s.label, num_classes_);
      loss += -w * std::log(std::max(p[s.label], 1e-300)) * inv_n;

      std::fill(de.begin(), de.end(), 0.0);
      for (int c = 0; c < num_classes_; ++c) {
        const double dz = w * (p[c] - (c == s.label ? 1.0 : 0.0)) * inv_n;
        double* gh = grad.data() + head_offset() + static_cast<std::size_t>(c) * embed_dim_;
        for (int k = 0; k < embed_dim_; ++k) {
          gh[k] += dz * e[k];
          de[k] += dz * head_row(c)[k];
        }
        grad[bias_offset() + c] += dz;
      }
      accumulate_trunk_gradient(s.features, e, de, grad);
    }
    return {loss, std::move(grad)};
  }

  std::pair<double, ParameterVector> loss_and_gradient(
      std::span<const Triplet> batch) const override {
    if (batch.empty()) throw ValidationError("empty triplet batch");
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    const double margin = loss_.margin;
    double loss = 0.0;
    ParameterVector grad(param_count(), 0.0);
    std::vector<double> de(static_cast<std::size_t>(embed_dim_));
    for (const Triplet& t : batch) {
      const auto ea = embed(t.anchor);
      const auto ep = embed(t.positive);
      const auto en = embed(t.negative);
      const double gap = dot(ea, en) - dot(ea, ep) + margin;
      if (gap <= 0.0) continue;
      loss += gap * inv_n;
      // dL/dea = en - ep, dL/dep = -ea, dL/den = ea (scaled by 1/n).
      for (int k = 0; k < embed_dim_; ++k) de[k] = (en[k] - ep[k]) * inv_n;
      accumulate_trunk_gradient(t.anchor, ea, de, grad);
      for (int k = 0; k < embed_dim_; ++k) de[k] = -ea[k] * inv_n;
      accumulate_trunk_gradient(t.positive, ep, de, grad);
      for (int k = 0; k < embed_dim_; ++k) de[k] = ea[k] * inv_n;
      accumulate_trunk_gradient(t.negative, en, de, grad);
    }
    return {loss, std::move(grad)};
  }

  int num_classes() const override { return num_classes_; }
  int input_dim() const override { return input_dim_; }

 private:
  std::span<const double> trunk_row(int e) const {
    return {params_.data() + static_cast<std::size_t>(e) * input_dim_,
            static_cast<std::size_t>(input_dim_)};
  }
  std::size_t head_offset() const {
    return static_cast<std::size_t>(embed_dim_) * input_dim_;
  }
  std::size_t bias_offset() const {
    return head_offset() + static_cast<std::size_t>(num_classes_) * embed_dim_;
  }
  std::span<const double> head_row(int c) const {
    return {params_.data() + head_offset() + static_cast<std::size_t>(c) * embed_dim_,
            static_cast<std::size_t>(embed_dim_)};
  }
  double head_bias(int c) const { return params_[bias_offset() + c]; }

  /// Backpropagates dL/de through e = y/||y|| into the trunk weights:
  /// dy = (de - e (e.de)) / ||y||, dW += dy x^T.
  void accumulate_trunk_gradient(std::span<const double> x, const std::vector<double>& e,
                                 const std::vector<double>& de, ParameterVector& grad) const {
    check_input_dim(x, input_dim_, "loss_and_gradient");
    std::vector<double> y(static_cast<std::size_t>(embed_dim_));
    for (int k = 0; k < embed_dim_; ++k) y[k] = dot(trunk_row(k), x);
    const double norm = std::sqrt(dot(y, y));
    if (norm < kNormFloor) return;  // embed() returned the constant fallback
    double e_dot_de = 0.0;
    for (int k = 0; k < embed_dim_; ++k) e_dot_de += e[k] * de[k];
    for (int k = 0; k < embed_dim_; ++k) {
      const double dy = (de[k] - e[k] * e_dot_de) / norm;
      if (dy == 0.0) continue;
      double* gw = grad.data() + static_cast<std::size_t>(k) * input_dim_;
      for (int d = 0; d < input_dim_; ++d) gw[d] += dy * x[d];
    }
  }

  int input_dim_;
  int num_classes_;
  int embed_dim_;
  LossConfig loss_;
  ParameterVector params_;
};

}  // namespace

std::pair<double, ParameterVector> Model::loss_and_gradient(std::span<const Triplet>) const {
  throw ValidationError("this model does not support triplet batches");
}

std::vector<double> Model::predict_proba(std::span<const double>) const {
  throw ValidationError("this model does not produce class probabilities");
}

std::vector<double> Model::embed(std::span<const double>) const {
  throw ValidationError("this model does not produce embeddings");
}

std::unique_ptr<Model> softmax_head_model(int input_dim, int num_classes, LossConfig loss) {
  return std::make_unique<LinearSoftmaxModel>(input_dim, num_classes, std::move(loss));
}

std::unique_ptr<Model> embedding_model(int input_dim, int num_classes, int embed_dim,
                                       LossConfig loss) {
  return std::make_unique<LinearEmbeddingModel>(input_dim, num_classes, embed_dim,
                                                std::move(loss));
}

double triplet_margin_loss(std::span<const double> anchor, std::span<const double> positive,
                           std::span<const double> negative, double margin) {
  if (margin < 0.0) throw ValidationError("triplet margin must be >= 0");
  if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
    throw ValidationError("triplet embeddings differ in dimension");
  }
  // d(x, y) = 1 - cos = 1 - x.y on unit vectors, so the distance difference
  // collapses to a.n - a.p.
  const double gap = dot(anchor, negative) - dot(anchor, positive) + margin;
  return gap > 0.0 ? gap : 0.0;
}

int majority_vote(std::span<const std::vector<double>> frame_probs) {
  if (frame_probs.empty()) throw ValidationError("majority_vote: no frame predictions");
  const std::size_t c = frame_probs.front().size();
  if (c == 0) throw ValidationError("majority_vote: empty probability vector");

  std::vector<int> votes(c, 0);
  std::vector<double> confidence(c, 0.0);
  for (const auto& probs : frame_probs) {
    if (probs.size() != c) throw ValidationError("majority_vote: ragged probability vectors");
    double sum = 0.0;
    for (double p : probs) sum += p;
    if (std::abs(sum - 1.0) > 1e-6) {
      throw ValidationError("majority_vote: probabilities do not sum to 1");
    }
    const auto it = std::max_element(probs.begin(), probs.end());
    const int cls = static_cast<int>(it - probs.begin());
    votes[cls] += 1;
    confidence[cls] += *it;
  }

  int best = -1;
  double best_conf = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    if (votes[k] == 0) continue;
    const double mean_conf = confidence[k] / votes[k];
    if (best < 0 || votes[k] > votes[best] ||
        (votes[k] == votes[best] && mean_conf > best_conf)) {
      best = static_cast<int>(k);
      best_conf = mean_conf;
    }
  }
  return best;
}

int prototype_classify(std::span<const double> query, const SupportSet& support,
                       PrototypeMode mode) {
  if (support.members.empty()) throw ValidationError("prototype_classify: empty support set");
  const std::size_t dim = query.size();

  int best = -1;
  double best_score = 0.0;
  for (int cls = 0; cls < support.num_classes(); ++cls) {
    const auto& members = support.members[static_cast<std::size_t>(cls)];
    if (members.empty()) continue;
    double score;
    if (mode == PrototypeMode::Prototype) {
      std::vector<double> proto(dim, 0.0);
      for (const auto& m : members) {
        if (m.size() != dim) throw ValidationError("support embedding dimension mismatch");
        for (std::size_t d = 0; d < dim; ++d) proto[d] += m[d];
      }
      for (double& v : proto) v /= static_cast<double>(members.size());
      const double norm = std::sqrt(dot(proto, proto));
      score = norm < kNormFloor ? 0.0 : dot(query, proto) / norm;
    } else {
      double sum = 0.0;
      for (const auto& m : members) {
        if (m.size() != dim) throw ValidationError("support embedding dimension mismatch");
        sum += dot(query, m);
      }
      // Maximizing mean cosine similarity == minimizing mean cosine distance.
      score = sum / static_cast<double>(members.size());
    }
    if (best < 0 || score > best_score) {
      best = cls;
      best_score = score;
    }
  }
  if (best < 0) throw ValidationError("prototype_classify: all support classes are empty");
  return best;
}

std::vector<int> sample_indices_hybrid(int seq_len, int k, int window_halfwidth,
                                       double center_bias, std::mt19937_64& rng) {
  if (seq_len < 1) throw ValidationError("sample_indices_hybrid: seq_len must be >= 1");
  if (k < 1 || k > seq_len) {
    throw ValidationError("sample_indices_hybrid: infeasible k=" + std::to_string(k) +
                          " for seq_len=" + std::to_string(seq_len));
  }
  if (center_bias < 0.0 || center_bias > 1.0) {
    throw ValidationError("sample_indices_hybrid: center_bias must be in [0, 1]");
  }
  const int center = seq_len / 2;
  const int lo = center - window_halfwidth;
  const int hi = center + window_halfwidth;
  if (window_halfwidth < 0 || lo < 0 || hi > seq_len - 1) {
    throw ValidationError("sample_indices_hybrid: window [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "] does not fit in 0.." +
                          std::to_string(seq_len - 1));
  }
  const int window_size = hi - lo + 1;

  // Stage 1: ceil(2k/3) distinct uniform draws from the window (capped at
  // the window size; the remainder stage covers the rest).
  const int want_window = (2 * k + 2) / 3;
  const int n1 = std::min(want_window, window_size);

  std::vector<char> taken(static_cast<std::size_t>(seq_len), 0);
  std::vector<int> window_pool(static_cast<std::size_t>(window_size));
  std::iota(window_pool.begin(), window_pool.end(), lo);
  for (int i = 0; i < n1; ++i) {
    std::uniform_int_distribution<int> pick(i, window_size - 1);
    std::swap(window_pool[i], window_pool[pick(rng)]);
    taken[window_pool[i]] = 1;
  }

  // Stage 2: remaining draws over the full range, with probability mass
  // center_bias spread over the window and 1 - center_bias outside.
  const int outside_size = seq_len - window_size;
  std::vector<int> pool;
  std::vector<double> weight;
  pool.reserve(static_cast<std::size_t>(seq_len - n1));
  weight.reserve(pool.capacity());
  const double w_in = window_size > 0 ? center_bias / window_size : 0.0;
  const double w_out = outside_size > 0 ? (1.0 - center_bias) / outside_size : 0.0;
  for (int t = 0; t < seq_len; ++t) {
    if (taken[t]) continue;
    pool.push_back(t);
    weight.push_back(t >= lo && t <= hi ? w_in : w_out);
  }
  for (int draw = n1; draw < k; ++draw) {
    double total = std::accumulate(weight.begin(), weight.end(), 0.0);
    std::size_t chosen = pool.size() - 1;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      for (std::size_t i = 0; i < pool.size(); ++i) {
        r -= weight[i];
        if (r <= 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      // All remaining mass is unreachable (e.g. bias 1.0 with the window
      // exhausted): fall back to uniform over what is left.
      std::uniform_int_distribution<std::size_t> u(0, pool.size() - 1);
      chosen = u(rng);
    }
    taken[pool[chosen]] = 1;
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(chosen));
    weight.erase(weight.begin() + static_cast<std::ptrdiff_t>(chosen));
  }

  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int t = 0; t < seq_len; ++t) {
    if (taken[t]) out.push_back(t);
  }
  return out;
}

std::vector<int> sample_indices_equidistant(int seq_len, int k) {
  if (k < 1 || k > seq_len) {
    throw ValidationError("sample_indices_equidistant: k=" + std::to_string(k) +
                          " out of range for seq_len=" + std::to_string(seq_len));
  }
  std::vector<int> out(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    out[i] = static_cast<int>((static_cast<std::int64_t>(i) * seq_len) / k);
  }
  return out;
}

std::vector<int> select_frames_by_similarity(const VideoInstance& instance, const Model& embedder,
                                             int k) {
  const int n = instance.num_frames;
  if (n < 1) throw ValidationError("select_frames_by_similarity: instance has no frames");
  if (k < 1 || k > n) {
    throw ValidationError("select_frames_by_similarity: k=" + std::to_string(k) +
                          " out of range for " + std::to_string(n) + " frames");
  }
  const int keyframe = n / 2;
  const auto reference = embedder.embed(instance.frame(keyframe));

  std::vector<std::pair<double, int>> scored;
  scored.reserve(static_cast<std::size_t>(n - 1));
  for (int t = 0; t < n; ++t) {
    if (t == keyframe) continue;
    const auto e = embedder.embed(instance.frame(t));
    scored.emplace_back(dot(e, reference), t);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(k));
  out.push_back(keyframe);
  for (int i = 0; i < k - 1; ++i) out.push_back(scored[static_cast<std::size_t>(i)].second);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace fedsurg
