#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fedsurg/errors.hpp"
#include "fedsurg/models.hpp"
#include "oracles.hpp"

using namespace fedsurg;

namespace {

std::vector<double> random_vector(std::mt19937_64& rng, int dim, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (auto& v : out) v = dist(rng);
  return out;
}

std::vector<double> unit(std::vector<double> v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

}  // namespace

TEST_CASE("softmax head with zero weights predicts uniformly") {
  const auto model = softmax_head_model(4, 6);
  const std::vector<double> x = {1.0, -2.0, 0.5, 3.0};
  const auto p = model->predict_proba(x);
  for (double v : p) CHECK(v == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("predict_proba sums to one") {
  std::mt19937_64 rng(11);
  auto softmax = softmax_head_model(5, 4);
  auto embed = embedding_model(5, 4, 8);
  softmax->randomize(rng, 0.5);
  embed->randomize(rng, 0.5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_vector(rng, 5);
    for (const Model* m : {softmax.get(), embed.get()}) {
      const auto p = m->predict_proba(x);
      double sum = 0.0;
      for (double v : p) {
        CHECK(v >= 0.0);
        sum += v;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("weighted cross-entropy on one sample is w_c * (-log p_c)") {
  std::mt19937_64 rng(12);
  LossConfig loss;
  loss.kind = LossKind::WeightedCrossEntropy;
  loss.class_weights = {0.5, 2.0, 1.25};
  auto model = softmax_head_model(3, 3, loss);
  model->randomize(rng, 0.3);

  const auto x = random_vector(rng, 3);
  const auto p = model->predict_proba(x);
  for (int label = 0; label < 3; ++label) {
    const Sample s{x, label};
    const auto [value, grad] = model->loss_and_gradient(std::span<const Sample>(&s, 1));
    CHECK(value ==
          doctest::Approx(loss.class_weights[label] * -std::log(p[label])).epsilon(1e-10));
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  std::mt19937_64 rng(13);
  const double step = 1e-5;

  SUBCASE("softmax head, plain and weighted cross-entropy") {
    for (int trial = 0; trial < 25; ++trial) {
      LossConfig loss;
      if (trial % 2 == 0) {
        loss.kind = LossKind::WeightedCrossEntropy;
        loss.class_weights = {0.5, 1.5, 2.5, 0.75};
      }
      auto model = softmax_head_model(6, 4, loss);
      model->randomize(rng, 0.5);

      std::vector<std::vector<double>> storage;
      std::vector<Sample> batch;
      for (int k = 0; k < 5; ++k) {
        storage.push_back(random_vector(rng, 6));
        batch.push_back({storage.back(), static_cast<int>(rng() % 4)});
      }
      const auto analytic = model->loss_and_gradient(std::span<const Sample>(batch)).second;
      const auto fd =
          oracles::finite_difference_gradient(*model, std::span<const Sample>(batch), step);
      CHECK(oracles::relative_error(analytic, fd) < 1e-5);
    }
  }

  SUBCASE("embedding model, cross-entropy through the normalization") {
    for (int trial = 0; trial < 25; ++trial) {
      LossConfig loss;  // cross-entropy by default
      auto model = embedding_model(5, 3, 7, loss);
      model->randomize(rng, 0.5);

      std::vector<std::vector<double>> storage;
      std::vector<Sample> batch;
      for (int k = 0; k < 4; ++k) {
        storage.push_back(random_vector(rng, 5));
        batch.push_back({storage.back(), static_cast<int>(rng() % 3)});
      }
      const auto analytic = model->loss_and_gradient(std::span<const Sample>(batch)).second;
      const auto fd =
          oracles::finite_difference_gradient(*model, std::span<const Sample>(batch), step);
      CHECK(oracles::relative_error(analytic, fd) < 1e-4);
    }
  }

  SUBCASE("embedding model, triplet margin loss") {
    int accepted = 0;
    int attempts = 0;
    while (accepted < 25 && attempts < 200) {
      ++attempts;
      auto model = embedding_model(5, 3, 7);
      model->randomize(rng, 0.6);

      std::vector<std::vector<double>> storage;
      std::vector<Triplet> batch;
      for (int k = 0; k < 4; ++k) {
        storage.push_back(random_vector(rng, 5));
        storage.push_back(random_vector(rng, 5));
        storage.push_back(random_vector(rng, 5));
        const auto n = storage.size();
        batch.push_back({storage[n - 3], storage[n - 2], storage[n - 1]});
      }
      // The hinge is non-differentiable exactly at the margin boundary;
      // skip configurations that sit within finite-difference reach of it.
      bool near_kink = false;
      for (const auto& t : batch) {
        const auto ea = model->embed(t.anchor);
        const auto ep = model->embed(t.positive);
        const auto en = model->embed(t.negative);
        double gap = 0.5;
        for (std::size_t d = 0; d < ea.size(); ++d) gap += ea[d] * en[d] - ea[d] * ep[d];
        if (std::abs(gap) < 1e-3) near_kink = true;
      }
      if (near_kink) continue;
      ++accepted;

      const auto analytic = model->loss_and_gradient(std::span<const Triplet>(batch)).second;
      const auto fd =
          oracles::finite_difference_gradient(*model, std::span<const Triplet>(batch), step);
      CHECK(oracles::relative_error(analytic, fd) < 1e-4);
    }
    CHECK(accepted == 25);
  }
}

TEST_CASE("triplet margin loss examples") {
  std::mt19937_64 rng(14);
  const auto e = unit(random_vector(rng, 6));
  std::vector<double> e_neg(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) e_neg[i] = -e[i];
  std::vector<double> e_orth(e.size(), 0.0);
  {
    // Gram-Schmidt a second random direction against e.
    auto r = random_vector(rng, 6);
    double d = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) d += r[i] * e[i];
    for (std::size_t i = 0; i < e.size(); ++i) e_orth[i] = r[i] - d * e[i];
    e_orth = unit(e_orth);
  }

  CHECK(triplet_margin_loss(e, e, e_orth, 0.5) == doctest::Approx(0.0));
  CHECK(triplet_margin_loss(e, e, e, 0.5) == doctest::Approx(0.5));
  CHECK(triplet_margin_loss(e, e_orth, e_neg, 0.5) == doctest::Approx(0.0));  // d_ap 1, d_an 2
}

TEST_CASE("triplet margin loss is non-negative, zero when separated") {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = unit(random_vector(rng, 4));
    const auto p = unit(random_vector(rng, 4));
    const auto n = unit(random_vector(rng, 4));
    const double margin = (rng() % 100) / 100.0;
    const double loss = triplet_margin_loss(a, p, n, margin);
    CHECK(loss >= 0.0);
    double d_ap = 1.0, d_an = 1.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      d_ap -= a[i] * p[i];
      d_an -= a[i] * n[i];
    }
    if (d_ap + margin <= d_an) CHECK(loss == 0.0);
    if (loss > 0.0) CHECK(loss == doctest::Approx(d_ap - d_an + margin).epsilon(1e-12));
  }
}

TEST_CASE("majority_vote") {
  auto onehotish = [](int c, double conf, int num_classes = 4) {
    std::vector<double> p(static_cast<std::size_t>(num_classes),
                          (1.0 - conf) / (num_classes - 1));
    p[static_cast<std::size_t>(c)] = conf;
    return p;
  };

  SUBCASE("strict majority wins") {
    const std::vector<std::vector<double>> probs = {onehotish(2, 0.9), onehotish(2, 0.6),
                                                    onehotish(3, 0.8)};
    CHECK(majority_vote(probs) == 2);
  }
  SUBCASE("vote ties break on mean confidence") {
    const std::vector<std::vector<double>> probs = {onehotish(1, 0.9), onehotish(1, 0.8),
                                                    onehotish(2, 0.6), onehotish(2, 0.7)};
    CHECK(majority_vote(probs) == 1);  // 0.85 beats 0.65
  }
  SUBCASE("single frame returns its argmax") {
    const std::vector<std::vector<double>> probs = {onehotish(3, 0.55)};
    CHECK(majority_vote(probs) == 3);
  }
  SUBCASE("residual ties go to the lower class") {
    const std::vector<std::vector<double>> probs = {onehotish(2, 0.8), onehotish(1, 0.8)};
    CHECK(majority_vote(probs) == 1);
  }
  SUBCASE("empty input is an error") {
    CHECK_THROWS_AS(majority_vote({}), ValidationError);
  }
  SUBCASE("frame order does not matter") {
    std::mt19937_64 rng(16);
    std::vector<std::vector<double>> probs;
    for (int k = 0; k < 9; ++k) {
      probs.push_back(onehotish(static_cast<int>(rng() % 4), 0.4 + 0.05 * (rng() % 10)));
    }
    const int base = majority_vote(probs);
    for (int rep = 0; rep < 10; ++rep) {
      std::shuffle(probs.begin(), probs.end(), rng);
      CHECK(majority_vote(probs) == base);
    }
  }
}

TEST_CASE("prototype_classify") {
  std::mt19937_64 rng(17);
  const auto e = unit(random_vector(rng, 5));
  std::vector<double> e_neg(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) e_neg[i] = -e[i];

  SUBCASE("antipodal support separates") {
    SupportSet support;
    support.members = {{e}, {e_neg}};
    CHECK(prototype_classify(e, support, PrototypeMode::Prototype) == 0);
    CHECK(prototype_classify(e_neg, support, PrototypeMode::Prototype) == 1);
  }
  SUBCASE("per-sample mode averages member distances") {
    auto r = random_vector(rng, 5);
    double d = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) d += r[i] * e[i];
    std::vector<double> orth(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) orth[i] = r[i] - d * e[i];
    orth = unit(orth);

    SupportSet support;
    support.members = {{e, e}, {orth}};
    CHECK(prototype_classify(e, support, PrototypeMode::PerSample) == 0);
  }
  SUBCASE("single non-empty class always wins") {
    SupportSet support;
    support.members = {{}, {e_neg}, {}};
    CHECK(prototype_classify(e, support, PrototypeMode::Prototype) == 1);
    CHECK(prototype_classify(e, support, PrototypeMode::PerSample) == 1);
  }
  SUBCASE("all-empty support is an error") {
    SupportSet support;
    support.members = {{}, {}};
    CHECK_THROWS_AS(prototype_classify(e, support, PrototypeMode::Prototype), ValidationError);
  }
  SUBCASE("duplicating a whole class leaves the prototype unchanged") {
    for (int trial = 0; trial < 30; ++trial) {
      SupportSet support;
      support.members.resize(3);
      for (int c = 0; c < 3; ++c) {
        const std::size_t n = 1 + rng() % 4;
        for (std::size_t k = 0; k < n; ++k) {
          support.members[c].push_back(unit(random_vector(rng, 5)));
        }
      }
      const auto query = unit(random_vector(rng, 5));
      const int base = prototype_classify(query, support, PrototypeMode::Prototype);

      SupportSet doubled = support;
      const int cls = static_cast<int>(rng() % 3);
      for (const auto& m : support.members[cls]) doubled.members[cls].push_back(m);
      CHECK(prototype_classify(query, doubled, PrototypeMode::Prototype) == base);
    }
  }
}

TEST_CASE("sample_indices_equidistant") {
  SUBCASE("200 frames, 100 samples -> even indices") {
    const auto idx = sample_indices_equidistant(200, 100);
    REQUIRE(idx.size() == 100);
    for (int i = 0; i < 100; ++i) CHECK(idx[i] == 2 * i);
  }
  SUBCASE("k = 1") {
    CHECK(sample_indices_equidistant(200, 1) == std::vector<int>{0});
  }
  SUBCASE("k = seq_len is the identity") {
    const auto idx = sample_indices_equidistant(7, 7);
    for (int i = 0; i < 7; ++i) CHECK(idx[i] == i);
  }
  SUBCASE("out-of-range k") {
    CHECK_THROWS_AS(sample_indices_equidistant(10, 11), ValidationError);
    CHECK_THROWS_AS(sample_indices_equidistant(10, 0), ValidationError);
  }
}

TEST_CASE("sample_indices_hybrid") {
  SUBCASE("k = seq_len returns every index") {
    auto rng = std::mt19937_64(1);
    const auto idx = sample_indices_hybrid(40, 40, 4, 0.6, rng);
    REQUIRE(idx.size() == 40);
    for (int i = 0; i < 40; ++i) CHECK(idx[i] == i);
  }
  SUBCASE("fixed seed is reproducible") {
    auto a = std::mt19937_64(77);
    auto b = std::mt19937_64(77);
    CHECK(sample_indices_hybrid(200, 32, 16, 0.6, a) ==
          sample_indices_hybrid(200, 32, 16, 0.6, b));
  }
  SUBCASE("indices are sorted, distinct and in range") {
    auto rng = std::mt19937_64(78);
    for (int trial = 0; trial < 200; ++trial) {
      const int seq_len = 20 + static_cast<int>(rng() % 180);
      const int k = 1 + static_cast<int>(rng() % seq_len);
      const int center = seq_len / 2;
      const int max_window = std::min(center, seq_len - 1 - center);
      const int window = static_cast<int>(rng() % (max_window + 1));
      const auto idx = sample_indices_hybrid(seq_len, k, window, 0.6, rng);
      REQUIRE(static_cast<int>(idx.size()) == k);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        CHECK(idx[i] >= 0);
        CHECK(idx[i] < seq_len);
        if (i > 0) CHECK(idx[i] > idx[i - 1]);
      }
    }
  }
  SUBCASE("at least two thirds of the draws land in the window") {
    auto rng = std::mt19937_64(79);
    std::int64_t inside = 0, total = 0;
    for (int rep = 0; rep < 10000; ++rep) {
      const auto idx = sample_indices_hybrid(200, 32, 16, 0.6, rng);
      for (int t : idx) {
        total += 1;
        if (t >= 84 && t <= 116) inside += 1;
      }
    }
    CHECK(static_cast<double>(inside) / static_cast<double>(total) >= 2.0 / 3.0);
  }
  SUBCASE("infeasible requests are errors") {
    auto rng = std::mt19937_64(80);
    CHECK_THROWS_AS(sample_indices_hybrid(10, 11, 2, 0.6, rng), ValidationError);
    CHECK_THROWS_AS(sample_indices_hybrid(10, 5, 6, 0.6, rng), ValidationError);  // window
  }
}

TEST_CASE("select_frames_by_similarity") {
  std::mt19937_64 rng(18);
  auto embedder = embedding_model(3, 2, 4);
  embedder->randomize(rng, 0.5);

  auto make_instance = [&](int frames) {
    VideoInstance v;
    v.case_id = "case";
    v.center_id = "1";
    v.num_frames = frames;
    v.feature_dim = 3;
    v.frame_data = random_vector(rng, frames * 3);
    return v;
  };

  SUBCASE("k = 1 returns only the keyframe") {
    const auto v = make_instance(11);
    CHECK(select_frames_by_similarity(v, *embedder, 1) == std::vector<int>{5});
  }
  SUBCASE("identical frames fall back to the lowest indices") {
    auto v = make_instance(9);
    for (int t = 1; t < 9; ++t) {
      for (int d = 0; d < 3; ++d) v.frame(t)[d] = v.frame(0)[d];
    }
    CHECK(select_frames_by_similarity(v, *embedder, 3) == std::vector<int>{0, 1, 4});
  }
  SUBCASE("a duplicated keyframe is picked first") {
    auto v = make_instance(12);
    const int kf = 6;
    for (int d = 0; d < 3; ++d) v.frame(9)[d] = v.frame(kf)[d];
    CHECK(select_frames_by_similarity(v, *embedder, 2) == std::vector<int>{6, 9});
  }
  SUBCASE("k beyond the frame count is an error") {
    const auto v = make_instance(4);
    CHECK_THROWS_AS(select_frames_by_similarity(v, *embedder, 5), ValidationError);
  }
}

TEST_CASE("embedding output is unit norm") {
  std::mt19937_64 rng(19);
  auto model = embedding_model(6, 3, 5);
  model->randomize(rng, 0.4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = random_vector(rng, 6);
    const auto e = model->embed(x);
    double norm = 0.0;
    for (double v : e) norm += v * v;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));
  }
}
