#include "fedsurg/aggregation.hpp"

#include <algorithm>
#include <cmath>

#include "fedsurg/errors.hpp"

namespace fedsurg {

void check_finite(const ParameterVector& v, const std::string& what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw ValidationError(what + " has non-finite value at index " + std::to_string(i));
    }
  }
}

namespace {

std::size_t common_dimension(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw ValidationError("no client updates to aggregate");
  const std::size_t dim = updates.front().params.size();
  for (const auto& u : updates) {
    if (u.params.size() != dim) {
      throw ValidationError("client '" + u.client_id + "' has dimension " +
                            std::to_string(u.params.size()) + ", expected " +
                            std::to_string(dim));
    }
    if (u.num_examples < 1) {
      throw ValidationError("client '" + u.client_id + "' reports num_examples < 1");
    }
    check_finite(u.params, "update from client '" + u.client_id + "'");
  }
  return dim;
}

}  // namespace

ParameterVector fed_avg(std::span<const ClientUpdate> updates) {
  const std::size_t dim = common_dimension(updates);
  double total_weight = 0.0;
  for (const auto& u : updates) total_weight += static_cast<double>(u.num_examples);

  // Anchored form: mean = p0 + sum w_k (p_k - p0). Identical updates come
  // back bitwise unchanged, so a no-op round stays a no-op downstream.
  const ParameterVector& anchor = updates.front().params;
  ParameterVector out = anchor;
  for (const auto& u : updates) {
    const double w = static_cast<double>(u.num_examples) / total_weight;
    for (std::size_t d = 0; d < dim; ++d) out[d] += w * (u.params[d] - anchor[d]);
  }
  return out;
}

ParameterVector fed_median(std::span<const ClientUpdate> updates) {
  const std::size_t dim = common_dimension(updates);
  const std::size_t n = updates.size();

  ParameterVector out(dim, 0.0);
  std::vector<double> column(n);
  for (std::size_t d = 0; d < dim; ++d) {
    for (std::size_t k = 0; k < n; ++k) column[k] = updates[k].params[d];
    const std::size_t mid = n / 2;
    std::nth_element(column.begin(), column.begin() + mid, column.end());
    if (n % 2 == 1) {
      out[d] = column[mid];
    } else {
      const double upper = column[mid];
      const double lower = *std::max_element(column.begin(), column.begin() + mid);
      out[d] = 0.5 * (lower + upper);
    }
  }
  return out;
}

std::pair<ParameterVector, ServerOptState> fed_opt_apply(const ServerOptState& state,
                                                         const ParameterVector& global,
                                                         const ParameterVector& aggregated) {
  if (global.size() != aggregated.size()) {
    throw ValidationError("fed_opt: global dimension " + std::to_string(global.size()) +
                          " != aggregated dimension " + std::to_string(aggregated.size()));
  }
  const std::size_t dim = global.size();
  ServerOptState next = state;
  next.step_count = state.step_count + 1;

  ParameterVector out(dim);
  const auto& cfg = state.config;
  if (cfg.mode == ServerOptMode::Sgd) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double delta = global[d] - aggregated[d];
      out[d] = global[d] - cfg.server_lr * delta;
    }
    return {std::move(out), std::move(next)};
  }

  if (next.first_moment.empty()) next.first_moment.assign(dim, 0.0);
  if (next.second_moment.empty()) next.second_moment.assign(dim, 0.0);
  if (next.first_moment.size() != dim || next.second_moment.size() != dim) {
    throw ValidationError("fed_opt: moment dimension does not match model dimension");
  }

  const double t = static_cast<double>(next.step_count);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t d = 0; d < dim; ++d) {
    const double delta = global[d] - aggregated[d];
    next.first_moment[d] = cfg.beta1 * next.first_moment[d] + (1.0 - cfg.beta1) * delta;
    next.second_moment[d] = cfg.beta2 * next.second_moment[d] + (1.0 - cfg.beta2) * delta * delta;
    const double m_hat = next.first_moment[d] / bc1;
    const double v_hat = next.second_moment[d] / bc2;
    out[d] = global[d] - cfg.server_lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
  return {std::move(out), std::move(next)};
}

ParameterVector sam_step(const GradientFn& gradient_fn, const ParameterVector& w,
                         const SamConfig& cfg) {
  if (cfg.rho <= 0.0) throw ValidationError("sam_step: rho must be positive");
  if (cfg.base_lr <= 0.0) throw ValidationError("sam_step: base_lr must be positive");

  const ParameterVector g = gradient_fn(w);
  if (g.size() != w.size()) {
    throw ValidationError("sam_step: gradient dimension does not match weights");
  }

  const std::size_t dim = w.size();
  ParameterVector epsilon(dim, 0.0);
  if (cfg.adaptive) {
    // eps = rho * (|w| . |w| . g) / || |w| . g ||
    double norm_sq = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double scaled = std::abs(w[d]) * g[d];
      norm_sq += scaled * scaled;
    }
    const double norm = std::sqrt(norm_sq);
    if (norm > 0.0) {
      for (std::size_t d = 0; d < dim; ++d) {
        epsilon[d] = cfg.rho * (std::abs(w[d]) * std::abs(w[d]) * g[d]) / norm;
      }
    }
  } else {
    double norm_sq = 0.0;
    for (double v : g) norm_sq += v * v;
    const double norm = std::sqrt(norm_sq);
    if (norm > 0.0) {
      for (std::size_t d = 0; d < dim; ++d) epsilon[d] = cfg.rho * g[d] / norm;
    }
  }

  ParameterVector perturbed(dim);
  for (std::size_t d = 0; d < dim; ++d) perturbed[d] = w[d] + epsilon[d];
  const ParameterVector g2 = gradient_fn(perturbed);
  if (g2.size() != dim) {
    throw ValidationError("sam_step: gradient dimension does not match weights");
  }

  ParameterVector out(dim);
  for (std::size_t d = 0; d < dim; ++d) out[d] = w[d] - cfg.base_lr * g2[d];
  return out;
}

}  // namespace fedsurg
