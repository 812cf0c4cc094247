#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fedsurg {

/// Flat vector of model weights; the unit everything federated moves around.
using ParameterVector = std::vector<double>;

/// Throws ValidationError if the vector contains NaN or infinity.
void check_finite(const ParameterVector& v, const std::string& what);

/// What one client sends up after a round: the best local checkpoint,
/// its weight for averaging, and the validation score that selected it.
struct ClientUpdate {
  std::string client_id;
  ParameterVector params;
  std::int64_t num_examples = 1;
  double local_best_score = 0.0;
};

/// Coordinate-wise mean weighted by num_examples.
ParameterVector fed_avg(std::span<const ClientUpdate> updates);

/// Coordinate-wise median; even counts average the two middle values and
/// num_examples is ignored.
ParameterVector fed_median(std::span<const ClientUpdate> updates);

enum class ServerOptMode { Sgd, Adam };

struct ServerOptConfig {
  ServerOptMode mode = ServerOptMode::Adam;
  double server_lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Server optimizer state for FedOpt. A value type: fed_opt_apply returns
/// the successor state instead of mutating.
struct ServerOptState {
  ServerOptConfig config;
  std::int64_t step_count = 0;
  ParameterVector first_moment;   // sized lazily on first apply
  ParameterVector second_moment;
};

/// One server-side optimizer step on the pseudo-gradient
/// delta = global - aggregated. Sgd mode: global - lr * delta. Adam mode:
/// bias-corrected moments of delta. Returns (new global, new state).
std::pair<ParameterVector, ServerOptState> fed_opt_apply(const ServerOptState& state,
                                                         const ParameterVector& global,
                                                         const ParameterVector& aggregated);

struct SamConfig {
  double rho = 0.05;     // perturbation radius
  bool adaptive = false;
  double base_lr = 1e-3;
};

using GradientFn = std::function<ParameterVector(const ParameterVector&)>;

/// Sharpness-aware step: perturb the weights towards the gradient
/// direction (scale-normalized when adaptive), re-evaluate the gradient
/// there, and descend with that gradient. A zero gradient leaves the
/// weights unchanged.
ParameterVector sam_step(const GradientFn& gradient_fn, const ParameterVector& w,
                         const SamConfig& cfg);

}  // namespace fedsurg
