#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kardam/cost.hpp"
#include "kardam/linalg.hpp"
#include "kardam/rng.hpp"

namespace kardam {

struct Model {
  Vector params;
  std::int64_t epoch = 0;
};

struct GradientMessage {
  int worker_id = 0;
  Vector grad;
  std::int64_t timestamp = 0;  // server epoch of the snapshot the gradient was computed on
  std::uint64_t batch_id = 0;
};

/// A gradient paired with its dampening weight for one update.
struct WeightedGradient {
  std::span<const double> grad;
  double lambda = 1.0;
};

Minibatch draw_minibatch(Rng& rng, std::size_t dataset_size, std::size_t batch_size);

Vector grad_estimate(const CostFunction& cost, const Model& model, const Minibatch& batch);
Vector full_gradient(const CostFunction& cost, const Model& model);

/// x_{t+1} = x_t - gamma_t * sum(lambda * g). Throws ProtocolError on an empty
/// list and NumericFault if the result is not finite.
Model apply_update(const Model& model, std::span<const WeightedGradient> accepted, double gamma_t);

/// Mean of |G(x, xi) - grad Q(x)|^2 over `trials` independent batches.
double grad_variance_estimate(const CostFunction& cost, const Model& model, std::size_t batch_size,
                              std::size_t trials, std::uint64_t seed);

}  // namespace kardam
