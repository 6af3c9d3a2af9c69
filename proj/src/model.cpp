#include "kardam/model.hpp"

#include "kardam/errors.hpp"

namespace kardam {

Minibatch draw_minibatch(Rng& rng, std::size_t dataset_size, std::size_t batch_size) {
  Minibatch batch;
  if (dataset_size == 0) return batch;  // exact-gradient costs ignore the batch
  if (batch_size == 0) throw ConfigError("draw_minibatch: batch_size must be positive");
  batch.indices.resize(batch_size);
  if (batch_size == dataset_size) {
    // A batch as large as the dataset is the dataset itself.
    for (std::size_t i = 0; i < batch_size; ++i) batch.indices[i] = i;
    return batch;
  }
  for (auto& i : batch.indices) i = static_cast<std::size_t>(rng.index(dataset_size));
  return batch;
}

Vector grad_estimate(const CostFunction& cost, const Model& model, const Minibatch& batch) {
  return cost.grad_estimate(model.params, batch);
}

Vector full_gradient(const CostFunction& cost, const Model& model) { return cost.full_gradient(model.params); }

Model apply_update(const Model& model, std::span<const WeightedGradient> accepted, double gamma_t) {
  if (accepted.empty()) throw ProtocolError("apply_update: no accepted gradients");
  if (!(gamma_t > 0.0)) throw ConfigError("apply_update: learning rate must be positive");
  const std::size_t d = model.params.size();
  Vector step(d, 0.0);
  for (const auto& wg : accepted) {
    require_same_dim(wg.grad, model.params, "apply_update");
    axpy(wg.lambda, wg.grad, step);
  }
  Model next{model.params, model.epoch + 1};
  for (std::size_t i = 0; i < d; ++i) next.params[i] -= gamma_t * step[i];
  if (!all_finite(next.params)) throw NumericFault("apply_update: non-finite model parameters");
  return next;
}

double grad_variance_estimate(const CostFunction& cost, const Model& model, std::size_t batch_size,
                              std::size_t trials, std::uint64_t seed) {
  if (trials < 2) throw ConfigError("grad_variance_estimate: trials must be at least 2");
  const Vector exact = cost.full_gradient(model.params);
  if (cost.exact_gradients()) return 0.0;
  Rng rng(seed, Stream::kVariance);
  double total = 0.0;
  for (std::size_t k = 0; k < trials; ++k) {
    const Minibatch batch = draw_minibatch(rng, cost.dataset_size(), batch_size);
    total += squared_distance(cost.grad_estimate(model.params, batch), exact);
  }
  const double mean = total / static_cast<double>(trials);
  if (!std::isfinite(mean)) throw NumericFault("grad_variance_estimate: non-finite variance");
  return mean;
}

}  // namespace kardam
