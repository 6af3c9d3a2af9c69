#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "kardam/dataset.hpp"
#include "kardam/linalg.hpp"

namespace kardam {

/// Sample indices of one minibatch (drawn uniformly with replacement).
struct Minibatch {
  std::vector<std::size_t> indices;
  std::size_t size() const { return indices.size(); }
};

/// Q(x) = 1/2 * sum_i c_i (x_i - center_i)^2. Gradients are exact, so any
/// minibatch yields the full gradient.
struct QuadraticBowl {
  Vector center;
  Vector curvature;
};

/// Mean logistic loss over the dataset plus (l2/2)|w|^2, no bias term.
struct LogisticRegression {
  std::shared_ptr<const Dataset> data;
  double l2 = 0.0;
};

/// One tanh hidden layer, scalar logit, binary cross-entropy.
/// Parameter layout: W1 (hidden x dim, row-major), b1 (hidden), w2 (hidden), b2.
struct TinyMlp {
  std::shared_ptr<const Dataset> data;
  std::size_t hidden = 8;
};

class CostFunction {
 public:
  using Kind = std::variant<QuadraticBowl, LogisticRegression, TinyMlp>;

  explicit CostFunction(Kind kind);

  const Kind& kind() const { return kind_; }
  std::string_view name() const;
  std::size_t dimension() const { return dim_; }
  /// Number of samples a minibatch may index; 0 for the quadratic bowl.
  std::size_t dataset_size() const;
  bool exact_gradients() const { return std::holds_alternative<QuadraticBowl>(kind_); }

  double loss(std::span<const double> x) const;
  /// Exact gradient over the entire dataset.
  Vector full_gradient(std::span<const double> x) const;
  /// Minibatch-averaged gradient G(x, xi); unbiased for uniform batches.
  Vector grad_estimate(std::span<const double> x, const Minibatch& batch) const;

  /// Global Lipschitz constant of the gradient when it is cheaply known.
  std::optional<double> lipschitz_bound() const;

 private:
  Kind kind_;
  std::size_t dim_ = 0;
};

}  // namespace kardam
