#include "kardam/cost.hpp"

#include <cmath>
#include <string>

#include "kardam/errors.hpp"

namespace kardam {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::size_t mlp_dim(std::size_t input, std::size_t hidden) { return hidden * input + 2 * hidden + 1; }

void require_data(const std::shared_ptr<const Dataset>& data, const char* who) {
  if (!data || data->size() == 0) throw ConfigError(std::string(who) + ": dataset is empty");
}

// Accumulates the logistic loss/gradient of one sample into grad (scaled by weight).
double logistic_sample(std::span<const double> w, const Dataset& data, std::size_t i, double weight,
                       Vector* grad) {
  const auto x = data.row(i);
  double z = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) z += w[j] * x[j];
  const double y = data.labels[i];
  if (grad != nullptr) {
    const double r = weight * (sigmoid(z) - y);
    for (std::size_t j = 0; j < x.size(); ++j) (*grad)[j] += r * x[j];
  }
  return softplus(z) - y * z;
}

class MlpView {
 public:
  MlpView(std::span<const double> p, std::size_t input, std::size_t hidden)
      : p_(p), input_(input), hidden_(hidden) {}

  double w1(std::size_t h, std::size_t j) const { return p_[h * input_ + j]; }
  double b1(std::size_t h) const { return p_[hidden_ * input_ + h]; }
  double w2(std::size_t h) const { return p_[hidden_ * input_ + hidden_ + h]; }
  double b2() const { return p_[hidden_ * input_ + 2 * hidden_]; }

  std::size_t b1_offset() const { return hidden_ * input_; }
  std::size_t w2_offset() const { return hidden_ * input_ + hidden_; }
  std::size_t b2_offset() const { return hidden_ * input_ + 2 * hidden_; }

 private:
  std::span<const double> p_;
  std::size_t input_;
  std::size_t hidden_;
};

double mlp_sample(std::span<const double> params, const TinyMlp& mlp, std::size_t i, double weight,
                  Vector* grad, std::vector<double>& act) {
  const Dataset& data = *mlp.data;
  const std::size_t d = data.dim;
  const std::size_t h = mlp.hidden;
  const MlpView net(params, d, h);
  const auto x = data.row(i);
  act.resize(h);
  double z = net.b2();
  for (std::size_t k = 0; k < h; ++k) {
    double a = net.b1(k);
    for (std::size_t j = 0; j < d; ++j) a += net.w1(k, j) * x[j];
    act[k] = std::tanh(a);
    z += net.w2(k) * act[k];
  }
  const double y = data.labels[i];
  if (grad != nullptr) {
    Vector& g = *grad;
    const double dz = weight * (sigmoid(z) - y);
    g[net.b2_offset()] += dz;
    for (std::size_t k = 0; k < h; ++k) {
      g[net.w2_offset() + k] += dz * act[k];
      const double da = dz * net.w2(k) * (1.0 - act[k] * act[k]);
      g[net.b1_offset() + k] += da;
      for (std::size_t j = 0; j < d; ++j) g[k * d + j] += da * x[j];
    }
  }
  return softplus(z) - y * z;
}

void check_finite(std::span<const double> g, const char* who) {
  if (!all_finite(g)) throw NumericFault(std::string(who) + ": non-finite gradient");
}

}  // namespace

CostFunction::CostFunction(Kind kind) : kind_(std::move(kind)) {
  dim_ = std::visit(
      Overloaded{
          [](const QuadraticBowl& q) {
            if (q.center.empty() || q.center.size() != q.curvature.size()) {
              throw ConfigError("quadratic_bowl: center and curvature must be non-empty and equal length");
            }
            for (double c : q.curvature) {
              if (!(c > 0.0)) throw ConfigError("quadratic_bowl: curvature entries must be positive");
            }
            return q.center.size();
          },
          [](const LogisticRegression& l) {
            require_data(l.data, "logistic_regression");
            if (l.l2 < 0.0) throw ConfigError("logistic_regression: l2 must be nonnegative");
            return l.data->dim;
          },
          [](const TinyMlp& m) {
            require_data(m.data, "tiny_mlp");
            if (m.hidden == 0) throw ConfigError("tiny_mlp: hidden must be positive");
            return mlp_dim(m.data->dim, m.hidden);
          },
      },
      kind_);
}

std::string_view CostFunction::name() const {
  return std::visit(Overloaded{[](const QuadraticBowl&) { return std::string_view("quadratic_bowl"); },
                               [](const LogisticRegression&) { return std::string_view("logistic_regression"); },
                               [](const TinyMlp&) { return std::string_view("tiny_mlp"); }},
                    kind_);
}

std::size_t CostFunction::dataset_size() const {
  return std::visit(Overloaded{[](const QuadraticBowl&) -> std::size_t { return 0; },
                               [](const LogisticRegression& l) { return l.data->size(); },
                               [](const TinyMlp& m) { return m.data->size(); }},
                    kind_);
}

double CostFunction::loss(std::span<const double> x) const {
  if (x.size() != dim_) throw ConfigError("loss: model dimension does not match cost dimension");
  return std::visit(
      Overloaded{
          [&](const QuadraticBowl& q) {
            double s = 0.0;
            for (std::size_t i = 0; i < dim_; ++i) {
              const double e = x[i] - q.center[i];
              s += q.curvature[i] * e * e;
            }
            return 0.5 * s;
          },
          [&](const LogisticRegression& l) {
            double s = 0.0;
            const std::size_t n = l.data->size();
            for (std::size_t i = 0; i < n; ++i) s += logistic_sample(x, *l.data, i, 0.0, nullptr);
            return s / static_cast<double>(n) + 0.5 * l.l2 * dot(x, x);
          },
          [&](const TinyMlp& m) {
            double s = 0.0;
            std::vector<double> act;
            const std::size_t n = m.data->size();
            for (std::size_t i = 0; i < n; ++i) s += mlp_sample(x, m, i, 0.0, nullptr, act);
            return s / static_cast<double>(n);
          },
      },
      kind_);
}

Vector CostFunction::full_gradient(std::span<const double> x) const {
  if (x.size() != dim_) throw ConfigError("full_gradient: model dimension does not match cost dimension");
  Vector g(dim_, 0.0);
  std::visit(
      Overloaded{
          [&](const QuadraticBowl& q) {
            for (std::size_t i = 0; i < dim_; ++i) g[i] = q.curvature[i] * (x[i] - q.center[i]);
          },
          [&](const LogisticRegression& l) {
            const std::size_t n = l.data->size();
            const double w = 1.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) logistic_sample(x, *l.data, i, w, &g);
            if (l.l2 > 0.0) axpy(l.l2, x, g);
          },
          [&](const TinyMlp& m) {
            const std::size_t n = m.data->size();
            const double w = 1.0 / static_cast<double>(n);
            std::vector<double> act;
            for (std::size_t i = 0; i < n; ++i) mlp_sample(x, m, i, w, &g, act);
          },
      },
      kind_);
  check_finite(g, "full_gradient");
  return g;
}

Vector CostFunction::grad_estimate(std::span<const double> x, const Minibatch& batch) const {
  if (x.size() != dim_) throw ConfigError("grad_estimate: model dimension does not match cost dimension");
  if (exact_gradients()) return full_gradient(x);
  const std::size_t n = dataset_size();
  if (batch.indices.empty()) throw ConfigError("grad_estimate: empty minibatch");
  for (std::size_t i : batch.indices) {
    if (i >= n) throw ConfigError("grad_estimate: minibatch index out of range");
  }
  Vector g(dim_, 0.0);
  const double w = 1.0 / static_cast<double>(batch.size());
  std::visit(Overloaded{
                 [](const QuadraticBowl&) {},
                 [&](const LogisticRegression& l) {
                   for (std::size_t i : batch.indices) logistic_sample(x, *l.data, i, w, &g);
                   if (l.l2 > 0.0) axpy(l.l2, x, g);
                 },
                 [&](const TinyMlp& m) {
                   std::vector<double> act;
                   for (std::size_t i : batch.indices) mlp_sample(x, m, i, w, &g, act);
                 },
             },
             kind_);
  check_finite(g, "grad_estimate");
  return g;
}

std::optional<double> CostFunction::lipschitz_bound() const {
  return std::visit(
      Overloaded{
          [](const QuadraticBowl& q) -> std::optional<double> {
            double m = 0.0;
            for (double c : q.curvature) m = std::max(m, c);
            return m;
          },
          [](const LogisticRegression& l) -> std::optional<double> {
            // sigma'(z) <= 1/4, so K <= lambda_max(X^T X / N) / 4 + l2.
            const Dataset& data = *l.data;
            const std::size_t d = data.dim;
            const double inv_n = 1.0 / static_cast<double>(data.size());
            Vector v(d, 1.0 / std::sqrt(static_cast<double>(d)));
            double lambda = 0.0;
            for (int it = 0; it < 200; ++it) {
              Vector next(d, 0.0);
              for (std::size_t i = 0; i < data.size(); ++i) {
                const auto row = data.row(i);
                axpy(dot(row, v) * inv_n, row, next);
              }
              lambda = norm(next);
              if (lambda == 0.0) break;
              scale(1.0 / lambda, next);
              v = std::move(next);
            }
            return 0.25 * lambda + l.l2;
          },
          [](const TinyMlp&) -> std::optional<double> { return std::nullopt; },
      },
      kind_);
}

}  // namespace kardam
