#include "kardam/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "kardam/errors.hpp"

namespace kardam {

std::string to_string(Behavior::Kind kind) {
  switch (kind) {
    case Behavior::Kind::kHonest:
      return "honest";
    case Behavior::Kind::kNegateAmplify:
      return "negate_amplify";
    case Behavior::Kind::kStall:
      return "tiny_lipschitz_stall";
    case Behavior::Kind::kRandomVector:
      return "random_vector";
    case Behavior::Kind::kFlood:
      return "flood";
  }
  return "unknown";
}

std::string to_string(StalenessModel::Kind kind) {
  switch (kind) {
    case StalenessModel::Kind::kZero:
      return "zero";
    case StalenessModel::Kind::kGaussian:
      return "gaussian";
    case StalenessModel::Kind::kFixed:
      return "fixed";
    case StalenessModel::Kind::kEmpirical:
      return "empirical";
  }
  return "unknown";
}

void StalenessModel::validate() const {
  switch (kind) {
    case Kind::kZero:
      return;
    case Kind::kGaussian:
      if (!(sigma >= 0.0) || !std::isfinite(mean) || !std::isfinite(sigma)) {
        throw ConfigError("staleness: gaussian needs a finite mean and sigma >= 0");
      }
      return;
    case Kind::kFixed:
      if (tau < 0) throw ConfigError("staleness: fixed tau must be nonnegative");
      return;
    case Kind::kEmpirical: {
      double total = 0.0;
      for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("staleness: empirical weights must be >= 0");
        total += w;
      }
      if (!(total > 0.0)) throw ConfigError("staleness: empirical weights must have a positive sum");
      return;
    }
  }
}

std::int64_t StalenessModel::max_tau() const {
  switch (kind) {
    case Kind::kZero:
      return 0;
    case Kind::kGaussian:
      return std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(mean + 10.0 * sigma)) + 1);
    case Kind::kFixed:
      return tau;
    case Kind::kEmpirical:
      return weights.empty() ? 0 : static_cast<std::int64_t>(weights.size()) - 1;
  }
  return 0;
}

std::int64_t StalenessModel::sample(Rng& rng) const {
  switch (kind) {
    case Kind::kZero:
      return 0;
    case Kind::kGaussian: {
      const double v = std::round(rng.normal(mean, sigma));
      return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::max(0.0, v)), 0, max_tau());
    }
    case Kind::kFixed:
      return tau;
    case Kind::kEmpirical: {
      double total = 0.0;
      for (double w : weights) total += w;
      double u = rng.uniform() * total;
      for (std::size_t i = 0; i < weights.size(); ++i) {
        if (u < weights[i]) return static_cast<std::int64_t>(i);
        u -= weights[i];
      }
      return max_tau();
    }
  }
  return 0;
}

void validate(const SimulationConfig& c) {
  if (!c.cost) throw ConfigError("simulation: cost function missing");
  if (c.n < 1) throw ConfigError("simulation: n must be positive");
  if (c.f < 0) throw ConfigError("simulation: f must be nonnegative");
  if (c.M < 1) throw ConfigError("simulation: M must be at least 1");
  if (c.T < 1) throw ConfigError("simulation: T must be at least 1");
  if (c.workers.size() != static_cast<std::size_t>(c.n)) {
    throw ConfigError("simulation: expected " + std::to_string(c.n) + " workers, got " +
                      std::to_string(c.workers.size()));
  }
  int byzantine = 0;
  for (std::size_t i = 0; i < c.workers.size(); ++i) {
    const WorkerSpec& w = c.workers[i];
    if (w.worker_id != static_cast<int>(i)) throw ConfigError("simulation: worker ids must be 0..n-1 in order");
    if (w.batch_size == 0) throw ConfigError("simulation: batch_size must be positive");
    if (!w.honest()) ++byzantine;
    if (w.behavior.kind == Behavior::Kind::kFlood) {
      if (!(w.behavior.rate > 0.0)) throw ConfigError("simulation: flood rate must be positive");
      if (w.behavior.payload == Behavior::Kind::kFlood) throw ConfigError("simulation: flood payload cannot be flood");
    }
  }
  if (byzantine > c.f) {
    throw ConfigError("simulation: " + std::to_string(byzantine) + " non-honest workers exceed f = " +
                      std::to_string(c.f));
  }
  if (c.filter_enabled && c.require_resilience && !(c.n > 3 * c.f + 1)) {
    throw ConfigError("simulation: n must exceed 3f+1 when filtering is enabled");
  }
  if (!(c.lr.base_gamma > 0.0)) throw ConfigError("simulation: base learning rate must be positive");
  if (!(c.timing_jitter >= 0.0 && c.timing_jitter < 1.0)) throw ConfigError("simulation: timing_jitter must be in [0, 1)");
  if (c.init && c.init->size() != c.cost->dimension()) throw ConfigError("simulation: init has the wrong dimension");
  c.staleness.validate();
  c.dampening.validate();
}

Vector initial_point(const SimulationConfig& c) {
  if (c.init) return *c.init;
  Rng rng(c.seed, Stream::kInit);
  Vector x(c.cost->dimension());
  for (double& v : x) v = c.init_scale * rng.normal();
  return x;
}

GradientMessage honest_step(const WorkerSpec& worker, const CostFunction& cost, const Model& snapshot, Rng& rng,
                            std::uint64_t batch_id) {
  const Minibatch batch = draw_minibatch(rng, cost.dataset_size(), worker.batch_size);
  return GradientMessage{worker.worker_id, cost.grad_estimate(snapshot.params, batch), snapshot.epoch, batch_id};
}

GradientMessage byzantine_step(const WorkerSpec& worker, const Model& snapshot, const Vector& honest_grad,
                               const std::optional<Vector>& last_applied, Rng& rng, std::uint64_t batch_id) {
  GradientMessage msg{worker.worker_id, honest_grad, snapshot.epoch, batch_id};
  const Behavior& b = worker.behavior;
  switch (b.content()) {
    case Behavior::Kind::kHonest:
    case Behavior::Kind::kFlood:
      break;
    case Behavior::Kind::kNegateAmplify:
      for (double& v : msg.grad) v *= -b.kappa;
      break;
    case Behavior::Kind::kStall:
      // Echo the last applied gradient, rescaled by at most `scale`, so the
      // server sees almost no gradient change. Before any update there is
      // nothing to echo and the honest gradient is sent instead.
      if (last_applied) {
        const double factor = b.scale == 0.0 ? 1.0 : 1.0 + b.scale * rng.uniform(-1.0, 1.0);
        msg.grad = *last_applied;
        if (factor != 1.0) scale(factor, msg.grad);
      }
      break;
    case Behavior::Kind::kRandomVector:
      for (double& v : msg.grad) v = b.scale * rng.normal();
      break;
  }
  return msg;
}

namespace {

std::uint64_t window_hash(const std::vector<int>& window) {
  std::uint64_t h = 1469598103934665603ULL;
  for (int w : window) {
    h ^= static_cast<std::uint64_t>(w) + 1;
    h *= 1099511628211ULL;
  }
  return h;
}

struct Pending {
  GradientMessage msg;
  bool honest = true;
};

class Server {
 public:
  explicit Server(const SimulationConfig& cfg)
      : cfg_(cfg), cost_(*cfg.cost), filter_(cfg.n, cfg.f, cfg.filter), lr_(cfg.lr) {
    const auto n = static_cast<std::size_t>(cfg.n);
    for (std::size_t p = 0; p < n; ++p) {
      stale_rng_.emplace_back(cfg.seed, Stream::kStaleness, p);
      batch_rng_.emplace_back(cfg.seed, Stream::kBatch, p);
      timing_rng_.emplace_back(cfg.seed, Stream::kTiming, p);
      adv_rng_.emplace_back(cfg.seed, Stream::kAdversary, p);
    }
    batch_counter_.assign(n, 0);
    history_cap_ = static_cast<std::size_t>(std::max<std::int64_t>(cfg.staleness.max_tau(), 1) + 2);
    max_deliveries_ = cfg.max_deliveries > 0 ? cfg.max_deliveries : 200 * (cfg.T + 10) * std::max(cfg.n, 1);
    stall_limit_ = cfg.stall_limit > 0 ? cfg.stall_limit : 500 * std::max(cfg.n, 1) + 5000;
  }

  RunTrace run() {
    model_.params = initial_point(cfg_);
    model_.epoch = 0;
    history_.push_back(model_.params);
    RunSummary& s = trace_.summary;
    s.initial_loss = cost_.loss(model_.params);
    s.final_loss = s.initial_loss;
    s.final_grad_norm = norm(cost_.full_gradient(model_.params));
    s.chi = chi_bound(cfg_.dampening);
    prerequisite_K_ = resolve_K();
    if (cfg_.lr.mode == LearningRateSchedule::Mode::kEq2Base) {
      const double dsigma2 = grad_variance_estimate(cost_, model_, cfg_.workers.front().batch_size,
                                                    static_cast<std::size_t>(std::max<std::int64_t>(2, cfg_.variance_trials)),
                                                    cfg_.seed);
      lr_.base_gamma = eq2_base_gamma(s.initial_loss, cfg_.q_opt, prerequisite_K_, cfg_.T, cfg_.M, dsigma2);
    }
    s.base_gamma = lr_.base_gamma;

    try {
      loop();
    } catch (const NumericFault& e) {
      s.numeric_fault = true;
      s.diverged = true;
      s.stop_reason = std::string("numeric_fault: ") + e.what();
    }
    finish();
    return std::move(trace_);
  }

 private:
  std::int64_t t() const { return model_.epoch; }
  const Vector& x_t() const { return history_.back(); }
  const Vector& x_prev() const { return history_.size() >= 2 ? history_[history_.size() - 2] : history_.back(); }

  Model snapshot(std::int64_t epoch) const {
    const auto idx = static_cast<std::size_t>(epoch - history_base_);
    return Model{history_[idx], epoch};
  }

  double resolve_K() const {
    if (cfg_.lipschitz_K) return *cfg_.lipschitz_K;
    if (auto k = cost_.lipschitz_bound()) return *k;
    return 1.0;
  }

  double compute_time(int p) {
    Rng& rng = timing_rng_[static_cast<std::size_t>(p)];
    const double j = cfg_.timing_jitter;
    double dt = j > 0.0 ? rng.uniform(1.0 - j, 1.0 + j) : 1.0;
    const Behavior& b = cfg_.workers[static_cast<std::size_t>(p)].behavior;
    if (b.kind == Behavior::Kind::kFlood) dt /= b.rate;
    return dt;
  }

  std::uint64_t next_batch_id(int p) {
    return (static_cast<std::uint64_t>(p) << 40) | batch_counter_[static_cast<std::size_t>(p)]++;
  }

  GradientMessage make_honest(int p) {
    const auto up = static_cast<std::size_t>(p);
    const std::int64_t tau = cfg_.staleness.sample(stale_rng_[up]);
    const std::int64_t l = std::max<std::int64_t>(history_base_, t() - tau);
    return honest_step(cfg_.workers[up], cost_, snapshot(l), batch_rng_[up], next_batch_id(p));
  }

  // Byzantine workers always see the newest model.
  GradientMessage make_byzantine(int p) {
    const auto up = static_cast<std::size_t>(p);
    const Model now = snapshot(t());
    const std::uint64_t id = next_batch_id(p);
    const Minibatch batch = draw_minibatch(batch_rng_[up], cost_.dataset_size(), cfg_.workers[up].batch_size);
    const Vector honest = cost_.grad_estimate(now.params, batch);
    return byzantine_step(cfg_.workers[up], now, honest, filter_.last_accepted_grad, adv_rng_[up], id);
  }

  FilterVerdict judge(const GradientMessage& msg) const {
    if (!cfg_.filter_enabled) return FilterVerdict{true, Reason::kAccepted, std::nullopt, std::nullopt};
    return filter_check(filter_, msg, x_t(), x_prev());
  }

  void deliver(const GradientMessage& msg) {
    const auto up = static_cast<std::size_t>(msg.worker_id);
    const bool honest = cfg_.workers[up].honest();
    RunSummary& s = trace_.summary;
    ++s.delivered;
    if (honest) ++s.delivered_honest;

    const FilterVerdict v = judge(msg);
    if (honest && v.reason != Reason::kRejectedLipschitz) ++s.honest_passed_lipschitz;
    if (cfg_.filter_enabled) filter_observe(filter_, msg, v);

    if (!v.accepted) {
      ++since_update_;
      if (v.reason == Reason::kRejectedLipschitz) {
        ++current_.rejected_lipschitz;
        ++s.rejected_lipschitz;
      } else {
        ++current_.rejected_frequency;
        ++s.rejected_frequency;
      }
      return;
    }

    if (cfg_.filter_enabled) filter_commit(filter_, msg, snapshot(msg.timestamp).params);
    ++s.accepted;
    if (v.reason == Reason::kAcceptedWarmup) {
      ++s.accepted_warmup;
      ++current_.accepted_warmup;
    }
    if (honest) {
      ++s.accepted_honest;
      ++current_.accepted_honest;
    } else {
      ++s.byz_accepted;
      ++current_.accepted_byz;
      if (s.delivered > 2 * cfg_.n) ++s.byz_accepted_after_2n;
      if (t() >= cfg_.warmup_epochs) ++s.byz_accepted_after_tr;
    }
    if (cfg_.record_sequence) {
      trace_.accepted_workers.push_back(msg.worker_id);
      trace_.accepted_honest.push_back(honest ? 1 : 0);
    }
    honest_run_ = honest ? 0 : honest_run_ + 1;
    s.longest_honest_drought = std::max(s.longest_honest_drought, honest_run_);

    pending_.push_back(Pending{msg, honest});
    ++since_update_;
    if (pending_.size() == static_cast<std::size_t>(cfg_.M)) apply_epoch();
  }

  void apply_epoch() {
    std::vector<double> lambdas;
    std::vector<WeightedGradient> weighted;
    double staleness_sum = 0.0;
    for (const Pending& p : pending_) {
      const std::int64_t tau = t() - p.msg.timestamp;
      staleness_sum += static_cast<double>(tau);
      lambdas.push_back(lambda_eval(cfg_.dampening, tau));
    }
    for (std::size_t i = 0; i < pending_.size(); ++i) weighted.push_back({pending_[i].msg.grad, lambdas[i]});
    const RateResult rate = adaptive_rate(lr_, lambdas);
    model_ = apply_update(model_, weighted, rate.gamma_t);
    history_.push_back(model_.params);
    while (history_.size() > history_cap_) {
      history_.pop_front();
      ++history_base_;
    }
    if (cfg_.filter_enabled) filter_note_update(filter_);

    const double loss = cost_.loss(model_.params);
    const double gnorm = norm(cost_.full_gradient(model_.params));
    current_.epoch = model_.epoch;
    current_.loss = loss;
    current_.grad_norm = gnorm;
    current_.gamma_t = rate.gamma_t;
    current_.mu_t = rate.mu;
    current_.mean_staleness = staleness_sum / static_cast<double>(pending_.size());
    current_.window_hash = window_hash(filter_.window);
    trace_.epochs.push_back(current_);
    lambda_log_.push_back(EpochLambdas{rate.gamma_t, std::move(lambdas)});
    current_ = EpochRecord{};
    pending_.clear();
    since_update_ = 0;

    RunSummary& s = trace_.summary;
    s.epochs = model_.epoch;
    s.final_loss = loss;
    s.final_grad_norm = gnorm;
    if (cfg_.target_loss && !s.epochs_to_target_loss && loss <= *cfg_.target_loss) s.epochs_to_target_loss = t();
    if (!std::isfinite(loss) || loss > cfg_.divergence_factor * std::max(s.initial_loss, 1e-300)) {
      s.diverged = true;
      stop("diverged");
    } else if (cfg_.target_grad_norm && gnorm <= *cfg_.target_grad_norm) {
      s.epochs_to_target = t();
      stop("target_grad_norm");
    } else if (t() >= cfg_.T) {
      stop("completed");
    }
  }

  void stop(const char* reason) {
    if (!stopped_) trace_.summary.stop_reason = reason;
    stopped_ = true;
  }

  bool check_limits() {
    if (trace_.summary.delivered >= max_deliveries_) {
      trace_.summary.stalled = true;
      stop("max_deliveries");
    } else if (since_update_ >= stall_limit_) {
      trace_.summary.stalled = true;
      stop("stalled");
    }
    return stopped_;
  }

  // Adversarial scheduling: every Byzantine worker, in id order, gets to
  // deliver ahead of the next honest message whenever the filter would take
  // its proposal. Floods keep going for as long as they are accepted.
  void inject_byzantine() {
    for (int p = 0; p < cfg_.n && !stopped_; ++p) {
      const WorkerSpec& w = cfg_.workers[static_cast<std::size_t>(p)];
      if (w.honest()) continue;
      const bool flood = w.behavior.kind == Behavior::Kind::kFlood;
      do {
        if (check_limits()) return;
        const GradientMessage msg = make_byzantine(p);
        if (!judge(msg).accepted) break;
        deliver(msg);
      } while (flood && !stopped_);
    }
  }

  void loop() {
    EventQueue queue;
    const bool adversarial = cfg_.scheduler == Scheduler::kAdversarial;
    for (int p = 0; p < cfg_.n; ++p) {
      if (adversarial && !cfg_.workers[static_cast<std::size_t>(p)].honest()) continue;
      queue.push(compute_time(p), p);
    }
    while (!stopped_ && !queue.empty()) {
      if (check_limits()) break;
      if (adversarial) {
        inject_byzantine();
        if (stopped_) break;
      }
      const EventQueue::Event e = queue.pop();
      const bool honest = cfg_.workers[static_cast<std::size_t>(e.worker)].honest();
      deliver(honest ? make_honest(e.worker) : make_byzantine(e.worker));
      queue.push(e.time + compute_time(e.worker), e.worker);
    }
    if (!stopped_) stop("no_workers");
  }

  void finish() {
    RunSummary& s = trace_.summary;
    s.trailing_deliveries = since_update_;
    s.SL = slowdown(s.accepted_honest, s.delivered);
    if (s.delivered > 0) s.drop_ratio = static_cast<double>(s.delivered - s.accepted) / static_cast<double>(s.delivered);
    if (s.delivered_honest > 0) {
      s.honest_acceptance = static_cast<double>(s.accepted_honest) / static_cast<double>(s.delivered_honest);
    }
    s.mu_max = lr_.mu_max_observed;
    s.lemma1_violations = lemma1_violations(trace_.accepted_honest, cfg_.f);
    s.longest_same_worker_run = longest_same_worker_run(trace_.accepted_workers);
    s.prerequisite_K = prerequisite_K_;
    s.prerequisite = prerequisite_check(lambda_log_, prerequisite_K_, cfg_.dampening);
    trace_.final_params = model_.params;
  }

  const SimulationConfig& cfg_;
  const CostFunction& cost_;
  FilterState filter_;
  LearningRateSchedule lr_;
  Model model_;
  std::deque<Vector> history_;
  std::int64_t history_base_ = 0;
  std::size_t history_cap_ = 2;
  std::vector<Rng> stale_rng_, batch_rng_, timing_rng_, adv_rng_;
  std::vector<std::uint64_t> batch_counter_;
  std::vector<Pending> pending_;
  std::vector<EpochLambdas> lambda_log_;
  EpochRecord current_;
  RunTrace trace_;
  std::int64_t since_update_ = 0;
  std::int64_t honest_run_ = 0;
  std::int64_t max_deliveries_ = 0;
  std::int64_t stall_limit_ = 0;
  double prerequisite_K_ = 1.0;
  bool stopped_ = false;
};

}  // namespace

RunTrace run_simulation(const SimulationConfig& config) {
  validate(config);
  Server server(config);
  return server.run();
}

}  // namespace kardam
