#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "kardam/cost.hpp"
#include "kardam/dampening.hpp"
#include "kardam/filter.hpp"
#include "kardam/model.hpp"
#include "kardam/rng.hpp"

namespace kardam {

struct Behavior {
  enum class Kind { kHonest, kNegateAmplify, kStall, kRandomVector, kFlood };

  Kind kind = Kind::kHonest;
  double kappa = 10.0;  // negate_amplify factor
  double scale = 0.0;   // stall perturbation / random_vector entry scale
  double rate = 1.0;    // flood submission multiplier
  Kind payload = Kind::kHonest;  // what a flood worker sends

  /// The behavior that shapes the gradient content (the payload for floods).
  Kind content() const { return kind == Kind::kFlood ? payload : kind; }
};

std::string to_string(Behavior::Kind kind);

struct WorkerSpec {
  int worker_id = 0;
  Behavior behavior;
  std::size_t batch_size = 32;

  bool honest() const { return behavior.kind == Behavior::Kind::kHonest; }
};

struct StalenessModel {
  enum class Kind { kZero, kGaussian, kFixed, kEmpirical };

  Kind kind = Kind::kZero;
  double mean = 0.0;
  double sigma = 0.0;
  std::int64_t tau = 0;         // fixed
  std::vector<double> weights;  // empirical: weight of staleness 0, 1, 2, ...

  static StalenessModel zero() { return {}; }
  static StalenessModel gaussian(double mean, double sigma) { return {Kind::kGaussian, mean, sigma, 0, {}}; }
  static StalenessModel fixed(std::int64_t tau) { return {Kind::kFixed, 0.0, 0.0, tau, {}}; }
  static StalenessModel empirical(std::vector<double> w) { return {Kind::kEmpirical, 0.0, 0.0, 0, std::move(w)}; }

  void validate() const;
  /// Largest staleness the model can produce.
  std::int64_t max_tau() const;
  /// Nonnegative integer staleness; Gaussian draws are rounded and clamped at 0.
  std::int64_t sample(Rng& rng) const;
};

std::string to_string(StalenessModel::Kind kind);

/// Delivery-time ordering of worker events; the sequence number breaks ties.
class EventQueue {
 public:
  struct Event {
    double time = 0.0;
    std::uint64_t seq = 0;
    int worker = 0;
  };

  void push(double time, int worker) { heap_.push(Event{time, next_seq_++, worker}); }
  Event pop() {
    Event e = heap_.top();
    heap_.pop();
    return e;
  }
  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };
  std::priority_queue<Event, std::vector<Event>, Later> heap_;
  std::uint64_t next_seq_ = 0;
};

enum class Scheduler {
  kFair,         // every worker, Byzantine or not, waits for its own compute time
  kAdversarial,  // Byzantine messages go ahead of each honest delivery whenever they would pass
};

struct SimulationConfig {
  int n = 1;
  int f = 0;
  int M = 1;
  std::int64_t T = 1000;
  std::uint64_t seed = 1;
  std::shared_ptr<const CostFunction> cost;
  std::vector<WorkerSpec> workers;
  StalenessModel staleness;
  DampeningSpec dampening = DampeningSpec::inverse();
  LearningRateSchedule lr;
  std::optional<double> lipschitz_K;  // K for the prerequisite diagnostic and the eq2 base rate
  double q_opt = 0.0;                 // eq2 mode: Q(x*) (0 when unknown)
  std::int64_t variance_trials = 100; // eq2 mode: batches used to estimate d*sigma^2

  bool filter_enabled = true;
  FilterOptions filter;
  std::int64_t warmup_epochs = 0;  // metrics segmentation only

  Scheduler scheduler = Scheduler::kFair;
  double timing_jitter = 0.1;
  double init_scale = 1.0;
  std::optional<Vector> init;
  std::optional<double> target_grad_norm;
  std::optional<double> target_loss;
  double divergence_factor = 1e6;
  std::int64_t max_deliveries = 0;   // 0 picks a generous default
  std::int64_t stall_limit = 0;      // consecutive deliveries without an update; 0 picks a default
  bool record_sequence = true;       // keep the accepted-worker sequence for audits
  bool require_resilience = true;    // demand n > 3f+1 when filtering
};

struct EpochRecord {
  std::int64_t epoch = 0;  // epoch reached by this update (1-based)
  double loss = 0.0;
  double grad_norm = 0.0;
  double gamma_t = 0.0;
  double mu_t = 0.0;
  std::int64_t accepted_honest = 0;
  std::int64_t accepted_byz = 0;
  std::int64_t rejected_lipschitz = 0;
  std::int64_t rejected_frequency = 0;
  std::int64_t accepted_warmup = 0;
  double mean_staleness = 0.0;
  std::uint64_t window_hash = 0;
};

struct RunSummary {
  std::int64_t epochs = 0;
  std::int64_t delivered = 0;
  std::int64_t delivered_honest = 0;
  std::int64_t accepted = 0;
  std::int64_t accepted_honest = 0;
  std::int64_t accepted_warmup = 0;
  std::int64_t rejected_lipschitz = 0;
  std::int64_t rejected_frequency = 0;
  std::int64_t honest_passed_lipschitz = 0;
  std::int64_t byz_accepted = 0;
  std::int64_t byz_accepted_after_2n = 0;       // after the first 2n deliveries
  std::int64_t byz_accepted_after_tr = 0;       // at epochs >= warmup_epochs
  std::int64_t trailing_deliveries = 0;         // delivered after the last applied update
  std::optional<double> SL;
  std::optional<double> drop_ratio;
  std::optional<double> honest_acceptance;
  std::optional<std::int64_t> epochs_to_target;
  std::optional<std::int64_t> epochs_to_target_loss;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double final_grad_norm = 0.0;
  double mu_max = 0.0;
  double chi = 0.0;
  double base_gamma = 0.0;
  bool diverged = false;
  bool numeric_fault = false;
  bool stalled = false;
  std::string stop_reason;
  std::int64_t lemma1_violations = 0;
  std::int64_t longest_same_worker_run = 0;
  std::int64_t longest_honest_drought = 0;  // most consecutive accepted gradients with none honest
  PrerequisiteResult prerequisite;
  double prerequisite_K = 0.0;
};

struct RunTrace {
  std::vector<EpochRecord> epochs;
  RunSummary summary;
  std::vector<int> accepted_workers;          // when record_sequence
  std::vector<std::uint8_t> accepted_honest;  // parallel to accepted_workers
  Vector final_params;
};

/// Validates the pieces run_simulation relies on; throws ConfigError.
void validate(const SimulationConfig& config);

GradientMessage honest_step(const WorkerSpec& worker, const CostFunction& cost, const Model& snapshot, Rng& rng,
                            std::uint64_t batch_id);

/// Byzantine proposal built from the honest gradient at the snapshot and the
/// adversary's read-only view of the last applied gradient.
GradientMessage byzantine_step(const WorkerSpec& worker, const Model& snapshot, const Vector& honest_grad,
                               const std::optional<Vector>& last_applied, Rng& rng, std::uint64_t batch_id);

RunTrace run_simulation(const SimulationConfig& config);

/// x_0: the explicit init when given, otherwise init_scale * N(0, 1) per coordinate.
Vector initial_point(const SimulationConfig& config);

}  // namespace kardam
