#include "kardam/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "kardam/dataset.hpp"
#include "kardam/errors.hpp"

namespace kardam {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw ConfigError(path.empty() ? msg : path + ": " + msg);
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Reads fields of one JSON object, remembering which keys were consumed so
// unknown (usually misspelt) keys can be reported with their path.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "must be an object");
  }

  std::string path(const std::string& key) const { return join(path_, key); }

  const json* get(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return nullptr;
    return &*it;
  }

  bool has(const std::string& key) { return get(key) != nullptr; }

  std::int64_t integer(const std::string& key, std::optional<std::int64_t> def, std::int64_t lo,
                       std::int64_t hi = std::numeric_limits<std::int64_t>::max()) {
    const json* v = get(key);
    if (!v) {
      if (!def) fail(path(key), "is required");
      return *def;
    }
    if (!v->is_number_integer()) fail(path(key), "must be an integer");
    if (v->is_number_unsigned() && v->get<std::uint64_t>() > static_cast<std::uint64_t>(hi)) {
      fail(path(key), "must be at most " + std::to_string(hi));
    }
    const auto x = v->get<std::int64_t>();
    if (x < lo) fail(path(key), "must be at least " + std::to_string(lo));
    if (x > hi) fail(path(key), "must be at most " + std::to_string(hi));
    return x;
  }

  std::uint64_t seed(const std::string& key) {
    const json* v = get(key);
    if (!v) fail(path(key), "is required (all randomness is seeded explicitly)");
    if (v->is_number_unsigned()) return v->get<std::uint64_t>();
    if (v->is_number_integer() && v->get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v->get<std::int64_t>());
    fail(path(key), "must be a nonnegative integer");
  }

  double number(const std::string& key, std::optional<double> def) {
    const json* v = get(key);
    if (!v) {
      if (!def) fail(path(key), "is required");
      return *def;
    }
    if (!v->is_number()) fail(path(key), "must be a number");
    const double x = v->get<double>();
    if (!std::isfinite(x)) fail(path(key), "must be finite");
    return x;
  }

  double positive(const std::string& key, std::optional<double> def) {
    const double x = number(key, def);
    if (!(x > 0.0)) fail(path(key), "must be positive");
    return x;
  }

  double nonnegative(const std::string& key, std::optional<double> def) {
    const double x = number(key, def);
    if (!(x >= 0.0)) fail(path(key), "must be nonnegative");
    return x;
  }

  std::optional<double> optional_positive(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return positive(key, std::nullopt);
  }

  bool boolean(const std::string& key, bool def) {
    const json* v = get(key);
    if (!v) return def;
    if (!v->is_boolean()) fail(path(key), "must be true or false");
    return v->get<bool>();
  }

  std::string choice(const std::string& key, std::optional<std::string> def, std::initializer_list<const char*> options) {
    const json* v = get(key);
    std::string s;
    if (!v) {
      if (!def) fail(path(key), "is required");
      s = *def;
    } else {
      if (!v->is_string()) fail(path(key), "must be a string");
      s = v->get<std::string>();
    }
    std::string allowed;
    for (const char* o : options) {
      if (s == o) return s;
      allowed += allowed.empty() ? o : std::string(", ") + o;
    }
    fail(path(key), "must be one of {" + allowed + "}, got \"" + s + "\"");
  }

  const json& object(const std::string& key) {
    const json* v = get(key);
    if (!v) return empty_object();
    if (!v->is_object()) fail(path(key), "must be an object");
    return *v;
  }

  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(path(it.key()), "unknown field");
    }
  }

 private:
  static const json& empty_object() {
    static const json e = json::object();
    return e;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// A scalar broadcasts to every coordinate; an array must have exactly `dim` entries.
json vector_field(Fields& fields, const std::string& key, double def, std::size_t dim, bool positive_only) {
  const json* v = fields.get(key);
  json out = json::array();
  if (!v || v->is_number()) {
    const double x = v ? v->get<double>() : def;
    if (!std::isfinite(x) || (positive_only && !(x > 0.0))) fail(fields.path(key), positive_only ? "entries must be positive" : "entries must be finite");
    for (std::size_t i = 0; i < dim; ++i) out.push_back(x);
    return out;
  }
  if (!v->is_array()) fail(fields.path(key), "must be a number or an array");
  if (v->size() != dim) fail(fields.path(key), "must have " + std::to_string(dim) + " entries");
  for (std::size_t i = 0; i < dim; ++i) {
    const json& e = (*v)[i];
    const std::string p = fields.path(key) + "[" + std::to_string(i) + "]";
    if (!e.is_number() || !std::isfinite(e.get<double>())) fail(p, "must be a finite number");
    if (positive_only && !(e.get<double>() > 0.0)) fail(p, "must be positive");
    out.push_back(e.get<double>());
  }
  return out;
}

json normalize_behavior(const json& raw, const std::string& path, bool allow_flood) {
  Fields b(raw, path);
  const std::string kind = allow_flood ? b.choice("kind", "honest", {"honest", "negate_amplify", "tiny_lipschitz_stall",
                                                                       "random_vector", "flood"})
                                       : b.choice("kind", "honest", {"honest", "negate_amplify", "tiny_lipschitz_stall",
                                                                       "random_vector"});
  json out = {{"kind", kind}};
  if (kind == "negate_amplify") out["kappa"] = b.positive("kappa", 10.0);
  if (kind == "tiny_lipschitz_stall") out["scale"] = b.nonnegative("scale", 0.0);
  if (kind == "random_vector") out["scale"] = b.positive("scale", 1.0);
  if (kind == "flood") {
    out["rate"] = b.positive("rate", 10.0);
    json payload = json::object();
    if (b.has("payload")) payload = *b.get("payload");
    out["payload"] = normalize_behavior(payload, b.path("payload"), false);
  }
  b.done();
  return out;
}

Behavior::Kind behavior_kind(const std::string& s) {
  if (s == "negate_amplify") return Behavior::Kind::kNegateAmplify;
  if (s == "tiny_lipschitz_stall") return Behavior::Kind::kStall;
  if (s == "random_vector") return Behavior::Kind::kRandomVector;
  if (s == "flood") return Behavior::Kind::kFlood;
  return Behavior::Kind::kHonest;
}

Behavior build_behavior(const json& j) {
  Behavior b;
  b.kind = behavior_kind(j.at("kind").get<std::string>());
  const json& content = b.kind == Behavior::Kind::kFlood ? j.at("payload") : j;
  if (b.kind == Behavior::Kind::kFlood) {
    b.rate = j.at("rate").get<double>();
    b.payload = behavior_kind(content.at("kind").get<std::string>());
  }
  if (content.contains("kappa")) b.kappa = content.at("kappa").get<double>();
  if (content.contains("scale")) b.scale = content.at("scale").get<double>();
  return b;
}

json normalize_single(const json& raw) {
  Fields top(raw, "");
  json out;
  const std::int64_t version = top.integer("schema_version", kSchemaVersion, 1);
  if (version != kSchemaVersion) fail("schema_version", "unsupported version " + std::to_string(version));
  out["schema_version"] = version;
  {
    const json* name = top.get("name");
    if (name && !name->is_string()) fail("name", "must be a string");
    out["name"] = name ? name->get<std::string>() : std::string("experiment");
  }
  const std::int64_t n = top.integer("n", std::nullopt, 1, 100000);
  const std::int64_t f = top.integer("f", 0, 0, 100000);
  out["n"] = n;
  out["f"] = f;
  out["M"] = top.integer("M", 1, 1, 100000);
  out["T"] = top.integer("T", std::nullopt, 1);
  out["seed"] = top.seed("seed");
  out["replicates"] = top.integer("replicates", 1, 1, 100000);

  // Dataset: always materialized so the echo is self-contained.
  {
    Fields d(top.object("dataset"), "dataset");
    out["dataset"] = {{"dim", d.integer("dim", 20, 1, 1000000)},
                      {"samples", d.integer("samples", 2000, 1, 100000000)},
                      {"separation", d.nonnegative("separation", 2.0)},
                      {"seed", d.has("seed") ? d.seed("seed") : 7}};
    d.done();
  }

  {
    const json* c = top.get("cost");
    if (!c) fail("cost", "is required");
    Fields cost(*c, "cost");
    const std::string kind = cost.choice("kind", std::nullopt, {"quadratic_bowl", "logistic_regression", "tiny_mlp"});
    json cj = {{"kind", kind}};
    if (kind == "quadratic_bowl") {
      const auto dim = static_cast<std::size_t>(cost.integer("dim", 10, 1, 10000000));
      cj["dim"] = dim;
      cj["curvature"] = vector_field(cost, "curvature", 1.0, dim, true);
      cj["center"] = vector_field(cost, "center", 0.0, dim, false);
    } else if (kind == "logistic_regression") {
      cj["l2"] = cost.nonnegative("l2", 0.0);
    } else {
      cj["hidden"] = cost.integer("hidden", 8, 1, 100000);
    }
    cost.done();
    out["cost"] = cj;
  }

  {
    json groups = json::array();
    const json* w = top.get("workers");
    std::int64_t total = 0;
    std::int64_t byz = 0;
    if (!w) {
      groups.push_back({{"count", n}, {"behavior", {{"kind", "honest"}}}, {"batch_size", 32}});
      total = n;
    } else {
      if (!w->is_array() || w->empty()) fail("workers", "must be a non-empty array of worker groups");
      for (std::size_t i = 0; i < w->size(); ++i) {
        const std::string p = "workers[" + std::to_string(i) + "]";
        Fields g((*w)[i], p);
        const std::int64_t count = g.integer("count", 1, 1, 100000);
        json beh = normalize_behavior(g.has("behavior") ? *g.get("behavior") : json::object(), g.path("behavior"), true);
        const std::int64_t batch = g.integer("batch_size", 32, 1, 100000000);
        g.done();
        total += count;
        if (beh["kind"] != "honest") byz += count;
        groups.push_back({{"count", count}, {"behavior", beh}, {"batch_size", batch}});
      }
    }
    if (total != n) fail("workers", "group counts sum to " + std::to_string(total) + " but n = " + std::to_string(n));
    if (byz > f) fail("workers", std::to_string(byz) + " non-honest workers exceed f = " + std::to_string(f));
    out["workers"] = groups;
  }

  {
    Fields s(top.object("staleness"), "staleness");
    const std::string kind = s.choice("kind", "zero", {"zero", "gaussian", "fixed", "empirical"});
    json sj = {{"kind", kind}};
    if (kind == "gaussian") {
      sj["mean"] = s.number("mean", std::nullopt);
      sj["sigma"] = s.nonnegative("sigma", std::nullopt);
    } else if (kind == "fixed") {
      sj["tau"] = s.integer("tau", std::nullopt, 0, 1000000);
    } else if (kind == "empirical") {
      const json* wts = s.get("weights");
      if (!wts || !wts->is_array() || wts->empty()) fail(s.path("weights"), "must be a non-empty array");
      double sum = 0.0;
      for (std::size_t i = 0; i < wts->size(); ++i) {
        const json& e = (*wts)[i];
        if (!e.is_number() || !(e.get<double>() >= 0.0)) {
          fail(s.path("weights") + "[" + std::to_string(i) + "]", "must be a nonnegative number");
        }
        sum += e.get<double>();
      }
      if (!(sum > 0.0)) fail(s.path("weights"), "must have a positive sum");
      sj["weights"] = *wts;
    }
    s.done();
    out["staleness"] = sj;
  }

  {
    Fields d(top.object("dampening"), "dampening");
    const std::string kind = d.choice("kind", "inverse", {"constant", "inverse", "exponential"});
    json dj = {{"kind", kind}};
    if (kind == "exponential") {
      dj["alpha"] = d.positive("alpha", std::nullopt);
      dj["beta"] = d.positive("beta", 1.0);
    }
    dj["tau_max"] = d.integer("tau_max", 10000, 1);
    d.done();
    out["dampening"] = dj;
  }

  {
    Fields l(top.object("lr"), "lr");
    const std::string mode = l.choice("mode", "fixed_base", {"fixed_base", "eq2_base"});
    json lj = {{"mode", mode}};
    lj["gamma"] = mode == "fixed_base" ? l.positive("gamma", std::nullopt) : l.positive("gamma", 1.0);
    lj["adaptive"] = l.boolean("adaptive", true);
    const auto K = l.optional_positive("K");
    lj["K"] = K ? json(*K) : json(nullptr);
    lj["q_opt"] = l.nonnegative("q_opt", 0.0);
    lj["variance_trials"] = l.integer("variance_trials", 100, 2, 100000000);
    l.done();
    out["lr"] = lj;
  }

  {
    Fields fl(top.object("filter"), "filter");
    json fj;
    fj["enabled"] = fl.boolean("enabled", true);
    fj["lipschitz"] = fl.boolean("lipschitz", true);
    fj["frequency"] = fl.boolean("frequency", true);
    fj["reference"] = fl.choice("reference", "latest_delivered", {"latest_delivered", "worker_history"});
    fj["warmup_epochs"] = fl.integer("warmup_epochs", 0, 0);
    fj["require_resilience"] = fl.boolean("require_resilience", true);
    fl.done();
    if (fj["enabled"].get<bool>() && fj["require_resilience"].get<bool>() && !(n > 3 * f + 1)) {
      fail("n", "must exceed 3f+1 when the filter is enabled (n = " + std::to_string(n) + ", f = " +
                    std::to_string(f) + ")");
    }
    out["filter"] = fj;
  }

  out["scheduler"] = top.choice("scheduler", "fair", {"fair", "adversarial"});
  {
    const double jitter = top.nonnegative("timing_jitter", 0.1);
    if (!(jitter < 1.0)) fail("timing_jitter", "must be below 1");
    out["timing_jitter"] = jitter;
  }

  {
    Fields in(top.object("init"), "init");
    json ij;
    if (in.has("values")) {
      const json& v = *in.get("values");
      if (!v.is_array()) fail(in.path("values"), "must be an array");
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) fail(in.path("values") + "[" + std::to_string(i) + "]", "must be a number");
      }
      ij["values"] = v;
    } else {
      ij["scale"] = in.nonnegative("scale", 1.0);
    }
    in.done();
    out["init"] = ij;
  }

  const auto tg = top.optional_positive("target_grad_norm");
  out["target_grad_norm"] = tg ? json(*tg) : json(nullptr);
  const auto tl = top.optional_positive("target_loss");
  out["target_loss"] = tl ? json(*tl) : json(nullptr);
  out["divergence_factor"] = top.positive("divergence_factor", 1e6);
  out["max_deliveries"] = top.integer("max_deliveries", 0, 0);
  out["stall_limit"] = top.integer("stall_limit", 0, 0);
  top.get("variants");  // handled by the caller
  top.done();
  return out;
}

}  // namespace

json normalize_config(const json& raw) {
  if (!raw.is_object()) fail("", "config must be a JSON object");
  json base = raw;
  base.erase("variants");
  json out = normalize_single(base);
  if (raw.contains("variants") && !raw.at("variants").is_null()) {
    const json& vs = raw.at("variants");
    if (!vs.is_array() || vs.empty()) fail("variants", "must be a non-empty array");
    json nv = json::array();
    std::set<std::string> names;
    for (std::size_t i = 0; i < vs.size(); ++i) {
      const std::string p = "variants[" + std::to_string(i) + "]";
      const json& v = vs[i];
      if (!v.is_object()) fail(p, "must be an object");
      if (!v.contains("name") || !v.at("name").is_string() || v.at("name").get<std::string>().empty()) {
        fail(p + ".name", "is required");
      }
      const std::string name = v.at("name").get<std::string>();
      if (name.find_first_of("/\\") != std::string::npos || name == "." || name == "..") {
        fail(p + ".name", "must be a plain directory name");
      }
      if (!names.insert(name).second) fail(p + ".name", "duplicate variant name \"" + name + "\"");
      if (v.contains("variants")) fail(p + ".variants", "variants cannot be nested");
      json patched = base;
      json patch = v;
      patch.erase("name");
      patched.merge_patch(patch);
      try {
        normalize_single(patched);
      } catch (const ConfigError& e) {
        fail(p, e.what());
      }
      nv.push_back(v);
    }
    out["variants"] = nv;
  }
  return out;
}

SimulationConfig build_simulation(const json& c) {
  SimulationConfig s;
  s.n = c.at("n").get<int>();
  s.f = c.at("f").get<int>();
  s.M = c.at("M").get<int>();
  s.T = c.at("T").get<std::int64_t>();
  s.seed = c.at("seed").get<std::uint64_t>();

  const json& cj = c.at("cost");
  const std::string kind = cj.at("kind").get<std::string>();
  if (kind == "quadratic_bowl") {
    s.cost = std::make_shared<const CostFunction>(
        QuadraticBowl{cj.at("center").get<Vector>(), cj.at("curvature").get<Vector>()});
  } else {
    const json& dj = c.at("dataset");
    BlobSpec blob;
    blob.dim = dj.at("dim").get<std::size_t>();
    blob.samples = dj.at("samples").get<std::size_t>();
    blob.separation = dj.at("separation").get<double>();
    blob.seed = dj.at("seed").get<std::uint64_t>();
    auto data = std::make_shared<const Dataset>(make_blobs(blob));
    if (kind == "logistic_regression") {
      s.cost = std::make_shared<const CostFunction>(LogisticRegression{data, cj.at("l2").get<double>()});
    } else {
      s.cost = std::make_shared<const CostFunction>(TinyMlp{data, cj.at("hidden").get<std::size_t>()});
    }
  }

  int id = 0;
  for (const json& g : c.at("workers")) {
    const Behavior b = build_behavior(g.at("behavior"));
    for (std::int64_t k = 0; k < g.at("count").get<std::int64_t>(); ++k) {
      s.workers.push_back(WorkerSpec{id++, b, g.at("batch_size").get<std::size_t>()});
    }
  }

  const json& sj = c.at("staleness");
  const std::string sk = sj.at("kind").get<std::string>();
  if (sk == "gaussian") {
    s.staleness = StalenessModel::gaussian(sj.at("mean").get<double>(), sj.at("sigma").get<double>());
  } else if (sk == "fixed") {
    s.staleness = StalenessModel::fixed(sj.at("tau").get<std::int64_t>());
  } else if (sk == "empirical") {
    s.staleness = StalenessModel::empirical(sj.at("weights").get<std::vector<double>>());
  } else {
    s.staleness = StalenessModel::zero();
  }

  const json& dj = c.at("dampening");
  const std::string dk = dj.at("kind").get<std::string>();
  if (dk == "constant") {
    s.dampening = DampeningSpec::constant();
  } else if (dk == "exponential") {
    s.dampening = DampeningSpec::exponential(dj.at("alpha").get<double>(), dj.at("beta").get<double>());
  } else {
    s.dampening = DampeningSpec::inverse();
  }
  s.dampening.tau_max = dj.at("tau_max").get<std::int64_t>();

  const json& lj = c.at("lr");
  s.lr.base_gamma = lj.at("gamma").get<double>();
  s.lr.mode = lj.at("mode") == "eq2_base" ? LearningRateSchedule::Mode::kEq2Base : LearningRateSchedule::Mode::kFixedBase;
  s.lr.adaptive = lj.at("adaptive").get<bool>();
  if (!lj.at("K").is_null()) s.lipschitz_K = lj.at("K").get<double>();
  s.q_opt = lj.at("q_opt").get<double>();
  s.variance_trials = lj.at("variance_trials").get<std::int64_t>();

  const json& fj = c.at("filter");
  s.filter_enabled = fj.at("enabled").get<bool>();
  s.filter.lipschitz = fj.at("lipschitz").get<bool>();
  s.filter.frequency = fj.at("frequency").get<bool>();
  s.filter.reference =
      fj.at("reference") == "worker_history" ? ReferenceMode::kWorkerHistory : ReferenceMode::kLatestDelivered;
  s.warmup_epochs = fj.at("warmup_epochs").get<std::int64_t>();
  s.require_resilience = fj.at("require_resilience").get<bool>();

  s.scheduler = c.at("scheduler") == "adversarial" ? Scheduler::kAdversarial : Scheduler::kFair;
  s.timing_jitter = c.at("timing_jitter").get<double>();
  const json& ij = c.at("init");
  if (ij.contains("values")) {
    s.init = ij.at("values").get<Vector>();
  } else {
    s.init_scale = ij.at("scale").get<double>();
  }
  if (!c.at("target_grad_norm").is_null()) s.target_grad_norm = c.at("target_grad_norm").get<double>();
  if (!c.at("target_loss").is_null()) s.target_loss = c.at("target_loss").get<double>();
  s.divergence_factor = c.at("divergence_factor").get<double>();
  s.max_deliveries = c.at("max_deliveries").get<std::int64_t>();
  s.stall_limit = c.at("stall_limit").get<std::int64_t>();
  validate(s);
  return s;
}

ExperimentConfig parse_config(const json& raw) {
  ExperimentConfig ec;
  ec.base = normalize_config(raw);
  ec.name = ec.base.at("name").get<std::string>();
  json single = ec.base;
  single.erase("variants");
  json raw_base = raw;
  raw_base.erase("variants");
  if (!ec.base.contains("variants")) {
    ExperimentVariant v{"main", single, build_simulation(single), single.at("replicates").get<std::int64_t>()};
    ec.variants.push_back(std::move(v));
    return ec;
  }
  ec.has_variants = true;
  for (const json& raw_variant : ec.base.at("variants")) {
    json patch = raw_variant;
    const std::string name = patch.at("name").get<std::string>();
    patch.erase("name");
    json merged = raw_base;
    merged.merge_patch(patch);
    json normalized = normalize_single(merged);
    ExperimentVariant v{name, normalized, build_simulation(normalized), normalized.at("replicates").get<std::int64_t>()};
    ec.variants.push_back(std::move(v));
  }
  return ec;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json raw;
  try {
    raw = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("parse error: ") + e.what());
  }
  return parse_config(raw);
}

}  // namespace kardam
