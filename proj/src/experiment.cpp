#include "streamfed/experiment.hpp"

#include "streamfed/error.hpp"
#include "streamfed/io.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace streamfed {
namespace {

using nlohmann::json;

// Reads one JSON object, remembering which keys were consumed so that
// leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) fail("", "expected an object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    if (!obj_.contains(key)) fail(key, "missing required field");
    return obj_.at(key);
  }

  template <typename T>
  T get(const std::string& key) {
    const json& v = raw(key);
    try {
      return v.get<T>();
    } catch (const json::exception&) {
      fail(key, "has the wrong type");
    }
  }

  template <typename T>
  T get_or(const std::string& key, T fallback) {
    if (!has(key)) {
      seen_.insert(key);
      return fallback;
    }
    return get<T>(key);
  }

  std::string child(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      (void)value;
      if (!seen_.count(key)) fail(key, "unknown field");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw InvalidArgument("config " + (key.empty() ? path_ : child(key)) + ": " + what);
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

CountingProcessSpec parse_process(const json& doc, const std::string& path) {
  ObjectReader r(doc, path);
  const auto kind = r.get<std::string>("kind");
  CountingProcessSpec spec;
  try {
    if (kind == "ConstantRate") {
      spec = CountingProcessSpec::constant_rate(r.get<int>("batch"));
    } else if (kind == "SinglePulse") {
      spec = CountingProcessSpec::single_pulse(r.get<int>("size"));
    } else if (kind == "Poisson") {
      spec = CountingProcessSpec::poisson(r.get<double>("rate"), r.get_or<int>("min_batch", 1));
    } else if (kind == "Schedule") {
      spec = CountingProcessSpec::scheduled(r.get<std::vector<int>>("sizes"));
    } else {
      r.fail("kind", "unknown arrival process '" + kind + "'");
    }
  } catch (const InvalidArgument& e) {
    if (std::string(e.what()).rfind("config ", 0) == 0) throw;
    throw InvalidArgument("config " + path + ": " + e.what());
  }
  r.finish();
  return spec;
}

ScenarioConfig parse_scenario(const json& doc) {
  ObjectReader r(doc, "scenario");
  ScenarioConfig s;
  const auto kind = r.get<std::string>("kind");
  if (kind == "HistoricalFresh") {
    s.kind = ScenarioConfig::Kind::HistoricalFresh;
    s.M = r.get<int>("M");
    s.M_hist = r.get<int>("M_hist");
    s.N = r.get_or<int>("N", 0);
    s.N_hist_over_N = r.get_or<double>("N_hist_over_N", 0.0);
    s.fresh_rates = r.get<std::vector<int>>("fresh_rates");
    if (s.M < 2) r.fail("M", "must be >= 2");
    if (s.M_hist < 1 || s.M_hist >= s.M) r.fail("M_hist", "must satisfy 1 <= M_hist < M");
    const auto fresh = static_cast<std::size_t>(s.M - s.M_hist);
    if (s.fresh_rates.size() != 1 && s.fresh_rates.size() != fresh) {
      r.fail("fresh_rates", "needs one entry or one per fresh client");
    }
    for (int b : s.fresh_rates) {
      if (b < 1) r.fail("fresh_rates", "rates must be >= 1");
    }
    if (s.fresh_rates.size() == 1) s.fresh_rates.assign(fresh, s.fresh_rates.front());
  } else if (kind == "Custom") {
    s.kind = ScenarioConfig::Kind::Custom;
    const json& list = r.raw("clients");
    if (!list.is_array() || list.empty()) r.fail("clients", "must be a nonempty array");
    bool fresh_seen = false;
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string path = "scenario.clients[" + std::to_string(i) + "]";
      ObjectReader c(list[i], path);
      ScenarioConfig::ClientSpec spec;
      spec.process = parse_process(c.raw("process"), path + ".process");
      try {
        spec.rule = memory_rule_from_string(c.get<std::string>("rule"));
      } catch (const InvalidArgument& e) {
        c.fail("rule", e.what());
      }
      spec.capacity = c.get<int>("capacity");
      spec.samples = c.get_or<int>("samples", 0);
      spec.historical = c.get_or<bool>("historical", false);
      if (spec.capacity < 1) c.fail("capacity", "must be >= 1");
      if (spec.historical && fresh_seen) {
        c.fail("historical", "historical clients must be listed first");
      }
      fresh_seen = fresh_seen || !spec.historical;
      c.finish();
      s.clients.push_back(spec);
    }
    s.M = static_cast<int>(s.clients.size());
    s.M_hist = static_cast<int>(std::count_if(s.clients.begin(), s.clients.end(),
                                              [](const auto& c) { return c.historical; }));
  } else {
    r.fail("kind", "unknown scenario '" + kind + "'");
  }
  r.finish();
  return s;
}

DatasetConfig parse_dataset(const json& doc) {
  ObjectReader r(doc, "dataset");
  DatasetConfig d;
  const auto kind = r.get<std::string>("kind");
  if (kind == "synthetic") {
    d.kind = DatasetConfig::Kind::Synthetic;
    d.d = r.get_or<int>("d", 21);
    d.epsilon = r.get_or<double>("epsilon", 0.1);
    if (d.d < 2) r.fail("d", "must be >= 2");
    if (!(d.epsilon >= 0.0)) r.fail("epsilon", "must be >= 0");
  } else if (kind == "csv") {
    d.kind = DatasetConfig::Kind::Csv;
    d.path = r.get<std::string>("path");
    const auto loss = r.get_or<std::string>("loss", "logistic");
    if (loss == "logistic") {
      d.loss = LossKind::Logistic;
    } else if (loss == "squared") {
      d.loss = LossKind::Squared;
    } else {
      r.fail("loss", "must be 'logistic' or 'squared'");
    }
  } else {
    r.fail("kind", "must be 'synthetic' or 'csv'");
  }
  r.finish();
  return d;
}

std::string run_dir_name(const Strategy& s) {
  std::string name = s.name();
  for (char& ch : name) {
    if (ch == '(' || ch == ')') ch = '_';
  }
  while (!name.empty() && name.back() == '_') name.pop_back();
  return name;
}

std::vector<Example> draw_mixture(const std::vector<Vector>& thetas,
                                  const ImportanceVector& weights, std::size_t count,
                                  Rng rng) {
  std::discrete_distribution<int> pick(weights.values().begin(), weights.values().end());
  std::vector<Example> out(count);
  std::int64_t index = 1;
  for (auto& z : out) {
    const int m = pick(rng);
    draw_synthetic_sample(thetas[static_cast<std::size_t>(m)], rng, z);
    z.client_id = m;
    z.global_index = index++;
  }
  return out;
}

std::vector<int> split_counts(int total, int parts) {
  std::vector<int> counts(static_cast<std::size_t>(parts), total / parts);
  for (int i = 0; i < total % parts; ++i) ++counts[static_cast<std::size_t>(i)];
  return counts;
}

EvalMetrics metrics_for(const LossSpec& loss) {
  return loss.kind == LossKind::Logistic ? EvalMetrics::LossAndAccuracy
                                         : EvalMetrics::LossOnly;
}

// Higher is better: accuracy for classification, negative loss otherwise.
double score(const SubRunResult& r) {
  if (r.final_test_acc) return *r.final_test_acc;
  return -r.final_test_loss;
}

template <typename Job>
void run_pool(std::size_t jobs, Job job) {
  const std::size_t workers =
      std::min<std::size_t>(jobs, static_cast<std::size_t>(worker_threads()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < jobs; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < jobs; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::string format_optional(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << "round,train_loss,test_loss,test_acc,sigma_hat_sq_partial,q_t\n";
  for (const auto& r : rows) {
    out << r.round << ',' << format_double(r.train_loss) << ','
        << format_double(r.test_loss) << ',' << format_optional(r.test_acc) << ','
        << format_double(r.sigma_hat_sq_partial) << ',' << format_double(r.q_t) << '\n';
  }
}

nlohmann::ordered_json stats_json(const std::vector<double>& values) {
  const auto [mean, ci] = mean_ci95(values);
  nlohmann::ordered_json j;
  j["values"] = values;
  j["mean"] = mean;
  j["ci95"] = ci;
  return j;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::vector<double> default_eta_grid() {
  return {std::pow(10.0, -3.5), 1e-3, std::pow(10.0, -2.5), 1e-2,
          std::pow(10.0, -1.5), 1e-1};
}

ExperimentConfig parse_experiment_config(const json& doc) {
  ObjectReader r(doc, "config");
  ExperimentConfig cfg;
  cfg.source = doc;
  cfg.scenario = parse_scenario(r.raw("scenario"));
  cfg.dataset = parse_dataset(r.raw("dataset"));

  const json& strategies = r.raw("strategies");
  if (!strategies.is_array() || strategies.empty()) {
    r.fail("strategies", "must be a nonempty array");
  }
  for (const auto& s : strategies) {
    if (!s.is_string()) r.fail("strategies", "entries must be strings");
    try {
      cfg.strategies.push_back(Strategy::parse(s.get<std::string>()));
    } catch (const InvalidArgument& e) {
      r.fail("strategies", e.what());
    }
  }

  {
    ObjectReader t(r.raw("train"), "train");
    cfg.train.rounds = t.get<int>("rounds");
    cfg.train.local_epochs = t.get_or<int>("local_epochs", 1);
    cfg.train.minibatch = t.get_or<int>("minibatch", 1);
    cfg.train.participation = t.get_or<double>("participation", 1.0);
    const json& eta = t.raw("eta");
    if (eta.is_string() && eta.get<std::string>() == "tune") {
      cfg.tune_eta = true;
    } else if (eta.is_number()) {
      cfg.train.eta = eta.get<double>();
    } else {
      t.fail("eta", "must be a number or \"tune\"");
    }
    cfg.eta_grid = t.get_or<std::vector<double>>("eta_grid", default_eta_grid());
    t.finish();
    try {
      cfg.train.validate();
    } catch (const InvalidArgument& e) {
      t.fail("", e.what());
    }
    if (cfg.eta_grid.empty()) t.fail("eta_grid", "must be nonempty");
    for (double e : cfg.eta_grid) {
      if (!(e > 0.0)) t.fail("eta_grid", "entries must be positive");
    }
  }

  if (r.has("eval")) {
    ObjectReader e(r.raw("eval"), "eval");
    cfg.eval.mc_size = e.get_or<std::size_t>("mc_size", cfg.eval.mc_size);
    cfg.eval.test_fraction = e.get_or<double>("test_fraction", cfg.eval.test_fraction);
    cfg.eval.validation_fraction =
        e.get_or<double>("validation_fraction", cfg.eval.validation_fraction);
    e.finish();
    if (cfg.eval.mc_size == 0) e.fail("mc_size", "must be positive");
    if (!(cfg.eval.test_fraction > 0.0) || !(cfg.eval.validation_fraction > 0.0) ||
        cfg.eval.test_fraction + cfg.eval.validation_fraction >= 1.0) {
      e.fail("test_fraction", "holdout fractions must be positive and sum below 1");
    }
  } else {
    r.raw("eval");
  }

  if (r.has("warmup")) {
    ObjectReader w(r.raw("warmup"), "warmup");
    cfg.warmup.steps = w.get_or<int>("steps", cfg.warmup.steps);
    cfg.warmup.eta = w.get_or<double>("eta", cfg.warmup.eta);
    cfg.warmup.minibatch = w.get_or<int>("minibatch", cfg.warmup.minibatch);
    w.finish();
    if (cfg.warmup.steps < 1) w.fail("steps", "must be >= 1");
    if (!(cfg.warmup.eta > 0.0)) w.fail("eta", "must be positive");
    if (cfg.warmup.minibatch < 1) w.fail("minibatch", "must be >= 1");
  } else {
    r.raw("warmup");
  }

  cfg.radius = r.get_or<double>("radius", cfg.radius);
  if (!(cfg.radius > 0.0)) r.fail("radius", "must be positive");
  cfg.output_dir = r.get<std::string>("output_dir");
  cfg.seeds = r.get<std::vector<std::uint64_t>>("seeds");
  if (cfg.seeds.empty()) r.fail("seeds", "must be nonempty");
  cfg.optimal_sweep = r.get_or<bool>("optimal_sweep", false);
  cfg.sigma_probe_points = r.get_or<int>("sigma_probe_points", 0);
  if (cfg.sigma_probe_points < 0) r.fail("sigma_probe_points", "must be >= 0");
  r.finish();

  if (cfg.scenario.kind == ScenarioConfig::Kind::HistoricalFresh &&
      cfg.dataset.kind == DatasetConfig::Kind::Synthetic) {
    const auto& s = cfg.scenario;
    if (s.N < s.M) throw InvalidArgument("config scenario.N: must be >= M");
    if (!(s.N_hist_over_N > 0.0 && s.N_hist_over_N < 1.0)) {
      throw InvalidArgument("config scenario.N_hist_over_N: must lie in (0, 1)");
    }
    const auto N_hist = static_cast<int>(std::lround(s.N_hist_over_N * s.N));
    if (N_hist < s.M_hist) {
      throw InvalidArgument("config scenario.N_hist_over_N: fewer historical samples (" +
                            std::to_string(N_hist) + ") than historical clients");
    }
    const int fresh = cfg.train.rounds *
                      std::accumulate(s.fresh_rates.begin(), s.fresh_rates.end(), 0);
    if (fresh != s.N - N_hist) {
      throw InvalidArgument("config scenario.N: fresh clients receive rounds * sum(fresh_rates) = " +
                            std::to_string(fresh) + " samples but N - N_hist = " +
                            std::to_string(s.N - N_hist));
    }
  }
  if (cfg.scenario.kind == ScenarioConfig::Kind::Custom &&
      cfg.dataset.kind == DatasetConfig::Kind::Synthetic) {
    for (std::size_t i = 0; i < cfg.scenario.clients.size(); ++i) {
      if (cfg.scenario.clients[i].samples < 1) {
        throw InvalidArgument("config scenario.clients[" + std::to_string(i) +
                              "].samples: synthetic clients need samples >= 1");
      }
    }
  }
  for (const auto& s : cfg.strategies) {
    if (s.kind == StrategyKind::FixedPHist || s.kind == StrategyKind::Ours ||
        s.kind == StrategyKind::Historical || s.kind == StrategyKind::Fresh) {
      if (cfg.scenario.M_hist < 1 || cfg.scenario.M_hist >= cfg.scenario.M) {
        throw InvalidArgument("config strategies: " + s.name() +
                              " needs both historical and fresh clients");
      }
    }
  }
  if (cfg.optimal_sweep && (cfg.scenario.M_hist < 1 || cfg.scenario.M_hist >= cfg.scenario.M)) {
    throw InvalidArgument("config optimal_sweep: needs both historical and fresh clients");
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw InvalidArgument("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_experiment_config(doc);
}

PreparedData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed,
                          DataPurpose purpose) {
  const auto& sc = cfg.scenario;
  PreparedData data;
  data.seed = seed;
  data.M_hist = sc.M_hist;
  const int T = cfg.train.rounds;

  std::vector<std::vector<Example>> pools(static_cast<std::size_t>(sc.M));
  if (cfg.dataset.kind == DatasetConfig::Kind::Synthetic) {
    SyntheticSpec spec;
    spec.d = cfg.dataset.d;
    spec.M = sc.M;
    spec.epsilon = cfg.dataset.epsilon;
    spec.seed = seed;
    if (sc.kind == ScenarioConfig::Kind::HistoricalFresh) {
      const auto N_hist = static_cast<int>(std::lround(sc.N_hist_over_N * sc.N));
      spec.per_client_counts = split_counts(N_hist, sc.M_hist);
      for (int b : sc.fresh_rates) spec.per_client_counts.push_back(b * T);
    } else {
      for (const auto& c : sc.clients) spec.per_client_counts.push_back(c.samples);
    }
    auto synth = generate_synthetic(spec);
    pools = std::move(synth.clients);
    std::vector<double> counts;
    for (const auto& p : pools) counts.push_back(static_cast<double>(p.size()));
    const auto mix = ImportanceVector::normalized(counts);
    const std::uint64_t set_id = purpose == DataPurpose::Tuning ? 1 : 2;
    data.eval = draw_mixture(synth.client_thetas, mix, cfg.eval.mc_size,
                             make_rng(seed, StreamPurpose::Evaluation, 0, set_id));
    const double reach = cfg.radius;
    data.domain = Domain::ball(spec.d, reach);
    // Features lie in [−1,1]^{d−1} × {1}.
    data.loss = LossSpec::logistic(data.domain, std::sqrt(static_cast<double>(spec.d)));
  } else {
    auto corpus = load_csv_corpus(cfg.dataset.path);
    if (static_cast<int>(corpus.size()) != sc.M || corpus.rbegin()->first != sc.M - 1 ||
        corpus.begin()->first != 0) {
      throw InvalidArgument("config dataset.path: expected client ids 0.." +
                            std::to_string(sc.M - 1));
    }
    std::vector<Example> all;
    std::vector<Example> validation;
    std::vector<Example> test;
    for (auto& [m, rows] : corpus) {
      const auto n = rows.size();
      const auto n_test = static_cast<std::size_t>(std::floor(cfg.eval.test_fraction * n));
      const auto n_val =
          static_cast<std::size_t>(std::floor(cfg.eval.validation_fraction * n));
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
      auto rng = make_rng(seed, StreamPurpose::Evaluation, static_cast<std::uint64_t>(m), 0);
      std::shuffle(order.begin(), order.end(), rng);
      std::vector<int> role(n, 0);  // 0 train, 1 validation, 2 test
      for (std::size_t i = 0; i < n_test; ++i) role[order[i]] = 2;
      for (std::size_t i = n_test; i < n_test + n_val; ++i) role[order[i]] = 1;
      auto& pool = pools[static_cast<std::size_t>(m)];
      for (std::size_t i = 0; i < n; ++i) {
        all.push_back(rows[i]);
        if (role[i] == 2) {
          test.push_back(rows[i]);
        } else if (role[i] == 1) {
          validation.push_back(rows[i]);
          if (purpose == DataPurpose::Final) pool.push_back(rows[i]);
        } else {
          pool.push_back(rows[i]);
        }
      }
      for (std::size_t i = 0; i < pool.size(); ++i) {
        pool[i].global_index = static_cast<std::int64_t>(i + 1);
      }
    }
    data.eval = purpose == DataPurpose::Tuning ? validation : test;
    if (data.eval.empty()) throw InvalidArgument("config eval: holdout set is empty");
    const auto d = all.front().features.size();
    data.domain = Domain::ball(d, cfg.radius);
    const double maxnorm = max_feature_norm(all);
    if (cfg.dataset.loss == LossKind::Logistic) {
      data.loss = LossSpec::logistic(data.domain, maxnorm);
    } else {
      double maxlabel = 0.0;
      for (const auto& z : all) maxlabel = std::max(maxlabel, std::abs(z.label));
      data.loss = LossSpec::squared(data.domain, maxnorm, maxlabel);
    }
  }

  // Arrival processes and memories.
  for (int m = 0; m < sc.M; ++m) {
    auto& pool = pools[static_cast<std::size_t>(m)];
    if (pool.empty()) {
      throw InvalidArgument("client " + std::to_string(m) + " has no training samples");
    }
    ClientPlan plan;
    double occupancy = 0.0;
    if (sc.kind == ScenarioConfig::Kind::HistoricalFresh) {
      if (m < sc.M_hist) {
        const int size = static_cast<int>(pool.size());
        plan = {CountingProcessSpec::single_pulse(size), MemoryRule::KeepAll, size};
        occupancy = size;
      } else {
        int b = sc.fresh_rates[static_cast<std::size_t>(m - sc.M_hist)];
        if (cfg.dataset.kind == DatasetConfig::Kind::Csv) {
          b = static_cast<int>(pool.size()) / T;
          if (b < 1) {
            throw InvalidArgument("client " + std::to_string(m) +
                                  " has fewer training samples than rounds");
          }
          pool.resize(static_cast<std::size_t>(b * T));
        }
        plan = {CountingProcessSpec::constant_rate(b), MemoryRule::FIFO, b};
        occupancy = b;
      }
    } else {
      const auto& c = sc.clients[static_cast<std::size_t>(m)];
      const auto sizes = plan_batch_sizes(c.process, m, T, seed);
      const auto delivered =
          static_cast<std::size_t>(std::accumulate(sizes.begin(), sizes.end(), 0));
      if (pool.size() < delivered) {
        throw InvalidArgument("config scenario.clients[" + std::to_string(m) +
                              "]: arrival process needs " + std::to_string(delivered) +
                              " samples, only " + std::to_string(pool.size()) + " available");
      }
      pool.resize(delivered);
      if (pool.empty()) {
        throw InvalidArgument("config scenario.clients[" + std::to_string(m) +
                              "]: no samples arrive within the horizon");
      }
      plan = {c.process, c.rule, c.capacity};
      occupancy = c.capacity;
    }
    data.clients.push_back(plan);
    data.occupancy.push_back(occupancy);
  }

  std::vector<double> sizes;
  for (auto& pool : pools) {
    sizes.push_back(static_cast<double>(pool.size()));
    data.train.push_back(std::make_shared<const std::vector<Example>>(std::move(pool)));
  }
  data.n = ImportanceVector::normalized(sizes);
  return data;
}

StrategyPlan plan_strategy(const ExperimentConfig& cfg, const PreparedData& data,
                           const Strategy& strategy, double eta) {
  (void)eta;
  const auto M = static_cast<int>(data.n.size());
  StrategyPlan plan;
  switch (strategy.kind) {
    case StrategyKind::Uniform:
      plan.scheme = WeightScheme::inverse_residence();
      plan.target = data.n;
      return plan;
    case StrategyKind::Historical:
    case StrategyKind::Fresh: {
      const bool hist = strategy.kind == StrategyKind::Historical;
      std::vector<double> lambdas(static_cast<std::size_t>(M));
      for (int m = 0; m < M; ++m) {
        lambdas[static_cast<std::size_t>(m)] = ((m < data.M_hist) == hist) ? 1.0 : 0.0;
      }
      plan.scheme = WeightScheme::per_client(std::move(lambdas));
      plan.target = strategy_importance(strategy, data.n, data.M_hist);
      return plan;
    }
    case StrategyKind::FixedPHist:
    case StrategyKind::Ours: {
      ImportanceVector p;
      if (strategy.kind == StrategyKind::Ours) {
        std::vector<std::vector<Example>> hist;
        std::int64_t N = 0;
        for (int m = 0; m < M; ++m) {
          const auto& pool = *data.train[static_cast<std::size_t>(m)];
          N += static_cast<std::int64_t>(pool.size());
          if (m < data.M_hist) hist.push_back(pool);
        }
        WarmupConfig warm = cfg.warmup;
        warm.seed = data.seed;
        const auto k = estimate_constants(hist, data.loss, data.domain,
                                          Vector::Zero(data.domain.dim()), warm, N, M);
        const double ratio = estimate_c_ratio(k);
        BoundCoefficients c{0.0, 1.0, ratio, data.n, data.M_hist};
        p = strategy_importance(strategy, data.n, data.M_hist, c);
        plan.c_ratio = ratio;
      } else {
        p = strategy_importance(strategy, data.n, data.M_hist);
      }
      plan.scheme = WeightScheme::per_client(importance_to_client_weights(p, data.occupancy));
      plan.target = p;
      return plan;
    }
  }
  throw InvalidArgument("unknown strategy");
}

SubRunResult run_strategy(const ExperimentConfig& cfg, const PreparedData& data,
                          const Strategy& strategy, double eta) {
  const auto plan = plan_strategy(cfg, data, strategy, eta);
  std::vector<ClientSetup> clients;
  for (std::size_t m = 0; m < data.clients.size(); ++m) {
    const auto& c = data.clients[m];
    clients.push_back(ClientSetup{
        ClientStream(static_cast<int>(m), c.process, data.train[m], data.seed), c.rule,
        c.capacity});
  }
  TrainConfig tc = cfg.train;
  tc.eta = eta;
  tc.seed = data.seed;
  const Vector init = Vector::Zero(data.domain.dim());
  auto res = run(std::move(clients), plan.scheme, data.domain, data.loss, tc, init);

  SubRunResult out;
  out.strategy = strategy;
  out.seed = data.seed;
  out.eta = eta;
  out.c_ratio = plan.c_ratio;

  const auto q = round_mass_share(res.trace);
  const auto importance = sample_importance(res.trace);
  const auto sigma = estimate_sigma_bar_sq(res.trace, res.iterates, res.samples, data.loss,
                                           data.domain, cfg.sigma_probe_points, data.seed);
  out.sigma_hat_sq = sigma.at_iterates;
  out.sigma_hat_sq_probes = sigma.with_probes;
  out.n_eff = effective_sample_size(importance);
  out.p_hist = importance.client_totals().sum_range(0, static_cast<std::size_t>(data.M_hist));

  const auto metrics = metrics_for(data.loss);
  Vector running = Vector::Zero(data.domain.dim());
  double mass = 0.0;
  double sigma_partial = 0.0;
  for (std::size_t t = 0; t < q.size(); ++t) {
    running += q[t] * res.iterates[t];
    mass += q[t];
    sigma_partial += sigma.per_round[t];
    const Vector model = t + 1 == q.size() ? res.averaged_model : Vector(running / mass);
    const auto ev = evaluate(data.loss, model, data.eval, metrics);
    MetricsRow row;
    row.round = static_cast<int>(t + 1);
    row.train_loss = weighted_empirical_risk(data.loss, model, importance, res.samples);
    row.test_loss = ev.mean_loss;
    row.test_acc = ev.accuracy;
    row.sigma_hat_sq_partial = sigma_partial;
    row.q_t = q[t];
    out.metrics.push_back(row);
  }
  out.final_test_loss = out.metrics.back().test_loss;
  out.final_test_acc = out.metrics.back().test_acc;
  out.trace = std::move(res.trace);
  return out;
}

double tune_learning_rate(const ExperimentConfig& cfg, const Strategy& strategy) {
  std::vector<PreparedData> prepared;
  for (auto seed : cfg.seeds) prepared.push_back(prepare_data(cfg, seed, DataPurpose::Tuning));
  const auto& grid = cfg.eta_grid;
  std::vector<double> scores(grid.size() * prepared.size(),
                             -std::numeric_limits<double>::infinity());
  run_pool(scores.size(), [&](std::size_t job) {
    const std::size_t g = job / prepared.size();
    const std::size_t s = job % prepared.size();
    try {
      scores[job] = score(run_strategy(cfg, prepared[s], strategy, grid[g]));
    } catch (const NumericError&) {
      // Diverged: keeps −∞.
    }
  });
  double best_eta = grid.front();
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double total = 0.0;
    for (std::size_t s = 0; s < prepared.size(); ++s) total += scores[g * prepared.size() + s];
    const double mean = total / static_cast<double>(prepared.size());
    if (mean > best) {
      best = mean;
      best_eta = grid[g];
    }
  }
  if (!std::isfinite(best)) {
    throw NumericError("learning-rate tuning: every grid value diverged for " +
                       strategy.name());
  }
  return best_eta;
}

std::pair<double, double> mean_ci95(const std::vector<double>& values) {
  if (values.empty()) throw InvalidArgument("mean_ci95: no values");
  const double mean = mean_of(values);
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double n = static_cast<double>(values.size());
  const double sd = std::sqrt(ss / (n - 1.0));
  const boost::math::students_t dist(n - 1.0);
  const double t = boost::math::quantile(boost::math::complement(dist, 0.025));
  return {mean, t * sd / std::sqrt(n)};
}

nlohmann::ordered_json run_experiment(const ExperimentConfig& cfg) {
  std::vector<Strategy> strategies = cfg.strategies;
  const std::vector<double> sweep{0.0, 0.2, 0.5, 0.8, 1.0};
  if (cfg.optimal_sweep) {
    for (double h : sweep) {
      const auto s = Strategy::fixed(h);
      const bool present = std::any_of(strategies.begin(), strategies.end(), [&](const auto& x) {
        return x.kind == s.kind && x.p_hist == s.p_hist;
      });
      if (!present) strategies.push_back(s);
    }
  }

  std::vector<double> etas(strategies.size(), cfg.train.eta);
  if (cfg.tune_eta) {
    for (std::size_t i = 0; i < strategies.size(); ++i) {
      etas[i] = tune_learning_rate(cfg, strategies[i]);
    }
  }

  std::vector<PreparedData> prepared;
  for (auto seed : cfg.seeds) prepared.push_back(prepare_data(cfg, seed, DataPurpose::Final));

  const std::size_t S = cfg.seeds.size();
  std::vector<SubRunResult> results(strategies.size() * S);
  run_pool(results.size(), [&](std::size_t job) {
    const std::size_t i = job / S;
    results[job] = run_strategy(cfg, prepared[job % S], strategies[i], etas[i]);
  });

  const bool classification = prepared.front().loss.kind == LossKind::Logistic;
  nlohmann::ordered_json summary;
  summary["metric"] = classification ? "test_acc" : "test_loss";
  summary["rounds"] = cfg.train.rounds;
  summary["seeds"] = cfg.seeds;
  summary["N_hist_over_N"] =
      prepared.front().n.sum_range(0, static_cast<std::size_t>(prepared.front().M_hist));

  for (std::size_t i = 0; i < strategies.size(); ++i) {
    const auto dir = cfg.output_dir / run_dir_name(strategies[i]);
    std::vector<double> finals, losses, neff, sig, phist, ratios;
    for (std::size_t s = 0; s < S; ++s) {
      const auto& r = results[i * S + s];
      const auto sub = dir / ("seed_" + std::to_string(r.seed));
      std::ostringstream metrics;
      write_metrics_csv(metrics, r.metrics);
      write_text_file(sub / "metrics.csv", metrics.str());
      std::ostringstream trace;
      write_trace_csv(trace, r.trace);
      write_text_file(sub / "trace.csv", trace.str());
      finals.push_back(classification ? *r.final_test_acc : r.final_test_loss);
      losses.push_back(r.final_test_loss);
      neff.push_back(r.n_eff);
      sig.push_back(r.sigma_hat_sq);
      phist.push_back(r.p_hist);
      if (r.c_ratio) ratios.push_back(*r.c_ratio);
    }
    nlohmann::ordered_json entry;
    entry["dir"] = run_dir_name(strategies[i]);
    entry["eta"] = etas[i];
    entry["final"] = stats_json(finals);
    entry["final_test_loss"] = stats_json(losses);
    entry["p_hist"] = stats_json(phist);
    entry["n_eff"] = stats_json(neff);
    entry["sigma_hat_sq"] = stats_json(sig);
    if (!ratios.empty()) entry["c_ratio"] = stats_json(ratios);
    summary["strategies"][strategies[i].name()] = entry;
  }

  // ĉ2/ĉ1 and p̂*_hist are reported whether or not Ours was run.
  const auto& sc = cfg.scenario;
  if (sc.M_hist >= 1 && sc.M_hist < sc.M) {
    std::vector<double> ratios, pstar;
    for (const auto& data : prepared) {
      const auto plan = plan_strategy(cfg, data, {StrategyKind::Ours, 0.0}, cfg.train.eta);
      ratios.push_back(*plan.c_ratio);
      pstar.push_back(plan.target->sum_range(0, static_cast<std::size_t>(data.M_hist)));
    }
    summary["c_ratio"] = stats_json(ratios);
    summary["p_hist_star"] = stats_json(pstar);
  }

  if (cfg.optimal_sweep) {
    std::string best_name;
    double best = -std::numeric_limits<double>::infinity();
    for (double h : sweep) {
      const auto name = Strategy::fixed(h).name();
      const double m = summary["strategies"][name]["final"]["mean"].get<double>();
      const double key = classification ? m : -m;
      if (key > best) {
        best = key;
        best_name = name;
      }
    }
    summary["optimal"] = {{"strategy", best_name},
                          {"final", summary["strategies"][best_name]["final"]}};
  }
  summary["config"] = cfg.source;
  write_text_file(cfg.output_dir / "summary.json", summary.dump(2) + "\n");
  return summary;
}

BoundGridConfig parse_bound_config(const json& doc) {
  ObjectReader r(doc, "bounds");
  BoundGridConfig cfg;
  cfg.ratio_lo = r.get_or<double>("ratio_lo", cfg.ratio_lo);
  cfg.ratio_hi = r.get_or<double>("ratio_hi", cfg.ratio_hi);
  cfg.ratio_points = r.get_or<int>("ratio_points", cfg.ratio_points);
  cfg.hist_fractions = r.get_or<std::vector<double>>("hist_fractions", cfg.hist_fractions);
  cfg.M = r.get_or<int>("M", cfg.M);
  cfg.M_hist = r.get_or<int>("M_hist", cfg.M_hist);
  cfg.output = r.get_or<std::string>("output", cfg.output.string());
  r.finish();
  if (!(cfg.ratio_lo > 0.0) || !(cfg.ratio_hi >= cfg.ratio_lo)) {
    r.fail("ratio_lo", "need 0 < ratio_lo <= ratio_hi");
  }
  if (cfg.ratio_points < 1) r.fail("ratio_points", "must be >= 1");
  if (cfg.hist_fractions.empty()) r.fail("hist_fractions", "must be nonempty");
  for (double f : cfg.hist_fractions) {
    if (!(f > 0.0 && f < 1.0)) r.fail("hist_fractions", "entries must lie in (0, 1)");
  }
  if (cfg.M_hist < 1 || cfg.M_hist >= cfg.M) r.fail("M_hist", "must satisfy 1 <= M_hist < M");
  return cfg;
}

std::vector<BoundCurveRow> run_bound_exploration(const BoundGridConfig& cfg) {
  const auto ratios = log_grid(cfg.ratio_lo, cfg.ratio_hi, cfg.ratio_points);
  std::vector<std::vector<BoundCurveRow>> parts(cfg.hist_fractions.size());
  run_pool(parts.size(), [&](std::size_t i) {
    const std::vector<double> one{cfg.hist_fractions[i]};
    parts[i] = emit_bound_curves(ratios, one, cfg.M, cfg.M_hist);
  });
  std::vector<BoundCurveRow> rows;
  for (auto& p : parts) rows.insert(rows.end(), p.begin(), p.end());
  std::ostringstream csv;
  write_bound_curves(csv, rows);
  write_text_file(cfg.output, csv.str());
  return rows;
}

Vector two_point_minimizer(double w) {
  if (!(w >= 0.0 && w <= 1.0)) throw InvalidArgument("two-point weight must lie in [0, 1]");
  Vector theta(2);
  theta[0] = (1.0 - 3.0 * w) / (1.0 + w);
  theta[1] = 1.0 - 2.0 * w - theta[0];
  return theta;
}

AdversarialResult run_adversarial_check(int T, double eta_scale) {
  if (T < 2 || T % 2 != 0) throw InvalidArgument("adversarial check: T must be even and >= 2");
  if (!(eta_scale > 0.0)) throw InvalidArgument("adversarial check: eta scale must be positive");
  const auto loss = LossSpec::adversarial_two_point();
  const auto domain = Domain::box(Vector::Constant(2, -1.0), Vector::Constant(2, 1.0));

  AdversarialResult out;
  out.T = T;
  out.eta = eta_scale / std::sqrt(static_cast<double>(T));
  std::vector<int> schedule(static_cast<std::size_t>(T), 0);
  schedule[0] = 1;
  schedule[static_cast<std::size_t>(T / 2)] = 1;  // round T/2 + 1
  for (int z1 : {1, 2}) {
    for (int z2 : {1, 2}) {
      auto samples = std::make_shared<std::vector<Example>>(2);
      (*samples)[0].label = z1;
      (*samples)[1].label = z2;
      std::vector<ClientSetup> clients;
      clients.push_back(ClientSetup{
          ClientStream(0, CountingProcessSpec::scheduled(schedule), samples, 0),
          MemoryRule::FIFO, 1});
      TrainConfig tc;
      tc.rounds = T;
      tc.local_epochs = 1;
      tc.minibatch = 1;
      tc.eta = out.eta;
      auto res = run(std::move(clients), WeightScheme::unit(), domain, loss, tc,
                     Vector::Zero(2));

      AdversarialCase c;
      c.z1 = z1;
      c.z2 = z2;
      const auto q = round_mass_share(res.trace);
      c.q = std::accumulate(q.begin(), q.begin() + T / 2, 0.0);
      const double w1 = (z1 == 1 ? c.q : 0.0) + (z2 == 1 ? 1.0 - c.q : 0.0);
      c.theta_star = two_point_minimizer(w1);
      c.theta_bar = res.averaged_model;
      const auto importance = sample_importance(res.trace);
      c.eps_opt = weighted_empirical_risk(loss, c.theta_bar, importance, res.samples) -
                  weighted_empirical_risk(loss, c.theta_star, importance, res.samples);
      c.sigma_hat_sq =
          estimate_sigma_bar_sq(res.trace, res.iterates, res.samples, loss, domain).at_iterates;
      out.eps_opt += 0.25 * c.eps_opt;
      out.sigma_hat_sq += 0.25 * c.sigma_hat_sq;
      out.cases.push_back(std::move(c));
    }
  }
  out.holds = out.eps_opt >= 0.15 * out.sigma_hat_sq;
  return out;
}

std::vector<std::string> verify_run_dir(const std::filesystem::path& dir) {
  std::ifstream in(dir / "summary.json");
  if (!in) throw InvalidArgument("cannot open " + (dir / "summary.json").string());
  json summary;
  try {
    in >> summary;
  } catch (const json::parse_error& e) {
    throw InvalidArgument("summary.json is not valid JSON: " + std::string(e.what()));
  }
  std::vector<std::string> problems;
  const auto metric = summary.at("metric").get<std::string>();
  const auto rounds = summary.at("rounds").get<std::size_t>();
  const auto seeds = summary.at("seeds").get<std::vector<std::uint64_t>>();
  auto close = [](double a, double b) {
    return std::abs(a - b) <= 1e-12 * std::max(1.0, std::max(std::abs(a), std::abs(b)));
  };
  for (const auto& [name, entry] : summary.at("strategies").items()) {
    const auto sub = dir / entry.at("dir").get<std::string>();
    std::vector<double> finals;
    for (auto seed : seeds) {
      const auto path = sub / ("seed_" + std::to_string(seed)) / "metrics.csv";
      const auto table = read_csv(path);
      if (table.rows.size() != rounds) {
        problems.push_back(path.string() + ": " + std::to_string(table.rows.size()) +
                           " rows, expected " + std::to_string(rounds));
        continue;
      }
      finals.push_back(table.number(table.rows.size() - 1, metric));
    }
    if (finals.size() != seeds.size()) continue;
    const auto recorded = entry.at("final").at("values").get<std::vector<double>>();
    for (std::size_t i = 0; i < finals.size(); ++i) {
      if (i >= recorded.size() || !close(finals[i], recorded[i])) {
        problems.push_back(name + ": final value for seed " + std::to_string(seeds[i]) +
                           " does not match metrics.csv");
      }
    }
    const auto [mean, ci] = mean_ci95(finals);
    if (!close(mean, entry.at("final").at("mean").get<double>())) {
      problems.push_back(name + ": mean does not match metrics.csv");
    }
    if (!close(ci, entry.at("final").at("ci95").get<double>())) {
      problems.push_back(name + ": ci95 does not match metrics.csv");
    }
  }
  return problems;
}

int worker_threads() {
  if (const char* env = std::getenv("STREAMFED_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<int>(v);
    throw InvalidArgument("STREAMFED_THREADS must be a positive integer");
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace streamfed
