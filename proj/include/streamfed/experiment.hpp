#pragma once

#include "streamfed/bound.hpp"
#include "streamfed/memory.hpp"
#include "streamfed/stream.hpp"
#include "streamfed/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace streamfed {

struct ScenarioConfig {
  enum class Kind { HistoricalFresh, Custom };

  Kind kind = Kind::HistoricalFresh;
  int M = 11;
  int M_hist = 10;
  int N = 200;
  double N_hist_over_N = 0.2;
  std::vector<int> fresh_rates{2};  // one entry per fresh client, or one shared

  // Custom only: explicit per-client arrival process and memory.
  struct ClientSpec {
    CountingProcessSpec process;
    MemoryRule rule = MemoryRule::FIFO;
    int capacity = 1;
    int samples = 0;
    bool historical = false;
  };
  std::vector<ClientSpec> clients;
};

struct DatasetConfig {
  enum class Kind { Synthetic, Csv };

  Kind kind = Kind::Synthetic;
  int d = 21;
  double epsilon = 0.1;
  std::filesystem::path path;  // Csv
  LossKind loss = LossKind::Logistic;
};

struct EvalConfig {
  std::size_t mc_size = 10000;    // synthetic: fresh draws per evaluation set
  double test_fraction = 0.2;     // CSV: per-client holdout
  double validation_fraction = 0.2;
};

struct ExperimentConfig {
  ScenarioConfig scenario;
  DatasetConfig dataset;
  std::vector<Strategy> strategies;
  TrainConfig train;
  bool tune_eta = false;
  std::vector<double> eta_grid;
  EvalConfig eval;
  WarmupConfig warmup;
  double radius = 10.0;
  std::filesystem::path output_dir = "runs/default";
  std::vector<std::uint64_t> seeds{0};
  bool optimal_sweep = false;
  int sigma_probe_points = 0;
  nlohmann::json source;  // the parsed document, echoed into summary.json
};

/// Parses a config document. Unknown keys are rejected; errors name the field.
ExperimentConfig parse_experiment_config(const nlohmann::json& doc);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// {10^-3.5, 10^-3, ..., 10^-1}.
std::vector<double> default_eta_grid();

/// Arrival process and cache of one client, reusable across sub-runs.
struct ClientPlan {
  CountingProcessSpec process;
  MemoryRule rule = MemoryRule::FIFO;
  int capacity = 1;
};

enum class DataPurpose { Tuning, Final };

/// Everything a sub-run needs for one seed, independent of the strategy.
/// Tuning data evaluates on the validation set; final data on the test set.
struct PreparedData {
  std::vector<std::shared_ptr<const std::vector<Example>>> train;
  std::vector<Example> eval;
  std::vector<ClientPlan> clients;
  ImportanceVector n;               // N_m / N over the training data
  std::vector<double> occupancy;    // per-round memory size |I_m|
  int M_hist = 0;
  LossSpec loss;
  Domain domain = Domain::ball(1, 1.0);
  std::uint64_t seed = 0;
};

PreparedData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed,
                          DataPurpose purpose);

/// Weight rule and target importance for a strategy on prepared data.
struct StrategyPlan {
  WeightScheme scheme;
  std::optional<ImportanceVector> target;  // p the weights are built to realize
  std::optional<double> c_ratio;           // Ours only
};

StrategyPlan plan_strategy(const ExperimentConfig& cfg, const PreparedData& data,
                           const Strategy& strategy, double eta);

struct MetricsRow {
  int round = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  std::optional<double> test_acc;
  double sigma_hat_sq_partial = 0.0;
  double q_t = 0.0;
};

struct SubRunResult {
  Strategy strategy;
  std::uint64_t seed = 0;
  double eta = 0.0;
  std::vector<MetricsRow> metrics;  // row t evaluates θ̄^(t)
  RoundTrace trace;
  double final_test_loss = 0.0;
  std::optional<double> final_test_acc;
  double n_eff = 0.0;
  double sigma_hat_sq = 0.0;
  std::optional<double> sigma_hat_sq_probes;
  double p_hist = 0.0;  // realized Σ_{m<M_hist} p_m
  std::optional<double> c_ratio;
};

/// Trains one strategy on one seed and evaluates every averaged model on
/// the prepared evaluation set.
SubRunResult run_strategy(const ExperimentConfig& cfg, const PreparedData& data,
                          const Strategy& strategy, double eta);

/// Learning rate with the best mean validation accuracy (validation loss
/// for regression) over the configured seeds.
double tune_learning_rate(const ExperimentConfig& cfg, const Strategy& strategy);

/// Writes per-(strategy, seed) metrics.csv and trace.csv plus summary.json.
nlohmann::ordered_json run_experiment(const ExperimentConfig& cfg);

/// Mean and half-width of the two-sided 95% Student-t interval.
std::pair<double, double> mean_ci95(const std::vector<double>& values);

struct BoundGridConfig {
  double ratio_lo = 1e-3;
  double ratio_hi = 10.0;
  int ratio_points = 40;
  std::vector<double> hist_fractions{0.05, 0.2, 0.5};
  int M = 50;
  int M_hist = 25;
  std::filesystem::path output = "runs/bounds/curves.csv";
};

BoundGridConfig parse_bound_config(const nlohmann::json& doc);
std::vector<BoundCurveRow> run_bound_exploration(const BoundGridConfig& cfg);

struct AdversarialCase {
  int z1 = 1;
  int z2 = 2;
  double q = 0.0;  // Σ_{t≤T/2} q^(t)
  Vector theta_bar;
  Vector theta_star;
  double eps_opt = 0.0;
  double sigma_hat_sq = 0.0;
};

struct AdversarialResult {
  int T = 0;
  double eta = 0.0;
  std::vector<AdversarialCase> cases;  // (1,1), (1,2), (2,1), (2,2)
  double eps_opt = 0.0;                // expectation over the four cases
  double sigma_hat_sq = 0.0;
  bool holds = false;                  // eps_opt ≥ (3/20)·sigma_hat_sq
};

/// Closed-form minimizer of w·ℓ(θ;1) + (1−w)·ℓ(θ;2) over [−1,1]².
Vector two_point_minimizer(double w);

/// Runs the lower-bound instance for horizon T (even) with η = eta_scale/√T.
AdversarialResult run_adversarial_check(int T, double eta_scale = 1.0);

/// Recomputes summary.json aggregates from the per-run metrics.csv files.
/// Returns a list of mismatches (empty when consistent).
std::vector<std::string> verify_run_dir(const std::filesystem::path& dir);

/// Worker count: STREAMFED_THREADS if set, else hardware concurrency.
int worker_threads();

}  // namespace streamfed
