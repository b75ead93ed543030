#pragma once

#include "streamfed/memory.hpp"
#include "streamfed/model.hpp"
#include "streamfed/rng.hpp"
#include "streamfed/stream.hpp"
#include "streamfed/weighting.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

namespace streamfed {

struct TrainConfig {
  int rounds = 1;              // T
  int local_epochs = 1;        // E
  int minibatch = 1;           // K
  double eta = 0.1;            // local learning rate
  double participation = 1.0;  // fraction of clients sampled per round
  std::uint64_t seed = 0;

  void validate() const;
};

/// η = base / √T · min{1, 1/σ̄}; σ̄ must be supplied (or estimated beforehand).
double theoretical_learning_rate(double base, int rounds, double sigma_bar);

/// One client of a run: its stream plus its cache policy.
struct ClientSetup {
  ClientStream stream;
  MemoryRule rule = MemoryRule::FIFO;
  int capacity = 1;
};

/// Every sample that ever entered a client's memory, by global index.
using SampleStore = std::vector<std::unordered_map<std::int64_t, Example>>;

struct TrainResult {
  Vector averaged_model;        // θ̄^(T) = Σ_t q^(t) θ^(t)
  Vector final_iterate;         // θ^(T+1)
  RoundTrace trace;
  std::vector<Vector> iterates; // θ^(1), ..., θ^(T) (broadcast models)
  SampleStore samples;
  int clamp_events = 0;
};

/// g = (|I|/|ξ|) Σ_{j∈ξ} (λ_j / Σ_{j'∈I} λ_{j'}) ∇ℓ(θ; z_j) with ξ drawn
/// uniformly without replacement, |ξ| = min(K, |I|). `weights` is aligned
/// with `memory.contents`. When K ≥ |I| the whole memory is used in order
/// and `rng` is not touched.
Vector minibatch_gradient(const LossSpec& loss, const Vector& theta,
                          const MemoryState& memory, std::span<const double> weights,
                          int minibatch, Rng& rng);

/// E unprojected local steps θ ← θ − η g starting from the global model.
Vector local_update(const LossSpec& loss, const Vector& theta_global,
                    const MemoryState& memory, std::span<const double> weights,
                    const TrainConfig& cfg, Rng& rng);

/// Runs the federated loop over streams with bounded memories.
TrainResult run(std::vector<ClientSetup> clients, const WeightScheme& scheme,
                const Domain& domain, const LossSpec& loss, const TrainConfig& cfg,
                const Vector& initial_model);

/// Weighted empirical risk L_S^(λ)(θ) = Σ_{m,i} p_{m,i} ℓ(θ; z_{m,i}).
double weighted_empirical_risk(const LossSpec& loss, const Vector& theta,
                               const SampleImportance& importance,
                               const SampleStore& samples);
Vector weighted_empirical_gradient(const LossSpec& loss, const Vector& theta,
                                   const SampleImportance& importance,
                                   const SampleStore& samples);

struct ErmSolution {
  Vector theta;
  double value = 0.0;
  double mapping_norm = 0.0;  // ‖θ − proj(θ − s∇)‖ / s at the returned point
  int iterations = 0;
};

/// min over Θ of the weighted empirical risk by full-batch projected gradient
/// descent with step 1/L, stopped when the gradient-mapping norm ≤ tol.
ErmSolution minimize_weighted_erm(const LossSpec& loss, const Domain& domain,
                                  const SampleImportance& importance,
                                  const SampleStore& samples, const Vector& start,
                                  double tol = 1e-9, int max_iters = 2'000'000);

struct SigmaEstimate {
  double at_iterates = 0.0;       // plug-in at the broadcast iterate
  std::optional<double> with_probes;  // max over iterate ∪ probe set, per round
  std::vector<double> per_round;  // q^(t)-weighted contribution at the iterate
};

/// Plug-in estimate of σ̄²(λ):
/// Σ_t q^(t) ‖∇L_S^(λ)(θ^(t)) − Σ_m p_m^(t) ∇L_{M_m^(t)}^(λ)(θ^(t))‖².
/// With `probe_points > 0` the per-round norm is also maximized over that
/// many random points of Θ.
SigmaEstimate estimate_sigma_bar_sq(const RoundTrace& trace,
                                    std::span<const Vector> iterates,
                                    const SampleStore& samples, const LossSpec& loss,
                                    const Domain& domain, int probe_points = 0,
                                    std::uint64_t probe_seed = 0);

/// Uniform random point of Θ (ball or box).
Vector random_point(const Domain& domain, Rng& rng);

struct EvalResult {
  double mean_loss = 0.0;
  std::optional<double> accuracy;
  std::size_t count = 0;
};

enum class EvalMetrics { LossOnly, LossAndAccuracy };

/// Mean loss and (for classification losses) 0/1 accuracy. Requesting
/// accuracy for a regression loss is an error.
EvalResult evaluate(const LossSpec& loss, const Vector& theta,
                    std::span<const Example> examples,
                    EvalMetrics metrics = EvalMetrics::LossAndAccuracy);

/// Monte-Carlo evaluation with `count` fresh draws from a generator.
EvalResult evaluate(const LossSpec& loss, const Vector& theta,
                    const SampleGenerator& generator, std::size_t count, Rng& rng,
                    EvalMetrics metrics = EvalMetrics::LossAndAccuracy);

}  // namespace streamfed
