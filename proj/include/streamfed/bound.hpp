#pragma once

#include "streamfed/error.hpp"
#include "streamfed/model.hpp"
#include "streamfed/weighting.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace streamfed {

/// Constants of ψ(p; c). Clients 0..M_hist−1 are the historical ones.
struct BoundCoefficients {
  double c0 = 0.0;
  double c1 = 1.0;
  double c2 = 1.0;
  ImportanceVector n;  // relative dataset sizes N_m / N
  int M_hist = 0;

  void validate() const;
  std::size_t M() const noexcept { return n.size(); }
};

/// ψ(p; c) = c0 + c1·√(Σ_{m≥M_hist} p_m²) + c2·√(Σ_m p_m²/n_m).
double psi(const ImportanceVector& p, const BoundCoefficients& c);
double psi(std::span<const double> p, const BoundCoefficients& c);

/// A subgradient of ψ at p. A term whose radicand is zero contributes the
/// zero vector.
std::vector<double> psi_subgradient(std::span<const double> p,
                                    const BoundCoefficients& c);

/// Euclidean projection onto the probability simplex (sort and threshold).
ImportanceVector project_simplex(std::span<const double> v);
std::vector<double> project_simplex_raw(std::span<const double> v);

struct PsiSolution {
  ImportanceVector p;
  double value = 0.0;  // ψ(p; c), c0 included
  int iterations = 0;
  int M_hist = 0;

  double p_hist() const { return p.sum_range(0, static_cast<std::size_t>(M_hist)); }
};

/// Thrown when minimize_psi runs out of iterations; carries the best iterate.
class PsiNonConvergence : public NumericError {
 public:
  PsiNonConvergence(const std::string& what, PsiSolution best);
  const PsiSolution& best() const noexcept { return best_; }

 private:
  PsiSolution best_;
};

/// Projected subgradient descent from n with steps η₀/√k, η₀ = 1/(c1+c2).
/// A run stalls once the best value improves by less than `tol` over 100
/// iterations; it then restarts from the best point with η₀ halved, down to
/// 1e-3·min n_m/(c1+c2). The result is checked against n, the historical and
/// fresh allocations and 1000 random simplex points.
PsiSolution minimize_psi(const BoundCoefficients& c, double tol = 1e-13,
                         int max_iters = 2'000'000);

/// Inputs of the ratio heuristic.
struct EstimatedConstants {
  double B_hat = 0.0;
  double G_hat = 0.0;
  double D_hat = 0.0;
  int d = 1;
  std::int64_t N = 1;
  int M = 1;
  int M_hist = 0;
};

/// ĉ2/ĉ1 ≈ (B + √(d/N)) / (G·D·√(M − M_hist)).
double estimate_c_ratio(const EstimatedConstants& k);

struct WarmupConfig {
  int steps = 5;
  double eta = 0.01;
  int minibatch = 1;
  std::uint64_t seed = 0;
};

/// B̂, Ĝ and D̂ from a few projected SGD steps on every historical client's
/// data, started at `theta_init`. B̂ and Ĝ are the largest per-sample loss and
/// gradient norm seen along the way; D̂ = max_m ‖θ̂_m − θ_init‖.
EstimatedConstants estimate_constants(
    std::span<const std::vector<Example>> historical_data, const LossSpec& loss,
    const Domain& domain, const Vector& theta_init, const WarmupConfig& warmup,
    std::int64_t N, int M);

enum class StrategyKind { Fresh, Historical, Uniform, Ours, FixedPHist };

struct Strategy {
  StrategyKind kind = StrategyKind::Uniform;
  double p_hist = 0.0;  // FixedPHist only

  static Strategy fixed(double h) { return {StrategyKind::FixedPHist, h}; }
  std::string name() const;
  static Strategy parse(const std::string& text);
};

/// Client importance of a strategy. `c_opt` is required for Ours.
ImportanceVector strategy_importance(const Strategy& s, const ImportanceVector& n,
                                     int M_hist,
                                     const std::optional<BoundCoefficients>& c_opt = {});

/// n for the case-study layout: M_hist equal historical clients holding a
/// fraction `hist_fraction` of the data and M − M_hist equal fresh ones.
ImportanceVector case_study_sizes(int M, int M_hist, double hist_fraction);

struct BoundCurveRow {
  double c2_over_c1 = 0.0;
  double N_hist_over_N = 0.0;
  double p_hist_star = 0.0;
  double n_eff_term = 0.0;  // Σ p*²/n
  double noise_term = 0.0;  // √(Σ_fresh p*²)
  double psi_star = 0.0;
  double psi_hist = 0.0;
  double psi_unif = 0.0;
};

/// One row per (ratio, fraction) with c1 = 1, c2 = ratio, c0 = 0.
std::vector<BoundCurveRow> emit_bound_curves(std::span<const double> ratios,
                                             std::span<const double> hist_fractions,
                                             int M, int M_hist);

void write_bound_curves(std::ostream& out, std::span<const BoundCurveRow> rows);

/// `count` points log-spaced between lo and hi inclusive.
std::vector<double> log_grid(double lo, double hi, int count);

}  // namespace streamfed
