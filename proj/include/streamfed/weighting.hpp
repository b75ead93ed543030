#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace streamfed {

/// A point of the probability simplex Δ^{M−1}.
class ImportanceVector {
 public:
  ImportanceVector() = default;
  /// Validates: entries ≥ 0 and finite, sum within `tol` of 1.
  explicit ImportanceVector(std::vector<double> p, double tol = 1e-12);
  /// Normalizes a nonnegative vector with positive sum.
  static ImportanceVector normalized(std::span<const double> weights);

  std::size_t size() const noexcept { return p_.size(); }
  double operator[](std::size_t m) const { return p_[m]; }
  const std::vector<double>& values() const noexcept { return p_; }
  double sum_range(std::size_t begin, std::size_t end) const;

 private:
  std::vector<double> p_;
};

/// Metadata a weight rule may use. Sample contents are deliberately absent.
struct WeightContext {
  int client_id = 0;
  int round = 0;
  std::int64_t global_index = 0;
  int residence = 0;          // rounds cached so far, including this one
  int planned_residence = 0;  // total rounds cached within the horizon (0 = unknown)
};

/// Sample-weight rule λ_m^(t,j).
class WeightScheme {
 public:
  enum class Kind { UnitWeights, InverseResidence, PerClientStationary, ExplicitTable };
  using Table = std::function<double(const WeightContext&)>;

  static WeightScheme unit();
  /// λ = 1/τ with τ the total number of rounds the sample stays cached.
  static WeightScheme inverse_residence();
  static WeightScheme per_client(std::vector<double> lambdas);
  static WeightScheme table(Table fn);

  Kind kind() const noexcept { return kind_; }
  const std::vector<double>& client_lambdas() const noexcept { return lambdas_; }
  bool needs_residence_plan() const noexcept { return kind_ == Kind::InverseResidence; }

  double weight(const WeightContext& ctx) const;

 private:
  Kind kind_ = Kind::UnitWeights;
  std::vector<double> lambdas_;
  Table table_;
};

/// One client's weights in one round.
struct ClientRoundRecord {
  int client_id = 0;
  bool participated = true;
  std::vector<std::int64_t> indices;  // I_m^(t) in memory order
  std::vector<double> weights;        // λ_m^(t,j), aligned with indices
  double mass = 0.0;                  // L_m^(t)
};

struct RoundRecord {
  int round = 0;
  std::vector<ClientRoundRecord> clients;  // indexed by client id
  double total_mass() const;
};

/// Append-only per-round weight trace.
class RoundTrace {
 public:
  explicit RoundTrace(int num_clients = 0) : num_clients_(num_clients) {}

  void append(RoundRecord record);
  int num_clients() const noexcept { return num_clients_; }
  int horizon() const noexcept { return static_cast<int>(rounds_.size()); }
  const RoundRecord& round(int t) const;  // 1-based
  const std::vector<RoundRecord>& rounds() const noexcept { return rounds_; }

 private:
  int num_clients_;
  std::vector<RoundRecord> rounds_;
};

struct RoundWeights {
  ImportanceVector p;  // p_m^(t)
  double mass = 0.0;   // Σ_m L_m^(t)
};

/// p_m^(t) = L_m^(t) / Σ L^(t). Throws on zero total mass.
RoundWeights round_weights(const RoundRecord& record);

/// q^(t) = S^(t) / Σ_s S^(s).
std::vector<double> round_mass_share(const RoundTrace& trace);

/// p_{m,i}: per client, a map from global index to its importance.
struct SampleImportance {
  std::vector<std::map<std::int64_t, double>> per_client;

  ImportanceVector client_totals() const;
  std::vector<double> flatten() const;
  double get(int client, std::int64_t index) const;
};

SampleImportance sample_importance(const RoundTrace& trace);

/// N_eff = (Σ p²)^{-1}. Throws on an all-zero table.
double effective_sample_size(std::span<const double> table);
double effective_sample_size(const SampleImportance& table);

/// λ_m ∝ p_m / counts_m with max λ_m = 1. `counts` are the per-round memory
/// occupancies |I_m|; with static datasets this is N_m.
std::vector<double> importance_to_client_weights(const ImportanceVector& p,
                                                 std::span<const double> counts);

/// Σ_t q^(t) p^(t), which equals the client totals of sample_importance.
std::vector<double> client_importance_from_rounds(const RoundTrace& trace);

/// `round,client,mass,p_mt,q_t`, one row per (round, client).
void write_trace_csv(std::ostream& out, const RoundTrace& trace);

}  // namespace streamfed
