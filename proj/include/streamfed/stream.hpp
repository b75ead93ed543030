#pragma once

#include "streamfed/model.hpp"
#include "streamfed/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <vector>

namespace streamfed {

/// How many samples a client receives per round.
struct CountingProcessSpec {
  enum class Kind { ConstantRate, SinglePulse, Poisson, Schedule };

  Kind kind = Kind::ConstantRate;
  int batch = 1;        // ConstantRate: b ≥ 1
  int pulse = 1;        // SinglePulse: n0 ≥ 1, delivered at t = 1
  double rate = 1.0;    // Poisson mean
  int min_batch = 1;    // Poisson lower clamp
  std::vector<int> schedule;  // Schedule: b^(t) for t = 1..size, 0 afterwards

  static CountingProcessSpec constant_rate(int b);
  static CountingProcessSpec single_pulse(int n0);
  static CountingProcessSpec poisson(double rate, int min_batch);
  static CountingProcessSpec scheduled(std::vector<int> sizes);

  void validate() const;
};

/// Realized batch size b_m^(t) together with whether the Poisson clamp fired.
struct BatchDraw {
  int size = 0;
  bool clamped = false;
};

/// Batch size for (client, round). Depends only on the process, the root seed
/// and the (client, round) key, never on sample contents.
BatchDraw draw_batch_size(const CountingProcessSpec& process, int client_id,
                          int round, std::uint64_t root_seed);

/// Batch sizes for rounds 1..T.
std::vector<int> plan_batch_sizes(const CountingProcessSpec& process,
                                  int client_id, int horizon,
                                  std::uint64_t root_seed);

/// Fills `out.features` and `out.label` with one draw from a client's P_m.
using SampleGenerator = std::function<void(Rng&, Example& out)>;

/// One client's data stream: a counting process over either a pre-generated
/// ordered list or a generator.
class ClientStream {
 public:
  ClientStream(int client_id, CountingProcessSpec process,
               std::shared_ptr<const std::vector<Example>> samples,
               std::uint64_t root_seed);
  ClientStream(int client_id, CountingProcessSpec process,
               SampleGenerator generator, std::uint64_t root_seed);

  int client_id() const noexcept { return client_id_; }
  const CountingProcessSpec& process() const noexcept { return process_; }

  /// B_m^(t). Rounds must be requested in order 1, 2, 3, ...
  std::vector<Example> next_batch(int round);

  /// Samples received so far, N_m^(t).
  std::int64_t delivered() const noexcept { return next_index_ - 1; }
  int clamp_events() const noexcept { return clamp_events_; }
  bool has_pregenerated_source() const noexcept { return samples_ != nullptr; }
  std::uint64_t root_seed() const noexcept { return root_seed_; }

 private:
  int client_id_;
  CountingProcessSpec process_;
  std::shared_ptr<const std::vector<Example>> samples_;
  SampleGenerator generator_;
  std::uint64_t root_seed_;
  int last_round_ = 0;
  std::int64_t next_index_ = 1;
  int clamp_events_ = 0;
};

struct SyntheticSpec {
  int d = 21;            // parameter dimension: d−1 uniform features plus a bias
  int M = 11;
  double epsilon = 0.1;  // client-drift standard deviation
  std::vector<int> per_client_counts;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticDataset {
  Vector theta0;
  std::vector<Vector> client_thetas;
  std::vector<std::vector<Example>> clients;  // ordered by global_index

  /// Draws fresh samples from client m's distribution.
  SampleGenerator generator(int client_id) const;
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

/// Draws one synthetic sample for parameter vector `theta`.
void draw_synthetic_sample(const Vector& theta, Rng& rng, Example& out);

/// Loads `client_id,arrival_round,label,f0,f1,...` rows, sorted per client by
/// (arrival_round, file order). Global indices are assigned 1..N_m.
std::map<int, std::vector<Example>> load_csv_corpus(
    const std::filesystem::path& path);

}  // namespace streamfed
