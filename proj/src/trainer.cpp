#include "streamfed/trainer.hpp"

#include "streamfed/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace streamfed {
namespace {

std::vector<int> select_participants(int num_clients, double fraction, int round,
                                     std::uint64_t seed) {
  std::vector<int> all(static_cast<std::size_t>(num_clients));
  std::iota(all.begin(), all.end(), 0);
  if (fraction >= 1.0) return all;
  const int k = std::clamp(static_cast<int>(std::lround(fraction * num_clients)), 1,
                           num_clients);
  auto rng = make_rng(seed, StreamPurpose::Participation,
                      static_cast<std::uint64_t>(round), 0);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, num_clients - 1);
    std::swap(all[static_cast<std::size_t>(i)],
              all[static_cast<std::size_t>(pick(rng))]);
  }
  all.resize(static_cast<std::size_t>(k));
  std::sort(all.begin(), all.end());
  return all;
}

const Example& stored(const SampleStore& samples, int client, std::int64_t index) {
  const auto& row = samples.at(static_cast<std::size_t>(client));
  const auto it = row.find(index);
  if (it == row.end()) {
    throw InvalidArgument("sample " + std::to_string(index) + " of client " +
                          std::to_string(client) + " missing from the store");
  }
  return it->second;
}

// ∇L_S(θ) − Σ_m p_m^(t) ∇L_{M_m^(t)}(θ) written as one weighted sum over
// samples with coefficients p_{m,i} − λ_m^(t,i)/S^(t).
Vector gradient_gap(const LossSpec& loss, const Vector& theta,
                    const RoundRecord& record, double round_total,
                    const SampleImportance& importance, const SampleStore& samples) {
  Vector gap = Vector::Zero(theta.size());
  for (std::size_t m = 0; m < importance.per_client.size(); ++m) {
    const auto& row = importance.per_client[m];
    const auto& rec = record.clients[m];
    std::unordered_map<std::int64_t, double> round_share;
    for (std::size_t k = 0; k < rec.indices.size(); ++k) {
      round_share[rec.indices[k]] += rec.weights[k] / round_total;
    }
    for (const auto& [idx, p] : row) {
      double coeff = p;
      if (auto it = round_share.find(idx); it != round_share.end()) {
        coeff -= it->second;
        round_share.erase(it);
      }
      if (coeff != 0.0) {
        accumulate_raw_grad(loss, theta, stored(samples, static_cast<int>(m), idx),
                            coeff, gap);
      }
    }
    for (const auto& [idx, share] : round_share) {
      if (share != 0.0) {
        accumulate_raw_grad(loss, theta, stored(samples, static_cast<int>(m), idx),
                            -share, gap);
      }
    }
  }
  return gap;
}

}  // namespace

void TrainConfig::validate() const {
  if (rounds < 1) throw InvalidArgument("train: rounds must be >= 1");
  if (local_epochs < 1) throw InvalidArgument("train: local_epochs must be >= 1");
  if (minibatch < 1) throw InvalidArgument("train: minibatch must be >= 1");
  if (!(eta > 0.0) || !std::isfinite(eta)) {
    throw InvalidArgument("train: eta must be positive");
  }
  if (!(participation > 0.0 && participation <= 1.0)) {
    throw InvalidArgument("train: participation must lie in (0, 1]");
  }
}

double theoretical_learning_rate(double base, int rounds, double sigma_bar) {
  if (rounds < 1 || !(base > 0.0) || !(sigma_bar >= 0.0)) {
    throw InvalidArgument("theoretical learning rate: invalid arguments");
  }
  const double damp = sigma_bar > 1.0 ? 1.0 / sigma_bar : 1.0;
  return base / std::sqrt(static_cast<double>(rounds)) * damp;
}

Vector minibatch_gradient(const LossSpec& loss, const Vector& theta,
                          const MemoryState& memory, std::span<const double> weights,
                          int minibatch, Rng& rng) {
  if (memory.empty()) throw InvalidArgument("minibatch gradient on an empty memory");
  if (weights.size() != memory.size()) {
    throw InvalidArgument("weights are not aligned with the memory");
  }
  if (minibatch < 1) throw InvalidArgument("minibatch size must be >= 1");
  double mass = 0.0;
  for (double w : weights) mass += w;
  if (!(mass > 0.0)) throw InvalidArgument("memory carries zero weight mass");

  const std::size_t n = memory.size();
  const std::size_t k = std::min(static_cast<std::size_t>(minibatch), n);
  Vector g = Vector::Zero(theta.size());
  const double ratio = static_cast<double>(n) / static_cast<double>(k);
  if (k == n) {
    for (std::size_t j = 0; j < n; ++j) {
      accumulate_raw_grad(loss, theta, memory.contents[j].example,
                          ratio * (weights[j] / mass), g);
    }
    return g;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = order[i];
    accumulate_raw_grad(loss, theta, memory.contents[j].example,
                        ratio * (weights[j] / mass), g);
  }
  return g;
}

Vector local_update(const LossSpec& loss, const Vector& theta_global,
                    const MemoryState& memory, std::span<const double> weights,
                    const TrainConfig& cfg, Rng& rng) {
  Vector theta = theta_global;
  for (int e = 0; e < cfg.local_epochs; ++e) {
    const Vector g = minibatch_gradient(loss, theta, memory, weights, cfg.minibatch, rng);
    theta -= cfg.eta * g;
  }
  return theta;
}

TrainResult run(std::vector<ClientSetup> clients, const WeightScheme& scheme,
                const Domain& domain, const LossSpec& loss, const TrainConfig& cfg,
                const Vector& initial_model) {
  cfg.validate();
  if (clients.empty()) throw InvalidArgument("run: no clients");
  if (initial_model.size() != domain.dim()) {
    throw InvalidArgument("run: initial model dimension does not match the domain");
  }
  const int M = static_cast<int>(clients.size());
  for (int m = 0; m < M; ++m) {
    if (clients[static_cast<std::size_t>(m)].stream.client_id() != m) {
      throw InvalidArgument("run: client ids must be 0..M-1 in order");
    }
  }

  // Planned residence per sample, needed only by inverse-residence weights.
  std::vector<std::map<std::int64_t, int>> residence_plan(static_cast<std::size_t>(M));
  if (scheme.needs_residence_plan()) {
    for (int m = 0; m < M; ++m) {
      const auto& c = clients[static_cast<std::size_t>(m)];
      const auto sizes = plan_batch_sizes(c.stream.process(), m, cfg.rounds,
                                          c.stream.root_seed());
      residence_plan[static_cast<std::size_t>(m)] =
          plan_residence(c.rule, c.capacity, sizes);
    }
  }

  std::vector<MemoryState> memories;
  memories.reserve(static_cast<std::size_t>(M));
  for (const auto& c : clients) memories.emplace_back(c.capacity);

  TrainResult result;
  result.trace = RoundTrace(M);
  result.samples.resize(static_cast<std::size_t>(M));
  result.iterates.reserve(static_cast<std::size_t>(cfg.rounds));

  Vector theta = domain.project(initial_model);
  for (int t = 1; t <= cfg.rounds; ++t) {
    const std::string where = "round " + std::to_string(t);
    result.iterates.push_back(theta);
    const auto participants = select_participants(M, cfg.participation, t, cfg.seed);
    std::vector<bool> selected(static_cast<std::size_t>(M), false);
    for (int m : participants) selected[static_cast<std::size_t>(m)] = true;

    RoundRecord record;
    record.round = t;
    record.clients.resize(static_cast<std::size_t>(M));
    std::vector<std::vector<double>> weights(static_cast<std::size_t>(M));
    try {
      for (int m = 0; m < M; ++m) {
        const auto mi = static_cast<std::size_t>(m);
        auto& client = clients[mi];
        const auto batch = client.stream.next_batch(t);
        memories[mi] = update(memories[mi], client.rule, batch);
        for (const auto& z : batch) {
          // KeepAll may decline arrivals; only cached samples are stored.
          result.samples[mi].emplace(z.global_index, z);
        }

        auto& rec = record.clients[mi];
        rec.client_id = m;
        rec.participated = selected[mi];
        for (const auto& slot : memories[mi].contents) {
          WeightContext ctx;
          ctx.client_id = m;
          ctx.round = t;
          ctx.global_index = slot.example.global_index;
          ctx.residence = slot.residence;
          if (scheme.needs_residence_plan()) {
            ctx.planned_residence = residence_plan[mi].at(slot.example.global_index);
          }
          const double w = scheme.weight(ctx);
          rec.indices.push_back(slot.example.global_index);
          rec.weights.push_back(w);
          rec.mass += w;
        }
        weights[mi] = rec.weights;
      }

      double participating_mass = 0.0;
      for (int m : participants) {
        participating_mass += record.clients[static_cast<std::size_t>(m)].mass;
      }
      if (!(participating_mass > 0.0)) {
        throw NumericError("no participating client carries positive weight mass");
      }

      // θ + Σ_m p_m (θ_m − θ) with Σ_m p_m = 1, evaluated as Σ_m p_m θ_m.
      Vector next = Vector::Zero(theta.size());
      for (int m : participants) {
        const auto mi = static_cast<std::size_t>(m);
        const double mass = record.clients[mi].mass;
        if (mass == 0.0) continue;
        auto rng = make_rng(cfg.seed, StreamPurpose::MinibatchIndex,
                            static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(t));
        const Vector local = local_update(loss, theta, memories[mi], weights[mi], cfg, rng);
        next += (mass / participating_mass) * local;
      }
      if (!next.allFinite()) throw NumericError("aggregated model is not finite");
      theta = domain.project(next);
    } catch (const Error& e) {
      throw Error(e.kind(), where + ": " + e.what());
    }
    // Drop samples that left every memory and were never cached.
    for (int m = 0; m < M; ++m) {
      const auto mi = static_cast<std::size_t>(m);
      const auto cached = index_set(memories[mi]);
      for (auto it = result.samples[mi].begin(); it != result.samples[mi].end();) {
        if (it->second.arrival_round == t && cached.count(it->first) == 0) {
          it = result.samples[mi].erase(it);
        } else {
          ++it;
        }
      }
    }
    result.trace.append(std::move(record));
  }

  const auto q = round_mass_share(result.trace);
  result.averaged_model = Vector::Zero(theta.size());
  for (std::size_t t = 0; t < q.size(); ++t) {
    result.averaged_model += q[t] * result.iterates[t];
  }
  result.final_iterate = theta;
  for (const auto& c : clients) result.clamp_events += c.stream.clamp_events();
  return result;
}

double weighted_empirical_risk(const LossSpec& loss, const Vector& theta,
                               const SampleImportance& importance,
                               const SampleStore& samples) {
  double value = 0.0;
  for (std::size_t m = 0; m < importance.per_client.size(); ++m) {
    for (const auto& [idx, p] : importance.per_client[m]) {
      if (p == 0.0) continue;
      value += p * raw_loss(loss, theta, stored(samples, static_cast<int>(m), idx));
    }
  }
  return value;
}

Vector weighted_empirical_gradient(const LossSpec& loss, const Vector& theta,
                                   const SampleImportance& importance,
                                   const SampleStore& samples) {
  Vector g = Vector::Zero(theta.size());
  for (std::size_t m = 0; m < importance.per_client.size(); ++m) {
    for (const auto& [idx, p] : importance.per_client[m]) {
      if (p == 0.0) continue;
      accumulate_raw_grad(loss, theta, stored(samples, static_cast<int>(m), idx), p, g);
    }
  }
  return g;
}

ErmSolution minimize_weighted_erm(const LossSpec& loss, const Domain& domain,
                                  const SampleImportance& importance,
                                  const SampleStore& samples, const Vector& start,
                                  double tol, int max_iters) {
  const double step = 1.0 / loss.smoothness_L;
  ErmSolution sol;
  sol.theta = domain.project(start);
  for (int it = 0; it < max_iters; ++it) {
    const Vector g = weighted_empirical_gradient(loss, sol.theta, importance, samples);
    const Vector next = domain.project(sol.theta - step * g);
    sol.mapping_norm = (sol.theta - next).norm() / step;
    sol.iterations = it + 1;
    sol.theta = next;
    if (sol.mapping_norm <= tol) break;
  }
  if (sol.mapping_norm > tol) {
    throw NumericError("weighted ERM did not reach the gradient-mapping tolerance");
  }
  sol.value = weighted_empirical_risk(loss, sol.theta, importance, samples);
  return sol;
}

Vector random_point(const Domain& domain, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto d = domain.dim();
  if (domain.kind() == Domain::Kind::Box) {
    Vector v(d);
    for (Eigen::Index k = 0; k < d; ++k) {
      v[k] = domain.lower()[k] + unif(rng) * (domain.upper()[k] - domain.lower()[k]);
    }
    return v;
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector dir(d);
  for (Eigen::Index k = 0; k < d; ++k) dir[k] = normal(rng);
  const double norm = dir.norm();
  if (norm == 0.0) return domain.center();
  const double r = domain.radius() * std::pow(unif(rng), 1.0 / static_cast<double>(d));
  return domain.center() + dir * (r / norm);
}

SigmaEstimate estimate_sigma_bar_sq(const RoundTrace& trace,
                                    std::span<const Vector> iterates,
                                    const SampleStore& samples, const LossSpec& loss,
                                    const Domain& domain, int probe_points,
                                    std::uint64_t probe_seed) {
  if (static_cast<int>(iterates.size()) != trace.horizon()) {
    throw InvalidArgument("sigma estimate: need one iterate per traced round");
  }
  if (samples.size() != static_cast<std::size_t>(trace.num_clients())) {
    throw InvalidArgument("sigma estimate: sample store does not match the trace");
  }
  const auto q = round_mass_share(trace);
  const auto importance = sample_importance(trace);

  SigmaEstimate out;
  out.per_round.reserve(q.size());
  double with_probes = 0.0;
  for (std::size_t t = 0; t < q.size(); ++t) {
    const auto& record = trace.rounds()[t];
    const double total = record.total_mass();
    if (!(total > 0.0)) throw NumericError("sigma estimate: round with zero mass");
    const double at_iterate =
        gradient_gap(loss, iterates[t], record, total, importance, samples).squaredNorm();
    out.per_round.push_back(q[t] * at_iterate);
    out.at_iterates += q[t] * at_iterate;
    if (probe_points > 0) {
      double best = at_iterate;
      auto rng = make_rng(probe_seed, StreamPurpose::Probe, t + 1, 0);
      for (int k = 0; k < probe_points; ++k) {
        const Vector probe = random_point(domain, rng);
        best = std::max(best, gradient_gap(loss, probe, record, total, importance,
                                           samples).squaredNorm());
      }
      with_probes += q[t] * best;
    }
  }
  if (probe_points > 0) out.with_probes = with_probes;
  return out;
}

EvalResult evaluate(const LossSpec& loss, const Vector& theta,
                    std::span<const Example> examples, EvalMetrics metrics) {
  if (examples.empty()) throw InvalidArgument("evaluate: empty evaluation set");
  const bool want_accuracy = metrics == EvalMetrics::LossAndAccuracy;
  if (want_accuracy && loss.kind != LossKind::Logistic) {
    throw InvalidArgument("evaluate: accuracy is only defined for classification losses");
  }
  EvalResult r;
  double correct = 0.0;
  for (const auto& z : examples) {
    r.mean_loss += raw_loss(loss, theta, z);
    if (want_accuracy && *predict_label(loss, theta, z) == z.label) correct += 1.0;
  }
  r.count = examples.size();
  r.mean_loss /= static_cast<double>(r.count);
  if (want_accuracy) r.accuracy = correct / static_cast<double>(r.count);
  return r;
}

EvalResult evaluate(const LossSpec& loss, const Vector& theta,
                    const SampleGenerator& generator, std::size_t count, Rng& rng,
                    EvalMetrics metrics) {
  if (count == 0) throw InvalidArgument("evaluate: empty evaluation set");
  std::vector<Example> draws(count);
  for (auto& z : draws) generator(rng, z);
  return evaluate(loss, theta, draws, metrics);
}

}  // namespace streamfed
