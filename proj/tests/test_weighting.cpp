#include "streamfed/memory.hpp"
#include "streamfed/stream.hpp"
#include "streamfed/weighting.hpp"

#include <doctest.h>

#include <numeric>
#include <random>
#include <sstream>

using namespace streamfed;

namespace {

struct ClientScript {
  CountingProcessSpec process;
  MemoryRule rule;
  int capacity;
};

// Replays memories by hand and records the weight trace.
RoundTrace replay(const std::vector<ClientScript>& clients, const WeightScheme& scheme,
                  int T) {
  const int M = static_cast<int>(clients.size());
  RoundTrace trace(M);
  std::vector<MemoryState> mem;
  std::vector<std::map<std::int64_t, int>> plan(M);
  std::vector<std::vector<int>> sizes(M);
  for (int m = 0; m < M; ++m) {
    mem.emplace_back(clients[m].capacity);
    sizes[m] = plan_batch_sizes(clients[m].process, m, T, 0);
    plan[m] = plan_residence(clients[m].rule, clients[m].capacity, sizes[m]);
  }
  std::vector<std::int64_t> next(M, 1);
  for (int t = 1; t <= T; ++t) {
    RoundRecord rec;
    rec.round = t;
    for (int m = 0; m < M; ++m) {
      std::vector<Example> in(sizes[m][t - 1]);
      for (auto& z : in) {
        z.features = Vector::Zero(1);
        z.client_id = m;
        z.arrival_round = t;
        z.global_index = next[m]++;
      }
      mem[m] = update(mem[m], clients[m].rule, in);
      ClientRoundRecord c;
      c.client_id = m;
      for (const auto& slot : mem[m].contents) {
        WeightContext ctx{m, t, slot.example.global_index, slot.residence,
                          plan[m].at(slot.example.global_index)};
        c.indices.push_back(slot.example.global_index);
        c.weights.push_back(scheme.weight(ctx));
        c.mass += c.weights.back();
      }
      rec.clients.push_back(c);
    }
    trace.append(rec);
  }
  return trace;
}

RoundRecord masses(int round, std::initializer_list<double> ms) {
  RoundRecord r;
  r.round = round;
  int m = 0;
  for (double x : ms) {
    ClientRoundRecord c;
    c.client_id = m++;
    c.indices = {1};
    c.weights = {x};
    c.mass = x;
    r.clients.push_back(c);
  }
  return r;
}

// Setting with historical pulses and fresh constant-rate clients.
std::vector<ClientScript> hist_fresh(int M_hist, int n_hist, int M_fresh, int b) {
  std::vector<ClientScript> out;
  for (int m = 0; m < M_hist; ++m) {
    out.push_back({CountingProcessSpec::single_pulse(n_hist), MemoryRule::KeepAll, n_hist});
  }
  for (int m = 0; m < M_fresh; ++m) {
    out.push_back({CountingProcessSpec::constant_rate(b), MemoryRule::FIFO, b});
  }
  return out;
}

}  // namespace

TEST_CASE("round weights normalize masses") {
  const auto w = round_weights(masses(1, {3, 1}));
  CHECK(w.p[0] == doctest::Approx(0.75));
  CHECK(w.p[1] == doctest::Approx(0.25));
  CHECK_THROWS(round_weights(masses(1, {0, 0})));
}

TEST_CASE("unit weights follow memory sizes") {
  const auto trace = replay({{CountingProcessSpec::single_pulse(10), MemoryRule::KeepAll, 10},
                             {CountingProcessSpec::single_pulse(30), MemoryRule::KeepAll, 30}},
                            WeightScheme::unit(), 1);
  const auto w = round_weights(trace.round(1));
  CHECK(w.p[0] == doctest::Approx(0.25));
  CHECK(w.p[1] == doctest::Approx(0.75));
}

TEST_CASE("mass shares") {
  RoundTrace a(1);
  for (int t = 1; t <= 4; ++t) a.append(masses(t, {2}));
  for (double q : round_mass_share(a)) CHECK(q == doctest::Approx(0.25));
  RoundTrace b(1);
  b.append(masses(1, {2}));
  b.append(masses(2, {1}));
  b.append(masses(3, {1}));
  const auto q = round_mass_share(b);
  CHECK(q[0] == doctest::Approx(0.5));
  CHECK(q[1] == doctest::Approx(0.25));
  CHECK(q[2] == doctest::Approx(0.25));
}

TEST_CASE("stationary client weights realize p in every round") {
  const auto clients = hist_fresh(3, 5, 2, 2);
  const int T = 6;
  const std::vector<double> counts{5, 5, 5, 2, 2};
  const ImportanceVector p({0.1, 0.2, 0.1, 0.35, 0.25});
  const auto trace =
      replay(clients, WeightScheme::per_client(importance_to_client_weights(p, counts)), T);
  for (double q : round_mass_share(trace)) CHECK(q == doctest::Approx(1.0 / T));
  for (int t = 1; t <= T; ++t) {
    const auto w = round_weights(trace.round(t));
    for (std::size_t m = 0; m < 5; ++m) CHECK(w.p[m] == doctest::Approx(p[m]).epsilon(1e-12));
  }
  const auto totals = sample_importance(trace).client_totals();
  for (std::size_t m = 0; m < 5; ++m) CHECK(std::abs(totals[m] - p[m]) <= 1e-10);
}

TEST_CASE("random importance survives a replay") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto clients = hist_fresh(2, 7, 3, 3);
  const std::vector<double> counts{7, 7, 3, 3, 3};
  for (int k = 0; k < 20; ++k) {
    std::vector<double> raw(5);
    for (auto& x : raw) x = u(rng);
    const auto p = ImportanceVector::normalized(raw);
    const auto trace = replay(
        clients, WeightScheme::per_client(importance_to_client_weights(p, counts)), 5);
    const auto totals = sample_importance(trace).client_totals();
    for (std::size_t m = 0; m < 5; ++m) CHECK(std::abs(totals[m] - p[m]) <= 1e-10);
    const auto rounds = client_importance_from_rounds(trace);
    for (std::size_t m = 0; m < 5; ++m) CHECK(std::abs(rounds[m] - p[m]) <= 1e-10);
  }
}

TEST_CASE("ReplaceAll with unit weights gives 1/N") {
  const auto trace =
      replay({{CountingProcessSpec::constant_rate(2), MemoryRule::ReplaceAll, 2},
              {CountingProcessSpec::constant_rate(2), MemoryRule::ReplaceAll, 2}},
             WeightScheme::unit(), 5);
  const auto flat = sample_importance(trace).flatten();
  CHECK(flat.size() == 20);
  for (double x : flat) CHECK(x == doctest::Approx(1.0 / 20));
}

TEST_CASE("KeepAll sample importance grows with the horizon") {
  const auto clients = hist_fresh(1, 4, 1, 1);
  const auto trace = replay(clients, WeightScheme::unit(), 8);
  const auto imp = sample_importance(trace);
  // Each round: 4 historical samples and 1 fresh, mass 5.
  CHECK(imp.get(0, 1) == doctest::Approx(8.0 / 40.0));
  CHECK(imp.get(1, 1) == doctest::Approx(1.0 / 40.0));
}

TEST_CASE("inverse residence gives 1/N under FIFO") {
  const auto trace = replay({{CountingProcessSpec::constant_rate(1), MemoryRule::FIFO, 3},
                             {CountingProcessSpec::single_pulse(4), MemoryRule::KeepAll, 4}},
                            WeightScheme::inverse_residence(), 9);
  const auto flat = sample_importance(trace).flatten();
  CHECK(flat.size() == 13);
  for (double x : flat) CHECK(x == doctest::Approx(1.0 / 13));
}

TEST_CASE("effective sample size") {
  CHECK(effective_sample_size(std::vector<double>(200, 1.0 / 200)) == doctest::Approx(200));
  CHECK(effective_sample_size(std::vector<double>{1, 0, 0}) == doctest::Approx(1));
  CHECK(effective_sample_size(std::vector<double>{0.5, 0.25, 0.25}) ==
        doctest::Approx(8.0 / 3.0));
  CHECK_THROWS(effective_sample_size(std::vector<double>{0, 0}));
}

TEST_CASE("client weights from importance") {
  const std::vector<double> counts{10, 5};
  const auto unif = importance_to_client_weights(ImportanceVector({2.0 / 3, 1.0 / 3}), counts);
  CHECK(unif[0] == doctest::Approx(unif[1]));
  const auto one = importance_to_client_weights(ImportanceVector({1.0, 0.0}), counts);
  CHECK(one == std::vector<double>{1.0, 0.0});
}

TEST_CASE("trace csv has one row per round and client") {
  const auto trace = replay(hist_fresh(1, 2, 1, 1), WeightScheme::unit(), 3);
  std::ostringstream out;
  write_trace_csv(out, trace);
  const auto text = out.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 3 * 2);
  CHECK(text.rfind("round,client,mass,p_mt,q_t\n", 0) == 0);
}
