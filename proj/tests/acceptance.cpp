// One PASS/FAIL line per acceptance criterion.

#include "streamfed/bound.hpp"
#include "streamfed/experiment.hpp"
#include "streamfed/trainer.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>

using namespace streamfed;

namespace {

namespace tol {
constexpr double kOursVsUniform = 0.01;       // accuracy, as a fraction
constexpr double kHistoricalGap = 0.04;
constexpr double kPHistStar = 0.05;
constexpr double kCornerHist = 1e-4;
constexpr double kCornerUniform = 1e-6;
constexpr double kMonotone = 1e-4;
constexpr double kCurveEnds = 0.02;
constexpr double kNonNegative = 1e-12;
constexpr double kAdversarial = 3.0 / 20.0;
constexpr double kUniformNEff = 1e-9;
constexpr double kStdErrors = 3.0;
constexpr double kConvexity = 1e-12;
constexpr double kSimplex = 1e-8;
constexpr double kGradient = 1e-6;
constexpr double kFdStep = 1e-5;
}  // namespace tol

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

const std::filesystem::path kSource = STREAMFED_SOURCE_DIR;
const std::filesystem::path kOut = STREAMFED_BINARY_DIR "/acceptance_runs";

ExperimentConfig synthetic_config() {
  auto cfg = load_experiment_config(kSource / "configs" / "synthetic_table.json");
  cfg.output_dir = kOut / "synthetic_table";
  return cfg;
}

std::vector<double> random_simplex(std::size_t M, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(M);
  double s = 0;
  for (auto& x : p) s += (x = e(rng));
  for (auto& x : p) x /= s;
  return p;
}

Outcome criterion1() {
  const auto summary = run_experiment(synthetic_config());
  auto acc = [&](const char* s) {
    return summary["strategies"][s]["final"]["mean"].get<double>();
  };
  const double fresh = acc("Fresh"), hist = acc("Historical"), unif = acc("Uniform"),
               ours = acc("Ours");
  const bool ordering = std::min(unif, ours) > fresh && fresh > hist;
  const bool close = std::abs(ours - unif) <= tol::kOursVsUniform;
  const bool gap = unif - hist >= tol::kHistoricalGap;
  return {ordering && close && gap,
          fmt("Fresh %.4f Historical %.4f Uniform %.4f", fresh, hist, unif) +
              fmt(" Ours %.4f", ours)};
}

Outcome criterion2() {
  const auto cfg = synthetic_config();
  bool ok = true;
  std::string detail;
  for (auto seed : cfg.seeds) {
    const auto data = prepare_data(cfg, seed, DataPurpose::Final);
    const auto plan = plan_strategy(cfg, data, {StrategyKind::Ours, 0.0}, cfg.train.eta);
    const double target = data.n.sum_range(0, static_cast<std::size_t>(data.M_hist));
    const double h = plan.target->sum_range(0, static_cast<std::size_t>(data.M_hist));
    ok = ok && std::abs(h - target) <= tol::kPHistStar;
    detail += fmt("seed %.0f: c2/c1=%.4g p_hist*=%.4f; ", static_cast<double>(seed),
                  *plan.c_ratio, h);
  }
  return {ok, detail};
}

Outcome criterion3() {
  bool ok = true;
  double worst_hist = 0, worst_unif = 0;
  for (auto [M, Mh] : {std::pair{11, 10}, std::pair{50, 25}}) {
    for (double frac : {0.05, 0.2, 0.5}) {
      const auto n = case_study_sizes(M, Mh, frac);
      const auto hist = minimize_psi({0.0, 1.0, 0.0, n, Mh});
      worst_hist = std::max(worst_hist, std::abs(hist.p_hist() - 1.0));
      const auto unif = minimize_psi({0.0, 0.0, 1.0, n, Mh});
      for (std::size_t m = 0; m < n.size(); ++m) {
        worst_unif = std::max(worst_unif, std::abs(unif.p[m] - n[m]));
      }
    }
  }
  ok = worst_hist <= tol::kCornerHist && worst_unif <= tol::kCornerUniform;
  return {ok, fmt("max |p_hist-1| = %.3g, max |p-n| = %.3g", worst_hist, worst_unif)};
}

std::vector<BoundCurveRow> figure_grid() {
  BoundGridConfig g;
  g.output = kOut / "bounds" / "curves.csv";
  return run_bound_exploration(g);
}

Outcome criterion4() {
  const auto rows = figure_grid();
  bool ok = rows.size() == 120;
  std::string detail;
  for (double frac : {0.05, 0.2, 0.5}) {
    std::vector<BoundCurveRow> curve;
    for (const auto& r : rows) {
      if (r.N_hist_over_N == frac) curve.push_back(r);
    }
    double rise = 0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
      rise = std::max(rise, curve[i].p_hist_star - curve[i - 1].p_hist_star);
    }
    const double lo = curve.front().p_hist_star, hi = curve.back().p_hist_star;
    ok = ok && curve.size() == 40 && rise <= tol::kMonotone &&
         std::abs(lo - 1.0) <= tol::kCurveEnds && std::abs(hi - frac) <= tol::kCurveEnds;
    detail += fmt("frac %.2f: start %.4f end %.4f max rise %.2g; ", frac, lo, hi, rise);
  }
  return {ok, detail};
}

Outcome criterion5() {
  double worst = INFINITY;
  for (const auto& r : figure_grid()) worst = std::min(worst, r.psi_hist - r.psi_star);
  const double ratio = std::pow(10.0, -0.9);
  double lo = INFINITY, hi = -INFINITY;
  for (int i = 1; i <= 99; ++i) {
    const double frac = i / 100.0;
    const auto n = case_study_sizes(50, 25, frac);
    const BoundCoefficients c{0.0, 1.0, ratio, n, 25};
    const double diff = psi(strategy_importance({StrategyKind::Historical, 0}, n, 25), c) -
                        psi(n, c);
    lo = std::min(lo, diff);
    hi = std::max(hi, diff);
  }
  const bool ok = worst >= -tol::kNonNegative && lo < 0 && hi > 0;
  return {ok, fmt("min(psi_hist - psi*) = %.3g; psi_hist - psi_unif in [%.4f, %.4f]", worst,
                  lo, hi)};
}

Outcome criterion6() {
  const auto r = run_adversarial_check(10000);
  return {r.eps_opt >= tol::kAdversarial * r.sigma_hat_sq,
          fmt("eps_opt %.5g, sigma_hat_sq %.5g, needed eps_opt >= %.5g", r.eps_opt,
              r.sigma_hat_sq, tol::kAdversarial * r.sigma_hat_sq)};
}

Outcome criterion7() {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> pick(0, 1 << 30);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0;
  bool ok = true;
  for (int k = 0; k < 1000; ++k) {
    const int M = 1 + pick(rng) % 5, T = 1 + pick(rng) % 8;
    RoundTrace trace(M);
    std::set<std::pair<int, std::int64_t>> seen;
    for (int t = 1; t <= T; ++t) {
      RoundRecord rec;
      rec.round = t;
      do {
        rec.clients.clear();
        for (int m = 0; m < M; ++m) {
          ClientRoundRecord c;
          c.client_id = m;
          const int size = pick(rng) % 5;
          for (int j = 0; j < size; ++j) {
            const std::int64_t idx = 1 + pick(rng) % 12;
            if (std::find(c.indices.begin(), c.indices.end(), idx) != c.indices.end()) continue;
            c.indices.push_back(idx);
            c.weights.push_back(u(rng) < 0.2 ? 0.0 : u(rng));
            c.mass += c.weights.back();
          }
          rec.clients.push_back(c);
        }
      } while (!(rec.total_mass() > 0.0));
      for (const auto& c : rec.clients) {
        for (auto idx : c.indices) seen.insert({c.client_id, idx});
      }
      trace.append(rec);
    }
    const double n_eff = effective_sample_size(sample_importance(trace));
    const double N = static_cast<double>(seen.size());
    ok = ok && n_eff <= N * (1 + 1e-12);
    worst = std::max(worst, n_eff / N);
  }
  // Every sample seen in exactly one round with unit weight and equal mass.
  double uniform_err = 0;
  for (int M : {1, 3, 7}) {
    for (int T : {1, 5, 20}) {
      RoundTrace trace(M);
      for (int t = 1; t <= T; ++t) {
        RoundRecord rec;
        rec.round = t;
        for (int m = 0; m < M; ++m) {
          ClientRoundRecord c;
          c.client_id = m;
          for (int j = 0; j < 3; ++j) {
            c.indices.push_back(3 * (t - 1) + j + 1);
            c.weights.push_back(1.0);
          }
          c.mass = 3.0;
          rec.clients.push_back(c);
        }
        trace.append(rec);
      }
      const double N = 3.0 * M * T;
      uniform_err = std::max(
          uniform_err, std::abs(effective_sample_size(sample_importance(trace)) - N) / N);
    }
  }
  ok = ok && uniform_err <= tol::kUniformNEff;
  return {ok, fmt("max N_eff/N over random traces %.6f; uniform relative error %.3g", worst,
                  uniform_err)};
}

Outcome criterion8() {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int d = 3, draws = 100000;
  const auto loss = LossSpec::logistic(Domain::ball(d, 5), std::sqrt(3.0));
  double worst = 0;
  for (int k = 0; k < 20; ++k) {
    const int size = 2 + k % 7;
    const int K = 1 + static_cast<int>(rng() % static_cast<unsigned>(size - 1));
    std::vector<Example> xs(size);
    std::vector<double> w(size);
    for (int j = 0; j < size; ++j) {
      xs[j].features = Vector(d);
      for (int i = 0; i < d; ++i) xs[j].features[i] = u(rng);
      xs[j].label = u(rng) > 0 ? 1 : 0;
      xs[j].global_index = j + 1;
      w[j] = j == 0 ? 1.0 : std::abs(u(rng));
    }
    MemoryState mem(size);
    mem = update(mem, MemoryRule::KeepAll, xs);
    Vector theta(d);
    for (int i = 0; i < d; ++i) theta[i] = 2 * u(rng);
    double mass = 0;
    for (double x : w) mass += x;
    Vector exact = Vector::Zero(d);
    for (int j = 0; j < size; ++j) exact += (w[j] / mass) * raw_grad(loss, theta, xs[j]);
    Rng r(100 + k);
    Vector sum = Vector::Zero(d), sq = Vector::Zero(d);
    for (int i = 0; i < draws; ++i) {
      const Vector g = minibatch_gradient(loss, theta, mem, w, K, r);
      sum += g;
      sq += g.cwiseProduct(g);
    }
    const Vector mean = sum / draws;
    for (int i = 0; i < d; ++i) {
      const double se = std::sqrt(std::max(0.0, sq[i] / draws - mean[i] * mean[i]) / draws);
      const double z = se > 0 ? std::abs(mean[i] - exact[i]) / se
                              : (std::abs(mean[i] - exact[i]) <= 1e-12 ? 0.0 : INFINITY);
      worst = std::max(worst, z);
    }
  }
  return {worst <= tol::kStdErrors, fmt("largest deviation %.3f standard errors", worst)};
}

Outcome criterion9() {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int d = 4, n = 25, T = 100;
  auto xs = std::make_shared<std::vector<Example>>(n);
  for (auto& z : *xs) {
    z.features = Vector(d);
    for (int i = 0; i < d; ++i) z.features[i] = u(rng);
    z.label = u(rng) > 0 ? 1 : 0;
  }
  const auto ball = Domain::ball(d, 0.25);
  const auto loss = LossSpec::logistic(ball, 2.0);
  TrainConfig cfg;
  cfg.rounds = T;
  cfg.local_epochs = 1;
  cfg.minibatch = n;
  cfg.eta = 0.9;
  std::vector<ClientSetup> clients;
  clients.push_back({ClientStream(0, CountingProcessSpec::single_pulse(n), xs, 3),
                     MemoryRule::KeepAll, n});
  const Vector init = Vector::Constant(d, 0.3);
  const auto res = run(std::move(clients), WeightScheme::unit(), ball, loss, cfg, init);

  Vector theta = ball.project(init);
  int mismatches = 0, projected = 0;
  for (int t = 0; t < T; ++t) {
    mismatches += !(res.iterates[t] == theta);
    Vector g = Vector::Zero(d);
    for (const auto& z : *xs) accumulate_raw_grad(loss, theta, z, 1.0 / n, g);
    const Vector step = theta - cfg.eta * g;
    projected += !ball.contains(step, 0.0);
    theta = ball.project(step);
  }
  mismatches += !(res.final_iterate == theta);
  return {mismatches == 0,
          fmt("%.0f of %.0f iterates differ; projection active in %.0f rounds", mismatches,
              T + 1, projected)};
}

Outcome criterion10() {
  const auto cfg = synthetic_config();
  const auto data = prepare_data(cfg, cfg.seeds.front(), DataPurpose::Final);
  const auto other = prepare_data(cfg, cfg.seeds.front() + 1000, DataPurpose::Final);
  const Strategy hist{StrategyKind::Historical, 0.0};
  const double eta = 0.05;
  auto trajectory = [&](const PreparedData& d, bool swap_fresh) {
    const auto plan = plan_strategy(cfg, d, hist, eta);
    std::vector<ClientSetup> clients;
    for (std::size_t m = 0; m < d.clients.size(); ++m) {
      const bool fresh = static_cast<int>(m) >= d.M_hist;
      const auto& pool = swap_fresh && fresh ? other.train[m] : d.train[m];
      clients.push_back({ClientStream(static_cast<int>(m), d.clients[m].process, pool, d.seed),
                         d.clients[m].rule, d.clients[m].capacity});
    }
    TrainConfig tc = cfg.train;
    tc.eta = eta;
    tc.seed = d.seed;
    return run(std::move(clients), plan.scheme, d.domain, d.loss, tc,
               Vector::Zero(d.domain.dim()));
  };
  const auto a = trajectory(data, false);
  const auto b = trajectory(data, true);
  bool same = a.iterates.size() == b.iterates.size() && a.averaged_model == b.averaged_model;
  for (std::size_t t = 0; same && t < a.iterates.size(); ++t) same = a.iterates[t] == b.iterates[t];
  const double sigma =
      estimate_sigma_bar_sq(a.trace, a.iterates, a.samples, data.loss, data.domain).at_iterates;
  const bool fresh_differs = !((*data.train.back())[0].features == (*other.train.back())[0].features);
  return {same && sigma == 0.0 && fresh_differs,
          fmt("sigma_hat_sq = %.3g; trajectories identical: %.0f", sigma, same ? 1.0 : 0.0)};
}

Outcome criterion11() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = -INFINITY;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t M = 2 + k % 7;
    const int Mh = 1 + static_cast<int>(rng() % (M - 1));
    const BoundCoefficients c{u(rng), u(rng) * 2, u(rng) * 2,
                              ImportanceVector(random_simplex(M, rng)), Mh};
    const auto p = random_simplex(M, rng), q = random_simplex(M, rng);
    const double a = u(rng);
    std::vector<double> mix(M);
    for (std::size_t i = 0; i < M; ++i) mix[i] = a * p[i] + (1 - a) * q[i];
    worst = std::max(worst, psi(mix, c) - (a * psi(p, c) + (1 - a) * psi(q, c)));
  }
  // Exact projection by enumerating supports.
  std::normal_distribution<double> gauss;
  double proj_err = 0;
  for (int k = 0; k < 100; ++k) {
    const int M = 1 + k % 5;
    std::vector<double> v(M);
    for (auto& x : v) x = gauss(rng) * 2;
    double best_d = INFINITY;
    std::vector<double> best;
    for (int mask = 1; mask < (1 << M); ++mask) {
      double s = 0;
      int cnt = 0;
      for (int i = 0; i < M; ++i) {
        if (mask >> i & 1) {
          s += v[i];
          ++cnt;
        }
      }
      std::vector<double> x(M, 0.0);
      bool feasible = true;
      for (int i = 0; i < M; ++i) {
        if (mask >> i & 1) feasible = feasible && (x[i] = v[i] - (s - 1) / cnt) >= 0;
      }
      double dist = 0;
      for (int i = 0; i < M; ++i) dist += (x[i] - v[i]) * (x[i] - v[i]);
      if (feasible && dist < best_d) {
        best_d = dist;
        best = x;
      }
    }
    const auto p = project_simplex_raw(v);
    for (int i = 0; i < M; ++i) proj_err = std::max(proj_err, std::abs(p[i] - best[i]));
  }
  return {worst <= tol::kConvexity && proj_err <= tol::kSimplex,
          fmt("max convexity violation %.3g; max projection error %.3g", worst, proj_err)};
}

Outcome criterion12() {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double h = tol::kFdStep;
  double worst = 0;
  auto check = [&](const Vector& g, const std::function<double(const Vector&)>& f,
                   const Vector& x) {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      Vector a = x, b = x;
      a[i] += h;
      b[i] -= h;
      const double fd = (f(a) - f(b)) / (2 * h);
      worst = std::max(worst, std::abs(g[i] - fd) / std::max(1.0, std::abs(g[i])));
    }
  };
  const int d = 6;
  const auto ball = Domain::ball(d, 2.0);
  const auto box = Domain::box(Vector::Constant(2, -1), Vector::Constant(2, 1));
  const std::vector<std::pair<LossSpec, const Domain*>> losses{
      {LossSpec::logistic(ball, std::sqrt(d)), &ball},
      {LossSpec::squared(ball, std::sqrt(d), 2.0), &ball},
      {LossSpec::adversarial_two_point(), &box}};
  for (const auto& [loss, dom] : losses) {
    for (int k = 0; k < 100; ++k) {
      Example z;
      const auto dim = dom->dim();
      if (loss.kind == LossKind::AdversarialTwoPoint) {
        z.label = 1 + k % 2;
      } else {
        z.features = Vector(dim);
        for (Eigen::Index i = 0; i < dim; ++i) z.features[i] = u(rng);
        z.label = loss.kind == LossKind::Logistic ? k % 2 : 2 * u(rng);
      }
      Vector theta(dim);
      for (Eigen::Index i = 0; i < dim; ++i) theta[i] = u(rng);
      theta = dom->project(theta * 0.99);
      check(loss_grad(loss, *dom, theta, z),
            [&](const Vector& t) { return raw_loss(loss, t, z); }, theta);
    }
  }
  for (int k = 0; k < 100; ++k) {
    const std::size_t M = 3 + k % 6;
    const BoundCoefficients c{0.0, 1.0, 0.1 + std::abs(u(rng)),
                              ImportanceVector(random_simplex(M, rng)), 1 + k % 2};
    const auto p = random_simplex(M, rng);
    const auto g = psi_subgradient(p, c);
    const Vector x = Eigen::Map<const Vector>(p.data(), static_cast<Eigen::Index>(M));
    check(Eigen::Map<const Vector>(g.data(), static_cast<Eigen::Index>(M)),
          [&](const Vector& t) { return psi(std::span<const double>(t.data(), M), c); }, x);
  }
  return {worst <= tol::kGradient, fmt("max relative error %.3g", worst)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> which;
  app.add_option("--criterion", which, "criteria to run (default: all)");
  CLI11_PARSE(app, argc, argv);
  const std::vector<std::function<Outcome()>> all{
      criterion1, criterion2, criterion3, criterion4,  criterion5,  criterion6,
      criterion7, criterion8, criterion9, criterion10, criterion11, criterion12};
  if (which.empty()) {
    for (int i = 1; i <= 12; ++i) which.push_back(i);
  }
  bool ok = true;
  for (int i : which) {
    if (i < 1 || i > 12) {
      std::fprintf(stderr, "no criterion %d\n", i);
      return 2;
    }
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = all[static_cast<std::size_t>(i - 1)]();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %d: %s (%.1fs) %s\n", i, o.pass ? "PASS" : "FAIL", secs,
                o.detail.c_str());
    ok = ok && o.pass;
  }
  return ok ? 0 : 4;
}
