#include "streamfed/bound.hpp"

#include "streamfed/io.hpp"
#include "streamfed/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <random>

namespace streamfed {
namespace {

double historical_mass(const ImportanceVector& n, int M_hist) {
  return n.sum_range(0, static_cast<std::size_t>(M_hist));
}

std::vector<double> group_allocation(const ImportanceVector& n, int M_hist,
                                     double h) {
  const std::size_t M = n.size();
  const auto split = static_cast<std::size_t>(M_hist);
  const double nh = historical_mass(n, M_hist);
  const double nf = n.sum_range(split, M);
  std::vector<double> p(M, 0.0);
  for (std::size_t m = 0; m < M; ++m) {
    if (m < split) {
      if (h > 0.0) p[m] = h * n[m] / nh;
    } else if (h < 1.0) {
      p[m] = (1.0 - h) * n[m] / nf;
    }
  }
  return p;
}

}  // namespace

void BoundCoefficients::validate() const {
  if (!(c0 >= 0.0) || !(c1 >= 0.0) || !(c2 >= 0.0) || !std::isfinite(c0) ||
      !std::isfinite(c1) || !std::isfinite(c2)) {
    throw InvalidArgument("bound coefficients must be finite and nonnegative");
  }
  if (n.size() == 0) throw InvalidArgument("bound coefficients: empty size vector");
  for (std::size_t m = 0; m < n.size(); ++m) {
    if (!(n[m] > 0.0)) {
      throw InvalidArgument("bound coefficients: client " + std::to_string(m) +
                            " has n_m = 0");
    }
  }
  if (M_hist < 0 || M_hist > static_cast<int>(n.size())) {
    throw InvalidArgument("bound coefficients: M_hist out of range");
  }
}

double psi(std::span<const double> p, const BoundCoefficients& c) {
  if (p.size() != c.M()) throw InvalidArgument("psi: p and n differ in length");
  double fresh = 0.0;
  double weighted = 0.0;
  for (std::size_t m = 0; m < p.size(); ++m) {
    if (static_cast<int>(m) >= c.M_hist) fresh += p[m] * p[m];
    if (p[m] != 0.0) {
      if (!(c.n[m] > 0.0)) throw InvalidArgument("psi: p_m > 0 where n_m = 0");
      weighted += p[m] * p[m] / c.n[m];
    }
  }
  return c.c0 + c.c1 * std::sqrt(fresh) + c.c2 * std::sqrt(weighted);
}

double psi(const ImportanceVector& p, const BoundCoefficients& c) {
  return psi(std::span<const double>(p.values()), c);
}

std::vector<double> psi_subgradient(std::span<const double> p,
                                    const BoundCoefficients& c) {
  if (p.size() != c.M()) throw InvalidArgument("psi: p and n differ in length");
  double fresh = 0.0;
  double weighted = 0.0;
  for (std::size_t m = 0; m < p.size(); ++m) {
    if (static_cast<int>(m) >= c.M_hist) fresh += p[m] * p[m];
    weighted += p[m] * p[m] / c.n[m];
  }
  const double rf = std::sqrt(fresh);
  const double rw = std::sqrt(weighted);
  std::vector<double> g(p.size(), 0.0);
  for (std::size_t m = 0; m < p.size(); ++m) {
    if (rf > 0.0 && static_cast<int>(m) >= c.M_hist) g[m] += c.c1 * p[m] / rf;
    if (rw > 0.0) g[m] += c.c2 * p[m] / (c.n[m] * rw);
  }
  return g;
}

std::vector<double> project_simplex_raw(std::span<const double> v) {
  if (v.empty()) throw InvalidArgument("project_simplex: empty vector");
  for (double x : v) {
    if (!std::isfinite(x)) throw InvalidArgument("project_simplex: non-finite entry");
  }
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumsum += u[j];
    const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) theta = t;
  }
  std::vector<double> p(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) p[j] = std::max(v[j] - theta, 0.0);
  return p;
}

ImportanceVector project_simplex(std::span<const double> v) {
  auto p = project_simplex_raw(v);
  return ImportanceVector(std::move(p), 1e-10);
}

PsiNonConvergence::PsiNonConvergence(const std::string& what, PsiSolution best)
    : NumericError(what), best_(std::move(best)) {}

PsiSolution minimize_psi(const BoundCoefficients& c, double tol, int max_iters) {
  c.validate();
  if (!(tol >= 0.0) || max_iters < 1) {
    throw InvalidArgument("minimize_psi: tol must be >= 0 and max_iters >= 1");
  }
  const std::size_t M = c.M();
  std::vector<double> p = c.n.values();
  std::vector<double> best_p = p;
  double best = psi(p, c);
  int iterations = 0;
  bool converged = false;

  // Restarted from the best point with a halved η₀ whenever a run stalls,
  // until η₀ drops below a floor tied to the smallest n_m.
  const double scale = c.c1 + c.c2;
  if (scale == 0.0) {
    converged = true;
  } else {
    const auto& nv = c.n.values();
    const double eta_floor = 1e-3 * *std::min_element(nv.begin(), nv.end()) / scale;
    double eta0 = 1.0 / scale;
    std::vector<double> step(M);
    while (iterations < max_iters) {
      p = best_p;
      double window_start = best;
      bool stalled = false;
      for (int k = 1; iterations < max_iters; ++k) {
        const auto g = psi_subgradient(p, c);
        const double eta = eta0 / std::sqrt(static_cast<double>(k));
        for (std::size_t m = 0; m < M; ++m) step[m] = p[m] - eta * g[m];
        p = project_simplex_raw(step);
        const double v = psi(p, c);
        if (v < best) {
          best = v;
          best_p = p;
        }
        ++iterations;
        if (k % 100 == 0) {
          if (window_start - best < tol) {
            stalled = true;
            break;
          }
          window_start = best;
        }
      }
      if (!stalled) break;
      if (eta0 <= eta_floor) {
        converged = true;
        break;
      }
      eta0 *= 0.5;
    }
  }

  PsiSolution sol;
  sol.p = ImportanceVector(best_p, 1e-10);
  sol.value = best;
  sol.iterations = iterations;
  sol.M_hist = c.M_hist;
  if (!converged) {
    throw PsiNonConvergence("minimize_psi: no convergence within " +
                                std::to_string(max_iters) + " iterations",
                            sol);
  }

  // Domination check against reference allocations and random points.
  const double slack = 1e-9 * (1.0 + std::abs(best));
  std::vector<std::vector<double>> candidates{c.n.values()};
  if (c.M_hist > 0) candidates.push_back(group_allocation(c.n, c.M_hist, 1.0));
  if (c.M_hist < static_cast<int>(M)) {
    candidates.push_back(group_allocation(c.n, c.M_hist, 0.0));
  }
  auto rng = make_rng(0, StreamPurpose::Probe, M, static_cast<std::uint64_t>(c.M_hist));
  std::exponential_distribution<double> expo(1.0);
  for (int r = 0; r < 1000; ++r) {
    std::vector<double> x(M);
    double s = 0.0;
    for (auto& xi : x) s += (xi = expo(rng));
    for (auto& xi : x) xi /= s;
    candidates.push_back(std::move(x));
  }
  for (const auto& cand : candidates) {
    const double v = psi(cand, c);
    if (v + slack < best) {
      throw PsiNonConvergence("minimize_psi: result beaten by a reference point (" +
                                  format_double(v) + " < " + format_double(best) + ")",
                              sol);
    }
  }
  return sol;
}

double estimate_c_ratio(const EstimatedConstants& k) {
  if (k.M <= k.M_hist) throw InvalidArgument("c ratio: needs M > M_hist");
  if (!(k.G_hat > 0.0) || !(k.D_hat > 0.0)) {
    throw InvalidArgument("c ratio: G and D estimates must be positive");
  }
  if (k.N < 1 || k.d < 1) throw InvalidArgument("c ratio: N and d must be positive");
  const double num = k.B_hat + std::sqrt(static_cast<double>(k.d) / static_cast<double>(k.N));
  return num / (k.G_hat * k.D_hat * std::sqrt(static_cast<double>(k.M - k.M_hist)));
}

EstimatedConstants estimate_constants(
    std::span<const std::vector<Example>> historical_data, const LossSpec& loss,
    const Domain& domain, const Vector& theta_init, const WarmupConfig& warmup,
    std::int64_t N, int M) {
  if (historical_data.empty()) throw InvalidArgument("constants: no historical clients");
  if (warmup.steps < 0 || !(warmup.eta >= 0.0) || warmup.minibatch < 1) {
    throw InvalidArgument("constants: invalid warmup configuration");
  }
  EstimatedConstants k;
  k.d = static_cast<int>(theta_init.size());
  k.N = N;
  k.M = M;
  k.M_hist = static_cast<int>(historical_data.size());
  const Vector start = domain.project(theta_init);
  for (std::size_t m = 0; m < historical_data.size(); ++m) {
    const auto& data = historical_data[m];
    if (data.empty()) {
      throw InvalidArgument("constants: historical client " + std::to_string(m) +
                            " has no samples");
    }
    auto rng = make_rng(warmup.seed, StreamPurpose::Warmup, m, 0);
    Vector theta = start;
    const std::size_t batch = std::min<std::size_t>(warmup.minibatch, data.size());
    std::vector<std::size_t> order(data.size());
    for (int s = 0; s < warmup.steps; ++s) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = 0; i < batch; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, data.size() - 1);
        std::swap(order[i], order[pick(rng)]);
      }
      Vector g = Vector::Zero(theta.size());
      for (std::size_t i = 0; i < batch; ++i) {
        const Example& z = data[order[i]];
        const Vector gi = loss_grad(loss, domain, theta, z);
        k.B_hat = std::max(k.B_hat, loss_value(loss, domain, theta, z));
        k.G_hat = std::max(k.G_hat, gi.norm());
        g += gi / static_cast<double>(batch);
      }
      theta = domain.project(theta - warmup.eta * g);
    }
    k.D_hat = std::max(k.D_hat, (theta - start).norm());
  }
  return k;
}

std::string Strategy::name() const {
  switch (kind) {
    case StrategyKind::Fresh: return "Fresh";
    case StrategyKind::Historical: return "Historical";
    case StrategyKind::Uniform: return "Uniform";
    case StrategyKind::Ours: return "Ours";
    case StrategyKind::FixedPHist: {
      char buf[48];
      std::snprintf(buf, sizeof buf, "FixedPHist(%g)", p_hist);
      return buf;
    }
  }
  return "?";
}

Strategy Strategy::parse(const std::string& text) {
  if (text == "Fresh") return {StrategyKind::Fresh, 0.0};
  if (text == "Historical") return {StrategyKind::Historical, 0.0};
  if (text == "Uniform") return {StrategyKind::Uniform, 0.0};
  if (text == "Ours") return {StrategyKind::Ours, 0.0};
  const std::string prefix = "FixedPHist(";
  if (text.rfind(prefix, 0) == 0 && text.size() > prefix.size() + 1 &&
      text.back() == ')') {
    const std::string body = text.substr(prefix.size(), text.size() - prefix.size() - 1);
    std::size_t used = 0;
    double h = 0.0;
    try {
      h = std::stod(body, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == body.size() && h >= 0.0 && h <= 1.0) return fixed(h);
  }
  throw InvalidArgument("unknown strategy '" + text + "'");
}

ImportanceVector strategy_importance(const Strategy& s, const ImportanceVector& n,
                                     int M_hist,
                                     const std::optional<BoundCoefficients>& c_opt) {
  const int M = static_cast<int>(n.size());
  if (M_hist < 0 || M_hist > M) throw InvalidArgument("strategy: M_hist out of range");
  for (std::size_t m = 0; m < n.size(); ++m) {
    if (!(n[m] > 0.0)) throw InvalidArgument("strategy: n_m must be positive");
  }
  switch (s.kind) {
    case StrategyKind::Uniform:
      return n;
    case StrategyKind::Historical:
      if (M_hist == 0) throw InvalidArgument("Historical strategy without historical clients");
      return ImportanceVector(group_allocation(n, M_hist, 1.0), 1e-10);
    case StrategyKind::Fresh:
      if (M_hist == M) throw InvalidArgument("Fresh strategy without fresh clients");
      return ImportanceVector(group_allocation(n, M_hist, 0.0), 1e-10);
    case StrategyKind::FixedPHist:
      if (!(s.p_hist >= 0.0 && s.p_hist <= 1.0)) {
        throw InvalidArgument("FixedPHist: p_hist must lie in [0, 1]");
      }
      if (s.p_hist > 0.0 && M_hist == 0) {
        throw InvalidArgument("FixedPHist: p_hist > 0 without historical clients");
      }
      if (s.p_hist < 1.0 && M_hist == M) {
        throw InvalidArgument("FixedPHist: p_hist < 1 without fresh clients");
      }
      return ImportanceVector(group_allocation(n, M_hist, s.p_hist), 1e-10);
    case StrategyKind::Ours:
      if (!c_opt) throw InvalidArgument("Ours strategy requires bound coefficients");
      if (c_opt->M() != n.size() || c_opt->M_hist != M_hist) {
        throw InvalidArgument("Ours strategy: coefficients do not match the clients");
      }
      return minimize_psi(*c_opt).p;
  }
  throw InvalidArgument("unknown strategy");
}

ImportanceVector case_study_sizes(int M, int M_hist, double hist_fraction) {
  if (M < 2 || M_hist < 1 || M_hist >= M) {
    throw InvalidArgument("case study needs 1 <= M_hist < M");
  }
  if (!(hist_fraction > 0.0 && hist_fraction < 1.0)) {
    throw InvalidArgument("case study: historical fraction must lie in (0, 1)");
  }
  std::vector<double> n(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    n[static_cast<std::size_t>(m)] = m < M_hist ? hist_fraction / M_hist
                                                : (1.0 - hist_fraction) / (M - M_hist);
  }
  return ImportanceVector(std::move(n), 1e-10);
}

std::vector<BoundCurveRow> emit_bound_curves(std::span<const double> ratios,
                                             std::span<const double> hist_fractions,
                                             int M, int M_hist) {
  if (ratios.empty() || hist_fractions.empty()) {
    throw InvalidArgument("bound curves: empty grid");
  }
  std::vector<BoundCurveRow> rows;
  rows.reserve(ratios.size() * hist_fractions.size());
  for (double frac : hist_fractions) {
    const auto n = case_study_sizes(M, M_hist, frac);
    const auto hist = group_allocation(n, M_hist, 1.0);
    for (double ratio : ratios) {
      if (!(ratio >= 0.0)) throw InvalidArgument("bound curves: negative ratio");
      BoundCoefficients c{0.0, 1.0, ratio, n, M_hist};
      const auto sol = minimize_psi(c);
      BoundCurveRow row;
      row.c2_over_c1 = ratio;
      row.N_hist_over_N = frac;
      row.p_hist_star = sol.p_hist();
      for (std::size_t m = 0; m < n.size(); ++m) {
        row.n_eff_term += sol.p[m] * sol.p[m] / n[m];
        if (static_cast<int>(m) >= M_hist) row.noise_term += sol.p[m] * sol.p[m];
      }
      row.noise_term = std::sqrt(row.noise_term);
      row.psi_star = sol.value;
      row.psi_hist = psi(hist, c);
      row.psi_unif = psi(n, c);
      rows.push_back(row);
    }
  }
  return rows;
}

void write_bound_curves(std::ostream& out, std::span<const BoundCurveRow> rows) {
  out << "c2_over_c1,N_hist_over_N,p_hist_star,n_eff_term,noise_term,psi_star,"
         "psi_hist,psi_unif\n";
  for (const auto& r : rows) {
    out << format_double(r.c2_over_c1) << ',' << format_double(r.N_hist_over_N) << ','
        << format_double(r.p_hist_star) << ',' << format_double(r.n_eff_term) << ','
        << format_double(r.noise_term) << ',' << format_double(r.psi_star) << ','
        << format_double(r.psi_hist) << ',' << format_double(r.psi_unif) << '\n';
  }
}

std::vector<double> log_grid(double lo, double hi, int count) {
  if (!(lo > 0.0) || !(hi >= lo) || count < 1) {
    throw InvalidArgument("log grid: need 0 < lo <= hi and count >= 1");
  }
  if (count == 1) return {lo};
  std::vector<double> g(static_cast<std::size_t>(count));
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (int i = 0; i < count; ++i) {
    g[static_cast<std::size_t>(i)] =
        std::pow(10.0, a + (b - a) * static_cast<double>(i) / (count - 1));
  }
  g.front() = lo;
  g.back() = hi;
  return g;
}

}  // namespace streamfed
