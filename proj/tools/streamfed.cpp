#include "streamfed/error.hpp"
#include "streamfed/experiment.hpp"
#include "streamfed/io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

using namespace streamfed;

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(path + " is not valid JSON: " + e.what());
  }
}

int cmd_run(const std::string& path) {
  const auto cfg = load_experiment_config(path);
  const auto summary = run_experiment(cfg);
  for (const auto& [name, entry] : summary["strategies"].items()) {
    std::printf("%-20s eta=%-10.4g %s = %.4f +- %.4f\n", name.c_str(),
                entry["eta"].get<double>(), summary["metric"].get<std::string>().c_str(),
                entry["final"]["mean"].get<double>(), entry["final"]["ci95"].get<double>());
  }
  if (summary.contains("p_hist_star")) {
    std::printf("c2/c1 = %.4g, p_hist* = %.4f\n", summary["c_ratio"]["mean"].get<double>(),
                summary["p_hist_star"]["mean"].get<double>());
  }
  std::printf("wrote %s\n", (cfg.output_dir / "summary.json").string().c_str());
  return 0;
}

int cmd_tune(const std::string& path) {
  const auto cfg = load_experiment_config(path);
  nlohmann::ordered_json out;
  for (const auto& s : cfg.strategies) {
    const double eta = tune_learning_rate(cfg, s);
    out[s.name()] = eta;
    std::printf("%-20s eta=%.6g\n", s.name().c_str(), eta);
  }
  write_text_file(cfg.output_dir / "tune.json", out.dump(2) + "\n");
  return 0;
}

int cmd_bounds(const std::string& path) {
  const auto cfg = parse_bound_config(read_json(path));
  const auto rows = run_bound_exploration(cfg);
  std::printf("wrote %zu rows to %s\n", rows.size(), cfg.output.string().c_str());
  return 0;
}

int cmd_adversarial(const std::vector<int>& horizons, double eta_scale) {
  if (horizons.empty()) throw InvalidArgument("--T needs at least one horizon");
  int largest = horizons.front();
  bool holds = false;
  for (int T : horizons) {
    const auto r = run_adversarial_check(T, eta_scale);
    std::printf("T=%d eta=%.6g eps_opt=%.6g sigma_hat_sq=%.6g ratio=%.6g\n", r.T, r.eta,
                r.eps_opt, r.sigma_hat_sq, r.sigma_hat_sq > 0 ? r.eps_opt / r.sigma_hat_sq : 0.0);
    for (const auto& c : r.cases) {
      std::printf("  z=(%d,%d) q=%.4f eps_opt=%.6g sigma_hat_sq=%.6g\n", c.z1, c.z2, c.q,
                  c.eps_opt, c.sigma_hat_sq);
    }
    if (T >= largest) {
      largest = T;
      holds = r.holds;
    }
  }
  if (!holds) {
    throw Error(ErrorKind::Acceptance,
                "eps_opt >= 0.15 * sigma_hat_sq fails at T=" + std::to_string(largest));
  }
  return 0;
}

int cmd_verify(const std::string& dir) {
  const auto problems = verify_run_dir(dir);
  for (const auto& p : problems) std::fprintf(stderr, "mismatch: %s\n", p.c_str());
  if (!problems.empty()) {
    throw Error(ErrorKind::Acceptance, std::to_string(problems.size()) + " mismatches");
  }
  std::printf("%s: summary.json matches metrics.csv\n", dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weighted federated learning over data streams"};
  app.require_subcommand(1);

  std::string config;
  std::string run_dir;
  std::vector<int> horizons{1000, 10000};
  double eta_scale = 1.0;

  auto* run = app.add_subcommand("run", "run an experiment config");
  run->add_option("config", config, "experiment JSON")->required();
  auto* tune = app.add_subcommand("tune", "pick learning rates on the validation split");
  tune->add_option("config", config, "experiment JSON")->required();
  auto* bounds = app.add_subcommand("bounds", "write p_hist* and psi curves");
  bounds->add_option("config", config, "bound grid JSON")->required();
  auto* adv = app.add_subcommand("adversarial", "lower-bound instance");
  adv->add_option("--T", horizons, "even horizons")->delimiter(',');
  adv->add_option("--eta-scale", eta_scale, "eta = scale / sqrt(T)");
  auto* verify = app.add_subcommand("verify", "recompute summary.json from metrics.csv");
  verify->add_option("run_dir", run_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::Config);
  }

  try {
    if (*run) return cmd_run(config);
    if (*tune) return cmd_tune(config);
    if (*bounds) return cmd_bounds(config);
    if (*adv) return cmd_adversarial(horizons, eta_scale);
    if (*verify) return cmd_verify(run_dir);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(ErrorKind::Numeric);
  }
  return 0;
}
