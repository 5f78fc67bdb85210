// i2c experiment runner.
//
// Subcommands:
//   lqr-equiv                     LQR equivalence on the linear test system
//   trajopt <env>                 EM trajectory optimization + controller
//   eval <env> <controller.json>  Monte-Carlo evaluation of a controller
//
// Every key of the flat key=value config is also a same-named flag (e.g.
// --em.alpha_init); precedence is flag > config file > environment registry.
// Every run echoes its fully resolved config to <out>/config.txt; re-running
// from that echo reproduces all artifacts byte-identically.
//
// Exit codes: 0 success, 2 config error, 3 numerical failure, 4 divergence
// during evaluation.

#include "i2c/controller.hpp"
#include "i2c/engine.hpp"
#include "i2c/gaussian.hpp"
#include "i2c/lqr.hpp"
#include "i2c/models.hpp"
#include "i2c/serialize.hpp"
#include "i2c/sim_eval.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace {

using nlohmann::json;
using namespace i2c;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Keys every subcommand understands. Informational keys (command, env,
// controller) are echoed for provenance and ignored on load.
const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "command",         "env",
      "controller",      "seed",
      "out",             "em.alpha_init",
      "em.delta_alpha_inv", "em.max_iters",
      "em.convergence_tol", "em.terminal_mode",
      "em.kappa",        "env.horizon",
      "env.dt",          "prior.sig_u0",
      "prior.u_mean_init",  "obs.theta_diag",
      "obs.z_g",         "eval.trials",
      "eval.zero_noise", "lqr.alpha",
      "lqr.sig_u"};
  return keys;
}

double cfg_double(const ConfigMap& cfg, const std::string& key) {
  const std::string& s = cfg.at(key);
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not a number: '" + s + "'");
  }
}

long long cfg_int(const ConfigMap& cfg, const std::string& key) {
  const std::string& s = cfg.at(key);
  try {
    size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not an integer: '" + s + "'");
  }
}

std::vector<double> cfg_double_list(const ConfigMap& cfg,
                                    const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(cfg.at(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    ConfigMap one{{key, config_trim(item)}};
    out.push_back(cfg_double(one, key));
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

// registry defaults <- config file <- CLI flags, with unknown-key checking.
ConfigMap resolve_config(ConfigMap registry, const std::string& config_path,
                         const ConfigMap& flags) {
  if (!config_path.empty()) {
    ConfigMap file;
    try {
      file = parse_config_file(config_path);
    } catch (const std::exception& ex) {
      throw ConfigError(ex.what());
    }
    for (const auto& [k, v] : file) {
      if (!known_keys().count(k))
        throw ConfigError("unknown config key: " + k);
      registry[k] = v;
    }
  }
  for (const auto& [k, v] : flags) registry[k] = v;
  return registry;
}

std::filesystem::path prepare_out(const ConfigMap& cfg) {
  const std::filesystem::path out(cfg.at("out"));
  std::filesystem::create_directories(out);
  write_file((out / "config.txt").string(), emit_config(cfg));
  return out;
}

void apply_env_overrides(Environment& env, const ConfigMap& cfg) {
  if (cfg.count("env.horizon")) {
    const long long T = cfg_int(cfg, "env.horizon");
    if (T < 1) throw ConfigError("env.horizon must be >= 1");
    env.horizon = static_cast<int>(T);
  }
  if (cfg.count("prior.sig_u0")) env.sig_u0 = cfg_double(cfg, "prior.sig_u0");
  if (cfg.count("prior.u_mean_init"))
    env.u_prior_mean_init = cfg_double(cfg, "prior.u_mean_init");
  if (cfg.count("obs.theta_diag")) {
    const auto d = cfg_double_list(cfg, "obs.theta_diag");
    if (static_cast<int>(d.size()) != env.d_z)
      throw ConfigError("obs.theta_diag: expected " + std::to_string(env.d_z) +
                        " entries");
    env.obs.Theta = Eigen::Map<const Vecd>(d.data(), d.size()).asDiagonal();
  }
  if (cfg.count("obs.z_g")) {
    const auto d = cfg_double_list(cfg, "obs.z_g");
    if (static_cast<int>(d.size()) != env.d_z)
      throw ConfigError("obs.z_g: expected " + std::to_string(env.d_z) +
                        " entries");
    env.obs.z_g = Eigen::Map<const Vecd>(d.data(), d.size());
  }
}

Environment build_environment(const std::string& name, const ConfigMap& cfg) {
  Environment env;
  try {
    env = cfg.count("env.dt")
              ? make_environment(name, cfg_double(cfg, "env.dt"))
              : make_environment(name);
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
  apply_env_overrides(env, cfg);
  return env;
}

EmConfig build_em_config(const Environment& env, const ConfigMap& cfg) {
  EmConfig em;
  em.alpha_init = cfg.count("em.alpha_init")
                      ? cfg_double(cfg, "em.alpha_init")
                      : env.alpha0;
  em.delta_alpha_inv = cfg.count("em.delta_alpha_inv")
                           ? cfg_double(cfg, "em.delta_alpha_inv")
                           : env.delta_alpha_inv;
  em.max_iters = cfg.count("em.max_iters")
                     ? static_cast<int>(cfg_int(cfg, "em.max_iters"))
                     : env.default_max_iters;
  if (cfg.count("em.convergence_tol"))
    em.convergence_tol = cfg_double(cfg, "em.convergence_tol");
  if (cfg.count("em.kappa")) em.kappa = cfg_double(cfg, "em.kappa");
  if (cfg.count("em.terminal_mode")) {
    const std::string& m = cfg.at("em.terminal_mode");
    if (m == "qf")
      em.terminal_mode = TerminalMode::QfEqualsQ;
    else if (m == "kappa")
      em.terminal_mode = TerminalMode::KappaScale;
    else
      throw ConfigError("em.terminal_mode must be 'qf' or 'kappa', got '" + m +
                        "'");
  }
  em.seed = static_cast<std::uint64_t>(cfg_int(cfg, "seed"));
  if (!(em.alpha_init > 0.0)) throw ConfigError("em.alpha_init must be > 0");
  if (!(em.delta_alpha_inv > 0.0 && em.delta_alpha_inv <= 1.0))
    throw ConfigError("em.delta_alpha_inv must be in (0, 1]");
  return em;
}

std::string gains_csv(const LinearGaussianController& c) {
  const auto d_u = c.K.empty() ? 0 : c.K.front().rows();
  const auto d_x = c.K.empty() ? 0 : c.K.front().cols();
  std::vector<std::string> hdr{"t"};
  for (Eigen::Index i = 0; i < d_u; ++i)
    for (Eigen::Index j = 0; j < d_x; ++j)
      hdr.push_back("K_" + std::to_string(i) + "_" + std::to_string(j));
  for (Eigen::Index i = 0; i < d_u; ++i) hdr.push_back("k_" + std::to_string(i));
  std::string csv = csv_row(hdr);
  for (int t = 0; t < c.horizon(); ++t) {
    std::vector<std::string> row{std::to_string(t)};
    for (Eigen::Index i = 0; i < d_u; ++i)
      for (Eigen::Index j = 0; j < d_x; ++j)
        row.push_back(fmt_double(c.K[t](i, j)));
    for (Eigen::Index i = 0; i < d_u; ++i) row.push_back(fmt_double(c.k[t][i]));
    csv += csv_row(row);
  }
  return csv;
}

// ---------------------------------------------------------------------------
// lqr-equiv
// ---------------------------------------------------------------------------

int run_lqr_equiv(const ConfigMap& cfg) {
  const auto out = prepare_out(cfg);
  Environment env = make_environment("linear_c1");
  apply_env_overrides(env, cfg);
  env.sig_u0 = cfg.count("lqr.sig_u") ? cfg_double(cfg, "lqr.sig_u") : 100.0;
  const double alpha =
      cfg.count("lqr.alpha") ? cfg_double(cfg, "lqr.alpha") : 1e5;
  const int T = env.horizon;

  // ground truth by dynamic programming
  LinearDynamics dyn;
  env.step_jac(env.x0, Vecd::Zero(1), dyn.A, dyn.B);
  dyn.a = env.step(Vecd::Zero(2), Vecd::Zero(1));
  const Matd Q = env.obs.Theta.topLeftCorner(2, 2);
  const Matd R = env.obs.Theta.bottomRightCorner(1, 1);
  const auto [lqr, val] =
      solve_lqr(dyn, Q, R, env.obs.Q_f, env.x_goal, Vecd::Zero(1), T);

  // i2c: one forward/backward sweep at fixed alpha
  const Priors priors = default_priors(env);
  EmConfig em;
  em.terminal_mode = TerminalMode::QfEqualsQ;
  std::vector<MessageState> msgs = forward_pass(env, priors, alpha);
  backward_pass(env, msgs, alpha, em);
  const LinearGaussianController i2c_ctrl =
      extract_controller(env, msgs, priors, alpha);

  write_file((out / "gains_lqr.csv").string(), gains_csv(lqr));
  write_file((out / "gains_i2c.csv").string(), gains_csv(i2c_ctrl));

  // per-timestep relative error in the max norm
  double errK = 0.0, errk = 0.0;
  for (int t = 0; t < T; ++t) {
    const double nK = lqr.K[t].cwiseAbs().maxCoeff();
    const double nk = lqr.k[t].cwiseAbs().maxCoeff();
    errK = std::max(errK, (i2c_ctrl.K[t] - lqr.K[t]).cwiseAbs().maxCoeff() /
                              std::max(nK, 1e-300));
    errk = std::max(errk, (i2c_ctrl.k[t] - lqr.k[t]).cwiseAbs().maxCoeff() /
                              std::max(nk, 1e-300));
  }
  json diff;
  diff["alpha"] = alpha;
  diff["horizon"] = T;
  diff["max_rel_error_K"] = errK;
  diff["max_rel_error_k"] = errk;
  diff["max_rel_error"] = std::max(errK, errk);
  write_file((out / "gains_diff.json").string(), diff.dump(2) + "\n");
  std::cout << "lqr-equiv: max relative gain error " << std::max(errK, errk)
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// trajopt
// ---------------------------------------------------------------------------

std::string trajectory_csv(const Environment& env, const std::vector<Vecd>& xs,
                           const std::vector<Vecd>& us) {
  std::vector<std::string> hdr{"t"};
  for (int i = 0; i < env.d_x; ++i) hdr.push_back("x_" + std::to_string(i));
  for (int i = 0; i < env.d_u; ++i) hdr.push_back("u_" + std::to_string(i));
  hdr.push_back("cost_increment");
  std::string csv = csv_row(hdr);
  const int T = static_cast<int>(us.size());
  for (int t = 0; t <= T; ++t) {
    const Vecd u = t < T ? us[t] : Vecd(Vecd::Zero(env.d_u));
    const Vecd r = env.obs.feature(xs[t], u) - env.obs.z_g;
    std::vector<std::string> row{std::to_string(t)};
    for (int i = 0; i < env.d_x; ++i) row.push_back(fmt_double(xs[t][i]));
    for (int i = 0; i < env.d_u; ++i) row.push_back(fmt_double(u[i]));
    row.push_back(fmt_double(r.dot(env.obs.Theta * r)));
    csv += csv_row(row);
  }
  return csv;
}

int run_trajopt(const std::string& env_name, const ConfigMap& cfg) {
  const auto out = prepare_out(cfg);
  const Environment env = build_environment(env_name, cfg);
  const EmConfig em = build_em_config(env, cfg);
  const Priors priors = default_priors(env);

  TrajoptResult res;
  try {
    res = solve_trajopt(env, priors, em);
  } catch (const NumericalError& ex) {
    // abort record: the iteration index is embedded in the message
    const std::string msg = ex.what();
    int iteration = -1;
    const auto pos = msg.rfind("iteration ");
    if (pos != std::string::npos)
      iteration = std::atoi(msg.c_str() + pos + 10);
    json status;
    status["status"] = "aborted";
    status["iteration"] = iteration;
    status["message"] = msg;
    write_file((out / "status.json").string(), status.dump(2) + "\n");
    std::cerr << "trajopt aborted: " << msg << "\n";
    return 3;
  }

  std::string conv = csv_row({"iteration", "predicted_cost", "alpha", "nll"});
  for (const TraceRow& r : res.em.trace)
    conv += csv_row({std::to_string(r.iteration), fmt_double(r.predicted_cost),
                     fmt_double(r.alpha), fmt_double(r.nll)});
  write_file((out / "convergence.csv").string(), conv);

  const Rollout roll = rollout(env, res.controller, false, 0);
  write_file((out / "trajectory.csv").string(),
             trajectory_csv(env, roll.xs, roll.us));
  write_file((out / "controller.json").string(),
             controller_to_json(res.controller).dump(2) + "\n");

  json status;
  status["status"] = "ok";
  status["iterations"] = res.em.iterations;
  status["converged"] = res.em.converged;
  status["best_iteration"] = res.em.best_iteration;
  status["predicted_cost"] = res.em.best_cost;
  status["closed_loop_cost"] = roll.cost;
  status["alpha"] = res.em.refreshed_alpha;
  write_file((out / "status.json").string(), status.dump(2) + "\n");
  std::cout << "trajopt " << env_name << ": " << res.em.iterations
            << " iterations, best iterate " << res.em.best_iteration
            << ", predicted cost " << res.em.best_cost << ", closed-loop cost "
            << roll.cost << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int run_eval(const std::string& env_name, const std::string& ctrl_path,
             const ConfigMap& cfg) {
  const auto out = prepare_out(cfg);
  const Environment env = build_environment(env_name, cfg);

  std::ifstream f(ctrl_path);
  if (!f) throw ConfigError("cannot read controller file: " + ctrl_path);
  LinearGaussianController ctrl;
  try {
    ctrl = controller_from_json(json::parse(f));
  } catch (const std::exception& ex) {
    throw ConfigError(std::string("controller file: ") + ex.what());
  }
  if (ctrl.horizon() == 0 || ctrl.K.front().cols() != env.d_x ||
      ctrl.K.front().rows() != env.d_u)
    throw ConfigError("controller dimensions do not match environment " +
                      env.name);

  const int trials =
      cfg.count("eval.trials") ? static_cast<int>(cfg_int(cfg, "eval.trials"))
                               : 100;
  if (trials < 1) throw ConfigError("eval.trials must be >= 1");
  const bool zero_noise =
      cfg.count("eval.zero_noise") && cfg_int(cfg, "eval.zero_noise") != 0;
  const auto seed = static_cast<std::uint64_t>(cfg_int(cfg, "seed"));

  EvalReport rep;
  if (zero_noise) {
    rep.trials = trials;
    rep.seed = seed;
    for (int i = 0; i < trials; ++i) {
      const Rollout r =
          rollout(env, ctrl, false, splitmix64(seed, 0xE7A1ULL + i));
      rep.costs.push_back(r.cost);
      if (r.diverged) ++rep.divergent;
    }
    finalize_moments(rep);
  } else {
    rep = monte_carlo_eval(env, ctrl, trials, seed);
  }
  rep.predicted_cost = rollout(env, ctrl, false, 0).cost;

  write_file((out / "eval.json").string(),
             eval_report_to_json(rep).dump(2) + "\n");
  std::string csv = csv_row({"trial", "cost", "diverged"});
  for (size_t i = 0; i < rep.costs.size(); ++i)
    csv += csv_row({std::to_string(i), fmt_double(rep.costs[i]),
                    std::isfinite(rep.costs[i]) ? "0" : "1"});
  write_file((out / "trials.csv").string(), csv);

  std::cout << "eval " << env_name << ": mean " << rep.mean_cost << " std "
            << rep.stddev_cost << " predicted " << rep.predicted_cost << " ("
            << rep.divergent << "/" << rep.trials << " divergent)\n";
  return rep.divergent > 0 ? 4 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"i2c: trajectory optimization by Gaussian input inference"};
  app.require_subcommand(1);

  std::string config_path;
  ConfigMap flags;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value config file");
    for (const std::string& key : known_keys()) {
      if (key == "command" || key == "env" || key == "controller") continue;
      sub->add_option_function<std::string>(
          "--" + key, [&flags, key](const std::string& v) { flags[key] = v; });
    }
    // spec'd short aliases (--seed/--out are covered by the key loop above)
    sub->add_option_function<std::string>(
        "--trials",
        [&flags](const std::string& v) { flags["eval.trials"] = v; });
    sub->add_option_function<std::string>(
        "--max-iters",
        [&flags](const std::string& v) { flags["em.max_iters"] = v; });
  };

  CLI::App* lqr = app.add_subcommand("lqr-equiv", "LQR equivalence experiment");
  add_common(lqr);

  std::string trajopt_env;
  CLI::App* trajopt = app.add_subcommand("trajopt", "EM trajectory optimization");
  trajopt->add_option("env", trajopt_env, "environment name")->required();
  add_common(trajopt);

  std::string eval_env, eval_ctrl;
  CLI::App* eval = app.add_subcommand("eval", "Monte-Carlo controller evaluation");
  eval->add_option("env", eval_env, "environment name")->required();
  eval->add_option("controller", eval_ctrl, "controller.json path")->required();
  add_common(eval);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    ConfigMap registry{{"seed", "0"}, {"out", "out"}};
    if (lqr->parsed()) {
      registry["command"] = "lqr-equiv";
      return run_lqr_equiv(resolve_config(registry, config_path, flags));
    }
    if (trajopt->parsed()) {
      registry["command"] = "trajopt";
      registry["env"] = trajopt_env;
      return run_trajopt(trajopt_env,
                         resolve_config(registry, config_path, flags));
    }
    registry["command"] = "eval";
    registry["env"] = eval_env;
    registry["controller"] = eval_ctrl;
    return run_eval(eval_env, eval_ctrl,
                    resolve_config(registry, config_path, flags));
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 3;
  }
}
