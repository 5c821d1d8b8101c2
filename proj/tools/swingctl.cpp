// Command-line front end: training, baselines, certification, simulation and
// method comparison, with deterministic artifact emission per run.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "swingctl/swingctl.hpp"

namespace sc = swingctl;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRefuted = 1;
constexpr int kExitError = 2;

struct Cli {
  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> out_override;
};

json load_config(const Cli& cli) {
  std::ifstream in(cli.config_path);
  if (!in) throw sc::ParseError("config: cannot open " + cli.config_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw sc::ParseError("config: " + cli.config_path + ": " + e.what());
  }
  if (cli.seed_override) j["seed"] = *cli.seed_override;
  if (cli.out_override) j["out"] = *cli.out_override;
  return j;
}

std::uint64_t require_seed(const json& cfg) {
  if (!cfg.contains("seed"))
    throw sc::ValidationError("config: seed is mandatory (set \"seed\" or pass --seed)");
  return cfg.at("seed").get<std::uint64_t>();
}

std::string require_out(const json& cfg) {
  if (!cfg.contains("out"))
    throw sc::ValidationError("config: output directory missing (set \"out\" or pass --out)");
  return cfg.at("out").get<std::string>();
}

sc::NetworkCase load_case_of(const json& cfg) {
  if (!cfg.contains("case")) throw sc::ValidationError("config: missing \"case\" path");
  const std::string path = cfg.at("case").get<std::string>();
  if (!std::filesystem::exists(path))
    throw sc::ValidationError("config: case file does not exist: " + path);
  return sc::load_case(path);
}

sc::TrainConfig parse_train_config(const json& section, std::uint64_t seed) {
  sc::TrainConfig c;
  c.seed = seed;
  if (section.is_null()) return c;
  c.episodes = section.value("episodes", c.episodes);
  c.batch = section.value("batch", c.batch);
  c.stages = section.value("stages", c.stages);
  c.dt = section.value("dt", c.dt);
  if (section.contains("gamma")) {
    if (section["gamma"].is_array())
      c.gamma = section["gamma"].get<sc::Vec>();
    else
      c.gamma = sc::Vec{section["gamma"].get<double>()};
  }
  c.lr = section.value("lr", c.lr);
  c.lr_decay = section.value("lr_decay", c.lr_decay);
  c.lr_decay_every = section.value("lr_decay_every", c.lr_decay_every);
  c.hidden = section.value("m", c.hidden);
  if (section.contains("init")) {
    c.init.delta_rad = section["init"].value("delta_rad", c.init.delta_rad);
    c.init.omega_hz = section["init"].value("omega_hz", c.init.omega_hz);
  }
  c.init_droop_k0 = section.value("init_droop_k0", c.init_droop_k0);
  c.init_omega_span = section.value("init_omega_span", c.init_omega_span);
  return c;
}

std::vector<sc::DisturbanceEvent> parse_events(const json& arr) {
  std::vector<sc::DisturbanceEvent> events;
  if (arr.is_null()) return events;
  for (const auto& e : arr) {
    sc::DisturbanceEvent ev;
    ev.bus = e.at("bus").get<int>();
    ev.delta_p = e.at("delta_p").get<double>();
    ev.t_on = e.at("t_on").get<double>();
    ev.t_off = e.at("t_off").get<double>();
    events.push_back(ev);
  }
  return events;
}

json section(const json& cfg, const std::string& name) {
  return cfg.contains(name) ? cfg.at(name) : json();
}

int cmd_train(const json& cfg) {
  const auto seed = require_seed(cfg);
  const auto net = load_case_of(cfg);
  const auto tc = parse_train_config(section(cfg, "train"), seed);
  sc::RunArtifacts run(require_out(cfg), "train", seed, cfg);
  const sc::TrainResult res = sc::train(net, tc);
  run.write_json("params.json", sc::params_to_json(res.params));
  run.write_text("loss.csv", sc::loss_log_csv(res.episodes));
  run.finalize({{"episodes", res.episodes.size()},
                {"final_loss", res.episodes.empty() ? 0.0 : res.episodes.back().total},
                {"divergence_warnings", res.divergence_warnings},
                {"case", cfg.at("case").get<std::string>()}});
  std::cout << "trained " << tc.episodes << " episodes; final loss "
            << (res.episodes.empty() ? 0.0 : res.episodes.back().total) << "\n";
  return kExitOk;
}

int cmd_pg_train(const json& cfg) {
  const auto seed = require_seed(cfg);
  const auto net = load_case_of(cfg);
  const json sec = section(cfg, "pg");
  sc::TrainConfig tc = parse_train_config(sec, seed);
  if (!sec.contains("lr")) tc.lr = 0.01;  // policy-gradient default rate
  const double sigma = sec.is_null() ? 0.05 : sec.value("sigma", 0.05);
  sc::RunArtifacts run(require_out(cfg), "pg-train", seed, cfg);
  const sc::TrainResult res = sc::train_pg(net, tc, sigma);
  run.write_json("params.json", sc::params_to_json(res.params));
  run.write_text("loss.csv", sc::loss_log_csv(res.episodes));
  run.finalize({{"episodes", res.episodes.size()},
                {"final_loss", res.episodes.empty() ? 0.0 : res.episodes.back().total},
                {"sigma", sigma},
                {"divergence_warnings", res.divergence_warnings}});
  std::cout << "pg-trained " << tc.episodes << " episodes; final loss "
            << (res.episodes.empty() ? 0.0 : res.episodes.back().total) << "\n";
  return kExitOk;
}

int cmd_droop_fit(const json& cfg) {
  const auto seed = require_seed(cfg);
  const auto net = load_case_of(cfg);
  const auto tc = parse_train_config(section(cfg, "droop"), seed);
  sc::RunArtifacts run(require_out(cfg), "droop-fit", seed, cfg);
  const sc::DroopFit res = sc::fit_droop(net, tc);
  json gains;
  gains["gains"] = res.gains;
  gains["final_loss"] = res.episodes.empty() ? 0.0 : res.episodes.back().total;
  run.write_json("gains.json", gains);
  run.write_json("params.json", sc::params_to_json(res.params));
  run.write_text("loss.csv", sc::loss_log_csv(res.episodes));
  run.finalize({{"gains", res.gains}});
  std::cout << "droop gains fitted; final loss "
            << (res.episodes.empty() ? 0.0 : res.episodes.back().total) << "\n";
  return kExitOk;
}

int cmd_certify(const json& cfg) {
  const auto seed = require_seed(cfg);
  const auto net = load_case_of(cfg);
  const json sec = section(cfg, "certify");
  if (sec.is_null() || !sec.contains("params"))
    throw sc::ValidationError("config: certify.params path missing");
  const std::string ppath = sec.at("params").get<std::string>();
  if (!std::filesystem::exists(ppath))
    throw sc::ValidationError("config: controller file does not exist: " + ppath);
  const sc::ControllerSpec spec = sc::load_controller(ppath);
  sc::CertifyOptions opt;
  opt.seed = seed;
  opt.grid_points = sec.value("grid_points", opt.grid_points);
  opt.random_pairs = sec.value("random_pairs", opt.random_pairs);
  opt.epsilon_samples = sec.value("epsilon_samples", opt.epsilon_samples);
  opt.vdot_states = sec.value("vdot_states", opt.vdot_states);
  sc::RunArtifacts run(require_out(cfg), "certify", seed, cfg);
  const sc::LyapunovReport rep = sc::certify_controller(net, spec, opt);
  run.write_json("report.json", sc::report_to_json(rep));
  run.write_text("vseries.csv", sc::vseries_csv(rep.t_series, rep.v_series, rep.vdot_series));
  run.finalize({{"verdict", rep.certified ? "certified" : "refuted"},
                {"reason", rep.refuted_reason}});
  if (rep.certified) {
    std::cout << "certified (epsilon* = " << rep.epsilon_star << ")\n";
    return kExitOk;
  }
  std::cout << "refuted: " << rep.refuted_reason;
  if (rep.refuted_reason == "monotonicity")
    std::cout << " (bus " << rep.worst_pair.bus << ": u(" << rep.worst_pair.omega_lo
              << ") = " << rep.worst_pair.u_lo << " > u(" << rep.worst_pair.omega_hi
              << ") = " << rep.worst_pair.u_hi << ")";
  std::cout << "\n";
  return kExitRefuted;
}

int cmd_simulate(const json& cfg) {
  const auto seed = require_seed(cfg);
  const auto net = load_case_of(cfg);
  const json sec = section(cfg, "simulate");
  if (sec.is_null() || !sec.contains("controller"))
    throw sc::ValidationError("config: simulate.controller path missing");
  const std::string ppath = sec.at("controller").get<std::string>();
  if (!std::filesystem::exists(ppath))
    throw sc::ValidationError("config: controller file does not exist: " + ppath);
  const sc::ControllerSpec spec = sc::load_controller(ppath);
  const int stages = sec.value("stages", 2000);
  const double dt = sec.value("dt", 0.01);
  const auto events = parse_events(sec.contains("events") ? sec["events"] : json());
  const std::string integrator = sec.value("integrator", "euler");

  sc::Vec theta0(net.n, 0.0), omega0(net.n, 0.0);
  if (sec.value("start", "random") == "equilibrium") {
    const auto eq = sc::solve_equilibrium(
        net, [&](int i, double w) { return sc::eval_any(spec, i, w); });
    theta0 = eq.delta_star;
    omega0.assign(net.n, eq.omega_star);
  } else {
    sc::InitSpec init;
    if (sec.contains("init")) {
      init.delta_rad = sec["init"].value("delta_rad", init.delta_rad);
      init.omega_hz = sec["init"].value("omega_hz", init.omega_hz);
    }
    sc::Rng rng(sc::substream(seed, "simulate-init"));
    const auto states = sc::sample_initial_states(net.n, init, 1, rng);
    theta0 = states[0].theta0;
    omega0 = states[0].omega0;
  }
  const auto ctrl = [&](int i, double w) { return sc::eval_any(spec, i, w); };
  const sc::Trajectory traj =
      integrator == "rk4" ? sc::rollout_rk4(net, theta0, omega0, ctrl, stages, dt, events)
                          : sc::rollout(net, theta0, omega0, ctrl, stages, dt, events);
  sc::RunArtifacts run(require_out(cfg), "simulate", seed, cfg);
  run.write_text("trajectory.csv", sc::trajectory_csv(traj));
  json scenario = json::array();
  for (const auto& ev : traj.scenario)
    scenario.push_back({{"bus", ev.bus},
                        {"delta_p", ev.delta_p},
                        {"t_on", ev.t_on},
                        {"t_off", ev.t_off}});
  run.finalize({{"scenario", scenario},
                {"diverged", traj.diverged},
                {"diverged_at", traj.diverged_at},
                {"integrator", integrator}});
  std::cout << (traj.diverged ? "trajectory DIVERGED at stage " +
                                    std::to_string(traj.diverged_at)
                              : std::string("trajectory completed"))
            << "\n";
  return kExitOk;
}

int cmd_compare(const json& cfg) {
  const auto seed = require_seed(cfg);
  const auto net = load_case_of(cfg);
  const json sec = section(cfg, "compare");
  sc::TrainConfig tc = parse_train_config(section(cfg, "train"), seed);
  sc::TrainConfig pc = parse_train_config(section(cfg, "pg"), seed);
  if (!section(cfg, "pg").contains("lr")) pc.lr = 0.01;
  sc::TrainConfig dc = parse_train_config(section(cfg, "droop"), seed);
  const double sigma = section(cfg, "pg").is_null()
                           ? 0.05
                           : section(cfg, "pg").value("sigma", 0.05);

  sc::RunArtifacts run(require_out(cfg), "compare", seed, cfg);

  // controllers: load if paths given, otherwise train in-line
  const auto load_params = [](const std::string& path) {
    sc::ControllerSpec spec = sc::load_controller(path);
    auto* p = std::get_if<sc::MonotoneParams>(&spec);
    if (!p)
      throw sc::ValidationError("compare: " + path +
                                " must hold monotone parameters, not a table");
    return std::move(*p);
  };
  sc::MonotoneParams bptt_params, pg_params;
  sc::DroopFit droop;
  if (sec.contains("params_bptt"))
    bptt_params = load_params(sec.at("params_bptt").get<std::string>());
  else
    bptt_params = sc::train(net, tc).params;
  if (sec.contains("params_pg"))
    pg_params = load_params(sec.at("params_pg").get<std::string>());
  else
    pg_params = sc::train_pg(net, pc, sigma).params;
  droop = sc::fit_droop(net, dc);

  run.write_json("params_bptt.json", sc::params_to_json(bptt_params));
  run.write_json("params_pg.json", sc::params_to_json(pg_params));
  json gains;
  gains["gains"] = droop.gains;
  run.write_json("gains_droop.json", gains);

  // shared seeded test sweep over initial-frequency ranges
  sc::Vec omega_bars{0.0, 0.025, 0.05, 0.075, 0.1, 0.125, 0.15};
  if (sec.contains("omega_bars_hz")) omega_bars = sec.at("omega_bars_hz").get<sc::Vec>();
  const int rollouts = sec.is_null() ? 64 : sec.value("test_rollouts", 64);
  const int stages = sec.is_null() ? tc.stages : sec.value("stages", tc.stages);
  const double dt = sec.is_null() ? tc.dt : sec.value("dt", tc.dt);
  const double test_delta = sec.is_null() ? tc.init.delta_rad
                                          : sec.value("test_delta_rad", tc.init.delta_rad);
  const sc::Vec gamma = sc::resolve_gamma(tc.gamma, net.n);

  const auto eval_bptt = [&](int i, double w) { return sc::eval_controller(bptt_params, i, w); };
  const auto eval_pg = [&](int i, double w) { return sc::eval_controller(pg_params, i, w); };
  const auto eval_droop = [&](int i, double w) {
    return sc::eval_controller(droop.params, i, w);
  };

  std::ostringstream table;
  table << "omega_bar_hz,bptt,droop,pg\n";
  double sum_bptt = 0.0, sum_droop = 0.0, sum_pg = 0.0;
  bool bptt_dominates = true;
  for (std::size_t col = 0; col < omega_bars.size(); ++col) {
    sc::InitSpec spec{test_delta, omega_bars[col]};
    sc::Rng rng(sc::substream(seed, "test-inits", col));
    const auto inits = sc::sample_initial_states(net.n, spec, rollouts, rng);
    const double lb = sc::evaluate_policy(net, eval_bptt, inits, stages, dt, gamma).total;
    const double ld = sc::evaluate_policy(net, eval_droop, inits, stages, dt, gamma).total;
    const double lp = sc::evaluate_policy(net, eval_pg, inits, stages, dt, gamma).total;
    sum_bptt += lb;
    sum_droop += ld;
    sum_pg += lp;
    if (lb > ld) bptt_dominates = false;
    table << sc::detail::format_double(omega_bars[col]) << ","
          << sc::detail::format_double(lb) << "," << sc::detail::format_double(ld) << ","
          << sc::detail::format_double(lp) << "\n";
  }
  run.write_text("loss_table.csv", table.str());

  // step-load scenario trajectories for every method
  auto events = parse_events(sec.contains("events") ? sec["events"] : json());
  if (events.empty())
    events.push_back(sc::DisturbanceEvent{std::min(3, net.n - 1), 0.05, 0.3, 5.3});
  const int step_stages = sec.is_null() ? 800 : sec.value("step_stages", 800);
  const auto step_traj = [&](auto&& ctrl) {
    const auto eq =
        sc::solve_equilibrium(net, [&](int i, double w) { return ctrl(i, w); });
    sc::Vec omega0(net.n, eq.omega_star);
    return sc::rollout(net, eq.delta_star, omega0, ctrl, step_stages, dt, events);
  };
  run.write_text("step_bptt.csv", sc::trajectory_csv(step_traj(eval_bptt)));
  run.write_text("step_droop.csv", sc::trajectory_csv(step_traj(eval_droop)));
  run.write_text("step_pg.csv", sc::trajectory_csv(step_traj(eval_pg)));

  const double improvement =
      sum_droop > 0.0 ? (sum_droop - sum_bptt) / sum_droop * 100.0 : 0.0;
  run.finalize({{"avg_loss_bptt", sum_bptt / omega_bars.size()},
                {"avg_loss_droop", sum_droop / omega_bars.size()},
                {"avg_loss_pg", sum_pg / omega_bars.size()},
                {"improvement_vs_droop_pct", improvement},
                {"bptt_dominates_droop", bptt_dominates}});
  std::cout << "compare: bptt " << sum_bptt / omega_bars.size() << ", droop "
            << sum_droop / omega_bars.size() << ", pg " << sum_pg / omega_bars.size()
            << " (improvement vs droop " << improvement << "%)\n";
  return kExitOk;
}

int cmd_approx_fit(const json& cfg) {
  const json sec = section(cfg, "approx_fit");
  if (sec.is_null()) throw sc::ValidationError("config: approx_fit section missing");
  const json target = sec.at("target");
  const std::string type = target.at("type").get<std::string>();
  std::function<double(double)> r;
  if (type == "linear") {
    const double k = target.value("slope", 1.0);
    r = [k](double x) { return k * x; };
  } else if (type == "tanh") {
    const double a = target.value("scale", 2.0);
    r = [a](double x) { return std::tanh(a * x); };
  } else if (type == "clamped_droop") {
    const double k = target.value("gain", 2.0);
    const double lim = target.value("limit", 0.4);
    r = [k, lim](double x) { return std::clamp(k * x, -lim, lim); };
  } else {
    throw sc::ValidationError("approx_fit: unknown target type '" + type + "'");
  }
  const double x_lo = sec.value("x_lo", 0.0);
  const double x_hi = sec.value("x_hi", 1.0);
  const int grid_n = sec.value("grid_n", 100);
  const sc::MonotoneFit fit = sc::fit_monotone(r, x_lo, x_hi, grid_n);
  sc::RunArtifacts run(require_out(cfg), "approx-fit", cfg.value("seed", 0ull), cfg);
  run.write_json("params.json", sc::params_to_json(fit.params));
  json rep;
  rep["spacing"] = fit.spacing;
  rep["max_slope"] = fit.max_slope;
  rep["sup_error"] = fit.sup_error;
  rep["bound"] = fit.spacing * fit.max_slope;
  run.write_json("report.json", rep);
  run.finalize(rep);
  std::cout << "fit sup error " << fit.sup_error << " (bound "
            << fit.spacing * fit.max_slope << ")\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"swingctl: stability-guaranteed primary-frequency controllers for "
               "swing-equation networks"};
  app.require_subcommand(1);

  Cli cli;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", cli.config_path, "experiment config JSON")->required();
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& v) { cli.seed_override = v; },
        "override config seed");
    sub->add_option_function<std::string>(
        "--out", [&](const std::string& v) { cli.out_override = v; },
        "override output directory");
  };

  auto* train = app.add_subcommand("train", "train a monotone controller with BPTT");
  auto* pg = app.add_subcommand("pg-train", "train with REINFORCE policy gradient");
  auto* droop = app.add_subcommand("droop-fit", "optimize per-bus droop gains");
  auto* certify = app.add_subcommand("certify", "run the stability certificate");
  auto* simulate = app.add_subcommand("simulate", "roll out one trajectory");
  auto* compare = app.add_subcommand("compare", "train/evaluate all three methods");
  auto* approx = app.add_subcommand("approx-fit", "fit a monotone target function");
  for (auto* sub : {train, pg, droop, certify, simulate, compare, approx}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitError;
  }

  try {
    const json cfg = load_config(cli);
    if (train->parsed()) return cmd_train(cfg);
    if (pg->parsed()) return cmd_pg_train(cfg);
    if (droop->parsed()) return cmd_droop_fit(cfg);
    if (certify->parsed()) return cmd_certify(cfg);
    if (simulate->parsed()) return cmd_simulate(cfg);
    if (compare->parsed()) return cmd_compare(cfg);
    if (approx->parsed()) return cmd_approx_fit(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
