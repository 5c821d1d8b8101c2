// Acceptance suite: runs every gate criterion end to end and prints one
// PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <numbers>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "swingctl/swingctl.hpp"

using namespace swingctl;

namespace {

struct Harness {
  int failed = 0;

  void report(int id, const char* name, bool ok, const std::string& detail) {
    std::printf("CRITERION %d [%s]: %s%s%s\n", id, name, ok ? "PASS" : "FAIL",
                detail.empty() ? "" : " - ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failed;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

NetworkCase load(const std::string& name) {
  return load_case(oracles::cases_dir() + "/" + name);
}

NetworkCase one_bus(double d) {
  NetworkCase net;
  net.n = 1;
  net.inertia = {1.0};
  net.damping = {d};
  net.susceptance = Mat(1, 1);
  net.injection = {0.0};
  net.u_min = {-1.0};
  net.u_max = {1.0};
  return net;
}

// ---------------------------------------------------------------------------

bool structural_suite(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(substream(1, "acceptance-structural"));
  for (int trial = 0; trial < 10000; ++trial) {
    const MonotoneParams p = oracles::random_params(1, 5, rng);
    double w1 = rng.uniform(-10.0, 10.0);
    double w2 = rng.uniform(-10.0, 10.0);
    if (w1 > w2) std::swap(w1, w2);
    const double u1 = eval_controller(p, 0, w1);
    const double u2 = eval_controller(p, 0, w2);
    if (!(u1 <= u2)) {
      detail = fmt("monotonicity violated at trial %d", trial);
      return false;
    }
    if (eval_controller(p, 0, 0.0) != 0.0) {
      detail = fmt("origin violated at trial %d", trial);
      return false;
    }
    if (u1 < p.u_min[0] || u2 > p.u_max[0]) {
      detail = fmt("bounds violated at trial %d", trial);
      return false;
    }
    if (w1 * u1 < 0.0 || w2 * u2 < 0.0) {
      detail = fmt("sign property violated at trial %d", trial);
      return false;
    }
  }
  const double dt = seconds_since(t0);
  detail = fmt("10^4 parameter draws, %.2f s", dt);
  return dt < 10.0;
}

bool gradient_suite(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  const NetworkCase net = load("case3.json");
  const int stages = 50;
  const Vec gamma{0.01};
  Rng rng(substream(2, "acceptance-grad"));
  double worst = 0.0;
  for (int point = 0; point < 20; ++point) {
    MonotoneParams p = oracles::random_params(3, 3, rng);
    p.u_min = net.u_min;
    p.u_max = net.u_max;
    for (int i = 0; i < 3; ++i)
      for (int l = 0; l < 3; ++l) {
        p.q_hat[i][l] += 1e-4;
        p.z_hat[i][l] += 1e-4;
        if (l >= 1) {
          p.b_hat[i][l] += 1e-4;
          p.c_hat[i][l] += 1e-4;
        }
      }
    Rng irng(substream(2, "acceptance-grad-inits", point));
    const auto inits = sample_initial_states(3, InitSpec{}, 4, irng);
    const BpttOutcome out = bptt_grad(net, p, inits, stages, 0.01, gamma);
    const auto loss_of = [&](const MonotoneParams& q) {
      const auto ctrl = [&](int i, double w) { return eval_controller(q, i, w); };
      return evaluate_policy(net, ctrl, inits, stages, 0.01, gamma).total;
    };
    double max_fd = 0.0, max_err = 0.0;
    const auto fd_block = [&](std::vector<Vec> MonotoneParams::* hat,
                              const std::vector<Vec>& g) {
      for (int i = 0; i < 3; ++i)
        for (int l = 0; l < 3; ++l) {
          if ((hat == &MonotoneParams::b_hat || hat == &MonotoneParams::c_hat) && l == 0)
            continue;
          MonotoneParams q = p;
          (q.*hat)[i][l] += 1e-6;
          const double up = loss_of(q);
          (q.*hat)[i][l] -= 2e-6;
          const double dn = loss_of(q);
          const double fd = (up - dn) / 2e-6;
          max_fd = std::max(max_fd, std::fabs(fd));
          max_err = std::max(max_err, std::fabs(fd - g[i][l]));
        }
    };
    fd_block(&MonotoneParams::q_hat, out.grad.q);
    fd_block(&MonotoneParams::b_hat, out.grad.b);
    fd_block(&MonotoneParams::z_hat, out.grad.z);
    fd_block(&MonotoneParams::c_hat, out.grad.c);
    worst = std::max(worst, max_err / std::max(max_fd, 1e-8));
  }
  const double dt = seconds_since(t0);
  detail = fmt("20 points, worst relative error %.2e, %.1f s", worst, dt);
  return worst <= 1e-4 && dt < 60.0;
}

bool lyapunov_suite(std::string& detail) {
  const NetworkCase net = load("case3.json");
  TrainConfig cfg;
  cfg.episodes = 40;
  cfg.batch = 32;
  cfg.stages = 200;
  cfg.hidden = 20;
  cfg.seed = 3;
  cfg.init_droop_k0 = 20.0;
  const TrainResult tr = train(net, cfg);

  CertifyOptions opt;
  opt.seed = 3;
  const LyapunovReport rep = certify_controller(net, tr.params, opt);
  if (!rep.certified) {
    detail = "trained controller failed certification: " + rep.refuted_reason;
    return false;
  }
  const BusController u = [&](int i, double w) { return eval_controller(tr.params, i, w); };
  const Equilibrium eq = *rep.equilibrium;
  const LyapunovContext ctx = make_context(net, eq, rep.epsilon_used, u);

  // (a) V >= 0 at 10^4 states, zero only at the equilibrium; (c) Vdot < 0
  Rng rng(substream(3, "acceptance-lyap"));
  double min_v = 1e300, worst_vdot = -1e300;
  for (int s = 0; s < 10000; ++s) {
    const Vec d = sample_region_delta(net, rng);
    Vec w(net.n);
    for (double& x : w) x = eq.omega_star + rng.uniform(-1.0, 1.0);
    const double v = lyapunov_V(ctx, d, w);
    min_v = std::min(min_v, v);
    Vec uv(net.n);
    for (int i = 0; i < net.n; ++i) uv[i] = u(i, w[i]);
    worst_vdot = std::max(worst_vdot, vdot_analytic(ctx, d, w, uv));
  }
  const double v_eq = lyapunov_V(ctx, eq.delta_star, Vec(net.n, eq.omega_star));
  if (!(min_v > 0.0) || std::fabs(v_eq) > 1e-12) {
    detail = fmt("(a) failed: min V %.3e, V(eq) %.3e", min_v, v_eq);
    return false;
  }
  if (!(worst_vdot < 0.0)) {
    detail = fmt("(c) failed: worst Vdot %.3e", worst_vdot);
    return false;
  }

  // (b) analytic vs finite-difference Vdot at 100 states
  double worst_rel = 0.0;
  const double h = 1e-5;
  for (int s = 0; s < 100; ++s) {
    const Vec theta = sample_region_delta(net, rng);
    Vec w(net.n);
    for (double& x : w) x = eq.omega_star + rng.uniform(-1.0, 1.0);
    Vec uv(net.n);
    for (int i = 0; i < net.n; ++i) uv[i] = u(i, w[i]);
    const double an = vdot_analytic(ctx, coi_transform(theta), w, uv);
    const auto fwd = flow_rk4(net, theta, w, u, h);
    const auto bwd = flow_rk4(net, theta, w, u, -h);
    const double fd = (lyapunov_V(ctx, coi_transform(fwd.first), fwd.second) -
                       lyapunov_V(ctx, coi_transform(bwd.first), bwd.second)) /
                      (2.0 * h);
    worst_rel = std::max(worst_rel, std::fabs(an - fd) / std::max(std::fabs(fd), 1e-9));
  }
  if (worst_rel > 1e-4) {
    detail = fmt("(b) failed: worst relative error %.3e", worst_rel);
    return false;
  }

  // (d) validated epsilon on 1000 samples plus the closed-form check
  const EpsilonSearch es = epsilon_search(net, eq, 1000, 3);
  if (!(es.epsilon_star > 0.0 && es.lambda_min > 0.0)) {
    detail = "(d) failed: no validated epsilon";
    return false;
  }
  for (double d_val : {2.0, 8.0}) {
    const NetworkCase single = one_bus(d_val);
    const Equilibrium seq = solve_equilibrium(single, [](int, double) { return 0.0; });
    const EpsilonSearch se = epsilon_search(single, seq, 10, 1);
    if (std::fabs(se.epsilon_star - 4.0 / d_val) > 1e-5) {
      detail = fmt("(d) closed form failed: D=%.0f gives %.8f", d_val, se.epsilon_star);
      return false;
    }
  }
  detail = fmt("min V %.3e, worst Vdot %.3e, FD rel %.1e, eps* %.4f (lambda_min %.2e)",
               min_v, worst_vdot, worst_rel, es.epsilon_star, es.lambda_min);
  return true;
}

MonotoneParams train_case39(const NetworkCase& net) {
  TrainConfig cfg;
  cfg.episodes = 60;
  cfg.batch = 32;
  cfg.stages = 200;
  cfg.hidden = 20;
  cfg.seed = 4;
  cfg.init_droop_k0 = 20.0;
  return train(net, cfg).params;
}

bool stability_rollouts(const NetworkCase& net, const MonotoneParams& params,
                        std::string& detail) {
  const BusController u = [&](int i, double w) { return eval_controller(params, i, w); };
  const Equilibrium eq = solve_equilibrium(net, u);
  Rng rng(substream(4, "acceptance-rollouts"));
  const auto inits = sample_initial_states(net.n, InitSpec{}, 100, rng);
  const auto ctrl = [&](int i, double w) { return eval_controller(params, i, w); };
  double worst = 0.0;
  int diverged = 0;
  for (const auto& init : inits) {
    const Trajectory tr = rollout(net, init.theta0, init.omega0, ctrl, 2000, 0.01);
    if (tr.diverged) ++diverged;
    for (int i = 0; i < net.n; ++i)
      worst = std::max(worst, std::fabs(tr.omega[2000][i] - eq.omega_star));
  }
  detail = fmt("100 rollouts, %d diverged, worst |omega(K) - omega*| %.2e rad/s", diverged,
               worst);
  return diverged == 0 && worst <= 1e-3;
}

bool instability_counterexample(const NetworkCase& net, std::string& detail) {
  // library-level refutation
  TableController tab;
  tab.knots = {-1.0, 0.0, 1.0};
  tab.values.assign(net.n, Vec{5.0, 0.0, -5.0});
  tab.linear_extrapolation = true;
  CertifyOptions opt;
  opt.seed = 5;
  opt.grid_points = 2000;
  opt.random_pairs = 1000;
  const LyapunovReport rep = certify_controller(net, tab, opt);
  if (rep.certified || rep.refuted_reason != "monotonicity") {
    detail = "table controller was not refuted for monotonicity";
    return false;
  }

  // CLI-level exit code 1
  bool cli_ok = false;
  if (const char* bin = std::getenv("SWINGCTL_BIN")) {
    const std::string dir = "/tmp/swingctl_acceptance";
    (void)std::system(("mkdir -p " + dir).c_str());
    nlohmann::json cfg;
    cfg["case"] = oracles::cases_dir() + "/case39kron.json";
    cfg["seed"] = 5;
    cfg["out"] = dir + "/neg5";
    cfg["certify"] = {{"params", oracles::cases_dir() + "/controller_neg5_10bus.json"},
                      {"grid_points", 2000},
                      {"random_pairs", 500}};
    std::ofstream(dir + "/neg5.json") << cfg.dump();
    const int status =
        std::system((std::string(bin) + " certify --config " + dir + "/neg5.json " +
                     "> /dev/null 2>&1")
                        .c_str());
    cli_ok = WIFEXITED(status) && WEXITSTATUS(status) == 1;
  }
  if (!cli_ok) {
    detail = "certify CLI did not exit with status 1";
    return false;
  }

  // at least one diverged rollout from the same distribution
  const auto ctrl = [&](int, double w) { return -5.0 * w; };
  Rng rng(substream(4, "acceptance-rollouts"));
  const auto inits = sample_initial_states(net.n, InitSpec{}, 100, rng);
  int diverged = 0;
  for (const auto& init : inits)
    if (rollout(net, init.theta0, init.omega0, ctrl, 2000, 0.01).diverged) ++diverged;
  detail = fmt("refuted (witness bus %d), CLI exit 1, %d/100 rollouts diverged",
               rep.worst_pair.bus, diverged);
  return diverged >= 1;
}

bool comparative_performance(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  const NetworkCase net = load("case3.json");
  TrainConfig cfg;
  cfg.episodes = 200;
  cfg.batch = 64;
  cfg.stages = 200;
  cfg.hidden = 20;
  cfg.seed = 6;
  cfg.init_droop_k0 = 30.0;
  TrainConfig pgc = cfg;
  pgc.lr = 0.01;

  const TrainResult bp = train(net, cfg);
  const DroopFit dr = fit_droop(net, cfg);
  const TrainResult pg = train_pg(net, pgc, 0.05);

  const Vec gamma = resolve_gamma(cfg.gamma, net.n);
  const auto bctrl = [&](int i, double w) { return eval_controller(bp.params, i, w); };
  const auto dctrl = [&](int i, double w) { return eval_controller(dr.params, i, w); };
  const auto pctrl = [&](int i, double w) { return eval_controller(pg.params, i, w); };

  const Vec omega_bars{0.0, 0.025, 0.05, 0.075, 0.1, 0.125, 0.15};
  double sum_b = 0.0, sum_d = 0.0, sum_p = 0.0;
  bool dominates = true;
  std::printf("  omega_bar_hz    bptt   droop      pg\n");
  for (std::size_t col = 0; col < omega_bars.size(); ++col) {
    Rng rng(substream(cfg.seed, "test-inits", col));
    const auto set = sample_initial_states(net.n, InitSpec{0.1, omega_bars[col]}, 64, rng);
    const double lb = evaluate_policy(net, bctrl, set, cfg.stages, cfg.dt, gamma).total;
    const double ld = evaluate_policy(net, dctrl, set, cfg.stages, cfg.dt, gamma).total;
    const double lp = evaluate_policy(net, pctrl, set, cfg.stages, cfg.dt, gamma).total;
    std::printf("  %12.3f %7.4f %7.4f %7.4f\n", omega_bars[col], lb, ld, lp);
    sum_b += lb;
    sum_d += ld;
    sum_p += lp;
    if (lb > ld) dominates = false;
  }
  const double improvement = (sum_d - sum_b) / sum_d * 100.0;
  const double dt = seconds_since(t0);
  const bool pg_not_better = sum_p >= sum_b;
  detail = fmt("improvement vs droop %.2f%% (need >= 5%%), dominates every column: %s, "
               "pg >= bptt: %s, %.0f s",
               improvement, dominates ? "yes" : "no", pg_not_better ? "yes" : "no", dt);
  return dominates && improvement >= 5.0 && pg_not_better && dt < 900.0;
}

bool universal_approximation(std::string& detail) {
  const MonotoneFit tanh_fit =
      fit_monotone([](double x) { return std::tanh(2.0 * x); }, 0.0, 1.0, 100);
  const MonotoneFit lin_fit = fit_monotone([](double x) { return x; }, 0.0, 1.0, 10);
  detail = fmt("tanh sup error %.5f (bound 0.02), linear sup error %.1e",
               tanh_fit.sup_error, lin_fit.sup_error);
  return tanh_fit.sup_error <= 2.0 / 100.0 && lin_fit.sup_error <= 1e-14;
}

bool equilibrium_oracle(const NetworkCase& big, const MonotoneParams& params,
                        std::string& detail) {
  NetworkCase two;
  two.n = 2;
  two.inertia = {1.0, 1.0};
  two.damping = {1.0, 1.0};
  two.susceptance = Mat(2, 2);
  two.susceptance(0, 1) = 1.0;
  two.susceptance(1, 0) = 1.0;
  two.injection = {0.1, -0.1};
  two.u_min = {-1.0, -1.0};
  two.u_max = {1.0, 1.0};
  const BusController zero = [](int, double) { return 0.0; };
  const Equilibrium eq2 = solve_equilibrium(two, zero);
  const double expect = std::asin(0.1) / 2.0;
  if (std::fabs(eq2.omega_star) > 1e-9 || std::fabs(eq2.delta_star[0] - expect) > 1e-9 ||
      std::fabs(eq2.delta_star[1] + expect) > 1e-9) {
    detail = fmt("2-bus closed form missed: omega* %.2e, delta* error %.2e",
                 eq2.omega_star, std::fabs(eq2.delta_star[0] - expect));
    return false;
  }

  const BusController u = [&](int i, double w) { return eval_controller(params, i, w); };
  const Equilibrium eq = solve_equilibrium(big, u);
  const Vec pe = electrical_power(big, eq.delta_star);
  double worst = 0.0;
  for (int i = 0; i < big.n; ++i)
    worst = std::max(worst, std::fabs(big.injection[i] - big.damping[i] * eq.omega_star -
                                      u(i, eq.omega_star) - pe[i]));
  detail = fmt("2-bus match <= 1e-9, 10-machine residual %.2e", worst);
  return worst <= 1e-8;
}

bool determinism(std::string& detail) {
  const char* bin = std::getenv("SWINGCTL_BIN");
  if (!bin) {
    detail = "SWINGCTL_BIN not set";
    return false;
  }
  const std::string dir = "/tmp/swingctl_acceptance";
  (void)std::system(("mkdir -p " + dir).c_str());
  nlohmann::json cfg;
  cfg["case"] = oracles::cases_dir() + "/case3.json";
  cfg["seed"] = 9;
  cfg["train"] = {{"episodes", 20}, {"batch", 16}, {"stages", 100}, {"m", 8}};
  const auto run = [&](const std::string& out) {
    nlohmann::json c = cfg;
    c["out"] = dir + "/" + out;
    std::ofstream(dir + "/det.json") << c.dump();
    return std::system((std::string(bin) + " train --config " + dir +
                        "/det.json > /dev/null 2>&1")
                           .c_str());
  };
  if (run("det1") != 0 || run("det2") != 0) {
    detail = "train command failed";
    return false;
  }
  const auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const bool params_same =
      slurp(dir + "/det1/params.json") == slurp(dir + "/det2/params.json");
  const bool loss_same = slurp(dir + "/det1/loss.csv") == slurp(dir + "/det2/loss.csv");
  const bool nonempty = !slurp(dir + "/det1/params.json").empty();
  detail = fmt("params.json identical: %s, loss.csv identical: %s",
               params_same ? "yes" : "no", loss_same ? "yes" : "no");
  return params_same && loss_same && nonempty;
}

}  // namespace

int main() {
  Harness h;
  std::string detail;

  detail.clear();
  h.report(1, "structural stability", structural_suite(detail), detail);

  detail.clear();
  h.report(2, "gradient correctness", gradient_suite(detail), detail);

  detail.clear();
  h.report(3, "lyapunov certificate", lyapunov_suite(detail), detail);

  const NetworkCase case39 = load("case39kron.json");
  const MonotoneParams trained39 = train_case39(case39);

  detail.clear();
  h.report(4, "stability rollouts", stability_rollouts(case39, trained39, detail), detail);

  detail.clear();
  h.report(5, "instability counterexample", instability_counterexample(case39, detail),
           detail);

  detail.clear();
  h.report(6, "comparative performance", comparative_performance(detail), detail);

  detail.clear();
  h.report(7, "universal approximation", universal_approximation(detail), detail);

  detail.clear();
  h.report(8, "equilibrium oracle", equilibrium_oracle(case39, trained39, detail), detail);

  detail.clear();
  h.report(9, "determinism", determinism(detail), detail);

  if (h.failed == 0) {
    std::printf("acceptance: all criteria passed\n");
    return 0;
  }
  std::printf("acceptance: %d criterion(s) failed\n", h.failed);
  return 1;
}
