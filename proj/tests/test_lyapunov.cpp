#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "swingctl/lyapunov.hpp"
#include "swingctl/sim.hpp"

using namespace swingctl;
using Catch::Matchers::WithinAbs;

namespace {

NetworkCase two_bus(double b12 = 1.0) {
  NetworkCase net;
  net.n = 2;
  net.inertia = {1.0, 1.0};
  net.damping = {1.0, 1.0};
  net.susceptance = Mat(2, 2);
  net.susceptance(0, 1) = b12;
  net.susceptance(1, 0) = b12;
  net.injection = {0.0, 0.0};
  net.u_min = {-1.0, -1.0};
  net.u_max = {1.0, 1.0};
  return net;
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

const BusController kZeroCtrl = [](int, double) { return 0.0; };

NetworkCase case3() { return load_case(oracles::cases_dir() + "/case3.json"); }

}  // namespace

TEST_CASE("electrical_power: examples and conservation") {
  const NetworkCase net = two_bus();
  const Vec zero = electrical_power(net, {0.0, 0.0});
  CHECK(zero[0] == 0.0);
  CHECK(zero[1] == 0.0);

  const Vec pe = electrical_power(net, {0.05, -0.05});
  CHECK_THAT(pe[0], WithinAbs(std::sin(0.1), 1e-15));
  CHECK_THAT(pe[1], WithinAbs(-std::sin(0.1), 1e-15));

  const NetworkCase c3 = case3();
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Vec delta(3);
    for (double& d : delta) d = rng.uniform(-1.0, 1.0);
    const Vec p = electrical_power(c3, delta);
    CHECK(std::fabs(p[0] + p[1] + p[2]) <= 1e-12);
  }
}

TEST_CASE("coupling_hessian matches the closed forms") {
  const NetworkCase net = two_bus();
  const Mat h0 = coupling_hessian(net, {0.0, 0.0});
  CHECK_THAT(h0(0, 0), WithinAbs(1.0, 1e-15));
  CHECK_THAT(h0(0, 1), WithinAbs(-1.0, 1e-15));
  CHECK_THAT(h0(1, 0), WithinAbs(-1.0, 1e-15));
  CHECK_THAT(h0(1, 1), WithinAbs(1.0, 1e-15));

  const double third = std::numbers::pi / 3.0;
  const Mat h1 = coupling_hessian(net, {third / 2.0, -third / 2.0});
  CHECK_THAT(h1(0, 0), WithinAbs(0.5, 1e-15));
  CHECK_THAT(h1(0, 1), WithinAbs(-0.5, 1e-15));

  // rows sum to zero for random angles
  const NetworkCase c3 = case3();
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    Vec delta(3);
    for (double& d : delta) d = rng.uniform(-1.0, 1.0);
    const Mat h = coupling_hessian(c3, delta);
    for (int i = 0; i < 3; ++i) {
      double row = 0.0;
      for (int j = 0; j < 3; ++j) {
        row += h(i, j);
        CHECK(h(i, j) == h(j, i));
      }
      CHECK_THAT(row, WithinAbs(0.0, 1e-14));
    }
  }
}

TEST_CASE("lyapunov_V: equilibrium zero, potential and kinetic hand values") {
  const NetworkCase net = two_bus();
  const Equilibrium eq = solve_equilibrium(net, kZeroCtrl);
  const LyapunovContext ctx = make_context(net, eq, 0.1, kZeroCtrl);

  CHECK_THAT(lyapunov_V(ctx, eq.delta_star, {eq.omega_star, eq.omega_star}),
             WithinAbs(0.0, 1e-15));

  // pure angle displacement: V = -(cos(0.1) - 1), both orderings counted
  CHECK_THAT(lyapunov_V(ctx, {0.05, -0.05}, {0.0, 0.0}),
             WithinAbs(1.0 - std::cos(0.1), 1e-12));
  CHECK_THAT(lyapunov_V(ctx, {0.05, -0.05}, {0.0, 0.0}), WithinAbs(0.0049958347, 1e-9));

  // pure frequency displacement: V = 1/2 sum M dw^2
  const double v = lyapunov_V(ctx, eq.delta_star, {0.3, -0.2});
  CHECK_THAT(v, WithinAbs(0.5 * (0.3 * 0.3 + 0.2 * 0.2), 1e-12));
}

TEST_CASE("lyapunov_V is invariant to uniform angle shifts") {
  const NetworkCase net = case3();
  const Equilibrium eq = solve_equilibrium(net, kZeroCtrl);
  const LyapunovContext ctx = make_context(net, eq, 0.05, kZeroCtrl);
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    Vec delta(3), omega(3);
    for (double& d : delta) d = rng.uniform(-0.5, 0.5);
    for (double& w : omega) w = rng.uniform(-1.0, 1.0);
    const double v0 = lyapunov_V(ctx, delta, omega);
    const double shift = rng.uniform(-2.0, 2.0);
    Vec shifted = delta;
    for (double& d : shifted) d += shift;
    CHECK_THAT(lyapunov_V(ctx, shifted, omega), WithinAbs(v0, 1e-10));
  }
}

TEST_CASE("q_matrix: single-machine closed form and the small-epsilon limit") {
  const NetworkCase net = one_bus(2.0);
  // PD iff 0 < eps < 2 from det = eps*D - eps^2 D^2/4
  CHECK(q_min_eigenvalue(net, {0.0}, 1.0) > 0.0);
  CHECK(q_min_eigenvalue(net, {0.0}, 1.999) > 0.0);
  CHECK(q_min_eigenvalue(net, {0.0}, 2.001) < 0.0);
  CHECK(q_min_eigenvalue(net, {0.0}, 2.4) < 0.0);
  CHECK_THAT(q_min_eigenvalue(net, {0.0}, 1e-9), WithinAbs(0.0, 1e-8));
}

TEST_CASE("epsilon_search: closed form, margin, determinism") {
  const NetworkCase net = one_bus(2.0);
  const Equilibrium eq = solve_equilibrium(net, kZeroCtrl);
  const EpsilonSearch es = epsilon_search(net, eq, 20, 7);
  CHECK_THAT(es.epsilon_star, WithinAbs(2.0, 1e-6));  // 4 / D, at bisection tolerance
  CHECK(es.lambda_min > 0.0);

  const NetworkCase c3 = case3();
  const Equilibrium eq3 = solve_equilibrium(c3, kZeroCtrl);
  const EpsilonSearch a = epsilon_search(c3, eq3, 200, 42);
  const EpsilonSearch b = epsilon_search(c3, eq3, 200, 42);
  CHECK(a.epsilon_star == b.epsilon_star);  // bitwise reproducible
  CHECK(a.epsilon_star > 0.0);

  // downward closedness: half the validated epsilon also validates
  Rng rng(1234);
  for (int s = 0; s < 200; ++s) {
    const Vec d = sample_region_delta(c3, rng);
    CHECK(q_min_eigenvalue(c3, d, a.epsilon_star / 2.0) > 0.0);
  }
}

TEST_CASE("q_matrix stays PD at the searched epsilon over fresh region samples") {
  const NetworkCase c3 = case3();
  const Equilibrium eq = solve_equilibrium(c3, kZeroCtrl);
  const EpsilonSearch es = epsilon_search(c3, eq, 1000, 11);
  Rng rng(999);
  double lmin = 1e300;
  for (int s = 0; s < 1000; ++s) {
    const Vec d = sample_region_delta(c3, rng);
    lmin = std::min(lmin, q_min_eigenvalue(c3, d, es.epsilon_star / 2.0));
  }
  CHECK(lmin > 0.0);
}

TEST_CASE("region sampling keeps coupled angle differences inside the domain") {
  const NetworkCase c3 = case3();
  Rng rng(3);
  for (int s = 0; s < 500; ++s) {
    const Vec d = sample_region_delta(c3, rng);
    double sum = 0.0;
    for (double v : d) sum += v;
    CHECK(std::fabs(sum) <= 1e-12);
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j)
        if (c3.susceptance(i, j) > 0.0)
          CHECK(std::fabs(d[i] - d[j]) < std::numbers::pi / 2.0);
  }
}

TEST_CASE("vdot_analytic: zero at equilibrium, negative under a monotone controller") {
  const NetworkCase net = case3();
  const Vec gains{3.0, 2.0, 4.0};
  const MonotoneParams droop = droop_representation(gains, net.u_min, net.u_max);
  const BusController u = [&](int i, double w) { return eval_controller(droop, i, w); };
  const Equilibrium eq = solve_equilibrium(net, u);
  const EpsilonSearch es = epsilon_search(net, eq, 500, 21);
  const LyapunovContext ctx = make_context(net, eq, es.epsilon_star / 2.0, u);

  Vec u_eq(3);
  for (int i = 0; i < 3; ++i) u_eq[i] = u(i, eq.omega_star);
  CHECK_THAT(vdot_analytic(ctx, eq.delta_star, Vec(3, eq.omega_star), u_eq),
             WithinAbs(0.0, 1e-14));

  Rng rng(77);
  double worst = -1e300;
  for (int s = 0; s < 100; ++s) {
    const Vec d = sample_region_delta(net, rng);
    Vec w(3);
    for (double& x : w) x = eq.omega_star + rng.uniform(-1.0, 1.0);
    Vec uv(3);
    for (int i = 0; i < 3; ++i) uv[i] = u(i, w[i]);
    worst = std::max(worst, vdot_analytic(ctx, d, w, uv));
  }
  CHECK(worst < 0.0);
}

TEST_CASE("vdot_analytic agrees with finite differences along the continuous flow") {
  const NetworkCase net = case3();
  const Vec gains{3.0, 2.0, 4.0};
  const MonotoneParams droop = droop_representation(gains, net.u_min, net.u_max);
  const BusController u = [&](int i, double w) { return eval_controller(droop, i, w); };
  const auto ctrl = [&](int i, double w) { return u(i, w); };
  const Equilibrium eq = solve_equilibrium(net, u);
  const EpsilonSearch es = epsilon_search(net, eq, 300, 33);
  const LyapunovContext ctx = make_context(net, eq, es.epsilon_star / 2.0, u);

  Rng rng(123);
  const double h = 1e-5;
  int checked = 0;
  for (int s = 0; s < 100; ++s) {
    const Vec theta = sample_region_delta(net, rng);
    Vec w(3);
    for (double& x : w) x = eq.omega_star + rng.uniform(-1.0, 1.0);
    Vec uv(3);
    for (int i = 0; i < 3; ++i) uv[i] = u(i, w[i]);
    const double analytic = vdot_analytic(ctx, coi_transform(theta), w, uv);

    const auto fwd = flow_rk4(net, theta, w, ctrl, h);
    const auto bwd = flow_rk4(net, theta, w, ctrl, -h);
    const double v_fwd = lyapunov_V(ctx, coi_transform(fwd.first), fwd.second);
    const double v_bwd = lyapunov_V(ctx, coi_transform(bwd.first), bwd.second);
    const double fd = (v_fwd - v_bwd) / (2.0 * h);
    ++checked;
    REQUIRE_THAT(analytic, WithinAbs(fd, 1e-4 * std::max(std::fabs(fd), 1e-6)));
  }
  CHECK(checked == 100);
}

TEST_CASE("a destabilizing controller produces a positive vdot sample") {
  const NetworkCase net = case3();
  const BusController u = [](int, double w) { return -5.0 * w; };
  const Equilibrium eq = solve_equilibrium(net, u);  // balance still has a root
  const EpsilonSearch es = epsilon_search(net, eq, 200, 5);
  const LyapunovContext ctx = make_context(net, eq, es.epsilon_star / 2.0, u);
  Rng rng(31);
  bool found_positive = false;
  for (int s = 0; s < 200 && !found_positive; ++s) {
    const Vec d = sample_region_delta(net, rng);
    Vec w(3);
    for (double& x : w) x = rng.uniform(-1.0, 1.0);
    Vec uv(3);
    for (int i = 0; i < 3; ++i) uv[i] = u(i, w[i]);
    found_positive = vdot_analytic(ctx, d, w, uv) > 0.0;
  }
  CHECK(found_positive);
}

TEST_CASE("V is positive away from the equilibrium with quadratic sandwich bounds") {
  const NetworkCase net = case3();
  const Equilibrium eq = solve_equilibrium(net, kZeroCtrl);
  const EpsilonSearch es = epsilon_search(net, eq, 300, 13);
  const LyapunovContext ctx = make_context(net, eq, es.epsilon_star / 2.0, kZeroCtrl);

  Rng rng(2718);
  double ratio_lo = 1e300, ratio_hi = 0.0;
  for (int s = 0; s < 10000; ++s) {
    const Vec d = sample_region_delta(net, rng);
    Vec w(3);
    for (double& x : w) x = eq.omega_star + rng.uniform(-1.0, 1.0);
    double dist2 = 0.0;
    for (int i = 0; i < 3; ++i) {
      dist2 += (d[i] - eq.delta_star[i]) * (d[i] - eq.delta_star[i]);
      dist2 += (w[i] - eq.omega_star) * (w[i] - eq.omega_star);
    }
    const double v = lyapunov_V(ctx, d, w);
    if (dist2 < 1e-12) continue;
    REQUIRE(v > 0.0);
    ratio_lo = std::min(ratio_lo, v / dist2);
    ratio_hi = std::max(ratio_hi, v / dist2);
  }
  // empirical alpha_1, alpha_2 of the quadratic sandwich
  CHECK(ratio_lo > 1e-4);
  CHECK(ratio_hi < 1e4);
  INFO("alpha1 ~= " << ratio_lo << ", alpha2 ~= " << ratio_hi);

  // V -> 0 only at the equilibrium itself
  CHECK_THAT(lyapunov_V(ctx, eq.delta_star, Vec(3, eq.omega_star)), WithinAbs(0.0, 1e-12));
}

TEST_CASE("empirical exponential-decrease constant is positive") {
  const NetworkCase net = case3();
  const Vec gains{3.0, 2.0, 4.0};
  const MonotoneParams droop = droop_representation(gains, net.u_min, net.u_max);
  const BusController u = [&](int i, double w) { return eval_controller(droop, i, w); };
  const Equilibrium eq = solve_equilibrium(net, u);
  const EpsilonSearch es = epsilon_search(net, eq, 300, 57);
  const LyapunovContext ctx = make_context(net, eq, es.epsilon_star / 2.0, u);
  Rng rng(11);
  double c_hat = 1e300;
  for (int s = 0; s < 500; ++s) {
    const Vec d = sample_region_delta(net, rng);
    Vec w(3);
    for (double& x : w) x = eq.omega_star + rng.uniform(-1.0, 1.0);
    Vec uv(3);
    for (int i = 0; i < 3; ++i) uv[i] = u(i, w[i]);
    const double v = lyapunov_V(ctx, d, w);
    const double vd = vdot_analytic(ctx, d, w, uv);
    if (v > 1e-10) c_hat = std::min(c_hat, -vd / v);
  }
  CHECK(c_hat > 0.0);
  INFO("empirical decrease constant " << c_hat);
}

TEST_CASE("certify accepts any valid monotone parameters") {
  const NetworkCase net = case3();
  Rng rng(404);
  const MonotoneParams p = [&] {
    MonotoneParams q = oracles::random_params(3, 4, rng);
    q.u_min = net.u_min;
    q.u_max = net.u_max;
    return q;
  }();
  CertifyOptions opt;
  opt.seed = 1;
  opt.grid_points = 2000;
  opt.random_pairs = 2000;
  opt.epsilon_samples = 150;
  opt.vdot_states = 150;
  opt.series_stages = 100;
  const LyapunovReport rep = certify_controller(net, p, opt);
  CHECK(rep.certified);
  CHECK(rep.structural);
  CHECK(rep.monotone_pass);
  CHECK(rep.origin_pass);
  CHECK(rep.bounds_pass);
  CHECK(rep.epsilon_star > 0.0);
  CHECK(rep.lambda_min_q > 0.0);
  CHECK(rep.worst_vdot < 0.0);
  CHECK(rep.v_series.size() == rep.vdot_series.size());
}

TEST_CASE("certify accepts a trained controller on the dense 10-machine case") {
  const NetworkCase net = load_case(oracles::cases_dir() + "/case39kron.json");
  TrainConfig cfg;
  cfg.episodes = 8;
  cfg.batch = 8;
  cfg.stages = 100;
  cfg.hidden = 10;
  cfg.seed = 12;
  cfg.init_droop_k0 = 15.0;
  const TrainResult tr = train(net, cfg);
  CertifyOptions opt;
  opt.seed = 12;
  opt.grid_points = 1000;
  opt.random_pairs = 500;
  opt.epsilon_samples = 100;
  opt.vdot_states = 100;
  opt.series_stages = 50;
  const LyapunovReport rep = certify_controller(net, tr.params, opt);
  CHECK(rep.certified);
  CHECK(rep.epsilon_star > 0.0);
  CHECK(rep.epsilon_used <= rep.epsilon_star / 2.0 + 1e-15);
  CHECK(rep.lambda_min_q > 0.0);
  CHECK(rep.worst_vdot < 0.0);
  REQUIRE(rep.equilibrium.has_value());
  CHECK(rep.equilibrium->residual <= 1e-8);
}

TEST_CASE("certify refutes the decreasing table controller with a witness") {
  const NetworkCase net = case3();
  TableController t;
  t.knots = {-1.0, 0.0, 1.0};
  t.values = {{5.0, 0.0, -5.0}, {5.0, 0.0, -5.0}, {5.0, 0.0, -5.0}};
  t.linear_extrapolation = true;
  CertifyOptions opt;
  opt.seed = 2;
  opt.grid_points = 2000;
  opt.random_pairs = 500;
  const LyapunovReport rep = certify_controller(net, t, opt);
  CHECK_FALSE(rep.certified);
  CHECK(rep.refuted_reason == "monotonicity");
  CHECK(rep.worst_pair.u_lo > rep.worst_pair.u_hi);
  CHECK(rep.worst_pair.omega_lo < rep.worst_pair.omega_hi);
}

TEST_CASE("certify refutes an origin-violating table controller") {
  const NetworkCase net = case3();
  TableController t;
  t.knots = {-1.0, 1.0};
  // u(0) = 0.1: monotone but displaced from the origin
  t.values = {{0.0, 0.2}, {0.0, 0.2}, {0.0, 0.2}};
  const LyapunovReport rep = certify_controller(net, t, CertifyOptions{.seed = 3});
  CHECK_FALSE(rep.certified);
  CHECK(rep.refuted_reason == "origin");
  CHECK(rep.worst_origin > 0.05);
}
