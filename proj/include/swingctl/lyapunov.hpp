#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "swingctl/controller.hpp"
#include "swingctl/linalg.hpp"
#include "swingctl/network.hpp"
#include "swingctl/rng.hpp"

namespace swingctl {

// Executable form of the stability certificate: the energy function
//   V = 1/2 sum_i M_i (w_i - w*)^2 + W_p(delta) + eps * W_c(delta, w),
// its decrease rate along the swing dynamics, the 2n x 2n quadratic-form
// matrix Q(delta) governing that rate, and the controller checks that make
// the certificate apply.

struct LyapunovContext {
  NetworkCase net;
  Equilibrium eq;
  double epsilon = 0.0;
  Vec pe_star;  // p_e(delta*)
  Vec u_star;   // u_i(omega*)
};

inline LyapunovContext make_context(const NetworkCase& net, const Equilibrium& eq,
                                    double epsilon, const BusController& u) {
  LyapunovContext ctx{net, eq, epsilon, electrical_power(net, eq.delta_star), Vec(net.n)};
  for (int i = 0; i < net.n; ++i) ctx.u_star[i] = u(i, eq.omega_star);
  return ctx;
}

/// Energy relative to the equilibrium. Zero at (delta*, w*), positive on the
/// rest of the region where coupled angle differences stay within pi/2.
inline double lyapunov_V(const LyapunovContext& ctx, const Vec& delta, const Vec& omega) {
  const NetworkCase& net = ctx.net;
  const Vec& ds = ctx.eq.delta_star;
  double kinetic = 0.0;
  for (int i = 0; i < net.n; ++i) {
    const double dw = omega[i] - ctx.eq.omega_star;
    kinetic += 0.5 * net.inertia[i] * dw * dw;
  }
  // potential: double sum over ordered pairs, plus the linear correction that
  // re-centers the well at delta*
  double wp = 0.0;
  for (int i = 0; i < net.n; ++i) {
    for (int j = 0; j < net.n; ++j) {
      const double b = net.susceptance(i, j);
      if (b == 0.0) continue;
      wp += -0.5 * b * (std::cos(delta[i] - delta[j]) - std::cos(ds[i] - ds[j]));
    }
    wp -= ctx.pe_star[i] * (delta[i] - ds[i]);
  }
  const Vec pe = electrical_power(net, delta);
  double wc = 0.0;
  for (int i = 0; i < net.n; ++i)
    wc += (pe[i] - ctx.pe_star[i]) * net.inertia[i] * (omega[i] - ctx.eq.omega_star);
  return kinetic + wp + ctx.epsilon * wc;
}

/// Assembles Q(delta) = [[eps I, eps/2 D], [eps/2 D, D - eps/2 (HM + MH)]].
inline Mat q_matrix(const NetworkCase& net, const Vec& delta, double epsilon) {
  const int n = net.n;
  const Mat h = coupling_hessian(net, delta);
  Mat q(2 * n, 2 * n, 0.0);
  for (int i = 0; i < n; ++i) {
    q(i, i) = epsilon;
    q(i, n + i) = 0.5 * epsilon * net.damping[i];
    q(n + i, i) = 0.5 * epsilon * net.damping[i];
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double hm = h(i, j) * net.inertia[j];  // (HM)_ij
      const double mh = net.inertia[i] * h(i, j);  // (MH)_ij
      q(n + i, n + j) += -0.5 * epsilon * (hm + mh);
    }
    q(n + i, n + i) += net.damping[i];
  }
  return q;
}

inline double q_min_eigenvalue(const NetworkCase& net, const Vec& delta, double epsilon) {
  return min_eigenvalue(q_matrix(net, delta, epsilon));
}

/// Decrease rate of V along the continuous dynamics, evaluated directly from
/// the quadratic form and the controller cross term:
///   Vdot = -x^T Q(delta) x - [dw + eps dpe]^T (u(w) - u(w*)),
/// with x = [p_e(delta) - p_e(delta*); w - w*].
inline double vdot_analytic(const LyapunovContext& ctx, const Vec& delta, const Vec& omega,
                            const Vec& u_values) {
  const int n = ctx.net.n;
  const Vec pe = electrical_power(ctx.net, delta);
  Vec x(2 * n);
  for (int i = 0; i < n; ++i) {
    x[i] = pe[i] - ctx.pe_star[i];
    x[n + i] = omega[i] - ctx.eq.omega_star;
  }
  const Mat q = q_matrix(ctx.net, delta, ctx.epsilon);
  double quad = 0.0;
  for (int i = 0; i < 2 * n; ++i)
    for (int j = 0; j < 2 * n; ++j) quad += x[i] * q(i, j) * x[j];
  double cross = 0.0;
  for (int i = 0; i < n; ++i)
    cross += (x[n + i] + ctx.epsilon * x[i]) * (u_values[i] - ctx.u_star[i]);
  return -quad - cross;
}

// ---------------------------------------------------------------------------
// Sampling the angle region

/// Draws delta with coupled angle differences inside (-pi/2, pi/2): tree-edge
/// differences are sampled uniformly in [-pi/2 + 0.01, pi/2 - 0.01] and
/// propagated over a BFS spanning tree. Samples violating the region on a
/// chord are rejected and redrawn; if rejection keeps failing (densely meshed
/// graphs) the last draw is kept, which only widens the region the
/// certificate is checked on.
inline Vec sample_region_delta(const NetworkCase& net, Rng& rng) {
  const int n = net.n;
  // BFS tree (parent per bus)
  std::vector<int> parent(n, -1), order;
  order.reserve(n);
  std::vector<int> seen(n, 0);
  std::vector<int> queue{0};
  seen[0] = 1;
  for (std::size_t qi = 0; qi < queue.size(); ++qi) {
    const int i = queue[qi];
    order.push_back(i);
    for (int j = 0; j < n; ++j)
      if (!seen[j] && net.susceptance(i, j) > 0.0) {
        seen[j] = 1;
        parent[j] = i;
        queue.push_back(j);
      }
  }
  const double lim = std::numbers::pi / 2.0 - 0.01;
  Vec delta(n, 0.0);
  for (int attempt = 0; attempt < 100; ++attempt) {
    delta.assign(n, 0.0);
    for (int i : order)
      if (parent[i] >= 0) delta[i] = delta[parent[i]] + rng.uniform(-lim, lim);
    bool inside = true;
    for (int i = 0; i < n && inside; ++i)
      for (int j = i + 1; j < n && inside; ++j)
        if (net.susceptance(i, j) > 0.0 &&
            std::fabs(delta[i] - delta[j]) >= std::numbers::pi / 2.0)
          inside = false;
    if (inside) break;
  }
  return coi_transform(delta);
}

// ---------------------------------------------------------------------------
// Epsilon selection

struct EpsilonSearch {
  double epsilon_star = 0.0;  // largest validated mixing weight
  double lambda_min = 0.0;    // min sampled eigenvalue of Q at epsilon_star
};

/// Largest epsilon for which Q(delta) stays positive definite on a seeded
/// batch of region samples. Feasibility is an interval (0, eps_crit), so
/// bisection applies; the bracket expands upward when epsilon = 1 is still
/// feasible (lightly damped cases sit well above it).
inline EpsilonSearch epsilon_search(const NetworkCase& net, const Equilibrium& eq,
                                    int samples, std::uint64_t seed, double tol = 1e-6) {
  Rng rng(substream(seed, "epsilon-search"));
  std::vector<Vec> deltas;
  deltas.reserve(samples + 1);
  deltas.push_back(eq.delta_star);
  for (int s = 0; s < samples; ++s) deltas.push_back(sample_region_delta(net, rng));

  const auto lambda_min_at = [&](double eps) {
    double lmin = std::numeric_limits<double>::infinity();
    for (const Vec& d : deltas) lmin = std::min(lmin, q_min_eigenvalue(net, d, eps));
    return lmin;
  };

  double lo = 1e-8;
  double lo_lambda = lambda_min_at(lo);
  if (lo_lambda <= 0.0)
    throw SolveError("epsilon_search: Q(delta) not positive definite even at eps = 1e-8 "
                     "(worst sampled eigenvalue " + std::to_string(lo_lambda) + ")");
  double hi = 1.0;
  for (int e = 0; e < 5; ++e) {
    const double l = lambda_min_at(hi);
    if (l <= 0.0) break;
    lo = hi;
    lo_lambda = l;
    hi *= 2.0;
  }
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    const double l = lambda_min_at(mid);
    if (l > 0.0) {
      lo = mid;
      lo_lambda = l;
    } else {
      hi = mid;
    }
  }
  return EpsilonSearch{lo, lo_lambda};
}

// ---------------------------------------------------------------------------
// Certification

struct CertifyOptions {
  std::uint64_t seed = 0;
  int grid_points = 10000;       // monotonicity grid on [-omega_span, omega_span]
  int random_pairs = 10000;
  double omega_span = 10.0;      // rad/s
  int epsilon_samples = 1000;
  int vdot_states = 1000;        // non-equilibrium states for the decrease check
  double omega_amplitude = 1.0;  // rad/s around omega* for sampled states
  int series_stages = 1000;      // V / Vdot rollout length for the report
  double series_dt = 0.01;
};

struct PairWitness {
  double omega_lo = 0.0, omega_hi = 0.0;
  double u_lo = 0.0, u_hi = 0.0;
  int bus = 0;
};

struct LyapunovReport {
  bool certified = false;
  std::string refuted_reason;  // empty when certified
  bool monotone_pass = false;
  PairWitness worst_pair;  // smallest u(w2)-u(w1) margin seen (the witness when refuted)
  bool origin_pass = false;
  double worst_origin = 0.0;
  bool bounds_pass = false;
  double worst_bound_violation = 0.0;
  bool structural = false;  // monotone family: (i)-(iii) hold by construction
  double epsilon_star = 0.0;
  double epsilon_used = 0.0;
  double lambda_min_q = 0.0;
  bool vdot_pass = false;
  double worst_vdot = 0.0;
  std::optional<Equilibrium> equilibrium;
  Vec v_series, vdot_series, t_series;
};

inline LyapunovReport certify_controller(const NetworkCase& net, const ControllerSpec& spec,
                                         CertifyOptions opt = {}) {
  LyapunovReport rep;
  const int n = net.n;
  detail::require(controller_buses(spec) == n, "certify: controller bus count != case n");
  const BusController u = [&spec](int bus, double w) { return eval_any(spec, bus, w); };
  rep.structural = std::holds_alternative<MonotoneParams>(spec);
  if (rep.structural) validate_params(std::get<MonotoneParams>(spec));

  // (i) monotone on a fine grid plus random pairs; structure makes this a
  // redundancy for the stacked-ReLU family but it is checked regardless
  Rng rng(substream(opt.seed, "certify"));
  double worst_margin = std::numeric_limits<double>::infinity();
  const auto consider = [&](int bus, double w1, double w2) {
    const double u1 = u(bus, w1), u2 = u(bus, w2);
    const double margin = u2 - u1;
    if (margin < worst_margin) {
      worst_margin = margin;
      rep.worst_pair = PairWitness{w1, w2, u1, u2, bus};
    }
  };
  for (int bus = 0; bus < n; ++bus) {
    double prev_w = -opt.omega_span;
    double prev_u = u(bus, prev_w);
    for (int g = 1; g < opt.grid_points; ++g) {
      const double w = -opt.omega_span + 2.0 * opt.omega_span * g / (opt.grid_points - 1);
      const double uv = u(bus, w);
      if (uv - prev_u < worst_margin) {
        worst_margin = uv - prev_u;
        rep.worst_pair = PairWitness{prev_w, w, prev_u, uv, bus};
      }
      prev_w = w;
      prev_u = uv;
    }
  }
  for (int s = 0; s < opt.random_pairs; ++s) {
    const int bus = static_cast<int>(rng.raw() % n);
    double w1 = rng.uniform(-opt.omega_span, opt.omega_span);
    double w2 = rng.uniform(-opt.omega_span, opt.omega_span);
    if (w1 > w2) std::swap(w1, w2);
    consider(bus, w1, w2);
  }
  rep.monotone_pass = worst_margin >= -1e-12;

  // (ii) origin
  rep.worst_origin = 0.0;
  for (int bus = 0; bus < n; ++bus)
    rep.worst_origin = std::max(rep.worst_origin, std::fabs(u(bus, 0.0)));
  rep.origin_pass = rep.worst_origin <= 1e-12;

  // (iii) bounds: the family's own limits for monotone parameters, the case
  // limits for external tables
  const Vec& blo = rep.structural ? std::get<MonotoneParams>(spec).u_min : net.u_min;
  const Vec& bhi = rep.structural ? std::get<MonotoneParams>(spec).u_max : net.u_max;
  rep.worst_bound_violation = 0.0;
  for (int bus = 0; bus < n; ++bus) {
    for (int g = 0; g < 512; ++g) {
      const double w = -opt.omega_span + 2.0 * opt.omega_span * g / 511.0;
      const double uv = u(bus, w);
      rep.worst_bound_violation =
          std::max({rep.worst_bound_violation, uv - bhi[bus], blo[bus] - uv});
    }
  }
  rep.bounds_pass = rep.worst_bound_violation <= 1e-12;

  if (!rep.monotone_pass || !rep.origin_pass || !rep.bounds_pass) {
    rep.refuted_reason = !rep.monotone_pass ? "monotonicity"
                         : !rep.origin_pass ? "origin"
                                            : "bounds";
    return rep;
  }

  // (iv) equilibrium and the largest validated epsilon
  Equilibrium eq = solve_equilibrium(net, u);
  const EpsilonSearch es = epsilon_search(net, eq, opt.epsilon_samples, opt.seed);
  rep.epsilon_star = es.epsilon_star;
  rep.equilibrium = eq;

  // (v) decrease at sampled non-equilibrium states. Reports use eps*/2 for
  // margin; if a state still resists (the cross term is only nonnegative for
  // small enough eps), epsilon halves further. Monotonicity makes the limit
  // eps -> 0 strictly negative away from equilibrium, so this terminates.
  Rng srng(substream(opt.seed, "certify-states"));
  std::vector<std::pair<Vec, Vec>> states;
  states.reserve(opt.vdot_states);
  for (int s = 0; s < opt.vdot_states; ++s) {
    Vec d = sample_region_delta(net, srng);
    Vec w(n);
    for (int i = 0; i < n; ++i)
      w[i] = eq.omega_star + srng.uniform(-opt.omega_amplitude, opt.omega_amplitude);
    states.emplace_back(std::move(d), std::move(w));
  }
  double eps = 0.5 * es.epsilon_star;
  LyapunovContext ctx;
  for (int halving = 0; halving < 60; ++halving) {
    ctx = make_context(net, eq, eps, u);
    rep.worst_vdot = -std::numeric_limits<double>::infinity();
    for (const auto& [d, w] : states) {
      Vec uv(n);
      for (int i = 0; i < n; ++i) uv[i] = u(i, w[i]);
      rep.worst_vdot = std::max(rep.worst_vdot, vdot_analytic(ctx, d, w, uv));
    }
    if (rep.worst_vdot < 0.0) break;
    eps *= 0.5;
  }
  rep.epsilon_used = eps;
  rep.vdot_pass = rep.worst_vdot < 0.0;

  double lmin = std::numeric_limits<double>::infinity();
  Rng qrng(substream(opt.seed, "certify-q"));
  for (int s = 0; s < opt.epsilon_samples; ++s)
    lmin = std::min(lmin, q_min_eigenvalue(net, sample_region_delta(net, qrng), eps));
  rep.lambda_min_q = lmin;

  // V / Vdot series along a rollout from a perturbed start (forward Euler on
  // the swing dynamics, same discretization as training)
  {
    Rng prng(substream(opt.seed, "certify-series"));
    Vec theta(n), omega(n);
    for (int i = 0; i < n; ++i) {
      theta[i] = eq.delta_star[i] + prng.uniform(-0.05, 0.05);
      omega[i] = eq.omega_star + prng.uniform(-0.5, 0.5);
    }
    for (int k = 0; k <= opt.series_stages; ++k) {
      const Vec delta = coi_transform(theta);
      Vec uv(n);
      for (int i = 0; i < n; ++i) uv[i] = u(i, omega[i]);
      rep.t_series.push_back(k * opt.series_dt);
      rep.v_series.push_back(lyapunov_V(ctx, delta, omega));
      rep.vdot_series.push_back(vdot_analytic(ctx, delta, omega, uv));
      const Vec pe = electrical_power(net, theta);
      Vec omega_next(n);
      for (int i = 0; i < n; ++i)
        omega_next[i] = omega[i] + opt.series_dt / net.inertia[i] *
                                       (net.injection[i] - net.damping[i] * omega[i] -
                                        uv[i] - pe[i]);
      for (int i = 0; i < n; ++i) theta[i] += opt.series_dt * omega[i];
      omega = omega_next;
    }
  }

  if (!rep.vdot_pass) {
    rep.refuted_reason = "vdot";
    return rep;
  }
  rep.certified = true;
  return rep;
}

inline nlohmann::json report_to_json(const LyapunovReport& rep) {
  nlohmann::json j;
  j["verdict"] = rep.certified ? "certified" : "refuted";
  if (!rep.certified) j["refuted_reason"] = rep.refuted_reason;
  j["structural"] = rep.structural;
  j["monotone_check"] = {{"pass", rep.monotone_pass},
                         {"worst_pair",
                          {{"bus", rep.worst_pair.bus},
                           {"omega_lo", rep.worst_pair.omega_lo},
                           {"omega_hi", rep.worst_pair.omega_hi},
                           {"u_lo", rep.worst_pair.u_lo},
                           {"u_hi", rep.worst_pair.u_hi}}}};
  j["origin_check"] = {{"pass", rep.origin_pass}, {"worst_abs_u0", rep.worst_origin}};
  j["bounds_check"] = {{"pass", rep.bounds_pass},
                       {"worst_violation", rep.worst_bound_violation}};
  j["epsilon_star"] = rep.epsilon_star;
  j["epsilon_used"] = rep.epsilon_used;
  j["lambda_min_Q"] = rep.lambda_min_q;
  j["vdot_check"] = {{"pass", rep.vdot_pass}, {"worst_vdot", rep.worst_vdot}};
  if (rep.equilibrium) {
    j["equilibrium"] = {{"omega_star", rep.equilibrium->omega_star},
                        {"delta_star", rep.equilibrium->delta_star},
                        {"residual", rep.equilibrium->residual}};
  }
  j["v_series"] = rep.v_series;
  j["vdot_series"] = rep.vdot_series;
  j["t_series"] = rep.t_series;
  return j;
}

}  // namespace swingctl
