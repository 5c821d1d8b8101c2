#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "swingctl/errors.hpp"
#include "swingctl/linalg.hpp"

namespace swingctl {

/// Lossless swing-equation network: per-bus inertia and damping, symmetric
/// susceptance coupling, net injections, and actuation limits. Immutable
/// after construction; every operation below is a pure function of it.
struct NetworkCase {
  int n = 0;
  Vec inertia;      // M_i, s^2 on the system power base
  Vec damping;      // D_i, p.u. power per rad/s
  Mat susceptance;  // B, p.u.; symmetric, zero diagonal, off-diagonal >= 0
  Vec injection;    // p_m,i, p.u.
  Vec u_min, u_max; // actuation bounds, p.u.; u_min <= 0 <= u_max
  Vec rating;       // optional machine ratings P_i backing the bound draws
  double base_freq = 60.0;
};

struct Equilibrium {
  double omega_star = 0.0;  // synchronized frequency deviation, rad/s
  Vec delta_star;           // center-of-inertia angles, rad; sums to zero
  double residual = 0.0;    // max per-bus power-flow mismatch, p.u.
};

/// Decentralized controller: bus index and local frequency deviation in,
/// active power out.
using BusController = std::function<double(int bus, double omega)>;

inline void validate_case(const NetworkCase& net) {
  using detail::require;
  require(net.n >= 1, "case: n must be >= 1");
  const auto dim = [&](const Vec& v, const char* name) {
    require(static_cast<int>(v.size()) == net.n,
            std::string("case: ") + name + " must have length n");
  };
  dim(net.inertia, "M");
  dim(net.damping, "D");
  dim(net.injection, "p_m");
  dim(net.u_min, "u_min");
  dim(net.u_max, "u_max");
  require(net.susceptance.rows() == net.n && net.susceptance.cols() == net.n,
          "case: B must be n x n");
  for (int i = 0; i < net.n; ++i) {
    require(net.inertia[i] > 0.0, "case: M[" + std::to_string(i) + "] must be > 0");
    require(net.damping[i] > 0.0, "case: D[" + std::to_string(i) + "] must be > 0");
    require(net.u_min[i] <= 0.0, "case: u_min[" + std::to_string(i) + "] must be <= 0");
    require(net.u_max[i] >= 0.0, "case: u_max[" + std::to_string(i) + "] must be >= 0");
  }
  for (int i = 0; i < net.n; ++i) {
    detail::require(net.susceptance(i, i) == 0.0,
                    "case: B[" + std::to_string(i) + "][" + std::to_string(i) + "] must be 0");
    for (int j = 0; j < net.n; ++j) {
      require(net.susceptance(i, j) == net.susceptance(j, i),
              "case: B[" + std::to_string(i) + "][" + std::to_string(j) + "] not symmetric");
      if (i != j)
        require(net.susceptance(i, j) >= 0.0,
                "case: B[" + std::to_string(i) + "][" + std::to_string(j) + "] must be >= 0");
    }
  }
  // connectivity over nonzero couplings
  std::vector<int> seen(net.n, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    for (int j = 0; j < net.n; ++j)
      if (!seen[j] && net.susceptance(i, j) > 0.0) {
        seen[j] = 1;
        stack.push_back(j);
      }
  }
  for (int i = 0; i < net.n; ++i)
    require(seen[i] == 1, "case: bus " + std::to_string(i) + " disconnected");
  require(net.base_freq > 0.0, "case: base_freq must be > 0");
}

inline NetworkCase case_from_json(const nlohmann::json& j) {
  NetworkCase net;
  try {
    net.n = j.at("n").get<int>();
    net.inertia = j.at("M").get<Vec>();
    net.damping = j.at("D").get<Vec>();
    net.injection = j.at("p_m").get<Vec>();
    net.u_min = j.at("u_min").get<Vec>();
    net.u_max = j.at("u_max").get<Vec>();
    net.base_freq = j.at("base_freq").get<double>();
    if (j.contains("rating")) net.rating = j.at("rating").get<Vec>();
    const auto rows = j.at("B").get<std::vector<Vec>>();
    if (static_cast<int>(rows.size()) != net.n)
      throw ParseError("case: B must have n rows");
    net.susceptance = Mat(net.n, net.n);
    for (int i = 0; i < net.n; ++i) {
      if (static_cast<int>(rows[i].size()) != net.n)
        throw ParseError("case: B row " + std::to_string(i) + " must have n entries");
      for (int k = 0; k < net.n; ++k) net.susceptance(i, k) = rows[i][k];
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("case: ") + e.what());
  }
  // The diagonal never enters the dynamics (sin of a zero difference); force
  // it to zero so the coupling-matrix formulas are unambiguous.
  for (int i = 0; i < net.n; ++i) net.susceptance(i, i) = 0.0;
  validate_case(net);
  return net;
}

inline NetworkCase load_case(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("case: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("case: " + path + ": " + e.what());
  }
  return case_from_json(j);
}

inline nlohmann::json case_to_json(const NetworkCase& net) {
  nlohmann::json j;
  j["n"] = net.n;
  j["M"] = net.inertia;
  j["D"] = net.damping;
  std::vector<Vec> rows(net.n, Vec(net.n));
  for (int i = 0; i < net.n; ++i)
    for (int k = 0; k < net.n; ++k) rows[i][k] = net.susceptance(i, k);
  j["B"] = rows;
  j["p_m"] = net.injection;
  j["u_min"] = net.u_min;
  j["u_max"] = net.u_max;
  if (!net.rating.empty()) j["rating"] = net.rating;
  j["base_freq"] = net.base_freq;
  return j;
}

/// Center-of-inertia shift: subtracts the uniform mean so the result sums to
/// zero while every pairwise difference is preserved.
inline Vec coi_transform(const Vec& theta) {
  const double mean =
      std::accumulate(theta.begin(), theta.end(), 0.0) / static_cast<double>(theta.size());
  Vec delta(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) delta[i] = theta[i] - mean;
  return delta;
}

/// Per-bus electrical power p_e,i = sum_j B_ij sin(delta_i - delta_j).
/// Lossless antisymmetry makes the entries sum to zero.
inline Vec electrical_power(const NetworkCase& net, const Vec& delta) {
  Vec pe(net.n, 0.0);
  for (int i = 0; i < net.n; ++i)
    for (int j = 0; j < net.n; ++j)
      if (net.susceptance(i, j) != 0.0)
        pe[i] += net.susceptance(i, j) * std::sin(delta[i] - delta[j]);
  return pe;
}

/// Jacobian of p_e (equivalently the Hessian of the network potential):
/// off-diagonal -B_ij cos(delta_ij), diagonal the negated row sum. Rows sum
/// to zero; PSD whenever all coupled angle differences stay inside (-pi/2, pi/2).
inline Mat coupling_hessian(const NetworkCase& net, const Vec& delta) {
  Mat h(net.n, net.n, 0.0);
  for (int i = 0; i < net.n; ++i) {
    double diag = 0.0;
    for (int j = 0; j < net.n; ++j) {
      if (i == j || net.susceptance(i, j) == 0.0) continue;
      const double c = net.susceptance(i, j) * std::cos(delta[i] - delta[j]);
      h(i, j) = -c;
      diag += c;
    }
    h(i, i) = diag;
  }
  return h;
}

struct BisectOptions {
  double lo = -10.0, hi = 10.0;  // rad/s, covers any physical deviation
  int max_expand = 4;
  double tol = 1e-12;
};

/// Synchronized frequency deviation from the scalar power balance
/// sum(p_m) = sum_i u_i(w) + w * sum(D). With monotone controllers the
/// balance residual is strictly increasing in w, so bisection cannot miss.
inline double solve_omega_star(const NetworkCase& net, const BusController& u,
                               BisectOptions opt = {}) {
  const double pm_total = std::accumulate(net.injection.begin(), net.injection.end(), 0.0);
  const double d_total = std::accumulate(net.damping.begin(), net.damping.end(), 0.0);
  if (d_total <= 0.0) throw SolveError("solve_omega_star: total damping must be > 0");
  const auto g = [&](double w) {
    double s = w * d_total - pm_total;
    for (int i = 0; i < net.n; ++i) s += u(i, w);
    return s;
  };
  double lo = opt.lo, hi = opt.hi;
  double glo = g(lo), ghi = g(hi);
  for (int e = 0; e < opt.max_expand && glo * ghi > 0.0; ++e) {
    const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
    lo = mid - 2.0 * half;
    hi = mid + 2.0 * half;
    glo = g(lo);
    ghi = g(hi);
  }
  if (glo == 0.0) return lo;
  if (ghi == 0.0) return hi;
  if (glo * ghi > 0.0)
    throw SolveError("solve_omega_star: no sign change after bracket expansion; "
                     "controller is not monotone non-decreasing or balance is infeasible");
  // Bisect past the requested tolerance down to the floating-point floor so
  // the balance residual lands at roundoff level.
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    const double gm = g(mid);
    if (gm == 0.0) return mid;
    if ((gm < 0.0) == (glo < 0.0)) {
      lo = mid;
      glo = gm;
    } else {
      hi = mid;
    }
    if (hi - lo <= opt.tol * 1e-3) break;
  }
  return 0.5 * (lo + hi);
}

struct NewtonOptions {
  double tol = 1e-8;  // residual infinity-norm
  int max_iter = 50;
};

/// Equilibrium angles for a given omega_star: Newton iteration on
/// 0 = p_m,i - D_i w* - u_i(w*) - p_e,i(delta) under the zero-mean COI
/// constraint (bordered system), flat start. Every coupled angle difference
/// must land inside [0, pi/2); leaving that region is reported, not ignored.
inline Equilibrium solve_delta_star(const NetworkCase& net, double omega_star,
                                    const BusController& u, NewtonOptions opt = {}) {
  const int n = net.n;
  Vec p_eff(n);
  for (int i = 0; i < n; ++i)
    p_eff[i] = net.injection[i] - net.damping[i] * omega_star - u(i, omega_star);

  Vec delta(n, 0.0);
  double resid = 0.0;
  bool converged = false;
  for (int it = 0; it < opt.max_iter; ++it) {
    const Vec pe = electrical_power(net, delta);
    Vec g(n);
    resid = 0.0;
    for (int i = 0; i < n; ++i) {
      g[i] = p_eff[i] - pe[i];
      resid = std::max(resid, std::fabs(g[i]));
    }
    if (resid <= opt.tol) {
      converged = true;
      break;
    }
    if (!std::isfinite(resid)) break;
    // bordered system [[H, 1],[1^T, 0]] keeps the step mean-free
    const Mat h = coupling_hessian(net, delta);
    Mat a(n + 1, n + 1, 0.0);
    Vec rhs(n + 1, 0.0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) a(i, j) = h(i, j);
      a(i, n) = 1.0;
      a(n, i) = 1.0;
      rhs[i] = g[i];
    }
    Vec step;
    try {
      step = solve_linear(a, rhs);
    } catch (const SolveError&) {
      break;
    }
    double step_norm = 0.0;
    for (int i = 0; i < n; ++i) {
      delta[i] += step[i];
      step_norm = std::max(step_norm, std::fabs(step[i]));
    }
    if (!std::isfinite(step_norm) || step_norm > 1e3) break;
  }
  if (!converged)
    throw SolveError("solve_delta_star: Newton did not reach residual " +
                     std::to_string(opt.tol) + " in " + std::to_string(opt.max_iter) +
                     " iterations (power flow may be infeasible); last residual " +
                     std::to_string(resid));
  delta = coi_transform(delta);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (net.susceptance(i, j) > 0.0 &&
          std::fabs(delta[i] - delta[j]) >= std::numbers::pi / 2.0)
        throw SolveError("solve_delta_star: |delta_" + std::to_string(i) + " - delta_" +
                         std::to_string(j) + "| = " +
                         std::to_string(std::fabs(delta[i] - delta[j])) +
                         " leaves [0, pi/2)");
  return Equilibrium{omega_star, std::move(delta), resid};
}

inline Equilibrium solve_equilibrium(const NetworkCase& net, const BusController& u,
                                     BisectOptions bopt = {}, NewtonOptions nopt = {}) {
  const double w = solve_omega_star(net, u, bopt);
  return solve_delta_star(net, w, u, nopt);
}

}  // namespace swingctl
