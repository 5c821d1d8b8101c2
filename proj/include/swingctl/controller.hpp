#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "swingctl/errors.hpp"
#include "swingctl/linalg.hpp"
#include "swingctl/rng.hpp"

namespace swingctl {

// Monotone stacked-ReLU controller family.
//
// Per bus, a rising side f+ and a falling-domain side f- are single hidden
// layers of m ReLU units whose breakpoints activate in order and whose
// cumulative slopes stay non-negative. Everything is parameterized by the
// non-negative "hat" vectors
//   q_hat: cumulative slopes of f+        b_hat: breakpoint spacings of f+
//   z_hat: cumulative slopes of f-        c_hat: breakpoint spacings of f-
// so plain clamping at zero preserves monotonicity through the whole of
// training. The raw layer weights are a derived view (build_raw_weights).
// The final controller saturates f+ + f- into [u_min, u_max] with two more
// ReLUs and passes through the origin exactly.
struct MonotoneParams {
  int n = 0;  // buses
  int m = 0;  // hidden units per side
  std::vector<Vec> q_hat, b_hat, z_hat, c_hat;  // [n][m]
  Vec u_min, u_max;                             // per bus, p.u.
  Vec deadband;                                 // per bus, rad/s, >= 0 (0 = off)
};

inline void validate_params(const MonotoneParams& p) {
  detail::require(p.n >= 1 && p.m >= 1, "params: n and m must be >= 1");
  const auto check = [&](const std::vector<Vec>& h, const char* name, bool first_zero) {
    detail::require(static_cast<int>(h.size()) == p.n,
                    std::string("params: ") + name + " must have n rows");
    for (int i = 0; i < p.n; ++i) {
      detail::require(static_cast<int>(h[i].size()) == p.m,
                      std::string("params: ") + name + "[" + std::to_string(i) +
                          "] must have m entries");
      for (int l = 0; l < p.m; ++l)
        detail::require(h[i][l] >= 0.0, std::string("params: ") + name + "[" +
                                            std::to_string(i) + "][" + std::to_string(l) +
                                            "] must be >= 0");
      if (first_zero)
        detail::require(h[i][0] == 0.0, std::string("params: ") + name + "[" +
                                            std::to_string(i) + "][0] must be 0");
    }
  };
  check(p.q_hat, "q_hat", false);
  check(p.b_hat, "b_hat", true);
  check(p.z_hat, "z_hat", false);
  check(p.c_hat, "c_hat", true);
  detail::require(static_cast<int>(p.u_min.size()) == p.n &&
                      static_cast<int>(p.u_max.size()) == p.n,
                  "params: u_min/u_max must have length n");
  for (int i = 0; i < p.n; ++i)
    detail::require(p.u_min[i] <= 0.0 && p.u_max[i] >= 0.0,
                    "params: need u_min <= 0 <= u_max at bus " + std::to_string(i));
  detail::require(p.deadband.empty() || static_cast<int>(p.deadband.size()) == p.n,
                  "params: deadband must be empty or length n");
  for (std::size_t i = 0; i < p.deadband.size(); ++i) {
    detail::require(p.deadband[i] >= 0.0, "params: deadband must be >= 0");
    if (p.deadband[i] > 0.0) {
      detail::require(p.m >= 2, "params: deadband requires m >= 2");
      detail::require(p.q_hat[i][0] == 0.0 && p.z_hat[i][0] == 0.0 &&
                          p.b_hat[i][1] == p.deadband[i] && p.c_hat[i][1] == p.deadband[i],
                      "params: deadband structure violated at bus " + std::to_string(i));
    }
  }
}

/// Raw single-layer weights recovered from the hats:
///   q1 = q_hat1, ql = q_hatl - q_hat(l-1);  b1 = 0, bl = -sum_{j<=l} b_hatj
/// and mirrored with a sign flip for (z, c).
struct RawWeights {
  Vec q, b, z, c;
};

inline RawWeights build_raw_weights(const MonotoneParams& p, int bus) {
  RawWeights r{Vec(p.m), Vec(p.m), Vec(p.m), Vec(p.m)};
  double bsum = 0.0, csum = 0.0;
  for (int l = 0; l < p.m; ++l) {
    r.q[l] = p.q_hat[bus][l] - (l > 0 ? p.q_hat[bus][l - 1] : 0.0);
    r.z[l] = -(p.z_hat[bus][l] - (l > 0 ? p.z_hat[bus][l - 1] : 0.0));
    if (l > 0) {
      bsum += p.b_hat[bus][l];
      csum += p.c_hat[bus][l];
    }
    r.b[l] = -bsum;
    r.c[l] = -csum;
  }
  return r;
}

namespace detail {
inline double relu(double x) { return x > 0.0 ? x : 0.0; }
// one-sided derivative; the unit at its own kink counts as inactive
inline double relu_active(double x) { return x > 0.0 ? 1.0 : 0.0; }
}  // namespace detail

/// Rising side: zero for omega <= 0, piecewise-linear and non-decreasing for
/// omega > 0 with slope q_hat[l] on the l-th piece.
inline double eval_fplus(const MonotoneParams& p, int bus, double omega) {
  const Vec& qh = p.q_hat[bus];
  const Vec& bh = p.b_hat[bus];
  double prev = 0.0, bias = 0.0, acc = 0.0;
  for (int l = 0; l < p.m; ++l) {
    if (l > 0) bias -= bh[l];
    const double x = omega + bias;
    if (x > 0.0) acc += (qh[l] - prev) * x;
    prev = qh[l];
  }
  return acc;
}

/// Falling-domain side: zero for omega >= 0, non-decreasing and <= 0 for
/// omega < 0.
inline double eval_fminus(const MonotoneParams& p, int bus, double omega) {
  const Vec& zh = p.z_hat[bus];
  const Vec& ch = p.c_hat[bus];
  double prev = 0.0, bias = 0.0, acc = 0.0;
  for (int l = 0; l < p.m; ++l) {
    if (l > 0) bias -= ch[l];
    const double x = -omega + bias;
    if (x > 0.0) acc -= (zh[l] - prev) * x;
    prev = zh[l];
  }
  return acc;
}

/// Saturated controller u = u_max - relu(u_max - f) + relu(u_min - f) with
/// f = f+ + f-. Monotone, through the origin, bounded in [u_min, u_max].
/// Evaluated in clamp form, which is the same expression without the
/// round-off that would let u escape the bounds by an ulp.
inline double eval_controller(const MonotoneParams& p, int bus, double omega) {
  const double f = eval_fplus(p, bus, omega) + eval_fminus(p, bus, omega);
  return std::clamp(f, p.u_min[bus], p.u_max[bus]);
}

/// du/domega with the inactive-branch convention at kinks (sigma'(0) = 0);
/// zero whenever the saturation clamp is engaged.
inline double controller_slope(const MonotoneParams& p, int bus, double omega) {
  const Vec& qh = p.q_hat[bus];
  const Vec& bh = p.b_hat[bus];
  const Vec& zh = p.z_hat[bus];
  const Vec& ch = p.c_hat[bus];
  double f = 0.0, df = 0.0;
  double prev = 0.0, bias = 0.0;
  for (int l = 0; l < p.m; ++l) {
    if (l > 0) bias -= bh[l];
    const double x = omega + bias;
    if (x > 0.0) {
      f += (qh[l] - prev) * x;
      df += qh[l] - prev;
    }
    prev = qh[l];
  }
  prev = 0.0;
  bias = 0.0;
  for (int l = 0; l < p.m; ++l) {
    if (l > 0) bias -= ch[l];
    const double x = -omega + bias;
    if (x > 0.0) {
      f -= (zh[l] - prev) * x;
      df += zh[l] - prev;
    }
    prev = zh[l];
  }
  const double gate = detail::relu_active(p.u_max[bus] - f) - detail::relu_active(p.u_min[bus] - f);
  return gate * df;
}

/// Gradient of eval_controller w.r.t. one bus's hat vectors.
struct HatGrad {
  Vec q_hat, b_hat, z_hat, c_hat;
};

/// Adds coeff * du/d(hats) for one bus into the four accumulators. This is
/// the training hot path; grad_params below is the allocating wrapper.
inline void accumulate_grad_params(const MonotoneParams& p, int bus, double omega,
                                   double coeff, Vec& gq, Vec& gb, Vec& gz, Vec& gc) {
  if (coeff == 0.0) return;
  const int m = p.m;
  const Vec& qh = p.q_hat[bus];
  const Vec& bh = p.b_hat[bus];
  const Vec& zh = p.z_hat[bus];
  const Vec& ch = p.c_hat[bus];
  // forward values; kept on the stack via small local buffers
  thread_local Vec xp, xm;
  xp.assign(m, 0.0);
  xm.assign(m, 0.0);
  double f = 0.0, bias = 0.0, prev = 0.0;
  for (int l = 0; l < m; ++l) {
    if (l > 0) bias -= bh[l];
    xp[l] = omega + bias;
    if (xp[l] > 0.0) f += (qh[l] - prev) * xp[l];
    prev = qh[l];
  }
  bias = 0.0;
  prev = 0.0;
  for (int l = 0; l < m; ++l) {
    if (l > 0) bias -= ch[l];
    xm[l] = -omega + bias;
    if (xm[l] > 0.0) f -= (zh[l] - prev) * xm[l];
    prev = zh[l];
  }
  const double gate =
      detail::relu_active(p.u_max[bus] - f) - detail::relu_active(p.u_min[bus] - f);
  if (gate == 0.0) return;  // clamp engaged: parameters cannot move the output
  const double c = coeff * gate;
  // d f+ / d q_hat[l] = relu(x_l) - relu(x_{l+1}) (Abel summation);
  // d f+ / d b_hat[j] = -sum_{l >= j} (q_hat[l]-q_hat[l-1]) [x_l > 0], j >= 1
  double suffix = 0.0;
  for (int l = m - 1; l >= 0; --l) {
    const double next = (l + 1 < m && xp[l + 1] > 0.0) ? xp[l + 1] : 0.0;
    gq[l] += c * (detail::relu(xp[l]) - next);
    if (xp[l] > 0.0) suffix += qh[l] - (l > 0 ? qh[l - 1] : 0.0);
    if (l >= 1) gb[l] += c * (-suffix);
  }
  // mirrored for f-: d f- / d z_hat[l] = -(relu(y_l) - relu(y_{l+1}));
  // d f- / d c_hat[j] = +sum_{l >= j} (z_hat[l]-z_hat[l-1]) [y_l > 0]
  suffix = 0.0;
  for (int l = m - 1; l >= 0; --l) {
    const double next = (l + 1 < m && xm[l + 1] > 0.0) ? xm[l + 1] : 0.0;
    gz[l] += c * (next - detail::relu(xm[l]));
    if (xm[l] > 0.0) suffix += zh[l] - (l > 0 ? zh[l - 1] : 0.0);
    if (l >= 1) gc[l] += c * suffix;
  }
}

inline HatGrad grad_params(const MonotoneParams& p, int bus, double omega) {
  HatGrad g{Vec(p.m, 0.0), Vec(p.m, 0.0), Vec(p.m, 0.0), Vec(p.m, 0.0)};
  accumulate_grad_params(p, bus, omega, 1.0, g.q_hat, g.b_hat, g.z_hat, g.c_hat);
  return g;
}

/// Projects iterates back onto the feasible set: hats clamped at zero, first
/// spacings pinned to zero, deadband structure re-pinned. Keeping this exact
/// after every optimizer step is what preserves the stability guarantee at
/// every iterate.
inline void project_params(MonotoneParams& p) {
  for (int i = 0; i < p.n; ++i) {
    for (int l = 0; l < p.m; ++l) {
      p.q_hat[i][l] = std::max(p.q_hat[i][l], 0.0);
      p.b_hat[i][l] = std::max(p.b_hat[i][l], 0.0);
      p.z_hat[i][l] = std::max(p.z_hat[i][l], 0.0);
      p.c_hat[i][l] = std::max(p.c_hat[i][l], 0.0);
    }
    p.b_hat[i][0] = 0.0;
    p.c_hat[i][0] = 0.0;
    if (!p.deadband.empty() && p.deadband[i] > 0.0) {
      p.q_hat[i][0] = 0.0;
      p.z_hat[i][0] = 0.0;
      p.b_hat[i][1] = p.deadband[i];
      p.c_hat[i][1] = p.deadband[i];
    }
  }
}

/// Random initialization approximating a mild droop of nominal slope k0
/// inside an unsaturated span of omega_span rad/s, so the first episodes see
/// live gradients instead of dead saturation. Slope increments are drawn
/// uniform in [0, 2 k0 / m] and prefix-summed into the cumulative hats, so
/// the per-piece slopes climb toward ~k0 across the span.
inline MonotoneParams init_monotone(int n, int m, const Vec& u_min, const Vec& u_max,
                                    double k0, double omega_span, Rng& rng) {
  MonotoneParams p;
  p.n = n;
  p.m = m;
  p.u_min = u_min;
  p.u_max = u_max;
  p.deadband = Vec(n, 0.0);
  p.q_hat.assign(n, Vec(m, 0.0));
  p.b_hat.assign(n, Vec(m, 0.0));
  p.z_hat.assign(n, Vec(m, 0.0));
  p.c_hat.assign(n, Vec(m, 0.0));
  const double slope_hi = 2.0 * k0 / m;
  const double space_hi = omega_span / m;
  for (int i = 0; i < n; ++i) {
    double qsum = 0.0, zsum = 0.0;
    for (int l = 0; l < m; ++l) {
      qsum += rng.uniform(0.0, slope_hi);
      zsum += rng.uniform(0.0, slope_hi);
      p.q_hat[i][l] = qsum;
      p.z_hat[i][l] = zsum;
      p.b_hat[i][l] = l == 0 ? 0.0 : rng.uniform(0.0, space_hi);
      p.c_hat[i][l] = l == 0 ? 0.0 : rng.uniform(0.0, space_hi);
    }
  }
  project_params(p);
  return p;
}

/// Droop u_i = clamp(k_i w) as the m = 1 member of the family.
inline MonotoneParams droop_representation(const Vec& gains, const Vec& u_min,
                                           const Vec& u_max) {
  const int n = static_cast<int>(gains.size());
  MonotoneParams p;
  p.n = n;
  p.m = 1;
  p.u_min = u_min;
  p.u_max = u_max;
  p.deadband = Vec(n, 0.0);
  p.q_hat.assign(n, Vec(1, 0.0));
  p.b_hat.assign(n, Vec(1, 0.0));
  p.z_hat.assign(n, Vec(1, 0.0));
  p.c_hat.assign(n, Vec(1, 0.0));
  for (int i = 0; i < n; ++i) {
    detail::require(gains[i] >= 0.0, "droop gains must be >= 0");
    p.q_hat[i][0] = gains[i];
    p.z_hat[i][0] = gains[i];
  }
  return p;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json params_to_json(const MonotoneParams& p) {
  nlohmann::json j;
  j["type"] = "monotone";
  j["n"] = p.n;
  j["m"] = p.m;
  j["q_hat"] = p.q_hat;
  j["b_hat"] = p.b_hat;
  j["z_hat"] = p.z_hat;
  j["c_hat"] = p.c_hat;
  j["u_min"] = p.u_min;
  j["u_max"] = p.u_max;
  j["deadband"] = p.deadband.empty() ? Vec(p.n, 0.0) : p.deadband;
  return j;
}

inline MonotoneParams params_from_json(const nlohmann::json& j) {
  MonotoneParams p;
  try {
    p.n = j.at("n").get<int>();
    p.m = j.at("m").get<int>();
    p.q_hat = j.at("q_hat").get<std::vector<Vec>>();
    p.b_hat = j.at("b_hat").get<std::vector<Vec>>();
    p.z_hat = j.at("z_hat").get<std::vector<Vec>>();
    p.c_hat = j.at("c_hat").get<std::vector<Vec>>();
    p.u_min = j.at("u_min").get<Vec>();
    p.u_max = j.at("u_max").get<Vec>();
    if (j.contains("deadband")) p.deadband = j.at("deadband").get<Vec>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("params: ") + e.what());
  }
  validate_params(p);
  return p;
}

// ---------------------------------------------------------------------------
// Tabulated controllers (for certifying externally supplied policies)

/// Piecewise-linear interpolation over explicit knots. Outside the knot
/// range the value either clamps or continues with the edge slope.
struct TableController {
  Vec knots;                // strictly increasing omega grid, rad/s
  std::vector<Vec> values;  // [n][knots]
  bool linear_extrapolation = false;

  int buses() const { return static_cast<int>(values.size()); }

  double eval(int bus, double w) const {
    const Vec& v = values[bus];
    const int k = static_cast<int>(knots.size());
    if (w <= knots.front()) {
      if (!linear_extrapolation) return v.front();
      const double s = (v[1] - v[0]) / (knots[1] - knots[0]);
      return v.front() + s * (w - knots.front());
    }
    if (w >= knots.back()) {
      if (!linear_extrapolation) return v.back();
      const double s = (v[k - 1] - v[k - 2]) / (knots[k - 1] - knots[k - 2]);
      return v.back() + s * (w - knots.back());
    }
    const auto it = std::upper_bound(knots.begin(), knots.end(), w);
    const int hi = static_cast<int>(it - knots.begin());
    const double t = (w - knots[hi - 1]) / (knots[hi] - knots[hi - 1]);
    return v[hi - 1] + t * (v[hi] - v[hi - 1]);
  }
};

inline TableController table_from_json(const nlohmann::json& j) {
  TableController t;
  try {
    t.knots = j.at("omega").get<Vec>();
    t.values = j.at("u").get<std::vector<Vec>>();
    if (j.contains("extrapolate"))
      t.linear_extrapolation = j.at("extrapolate").get<std::string>() == "linear";
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("table controller: ") + e.what());
  }
  detail::require(t.knots.size() >= 2, "table controller: need at least 2 knots");
  for (std::size_t i = 1; i < t.knots.size(); ++i)
    detail::require(t.knots[i] > t.knots[i - 1], "table controller: knots must increase");
  for (const auto& row : t.values)
    detail::require(row.size() == t.knots.size(),
                    "table controller: value row length must match knots");
  return t;
}

using ControllerSpec = std::variant<MonotoneParams, TableController>;

inline ControllerSpec controller_from_json(const nlohmann::json& j) {
  const std::string type = j.value("type", "monotone");
  if (type == "monotone") return params_from_json(j);
  if (type == "table") return table_from_json(j);
  throw ParseError("controller: unknown type '" + type + "'");
}

inline ControllerSpec load_controller(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("controller: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("controller: " + path + ": " + e.what());
  }
  return controller_from_json(j);
}

inline double eval_any(const ControllerSpec& spec, int bus, double omega) {
  if (const auto* p = std::get_if<MonotoneParams>(&spec)) return eval_controller(*p, bus, omega);
  return std::get<TableController>(spec).eval(bus, omega);
}

inline int controller_buses(const ControllerSpec& spec) {
  if (const auto* p = std::get_if<MonotoneParams>(&spec)) return p->n;
  return std::get<TableController>(spec).buses();
}

// ---------------------------------------------------------------------------
// Monotone approximator

struct MonotoneFit {
  MonotoneParams params;  // n = 1
  double spacing = 0.0;   // grid spacing beta
  double max_slope = 0.0; // largest sampled slope alpha
  double sup_error = 0.0; // measured on a 10x denser grid
};

/// Builds the equispaced piecewise-linear interpolant of a monotone target
/// r with r(0) = 0 on [x_lo, x_hi] as stacked-ReLU parameters. The fit
/// reproduces r exactly at the grid points and its sup error is bounded by
/// spacing * max_slope.
inline MonotoneFit fit_monotone(const std::function<double(double)>& r, double x_lo,
                                double x_hi, int grid_n) {
  detail::require(grid_n >= 1, "fit_monotone: grid_n must be >= 1");
  detail::require(x_lo < x_hi, "fit_monotone: need x_lo < x_hi");
  detail::require(x_lo <= 0.0 && x_hi >= 0.0, "fit_monotone: domain must contain 0");
  const double beta = (x_hi - x_lo) / grid_n;
  const double k0 = -x_lo / beta;
  const int neg = static_cast<int>(std::llround(k0));
  detail::require(std::fabs(k0 - neg) < 1e-9, "fit_monotone: 0 must be a grid point");
  const int pos = grid_n - neg;
  detail::require(std::fabs(r(0.0)) <= 1e-12, "fit_monotone: target must pass through 0");

  Vec samples(grid_n + 1);
  for (int k = 0; k <= grid_n; ++k) samples[k] = r(x_lo + k * beta);
  for (int k = 1; k <= grid_n; ++k)
    detail::require(samples[k] >= samples[k - 1] - 1e-12,
                    "fit_monotone: samples decrease at grid index " + std::to_string(k));

  const int m = std::max(1, std::max(pos, neg));
  MonotoneParams p;
  p.n = 1;
  p.m = m;
  p.q_hat.assign(1, Vec(m, 0.0));
  p.b_hat.assign(1, Vec(m, 0.0));
  p.z_hat.assign(1, Vec(m, 0.0));
  p.c_hat.assign(1, Vec(m, 0.0));
  p.deadband = Vec(1, 0.0);
  double max_slope = 0.0;
  for (int l = 0; l < pos; ++l) {
    const double s = std::max(0.0, (samples[neg + l + 1] - samples[neg + l]) / beta);
    p.q_hat[0][l] = s;
    if (l > 0) p.b_hat[0][l] = beta;
    max_slope = std::max(max_slope, s);
  }
  for (int l = 0; l < neg; ++l) {
    const double s = std::max(0.0, (samples[neg - l] - samples[neg - l - 1]) / beta);
    p.z_hat[0][l] = s;
    if (l > 0) p.c_hat[0][l] = beta;
    max_slope = std::max(max_slope, s);
  }
  // The shorter side pads by carrying its cumulative slope forward with zero
  // spacing, which leaves the function unchanged.
  for (int l = pos; l < m; ++l) p.q_hat[0][l] = pos > 0 ? p.q_hat[0][pos - 1] : 0.0;
  for (int l = neg; l < m; ++l) p.z_hat[0][l] = neg > 0 ? p.z_hat[0][neg - 1] : 0.0;
  p.u_min = Vec(1, std::min(0.0, samples.front()));
  p.u_max = Vec(1, std::max(0.0, samples.back()));

  MonotoneFit fit{std::move(p), beta, max_slope, 0.0};
  const int dense = 10 * grid_n;
  for (int k = 0; k <= dense; ++k) {
    const double x = x_lo + (x_hi - x_lo) * k / dense;
    fit.sup_error = std::max(fit.sup_error,
                             std::fabs(eval_controller(fit.params, 0, x) - r(x)));
  }
  return fit;
}

}  // namespace swingctl
