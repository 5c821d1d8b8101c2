#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "swingctl/errors.hpp"
#include "swingctl/network.hpp"
#include "swingctl/rng.hpp"

namespace swingctl {

// Discrete-time rollout of the swing dynamics
//   theta(k) = theta(k-1) + w(k-1) dt
//   w_i(k)   = (1 - D_i dt / M_i) w_i(k-1)
//              + dt/M_i (p_m,i - u_i(w_i(k-1)) - sum_j B_ij sin(theta_ij(k-1)))
// i.e. forward Euler with the control evaluated at the previous stage. This
// is exactly the recurrence the training graph differentiates through; a
// fixed-step 4th-order variant exists for evaluation-only runs.

/// Step change of the injection at one bus, active on stages
/// ceil(t_on/dt) .. ceil(t_off/dt) - 1.
struct DisturbanceEvent {
  int bus = 0;
  double delta_p = 0.0;  // p.u.
  double t_on = 0.0, t_off = 0.0;  // s, 0 <= t_on < t_off
};

struct Trajectory {
  double dt = 0.0;
  int n = 0;
  int stages = 0;                       // K
  std::vector<Vec> theta, omega, u;     // (K+1) rows of n
  std::vector<DisturbanceEvent> scenario;
  bool diverged = false;
  int diverged_at = -1;                 // first bad stage, -1 if none
};

namespace detail {

constexpr double kDivergenceOmega = 100.0;  // rad/s

inline int stage_of(double t, double dt) {
  return static_cast<int>(std::ceil(t / dt - 1e-9));
}

inline bool event_active(const DisturbanceEvent& ev, int stage, double dt) {
  return stage >= stage_of(ev.t_on, dt) && stage < stage_of(ev.t_off, dt);
}

template <class Ctrl>
Vec effective_injection(const NetworkCase& net, const std::vector<DisturbanceEvent>& events,
                        int stage, double dt) {
  Vec pm = net.injection;
  for (const auto& ev : events)
    if (event_active(ev, stage, dt)) pm[ev.bus] += ev.delta_p;
  return pm;
}

}  // namespace detail

/// One forward-Euler update. u_out receives the applied control, clamped to
/// the case limits for recording; the dynamics see the controller's raw
/// output (structured controllers saturate themselves, external ones answer
/// for their own limits).
template <class Ctrl>
void step(const NetworkCase& net, const Vec& theta_prev, const Vec& omega_prev,
          Ctrl&& controller, double dt, const Vec& p_m, Vec& theta_out, Vec& omega_out,
          Vec& u_out) {
  const int n = net.n;
  const Vec pe = electrical_power(net, theta_prev);
  for (int i = 0; i < n; ++i) {
    const double ui = controller(i, omega_prev[i]);
    u_out[i] = ui;
    theta_out[i] = theta_prev[i] + dt * omega_prev[i];
    omega_out[i] = omega_prev[i] + dt / net.inertia[i] *
                                       (p_m[i] - net.damping[i] * omega_prev[i] - ui - pe[i]);
  }
}

template <class Ctrl>
Trajectory rollout(const NetworkCase& net, Vec theta0, Vec omega0, Ctrl&& controller,
                   int stages, double dt, const std::vector<DisturbanceEvent>& events = {}) {
  detail::require(stages >= 1, "rollout: stages must be >= 1");
  detail::require(dt > 0.0, "rollout: dt must be > 0");
  for (const auto& ev : events)
    detail::require(ev.t_on >= 0.0 && ev.t_on < ev.t_off, "rollout: need 0 <= t_on < t_off");
  const int n = net.n;
  Trajectory traj;
  traj.dt = dt;
  traj.n = n;
  traj.stages = stages;
  traj.scenario = events;
  traj.theta.assign(stages + 1, Vec(n, 0.0));
  traj.omega.assign(stages + 1, Vec(n, 0.0));
  traj.u.assign(stages + 1, Vec(n, 0.0));
  traj.theta[0] = std::move(theta0);
  traj.omega[0] = std::move(omega0);

  Vec u_raw(n);
  for (int k = 1; k <= stages; ++k) {
    if (traj.diverged) {
      traj.theta[k] = traj.theta[k - 1];
      traj.omega[k] = traj.omega[k - 1];
      for (int i = 0; i < n; ++i) {
        const double ui = controller(i, traj.omega[k - 1][i]);
        traj.u[k - 1][i] = std::min(std::max(ui, net.u_min[i]), net.u_max[i]);
      }
      continue;
    }
    const Vec pm = detail::effective_injection<Ctrl>(net, events, k - 1, dt);
    step(net, traj.theta[k - 1], traj.omega[k - 1], controller, dt, pm, traj.theta[k],
         traj.omega[k], u_raw);
    // recorded action respects the case limits regardless of the controller
    for (int i = 0; i < n; ++i)
      traj.u[k - 1][i] = std::min(std::max(u_raw[i], net.u_min[i]), net.u_max[i]);
    for (int i = 0; i < n; ++i) {
      if (!std::isfinite(traj.omega[k][i]) || !std::isfinite(traj.theta[k][i]) ||
          std::fabs(traj.omega[k][i]) > detail::kDivergenceOmega) {
        traj.diverged = true;
        traj.diverged_at = k;
        // freeze at the last finite state
        traj.theta[k] = traj.theta[k - 1];
        traj.omega[k] = traj.omega[k - 1];
        break;
      }
    }
  }
  // terminal action sample (stage K states never feed another update)
  for (int i = 0; i < n; ++i) {
    const double ui = controller(i, traj.omega[stages][i]);
    traj.u[stages][i] = std::min(std::max(ui, net.u_min[i]), net.u_max[i]);
  }
  return traj;
}

/// Fixed-step classic Runge-Kutta on the continuous dynamics. Evaluation
/// only; training always differentiates the Euler recurrence above.
template <class Ctrl>
Trajectory rollout_rk4(const NetworkCase& net, Vec theta0, Vec omega0, Ctrl&& controller,
                       int stages, double dt,
                       const std::vector<DisturbanceEvent>& events = {}) {
  detail::require(stages >= 1, "rollout_rk4: stages must be >= 1");
  const int n = net.n;
  Trajectory traj;
  traj.dt = dt;
  traj.n = n;
  traj.stages = stages;
  traj.scenario = events;
  traj.theta.assign(stages + 1, Vec(n, 0.0));
  traj.omega.assign(stages + 1, Vec(n, 0.0));
  traj.u.assign(stages + 1, Vec(n, 0.0));
  traj.theta[0] = std::move(theta0);
  traj.omega[0] = std::move(omega0);

  const auto deriv = [&](const Vec& th, const Vec& om, const Vec& pm, Vec& dth, Vec& dom) {
    const Vec pe = electrical_power(net, th);
    for (int i = 0; i < n; ++i) {
      dth[i] = om[i];
      dom[i] = (pm[i] - net.damping[i] * om[i] - controller(i, om[i]) - pe[i]) /
               net.inertia[i];
    }
  };
  Vec k1t(n), k1w(n), k2t(n), k2w(n), k3t(n), k3w(n), k4t(n), k4w(n), tht(n), omt(n);
  for (int k = 1; k <= stages; ++k) {
    if (traj.diverged) {
      traj.theta[k] = traj.theta[k - 1];
      traj.omega[k] = traj.omega[k - 1];
      for (int i = 0; i < n; ++i) {
        const double ui = controller(i, traj.omega[k - 1][i]);
        traj.u[k - 1][i] = std::min(std::max(ui, net.u_min[i]), net.u_max[i]);
      }
      continue;
    }
    const Vec pm = detail::effective_injection<Ctrl>(net, events, k - 1, dt);
    const Vec& th = traj.theta[k - 1];
    const Vec& om = traj.omega[k - 1];
    deriv(th, om, pm, k1t, k1w);
    for (int i = 0; i < n; ++i) {
      tht[i] = th[i] + 0.5 * dt * k1t[i];
      omt[i] = om[i] + 0.5 * dt * k1w[i];
    }
    deriv(tht, omt, pm, k2t, k2w);
    for (int i = 0; i < n; ++i) {
      tht[i] = th[i] + 0.5 * dt * k2t[i];
      omt[i] = om[i] + 0.5 * dt * k2w[i];
    }
    deriv(tht, omt, pm, k3t, k3w);
    for (int i = 0; i < n; ++i) {
      tht[i] = th[i] + dt * k3t[i];
      omt[i] = om[i] + dt * k3w[i];
    }
    deriv(tht, omt, pm, k4t, k4w);
    for (int i = 0; i < n; ++i) {
      traj.theta[k][i] = th[i] + dt / 6.0 * (k1t[i] + 2.0 * k2t[i] + 2.0 * k3t[i] + k4t[i]);
      traj.omega[k][i] = om[i] + dt / 6.0 * (k1w[i] + 2.0 * k2w[i] + 2.0 * k3w[i] + k4w[i]);
      const double ui = controller(i, om[i]);
      traj.u[k - 1][i] = std::min(std::max(ui, net.u_min[i]), net.u_max[i]);
    }
    for (int i = 0; i < n; ++i) {
      if (!std::isfinite(traj.omega[k][i]) ||
          std::fabs(traj.omega[k][i]) > detail::kDivergenceOmega) {
        traj.diverged = true;
        traj.diverged_at = k;
        traj.theta[k] = traj.theta[k - 1];
        traj.omega[k] = traj.omega[k - 1];
        break;
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    const double ui = controller(i, traj.omega[stages][i]);
    traj.u[stages][i] = std::min(std::max(ui, net.u_min[i]), net.u_max[i]);
  }
  return traj;
}

/// Single RK4 flow step of the undisturbed continuous dynamics; used by the
/// finite-difference cross-checks of the certificate.
template <class Ctrl>
std::pair<Vec, Vec> flow_rk4(const NetworkCase& net, Vec theta, Vec omega, Ctrl&& controller,
                             double h, int substeps = 1) {
  const int n = net.n;
  const auto deriv = [&](const Vec& th, const Vec& om, Vec& dth, Vec& dom) {
    const Vec pe = electrical_power(net, th);
    for (int i = 0; i < n; ++i) {
      dth[i] = om[i];
      dom[i] = (net.injection[i] - net.damping[i] * om[i] - controller(i, om[i]) - pe[i]) /
               net.inertia[i];
    }
  };
  const double dt = h / substeps;
  Vec k1t(n), k1w(n), k2t(n), k2w(n), k3t(n), k3w(n), k4t(n), k4w(n), tht(n), omt(n);
  for (int s = 0; s < substeps; ++s) {
    deriv(theta, omega, k1t, k1w);
    for (int i = 0; i < n; ++i) {
      tht[i] = theta[i] + 0.5 * dt * k1t[i];
      omt[i] = omega[i] + 0.5 * dt * k1w[i];
    }
    deriv(tht, omt, k2t, k2w);
    for (int i = 0; i < n; ++i) {
      tht[i] = theta[i] + 0.5 * dt * k2t[i];
      omt[i] = omega[i] + 0.5 * dt * k2w[i];
    }
    deriv(tht, omt, k3t, k3w);
    for (int i = 0; i < n; ++i) {
      tht[i] = theta[i] + dt * k3t[i];
      omt[i] = omega[i] + dt * k3w[i];
    }
    deriv(tht, omt, k4t, k4w);
    for (int i = 0; i < n; ++i) {
      theta[i] += dt / 6.0 * (k1t[i] + 2.0 * k2t[i] + 2.0 * k3t[i] + k4t[i]);
      omega[i] += dt / 6.0 * (k1w[i] + 2.0 * k2w[i] + 2.0 * k3w[i] + k4w[i]);
    }
  }
  return {std::move(theta), std::move(omega)};
}

// ---------------------------------------------------------------------------
// Initial-state sampling

/// Half-widths of the uniform initial-state distribution. Angles are drawn
/// in rad; the frequency range is specified in Hz at the interface and
/// converted to rad/s internally.
struct InitSpec {
  double delta_rad = 0.05;
  double omega_hz = 0.1;
};

struct InitState {
  Vec theta0, omega0;
};

inline std::vector<InitState> sample_initial_states(int n, const InitSpec& spec, int batch,
                                                    Rng& rng) {
  std::vector<InitState> out;
  out.reserve(batch);
  const double omega_amp = spec.omega_hz * 2.0 * std::numbers::pi;
  for (int h = 0; h < batch; ++h) {
    InitState st{Vec(n), Vec(n)};
    for (int i = 0; i < n; ++i) st.theta0[i] = rng.uniform(-spec.delta_rad, spec.delta_rad);
    for (int i = 0; i < n; ++i) st.omega0[i] = rng.uniform(-omega_amp, omega_amp);
    out.push_back(std::move(st));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV export

namespace detail {
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

/// Header: t, theta_0.., omega_0.. (in Hz), u_0..; one file per rollout.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << "t";
  for (int i = 0; i < traj.n; ++i) os << ",theta_" << i;
  for (int i = 0; i < traj.n; ++i) os << ",omega_" << i;
  for (int i = 0; i < traj.n; ++i) os << ",u_" << i;
  os << "\n";
  const double to_hz = 1.0 / (2.0 * std::numbers::pi);
  for (int k = 0; k <= traj.stages; ++k) {
    os << detail::format_double(k * traj.dt);
    for (int i = 0; i < traj.n; ++i) os << "," << detail::format_double(traj.theta[k][i]);
    for (int i = 0; i < traj.n; ++i)
      os << "," << detail::format_double(traj.omega[k][i] * to_hz);
    for (int i = 0; i < traj.n; ++i) os << "," << detail::format_double(traj.u[k][i]);
    os << "\n";
  }
}

inline void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
  std::ofstream os(path);
  if (!os) throw ParseError("trajectory: cannot open " + path + " for writing");
  write_trajectory_csv(os, traj);
}

}  // namespace swingctl
