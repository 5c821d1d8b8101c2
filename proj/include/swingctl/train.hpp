#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "swingctl/controller.hpp"
#include "swingctl/network.hpp"
#include "swingctl/parallel.hpp"
#include "swingctl/rng.hpp"
#include "swingctl/sim.hpp"

namespace swingctl {

// Training minimizes, batch-averaged over sampled initial states,
//   Loss = sum_i ( max_{k=0..K} |w_i(k)| + gamma_i * (1/K) sum_{k=1..K} u_i(k)^2 )
// by reverse-mode differentiation through the unrolled Euler recurrence and
// the controller graph, with Adam updates projected back onto the
// non-negative hat parameterization after every step.

struct TrainConfig {
  int episodes = 600;
  int batch = 800;
  int stages = 200;
  double dt = 0.01;
  Vec gamma{0.01};  // action-cost weights; size 1 broadcasts to all buses
  double lr = 0.05;
  double lr_decay = 0.7;
  int lr_decay_every = 30;
  int hidden = 20;  // ReLU units per side
  std::uint64_t seed = 0;
  InitSpec init;
  double init_droop_k0 = 5.0;     // nominal slope targeted by initialization
  double init_omega_span = 1.0;   // rad/s
};

inline void validate_config(const TrainConfig& c) {
  detail::require(c.episodes >= 0, "config: episodes must be >= 0");
  detail::require(c.batch >= 1 && c.stages >= 1 && c.hidden >= 1,
                  "config: batch, stages and hidden must be >= 1");
  detail::require(c.dt > 0.0, "config: dt must be > 0");
  for (double g : c.gamma) detail::require(g >= 0.0, "config: gamma must be >= 0");
  detail::require(c.lr > 0.0 && c.lr_decay > 0.0 && c.lr_decay_every >= 1,
                  "config: bad learning-rate schedule");
}

inline Vec resolve_gamma(const Vec& gamma, int n) {
  if (static_cast<int>(gamma.size()) == n) return gamma;
  detail::require(gamma.size() == 1, "config: gamma must have size 1 or n");
  return Vec(n, gamma[0]);
}

struct LossBreakdown {
  double total = 0.0;
  Vec max_deviation;       // per bus, batch mean of max_k |w_i(k)|
  Vec action_mean_square;  // per bus, batch mean of (1/K) sum_{k>=1} u_i(k)^2
};

inline LossBreakdown loss_from(const std::vector<Trajectory>& batch, const Vec& gamma) {
  detail::require(!batch.empty(), "loss: empty batch");
  const int n = batch.front().n;
  const int stages = batch.front().stages;
  LossBreakdown out{0.0, Vec(n, 0.0), Vec(n, 0.0)};
  for (const auto& traj : batch) {
    detail::require(traj.n == n && traj.stages == stages,
                    "loss: trajectories must share K and n");
    for (int i = 0; i < n; ++i) {
      double dev = 0.0, act = 0.0;
      for (int k = 0; k <= stages; ++k) dev = std::max(dev, std::fabs(traj.omega[k][i]));
      for (int k = 1; k <= stages; ++k) act += traj.u[k][i] * traj.u[k][i];
      out.max_deviation[i] += dev;
      out.action_mean_square[i] += act / stages;
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (int i = 0; i < n; ++i) {
    out.max_deviation[i] *= inv;
    out.action_mean_square[i] *= inv;
    out.total += out.max_deviation[i] + gamma[i] * out.action_mean_square[i];
  }
  return out;
}

/// Flat container matching the hat-parameter shapes; holds gradients and
/// Adam moments.
struct ParamTensor {
  std::vector<Vec> q, b, z, c;  // [n][m]

  static ParamTensor zeros(int n, int m) {
    ParamTensor t;
    t.q.assign(n, Vec(m, 0.0));
    t.b.assign(n, Vec(m, 0.0));
    t.z.assign(n, Vec(m, 0.0));
    t.c.assign(n, Vec(m, 0.0));
    return t;
  }

  void add_scaled(const ParamTensor& o, double s) {
    for (std::size_t i = 0; i < q.size(); ++i)
      for (std::size_t l = 0; l < q[i].size(); ++l) {
        q[i][l] += s * o.q[i][l];
        b[i][l] += s * o.b[i][l];
        z[i][l] += s * o.z[i][l];
        c[i][l] += s * o.c[i][l];
      }
  }

  void scale(double s) {
    for (std::size_t i = 0; i < q.size(); ++i)
      for (std::size_t l = 0; l < q[i].size(); ++l) {
        q[i][l] *= s;
        b[i][l] *= s;
        z[i][l] *= s;
        c[i][l] *= s;
      }
  }
};

namespace detail {

struct ElementBackprop {
  ParamTensor grad;
  Vec max_deviation, action_mean_square;  // per bus
  bool diverged = false;
};

/// Forward rollout plus reverse sweep for one initial state. The adjoint
/// recursion mirrors the Euler update; the infinity-norm term sends its unit
/// subgradient to the earliest argmax stage.
inline ElementBackprop bptt_element(const NetworkCase& net, const MonotoneParams& params,
                                    const InitState& init, int stages, double dt,
                                    const Vec& gamma) {
  const int n = net.n;
  ElementBackprop out;
  out.grad = ParamTensor::zeros(n, params.m);
  out.max_deviation.assign(n, 0.0);
  out.action_mean_square.assign(n, 0.0);

  std::vector<Vec> theta(stages + 1, Vec(n)), omega(stages + 1, Vec(n)),
      action(stages + 1, Vec(n));
  theta[0] = init.theta0;
  omega[0] = init.omega0;
  for (int k = 1; k <= stages; ++k) {
    const Vec pe = electrical_power(net, theta[k - 1]);
    for (int i = 0; i < n; ++i) {
      action[k - 1][i] = eval_controller(params, i, omega[k - 1][i]);
      theta[k][i] = theta[k - 1][i] + dt * omega[k - 1][i];
      omega[k][i] = omega[k - 1][i] +
                    dt / net.inertia[i] *
                        (net.injection[i] - net.damping[i] * omega[k - 1][i] -
                         action[k - 1][i] - pe[i]);
      if (!std::isfinite(omega[k][i]) || std::fabs(omega[k][i]) > kDivergenceOmega) {
        out.diverged = true;
        return out;
      }
    }
  }
  for (int i = 0; i < n; ++i) action[stages][i] = eval_controller(params, i, omega[stages][i]);

  std::vector<int> argmax(n, 0);
  for (int i = 0; i < n; ++i) {
    double best = std::fabs(omega[0][i]);
    for (int k = 1; k <= stages; ++k)
      if (std::fabs(omega[k][i]) > best) {  // ties break toward the smallest k
        best = std::fabs(omega[k][i]);
        argmax[i] = k;
      }
    out.max_deviation[i] = best;
    double act = 0.0;
    for (int k = 1; k <= stages; ++k) act += action[k][i] * action[k][i];
    out.action_mean_square[i] = act / stages;
  }

  Vec a_th(n, 0.0), a_w(n, 0.0);
  const auto add_loss_terms = [&](int k) {
    for (int i = 0; i < n; ++i) {
      if (k == argmax[i] && omega[k][i] != 0.0)
        a_w[i] += omega[k][i] > 0.0 ? 1.0 : -1.0;
      if (k >= 1 && gamma[i] != 0.0) {
        const double coef = gamma[i] * 2.0 / stages * action[k][i];
        if (coef != 0.0) {
          a_w[i] += coef * controller_slope(params, i, omega[k][i]);
          accumulate_grad_params(params, i, omega[k][i], coef, out.grad.q[i], out.grad.b[i],
                                 out.grad.z[i], out.grad.c[i]);
        }
      }
    }
  };
  add_loss_terms(stages);
  Vec new_ath(n), new_aw(n);
  for (int k = stages; k >= 1; --k) {
    const Mat h = coupling_hessian(net, theta[k - 1]);
    for (int j = 0; j < n; ++j) {
      double acc = a_th[j];
      for (int i = 0; i < n; ++i)
        acc -= a_w[i] * dt / net.inertia[i] * h(i, j);
      new_ath[j] = acc;
    }
    for (int i = 0; i < n; ++i) {
      const double w_prev = omega[k - 1][i];
      new_aw[i] = a_th[i] * dt +
                  a_w[i] * (1.0 - net.damping[i] * dt / net.inertia[i] -
                            dt / net.inertia[i] * controller_slope(params, i, w_prev));
      accumulate_grad_params(params, i, w_prev, -a_w[i] * dt / net.inertia[i], out.grad.q[i],
                             out.grad.b[i], out.grad.z[i], out.grad.c[i]);
    }
    a_th.swap(new_ath);
    a_w.swap(new_aw);
    add_loss_terms(k - 1);
  }
  return out;
}

}  // namespace detail

struct BpttOutcome {
  ParamTensor grad;
  LossBreakdown loss;
  int diverged = 0;  // batch elements excluded from loss and gradient
};

/// Batch-averaged loss and gradient through the unrolled recurrence.
/// Elements run independently (parallel under SWINGCTL_THREADS); the
/// reduction order is fixed so results are schedule-independent.
inline BpttOutcome bptt_grad(const NetworkCase& net, const MonotoneParams& params,
                             const std::vector<InitState>& inits, int stages, double dt,
                             const Vec& gamma_in) {
  detail::require(!inits.empty(), "bptt_grad: empty batch");
  const int n = net.n;
  const Vec gamma = resolve_gamma(gamma_in, n);
  std::vector<detail::ElementBackprop> results(inits.size());
  parallel_for(static_cast<int>(inits.size()), [&](int h) {
    results[h] = detail::bptt_element(net, params, inits[h], stages, dt, gamma);
  });
  BpttOutcome out;
  out.grad = ParamTensor::zeros(n, params.m);
  out.loss = LossBreakdown{0.0, Vec(n, 0.0), Vec(n, 0.0)};
  int valid = 0;
  for (const auto& r : results) {
    if (r.diverged) {
      ++out.diverged;
      continue;
    }
    ++valid;
    out.grad.add_scaled(r.grad, 1.0);
    for (int i = 0; i < n; ++i) {
      out.loss.max_deviation[i] += r.max_deviation[i];
      out.loss.action_mean_square[i] += r.action_mean_square[i];
    }
  }
  if (valid == 0)
    throw SolveError("bptt_grad: every batch element diverged; controller or step size "
                     "is outside the stable regime");
  const double inv = 1.0 / valid;
  out.grad.scale(inv);
  for (int i = 0; i < n; ++i) {
    out.loss.max_deviation[i] *= inv;
    out.loss.action_mean_square[i] *= inv;
    out.loss.total += out.loss.max_deviation[i] + gamma[i] * out.loss.action_mean_square[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  ParamTensor m, v;
  long step = 0;
  double beta1 = 0.9, beta2 = 0.999, stabilizer = 1e-8;

  static AdamState like(const MonotoneParams& p) {
    return AdamState{ParamTensor::zeros(p.n, p.m), ParamTensor::zeros(p.n, p.m)};
  }
};

/// One bias-corrected Adam update followed by projection back onto the
/// feasible hat set.
inline void adam_step(AdamState& st, MonotoneParams& params, const ParamTensor& grad,
                      double lr) {
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  const auto upd = [&](Vec& m, Vec& v, Vec& x, const Vec& g) {
    for (std::size_t l = 0; l < x.size(); ++l) {
      m[l] = st.beta1 * m[l] + (1.0 - st.beta1) * g[l];
      v[l] = st.beta2 * v[l] + (1.0 - st.beta2) * g[l] * g[l];
      x[l] -= lr * (m[l] / bc1) / (std::sqrt(v[l] / bc2) + st.stabilizer);
    }
  };
  for (int i = 0; i < params.n; ++i) {
    upd(st.m.q[i], st.v.q[i], params.q_hat[i], grad.q[i]);
    upd(st.m.b[i], st.v.b[i], params.b_hat[i], grad.b[i]);
    upd(st.m.z[i], st.v.z[i], params.z_hat[i], grad.z[i]);
    upd(st.m.c[i], st.v.c[i], params.c_hat[i], grad.c[i]);
  }
  project_params(params);
}

inline double decayed_lr(const TrainConfig& cfg, int episode) {
  return cfg.lr * std::pow(cfg.lr_decay, episode / cfg.lr_decay_every);
}

/// The batch of initial states an episode trains on; exposed so baselines
/// and tests can replay identical data.
inline std::vector<InitState> episode_inits(const NetworkCase& net, const TrainConfig& cfg,
                                            int episode) {
  Rng rng(substream(cfg.seed, "init-states", static_cast<std::uint64_t>(episode)));
  return sample_initial_states(net.n, cfg.init, cfg.batch, rng);
}

inline MonotoneParams default_initial_params(const NetworkCase& net, const TrainConfig& cfg) {
  Rng rng(substream(cfg.seed, "param-init"));
  return init_monotone(net.n, cfg.hidden, net.u_min, net.u_max, cfg.init_droop_k0,
                       cfg.init_omega_span, rng);
}

struct TrainResult {
  MonotoneParams params;
  std::vector<LossBreakdown> episodes;
  int divergence_warnings = 0;
};

/// Episode loop: sample a fresh batch, roll the recurrence forward, take the
/// batch gradient backward, Adam-update with the decayed rate, project.
inline TrainResult train(const NetworkCase& net, const TrainConfig& cfg,
                         std::optional<MonotoneParams> initial = {}) {
  validate_config(cfg);
  const Vec gamma = resolve_gamma(cfg.gamma, net.n);
  TrainResult res;
  res.params = initial ? std::move(*initial) : default_initial_params(net, cfg);
  validate_params(res.params);
  AdamState adam = AdamState::like(res.params);
  for (int e = 0; e < cfg.episodes; ++e) {
    const auto inits = episode_inits(net, cfg, e);
    BpttOutcome out = bptt_grad(net, res.params, inits, cfg.stages, cfg.dt, gamma);
    res.divergence_warnings += out.diverged;
    adam_step(adam, res.params, out.grad, decayed_lr(cfg, e));
    res.episodes.push_back(std::move(out.loss));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Optimized droop baseline

struct DroopFit {
  Vec gains;               // per bus, >= 0
  MonotoneParams params;   // m = 1 representation of the gains
  std::vector<LossBreakdown> episodes;
  int divergence_warnings = 0;
};

/// Per-bus droop gains optimized on the identical loss surface via the same
/// unrolled gradient, with the gains living in the m = 1 member of the
/// monotone family (both hat slopes tied).
inline DroopFit fit_droop(const NetworkCase& net, const TrainConfig& cfg) {
  validate_config(cfg);
  const int n = net.n;
  const Vec gamma = resolve_gamma(cfg.gamma, n);
  DroopFit res;
  res.gains.assign(n, cfg.init_droop_k0);
  Vec m1(n, 0.0), m2(n, 0.0);
  const double beta1 = 0.9, beta2 = 0.999, stab = 1e-8;
  for (int e = 0; e < cfg.episodes; ++e) {
    res.params = droop_representation(res.gains, net.u_min, net.u_max);
    const auto inits = episode_inits(net, cfg, e);
    BpttOutcome out = bptt_grad(net, res.params, inits, cfg.stages, cfg.dt, gamma);
    res.divergence_warnings += out.diverged;
    const double lr = decayed_lr(cfg, e);
    const double bc1 = 1.0 - std::pow(beta1, e + 1);
    const double bc2 = 1.0 - std::pow(beta2, e + 1);
    for (int i = 0; i < n; ++i) {
      const double g = out.grad.q[i][0] + out.grad.z[i][0];  // tied slopes
      m1[i] = beta1 * m1[i] + (1.0 - beta1) * g;
      m2[i] = beta2 * m2[i] + (1.0 - beta2) * g * g;
      res.gains[i] -= lr * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + stab);
      res.gains[i] = std::max(res.gains[i], 0.0);
    }
    res.episodes.push_back(std::move(out.loss));
  }
  res.params = droop_representation(res.gains, net.u_min, net.u_max);
  return res;
}

// ---------------------------------------------------------------------------
// REINFORCE baseline

namespace detail {

struct PgElement {
  ParamTensor score;  // sum_k d log pi / d phi
  Vec max_deviation, action_mean_square;
  double loss = 0.0;
  bool diverged = false;
};

inline PgElement pg_element(const NetworkCase& net, const MonotoneParams& params,
                            const InitState& init, int stages, double dt, const Vec& gamma,
                            double sigma, Rng& noise) {
  const int n = net.n;
  PgElement out;
  out.score = ParamTensor::zeros(n, params.m);
  out.max_deviation.assign(n, 0.0);
  out.action_mean_square.assign(n, 0.0);

  Vec theta = init.theta0, omega = init.omega0;
  Vec action(n, 0.0);
  Vec dev(n, 0.0), act(n, 0.0);
  for (int i = 0; i < n; ++i) dev[i] = std::fabs(omega[i]);
  for (int k = 0; k <= stages; ++k) {
    for (int i = 0; i < n; ++i) {
      const double xi = noise.normal();
      const double mean = eval_controller(params, i, omega[i]);
      const double noisy = mean + sigma * xi;  // pre-clamp noise
      action[i] = std::min(std::max(noisy, params.u_min[i]), params.u_max[i]);
      accumulate_grad_params(params, i, omega[i], xi / sigma, out.score.q[i],
                             out.score.b[i], out.score.z[i], out.score.c[i]);
      if (k >= 1) act[i] += action[i] * action[i];
    }
    if (k == stages) break;
    const Vec pe = electrical_power(net, theta);
    Vec omega_next(n);
    for (int i = 0; i < n; ++i) {
      omega_next[i] = omega[i] + dt / net.inertia[i] *
                                     (net.injection[i] - net.damping[i] * omega[i] -
                                      action[i] - pe[i]);
      theta[i] += dt * omega[i];
      if (!std::isfinite(omega_next[i]) || std::fabs(omega_next[i]) > kDivergenceOmega) {
        out.diverged = true;
        return out;
      }
    }
    omega = omega_next;
    for (int i = 0; i < n; ++i) dev[i] = std::max(dev[i], std::fabs(omega[i]));
  }
  for (int i = 0; i < n; ++i) {
    out.max_deviation[i] = dev[i];
    out.action_mean_square[i] = act[i] / stages;
    out.loss += dev[i] + gamma[i] * out.action_mean_square[i];
  }
  return out;
}

}  // namespace detail

/// REINFORCE on the same stacked-ReLU family: Gaussian exploration around the
/// structured mean (clamped after the noise), score-function gradient with a
/// batch-mean baseline, identical projection. The mean network is what gets
/// evaluated and certified.
inline TrainResult train_pg(const NetworkCase& net, const TrainConfig& cfg, double sigma,
                            std::optional<MonotoneParams> initial = {}) {
  validate_config(cfg);
  detail::require(sigma > 0.0, "train_pg: sigma must be > 0");
  const int n = net.n;
  const Vec gamma = resolve_gamma(cfg.gamma, n);
  TrainResult res;
  res.params = initial ? std::move(*initial) : default_initial_params(net, cfg);
  validate_params(res.params);
  AdamState adam = AdamState::like(res.params);
  for (int e = 0; e < cfg.episodes; ++e) {
    const auto inits = episode_inits(net, cfg, e);
    std::vector<detail::PgElement> elems(inits.size());
    parallel_for(static_cast<int>(inits.size()), [&](int h) {
      Rng noise(substream(cfg.seed, "pg-noise",
                          static_cast<std::uint64_t>(e) * 1000003ull + h));
      elems[h] = detail::pg_element(net, res.params, inits[h], cfg.stages, cfg.dt, gamma,
                                    sigma, noise);
    });
    int valid = 0;
    double mean_loss = 0.0;
    for (const auto& el : elems)
      if (!el.diverged) {
        ++valid;
        mean_loss += el.loss;
      } else {
        ++res.divergence_warnings;
      }
    if (valid == 0)
      throw SolveError("train_pg: every batch element diverged in episode " +
                       std::to_string(e));
    mean_loss /= valid;
    ParamTensor grad = ParamTensor::zeros(n, res.params.m);
    LossBreakdown lb{0.0, Vec(n, 0.0), Vec(n, 0.0)};
    for (const auto& el : elems) {
      if (el.diverged) continue;
      grad.add_scaled(el.score, (el.loss - mean_loss) / valid);
      for (int i = 0; i < n; ++i) {
        lb.max_deviation[i] += el.max_deviation[i];
        lb.action_mean_square[i] += el.action_mean_square[i];
      }
    }
    for (int i = 0; i < n; ++i) {
      lb.max_deviation[i] /= valid;
      lb.action_mean_square[i] /= valid;
      lb.total += lb.max_deviation[i] + gamma[i] * lb.action_mean_square[i];
    }
    adam_step(adam, res.params, grad, decayed_lr(cfg, e));
    res.episodes.push_back(std::move(lb));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Deterministic evaluation

/// Batch-mean loss of a deterministic policy on a fixed set of initial
/// states; the shared yardstick for method comparisons.
template <class Ctrl>
LossBreakdown evaluate_policy(const NetworkCase& net, Ctrl&& controller,
                              const std::vector<InitState>& inits, int stages, double dt,
                              const Vec& gamma_in,
                              const std::vector<DisturbanceEvent>& events = {}) {
  const Vec gamma = resolve_gamma(gamma_in, net.n);
  std::vector<Trajectory> batch(inits.size());
  parallel_for(static_cast<int>(inits.size()), [&](int h) {
    batch[h] = rollout(net, inits[h].theta0, inits[h].omega0, controller, stages, dt, events);
  });
  return loss_from(batch, gamma);
}

}  // namespace swingctl
