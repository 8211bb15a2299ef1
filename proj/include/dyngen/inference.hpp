#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>

#include "dyngen/model.hpp"
#include "dyngen/tape.hpp"
#include "dyngen/tensor.hpp"

namespace dyngen {

struct LangevinConfig {
  double delta = 0.03;
  std::size_t steps = 15;
  double sigma = 1.0;
  bool mh_correct = false;
  // Per-block step-size overrides; default is the shared delta.
  std::optional<double> delta_s0, delta_a, delta_m;

  double step_xi() const { return delta; }
  double step_s0() const { return delta_s0.value_or(delta); }
  double step_a() const { return delta_a.value_or(delta); }
  double step_m() const { return delta_m.value_or(delta); }

  void validate() const {
    if (delta <= 0.0 && steps > 0)
      throw config_error("LangevinConfig: delta must be > 0");
    if (sigma <= 0.0) throw config_error("LangevinConfig: sigma must be > 0");
  }
};

/// Gradients of the complete-data log-likelihood wrt the latent blocks.
/// A block that is not inferred in the current setting is left empty.
struct LatentGradients {
  Tensor xi;
  Tensor s0;
  std::optional<Tensor> a;
  std::optional<Tensor> m;
};

struct PosteriorSample {
  LatentTrajectory latents;
  double log_joint = 0.0;
  std::size_t accept_count = 0;
};

namespace detail {

/// Workhorse: builds the BPTT graph for one chunk and evaluates the
/// complete-data log-likelihood
///   -(1/(2 sigma^2)) sum_t ||mask_t . (x_t - G(s_t, a))||^2
///   - 1/2 (||xi||^2 [+ ||s0||^2] [+ ||a||^2] [+ ||m||^2]),
/// constants dropped. When `carried_state` is non-null it is used as a
/// gradient-stopped initial state and s0 carries no prior term.
///
/// X_frames / mask_frames point at T * frame_dim contiguous doubles and must
/// outlive the call.
inline double eval_chunk(Model& model, const LatentTrajectory& lat,
                         const double* X_frames, const double* mask_frames,
                         std::size_t T, double sigma,
                         const Tensor* carried_state, bool infer_a,
                         bool infer_m, LatentGradients* grads,
                         bool accumulate_param_grads = false,
                         std::vector<Tensor>* frame_values = nullptr,
                         Tensor* final_state = nullptr,
                         Tape* reuse_tape = nullptr) {
  if (lat.length() != T)
    throw dimension_error("eval_chunk: latents cover " +
                          std::to_string(lat.length()) + " steps, data has " +
                          std::to_string(T));
  // A caller-owned tape amortizes graph storage across repeated evaluations
  // of the same chunk shape (its accumulate flag must match).
  Tape local_tape(accumulate_param_grads);
  Tape& tape = reuse_tape ? *reuse_tape : local_tape;
  tape.reset();
  Var s_init = tape.input_copy(carried_state ? *carried_state : lat.s0);
  Var xi = tape.input_copy(lat.xi);
  std::optional<Var> a, m;
  if (lat.a) a = tape.input_copy(*lat.a);
  if (lat.m) m = tape.input_copy(*lat.m);

  auto g = rollout_graph(tape, model, s_init, xi, a, m);
  std::size_t fd = model.cfg.frame_dim();

  std::optional<Var> loss;
  auto accumulate = [&](Var v) { loss = loss ? tape.add(*loss, v) : v; };
  if (T > 0) {
    std::optional<Var> recon;
    for (std::size_t t = 0; t < T; ++t) {
      Var e = tape.masked_sq_err(g.frames[t], X_frames + t * fd,
                                 mask_frames ? mask_frames + t * fd : nullptr);
      recon = recon ? tape.add(*recon, e) : e;
    }
    accumulate(tape.scale(*recon, -0.5 / (sigma * sigma)));
  }
  accumulate(tape.scale(tape.sum_sq(xi), -0.5));
  if (!carried_state) accumulate(tape.scale(tape.sum_sq(s_init), -0.5));
  if (a && infer_a) accumulate(tape.scale(tape.sum_sq(*a), -0.5));
  if (m && infer_m) accumulate(tape.scale(tape.sum_sq(*m), -0.5));

  double lj = tape.value(*loss)[0];

  if (frame_values) {
    frame_values->clear();
    for (Var f : g.frames) frame_values->push_back(tape.value(f));
  }
  if (final_state)
    *final_state = g.states.empty() ? tape.value(s_init)
                                    : tape.value(g.states.back());

  if (grads || accumulate_param_grads) {
    tape.backward(*loss);
    if (grads) {
      grads->xi = tape.grad(xi);
      grads->s0 = carried_state ? Tensor{} : tape.grad(s_init);
      grads->a.reset();
      grads->m.reset();
      if (a && infer_a) grads->a = tape.grad(*a);
      if (m && infer_m) grads->m = tape.grad(*m);
    }
  }
  return lj;
}

inline void check_sequence(const Model& model, const LatentTrajectory& lat,
                           const FrameSequence& X, const VisibilityMask* mask) {
  if (X.shape.size() != 4)
    throw dimension_error("sequence must be [T,H,W,C], got " + X.shape_str());
  if (X.shape[1] != model.cfg.frame_h || X.shape[2] != model.cfg.frame_w ||
      X.shape[3] != model.cfg.frame_c)
    throw dimension_error("sequence frames " + X.shape_str() +
                          " do not match configured frame shape");
  if (mask && !mask->same_shape(X))
    throw dimension_error("mask " + mask->shape_str() +
                          " does not match sequence " + X.shape_str());
  if (lat.length() != X.shape[0])
    throw dimension_error("latents cover " + std::to_string(lat.length()) +
                          " steps, sequence has " + std::to_string(X.shape[0]));
}

}  // namespace detail

/// Complete-data log-likelihood of a full sequence (constants dropped).
inline double log_joint(Model& model, const LatentTrajectory& lat,
                        const FrameSequence& X, const VisibilityMask* mask,
                        double sigma) {
  detail::check_sequence(model, lat, X, mask);
  return detail::eval_chunk(model, lat, X.data.data(),
                            mask ? mask->data.data() : nullptr, X.shape[0],
                            sigma, nullptr, true, true, nullptr);
}

/// Exact gradients of log_joint wrt every latent block via reverse-mode BPTT.
inline LatentGradients latent_gradients(Model& model,
                                        const LatentTrajectory& lat,
                                        const FrameSequence& X,
                                        const VisibilityMask* mask,
                                        double sigma) {
  detail::check_sequence(model, lat, X, mask);
  LatentGradients g;
  detail::eval_chunk(model, lat, X.data.data(),
                     mask ? mask->data.data() : nullptr, X.shape[0], sigma,
                     nullptr, true, true, &g);
  return g;
}

namespace detail {

inline void langevin_update_block(Tensor& x, const Tensor& grad, double delta,
                                  SeededRng& rng) {
  double half_sq = 0.5 * delta * delta;
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] += half_sq * grad[i] + delta * rng.normal();
}

}  // namespace detail

/// One Langevin update of every inferred latent block:
///   v <- v + (delta^2 / 2) * grad + delta * z,  z ~ N(0, I).
/// Draw order is fixed (xi, s0, a, m) so runs are reproducible.
inline LatentTrajectory langevin_step(const LatentTrajectory& lat,
                                      const LatentGradients& grads,
                                      const LangevinConfig& cfg,
                                      SeededRng& rng) {
  LatentTrajectory out = lat;
  detail::langevin_update_block(out.xi, grads.xi, cfg.step_xi(), rng);
  if (grads.s0.size() > 0)
    detail::langevin_update_block(out.s0, grads.s0, cfg.step_s0(), rng);
  if (grads.a && out.a)
    detail::langevin_update_block(*out.a, *grads.a, cfg.step_a(), rng);
  if (grads.m && out.m)
    detail::langevin_update_block(*out.m, *grads.m, cfg.step_m(), rng);
  return out;
}

namespace detail {

// log N(y; x + (delta^2/2) g_x, delta^2 I), constants dropped.
inline double langevin_proposal_logq(const Tensor& y, const Tensor& x,
                                     const Tensor& g_x, double delta) {
  double half_sq = 0.5 * delta * delta;
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double r = y[i] - x[i] - half_sq * g_x[i];
    acc += r * r;
  }
  return -acc / (2.0 * delta * delta);
}

inline double proposal_logq_all(const LatentTrajectory& to,
                                const LatentTrajectory& from,
                                const LatentGradients& g_from,
                                const LangevinConfig& cfg) {
  double lq = langevin_proposal_logq(to.xi, from.xi, g_from.xi, cfg.step_xi());
  if (g_from.s0.size() > 0)
    lq += langevin_proposal_logq(to.s0, from.s0, g_from.s0, cfg.step_s0());
  if (g_from.a && to.a)
    lq += langevin_proposal_logq(*to.a, *from.a, *g_from.a, cfg.step_a());
  if (g_from.m && to.m)
    lq += langevin_proposal_logq(*to.m, *from.m, *g_from.m, cfg.step_m());
  return lq;
}

/// Called after every Langevin step with the current state of the chain.
using StepObserver = std::function<void(const LatentTrajectory&, std::size_t)>;

/// Langevin run over one chunk with explicit control over which blocks are
/// latent. `carried_state` non-null pins the initial state (truncated-BPTT
/// chunks past the first, and the conditional-encoder variant).
inline PosteriorSample langevin_run_chunk(
    LatentTrajectory lat, const double* X_frames, const double* mask_frames,
    std::size_t T, Model& model, const LangevinConfig& cfg, SeededRng& rng,
    const Tensor* carried_state, bool infer_a, bool infer_m,
    const StepObserver& observer = nullptr) {
  cfg.validate();
  PosteriorSample out;
  double lj = 0.0;
  LatentGradients grads;
  Tape tape(false);
  auto eval = [&](const LatentTrajectory& l, LatentGradients* g) {
    return eval_chunk(model, l, X_frames, mask_frames, T, cfg.sigma,
                      carried_state, infer_a, infer_m, g, false, nullptr,
                      nullptr, &tape);
  };
  lj = eval(lat, cfg.steps > 0 ? &grads : nullptr);
  if (!std::isfinite(lj))
    throw numeric_error("langevin_run: non-finite log_joint at step 0");
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (!cfg.mh_correct) {
      lat = langevin_step(lat, grads, cfg, rng);
      lj = eval(lat, step + 1 < cfg.steps ? &grads : nullptr);
    } else {
      LatentTrajectory prop = langevin_step(lat, grads, cfg, rng);
      LatentGradients prop_grads;
      double prop_lj = eval(prop, &prop_grads);
      if (std::isfinite(prop_lj)) {
        double log_ratio = prop_lj - lj +
                           proposal_logq_all(lat, prop, prop_grads, cfg) -
                           proposal_logq_all(prop, lat, grads, cfg);
        if (std::log(rng.uniform() + 1e-300) < log_ratio) {
          lat = std::move(prop);
          grads = std::move(prop_grads);
          lj = prop_lj;
          ++out.accept_count;
        }
      }
    }
    if (!std::isfinite(lj))
      throw numeric_error("langevin_run: non-finite log_joint at step " +
                          std::to_string(step + 1));
    if (observer) observer(lat, step);
  }
  out.latents = std::move(lat);
  out.log_joint = lj;
  return out;
}

}  // namespace detail

/// Warm-started Langevin sampling of (xi, s0, a, m) given a full sequence.
/// With mh_correct on, every step is a Metropolis-adjusted Langevin proposal
/// accepted under the exact asymmetric-Gaussian ratio.
inline PosteriorSample langevin_run(
    LatentTrajectory lat, const FrameSequence& X, const VisibilityMask* mask,
    Model& model, const LangevinConfig& cfg, SeededRng& rng,
    const detail::StepObserver& observer = nullptr) {
  detail::check_sequence(model, lat, X, mask);
  return detail::langevin_run_chunk(std::move(lat), X.data.data(),
                                    mask ? mask->data.data() : nullptr,
                                    X.shape[0], model, cfg, rng, nullptr, true,
                                    true, observer);
}

}  // namespace dyngen
