#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dyngen/inference.hpp"
#include "dyngen/model.hpp"
#include "dyngen/tensor.hpp"

namespace dyngen {

enum class TrainVariant {
  plain,
  appearance,
  appearance_motion,
  conditional_encoder
};

struct TrainConfig {
  std::size_t iterations = 1000;
  LangevinConfig langevin;
  double learning_rate = 0.002;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t chunk_length = 30;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0 disables
  std::size_t threads = 1;

  void validate() const {
    if (iterations < 1) throw config_error("TrainConfig: iterations must be >= 1");
    if (learning_rate < 0.0)
      throw config_error("TrainConfig: learning_rate must be >= 0");
    if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 ||
        adam_beta2 >= 1.0)
      throw config_error("TrainConfig: betas must be in [0, 1)");
    if (chunk_length < 1)
      throw config_error("TrainConfig: chunk_length must be >= 1");
    langevin.validate();
  }
};

struct TrainSequence {
  FrameSequence X;
  std::optional<VisibilityMask> mask;
  /// Uncorrupted frames, used only to report the occluded-pixel error column.
  std::optional<FrameSequence> eval_truth;
};

struct MetricsRow {
  std::size_t iter = 0;
  double log_joint = 0.0;
  double recon_err_visible = 0.0;
  std::optional<double> recon_err_occluded;
  std::int64_t wallclock_ms = 0;
};

struct TrainState {
  Model model;
  TrainVariant variant = TrainVariant::plain;
  std::vector<Tensor> adam_m, adam_v;  // one pair per parameter block
  std::size_t iteration = 0;
  std::size_t total_iterations = 0;
  std::vector<LatentTrajectory> latents;  // per-sequence warm starts
  std::vector<SeededRng> seq_rngs;
  std::vector<MetricsRow> metrics;
};

/// Standard Adam ascent step with bias correction. `grads` are gradients of
/// the log-likelihood, one tensor per parameter block in declaration order.
inline void adam_update(TrainState& state, const TrainConfig& cfg,
                        const std::vector<Tensor>& grads) {
  auto params = state.model.params();
  if (grads.size() != params.size())
    throw dimension_error("adam_update: gradient block count mismatch");
  state.iteration += 1;
  double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.iteration));
  double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.iteration));
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!grads[p].all_finite())
      throw numeric_error("adam_update: non-finite gradient in parameter block " +
                          std::to_string(p));
    Tensor& m = state.adam_m[p];
    Tensor& v = state.adam_v[p];
    Tensor& val = params[p]->value;
    for (std::size_t i = 0; i < val.size(); ++i) {
      double g = grads[p][i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      double mhat = m[i] / corr1;
      double vhat = v[i] / corr2;
      val[i] += cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

/// Accumulated parameter gradients of sum_i L(theta, xi_i) over whole
/// sequences (no chunking), left in the Param::grad accumulators.
inline void param_gradients(Model& model,
                            const std::vector<LatentTrajectory>& latents,
                            const std::vector<const FrameSequence*>& data,
                            const std::vector<const VisibilityMask*>& masks,
                            double sigma) {
  if (latents.size() != data.size() || masks.size() != data.size())
    throw dimension_error("param_gradients: per-sequence list sizes differ");
  model.reset_grads();
  for (std::size_t i = 0; i < data.size(); ++i) {
    detail::check_sequence(model, latents[i], *data[i], masks[i]);
    detail::eval_chunk(model, latents[i], data[i]->data.data(),
                       masks[i] ? masks[i]->data.data() : nullptr,
                       data[i]->shape[0], sigma, nullptr, true, true, nullptr,
                       /*accumulate_param_grads=*/true);
  }
}

namespace detail {

/// Conditional variant: (s0, a) come from the encoder applied to x0 rather
/// than from latent blocks; only xi carries a prior. Gradients flow through
/// the encoder when param grads are accumulated.
inline double eval_conditional(Model& model, const Tensor& x0,
                               const Tensor& xi, const double* X_frames,
                               const double* mask_frames, std::size_t T,
                               double sigma, Tensor* xi_grad,
                               bool accumulate_param_grads = false,
                               std::vector<Tensor>* frame_values = nullptr,
                               Tensor* final_state = nullptr) {
  if (!model.encoder)
    throw state_error("conditional evaluation requires an encoder");
  Tape tape(accumulate_param_grads);
  Var x0v = tape.input(x0);
  Var enc = model.encoder->apply(tape, x0v);
  std::size_t d = model.cfg.d_state, da = model.cfg.d_appearance;
  Var s0 = tape.slice(enc, 0, d);
  std::optional<Var> a;
  if (da > 0) a = tape.slice(enc, d, da);
  Var xiv = tape.input(xi);
  auto g = rollout_graph(tape, model, s0, xiv, a);
  std::size_t fd = model.cfg.frame_dim();
  std::optional<Var> loss;
  if (T > 0) {
    std::optional<Var> recon;
    for (std::size_t t = 0; t < T; ++t) {
      Var e = tape.masked_sq_err(g.frames[t], X_frames + t * fd,
                                 mask_frames ? mask_frames + t * fd : nullptr);
      recon = recon ? tape.add(*recon, e) : e;
    }
    loss = tape.scale(*recon, -0.5 / (sigma * sigma));
  }
  Var prior = tape.scale(tape.sum_sq(xiv), -0.5);
  loss = loss ? tape.add(*loss, prior) : prior;
  double lj = tape.value(*loss)[0];
  if (frame_values) {
    frame_values->clear();
    for (Var f : g.frames) frame_values->push_back(tape.value(f));
  }
  if (final_state)
    *final_state =
        g.states.empty() ? tape.value(s0) : tape.value(g.states.back());
  if (xi_grad || accumulate_param_grads) {
    tape.backward(*loss);
    if (xi_grad) *xi_grad = tape.grad(xiv);
  }
  return lj;
}

struct SequenceResult {
  std::vector<Tensor> grad;  // per parameter block
  double log_joint = 0.0;
  double abs_err_vis = 0.0;
  std::size_t n_vis = 0;
  double abs_err_occ = 0.0;
  std::size_t n_occ = 0;
};

struct PreparedSequence {
  const TrainSequence* seq = nullptr;
  std::size_t T_total = 0;      // frames governed by latents
  std::size_t target_offset = 0;  // frame index of the first target
};

inline std::vector<std::pair<std::size_t, std::size_t>> chunk_ranges(
    std::size_t T, std::size_t chunk_length) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t t0 = 0; t0 < T; t0 += chunk_length)
    out.emplace_back(t0, std::min(T, t0 + chunk_length));
  if (out.empty()) out.emplace_back(0, 0);
  return out;
}

/// Runs inference + learning for one sequence in one training iteration.
/// Reads `model` parameter values only; gradient accumulation happens in a
/// caller-provided clone so sequences can run on separate threads.
inline SequenceResult process_sequence(Model& model, const TrainConfig& cfg,
                                       TrainVariant variant,
                                       const PreparedSequence& prep,
                                       LatentTrajectory& lat,
                                       SeededRng& rng) {
  SequenceResult res;
  const FrameSequence& X = prep.seq->X;
  const VisibilityMask* mask =
      prep.seq->mask ? &*prep.seq->mask : nullptr;
  std::size_t fd = model.cfg.frame_dim();
  std::size_t dn = model.cfg.d_noise;
  bool conditional = variant == TrainVariant::conditional_encoder;
  std::size_t off = prep.target_offset;  // 1 in the conditional variant

  model.reset_grads();
  Tensor carried;
  bool have_carried = false;
  Tensor x0;
  if (conditional) {
    x0 = Tensor({fd}, std::vector<double>(X.data.begin(),
                                          X.data.begin() + fd));
  }

  std::vector<Tensor> frames;
  for (auto [t0, t1] : chunk_ranges(prep.T_total, cfg.chunk_length)) {
    std::size_t Tc = t1 - t0;
    const double* frames_ptr = X.data.data() + (off + t0) * fd;
    const double* mask_ptr =
        mask ? mask->data.data() + (off + t0) * fd : nullptr;

    // Chunk-local latents; xi rows are written back after inference.
    LatentTrajectory chunk_lat;
    chunk_lat.s0 = lat.s0;
    chunk_lat.xi = Tensor({Tc, dn},
                          std::vector<double>(lat.xi.data.begin() + t0 * dn,
                                              lat.xi.data.begin() + t1 * dn));
    chunk_lat.a = lat.a;
    chunk_lat.m = lat.m;

    bool first_chunk = t0 == 0;
    if (conditional && first_chunk) {
      // (s0, a) are deterministic functions of x0, not latent.
      Tensor xi_grad;
      double lj = 0.0;
      for (std::size_t step = 0; step < cfg.langevin.steps; ++step) {
        lj = eval_conditional(model, x0, chunk_lat.xi, frames_ptr, mask_ptr,
                              Tc, cfg.langevin.sigma, &xi_grad);
        if (!std::isfinite(lj))
          throw numeric_error("train: non-finite log_joint during inference");
        langevin_update_block(chunk_lat.xi, xi_grad, cfg.langevin.delta, rng);
      }
      std::vector<Tensor> chunk_frames;
      Tensor fstate;
      lj = eval_conditional(model, x0, chunk_lat.xi, frames_ptr, mask_ptr, Tc,
                            cfg.langevin.sigma, nullptr,
                            /*accumulate_param_grads=*/true, &chunk_frames,
                            &fstate);
      res.log_joint += lj;
      carried = std::move(fstate);
      have_carried = true;
      for (auto& f : chunk_frames) frames.push_back(std::move(f));
    } else {
      const Tensor* cstate = nullptr;
      if (!first_chunk || conditional) cstate = &carried;
      bool infer_a = !conditional && lat.a.has_value();
      bool infer_m = lat.m.has_value();
      PosteriorSample ps = langevin_run_chunk(
          std::move(chunk_lat), frames_ptr, mask_ptr, Tc, model, cfg.langevin,
          rng, cstate, infer_a, infer_m);
      chunk_lat = std::move(ps.latents);
      std::vector<Tensor> chunk_frames;
      Tensor fstate;
      double lj = eval_chunk(model, chunk_lat, frames_ptr, mask_ptr, Tc,
                             cfg.langevin.sigma, cstate, infer_a, infer_m,
                             nullptr, /*accumulate_param_grads=*/true,
                             &chunk_frames, &fstate);
      res.log_joint += lj;
      carried = std::move(fstate);
      have_carried = true;
      for (auto& f : chunk_frames) frames.push_back(std::move(f));
      if (first_chunk && !conditional) lat.s0 = chunk_lat.s0;
      if (infer_a) lat.a = chunk_lat.a;
      if (infer_m) lat.m = chunk_lat.m;
    }
    std::copy(chunk_lat.xi.data.begin(), chunk_lat.xi.data.end(),
              lat.xi.data.begin() + t0 * dn);
  }
  (void)have_carried;

  // Reconstruction metrics against the (possibly masked) data; the occluded
  // column uses eval_truth only, never the training input.
  const FrameSequence* truth =
      prep.seq->eval_truth ? &*prep.seq->eval_truth : nullptr;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const Tensor& f = frames[t];
    std::size_t base = (off + t) * fd;
    for (std::size_t i = 0; i < fd; ++i) {
      double mval = mask ? mask->data[base + i] : 1.0;
      if (mval != 0.0) {
        res.abs_err_vis += std::abs(X.data[base + i] - f[i]);
        ++res.n_vis;
      } else if (truth) {
        res.abs_err_occ += std::abs(truth->data[base + i] - f[i]);
        ++res.n_occ;
      }
    }
  }

  for (Param* p : model.params()) res.grad.push_back(p->grad);
  return res;
}

}  // namespace detail

/// Alternating back-propagation through time: per iteration, each sequence's
/// latents are refreshed by Langevin dynamics, then one Adam ascent step is
/// applied to the accumulated parameter gradients. Sequences run in parallel
/// against read-only parameters; gradients are reduced in sequence-index
/// order so results do not depend on the thread count.
inline TrainState train(
    const std::vector<TrainSequence>& dataset, const TrainConfig& cfg,
    const ModelConfig& model_cfg, TrainVariant variant,
    const std::function<void(const TrainState&)>& on_iteration = nullptr) {
  cfg.validate();
  if (dataset.empty()) throw data_error("train: empty dataset");
  bool conditional = variant == TrainVariant::conditional_encoder;

  ModelConfig mc = model_cfg;
  if (conditional && !mc.has_encoder)
    throw config_error("train: conditional variant requires an encoder");
  if ((variant == TrainVariant::appearance ||
       variant == TrainVariant::appearance_motion || conditional) &&
      mc.d_appearance == 0)
    throw config_error("train: variant requires d_appearance > 0");
  if (variant == TrainVariant::appearance_motion && mc.d_motion == 0)
    throw config_error("train: variant requires d_motion > 0");

  std::vector<detail::PreparedSequence> prep(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset[i];
    if (s.X.shape.size() != 4 || s.X.shape[1] != mc.frame_h ||
        s.X.shape[2] != mc.frame_w || s.X.shape[3] != mc.frame_c)
      throw data_error("train: sequence " + std::to_string(i) +
                       " frame shape " + s.X.shape_str() +
                       " does not match the model");
    if (s.mask && !s.mask->same_shape(s.X))
      throw data_error("train: sequence " + std::to_string(i) +
                       " mask shape mismatch");
    std::size_t T = s.X.shape[0];
    if (conditional) {
      if (T < 2)
        throw data_error("train: conditional variant needs at least 2 frames");
      if (s.mask) {
        for (std::size_t i2 = 0; i2 < mc.frame_dim(); ++i2)
          if (s.mask->data[i2] == 0.0)
            throw data_error(
                "train: conditional variant requires a fully visible frame 0");
      }
      prep[i] = {&s, T - 1, 1};
    } else {
      prep[i] = {&s, T, 0};
    }
    bool any_visible = false;
    if (s.mask) {
      for (double v : s.mask->data)
        if (v != 0.0) { any_visible = true; break; }
    } else {
      any_visible = true;
    }
    if (!any_visible)
      throw data_error("train: sequence " + std::to_string(i) +
                       " has no visible pixels");
  }

  TrainState state;
  state.variant = variant;
  state.total_iterations = cfg.iterations;
  state.model = Model::build(mc);
  SeededRng master(cfg.seed);
  SeededRng init_rng = master.derive(0x1417);
  state.model.init_params(init_rng);
  for (Param* p : state.model.params()) {
    state.adam_m.push_back(Tensor::zeros(p->value.shape));
    state.adam_v.push_back(Tensor::zeros(p->value.shape));
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    LatentTrajectory lat;
    lat.s0 = Tensor::zeros({mc.d_state});
    lat.xi = Tensor::zeros({prep[i].T_total, mc.d_noise});
    if (mc.d_appearance > 0) lat.a = Tensor::zeros({mc.d_appearance});
    if (mc.d_motion > 0) lat.m = Tensor::zeros({mc.d_motion});
    state.latents.push_back(std::move(lat));
    state.seq_rngs.push_back(master.derive(0x5e90000 + i));
  }

  std::size_t threads = std::max<std::size_t>(1, cfg.threads);
  auto t_start = std::chrono::steady_clock::now();

  for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
    std::vector<detail::SequenceResult> results(dataset.size());
    auto worker = [&](std::size_t begin, std::size_t end) {
      // Each worker owns a clone; parameter values equal the master's, so
      // per-sequence arithmetic is identical at any thread count.
      Model local = state.model;
      for (std::size_t i = begin; i < end; ++i)
        results[i] = detail::process_sequence(local, cfg, variant, prep[i],
                                              state.latents[i],
                                              state.seq_rngs[i]);
    };
    if (threads == 1 || dataset.size() == 1) {
      worker(0, dataset.size());
    } else {
      std::vector<std::thread> pool;
      std::size_t n = dataset.size();
      std::size_t per = (n + threads - 1) / threads;
      for (std::size_t w = 0; w < threads; ++w) {
        std::size_t b = std::min(n, w * per), e = std::min(n, b + per);
        if (b < e) pool.emplace_back(worker, b, e);
      }
      for (auto& th : pool) th.join();
    }

    // Deterministic reduction in sequence-index order.
    auto params = state.model.params();
    std::vector<Tensor> total;
    for (Param* p : params) total.push_back(Tensor::zeros(p->value.shape));
    MetricsRow row;
    row.iter = state.iteration + 1;
    double occ_sum = 0.0;
    std::size_t occ_n = 0, vis_n = 0;
    double vis_sum = 0.0;
    for (const auto& r : results) {
      for (std::size_t p = 0; p < total.size(); ++p)
        for (std::size_t j = 0; j < total[p].size(); ++j)
          total[p][j] += r.grad[p][j];
      row.log_joint += r.log_joint;
      vis_sum += r.abs_err_vis;
      vis_n += r.n_vis;
      occ_sum += r.abs_err_occ;
      occ_n += r.n_occ;
    }
    row.recon_err_visible =
        vis_n ? 127.5 * vis_sum / static_cast<double>(vis_n) : 0.0;
    if (occ_n) row.recon_err_occluded = 127.5 * occ_sum / static_cast<double>(occ_n);

    adam_update(state, cfg, total);

    row.wallclock_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - t_start)
                           .count();
    state.metrics.push_back(row);
    if (on_iteration &&
        ((cfg.checkpoint_every > 0 &&
          state.iteration % cfg.checkpoint_every == 0) ||
         state.iteration == cfg.iterations))
      on_iteration(state);
  }
  return state;
}

/// Reconstruction of a (possibly masked) sequence from its inferred latents.
inline FrameSequence reconstruct(TrainState& state, std::size_t seq_index) {
  if (seq_index >= state.latents.size())
    throw data_error("reconstruct: sequence index out of range");
  if (state.variant == TrainVariant::conditional_encoder)
    throw state_error("reconstruct: not defined for the conditional variant");
  return rollout(state.model, state.latents[seq_index]);
}

/// Unsupervised recovery: trains on the masked sequence (occluded ground
/// truth is never read), then fills every pixel from the model's
/// reconstruction.
inline FrameSequence recover(
    const FrameSequence& X_masked, const VisibilityMask& mask,
    const TrainConfig& cfg, const ModelConfig& model_cfg,
    TrainState* state_out = nullptr,
    const FrameSequence* eval_truth = nullptr) {
  bool any_visible = false;
  for (double v : mask.data)
    if (v != 0.0) { any_visible = true; break; }
  if (!any_visible) throw data_error("recover: sequence has no visible pixels");
  std::vector<TrainSequence> ds(1);
  ds[0].X = X_masked;
  ds[0].mask = mask;
  if (eval_truth) ds[0].eval_truth = *eval_truth;
  TrainVariant variant = model_cfg.d_appearance > 0 ? TrainVariant::appearance
                                                    : TrainVariant::plain;
  TrainState st = train(ds, cfg, model_cfg, variant);
  FrameSequence rec = reconstruct(st, 0);
  if (state_out) *state_out = std::move(st);
  return rec;
}

/// Image-to-video prediction with a trained conditional model: encode the
/// given first frame, sample fresh innovations, and roll out T frames.
inline FrameSequence animate(TrainState& state, const Tensor& x0,
                             std::size_t T, SeededRng& rng) {
  if (state.variant != TrainVariant::conditional_encoder)
    throw state_error("animate: state was not trained with the conditional variant");
  auto [s0, a] = encode(state.model, x0);
  LatentTrajectory lat;
  lat.s0 = std::move(s0);
  lat.xi = rng.standard_normal({T, state.model.cfg.d_noise});
  lat.a = std::move(a);
  return rollout(state.model, lat);
}

/// Rollouts along the straight line between two appearance vectors; every
/// output shares the same innovations and initial state.
inline std::vector<FrameSequence> interpolate_appearance(
    Model& model, const Tensor& a1, const Tensor& a2, std::size_t steps,
    const Tensor& xi, const Tensor& s0) {
  if (!a1.same_shape(a2))
    throw dimension_error("interpolate_appearance: endpoint dims differ");
  if (steps < 2)
    throw config_error("interpolate_appearance: need at least 2 steps");
  std::vector<FrameSequence> out;
  for (std::size_t k = 0; k < steps; ++k) {
    double lam = static_cast<double>(k) / static_cast<double>(steps - 1);
    Tensor a = a1;
    for (std::size_t i = 0; i < a.size(); ++i)
      a[i] = (1.0 - lam) * a1[i] + lam * a2[i];
    LatentTrajectory lat;
    lat.s0 = s0;
    lat.xi = xi;
    lat.a = std::move(a);
    out.push_back(rollout(model, lat));
  }
  return out;
}

}  // namespace dyngen
