#pragma once

#include <vector>

#include "dyngen/inference.hpp"
#include "dyngen/model.hpp"
#include "dyngen/trainer.hpp"

namespace dyngen::test {

/// Small nonlinear model with every optional block enabled unless dims are 0.
inline ModelConfig tiny_config(std::size_t d = 3, std::size_t dn = 2,
                               std::size_t da = 0, std::size_t dm = 0,
                               std::size_t side = 4) {
  ModelConfig mc;
  mc.d_state = d;
  mc.d_noise = dn;
  mc.d_appearance = da;
  mc.d_motion = dm;
  mc.transition_hidden = {5};
  mc.decoder_hidden = {6};
  mc.frame_h = side;
  mc.frame_w = side;
  mc.frame_c = 1;
  return mc;
}

inline LatentTrajectory random_latents(const ModelConfig& mc, std::size_t T,
                                       SeededRng& rng) {
  LatentTrajectory lat;
  lat.s0 = rng.standard_normal({mc.d_state});
  lat.xi = rng.standard_normal({T, mc.d_noise});
  if (mc.d_appearance > 0) lat.a = rng.standard_normal({mc.d_appearance});
  if (mc.d_motion > 0) lat.m = rng.standard_normal({mc.d_motion});
  return lat;
}

inline FrameSequence random_frames(const ModelConfig& mc, std::size_t T,
                                   SeededRng& rng) {
  FrameSequence X =
      rng.standard_normal({T, mc.frame_h, mc.frame_w, mc.frame_c});
  for (auto& v : X.data) v = std::tanh(v);
  return X;
}

/// Central finite difference of f at x along coordinate i.
template <typename F>
double central_diff(F&& f, std::vector<double> x, std::size_t i,
                    double h = 1e-5) {
  double orig = x[i];
  x[i] = orig + h;
  double fp = f(x);
  x[i] = orig - h;
  double fm = f(x);
  return (fp - fm) / (2.0 * h);
}

inline double rel_err(double a, double b) {
  double scale = std::max({std::abs(a), std::abs(b), 1e-2});
  return std::abs(a - b) / scale;
}

}  // namespace dyngen::test
