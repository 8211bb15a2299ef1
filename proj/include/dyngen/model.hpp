#pragma once

#include <array>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dyngen/binio.hpp"
#include "dyngen/tape.hpp"
#include "dyngen/tensor.hpp"

namespace dyngen {

/// Observed sequence, shape [T, H, W, C], values in [-1, 1].
using FrameSequence = Tensor;
/// 0/1 tensor matching a FrameSequence.
using VisibilityMask = Tensor;

enum class DecoderKind { mlp, deconv };
enum class EncoderKind { mlp, conv };

struct ConvLayerSpec {
  std::size_t channels;
  std::size_t ksize;
  std::size_t stride;
};

struct ModelConfig {
  std::size_t d_state = 10;
  std::size_t d_noise = 5;
  std::size_t d_appearance = 0;
  std::size_t d_motion = 0;

  std::vector<std::size_t> transition_hidden{20, 20};

  DecoderKind decoder = DecoderKind::mlp;
  std::size_t frame_h = 16, frame_w = 16, frame_c = 1;
  std::vector<std::size_t> decoder_hidden{32};  // mlp decoder hidden widths
  // deconv decoder: channel counts per upsampling layer, last entry must
  // equal frame_c; layer count n implies frame_h == frame_w == 2^n.
  std::vector<std::size_t> decoder_channels{32, 16, 1};

  // Identity activations and no residual-tanh wrapper; used for the exact
  // linear-Gaussian oracle comparison. Test/diagnostic configuration.
  bool linear_mode = false;

  bool has_encoder = false;
  EncoderKind encoder = EncoderKind::mlp;
  std::vector<std::size_t> encoder_hidden{64};
  std::vector<ConvLayerSpec> encoder_conv{{64, 5, 2}, {128, 3, 2}, {256, 3, 1}};

  std::size_t frame_dim() const { return frame_h * frame_w * frame_c; }

  static ModelConfig desk() { return ModelConfig{}; }

  static ModelConfig paper() {
    ModelConfig c;
    c.d_state = 100;
    c.d_noise = 100;
    c.transition_hidden = {20, 20};
    c.decoder = DecoderKind::deconv;
    c.frame_h = c.frame_w = 64;
    c.frame_c = 3;
    c.decoder_channels = {512, 512, 256, 128, 64, 3};
    return c;
  }
};

/// Per-sequence latent variables: initial state, innovations, and the
/// optional static appearance and motion vectors.
struct LatentTrajectory {
  Tensor s0;  // [d_state]
  Tensor xi;  // [T, d_noise]
  std::optional<Tensor> a;
  std::optional<Tensor> m;

  std::size_t length() const { return xi.shape.empty() ? 0 : xi.shape[0]; }

  bool all_finite() const {
    return s0.all_finite() && xi.all_finite() &&
           (!a || a->all_finite()) && (!m || m->all_finite());
  }
};

struct AffineLayer {
  Param w, b;
  AffineLayer() = default;
  AffineLayer(std::size_t n_out, std::size_t n_in)
      : w(Tensor::zeros({n_out, n_in})), b(Tensor::zeros({n_out})) {}
};

struct DeconvLayer {
  Param kernel, bias, gamma, beta;
  DeconvLayer() = default;
  DeconvLayer(std::size_t c_in, std::size_t c_out)
      : kernel(Tensor::zeros({4, 4, c_in, c_out})),
        bias(Tensor::zeros({c_out})),
        gamma(Tensor::full({c_out}, 1.0)),
        beta(Tensor::zeros({c_out})) {}
};

struct ConvLayer {
  Param kernel, bias;
  std::size_t stride = 1, pad = 0;
  ConvLayer() = default;
  ConvLayer(std::size_t c_in, const ConvLayerSpec& spec)
      : kernel(Tensor::zeros({spec.ksize, spec.ksize, c_in, spec.channels})),
        bias(Tensor::zeros({spec.channels})),
        stride(spec.stride),
        pad(spec.ksize / 2) {}
};

/// Transition model: r_t = MLP(concat(s_prev, xi_t, m)); s_t = tanh(s_prev + r_t).
/// In linear mode the MLP is identity-activated and s_t = r_t directly.
struct TransitionNet {
  std::size_t d_state = 0, d_noise = 0, d_motion = 0;
  bool linear_mode = false;
  std::vector<AffineLayer> layers;  // hidden..., then output of width d_state

  static TransitionNet build(const ModelConfig& cfg) {
    TransitionNet n;
    n.d_state = cfg.d_state;
    n.d_noise = cfg.d_noise;
    n.d_motion = cfg.d_motion;
    n.linear_mode = cfg.linear_mode;
    std::size_t in = cfg.d_state + cfg.d_noise + cfg.d_motion;
    std::vector<std::size_t> hidden =
        cfg.linear_mode ? std::vector<std::size_t>{} : cfg.transition_hidden;
    for (std::size_t h : hidden) {
      n.layers.emplace_back(h, in);
      in = h;
    }
    n.layers.emplace_back(cfg.d_state, in);
    return n;
  }

  Var apply(Tape& tape, Var s_prev, Var xi,
            std::optional<Var> m = std::nullopt) {
    std::vector<Var> parts{s_prev, xi};
    if (d_motion > 0) {
      if (!m) throw dimension_error("transition_step: motion vector required");
      parts.push_back(*m);
    }
    Var h = tape.concat(parts);
    Activation act = linear_mode ? Activation::identity : Activation::tanh;
    for (std::size_t i = 0; i + 1 < layers.size(); ++i)
      h = tape.activation(tape.affine(h, layers[i].w, layers[i].b), act);
    Var r = tape.affine(h, layers.back().w, layers.back().b);
    if (linear_mode) return r;
    return tape.activation(tape.add(s_prev, r), Activation::tanh);
  }

  void collect(std::vector<Param*>& out) {
    for (auto& l : layers) {
      out.push_back(&l.w);
      out.push_back(&l.b);
    }
  }
};

/// Emission model: decoder from concat(s_t, a) to an HxWxC frame in [-1, 1].
struct EmissionNet {
  DecoderKind kind = DecoderKind::mlp;
  std::size_t d_state = 0, d_appearance = 0;
  std::size_t frame_h = 0, frame_w = 0, frame_c = 0;
  bool linear_mode = false;
  std::vector<AffineLayer> mlp_layers;
  std::vector<DeconvLayer> deconv_layers;

  static EmissionNet build(const ModelConfig& cfg) {
    EmissionNet n;
    n.kind = cfg.decoder;
    n.d_state = cfg.d_state;
    n.d_appearance = cfg.d_appearance;
    n.frame_h = cfg.frame_h;
    n.frame_w = cfg.frame_w;
    n.frame_c = cfg.frame_c;
    n.linear_mode = cfg.linear_mode;
    std::size_t in = cfg.d_state + cfg.d_appearance;
    if (n.kind == DecoderKind::mlp) {
      std::vector<std::size_t> hidden =
          cfg.linear_mode ? std::vector<std::size_t>{} : cfg.decoder_hidden;
      for (std::size_t h : hidden) {
        n.mlp_layers.emplace_back(h, in);
        in = h;
      }
      n.mlp_layers.emplace_back(cfg.frame_dim(), in);
    } else {
      const auto& ch = cfg.decoder_channels;
      if (ch.empty() || ch.back() != cfg.frame_c)
        throw config_error("deconv decoder: last channel count must equal C");
      std::size_t side = std::size_t{1} << ch.size();
      if (cfg.frame_h != side || cfg.frame_w != side)
        throw config_error(
            "deconv decoder: frame side must be 2^layers, got " +
            std::to_string(cfg.frame_h) + " for " + std::to_string(ch.size()) +
            " layers");
      std::size_t c_in = in;
      for (std::size_t c_out : ch) {
        n.deconv_layers.emplace_back(c_in, c_out);
        c_in = c_out;
      }
    }
    return n;
  }

  Var apply(Tape& tape, Var s, std::optional<Var> a = std::nullopt) {
    Var h = s;
    if (d_appearance > 0) {
      if (!a) throw dimension_error("emit: appearance vector required");
      std::vector<Var> parts{s, *a};
      h = tape.concat(parts);
    }
    Activation final_act =
        linear_mode ? Activation::identity : Activation::tanh;
    if (kind == DecoderKind::mlp) {
      Activation act = linear_mode ? Activation::identity : Activation::tanh;
      for (std::size_t i = 0; i + 1 < mlp_layers.size(); ++i)
        h = tape.activation(tape.affine(h, mlp_layers[i].w, mlp_layers[i].b),
                            act);
      h = tape.affine(h, mlp_layers.back().w, mlp_layers.back().b);
      h = tape.activation(h, final_act);
      return tape.reshape(h, {frame_h, frame_w, frame_c});
    }
    h = tape.reshape(h, {1, 1, d_state + d_appearance});
    for (std::size_t i = 0; i < deconv_layers.size(); ++i) {
      auto& l = deconv_layers[i];
      h = tape.conv_transpose2d(h, l.kernel, l.bias);
      if (i + 1 < deconv_layers.size()) {
        h = tape.scale_shift(h, l.gamma, l.beta);
        h = tape.activation(h, Activation::relu);
      } else {
        h = tape.activation(h, final_act);
      }
    }
    return h;
  }

  void collect(std::vector<Param*>& out) {
    for (auto& l : mlp_layers) {
      out.push_back(&l.w);
      out.push_back(&l.b);
    }
    for (std::size_t i = 0; i < deconv_layers.size(); ++i) {
      auto& l = deconv_layers[i];
      out.push_back(&l.kernel);
      out.push_back(&l.bias);
      if (i + 1 < deconv_layers.size()) {
        out.push_back(&l.gamma);
        out.push_back(&l.beta);
      }
    }
  }
};

/// Encoder mapping the first frame to (s0, a).
struct EncoderNet {
  EncoderKind kind = EncoderKind::mlp;
  std::size_t d_state = 0, d_appearance = 0;
  std::size_t frame_h = 0, frame_w = 0, frame_c = 0;
  std::vector<ConvLayer> conv_layers;
  std::vector<AffineLayer> fc_layers;

  static EncoderNet build(const ModelConfig& cfg) {
    EncoderNet n;
    n.kind = cfg.encoder;
    n.d_state = cfg.d_state;
    n.d_appearance = cfg.d_appearance;
    n.frame_h = cfg.frame_h;
    n.frame_w = cfg.frame_w;
    n.frame_c = cfg.frame_c;
    std::size_t out_dim = cfg.d_state + cfg.d_appearance;
    if (n.kind == EncoderKind::mlp) {
      std::size_t in = cfg.frame_dim();
      for (std::size_t h : cfg.encoder_hidden) {
        n.fc_layers.emplace_back(h, in);
        in = h;
      }
      n.fc_layers.emplace_back(out_dim, in);
    } else {
      std::size_t h = cfg.frame_h, w = cfg.frame_w, c = cfg.frame_c;
      for (const auto& spec : cfg.encoder_conv) {
        n.conv_layers.emplace_back(c, spec);
        std::size_t pad = spec.ksize / 2;
        h = (h + 2 * pad - spec.ksize) / spec.stride + 1;
        w = (w + 2 * pad - spec.ksize) / spec.stride + 1;
        c = spec.channels;
      }
      n.fc_layers.emplace_back(out_dim, h * w * c);
    }
    return n;
  }

  /// Returns the undivided output vector of width d_state + d_appearance.
  Var apply(Tape& tape, Var x0) {
    const Tensor& xv = tape.value(x0);
    if (xv.size() != frame_h * frame_w * frame_c)
      throw dimension_error("encode: frame " + xv.shape_str() +
                            " does not match configured shape");
    Var h = x0;
    if (kind == EncoderKind::conv) {
      h = tape.reshape(h, {frame_h, frame_w, frame_c});
      for (auto& l : conv_layers) {
        h = tape.conv2d(h, l.kernel, l.bias, l.stride, l.pad);
        h = tape.activation(h, Activation::relu);
      }
      const auto& hs = tape.value(h).shape;
      h = tape.reshape(h, {hs[0] * hs[1] * hs[2]});
    } else {
      h = tape.reshape(h, {frame_h * frame_w * frame_c});
      for (std::size_t i = 0; i + 1 < fc_layers.size(); ++i)
        h = tape.activation(tape.affine(h, fc_layers[i].w, fc_layers[i].b),
                            Activation::relu);
    }
    return tape.affine(h, fc_layers.back().w, fc_layers.back().b);
  }

  void collect(std::vector<Param*>& out) {
    for (auto& l : conv_layers) {
      out.push_back(&l.kernel);
      out.push_back(&l.bias);
    }
    for (auto& l : fc_layers) {
      out.push_back(&l.w);
      out.push_back(&l.b);
    }
  }
};

/// theta = (transition alpha, emission beta, optional encoder gamma).
struct Model {
  ModelConfig cfg;
  TransitionNet transition;
  EmissionNet emission;
  std::optional<EncoderNet> encoder;

  static Model build(const ModelConfig& cfg) {
    Model m;
    m.cfg = cfg;
    m.transition = TransitionNet::build(cfg);
    m.emission = EmissionNet::build(cfg);
    if (cfg.has_encoder) m.encoder = EncoderNet::build(cfg);
    return m;
  }

  /// Declaration-order parameter list (checkpoint and optimizer order).
  std::vector<Param*> params() {
    std::vector<Param*> out;
    transition.collect(out);
    emission.collect(out);
    if (encoder) encoder->collect(out);
    return out;
  }

  /// Weights ~ N(0, 0.02^2), biases 0, scale-shift at (1, 0).
  void init_params(SeededRng& rng) {
    for (auto& l : transition.layers)
      for (auto& v : l.w.value.data) v = 0.02 * rng.normal();
    for (auto& l : emission.mlp_layers)
      for (auto& v : l.w.value.data) v = 0.02 * rng.normal();
    for (auto& l : emission.deconv_layers)
      for (auto& v : l.kernel.value.data) v = 0.02 * rng.normal();
    if (encoder) {
      for (auto& l : encoder->conv_layers)
        for (auto& v : l.kernel.value.data) v = 0.02 * rng.normal();
      for (auto& l : encoder->fc_layers)
        for (auto& v : l.w.value.data) v = 0.02 * rng.normal();
    }
  }

  void reset_grads() {
    for (Param* p : params()) p->reset_grad();
  }
};

struct RolloutGraph {
  std::vector<Var> states;  // s_1..s_T
  std::vector<Var> frames;  // x_1..x_T
};

/// Unrolls the transition and emission over T steps on the given tape.
/// xi is a flat [T * d_noise] (or [T, d_noise]) input variable.
inline RolloutGraph rollout_graph(Tape& tape, Model& model, Var s0, Var xi,
                                  std::optional<Var> a = std::nullopt,
                                  std::optional<Var> m = std::nullopt,
                                  std::size_t emit_from = 0) {
  std::size_t dn = model.cfg.d_noise;
  std::size_t n = tape.value(xi).size();
  if (n % dn != 0)
    throw dimension_error("rollout: xi length not a multiple of d_noise");
  std::size_t T = n / dn;
  RolloutGraph g;
  Var s = s0;
  for (std::size_t t = 0; t < T; ++t) {
    Var xi_t = tape.slice(xi, t * dn, dn);
    s = model.transition.apply(tape, s, xi_t, m);
    g.states.push_back(s);
    if (t >= emit_from) g.frames.push_back(model.emission.apply(tape, s, a));
  }
  return g;
}

inline Tensor frames_to_sequence(const Tape& tape, const std::vector<Var>& frames,
                                 const ModelConfig& cfg) {
  Tensor out = Tensor::zeros(
      {frames.size(), cfg.frame_h, cfg.frame_w, cfg.frame_c});
  std::size_t fd = cfg.frame_dim();
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const Tensor& f = tape.value(frames[t]);
    std::copy(f.data.begin(), f.data.end(), out.data.begin() + t * fd);
  }
  return out;
}

/// Deterministic forward pass: frames generated from the given latents.
inline FrameSequence rollout(Model& model, const LatentTrajectory& latents) {
  Tape tape(false);
  Var s0 = tape.input(latents.s0);
  Var xi = tape.input(latents.xi);
  std::optional<Var> a, m;
  if (latents.a) a = tape.input(*latents.a);
  if (latents.m) m = tape.input(*latents.m);
  auto g = rollout_graph(tape, model, s0, xi, a, m);
  return frames_to_sequence(tape, g.frames, model.cfg);
}

/// Single transition application (value only).
inline Tensor transition_step(Model& model, const Tensor& s_prev,
                              const Tensor& xi_t,
                              const Tensor* m = nullptr) {
  if (s_prev.size() != model.cfg.d_state)
    throw dimension_error("transition_step: state size mismatch");
  if (xi_t.size() != model.cfg.d_noise)
    throw dimension_error("transition_step: noise size mismatch");
  Tape tape(false);
  Var s = tape.input(s_prev);
  Var x = tape.input(xi_t);
  std::optional<Var> mv;
  if (m) mv = tape.input(*m);
  return tape.value(model.transition.apply(tape, s, x, mv));
}

/// Single emission application (value only).
inline Tensor emit(Model& model, const Tensor& s_t, const Tensor* a = nullptr) {
  if (s_t.size() != model.cfg.d_state)
    throw dimension_error("emit: state size mismatch");
  Tape tape(false);
  Var s = tape.input(s_t);
  std::optional<Var> av;
  if (a) av = tape.input(*a);
  return tape.value(model.emission.apply(tape, s, av));
}

/// Encoder forward pass split into (s0, a).
inline std::pair<Tensor, Tensor> encode(Model& model, const Tensor& x0) {
  if (!model.encoder) throw state_error("encode: model has no encoder");
  Tape tape(false);
  Var x = tape.input(x0);
  Var out = model.encoder->apply(tape, x);
  const Tensor& v = tape.value(out);
  std::size_t d = model.cfg.d_state, da = model.cfg.d_appearance;
  Tensor s0({d}, std::vector<double>(v.data.begin(), v.data.begin() + d));
  Tensor a({da}, std::vector<double>(v.data.begin() + d,
                                     v.data.begin() + d + da));
  return {std::move(s0), std::move(a)};
}

/// Samples s0 and all innovations from N(0, I), rolls the state forward
/// through burn_in + T steps, and emits the last T frames.
inline FrameSequence synthesize(Model& model, SeededRng& rng, std::size_t T,
                                std::size_t burn_in,
                                const Tensor* a = nullptr,
                                const Tensor* m = nullptr) {
  Tensor s0 = rng.standard_normal({model.cfg.d_state});
  Tensor xi = rng.standard_normal({burn_in + T, model.cfg.d_noise});
  Tape tape(false);
  Var s0v = tape.input(s0);
  Var xiv = tape.input(xi);
  std::optional<Var> av, mv;
  if (a) av = tape.input(*a);
  if (m) mv = tape.input(*m);
  auto g = rollout_graph(tape, model, s0v, xiv, av, mv, burn_in);
  return frames_to_sequence(tape, g.frames, model.cfg);
}

// ---- checkpoint format ("DGMD") -------------------------------------------

namespace detail {

inline void write_size_list(std::ostream& os, const std::vector<std::size_t>& v) {
  binio::write_u32(os, static_cast<std::uint32_t>(v.size()));
  for (auto s : v) binio::write_u32(os, static_cast<std::uint32_t>(s));
}

inline std::vector<std::size_t> read_size_list(std::istream& is) {
  std::uint32_t n = binio::read_u32(is);
  std::vector<std::size_t> v(n);
  for (auto& s : v) s = binio::read_u32(is);
  return v;
}

}  // namespace detail

inline void save_model(const Model& model_in, const std::string& path) {
  Model& model = const_cast<Model&>(model_in);  // params() is logically const
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot open checkpoint for writing: " + path);
  const ModelConfig& c = model.cfg;
  binio::write_magic(os, "DGMD");
  binio::write_u32(os, 1);
  binio::write_u32(os, static_cast<std::uint32_t>(c.d_state));
  binio::write_u32(os, static_cast<std::uint32_t>(c.d_noise));
  binio::write_u32(os, static_cast<std::uint32_t>(c.d_appearance));
  binio::write_u32(os, static_cast<std::uint32_t>(c.d_motion));
  detail::write_size_list(os, c.transition_hidden);
  binio::write_u32(os, c.decoder == DecoderKind::mlp ? 0 : 1);
  binio::write_u32(os, static_cast<std::uint32_t>(c.frame_h));
  binio::write_u32(os, static_cast<std::uint32_t>(c.frame_w));
  binio::write_u32(os, static_cast<std::uint32_t>(c.frame_c));
  detail::write_size_list(os, c.decoder_hidden);
  detail::write_size_list(os, c.decoder_channels);
  binio::write_u32(os, c.linear_mode ? 1 : 0);
  binio::write_u32(os, c.has_encoder ? 1 : 0);
  binio::write_u32(os, c.encoder == EncoderKind::mlp ? 0 : 1);
  detail::write_size_list(os, c.encoder_hidden);
  binio::write_u32(os, static_cast<std::uint32_t>(c.encoder_conv.size()));
  for (const auto& s : c.encoder_conv) {
    binio::write_u32(os, static_cast<std::uint32_t>(s.channels));
    binio::write_u32(os, static_cast<std::uint32_t>(s.ksize));
    binio::write_u32(os, static_cast<std::uint32_t>(s.stride));
  }
  for (Param* p : model.params())
    for (double v : p->value.data) binio::write_f64(os, v);
  if (!os) throw data_error("failed writing checkpoint: " + path);
}

inline Model load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open checkpoint: " + path);
  binio::expect_magic(is, "DGMD", path);
  std::uint32_t version = binio::read_u32(is);
  if (version != 1)
    throw data_error(path + ": unsupported checkpoint version " +
                     std::to_string(version));
  ModelConfig c;
  c.d_state = binio::read_u32(is);
  c.d_noise = binio::read_u32(is);
  c.d_appearance = binio::read_u32(is);
  c.d_motion = binio::read_u32(is);
  c.transition_hidden = detail::read_size_list(is);
  c.decoder = binio::read_u32(is) == 0 ? DecoderKind::mlp : DecoderKind::deconv;
  c.frame_h = binio::read_u32(is);
  c.frame_w = binio::read_u32(is);
  c.frame_c = binio::read_u32(is);
  c.decoder_hidden = detail::read_size_list(is);
  c.decoder_channels = detail::read_size_list(is);
  c.linear_mode = binio::read_u32(is) != 0;
  c.has_encoder = binio::read_u32(is) != 0;
  c.encoder = binio::read_u32(is) == 0 ? EncoderKind::mlp : EncoderKind::conv;
  c.encoder_hidden = detail::read_size_list(is);
  std::uint32_t nconv = binio::read_u32(is);
  c.encoder_conv.clear();
  for (std::uint32_t i = 0; i < nconv; ++i) {
    ConvLayerSpec s;
    s.channels = binio::read_u32(is);
    s.ksize = binio::read_u32(is);
    s.stride = binio::read_u32(is);
    c.encoder_conv.push_back(s);
  }
  Model model = Model::build(c);
  for (Param* p : model.params())
    for (double& v : p->value.data) v = binio::read_f64(is);
  return model;
}

}  // namespace dyngen
