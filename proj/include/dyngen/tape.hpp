#pragma once

#include <new>
#include <optional>
#include <span>
#include <type_traits>
#include <utility>
#include <vector>

#include "dyngen/tensor.hpp"

namespace dyngen {

/// Learnable parameter: value plus gradient accumulator of the same shape.
struct Param {
  Tensor value;
  Tensor grad;

  Param() = default;
  explicit Param(Tensor v)
      : value(std::move(v)), grad(Tensor::zeros(value.shape)) {}

  void reset_grad() { grad.fill(0.0); }
};

enum class Activation { identity, tanh, relu };

namespace detail {

/// Fixed-capacity, non-allocating closure used for backward passes. All op
/// closures capture only a handful of scalars and pointers, so a small inline
/// buffer avoids one heap allocation per graph node.
class BackFn {
 public:
  BackFn() = default;

  template <typename F>
  void set(F f) {
    static_assert(sizeof(F) <= kCapacity, "closure too large for BackFn");
    static_assert(std::is_trivially_destructible_v<F> &&
                      std::is_trivially_copyable_v<F>,
                  "BackFn closures must be trivial");
    new (buf_) F(std::move(f));
    invoke_ = [](const void* p, Tensor& g) { (*static_cast<const F*>(p))(g); };
  }

  void clear() { invoke_ = nullptr; }
  explicit operator bool() const { return invoke_ != nullptr; }
  void operator()(Tensor& g) const { invoke_(buf_, g); }

 private:
  static constexpr std::size_t kCapacity = 104;
  alignas(std::max_align_t) unsigned char buf_[kCapacity];
  void (*invoke_)(const void*, Tensor&) = nullptr;
};

}  // namespace detail

/// Reverse-mode gradient tape. A tape records one forward pass; backward()
/// may be called once per pass. reset() rewinds the tape for the next pass
/// while keeping all node storage, so repeated evaluations of a same-shaped
/// graph (Langevin steps, training iterations) allocate nothing.
///
/// Parameter gradients accumulate directly into Param::grad when the tape is
/// constructed with accumulate_param_grads = true. Gradients with respect to
/// input tensors are read back via grad().
class Tape {
 public:
  struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
  };

  explicit Tape(bool accumulate_param_grads = true)
      : param_grads_(accumulate_param_grads) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Rewind for the next forward pass, keeping node buffers for reuse.
  void reset() {
    live_ = 0;
    lists_live_ = 0;
    backward_done_ = false;
  }

  /// Leaf node whose gradient is tracked (latents, inputs).
  Var input(Tensor t) {
    Var v = alloc_node(t.shape);
    nodes_[v.id].value = std::move(t);
    return v;
  }

  /// Leaf node copied from a caller-owned tensor (no temporary allocation
  /// when the tape is being reused).
  Var input_copy(const Tensor& t) {
    Var v = alloc_node(t.shape);
    Tensor& dst = nodes_[v.id].value;
    std::copy(t.data.begin(), t.data.end(), dst.data.begin());
    return v;
  }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }

  // y = W x + b, W: [n_out, n_in], b: [n_out], x treated as flat vector.
  Var affine(Var x, Param& w, Param& b) {
    {
      const Tensor& xv = nodes_[x.id].value;
      if (w.value.shape.size() != 2)
        throw dimension_error("affine: weights must be rank 2, got " +
                              w.value.shape_str());
      if (xv.size() != w.value.shape[1])
        throw dimension_error("affine: input " + xv.shape_str() +
                              " does not match weights " + w.value.shape_str());
      if (b.value.size() != w.value.shape[0])
        throw dimension_error("affine: bias " + b.value.shape_str() +
                              " does not match weights " + w.value.shape_str());
    }
    std::size_t n_out = w.value.shape[0], n_in = w.value.shape[1];
    Var y = alloc_node({n_out});
    {
      const Tensor& xv = nodes_[x.id].value;
      Tensor& out = nodes_[y.id].value;
      for (std::size_t j = 0; j < n_out; ++j) {
        double acc = b.value[j];
        const double* wr = &w.value.data[j * n_in];
        for (std::size_t i = 0; i < n_in; ++i) acc += wr[i] * xv[i];
        out[j] = acc;
      }
    }
    Tape* self = this;
    nodes_[y.id].back.set(
        [self, x, pw = &w, pb = &b, n_out, n_in](Tensor& g) {
          const Tensor& xv = self->nodes_[x.id].value;
          Tensor& xg = self->nodes_[x.id].grad;
          for (std::size_t j = 0; j < n_out; ++j) {
            double gj = g[j];
            const double* wr = &pw->value.data[j * n_in];
            for (std::size_t i = 0; i < n_in; ++i) xg[i] += wr[i] * gj;
          }
          if (self->param_grads_) {
            for (std::size_t j = 0; j < n_out; ++j) {
              double gj = g[j];
              double* wg = &pw->grad.data[j * n_in];
              for (std::size_t i = 0; i < n_in; ++i) wg[i] += xv[i] * gj;
              pb->grad[j] += gj;
            }
          }
        });
    return y;
  }

  Var activation(Var x, Activation kind) {
    Var y = alloc_node(nodes_[x.id].value.shape);
    {
      const Tensor& xv = nodes_[x.id].value;
      Tensor& out = nodes_[y.id].value;
      switch (kind) {
        case Activation::identity:
          std::copy(xv.data.begin(), xv.data.end(), out.data.begin());
          break;
        case Activation::tanh:
          for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::tanh(xv[i]);
          break;
        case Activation::relu:
          for (std::size_t i = 0; i < xv.size(); ++i)
            out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
          break;
      }
    }
    Tape* self = this;
    nodes_[y.id].back.set([self, x, kind](Tensor& g) {
      Tensor& xg = self->nodes_[x.id].grad;
      const Tensor& xv = self->nodes_[x.id].value;
      switch (kind) {
        case Activation::identity:
          for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i];
          break;
        case Activation::tanh:
          for (std::size_t i = 0; i < g.size(); ++i) {
            double t = std::tanh(xv[i]);
            xg[i] += (1.0 - t * t) * g[i];
          }
          break;
        case Activation::relu:
          for (std::size_t i = 0; i < g.size(); ++i)
            xg[i] += xv[i] > 0.0 ? g[i] : 0.0;
          break;
      }
    });
    return y;
  }

  // Transposed convolution, kernel 4x4, stride 2, padding 1: output is
  // exactly (2h, 2w, c_out). Input layout HxWxC, kernel [4,4,c_in,c_out].
  Var conv_transpose2d(Var x, Param& kernel, Param& bias) {
    {
      const Tensor& xv = nodes_[x.id].value;
      if (xv.shape.size() != 3)
        throw dimension_error("conv_transpose2d: input must be HxWxC, got " +
                              xv.shape_str());
      if (kernel.value.shape.size() != 4 || kernel.value.shape[0] != 4 ||
          kernel.value.shape[1] != 4)
        throw dimension_error(
            "conv_transpose2d: kernel must be 4x4xCinxCout, got " +
            kernel.value.shape_str());
      if (kernel.value.shape[2] != xv.shape[2])
        throw dimension_error("conv_transpose2d: input channels " +
                              xv.shape_str() + " vs kernel " +
                              kernel.value.shape_str());
      if (bias.value.size() != kernel.value.shape[3])
        throw dimension_error("conv_transpose2d: bias " +
                              bias.value.shape_str() +
                              " does not match kernel " +
                              kernel.value.shape_str());
    }
    std::size_t h = nodes_[x.id].value.shape[0];
    std::size_t w = nodes_[x.id].value.shape[1];
    std::size_t ci = nodes_[x.id].value.shape[2];
    std::size_t co = kernel.value.shape[3];
    std::size_t oh = 2 * h, ow = 2 * w;
    Var yv = alloc_node({oh, ow, co});
    {
      const Tensor& xv = nodes_[x.id].value;
      Tensor& out = nodes_[yv.id].value;
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx)
          for (std::size_t c = 0; c < co; ++c)
            out[(y * ow + xx) * co + c] = bias.value[c];
      for (std::size_t iy = 0; iy < h; ++iy)
        for (std::size_t ix = 0; ix < w; ++ix)
          for (std::size_t ky = 0; ky < 4; ++ky) {
            std::ptrdiff_t oy = 2 * static_cast<std::ptrdiff_t>(iy) + ky - 1;
            if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(oh)) continue;
            for (std::size_t kx = 0; kx < 4; ++kx) {
              std::ptrdiff_t ox = 2 * static_cast<std::ptrdiff_t>(ix) + kx - 1;
              if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(ow)) continue;
              const double* in = &xv.data[(iy * w + ix) * ci];
              double* op = &out.data[(oy * ow + ox) * co];
              const double* kp = &kernel.value.data[((ky * 4 + kx) * ci) * co];
              for (std::size_t c = 0; c < ci; ++c)
                for (std::size_t o = 0; o < co; ++o)
                  op[o] += in[c] * kp[c * co + o];
            }
          }
    }
    Tape* self = this;
    nodes_[yv.id].back.set(
        [self, x, pk = &kernel, pbias = &bias, h, w, ci, co](Tensor& g) {
          std::size_t oh = 2 * h, ow = 2 * w;
          Tensor& xg = self->nodes_[x.id].grad;
          const Tensor& xv = self->nodes_[x.id].value;
          for (std::size_t iy = 0; iy < h; ++iy)
            for (std::size_t ix = 0; ix < w; ++ix)
              for (std::size_t ky = 0; ky < 4; ++ky) {
                std::ptrdiff_t oy =
                    2 * static_cast<std::ptrdiff_t>(iy) + ky - 1;
                if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(oh)) continue;
                for (std::size_t kx = 0; kx < 4; ++kx) {
                  std::ptrdiff_t ox =
                      2 * static_cast<std::ptrdiff_t>(ix) + kx - 1;
                  if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(ow))
                    continue;
                  const double* gp = &g.data[(oy * ow + ox) * co];
                  const double* kp =
                      &pk->value.data[((ky * 4 + kx) * ci) * co];
                  double* xp = &xg.data[(iy * w + ix) * ci];
                  const double* in = &xv.data[(iy * w + ix) * ci];
                  for (std::size_t c = 0; c < ci; ++c) {
                    double acc = 0.0;
                    for (std::size_t o = 0; o < co; ++o)
                      acc += kp[c * co + o] * gp[o];
                    xp[c] += acc;
                  }
                  if (self->param_grads_) {
                    double* kg = &pk->grad.data[((ky * 4 + kx) * ci) * co];
                    for (std::size_t c = 0; c < ci; ++c)
                      for (std::size_t o = 0; o < co; ++o)
                        kg[c * co + o] += in[c] * gp[o];
                  }
                }
              }
          if (self->param_grads_) {
            for (std::size_t y = 0; y < oh; ++y)
              for (std::size_t xx = 0; xx < ow; ++xx)
                for (std::size_t o = 0; o < co; ++o)
                  pbias->grad[o] += g[(y * ow + xx) * co + o];
          }
        });
    return yv;
  }

  // Strided convolution, kernel [k,k,c_in,c_out], symmetric zero padding.
  Var conv2d(Var x, Param& kernel, Param& bias, std::size_t stride,
             std::size_t pad) {
    {
      const Tensor& xv = nodes_[x.id].value;
      if (xv.shape.size() != 3)
        throw dimension_error("conv2d: input must be HxWxC, got " +
                              xv.shape_str());
      if (kernel.value.shape.size() != 4)
        throw dimension_error("conv2d: kernel must be KxKxCinxCout, got " +
                              kernel.value.shape_str());
      if (kernel.value.shape[1] != kernel.value.shape[0] ||
          kernel.value.shape[2] != xv.shape[2])
        throw dimension_error("conv2d: input " + xv.shape_str() +
                              " vs kernel " + kernel.value.shape_str());
      if (xv.shape[0] + 2 * pad < kernel.value.shape[0] ||
          xv.shape[1] + 2 * pad < kernel.value.shape[0])
        throw dimension_error("conv2d: kernel larger than padded input");
    }
    std::size_t h = nodes_[x.id].value.shape[0];
    std::size_t w = nodes_[x.id].value.shape[1];
    std::size_t ci = nodes_[x.id].value.shape[2];
    std::size_t k = kernel.value.shape[0];
    std::size_t co = kernel.value.shape[3];
    std::size_t oh = (h + 2 * pad - k) / stride + 1;
    std::size_t ow = (w + 2 * pad - k) / stride + 1;
    Var yv = alloc_node({oh, ow, co});
    {
      const Tensor& xv = nodes_[x.id].value;
      Tensor& out = nodes_[yv.id].value;
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double* op = &out.data[(oy * ow + ox) * co];
          for (std::size_t o = 0; o < co; ++o) op[o] = bias.value[o];
          for (std::size_t ky = 0; ky < k; ++ky) {
            std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(stride * oy + ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(stride * ox + kx) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              const double* in = &xv.data[(iy * w + ix) * ci];
              const double* kp = &kernel.value.data[((ky * k + kx) * ci) * co];
              for (std::size_t c = 0; c < ci; ++c)
                for (std::size_t o = 0; o < co; ++o)
                  op[o] += in[c] * kp[c * co + o];
            }
          }
        }
    }
    Tape* self = this;
    nodes_[yv.id].back.set([self, x, pk = &kernel, pbias = &bias, h, w, ci, co,
                            k, stride, pad](Tensor& g) {
      std::size_t oh = g.shape[0], ow = g.shape[1];
      Tensor& xg = self->nodes_[x.id].grad;
      const Tensor& xv = self->nodes_[x.id].value;
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double* gp = &g.data[(oy * ow + ox) * co];
          for (std::size_t ky = 0; ky < k; ++ky) {
            std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(stride * oy + ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(stride * ox + kx) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              double* xp = &xg.data[(iy * w + ix) * ci];
              const double* in = &xv.data[(iy * w + ix) * ci];
              const double* kp = &pk->value.data[((ky * k + kx) * ci) * co];
              for (std::size_t c = 0; c < ci; ++c) {
                double acc = 0.0;
                for (std::size_t o = 0; o < co; ++o)
                  acc += kp[c * co + o] * gp[o];
                xp[c] += acc;
              }
              if (self->param_grads_) {
                double* kg = &pk->grad.data[((ky * k + kx) * ci) * co];
                for (std::size_t c = 0; c < ci; ++c)
                  for (std::size_t o = 0; o < co; ++o)
                    kg[c * co + o] += in[c] * gp[o];
              }
            }
          }
          if (self->param_grads_)
            for (std::size_t o = 0; o < co; ++o) pbias->grad[o] += gp[o];
        }
    });
    return yv;
  }

  // Per-channel scale and shift on the trailing dimension.
  Var scale_shift(Var x, Param& gamma, Param& beta) {
    {
      const Tensor& xv = nodes_[x.id].value;
      std::size_t c = xv.shape.back();
      if (gamma.value.size() != c || beta.value.size() != c)
        throw dimension_error(
            "scale_shift: channel params do not match input " +
            xv.shape_str());
    }
    std::size_t c = nodes_[x.id].value.shape.back();
    Var y = alloc_node(nodes_[x.id].value.shape);
    {
      const Tensor& xv = nodes_[x.id].value;
      Tensor& out = nodes_[y.id].value;
      for (std::size_t i = 0; i < xv.size(); ++i)
        out[i] = xv[i] * gamma.value[i % c] + beta.value[i % c];
    }
    Tape* self = this;
    nodes_[y.id].back.set(
        [self, x, pg = &gamma, pb = &beta, c](Tensor& g) {
          Tensor& xg = self->nodes_[x.id].grad;
          const Tensor& xv = self->nodes_[x.id].value;
          for (std::size_t i = 0; i < g.size(); ++i)
            xg[i] += pg->value[i % c] * g[i];
          if (self->param_grads_) {
            for (std::size_t i = 0; i < g.size(); ++i) {
              pg->grad[i % c] += xv[i] * g[i];
              pb->grad[i % c] += g[i];
            }
          }
        });
    return y;
  }

  /// Flat 1-D concatenation.
  Var concat(std::span<const Var> xs) {
    std::size_t n = 0;
    for (Var v : xs) n += nodes_[v.id].value.size();
    std::size_t list = alloc_list(xs);
    Var y = alloc_node({n});
    {
      Tensor& out = nodes_[y.id].value;
      std::size_t off = 0;
      for (Var v : xs) {
        const Tensor& t = nodes_[v.id].value;
        std::copy(t.data.begin(), t.data.end(), out.data.begin() + off);
        off += t.size();
      }
    }
    Tape* self = this;
    nodes_[y.id].back.set([self, list](Tensor& g) {
      std::size_t off = 0;
      for (Var v : self->lists_[list]) {
        Tensor& xg = self->nodes_[v.id].grad;
        for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += g[off + i];
        off += xg.size();
      }
    });
    return y;
  }

  /// Contiguous flat slice [offset, offset+len).
  Var slice(Var x, std::size_t offset, std::size_t len) {
    if (offset + len > nodes_[x.id].value.size())
      throw dimension_error("slice: range out of bounds for " +
                            nodes_[x.id].value.shape_str());
    Var y = alloc_node({len});
    {
      const Tensor& xv = nodes_[x.id].value;
      Tensor& out = nodes_[y.id].value;
      std::copy(xv.data.begin() + offset, xv.data.begin() + offset + len,
                out.data.begin());
    }
    Tape* self = this;
    nodes_[y.id].back.set([self, x, offset, len](Tensor& g) {
      Tensor& xg = self->nodes_[x.id].grad;
      for (std::size_t i = 0; i < len; ++i) xg[offset + i] += g[i];
    });
    return y;
  }

  /// Same data, new shape.
  Var reshape(Var x, std::vector<std::size_t> shape) {
    if (Tensor::element_count(shape) != nodes_[x.id].value.size())
      throw dimension_error("reshape: " + nodes_[x.id].value.shape_str() +
                            " cannot take the requested shape");
    Var y = alloc_node(shape);
    {
      const Tensor& xv = nodes_[x.id].value;
      Tensor& out = nodes_[y.id].value;
      std::copy(xv.data.begin(), xv.data.end(), out.data.begin());
    }
    Tape* self = this;
    nodes_[y.id].back.set([self, x](Tensor& g) {
      Tensor& xg = self->nodes_[x.id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i];
    });
    return y;
  }

  Var add(Var a, Var b) {
    check_same_shape(nodes_[a.id].value, nodes_[b.id].value, "add");
    Var y = alloc_node(nodes_[a.id].value.shape);
    {
      const Tensor& av = nodes_[a.id].value;
      const Tensor& bv = nodes_[b.id].value;
      Tensor& out = nodes_[y.id].value;
      for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    }
    Tape* self = this;
    nodes_[y.id].back.set([self, a, b](Tensor& g) {
      Tensor& ag = self->nodes_[a.id].grad;
      Tensor& bg = self->nodes_[b.id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ag[i] += g[i];
        bg[i] += g[i];
      }
    });
    return y;
  }

  Var scale(Var x, double c) {
    Var y = alloc_node(nodes_[x.id].value.shape);
    {
      const Tensor& xv = nodes_[x.id].value;
      Tensor& out = nodes_[y.id].value;
      for (std::size_t i = 0; i < xv.size(); ++i) out[i] = c * xv[i];
    }
    Tape* self = this;
    nodes_[y.id].back.set([self, x, c](Tensor& g) {
      Tensor& xg = self->nodes_[x.id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += c * g[i];
    });
    return y;
  }

  /// Scalar ||x||^2.
  Var sum_sq(Var x) {
    Var y = alloc_node({1});
    {
      const Tensor& xv = nodes_[x.id].value;
      double acc = 0.0;
      for (double v : xv.data) acc += v * v;
      nodes_[y.id].value[0] = acc;
    }
    Tape* self = this;
    nodes_[y.id].back.set([self, x](Tensor& g) {
      Tensor& xg = self->nodes_[x.id].grad;
      const Tensor& xv = self->nodes_[x.id].value;
      for (std::size_t i = 0; i < xv.size(); ++i) xg[i] += 2.0 * xv[i] * g[0];
    });
    return y;
  }

  /// Scalar sum over mask of m^2 (target - pred)^2. mask == nullptr means all
  /// visible. Entries with a zero mask are skipped entirely, so occluded
  /// target values -- however corrupted -- can never influence the result.
  /// The pointed-to buffers must outlive the tape.
  Var masked_sq_err(Var pred, const double* target, const double* mask) {
    Var y = alloc_node({1});
    {
      const Tensor& pv = nodes_[pred.id].value;
      double acc = 0.0;
      for (std::size_t i = 0; i < pv.size(); ++i) {
        double m = mask ? mask[i] : 1.0;
        if (m == 0.0) continue;
        double r = m * (target[i] - pv[i]);
        acc += r * r;
      }
      nodes_[y.id].value[0] = acc;
    }
    Tape* self = this;
    nodes_[y.id].back.set([self, pred, target, mask](Tensor& g) {
      Tensor& pg = self->nodes_[pred.id].grad;
      const Tensor& pv = self->nodes_[pred.id].value;
      for (std::size_t i = 0; i < pv.size(); ++i) {
        double m = mask ? mask[i] : 1.0;
        if (m == 0.0) continue;
        pg[i] += -2.0 * m * m * (target[i] - pv[i]) * g[0];
      }
    });
    return y;
  }

  Var masked_sq_err(Var pred, const Tensor& target, const Tensor* mask) {
    const Tensor& pv = nodes_[pred.id].value;
    if (pv.size() != target.size())
      throw dimension_error("masked_sq_err: prediction " + pv.shape_str() +
                            " vs target " + target.shape_str());
    if (mask && mask->size() != target.size())
      throw dimension_error("masked_sq_err: mask " + mask->shape_str() +
                            " vs target " + target.shape_str());
    return masked_sq_err(pred, target.data.data(),
                         mask ? mask->data.data() : nullptr);
  }

  /// Reverse sweep from a scalar loss. Single use per pass.
  void backward(Var loss) {
    if (backward_done_)
      throw state_error("backward called twice on the same tape");
    if (nodes_[loss.id].value.size() != 1)
      throw state_error("backward: loss must be scalar");
    backward_done_ = true;
    nodes_[loss.id].grad[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      if (nodes_[i].back) nodes_[i].back(nodes_[i].grad);
    }
  }

  std::size_t node_count() const { return live_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    detail::BackFn back;
  };

  /// Next node slot, reusing existing buffers when the shapes line up.
  /// Takes the shape by value: callers pass shapes living inside nodes_,
  /// which emplace_back may reallocate.
  Var alloc_node(std::vector<std::size_t> shape) {
    if (live_ == nodes_.size()) nodes_.emplace_back();
    Node& n = nodes_[live_];
    if (n.value.shape == shape) {
      n.grad.fill(0.0);
    } else {
      n.value = Tensor::zeros(shape);
      n.grad = Tensor::zeros(std::move(shape));
    }
    n.back.clear();
    return Var{live_++};
  }

  std::size_t alloc_list(std::span<const Var> xs) {
    if (lists_live_ == lists_.size()) lists_.emplace_back();
    lists_[lists_live_].assign(xs.begin(), xs.end());
    return lists_live_++;
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<Var>> lists_;
  std::size_t live_ = 0;
  std::size_t lists_live_ = 0;
  bool backward_done_ = false;
  bool param_grads_;
};

using Var = Tape::Var;

}  // namespace dyngen
