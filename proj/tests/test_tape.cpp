#include <catch2/catch_amalgamated.hpp>

#include "dyngen/tape.hpp"
#include "helpers.hpp"

using namespace dyngen;
using dyngen::test::central_diff;
using dyngen::test::rel_err;

namespace {

// Scalar function of a flat input vector through a tape-built graph; used to
// finite-difference every op.
template <typename Build>
double tape_scalar(const std::vector<double>& x, Build&& build) {
  Tape tape(false);
  Var in = tape.input(Tensor({x.size()}, x));
  Var out = build(tape, in);
  return tape.value(out)[0];
}

template <typename Build>
void check_input_grads(std::vector<double> x, Build&& build,
                       double tol = 1e-6) {
  Tape tape(true);
  Var in = tape.input(Tensor({x.size()}, x));
  Var out = build(tape, in);
  tape.backward(out);
  const Tensor& g = tape.grad(in);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double num = central_diff(
        [&](const std::vector<double>& p) { return tape_scalar(p, build); }, x,
        i);
    INFO("coordinate " << i);
    REQUIRE(rel_err(g[i], num) < tol);
  }
}

}  // namespace

TEST_CASE("affine forward matches a double-loop matmul") {
  Param w(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Param b(Tensor({2}, {0.5, -0.5}));
  Tape tape(false);
  Var x = tape.input(Tensor({3}, {1.0, -1.0, 2.0}));
  Var y = tape.affine(x, w, b);
  const Tensor& v = tape.value(y);
  REQUIRE(v[0] == Catch::Approx(1 * 1 + 2 * -1 + 3 * 2 + 0.5));
  REQUIRE(v[1] == Catch::Approx(4 * 1 + 5 * -1 + 6 * 2 - 0.5));
}

TEST_CASE("affine parameter gradients") {
  Param w(Tensor({2, 2}, {0.3, -0.2, 0.7, 0.1}));
  Param b(Tensor({2}, {0.0, 0.1}));
  Tensor xin({2}, {0.4, -1.2});
  Tape tape(true);
  Var x = tape.input(xin);
  Var loss = tape.sum_sq(tape.affine(x, w, b));
  tape.backward(loss);
  auto f = [&](const Tensor& wv, const Tensor& bv) {
    Param w2(wv), b2(bv);
    Tape t2(false);
    Var x2 = t2.input(xin);
    return t2.value(t2.sum_sq(t2.affine(x2, w2, b2)))[0];
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < w.value.size(); ++i) {
    Tensor wp = w.value, wm = w.value;
    wp[i] += h;
    wm[i] -= h;
    double num = (f(wp, b.value) - f(wm, b.value)) / (2 * h);
    REQUIRE(rel_err(w.grad[i], num) < 1e-6);
  }
  for (std::size_t i = 0; i < b.value.size(); ++i) {
    Tensor bp = b.value, bm = b.value;
    bp[i] += h;
    bm[i] -= h;
    double num = (f(w.value, bp) - f(w.value, bm)) / (2 * h);
    REQUIRE(rel_err(b.grad[i], num) < 1e-6);
  }
}

TEST_CASE("activations: values and gradients") {
  Tape tape(false);
  Var x = tape.input(Tensor({3}, {-1.0, 0.0, 2.0}));
  const Tensor& r = tape.value(tape.activation(x, Activation::relu));
  REQUIRE(r[0] == 0.0);
  REQUIRE(r[1] == 0.0);
  REQUIRE(r[2] == 2.0);
  const Tensor& t = tape.value(tape.activation(x, Activation::tanh));
  REQUIRE(t[0] == Catch::Approx(std::tanh(-1.0)));
  const Tensor& id = tape.value(tape.activation(x, Activation::identity));
  REQUIRE(id[2] == 2.0);

  for (Activation a :
       {Activation::identity, Activation::tanh, Activation::relu}) {
    check_input_grads({0.3, -0.7, 1.2, 0.9}, [a](Tape& tp, Var in) {
      return tp.sum_sq(tp.activation(in, a));
    });
  }
}

TEST_CASE("conv_transpose2d forward matches scatter-add oracle") {
  // 2x2x1 input, 1 output channel: compute the scatter-add by hand.
  SeededRng rng(3);
  Tensor xin = rng.standard_normal({2, 2, 1});
  Param kernel(rng.standard_normal({4, 4, 1, 1}));
  Param bias(Tensor({1}, {0.25}));
  Tape tape(false);
  Var x = tape.input(xin);
  const Tensor& out = tape.value(tape.conv_transpose2d(x, kernel, bias));
  REQUIRE(out.shape == std::vector<std::size_t>{4, 4, 1});
  Tensor expect = Tensor::full({4, 4, 1}, 0.25);
  for (int iy = 0; iy < 2; ++iy)
    for (int ix = 0; ix < 2; ++ix)
      for (int ky = 0; ky < 4; ++ky)
        for (int kx = 0; kx < 4; ++kx) {
          int oy = 2 * iy + ky - 1, ox = 2 * ix + kx - 1;
          if (oy < 0 || oy >= 4 || ox < 0 || ox >= 4) continue;
          expect[oy * 4 + ox] += xin[iy * 2 + ix] * kernel.value[ky * 4 + kx];
        }
  for (std::size_t i = 0; i < expect.size(); ++i)
    REQUIRE(out[i] == Catch::Approx(expect[i]));
}

TEST_CASE("conv_transpose2d gradients vs finite differences") {
  SeededRng rng(11);
  Param kernel(rng.standard_normal({4, 4, 2, 3}));
  Param bias(rng.standard_normal({3}));
  Tensor xin = rng.standard_normal({2, 2, 2});

  auto f = [&](const Tensor& xv, const Tensor& kv, const Tensor& bv) {
    Param k2(kv), b2(bv);
    Tape tp(false);
    Var x = tp.input(xv);
    return tp.value(tp.sum_sq(tp.conv_transpose2d(x, k2, b2)))[0];
  };

  Tape tape(true);
  Var x = tape.input(xin);
  tape.backward(tape.sum_sq(tape.conv_transpose2d(x, kernel, bias)));

  const double h = 1e-6;
  for (std::size_t i = 0; i < xin.size(); ++i) {
    Tensor xp = xin, xm = xin;
    xp[i] += h;
    xm[i] -= h;
    double num = (f(xp, kernel.value, bias.value) -
                  f(xm, kernel.value, bias.value)) / (2 * h);
    REQUIRE(rel_err(tape.grad(x)[i], num) < 1e-5);
  }
  for (std::size_t i = 0; i < kernel.value.size(); i += 7) {
    Tensor kp = kernel.value, km = kernel.value;
    kp[i] += h;
    km[i] -= h;
    double num =
        (f(xin, kp, bias.value) - f(xin, km, bias.value)) / (2 * h);
    REQUIRE(rel_err(kernel.grad[i], num) < 1e-5);
  }
  for (std::size_t i = 0; i < bias.value.size(); ++i) {
    Tensor bp = bias.value, bm = bias.value;
    bp[i] += h;
    bm[i] -= h;
    double num =
        (f(xin, kernel.value, bp) - f(xin, kernel.value, bm)) / (2 * h);
    REQUIRE(rel_err(bias.grad[i], num) < 1e-5);
  }
}

TEST_CASE("conv2d output shape and gradients") {
  SeededRng rng(17);
  Param kernel(rng.standard_normal({3, 3, 2, 2}));
  Param bias(rng.standard_normal({2}));
  Tensor xin = rng.standard_normal({5, 5, 2});

  Tape shape_tape(false);
  Var xs = shape_tape.input(xin);
  const Tensor& out =
      shape_tape.value(shape_tape.conv2d(xs, kernel, bias, 2, 1));
  REQUIRE(out.shape == std::vector<std::size_t>{3, 3, 2});

  auto f = [&](const Tensor& xv, const Tensor& kv) {
    Param k2(kv), b2(bias.value);
    Tape tp(false);
    Var x = tp.input(xv);
    return tp.value(tp.sum_sq(tp.conv2d(x, k2, b2, 2, 1)))[0];
  };
  Tape tape(true);
  Var x = tape.input(xin);
  tape.backward(tape.sum_sq(tape.conv2d(x, kernel, bias, 2, 1)));
  const double h = 1e-6;
  for (std::size_t i = 0; i < xin.size(); i += 5) {
    Tensor xp = xin, xm = xin;
    xp[i] += h;
    xm[i] -= h;
    double num = (f(xp, kernel.value) - f(xm, kernel.value)) / (2 * h);
    REQUIRE(rel_err(tape.grad(x)[i], num) < 1e-5);
  }
  for (std::size_t i = 0; i < kernel.value.size(); i += 5) {
    Tensor kp = kernel.value, km = kernel.value;
    kp[i] += h;
    km[i] -= h;
    double num = (f(xin, kp) - f(xin, km)) / (2 * h);
    REQUIRE(rel_err(kernel.grad[i], num) < 1e-5);
  }
}

TEST_CASE("scale_shift, concat, slice, reshape, add, scale gradients") {
  check_input_grads({0.5, -0.3, 0.8, 0.1}, [](Tape& tp, Var in) {
    Var a = tp.slice(in, 0, 2);
    Var b = tp.slice(in, 2, 2);
    std::vector<Var> parts{b, a};
    Var c = tp.concat(parts);
    Var r = tp.reshape(c, {2, 2});
    Var s = tp.add(r, r);
    return tp.sum_sq(tp.scale(s, -0.7));
  });

  SeededRng rng(2);
  Param gamma(rng.standard_normal({2})), beta(rng.standard_normal({2}));
  check_input_grads({0.5, -0.3, 0.8, 0.1}, [&](Tape& tp, Var in) {
    Var r = tp.reshape(in, {2, 2});
    return tp.sum_sq(tp.scale_shift(r, gamma, beta));
  });
}

TEST_CASE("masked_sq_err value and gradient; zero mask blocks corrupt targets") {
  std::vector<double> target{1.0, -1.0, 0.5};
  std::vector<double> mask{1.0, 0.0, 1.0};
  Tape tape(true);
  Var p = tape.input(Tensor({3}, {0.2, 100.0, 0.4}));
  Var e = tape.masked_sq_err(p, target.data(), mask.data());
  double expect = (1.0 - 0.2) * (1.0 - 0.2) + (0.5 - 0.4) * (0.5 - 0.4);
  REQUIRE(tape.value(e)[0] == Catch::Approx(expect));
  tape.backward(e);
  REQUIRE(tape.grad(p)[1] == 0.0);  // occluded coordinate sees no gradient

  // NaN in an occluded target slot must not leak into value or gradient.
  target[1] = std::numeric_limits<double>::quiet_NaN();
  Tape t2(true);
  Var p2 = t2.input(Tensor({3}, {0.2, 0.0, 0.4}));
  Var e2 = t2.masked_sq_err(p2, target.data(), mask.data());
  REQUIRE(t2.value(e2)[0] == Catch::Approx(expect));
  t2.backward(e2);
  REQUIRE(t2.grad(p2).all_finite());
  REQUIRE(t2.grad(p2)[1] == 0.0);
}

TEST_CASE("backward on a 2-layer MLP matches finite differences") {
  SeededRng rng(5);
  Param w1(rng.standard_normal({4, 3})), b1(rng.standard_normal({4}));
  Param w2(rng.standard_normal({2, 4})), b2(rng.standard_normal({2}));
  check_input_grads({0.1, -0.4, 0.9}, [&](Tape& tp, Var in) {
    Var h = tp.activation(tp.affine(in, w1, b1), Activation::tanh);
    return tp.sum_sq(tp.affine(h, w2, b2));
  });
}

TEST_CASE("backward misuse raises state errors") {
  Tape tape(false);
  Var x = tape.input(Tensor({2}, {1.0, 2.0}));
  Var s = tape.sum_sq(x);
  tape.backward(s);
  REQUIRE_THROWS_AS(tape.backward(s), state_error);

  Tape t2(false);
  Var y = t2.input(Tensor({2}, {1.0, 2.0}));
  REQUIRE_THROWS_AS(t2.backward(y), state_error);  // non-scalar loss
}

TEST_CASE("shape validation errors") {
  Tape tape(false);
  Var x = tape.input(Tensor({3}, {1, 2, 3}));
  Param w(Tensor::zeros({2, 4})), b(Tensor::zeros({2}));
  REQUIRE_THROWS_AS(tape.affine(x, w, b), dimension_error);
  REQUIRE_THROWS_AS(tape.slice(x, 2, 2), dimension_error);
  REQUIRE_THROWS_AS(tape.reshape(x, {2, 2}), dimension_error);
  Var y = tape.input(Tensor({2}, {1, 2}));
  REQUIRE_THROWS_AS(tape.add(x, y), dimension_error);
  Param k(Tensor::zeros({3, 3, 1, 1})), kb(Tensor::zeros({1}));
  REQUIRE_THROWS_AS(tape.conv_transpose2d(x, k, kb), dimension_error);
}

TEST_CASE("gradients accumulate linearly across reuse of a node") {
  // y = sum_sq(x) + sum_sq(x): gradient doubles.
  Tape tape(false);
  Tensor xin({2}, {0.7, -0.2});
  Var x = tape.input(xin);
  Var loss = tape.add(tape.sum_sq(x), tape.sum_sq(x));
  tape.backward(loss);
  REQUIRE(tape.grad(x)[0] == Catch::Approx(4.0 * 0.7));
  REQUIRE(tape.grad(x)[1] == Catch::Approx(4.0 * -0.2));
}
