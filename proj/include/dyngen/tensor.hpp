#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dyngen {

// Error hierarchy shared across the library.
struct dimension_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct state_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major tensor of 64-bit reals.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (element_count(shape) != data.size())
      throw dimension_error("Tensor: shape/data size mismatch");
  }

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           std::multiplies<>());
  }

  static Tensor zeros(std::vector<std::size_t> s) {
    std::size_t n = element_count(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }

  static Tensor full(std::vector<std::size_t> s, double v) {
    std::size_t n = element_count(s);
    return Tensor(std::move(s), std::vector<double>(n, v));
  }

  std::size_t size() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* where) {
  if (!a.same_shape(b))
    throw dimension_error(std::string(where) + ": shape mismatch " +
                          a.shape_str() + " vs " + b.shape_str());
}

/// Counter-based deterministic RNG. The stream is a function of (seed, counter)
/// only, so identical seeds reproduce identical draws regardless of call sites.
/// Normal draws use Box-Muller on the counter stream.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0) : seed_(mix(seed ^ kGolden)) {}

  /// Independent sub-stream, e.g. one per training sequence.
  SeededRng derive(std::uint64_t stream) const {
    SeededRng r(0);
    r.seed_ = mix(seed_ ^ mix(stream + kGolden));
    return r;
  }

  std::uint64_t next_u64() {
    std::uint64_t z = seed_ + kGolden * ++counter_;
    return mix(z);
  }

  /// Uniform in [0,1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0,1] so the log is finite.
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  Tensor standard_normal(std::vector<std::size_t> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data) v = normal();
    return t;
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dyngen
