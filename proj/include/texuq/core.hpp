#pragma once

// Shared numeric types, error classes, seeded random streams and a small
// deterministic worker pool used by every other texuq header.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace texuq {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid user input: bad parameters, malformed files, unknown config keys.
class InputError : public Error {
public:
  using Error::Error;
};

/// A numerical procedure failed (non-convergence, singular system, ...).
class NumericalError : public Error {
public:
  using Error::Error;
};

/// Raised by the constitutive update when the step is too large to be
/// integrated; callers react by sub-stepping.
class StepSizeError : public NumericalError {
public:
  using NumericalError::NumericalError;
};

// ---------------------------------------------------------------------------
// Voigt notation: order (11, 22, 33, 12, 13, 23), engineering shear strains.
// ---------------------------------------------------------------------------

inline constexpr std::array<std::array<int, 2>, 6> kVoigtPairs{
    {{0, 0}, {1, 1}, {2, 2}, {0, 1}, {0, 2}, {1, 2}}};

inline Vec6 stress_to_voigt(const Mat3& s) {
  Vec6 v;
  for (int k = 0; k < 6; ++k) v[k] = s(kVoigtPairs[k][0], kVoigtPairs[k][1]);
  return v;
}

inline Mat3 voigt_to_stress(const Vec6& v) {
  Mat3 s;
  for (int k = 0; k < 6; ++k) {
    const auto [i, j] = kVoigtPairs[k];
    s(i, j) = v[k];
    s(j, i) = v[k];
  }
  return s;
}

/// Symmetric strain tensor to Voigt with doubled shear components.
inline Vec6 strain_to_voigt(const Mat3& e) {
  Vec6 v;
  for (int k = 0; k < 6; ++k) {
    const auto [i, j] = kVoigtPairs[k];
    v[k] = (i == j ? 1.0 : 2.0) * 0.5 * (e(i, j) + e(j, i));
  }
  return v;
}

/// Unit symmetric "strain direction" for Voigt slot k: the tensor whose
/// engineering-Voigt representation is the k-th unit vector.
inline Mat3 voigt_strain_basis(int k) {
  Mat3 d = Mat3::Zero();
  const auto [i, j] = kVoigtPairs[k];
  if (i == j) {
    d(i, i) = 1.0;
  } else {
    d(i, j) = 0.5;
    d(j, i) = 0.5;
  }
  return d;
}

inline Mat3 sym(const Mat3& a) { return 0.5 * (a + a.transpose()); }
inline Mat3 skew(const Mat3& a) { return 0.5 * (a - a.transpose()); }

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seedable, splittable random stream. Streams are never shared between
/// workers: derive an independent child with split(key) instead.
class RandomStream {
public:
  explicit RandomStream(std::uint64_t seed = 0) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  /// Child stream that depends only on (this seed, key), not on how many
  /// numbers were drawn from the parent.
  RandomStream split(std::uint64_t key) const {
    return RandomStream(splitmix64(seed_ ^ splitmix64(key + 0x632be59bd9b4e019ULL)));
  }

  /// Uniform in [0, 1).
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

/// Worker count from TEXUQ_WORKERS, falling back to `fallback`.
inline int workers_from_env(int fallback) {
  if (const char* env = std::getenv("TEXUQ_WORKERS")) {
    const int w = std::atoi(env);
    if (w > 0) return w;
  }
  return fallback;
}

/// Runs fn(i) for i in [0, n). Each index must write only to its own output
/// slot; reductions happen afterwards in index order so results do not depend
/// on the worker count. The first exception (lowest index) is rethrown.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t nw = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  pool.reserve(nw);
  for (std::size_t w = 0; w < nw; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += nw) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

inline std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> v(n);
  if (n == 1) {
    v[0] = a;
    return v;
  }
  for (std::size_t i = 0; i < n; ++i)
    v[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

/// Piecewise-linear interpolation of (xs, ys) at x; xs ascending. Values
/// outside the range are clamped to the end points.
inline double interp_linear(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  if (xs.empty()) throw InputError("interp_linear: empty table");
  if (x <= xs.front()) return ys.front();
  if (x >= xs.back()) return ys.back();
  const auto it = std::upper_bound(xs.begin(), xs.end(), x);
  const std::size_t i = static_cast<std::size_t>(it - xs.begin());
  const double t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
  return ys[i - 1] + t * (ys[i] - ys[i - 1]);
}

/// Latin-hypercube design on the box [lo, hi] (closed): each dimension is
/// split into n equal strata and every stratum receives exactly one point.
/// Degenerate dimensions (lo == hi) return lo exactly.
inline std::vector<std::vector<double>> latin_hypercube(const std::vector<double>& lo,
                                                        const std::vector<double>& hi,
                                                        std::size_t n, RandomStream& rng) {
  if (lo.size() != hi.size()) throw InputError("latin_hypercube: bound size mismatch");
  const std::size_t dim = lo.size();
  std::vector<std::vector<double>> pts(n, std::vector<double>(dim));
  std::vector<std::size_t> perm(n);
  for (std::size_t k = 0; k < dim; ++k) {
    if (lo[k] > hi[k]) throw InputError("latin_hypercube: lo > hi in dimension " + std::to_string(k));
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    for (std::size_t i = 0; i < n; ++i) {
      if (lo[k] == hi[k]) {
        pts[i][k] = lo[k];
        continue;
      }
      const double u = (static_cast<double>(perm[i]) + rng.uniform()) / static_cast<double>(n);
      pts[i][k] = std::clamp(lo[k] + (hi[k] - lo[k]) * u, lo[k], hi[k]);
    }
  }
  return pts;
}

}  // namespace texuq
