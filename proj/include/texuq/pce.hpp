#pragma once

// Polynomial chaos surrogate: orthonormal Legendre basis over a uniform box,
// least-squares coefficients by QR, moments, Sobol indices and validation.

#include "texuq/core.hpp"

#include <Eigen/QR>

#include <functional>
#include <string>
#include <vector>

namespace texuq {

/// Uniform inputs on a box. An input with min == max is frozen: it maps to
/// xi = 0 and basis terms involving it are dropped at fit time.
struct InputSpec {
  std::vector<double> min;
  std::vector<double> max;
  std::vector<std::string> names;  // optional

  std::size_t size() const { return min.size(); }
  bool frozen(std::size_t k) const { return max[k] == min[k]; }
  void validate() const {
    if (min.empty() || min.size() != max.size()) throw InputError("input spec: min/max size mismatch");
    if (!names.empty() && names.size() != min.size()) throw InputError("input spec: names size mismatch");
    for (std::size_t k = 0; k < min.size(); ++k)
      if (!(std::isfinite(min[k]) && std::isfinite(max[k]) && min[k] <= max[k]))
        throw InputError("input spec: invalid bounds for input " + name(k));
  }
  std::string name(std::size_t k) const { return names.empty() ? "x" + std::to_string(k + 1) : names[k]; }
};

using MultiIndex = std::vector<int>;

/// xi_k = 2 (raw_k - min_k) / (max_k - min_k) - 1.
inline Eigen::VectorXd scale_inputs(const std::vector<double>& raw, const InputSpec& spec) {
  if (raw.size() != spec.size())
    throw InputError("scale_inputs: expected " + std::to_string(spec.size()) + " inputs, got " +
                     std::to_string(raw.size()));
  Eigen::VectorXd xi(static_cast<Eigen::Index>(raw.size()));
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const double lo = spec.min[k], hi = spec.max[k];
    const double tol = 1e-9 * std::max(1.0, hi - lo);
    if (!(raw[k] >= lo - tol && raw[k] <= hi + tol))
      throw InputError("scale_inputs: " + spec.name(k) + " = " + std::to_string(raw[k]) + " outside [" +
                       std::to_string(lo) + ", " + std::to_string(hi) + "]");
    const auto i = static_cast<Eigen::Index>(k);
    xi[i] = spec.frozen(k) ? 0.0 : std::clamp(2.0 * (raw[k] - lo) / (hi - lo) - 1.0, -1.0, 1.0);
  }
  return xi;
}

/// Orthonormal Legendre values L~_0..L~_d at x (unit variance under U[-1, 1]).
inline std::vector<double> legendre_orthonormal(double x, int d) {
  std::vector<double> p(static_cast<std::size_t>(d) + 1);
  p[0] = 1.0;
  if (d >= 1) p[1] = x;
  for (int k = 1; k < d; ++k) p[k + 1] = ((2.0 * k + 1.0) * x * p[k] - k * p[k - 1]) / (k + 1.0);
  for (int k = 0; k <= d; ++k) p[k] *= std::sqrt(2.0 * k + 1.0);
  return p;
}

/// All multi-indices of total degree <= d, graded, lexicographically
/// descending within a grade (e1 before e2).
inline std::vector<MultiIndex> total_degree_indices(std::size_t n_inputs, int d) {
  if (d < 0) throw InputError("total_degree_indices: degree must be >= 0");
  if (n_inputs == 0) throw InputError("total_degree_indices: need at least one input");
  std::vector<MultiIndex> out;
  MultiIndex cur(n_inputs, 0);
  std::function<void(std::size_t, int)> rec = [&](std::size_t k, int left) {
    if (k + 1 == n_inputs) {
      cur[k] = left;
      out.push_back(cur);
      return;
    }
    for (int a = left; a >= 0; --a) {
      cur[k] = a;
      rec(k + 1, left - a);
    }
  };
  for (int g = 0; g <= d; ++g) rec(0, g);
  return out;
}

inline int total_degree(const MultiIndex& a) {
  int s = 0;
  for (int v : a) s += v;
  return s;
}

inline Eigen::RowVectorXd eval_basis(const Eigen::VectorXd& xi, const std::vector<MultiIndex>& indices) {
  int dmax = 0;
  for (const auto& a : indices)
    for (int v : a) dmax = std::max(dmax, v);
  std::vector<std::vector<double>> leg;
  for (Eigen::Index k = 0; k < xi.size(); ++k) leg.push_back(legendre_orthonormal(xi[k], dmax));
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(indices.size()));
  for (std::size_t j = 0; j < indices.size(); ++j) {
    if (indices[j].size() != static_cast<std::size_t>(xi.size()))
      throw InputError("eval_basis: multi-index dimension mismatch");
    double v = 1.0;
    for (std::size_t k = 0; k < indices[j].size(); ++k) v *= leg[k][static_cast<std::size_t>(indices[j][k])];
    row[static_cast<Eigen::Index>(j)] = v;
  }
  return row;
}

struct PceModel {
  InputSpec input_spec;
  int max_degree = 2;
  std::vector<MultiIndex> multi_indices;
  Eigen::MatrixXd coefficients;  // n_basis x n_outputs
  std::vector<double> strain_grid;

  std::size_t n_basis() const { return multi_indices.size(); }
  std::size_t n_outputs() const { return static_cast<std::size_t>(coefficients.cols()); }
};

struct PceSample {
  std::vector<double> inputs;  // raw
  std::vector<double> outputs;
};

struct FitResult {
  PceModel model;
  std::vector<double> residual_rms;  // per output, on the training rows
  double condition_estimate = 1.0;
};

inline Eigen::MatrixXd design_matrix(const std::vector<PceSample>& samples, const InputSpec& spec,
                                     const std::vector<MultiIndex>& indices) {
  Eigen::MatrixXd D(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < samples.size(); ++i)
    D.row(static_cast<Eigen::Index>(i)) = eval_basis(scale_inputs(samples[i].inputs, spec), indices);
  return D;
}

/// min ||D U - B|| per output column, via Householder QR of D.
inline FitResult fit(const std::vector<PceSample>& samples, const InputSpec& spec, int degree,
                     std::vector<double> strain_grid = {}) {
  spec.validate();
  if (samples.empty()) throw InputError("fit: no samples");
  const std::size_t nout = samples.front().outputs.size();
  for (const auto& s : samples)
    if (s.outputs.size() != nout) throw InputError("fit: samples do not share one output grid");
  if (strain_grid.empty()) {
    for (std::size_t k = 0; k < nout; ++k) strain_grid.push_back(static_cast<double>(k));
  } else if (strain_grid.size() != nout) {
    throw InputError("fit: strain grid does not match output length");
  }

  std::vector<MultiIndex> indices;
  for (auto& a : total_degree_indices(spec.size(), degree)) {
    bool ok = true;
    for (std::size_t k = 0; k < a.size(); ++k) ok = ok && (a[k] == 0 || !spec.frozen(k));
    if (ok) indices.push_back(std::move(a));
  }
  const auto M = samples.size(), P = indices.size();
  if (M <= P)
    throw InputError("fit: least squares needs M > P samples; have M = " + std::to_string(M) +
                     ", P = " + std::to_string(P) + " basis terms");

  const Eigen::MatrixXd D = design_matrix(samples, spec, indices);
  Eigen::MatrixXd B(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(nout));
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < nout; ++j)
      B(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = samples[i].outputs[j];
  if (!B.allFinite()) throw InputError("fit: non-finite outputs");

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(D);
  const Eigen::Index p = static_cast<Eigen::Index>(P);
  const auto rdiag = qr.matrixQR().diagonal().head(p).cwiseAbs();
  const double cond = rdiag.maxCoeff() / std::max(rdiag.minCoeff(), 1e-300);
  if (!(cond < 1e12))
    throw NumericalError("fit: design matrix is rank deficient (condition estimate " + std::to_string(cond) +
                         "); use more or better spread samples or a lower degree");

  FitResult res;
  res.condition_estimate = cond;
  res.model.input_spec = spec;
  res.model.max_degree = degree;
  res.model.multi_indices = std::move(indices);
  res.model.strain_grid = std::move(strain_grid);
  const Eigen::MatrixXd QtB = qr.householderQ().transpose() * B;
  res.model.coefficients =
      qr.matrixQR().topLeftCorner(p, p).triangularView<Eigen::Upper>().solve(QtB.topRows(p));
  if (!res.model.coefficients.allFinite()) throw NumericalError("fit: non-finite coefficients");
  const Eigen::MatrixXd R = D * res.model.coefficients - B;
  for (Eigen::Index j = 0; j < R.cols(); ++j)
    res.residual_rms.push_back(std::sqrt(R.col(j).squaredNorm() / static_cast<double>(M)));
  return res;
}

inline Eigen::VectorXd predict(const PceModel& m, const std::vector<double>& raw) {
  return (eval_basis(scale_inputs(raw, m.input_spec), m.multi_indices) * m.coefficients).transpose();
}

/// Prediction at already-scaled coordinates (used for surrogate sampling).
inline Eigen::VectorXd predict_scaled(const PceModel& m, const Eigen::VectorXd& xi) {
  return (eval_basis(xi, m.multi_indices) * m.coefficients).transpose();
}

struct Moments {
  std::vector<double> mean;
  std::vector<double> variance;
};

inline Moments moments(const PceModel& m) {
  Moments out;
  for (Eigen::Index j = 0; j < m.coefficients.cols(); ++j) {
    double mean = 0.0, var = 0.0;
    for (std::size_t a = 0; a < m.n_basis(); ++a) {
      const double c = m.coefficients(static_cast<Eigen::Index>(a), j);
      if (total_degree(m.multi_indices[a]) == 0) mean += c;
      else var += c * c;
    }
    out.mean.push_back(mean);
    out.variance.push_back(var);
  }
  return out;
}

struct SobolIndices {
  std::vector<double> first;  // per input
  std::vector<double> total;  // per input
  double variance = 0.0;
};

/// Coefficient-based Sobol indices for one output column.
inline SobolIndices sobol_indices(const PceModel& m, std::size_t output) {
  if (output >= m.n_outputs()) throw InputError("sobol_indices: output index out of range");
  const std::size_t n = m.input_spec.size();
  SobolIndices s;
  s.first.assign(n, 0.0);
  s.total.assign(n, 0.0);
  for (std::size_t a = 0; a < m.n_basis(); ++a) {
    const auto& idx = m.multi_indices[a];
    const double c2 = std::pow(m.coefficients(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(output)), 2);
    int active = 0;
    std::size_t last = 0;
    for (std::size_t k = 0; k < n; ++k)
      if (idx[k] > 0) {
        ++active;
        last = k;
        s.total[k] += c2;
      }
    if (active == 0) continue;
    s.variance += c2;
    if (active == 1) s.first[last] += c2;
  }
  const double mean_scale = std::abs(m.coefficients(0, static_cast<Eigen::Index>(output)));
  if (!(s.variance > 1e-28 * std::max(1.0, mean_scale * mean_scale)))
    throw NumericalError("sobol_indices: zero variance at output " + std::to_string(output) +
                         ", indices undefined");
  for (std::size_t k = 0; k < n; ++k) {
    s.first[k] = std::clamp(s.first[k] / s.variance, 0.0, 1.0);
    s.total[k] = std::clamp(s.total[k] / s.variance, 0.0, 1.0);
  }
  return s;
}

struct ValidationReport {
  std::vector<double> rmse;  // per output
  std::vector<double> r2;    // per output
  double rmse_mean = 0.0;
  double r2_min = 1.0;
  double r2_mean = 1.0;
};

/// RMSE and R^2 = 1 - SS_res / SS_tot per output. A predictor equal to the
/// held-out mean scores 0. When SS_tot = 0, R^2 is 1 if SS_res is at
/// rounding level and 0 otherwise.
inline ValidationReport validate(const PceModel& m, const std::vector<PceSample>& held_out) {
  if (held_out.size() < 2) throw InputError("validate: need at least 2 held-out samples");
  const std::size_t nout = m.n_outputs();
  std::vector<Eigen::VectorXd> pred;
  for (const auto& s : held_out) {
    if (s.outputs.size() != nout) throw InputError("validate: output length mismatch");
    pred.push_back(predict(m, s.inputs));
  }
  ValidationReport r;
  const double n = static_cast<double>(held_out.size());
  for (std::size_t j = 0; j < nout; ++j) {
    double mean = 0.0;
    for (const auto& s : held_out) mean += s.outputs[j] / n;
    double ss_res = 0.0, ss_tot = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < held_out.size(); ++i) {
      const double y = held_out[i].outputs[j];
      ss_res += std::pow(y - pred[i][static_cast<Eigen::Index>(j)], 2);
      ss_tot += std::pow(y - mean, 2);
      scale = std::max(scale, std::abs(y));
    }
    r.rmse.push_back(std::sqrt(ss_res / n));
    double r2;
    if (ss_tot > 1e-24 * std::max(1.0, scale * scale) * n) r2 = 1.0 - ss_res / ss_tot;
    else r2 = ss_res <= 1e-20 * std::max(1.0, scale * scale) * n ? 1.0 : 0.0;
    r.r2.push_back(r2);
  }
  r.rmse_mean = 0.0;
  r.r2_min = std::numeric_limits<double>::infinity();
  r.r2_mean = 0.0;
  for (std::size_t j = 0; j < nout; ++j) {
    r.rmse_mean += r.rmse[j] / static_cast<double>(nout);
    r.r2_mean += r.r2[j] / static_cast<double>(nout);
    r.r2_min = std::min(r.r2_min, r.r2[j]);
  }
  return r;
}

}  // namespace texuq
