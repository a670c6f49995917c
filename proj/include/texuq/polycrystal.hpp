#pragma once

// Grain populations, Taylor (iso-deformation) aggregates under uniaxial
// tension, offset yield/flow stresses and realization statistics.

#include "texuq/cpcore.hpp"
#include "texuq/orientations.hpp"

#include <optional>

namespace texuq {

struct GrainSizeSpec {
  double mean = 20.0;     // um
  double std = 8.0;       // um
  double min_cut = 4.0;   // um
  double max_cut = 36.0;  // um

  void validate() const {
    if (!(min_cut > 0.0 && min_cut <= mean && mean <= max_cut && std > 0.0))
      throw InputError("infeasible grain size cutoffs: need 0 < min_cut <= mean <= max_cut, std > 0");
  }

  /// mean +/- 2 std, lower cut floored at 2 um.
  static GrainSizeSpec with_default_cuts(double mean, double std) {
    return {mean, std, std::max(2.0, mean - 2.0 * std), mean + 2.0 * std};
  }
};

struct Grain {
  EulerAngles orientation;
  double volume_fraction = 1.0;
  double diameter = 20.0;  // um; also the mean slip distance
  Component component = Component::Random;
};

struct GrainPopulation {
  std::vector<Grain> grains;
  std::size_t size() const { return grains.size(); }
};

struct StressStrainCurve {
  std::vector<double> strain;  // engineering, ascending from 0
  std::vector<double> stress;  // engineering, MPa

  void validate() const {
    if (strain.empty() || strain.size() != stress.size())
      throw InputError("stress-strain curve: empty or mismatched columns");
    if (strain.front() != 0.0) throw InputError("stress-strain curve must start at zero strain");
    for (std::size_t i = 1; i < strain.size(); ++i)
      if (!(strain[i] > strain[i - 1])) throw InputError("curve strain must be strictly increasing");
  }
  double at(double e) const { return interp_linear(strain, stress, e); }
};

struct LoadingProgram {
  double target_strain = 0.04;
  double strain_rate = 1e-3;  // 1/s
  int n_steps = 80;
  std::vector<double> output_grid = linspace(0.0, 0.04, 101);

  double total_time() const { return target_strain / strain_rate; }

  void validate() const {
    if (!(target_strain >= 0.0 && strain_rate > 0.0 && n_steps >= 1))
      throw InputError("loading program: need target_strain >= 0, strain_rate > 0, n_steps >= 1");
    for (double e : output_grid)
      if (e < 0.0 || e > target_strain + 1e-15)
        throw InputError("loading program: output grid outside [0, target_strain]");
  }

  static LoadingProgram uniform(double target, int n_steps, std::size_t n_out,
                                double rate = 1e-3) {
    return {target, rate, n_steps, linspace(0.0, target, n_out)};
  }
};

/// Truncated-normal diameters, volume fractions proportional to d^3,
/// orientations from the texture mixture.
inline GrainPopulation build_population(const GrainSizeSpec& spec, std::size_t n_grains,
                                        const TextureWeights& w, RandomStream& rng,
                                        const TextureLibrary& lib = TextureLibrary::defaults()) {
  spec.validate();
  if (n_grains < 1) throw InputError("build_population: n_grains must be >= 1");
  GrainPopulation pop;
  pop.grains.resize(n_grains);
  for (auto& g : pop.grains) {
    int tries = 0;
    do {
      if (++tries > 1000000) throw InputError("grain size cutoffs reject almost every draw");
      g.diameter = rng.normal(spec.mean, spec.std);
    } while (g.diameter < spec.min_cut || g.diameter > spec.max_cut);
  }
  const auto draws = draw_grain_components(w, n_grains, rng, lib);
  double vol = 0.0;
  for (const auto& g : pop.grains) vol += g.diameter * g.diameter * g.diameter;
  for (std::size_t i = 0; i < n_grains; ++i) {
    auto& g = pop.grains[i];
    g.volume_fraction = g.diameter * g.diameter * g.diameter / vol;
    g.orientation = draws[i].orientation;
    g.component = draws[i].component;
  }
  return pop;
}

// ---------------------------------------------------------------------------
// Mixed-control uniaxial driver
// ---------------------------------------------------------------------------

struct UniaxialControl {
  double tol_rel = 1e-5;     // on max lateral stress relative to |sigma_11|
  double tol_abs = 1e-6;     // MPa
  int max_iterations = 30;
  double fd_step = 1e-7;     // perturbation of F components for the Jacobian
  int max_halvings = 8;
};

using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat5 = Eigen::Matrix<double, 5, 5>;

/// Symmetric F with F11 prescribed and y = (F22, F33, F12, F13, F23).
inline Mat3 uniaxial_F(double F11, const Vec5& y) {
  Mat3 F;
  F << F11, y[2], y[3],
       y[2], y[0], y[4],
       y[3], y[4], y[1];
  return F;
}

inline Vec5 lateral_stress(const Mat3& s) {
  return {s(1, 1), s(2, 2), s(0, 1), s(0, 2), s(1, 2)};
}

inline Mat3 first_piola(const Mat3& cauchy, const Mat3& F) {
  return F.determinant() * cauchy * F.inverse().transpose();
}

/// Aggregate concept used by the driver:
///   Mat3 evaluate(const Mat3& F, double dt)  -- trial average Cauchy stress
///                                              from the committed state
///   void commit()                           -- accept the last evaluate()
template <class Aggregate>
class UniaxialTensionDriver {
public:
  UniaxialTensionDriver(Aggregate& agg, UniaxialControl ctl = {}) : agg_(agg), ctl_(ctl) {
    y_.setZero();
    y_[0] = y_[1] = 1.0;
    y_prev_ = y_;
  }

  struct StepResult {
    Mat3 F;
    Mat3 cauchy;
    double P11;
    int evaluations;
  };

  /// Advances to the given F11 over dt, halving on failure.
  StepResult advance(double F11_new, double dt) { return advance_impl(F11_new, dt, 0); }

  double max_lateral_residual() const { return last_lateral_; }
  const Vec5& lateral_dofs() const { return y_; }

private:
  StepResult advance_impl(double F11_new, double dt, int depth) {
    try {
      return solve_step(F11_new, dt);
    } catch (const NumericalError& e) {
      if (depth >= ctl_.max_halvings) throw;
      have_jacobian_ = false;
      const double mid = 0.5 * (F11_ + F11_new);
      advance_impl(mid, 0.5 * dt, depth + 1);
      return advance_impl(F11_new, 0.5 * dt, depth + 1);
    }
  }

  StepResult solve_step(double F11_new, double dt) {
    // linear extrapolation of the lateral dofs in F11
    Vec5 y = y_;
    if (F11_ != F11_prev_) y += (y_ - y_prev_) * ((F11_new - F11_) / (F11_ - F11_prev_));
    int evals = 0;
    Mat3 sig = agg_.evaluate(uniaxial_F(F11_new, y), dt);
    ++evals;
    Vec5 r = lateral_stress(sig);
    bool fresh = false;
    int it = 0;
    auto tol = [&] { return std::max(ctl_.tol_abs, ctl_.tol_rel * std::abs(sig(0, 0))); };
    while (r.cwiseAbs().maxCoeff() > tol()) {
      if (++it > ctl_.max_iterations) throw NumericalError("uniaxial lateral-stress solve did not converge");
      if (!have_jacobian_) {
        for (int k = 0; k < 5; ++k) {
          Vec5 yp = y;
          yp[k] += ctl_.fd_step;
          J_.col(k) = (lateral_stress(agg_.evaluate(uniaxial_F(F11_new, yp), dt)) - r) / ctl_.fd_step;
          ++evals;
        }
        lu_.compute(J_);
        have_jacobian_ = true;
        fresh = true;
      }
      const Vec5 dy = lu_.solve(-r);
      const double r0 = r.cwiseAbs().maxCoeff();
      y += dy;
      sig = agg_.evaluate(uniaxial_F(F11_new, y), dt);
      ++evals;
      r = lateral_stress(sig);
      if (r.cwiseAbs().maxCoeff() > 0.5 * r0 && !fresh) have_jacobian_ = false;
      fresh = false;
    }
    agg_.commit();
    last_lateral_ = r.cwiseAbs().maxCoeff();
    y_prev_ = y_;
    F11_prev_ = F11_;
    y_ = y;
    F11_ = F11_new;
    const Mat3 F = uniaxial_F(F11_new, y);
    return {F, sig, first_piola(sig, F)(0, 0), evals};
  }

  Aggregate& agg_;
  UniaxialControl ctl_;
  Vec5 y_, y_prev_;
  double F11_ = 1.0, F11_prev_ = 1.0;
  Mat5 J_ = Mat5::Zero();
  Eigen::PartialPivLU<Mat5> lu_;
  bool have_jacobian_ = false;
  double last_lateral_ = 0.0;
};

/// Sub-sampled curve on the program's output grid.
inline StressStrainCurve resample_curve(const std::vector<double>& strain,
                                        const std::vector<double>& stress,
                                        const std::vector<double>& grid) {
  StressStrainCurve c;
  c.strain = grid;
  c.stress.reserve(grid.size());
  for (double e : grid) c.stress.push_back(interp_linear(strain, stress, e));
  return c;
}

/// Drives an aggregate through the loading program.
template <class Aggregate>
StressStrainCurve run_uniaxial(Aggregate& agg, const LoadingProgram& load, UniaxialControl ctl = {},
                               double* max_lateral_ratio = nullptr) {
  load.validate();
  if (load.target_strain == 0.0) return {{0.0}, {0.0}};
  UniaxialTensionDriver<Aggregate> drv(agg, ctl);
  const double dt = load.total_time() / load.n_steps;
  std::vector<double> strain{0.0}, stress{0.0};
  double worst = 0.0;
  for (int k = 1; k <= load.n_steps; ++k) {
    const double e = load.target_strain * k / load.n_steps;
    const auto r = drv.advance(1.0 + e, dt);
    strain.push_back(e);
    stress.push_back(r.P11);
    if (r.cauchy(0, 0) != 0.0)
      worst = std::max(worst, drv.max_lateral_residual() / std::abs(r.cauchy(0, 0)));
  }
  if (max_lateral_ratio) *max_lateral_ratio = worst;
  return resample_curve(strain, stress, load.output_grid);
}

// ---------------------------------------------------------------------------
// Taylor aggregate
// ---------------------------------------------------------------------------

struct TaylorOptions {
  int workers = 1;
  IntegratorOptions integrator = [] {
    IntegratorOptions o;
    o.compute_tangent = false;
    return o;
  }();
  UniaxialControl control;
};

class TaylorAggregate {
public:
  TaylorAggregate(const GrainPopulation& pop, const MaterialParams& p, const TaylorOptions& opt = {})
      : p_(p), opt_(opt) {
    p.validate();
    if (pop.grains.empty()) throw InputError("Taylor aggregate needs at least one grain");
    double total = 0.0;
    for (const auto& g : pop.grains) {
      states_.push_back(initial_state(p, euler_to_matrix(g.orientation), g.diameter));
      weights_.push_back(g.volume_fraction);
      total += g.volume_fraction;
    }
    for (double& w : weights_) w /= total;
    pending_ = states_;
    sigma_.resize(states_.size());
  }

  Mat3 evaluate(const Mat3& F, double dt) {
    parallel_for(states_.size(), opt_.workers, [&](std::size_t g) {
      try {
        auto u = integrate_point(F, states_[g], dt, p_, opt_.integrator);
        pending_[g] = std::move(u.state);
        sigma_[g] = u.stress.cauchy;
      } catch (const NumericalError& e) {
        throw NumericalError("grain " + std::to_string(g) + ": " + e.what());
      }
    });
    Mat3 avg = Mat3::Zero();
    for (std::size_t g = 0; g < states_.size(); ++g) avg += weights_[g] * sigma_[g];
    return avg;
  }

  void commit() { states_ = pending_; }

  const std::vector<MaterialPointState>& states() const { return states_; }

private:
  const MaterialParams& p_;
  TaylorOptions opt_;
  std::vector<MaterialPointState> states_, pending_;
  std::vector<double> weights_;
  std::vector<Mat3> sigma_;
};

inline StressStrainCurve run_tension_taylor(const GrainPopulation& pop, const MaterialParams& p,
                                            const LoadingProgram& load, const TaylorOptions& opt = {},
                                            double* max_lateral_ratio = nullptr) {
  TaylorAggregate agg(pop, p, opt);
  return run_uniaxial(agg, load, opt.control, max_lateral_ratio);
}

// ---------------------------------------------------------------------------
// Offset stresses
// ---------------------------------------------------------------------------

namespace detail {

inline std::optional<double> offset_intersection(const StressStrainCurve& c, double E, double offset) {
  double g_prev = c.stress[0] - E * (c.strain[0] - offset);
  for (std::size_t i = 1; i < c.strain.size(); ++i) {
    const double g = c.stress[i] - E * (c.strain[i] - offset);
    if (g_prev > 0.0 && g <= 0.0) {
      const double t = g_prev / (g_prev - g);
      return c.stress[i - 1] + t * (c.stress[i] - c.stress[i - 1]);
    }
    g_prev = g;
  }
  return std::nullopt;
}

}  // namespace detail

/// Elastic slope fitted (through the origin) on the points below 40 % of the
/// 0.2 %-offset stress estimate.
inline double elastic_slope(const StressStrainCurve& c) {
  c.validate();
  if (c.strain.size() < 3) throw InputError("curve too short to estimate an elastic slope");
  const double E0 = c.stress[1] / c.strain[1];
  const auto est = detail::offset_intersection(c, E0, 0.002);
  if (!est) throw NumericalError("no 0.2% offset intersection: curve never yields");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 1; i < c.strain.size(); ++i) {
    if (c.stress[i] >= 0.4 * *est) break;
    num += c.stress[i] * c.strain[i];
    den += c.strain[i] * c.strain[i];
  }
  return den > 0.0 ? num / den : E0;
}

/// Stress where the curve first meets the elastic line shifted by each offset.
inline std::vector<double> yield_and_flow_stress(const StressStrainCurve& c,
                                                 const std::vector<double>& offsets) {
  const double E = elastic_slope(c);
  std::vector<double> out;
  for (double off : offsets) {
    const auto s = detail::offset_intersection(c, E, off);
    if (!s) throw NumericalError("no intersection with the elastic line at offset " + std::to_string(off));
    out.push_back(*s);
  }
  return out;
}

inline const std::vector<double>& default_offsets() {
  static const std::vector<double> o{0.002, 0.01, 0.03};
  return o;
}

// ---------------------------------------------------------------------------
// Realization variability
// ---------------------------------------------------------------------------

struct RealizationRow {
  std::size_t grain_count = 0;
  std::vector<double> mean;                 // per offset
  std::vector<double> std;                  // per offset (sample std)
  std::vector<std::vector<double>> values;  // [realization][offset]
};

struct RealizationOptions {
  std::vector<double> offsets = default_offsets();
  bool identical_populations = false;
  int workers = 1;
};

inline std::vector<RealizationRow> realization_study(const GrainSizeSpec& spec,
                                                     const std::vector<std::size_t>& grain_counts,
                                                     std::size_t n_realizations, const MaterialParams& p,
                                                     const LoadingProgram& load, const RandomStream& rng,
                                                     const RealizationOptions& opt = {}) {
  if (n_realizations < 2) throw InputError("realization_study: need at least 2 realizations");
  std::vector<RealizationRow> rows;
  for (std::size_t count : grain_counts) {
    RealizationRow row;
    row.grain_count = count;
    row.values.resize(n_realizations);
    parallel_for(n_realizations, opt.workers, [&](std::size_t r) {
      RandomStream s = rng.split(count * 100003ULL + (opt.identical_populations ? 0 : r));
      const auto pop = build_population(spec, count, TextureWeights{}, s);
      const auto curve = run_tension_taylor(pop, p, load);
      row.values[r] = yield_and_flow_stress(curve, opt.offsets);
    });
    const std::size_t no = opt.offsets.size();
    row.mean.assign(no, 0.0);
    row.std.assign(no, 0.0);
    for (std::size_t k = 0; k < no; ++k) {
      for (const auto& v : row.values) row.mean[k] += v[k];
      row.mean[k] /= static_cast<double>(n_realizations);
      for (const auto& v : row.values) row.std[k] += (v[k] - row.mean[k]) * (v[k] - row.mean[k]);
      row.std[k] = std::sqrt(row.std[k] / static_cast<double>(n_realizations - 1));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace texuq
