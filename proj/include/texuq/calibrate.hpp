#pragma once

// Constitutive-parameter calibration against a reference stress-strain curve:
// RMS objective on a fixed Taylor population, Nelder-Mead in log-scaled box
// coordinates.

#include "texuq/polycrystal.hpp"

#include <map>
#include <numeric>
#include <string>

namespace texuq {

inline const std::map<std::string, double MaterialParams::*>& material_param_fields() {
  static const std::map<std::string, double MaterialParams::*> m{
      {"C11", &MaterialParams::C11},
      {"C12", &MaterialParams::C12},
      {"C44", &MaterialParams::C44},
      {"gamma_dot_0", &MaterialParams::gamma_dot_0},
      {"n_exp", &MaterialParams::n_exp},
      {"A_geo", &MaterialParams::A_geo},
      {"G_shear", &MaterialParams::G_shear},
      {"b_burgers", &MaterialParams::b_burgers},
      {"B_size", &MaterialParams::B_size},
      {"C_hard", &MaterialParams::C_hard},
      {"D_soft", &MaterialParams::D_soft},
      {"E_kin", &MaterialParams::E_kin},
      {"F_kin", &MaterialParams::F_kin},
      {"rho_ssd_init", &MaterialParams::rho_ssd_init},
  };
  return m;
}

inline double& material_param(MaterialParams& p, const std::string& name) {
  const auto& m = material_param_fields();
  const auto it = m.find(name);
  if (it == m.end()) throw InputError("unknown material parameter '" + name + "'");
  return p.*(it->second);
}

inline double material_param(const MaterialParams& p, const std::string& name) {
  return material_param(const_cast<MaterialParams&>(p), name);
}

struct ParameterBox {
  std::string name;
  double lo = 0.0;
  double hi = 0.0;
};

struct CalibrationSpec {
  std::vector<ParameterBox> free_parameters;
  StressStrainCurve reference;
  int max_evals = 300;
  double tolerance = 1e-3;  // MPa, spread of the simplex objective values
  MaterialParams base;      // fixed parameters and starting point

  static std::vector<ParameterBox> default_free(const MaterialParams& p = {}) {
    std::vector<ParameterBox> out;
    for (const char* n : {"rho_ssd_init", "C_hard", "D_soft", "E_kin", "F_kin"}) {
      const double v = material_param(p, n);
      out.push_back({n, v / 3.0, v * 3.0});
    }
    return out;
  }

  void validate() const {
    if (free_parameters.empty()) throw InputError("calibration: free parameter set is empty");
    for (const auto& b : free_parameters) {
      material_param(base, b.name);
      if (!(b.lo > 0.0 && b.lo < b.hi))
        throw InputError("calibration: box for " + b.name + " needs 0 < lo < hi (log scaling)");
    }
    reference.validate();
    if (reference.strain.size() < 2) throw InputError("calibration: reference curve needs >= 2 points");
    if (max_evals < 1) throw InputError("calibration: max_evals must be >= 1");
    if (!(tolerance >= 0.0)) throw InputError("calibration: tolerance must be >= 0");
  }
};

/// Simulation settings behind the objective.
struct CalibrationSimConfig {
  std::size_t n_grains = 40;
  std::uint64_t seed = 20240521;
  GrainSizeSpec grain_size;
  TextureWeights texture;  // all Random by default
  int n_steps = 40;
  double strain_rate = 1e-3;
  int workers = 1;
};

inline constexpr double kCalibrationPenalty = 1e6;

struct ObjectiveValue {
  double rms = 0.0;
  bool failed = false;
  std::string message;
};

/// Fixed population + loading derived from the reference strain grid.
class CalibrationObjective {
public:
  CalibrationObjective(const StressStrainCurve& reference, const CalibrationSimConfig& cfg)
      : reference_(reference), cfg_(cfg) {
    reference_.validate();
    RandomStream rng(cfg.seed);
    population_ = build_population(cfg.grain_size, cfg.n_grains, cfg.texture, rng);
    load_ = {reference_.strain.back(), cfg.strain_rate, cfg.n_steps, reference_.strain};
  }

  StressStrainCurve simulate(const MaterialParams& p) const {
    TaylorOptions opt;
    opt.workers = cfg_.workers;
    return run_tension_taylor(population_, p, load_, opt);
  }

  ObjectiveValue operator()(const MaterialParams& p) const {
    try {
      const auto c = simulate(p);
      double s = 0.0;
      for (std::size_t i = 0; i < c.stress.size(); ++i) s += std::pow(c.stress[i] - reference_.stress[i], 2);
      const double rms = std::sqrt(s / static_cast<double>(c.stress.size()));
      if (!std::isfinite(rms)) return {kCalibrationPenalty, true, "non-finite stress"};
      return {rms, false, {}};
    } catch (const Error& e) {
      return {kCalibrationPenalty, true, e.what()};
    }
  }

  const GrainPopulation& population() const { return population_; }
  const LoadingProgram& loading() const { return load_; }

private:
  StressStrainCurve reference_;
  CalibrationSimConfig cfg_;
  GrainPopulation population_;
  LoadingProgram load_;
};

inline double objective(const MaterialParams& p, const StressStrainCurve& reference,
                        const CalibrationSimConfig& cfg) {
  return CalibrationObjective(reference, cfg)(p).rms;
}

/// Curve produced by the calibration simulator itself, for ground-truth tests.
inline StressStrainCurve synthetic_reference(const MaterialParams& p, const std::vector<double>& strains,
                                             const CalibrationSimConfig& cfg) {
  StressStrainCurve grid{strains, std::vector<double>(strains.size(), 0.0)};
  return CalibrationObjective(grid, cfg).simulate(p);
}

struct TraceEntry {
  int evaluation = 0;
  std::vector<double> parameters;  // free parameters, physical units
  double error = 0.0;
  double best_so_far = 0.0;
  bool failed = false;
};

struct CalibrationResult {
  MaterialParams best;
  std::vector<double> best_free;
  double best_rms = kCalibrationPenalty;
  std::vector<TraceEntry> trace;
  int evaluations = 0;
  std::string stop_reason;
};

struct NelderMeadOptions {
  double initial_step = 0.15;  // in unit box coordinates
  int restarts = 1;
  double min_simplex_size = 1e-6;
};

/// Nelder-Mead on z in [0, 1]^n with p = lo (hi / lo)^z. Returns best seen.
inline CalibrationResult calibrate(const CalibrationSpec& spec, const CalibrationSimConfig& cfg,
                                   const NelderMeadOptions& nm = {}) {
  spec.validate();
  const CalibrationObjective obj(spec.reference, cfg);
  const std::size_t n = spec.free_parameters.size();
  using Vec = Eigen::VectorXd;

  Vec z_start(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) {
    const auto& b = spec.free_parameters[k];
    const double v = material_param(spec.base, b.name);
    z_start[static_cast<Eigen::Index>(k)] =
        v > 0.0 ? std::clamp(std::log(v / b.lo) / std::log(b.hi / b.lo), 0.0, 1.0) : 0.5;
  }
  // the starting coordinate maps back to the base value exactly
  auto to_params = [&](const Vec& z) {
    MaterialParams p = spec.base;
    for (std::size_t k = 0; k < n; ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      const auto& b = spec.free_parameters[k];
      const double base = material_param(spec.base, b.name);
      material_param(p, b.name) = z[i] == z_start[i] && base >= b.lo && base <= b.hi
                                      ? base
                                      : b.lo * std::pow(b.hi / b.lo, std::clamp(z[i], 0.0, 1.0));
    }
    return p;
  };
  auto free_values = [&](const MaterialParams& p) {
    std::vector<double> v;
    for (const auto& b : spec.free_parameters) v.push_back(material_param(p, b.name));
    return v;
  };

  CalibrationResult res;
  res.best = spec.base;
  bool any_ok = false;
  auto eval = [&](const Vec& z) -> double {
    const auto p = to_params(z);
    const auto v = obj(p);
    ++res.evaluations;
    if (!v.failed) any_ok = true;
    if (res.trace.empty() || v.rms < res.best_rms) {
      res.best_rms = v.rms;
      res.best = p;
    }
    res.trace.push_back({res.evaluations, free_values(p), v.rms, res.best_rms, v.failed});
    return v.rms;
  };
  auto budget_left = [&] { return res.evaluations < spec.max_evals; };

  Vec z0 = z_start;

  res.stop_reason = "max_evals";
  for (int round = 0; round <= nm.restarts && budget_left(); ++round) {
    std::vector<Vec> x{z0};
    std::vector<double> f{eval(z0)};
    for (std::size_t k = 0; k < n && budget_left(); ++k) {
      Vec z = z0;
      const auto i = static_cast<Eigen::Index>(k);
      z[i] = z[i] + nm.initial_step <= 1.0 ? z[i] + nm.initial_step : z[i] - nm.initial_step;
      x.push_back(z);
      f.push_back(eval(z));
    }
    if (x.size() < n + 1) break;
    if (!any_ok) throw NumericalError("calibration: every simplex vertex failed; widen or move the bounds");

    auto clamp01 = [](Vec z) { return z.cwiseMax(0.0).cwiseMin(1.0).eval(); };
    bool converged = false;
    while (budget_left()) {
      std::vector<std::size_t> order(n + 1);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return f[a] < f[b]; });
      std::vector<Vec> xs;
      std::vector<double> fs;
      for (auto i : order) {
        xs.push_back(x[i]);
        fs.push_back(f[i]);
      }
      x = std::move(xs);
      f = std::move(fs);
      double size = 0.0;
      for (std::size_t i = 1; i <= n; ++i) size = std::max(size, (x[i] - x[0]).cwiseAbs().maxCoeff());
      if (f[n] - f[0] <= spec.tolerance || size < nm.min_simplex_size) {
        converged = true;
        res.stop_reason = size < nm.min_simplex_size ? "simplex_size" : "objective_tolerance";
        break;
      }
      Vec c = Vec::Zero(static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) c += x[i] / static_cast<double>(n);
      const Vec xr = clamp01(c + (c - x[n]));
      const double fr = eval(xr);
      if (fr < f[0]) {
        if (!budget_left()) break;
        const Vec xe = clamp01(c + 2.0 * (c - x[n]));
        const double fe = eval(xe);
        if (fe < fr) x[n] = xe, f[n] = fe;
        else x[n] = xr, f[n] = fr;
      } else if (fr < f[n - 1]) {
        x[n] = xr, f[n] = fr;
      } else {
        if (!budget_left()) break;
        const bool outside = fr < f[n];
        const Vec xc = outside ? Vec(c + 0.5 * (xr - c)) : Vec(c + 0.5 * (x[n] - c));
        const double fc = eval(xc);
        if (fc < std::min(fr, f[n])) {
          x[n] = xc, f[n] = fc;
        } else {
          for (std::size_t i = 1; i <= n && budget_left(); ++i) {
            x[i] = x[0] + 0.5 * (x[i] - x[0]);
            f[i] = eval(x[i]);
          }
        }
      }
    }
    // restart around the best point with a fresh simplex
    const auto best = std::min_element(f.begin(), f.end()) - f.begin();
    z0 = x[static_cast<std::size_t>(best)];
    if (!converged && !budget_left()) break;
  }
  if (!any_ok) throw NumericalError("calibration: every evaluation failed; widen or move the bounds");
  res.best_free = free_values(res.best);
  return res;
}

}  // namespace texuq
