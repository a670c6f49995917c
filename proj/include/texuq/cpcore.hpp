#pragma once

// Single-crystal elastoviscoplastic material point for FCC metals.
//
// Kinematics: F = Fe Fp with det(Fp) = 1. The problem is solved in the
// lattice (intermediate) frame: the sample-frame gradient is rotated into
// crystal axes, F_hat = R^T F R, with R the grain orientation.
//
//   Fp_new  = exp(sum_a dgamma_a s0_a (x) n0_a) Fp_old
//   Ee      = (Fe^T Fe - I) / 2,   S = C0 : Ee
//   tau_a   = s0_a . S . n0_a
//   gdot_a  = gdot0 (|tau_a - X_a| / tauc_a)^n sgn(tau_a - X_a)
//   tauc_a  = A G b (sqrt(rho_a) + B / L_a)
//   rho_dot = [C/b (sqrt(rho) + B/L) - D rho] |gdot|
//   X_dot   = E gdot - F X |gdot|
//
// All rates are integrated with backward Euler; the 12 slip increments are
// found with a damped Newton iteration.

#include "texuq/core.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <optional>
#include <sstream>

namespace texuq {

inline constexpr int kNumSlip = 12;
using Slip12 = Eigen::Matrix<double, kNumSlip, 1>;
using SlipMat = Eigen::Matrix<double, kNumSlip, kNumSlip>;

struct SlipSystem {
  Vec3 s0;      // unit slip direction, crystal frame
  Vec3 n0;      // unit slip-plane normal, crystal frame
  Mat3 schmid;  // s0 (x) n0
};

/// The 12 FCC {111}<110> systems, grouped by plane.
inline const std::array<SlipSystem, kNumSlip>& fcc_slip_systems() {
  static const std::array<SlipSystem, kNumSlip> systems = [] {
    const std::array<std::array<double, 6>, kNumSlip> raw{{
        {1, 1, 1, 0, 1, -1},  {1, 1, 1, 1, 0, -1},  {1, 1, 1, 1, -1, 0},
        {-1, 1, 1, 0, 1, -1}, {-1, 1, 1, 1, 0, 1},  {-1, 1, 1, 1, 1, 0},
        {1, -1, 1, 0, 1, 1},  {1, -1, 1, 1, 0, -1}, {1, -1, 1, 1, 1, 0},
        {1, 1, -1, 0, 1, 1},  {1, 1, -1, 1, 0, 1},  {1, 1, -1, 1, -1, 0},
    }};
    std::array<SlipSystem, kNumSlip> out;
    for (int a = 0; a < kNumSlip; ++a) {
      const Vec3 n = Vec3(raw[a][0], raw[a][1], raw[a][2]).normalized();
      const Vec3 s = Vec3(raw[a][3], raw[a][4], raw[a][5]).normalized();
      out[a] = {s, n, s * n.transpose()};
    }
    return out;
  }();
  return systems;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Constitutive constants. Units: MPa, 1/s, um, 1/um^2.
struct MaterialParams {
  double C11 = 204600.0;
  double C12 = 137700.0;
  double C44 = 126200.0;
  double gamma_dot_0 = 0.001;
  double n_exp = 20.0;
  double A_geo = 0.3;
  double G_shear = 77000.0;
  double b_burgers = 2.56e-4;
  double B_size = 430.0;
  double C_hard = 0.045;
  double D_soft = 2.0;
  double E_kin = 5000.0;
  double F_kin = 300.0;
  double rho_ssd_init = 10.0;

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v))
        throw InputError(std::string("MaterialParams.") + name + " must be positive");
    };
    auto non_negative = [](double v, const char* name) {
      if (!(v >= 0.0) || !std::isfinite(v))
        throw InputError(std::string("MaterialParams.") + name + " must be >= 0");
    };
    positive(C11, "C11");
    positive(C12, "C12");
    positive(C44, "C44");
    positive(gamma_dot_0, "gamma_dot_0");
    positive(A_geo, "A_geo");
    positive(G_shear, "G_shear");
    positive(b_burgers, "b_burgers");
    positive(C_hard, "C_hard");
    positive(rho_ssd_init, "rho_ssd_init");
    non_negative(B_size, "B_size");
    non_negative(D_soft, "D_soft");
    non_negative(E_kin, "E_kin");
    non_negative(F_kin, "F_kin");
    if (!(n_exp >= 1.0)) throw InputError("MaterialParams.n_exp must be >= 1");
  }

  /// A G b, the prefactor of the Taylor relation.
  double taylor_prefactor() const { return A_geo * G_shear * b_burgers; }
};

// ---------------------------------------------------------------------------
// Cubic elasticity
// ---------------------------------------------------------------------------

/// Fourth-rank cubic stiffness in the crystal frame:
/// C_ijkl = C12 d_ij d_kl + C44 (d_ik d_jl + d_il d_jk) + (C11 - C12 - 2 C44) d_ijkl.
class CubicElasticity {
public:
  CubicElasticity(double c11, double c12, double c44) : c11_(c11), c12_(c12), c44_(c44) {
    if (!(c44 > 0.0 && c11 > std::abs(c12) && c11 + 2.0 * c12 > 0.0))
      throw InputError("cubic elastic constants are not positive definite");
  }

  double operator()(int i, int j, int k, int l) const {
    const double dij = i == j, dkl = k == l, dik = i == k, djl = j == l, dil = i == l, djk = j == k;
    const double diag = (i == j && j == k && k == l) ? 1.0 : 0.0;
    return c12_ * dij * dkl + c44_ * (dik * djl + dil * djk) + (c11_ - c12_ - 2.0 * c44_) * diag;
  }

  /// C : E for a symmetric E.
  Mat3 contract(const Mat3& e) const {
    const double tr = e(0, 0) + e(1, 1) + e(2, 2);
    Mat3 s;
    for (int i = 0; i < 3; ++i) s(i, i) = (c11_ - c12_) * e(i, i) + c12_ * tr;
    s(0, 1) = s(1, 0) = c44_ * (e(0, 1) + e(1, 0));
    s(0, 2) = s(2, 0) = c44_ * (e(0, 2) + e(2, 0));
    s(1, 2) = s(2, 1) = c44_ * (e(1, 2) + e(2, 1));
    return s;
  }

  /// 6x6 Voigt matrix acting on engineering strains.
  Mat6 voigt() const {
    Mat6 m = Mat6::Zero();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m(i, j) = i == j ? c11_ : c12_;
    for (int i = 3; i < 6; ++i) m(i, i) = c44_;
    return m;
  }

  double zener_ratio() const { return 2.0 * c44_ / (c11_ - c12_); }
  double c11() const { return c11_; }
  double c12() const { return c12_; }
  double c44() const { return c44_; }

private:
  double c11_, c12_, c44_;
};

inline CubicElasticity elastic_tensor(const MaterialParams& p) {
  return CubicElasticity(p.C11, p.C12, p.C44);
}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

struct MaterialPointState {
  Mat3 orientation = Mat3::Identity();  // crystal -> sample rotation (constant)
  Mat3 Fp = Mat3::Identity();           // crystal frame
  Slip12 rho_ssd = Slip12::Constant(10.0);
  Slip12 X = Slip12::Zero();
  Slip12 L_mean = Slip12::Constant(20.0);
  Slip12 gamma_dot = Slip12::Zero();  // rates of the last converged step (warm start)
  Mat3 F = Mat3::Identity();          // total deformation gradient of the last step
};

/// Virgin state for a grain of the given orientation and diameter (um).
inline MaterialPointState initial_state(const MaterialParams& p,
                                        const Mat3& orientation = Mat3::Identity(),
                                        double grain_diameter = 20.0) {
  if (!(grain_diameter > 0.0)) throw InputError("grain diameter must be positive");
  MaterialPointState s;
  s.orientation = orientation;
  s.rho_ssd = Slip12::Constant(p.rho_ssd_init);
  s.L_mean = Slip12::Constant(grain_diameter);
  return s;
}

struct StressResult {
  Mat3 cauchy = Mat3::Zero();  // sample frame
  Mat3 pk2 = Mat3::Zero();     // intermediate (lattice) frame
  Mat6 tangent = Mat6::Zero(); // d(sigma)/d(eps), Voigt 11,22,33,12,13,23, engineering shear
};

// ---------------------------------------------------------------------------
// Pointwise constitutive pieces
// ---------------------------------------------------------------------------

inline Slip12 resolved_shear_stress(const Mat3& pk2) {
  Slip12 tau;
  const auto& sys = fcc_slip_systems();
  for (int a = 0; a < kNumSlip; ++a) tau[a] = sys[a].s0.dot(pk2 * sys[a].n0);
  return tau;
}

inline Slip12 critical_resolved_shear_stress(const MaterialPointState& st, const MaterialParams& p) {
  Slip12 tc;
  for (int a = 0; a < kNumSlip; ++a)
    tc[a] = p.taylor_prefactor() * (std::sqrt(st.rho_ssd[a]) + p.B_size / st.L_mean[a]);
  return tc;
}

/// Power-law slip rates. Throws StepSizeError when |tau - X| / tau_c exceeds
/// rss_cap on any system.
inline Slip12 slip_rates(const Slip12& tau, const MaterialPointState& st, const MaterialParams& p,
                         double rss_cap = 10.0) {
  const Slip12 tc = critical_resolved_shear_stress(st, p);
  Slip12 g;
  for (int a = 0; a < kNumSlip; ++a) {
    const double eff = tau[a] - st.X[a];
    const double r = std::abs(eff) / tc[a];
    if (r > rss_cap)
      throw StepSizeError("slip_rates: |tau - X| / tau_c = " + std::to_string(r) + " on system " +
                          std::to_string(a));
    g[a] = p.gamma_dot_0 * std::pow(r, p.n_exp) * (eff > 0.0 ? 1.0 : (eff < 0.0 ? -1.0 : 0.0));
  }
  return g;
}

namespace detail {

/// Backward-Euler update of sqrt(rho) for an absolute slip increment g:
/// s^2 (1 + D g) - (C/b) g s - (rho_old + (C/b)(B/L) g) = 0, positive root.
inline double sqrt_rho_update(double rho_old, double g, double L, const MaterialParams& p) {
  const double k = p.C_hard / p.b_burgers;
  const double a = 1.0 + p.D_soft * g;
  const double beta = k * g;
  const double gamma = rho_old + k * (p.B_size / L) * g;
  return (beta + std::sqrt(beta * beta + 4.0 * a * gamma)) / (2.0 * a);
}

/// d sqrt(rho_new) / d g from implicit differentiation of the update above.
inline double sqrt_rho_derivative(double s, double g, double L, const MaterialParams& p) {
  const double k = p.C_hard / p.b_burgers;
  const double num = k * s + k * p.B_size / L - p.D_soft * s * s;
  const double den = 2.0 * s * (1.0 + p.D_soft * g) - k * g;
  return num / den;
}

inline double back_stress_update(double x_old, double dgamma, const MaterialParams& p) {
  return (x_old + p.E_kin * dgamma) / (1.0 + p.F_kin * std::abs(dgamma));
}

}  // namespace detail

/// Backward-Euler hardening update for slip rates held over dt.
inline MaterialPointState evolve_state(const MaterialPointState& st, const Slip12& gamma_dot,
                                       double dt, const MaterialParams& p) {
  if (!(dt > 0.0)) throw InputError("evolve_state: dt must be > 0");
  MaterialPointState out = st;
  for (int a = 0; a < kNumSlip; ++a) {
    const double dg = gamma_dot[a] * dt;
    const double s = detail::sqrt_rho_update(st.rho_ssd[a], std::abs(dg), st.L_mean[a], p);
    if (!(s > 0.0) || !std::isfinite(s))
      throw StepSizeError("evolve_state: dislocation density would become non-positive");
    out.rho_ssd[a] = s * s;
    out.X[a] = detail::back_stress_update(st.X[a], dg, p);
  }
  out.gamma_dot = gamma_dot;
  return out;
}

// ---------------------------------------------------------------------------
// Implicit point integrator
// ---------------------------------------------------------------------------

struct IntegratorOptions {
  double newton_tol = 1e-10;  // on max |R_a| (slip)
  int max_iterations = 50;
  double line_search_factor = 0.5;
  double rss_cap = 10.0;
  int max_halvings = 12;      // minimum dt = dt / 2^max_halvings
  bool compute_tangent = true;
  double perturbation = 1e-7;
};

struct PointUpdate {
  StressResult stress;
  MaterialPointState state;
  int substeps = 1;
  int iterations = 0;
};

namespace detail {

struct Trial {
  Slip12 residual;
  Slip12 tau, eff, tauc, rate, sqrt_rho, X;
  Mat3 Fe, S, Ce, Fp_inv;
  bool overflow = false;
};

/// One sub-step solve in the crystal frame.
class IncrementSolver {
public:
  IncrementSolver(const MaterialParams& p, const CubicElasticity& c, const IntegratorOptions& o)
      : p_(p), c_(c), o_(o), sys_(fcc_slip_systems()) {}

  struct Converged {
    Slip12 dgamma;
    MaterialPointState state;
    Mat3 S, Fe;
    int iterations = 0;
  };

  /// Throws StepSizeError on non-convergence or overflow.
  Converged solve(const Mat3& F_hat, const MaterialPointState& st, double dt,
                  const std::optional<Slip12>& guess) const {
    const Mat3 Fp_old_inv = st.Fp.inverse();
    Slip12 dg = guess ? *guess : Slip12(st.gamma_dot * dt);
    Trial t = evaluate(F_hat, Fp_old_inv, st, dt, dg);
    if (t.overflow && (guess || !st.gamma_dot.isZero(0.0))) {
      dg.setZero();
      t = evaluate(F_hat, Fp_old_inv, st, dt, dg);
    }
    if (t.overflow) throw StepSizeError("elastic predictor exceeds the resolved-stress cap");

    int it = 0;
    while (t.residual.cwiseAbs().maxCoeff() >= o_.newton_tol) {
      if (++it > o_.max_iterations) throw StepSizeError("slip Newton iteration did not converge");
      const SlipMat J = jacobian(t, st, dt, dg);
      const Slip12 step = J.partialPivLu().solve(-t.residual);
      if (!step.allFinite()) throw StepSizeError("singular slip Jacobian");
      const double norm0 = t.residual.norm();
      double lambda = 1.0;
      for (;;) {
        const Slip12 dg_trial = dg + lambda * step;
        Trial trial = evaluate(F_hat, Fp_old_inv, st, dt, dg_trial);
        if (!trial.overflow && trial.residual.norm() < (1.0 - 1e-4 * lambda) * norm0) {
          dg = dg_trial;
          t = std::move(trial);
          break;
        }
        lambda *= o_.line_search_factor;
        if (lambda < 1e-8) throw StepSizeError("slip line search failed");
      }
    }

    Converged out;
    out.dgamma = dg;
    out.iterations = it;
    out.S = t.S;
    out.Fe = t.Fe;
    out.state = st;
    out.state.Fp = (t.Fp_inv).inverse();
    for (int a = 0; a < kNumSlip; ++a) {
      out.state.rho_ssd[a] = t.sqrt_rho[a] * t.sqrt_rho[a];
      out.state.X[a] = t.X[a];
    }
    out.state.gamma_dot = dg / dt;
    return out;
  }

private:
  Trial evaluate(const Mat3& F_hat, const Mat3& Fp_old_inv, const MaterialPointState& st, double dt,
                 const Slip12& dg) const {
    Trial t;
    Mat3 A = Mat3::Zero();
    for (int a = 0; a < kNumSlip; ++a) A += dg[a] * sys_[a].schmid;
    const Mat3 minusA = -A;
    const Mat3 expm = minusA.exp();
    t.Fp_inv = Fp_old_inv * expm;
    t.Fe = F_hat * t.Fp_inv;
    t.Ce = t.Fe.transpose() * t.Fe;
    t.S = c_.contract(0.5 * (t.Ce - Mat3::Identity()));
    const double atgb = p_.taylor_prefactor();
    for (int a = 0; a < kNumSlip; ++a) {
      const double g = std::abs(dg[a]);
      t.sqrt_rho[a] = sqrt_rho_update(st.rho_ssd[a], g, st.L_mean[a], p_);
      t.X[a] = back_stress_update(st.X[a], dg[a], p_);
      t.tauc[a] = atgb * (t.sqrt_rho[a] + p_.B_size / st.L_mean[a]);
      t.tau[a] = sys_[a].s0.dot(t.S * sys_[a].n0);
      t.eff[a] = t.tau[a] - t.X[a];
      const double r = std::abs(t.eff[a]) / t.tauc[a];
      if (!(r <= o_.rss_cap) || !(t.sqrt_rho[a] > 0.0)) {
        t.overflow = true;
        t.residual.setConstant(std::numeric_limits<double>::infinity());
        return t;
      }
      const double sgn = t.eff[a] > 0.0 ? 1.0 : (t.eff[a] < 0.0 ? -1.0 : 0.0);
      t.rate[a] = p_.gamma_dot_0 * std::pow(r, p_.n_exp) * sgn;
      t.residual[a] = dg[a] - dt * t.rate[a];
    }
    return t;
  }

  // Uses dFe/d(dgamma_b) ~ -Fe P_b (exact when the plastic increment commutes
  // with P_b); accuracy only affects the convergence rate.
  SlipMat jacobian(const Trial& t, const MaterialPointState& st, double dt, const Slip12& dg) const {
    SlipMat J = SlipMat::Identity();
    std::array<Mat3, kNumSlip> dS;
    for (int b = 0; b < kNumSlip; ++b) dS[b] = -c_.contract(sym(t.Ce * sys_[b].schmid));
    const double atgb = p_.taylor_prefactor();
    for (int a = 0; a < kNumSlip; ++a) {
      const double r = std::abs(t.eff[a]) / t.tauc[a];
      const double dgd_dtau = p_.n_exp * p_.gamma_dot_0 / t.tauc[a] * std::pow(r, p_.n_exp - 1.0);
      for (int b = 0; b < kNumSlip; ++b) {
        const double dtau = sys_[a].s0.dot(dS[b] * sys_[a].n0);
        J(a, b) -= dt * dgd_dtau * dtau;
      }
      const double sg = dg[a] > 0.0 ? 1.0 : (dg[a] < 0.0 ? -1.0 : 0.0);
      const double g = std::abs(dg[a]);
      const double dX = (p_.E_kin - p_.F_kin * t.X[a] * sg) / (1.0 + p_.F_kin * g);
      const double dtauc = atgb * sqrt_rho_derivative(t.sqrt_rho[a], g, st.L_mean[a], p_) * sg;
      const double dgd_dtauc = -p_.n_exp * t.rate[a] / t.tauc[a];
      J(a, a) -= dt * (-dgd_dtau * dX + dgd_dtauc * dtauc);
    }
    return J;
  }

  const MaterialParams& p_;
  const CubicElasticity& c_;
  const IntegratorOptions& o_;
  const std::array<SlipSystem, kNumSlip>& sys_;
};

struct SubstepRecord {
  double t0, t1;   // fractions of the step
  Slip12 dgamma;   // converged increment (warm start for replays)
};

struct PathResult {
  MaterialPointState state;
  Mat3 S, Fe;
  std::vector<SubstepRecord> path;
  int iterations = 0;
};

/// Adaptive bisection: try [t0, t1] in one go, otherwise split and compose.
// I + R^T (F - I) R keeps F = I exactly the identity
inline Mat3 to_crystal(const Mat3& F, const Mat3& Rt, const Mat3& R) {
  return Mat3::Identity() + Rt * (F - Mat3::Identity()) * R;
}

inline void integrate_adaptive(const IncrementSolver& solver, const Mat3& F0, const Mat3& F1,
                               const Mat3& Rt, const Mat3& R, double dt, double t0, double t1,
                               int depth, int max_depth, PathResult& acc) {
  const Mat3 Fs = F0 + t1 * (F1 - F0);
  const double h = (t1 - t0) * dt;
  try {
    auto c = solver.solve(to_crystal(Fs, Rt, R), acc.state, h, std::nullopt);
    acc.iterations += c.iterations;
    acc.path.push_back({t0, t1, c.dgamma});
    c.state.F = Fs;
    acc.state = std::move(c.state);
    acc.S = c.S;
    acc.Fe = c.Fe;
    return;
  } catch (const StepSizeError& e) {
    if (depth >= max_depth) {
      std::ostringstream msg;
      msg << "integrate_point: sub-stepping exhausted at dt = " << h << " (" << e.what()
          << "); rho_ssd max = " << acc.state.rho_ssd.maxCoeff()
          << ", |X| max = " << acc.state.X.cwiseAbs().maxCoeff()
          << ", det(F) = " << Fs.determinant();
      throw NumericalError(msg.str());
    }
  }
  const double tm = 0.5 * (t0 + t1);
  integrate_adaptive(solver, F0, F1, Rt, R, dt, t0, tm, depth + 1, max_depth, acc);
  integrate_adaptive(solver, F0, F1, Rt, R, dt, tm, t1, depth + 1, max_depth, acc);
}

/// Re-runs a recorded sub-step path for a perturbed end-point gradient.
inline PathResult replay(const IncrementSolver& solver, const Mat3& F0, const Mat3& F1,
                         const MaterialPointState& st, double dt,
                         const std::vector<SubstepRecord>& path) {
  const Mat3& R = st.orientation;
  const Mat3 Rt = R.transpose();
  PathResult acc;
  acc.state = st;
  for (const auto& rec : path) {
    const Mat3 Fs = F0 + rec.t1 * (F1 - F0);
    auto c = solver.solve(to_crystal(Fs, Rt, R), acc.state, (rec.t1 - rec.t0) * dt, rec.dgamma);
    c.state.F = Fs;
    acc.state = std::move(c.state);
    acc.S = c.S;
    acc.Fe = c.Fe;
  }
  return acc;
}

inline Mat3 cauchy_from(const Mat3& Fe, const Mat3& S, const Mat3& R) {
  const Mat3 sig_hat = Fe * S * Fe.transpose() / Fe.determinant();
  return sym(R * sig_hat * R.transpose());
}

}  // namespace detail

/// Advances one material point from state.F to F_new over dt.
inline PointUpdate integrate_point(const Mat3& F_new, const MaterialPointState& state, double dt,
                                   const MaterialParams& p, const IntegratorOptions& opt = {}) {
  if (!(dt > 0.0)) throw InputError("integrate_point: dt must be > 0");
  if (!(F_new.determinant() > 0.0)) throw InputError("integrate_point: det(F_new) must be > 0");
  const CubicElasticity c = elastic_tensor(p);
  const detail::IncrementSolver solver(p, c, opt);
  const Mat3& R = state.orientation;
  const Mat3 Rt = R.transpose();

  detail::PathResult base;
  base.state = state;
  detail::integrate_adaptive(solver, state.F, F_new, Rt, R, dt, 0.0, 1.0, 0, opt.max_halvings, base);

  PointUpdate out;
  out.substeps = static_cast<int>(base.path.size());
  out.iterations = base.iterations;
  out.stress.pk2 = base.S;
  out.stress.cauchy = detail::cauchy_from(base.Fe, base.S, R);

  if (opt.compute_tangent) {
    const double h = opt.perturbation;
    for (int k = 0; k < 6; ++k) {
      const Mat3 D = voigt_strain_basis(k);
      std::array<Mat3, 2> sig;
      for (int sgn = 0; sgn < 2; ++sgn) {
        const Mat3 Fp = (Mat3::Identity() + (sgn == 0 ? h : -h) * D) * F_new;
        detail::PathResult r;
        try {
          r = detail::replay(solver, state.F, Fp, state, dt, base.path);
        } catch (const StepSizeError&) {
          r.state = state;
          detail::integrate_adaptive(solver, state.F, Fp, Rt, R, dt, 0.0, 1.0, 0, opt.max_halvings, r);
        }
        sig[sgn] = detail::cauchy_from(r.Fe, r.S, R);
      }
      out.stress.tangent.col(k) = stress_to_voigt(sig[0] - sig[1]) / (2.0 * h);
    }
  }
  out.state = std::move(base.state);
  return out;
}

}  // namespace texuq
