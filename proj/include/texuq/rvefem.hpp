#pragma once

// Structured-grid nonlinear finite elements on voxelized polycrystals:
// trilinear hexahedra with 2x2x2 Gauss quadrature, total-Lagrangian
// kinematics (small-strain mode for debugging), Newton-Raphson on nodal
// displacements with a Jacobi-preconditioned conjugate-gradient solver.

#include "texuq/polycrystal.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>

#include <functional>

namespace texuq {

// ---------------------------------------------------------------------------
// Voxel mesh
// ---------------------------------------------------------------------------

struct GrainSeeds {
  double edge_length = 40.0;     // um
  std::vector<Vec3> positions;   // inside [0, edge]^3
  std::vector<double> diameters; // um, also the voronoi weights
  std::size_t size() const { return positions.size(); }
};

inline GrainSeeds generate_seeds(std::size_t n_grains, double edge_length, const GrainSizeSpec& spec,
                                 RandomStream& rng) {
  if (n_grains < 1) throw InputError("generate_seeds: need at least one grain");
  if (!(edge_length > 0.0)) throw InputError("generate_seeds: edge length must be positive");
  const auto pop = build_population(spec, n_grains, TextureWeights{}, rng);
  GrainSeeds s;
  s.edge_length = edge_length;
  for (std::size_t g = 0; g < n_grains; ++g) {
    s.positions.emplace_back(rng.uniform(0.0, edge_length), rng.uniform(0.0, edge_length),
                             rng.uniform(0.0, edge_length));
    s.diameters.push_back(pop.grains[g].diameter);
  }
  return s;
}

struct VoxelMesh {
  int n = 2;                  // elements per edge
  double edge_length = 40.0;  // um
  std::size_t n_grains = 1;
  std::vector<int> grain_id;  // size n^3, x fastest

  double element_size() const { return edge_length / n; }
  std::size_t num_elements() const { return static_cast<std::size_t>(n) * n * n; }
  std::size_t num_nodes() const { return static_cast<std::size_t>(n + 1) * (n + 1) * (n + 1); }
  std::size_t element_index(int i, int j, int k) const {
    return static_cast<std::size_t>(i + n * (j + n * k));
  }
  std::size_t node_index(int i, int j, int k) const {
    return static_cast<std::size_t>(i + (n + 1) * (j + (n + 1) * k));
  }
  /// Nodes of element (i, j, k) in the usual hexahedron order.
  std::array<std::size_t, 8> element_nodes(std::size_t e) const {
    const int i = static_cast<int>(e % n), j = static_cast<int>((e / n) % n), k = static_cast<int>(e / (n * n));
    return {node_index(i, j, k),         node_index(i + 1, j, k),     node_index(i + 1, j + 1, k),
            node_index(i, j + 1, k),     node_index(i, j, k + 1),     node_index(i + 1, j, k + 1),
            node_index(i + 1, j + 1, k + 1), node_index(i, j + 1, k + 1)};
  }
  std::vector<std::size_t> elements_per_grain() const {
    std::vector<std::size_t> c(n_grains, 0);
    for (int g : grain_id) ++c[static_cast<std::size_t>(g)];
    return c;
  }
  double mean_elements_per_grain() const {
    return static_cast<double>(num_elements()) / static_cast<double>(n_grains);
  }
  std::size_t empty_grains() const {
    std::size_t e = 0;
    for (auto c : elements_per_grain()) e += (c == 0);
    return e;
  }
  /// Diameter of the sphere with the grain's voxel volume.
  std::vector<double> equivalent_diameters() const {
    const double v = std::pow(element_size(), 3);
    std::vector<double> d;
    for (auto c : elements_per_grain()) d.push_back(std::cbrt(6.0 * static_cast<double>(c) * v / kPi));
    return d;
  }
};

/// Multiplicatively weighted Voronoi assignment: each voxel centre goes to
/// the seed minimizing |x - s_i| / d_i. May leave grains empty.
inline VoxelMesh voxelize_seeds(const GrainSeeds& seeds, int n_elem_per_edge) {
  if (n_elem_per_edge < 2) throw InputError("voxelize: need at least 2 elements per edge");
  VoxelMesh m;
  m.n = n_elem_per_edge;
  m.edge_length = seeds.edge_length;
  m.n_grains = seeds.size();
  m.grain_id.resize(m.num_elements());
  const double h = m.element_size();
  for (int k = 0; k < m.n; ++k)
    for (int j = 0; j < m.n; ++j)
      for (int i = 0; i < m.n; ++i) {
        const Vec3 x((i + 0.5) * h, (j + 0.5) * h, (k + 0.5) * h);
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t g = 0; g < seeds.size(); ++g) {
          const double d = (x - seeds.positions[g]).norm() / seeds.diameters[g];
          if (d < best_d) {
            best_d = d;
            best = static_cast<int>(g);
          }
        }
        m.grain_id[m.element_index(i, j, k)] = best;
      }
  return m;
}

/// Seeds plus voxelization. Seeds of grains left empty are moved onto voxel
/// centres held by multi-voxel grains (at zero distance they win that voxel);
/// up to 10 such passes.
inline std::pair<VoxelMesh, GrainSeeds> voxelize_with_seeds(std::size_t n_grains, int n_elem_per_edge,
                                                             double edge_length, const GrainSizeSpec& spec,
                                                             RandomStream& rng) {
  if (n_grains > static_cast<std::size_t>(n_elem_per_edge) * n_elem_per_edge * n_elem_per_edge)
    throw InputError("voxelize: more grains than voxels");
  auto seeds = generate_seeds(n_grains, edge_length, spec, rng);
  auto mesh = voxelize_seeds(seeds, n_elem_per_edge);
  const double h = mesh.element_size();
  for (int attempt = 0; attempt < 10; ++attempt) {
    auto count = mesh.elements_per_grain();
    std::vector<std::size_t> donors;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e)
      if (count[static_cast<std::size_t>(mesh.grain_id[e])] > 1) donors.push_back(e);
    bool moved = false;
    for (std::size_t g = 0; g < n_grains; ++g) {
      if (count[g] > 0 || donors.empty()) continue;
      const std::size_t pick = static_cast<std::size_t>(rng.uniform() * static_cast<double>(donors.size()));
      const std::size_t e = donors[std::min(pick, donors.size() - 1)];
      const int i = static_cast<int>(e % mesh.n), j = static_cast<int>((e / mesh.n) % mesh.n),
                k = static_cast<int>(e / (mesh.n * mesh.n));
      seeds.positions[g] = Vec3((i + 0.5) * h, (j + 0.5) * h, (k + 0.5) * h);
      --count[static_cast<std::size_t>(mesh.grain_id[e])];
      ++count[g];
      donors.erase(donors.begin() + static_cast<std::ptrdiff_t>(std::min(pick, donors.size() - 1)));
      moved = true;
    }
    if (!moved) break;
    mesh = voxelize_seeds(seeds, n_elem_per_edge);
  }
  if (mesh.empty_grains() == 0) return {std::move(mesh), std::move(seeds)};
  throw NumericalError("voxelize: grains left empty after 10 seed relocations; use a finer mesh");
}

inline VoxelMesh voxelize(std::size_t n_grains, int n_elem_per_edge, double edge_length,
                          const GrainSizeSpec& spec, RandomStream& rng) {
  return voxelize_with_seeds(n_grains, n_elem_per_edge, edge_length, spec, rng).first;
}

// ---------------------------------------------------------------------------
// Element kinematics
// ---------------------------------------------------------------------------

using Mat9 = Eigen::Matrix<double, 9, 9>;
using Vec24 = Eigen::Matrix<double, 24, 1>;
using Mat24 = Eigen::Matrix<double, 24, 24>;

/// Shape-function gradients of a cubic element of size h at its 8 Gauss points.
struct HexQuadrature {
  std::array<std::array<Vec3, 8>, 8> grad;  // [gp][node], reference frame
  double weight;                            // |J| w per point = h^3 / 8

  explicit HexQuadrature(double h) : weight(h * h * h / 8.0) {
    static constexpr int corner[8][3] = {{-1, -1, -1}, {1, -1, -1}, {1, 1, -1}, {-1, 1, -1},
                                         {-1, -1, 1},  {1, -1, 1},  {1, 1, 1},  {-1, 1, 1}};
    const double g = 1.0 / std::sqrt(3.0);
    for (int q = 0; q < 8; ++q) {
      const double xi[3] = {corner[q][0] * g, corner[q][1] * g, corner[q][2] * g};
      for (int a = 0; a < 8; ++a) {
        const double c[3] = {static_cast<double>(corner[a][0]), static_cast<double>(corner[a][1]),
                             static_cast<double>(corner[a][2])};
        const double f0 = 1.0 + c[0] * xi[0], f1 = 1.0 + c[1] * xi[1], f2 = 1.0 + c[2] * xi[2];
        grad[q][a] = Vec3(c[0] * f1 * f2, f0 * c[1] * f2, f0 * f1 * c[2]) / 8.0 * (2.0 / h);
      }
    }
  }
};

/// dP/dF (index iJ -> 3 i + J) from the Cauchy stress and its spatial
/// perturbation tangent, for F-increments dF = l F with l = d + w:
///   d(sigma) = C : d + w sigma - sigma w,   tau = J sigma,   P = tau F^-T.
inline Mat9 material_tangent_from_spatial(const Mat3& sigma, const Mat6& c6, const Mat3& F) {
  const double J = F.determinant();
  const Mat3 Finv = F.inverse();
  const Mat3 FinvT = Finv.transpose();
  const Mat3 tau = J * sigma;
  Mat9 A;
  for (int k = 0; k < 3; ++k)
    for (int L = 0; L < 3; ++L) {
      Mat3 dF = Mat3::Zero();
      dF(k, L) = 1.0;
      const Mat3 l = dF * Finv;
      const Mat3 w = skew(l);
      const Mat3 dsig = voigt_to_stress(c6 * strain_to_voigt(sym(l))) + w * sigma - sigma * w;
      const Mat3 dtau = J * (dsig + sigma * l.trace());
      const Mat3 dP = dtau * FinvT - tau * l.transpose() * FinvT;
      for (int i = 0; i < 3; ++i)
        for (int jj = 0; jj < 3; ++jj) A(3 * i + jj, 3 * k + L) = dP(i, jj);
    }
  return A;
}

/// Small-strain counterpart: d(sigma_iJ)/d(grad u_kL) = C6(v(iJ), v(kL)).
inline Mat9 small_strain_tangent(const Mat6& c6) {
  static constexpr int v[3][3] = {{0, 3, 4}, {3, 1, 5}, {4, 5, 2}};
  Mat9 A;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k)
        for (int l = 0; l < 3; ++l) A(3 * i + j, 3 * k + l) = c6(v[i][j], v[k][l]);
  return A;
}

// ---------------------------------------------------------------------------
// Assembly and Newton solve
// ---------------------------------------------------------------------------

enum class Kinematics { TotalLagrangian, SmallStrain };

struct FeOptions {
  Kinematics kinematics = Kinematics::TotalLagrangian;
  int workers = 1;
  double residual_tol = 1e-8;   // ||r_free|| / ||reaction||
  double du_tol = 1e-13;        // ||du||_inf / edge length
  int max_newton = 30;
  int max_bisections = 6;
  double cg_tol = 1e-11;
  IntegratorOptions integrator;
};

/// Prescribed displacement components: (dof index = 3 node + component, value).
struct Boundary {
  std::vector<std::pair<std::size_t, double>> prescribed;
};

/// Per-Gauss-point states, stored element-major ([e * 8 + q]).
using GaussStates = std::vector<MaterialPointState>;

struct FeSolution {
  Eigen::VectorXd u;                // nodal displacements (um), 3 per node
  GaussStates states;
  std::vector<Mat3> cauchy;         // per Gauss point
  Eigen::VectorXd f_int;            // internal force, MPa um^2
  double reaction_loaded = 0.0;     // x-force on the x = edge face
  double reaction_opposite = 0.0;   // x-force on the x = 0 face
  double residual_norm = 0.0;       // on free dofs
  double reference_force = 0.0;
  int iterations = 0;
};

struct AssemblyResult {
  Eigen::VectorXd f_int;
  Eigen::SparseMatrix<double> K;  // full dof space, empty when not requested
  GaussStates states;
  std::vector<Mat3> cauchy;
};

/// Initial Gauss-point states from per-grain orientations and mean slip
/// distances.
inline GaussStates initial_gauss_states(const VoxelMesh& mesh, const MaterialParams& p,
                                        const std::vector<EulerAngles>& orientations,
                                        const std::vector<double>& slip_distance) {
  if (orientations.size() != mesh.n_grains || slip_distance.size() != mesh.n_grains)
    throw InputError("one orientation and slip distance per grain required");
  GaussStates s;
  s.reserve(mesh.num_elements() * 8);
  for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
    const auto g = static_cast<std::size_t>(mesh.grain_id[e]);
    const auto st = initial_state(p, euler_to_matrix(orientations[g]), slip_distance[g]);
    for (int q = 0; q < 8; ++q) s.push_back(st);
  }
  return s;
}

/// Internal force (and optionally tangent) for displacement u, integrating
/// every Gauss point from `states` over dt. f_int = sum_e int B^T P dV0.
inline AssemblyResult assemble(const VoxelMesh& mesh, const GaussStates& states, const MaterialParams& p,
                               const Eigen::VectorXd& u, double dt, bool want_tangent,
                               const FeOptions& opt = {}) {
  const std::size_t ne = mesh.num_elements();
  const HexQuadrature quad(mesh.element_size());
  std::vector<Vec24> fe(ne);
  std::vector<Mat24> ke(want_tangent ? ne : 0);
  AssemblyResult out;
  out.states.resize(states.size());
  out.cauchy.resize(states.size());
  IntegratorOptions iopt = opt.integrator;
  iopt.compute_tangent = want_tangent;

  parallel_for(ne, opt.workers, [&](std::size_t e) {
    const auto nodes = mesh.element_nodes(e);
    Vec24 f = Vec24::Zero();
    Mat24 k = Mat24::Zero();
    for (int q = 0; q < 8; ++q) {
      const auto& dN = quad.grad[q];
      Mat3 H = Mat3::Zero();  // displacement gradient du_i/dX_J
      for (int a = 0; a < 8; ++a)
        H += u.segment<3>(3 * static_cast<Eigen::Index>(nodes[a])) * dN[a].transpose();
      const bool small = opt.kinematics == Kinematics::SmallStrain;
      const Mat3 F = Mat3::Identity() + (small ? sym(H) : H);
      const std::size_t idx = e * 8 + static_cast<std::size_t>(q);
      if (!(F.determinant() > 0.0))
        throw NumericalError("element " + std::to_string(e) + ", gauss point " + std::to_string(q) +
                             ": inverted (det F <= 0)");
      PointUpdate up;
      try {
        up = integrate_point(F, states[idx], dt, p, iopt);
      } catch (const NumericalError& err) {
        throw NumericalError("element " + std::to_string(e) + ", gauss point " + std::to_string(q) +
                             ": " + err.what());
      }
      const Mat3& sig = up.stress.cauchy;
      const Mat3 P = small ? sig : first_piola(sig, F);
      for (int a = 0; a < 8; ++a) f.segment<3>(3 * a) += quad.weight * P * dN[a];
      if (want_tangent) {
        const Mat9 A = small ? small_strain_tangent(up.stress.tangent)
                             : material_tangent_from_spatial(sig, up.stress.tangent, F);
        for (int a = 0; a < 8; ++a)
          for (int b = 0; b < 8; ++b)
            for (int i = 0; i < 3; ++i)
              for (int kk = 0; kk < 3; ++kk) {
                double s = 0.0;
                for (int J = 0; J < 3; ++J)
                  for (int L = 0; L < 3; ++L) s += dN[a][J] * A(3 * i + J, 3 * kk + L) * dN[b][L];
                k(3 * a + i, 3 * b + kk) += quad.weight * s;
              }
      }
      out.states[idx] = std::move(up.state);
      out.cauchy[idx] = sig;
    }
    fe[e] = f;
    if (want_tangent) ke[e] = k;
  });

  // ordered reduction
  out.f_int = Eigen::VectorXd::Zero(3 * static_cast<Eigen::Index>(mesh.num_nodes()));
  std::vector<Eigen::Triplet<double>> trip;
  if (want_tangent) trip.reserve(ne * 576);
  for (std::size_t e = 0; e < ne; ++e) {
    const auto nodes = mesh.element_nodes(e);
    for (int a = 0; a < 8; ++a) {
      out.f_int.segment<3>(3 * static_cast<Eigen::Index>(nodes[a])) += fe[e].segment<3>(3 * a);
      if (!want_tangent) continue;
      for (int b = 0; b < 8; ++b)
        for (int i = 0; i < 3; ++i)
          for (int kk = 0; kk < 3; ++kk)
            trip.emplace_back(static_cast<int>(3 * nodes[a] + i), static_cast<int>(3 * nodes[b] + kk),
                              ke[e](3 * a + i, 3 * b + kk));
    }
  }
  if (want_tangent) {
    out.K.resize(out.f_int.size(), out.f_int.size());
    out.K.setFromTriplets(trip.begin(), trip.end());
  }
  return out;
}

inline std::vector<std::size_t> face_nodes_x(const VoxelMesh& m, bool far) {
  std::vector<std::size_t> out;
  const int i = far ? m.n : 0;
  for (int k = 0; k <= m.n; ++k)
    for (int j = 0; j <= m.n; ++j) out.push_back(m.node_index(i, j, k));
  return out;
}

/// u_x = 0 on x = 0, u_x = delta on x = edge; rigid modes removed at two
/// corner nodes. Lateral faces are traction free.
inline Boundary uniaxial_boundary(const VoxelMesh& m, double delta) {
  Boundary b;
  for (auto nd : face_nodes_x(m, false)) b.prescribed.emplace_back(3 * nd, 0.0);
  for (auto nd : face_nodes_x(m, true)) b.prescribed.emplace_back(3 * nd, delta);
  const auto o = m.node_index(0, 0, 0);
  b.prescribed.emplace_back(3 * o + 1, 0.0);
  b.prescribed.emplace_back(3 * o + 2, 0.0);
  b.prescribed.emplace_back(3 * m.node_index(0, m.n, 0) + 2, 0.0);
  return b;
}

/// All boundary nodes follow u = (F - I) X.
inline Boundary affine_boundary(const VoxelMesh& m, const Mat3& F) {
  Boundary b;
  const double h = m.element_size();
  for (int k = 0; k <= m.n; ++k)
    for (int j = 0; j <= m.n; ++j)
      for (int i = 0; i <= m.n; ++i) {
        if (i != 0 && j != 0 && k != 0 && i != m.n && j != m.n && k != m.n) continue;
        const Vec3 X(i * h, j * h, k * h);
        const Vec3 uu = (F - Mat3::Identity()) * X;
        const auto nd = m.node_index(i, j, k);
        for (int c = 0; c < 3; ++c) b.prescribed.emplace_back(3 * nd + c, uu[c]);
      }
  return b;
}

/// Newton-Raphson for one load step. `u_guess` is the starting field; where
/// its prescribed entries differ from `bc`, the first iterate is the tangent
/// predictor that carries the prescribed increment into the free dofs.
inline FeSolution solve_step(const VoxelMesh& mesh, const GaussStates& states, const MaterialParams& p,
                             const Boundary& bc, double dt, const Eigen::VectorXd& u_guess,
                             const FeOptions& opt = {}) {
  const Eigen::Index ndof = 3 * static_cast<Eigen::Index>(mesh.num_nodes());
  if (u_guess.size() != ndof) throw InputError("solve_step: displacement vector has wrong size");
  std::vector<int> free_index(static_cast<std::size_t>(ndof), 0);
  Eigen::VectorXd dp = Eigen::VectorXd::Zero(ndof);
  for (const auto& [dof, val] : bc.prescribed) {
    free_index[dof] = -1;
    dp[static_cast<Eigen::Index>(dof)] = val - u_guess[static_cast<Eigen::Index>(dof)];
  }
  int nfree = 0;
  for (auto& f : free_index)
    if (f == 0) f = nfree++;
    else f = -1;
  if (nfree == 0) throw InputError("solve_step: no free degrees of freedom");

  // symmetrized tangent restricted to the free dofs, solved by diagonal-preconditioned CG
  auto solve_free = [&](const Eigen::SparseMatrix<double>& K, const Eigen::VectorXd& rhs) {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(2 * static_cast<std::size_t>(K.nonZeros()));
    for (int c = 0; c < K.outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator itk(K, c); itk; ++itk) {
        const int fr = free_index[static_cast<std::size_t>(itk.row())];
        const int fc = free_index[static_cast<std::size_t>(itk.col())];
        if (fr < 0 || fc < 0) continue;
        trip.emplace_back(fr, fc, 0.5 * itk.value());
        trip.emplace_back(fc, fr, 0.5 * itk.value());
      }
    Eigen::SparseMatrix<double> Kf(nfree, nfree);
    Kf.setFromTriplets(trip.begin(), trip.end());
    Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper,
                             Eigen::DiagonalPreconditioner<double>>
        cg;
    cg.setTolerance(opt.cg_tol);
    cg.setMaxIterations(std::max<Eigen::Index>(1000, 4 * static_cast<Eigen::Index>(nfree)));
    cg.compute(Kf);
    if (cg.info() != Eigen::Success)
      throw NumericalError("FE tangent factorization failed: constraint deficiency (rigid-body mode?)");
    Eigen::VectorXd du = cg.solve(rhs);
    if (cg.info() != Eigen::Success || !du.allFinite())
      throw NumericalError("CG did not converge: singular tangent, check the boundary constraints");
    return du;
  };
  auto scatter = [&](Eigen::VectorXd& u, const Eigen::VectorXd& du_free, double alpha) {
    for (Eigen::Index d = 0; d < ndof; ++d) {
      const int fi = free_index[static_cast<std::size_t>(d)];
      if (fi >= 0) u[d] += alpha * du_free[fi];
    }
  };

  Eigen::VectorXd u = u_guess;
  auto as = assemble(mesh, states, p, u, dt, true, opt);
  if (dp.cwiseAbs().maxCoeff() > 0.0) {
    const Eigen::VectorXd g = as.f_int + as.K * dp;
    Eigen::VectorXd rhs(nfree);
    for (Eigen::Index d = 0; d < ndof; ++d) {
      const int fi = free_index[static_cast<std::size_t>(d)];
      if (fi >= 0) rhs[fi] = -g[d];
    }
    const Eigen::VectorXd du = solve_free(as.K, rhs);
    u += dp;
    scatter(u, du, 1.0);
    as = assemble(mesh, states, p, u, dt, true, opt);
  }

  FeSolution sol;
  const double force_floor = 1e-12 * p.C11 * std::pow(mesh.element_size(), 2);
  bool stagnated = false;
  for (int it = 0;; ++it) {
    Eigen::VectorXd r(nfree);
    double react2 = 0.0;
    for (Eigen::Index d = 0; d < ndof; ++d) {
      const int fi = free_index[static_cast<std::size_t>(d)];
      if (fi >= 0) r[fi] = -as.f_int[d];
      else react2 += as.f_int[d] * as.f_int[d];
    }
    sol.reference_force = std::max(std::sqrt(react2), force_floor);
    sol.residual_norm = r.norm();
    sol.iterations = it;
    const bool converged = sol.residual_norm <= opt.residual_tol * sol.reference_force ||
                           (stagnated && sol.residual_norm <= 1e2 * opt.residual_tol * sol.reference_force);
    if (converged || it >= opt.max_newton) {
      if (!converged)
        throw NumericalError("FE Newton did not converge: |r| = " + std::to_string(sol.residual_norm) +
                             ", reference " + std::to_string(sol.reference_force));
      sol.u = u;
      sol.states = std::move(as.states);
      sol.cauchy = std::move(as.cauchy);
      sol.f_int = std::move(as.f_int);
      for (auto nd : face_nodes_x(mesh, true)) sol.reaction_loaded += sol.f_int[3 * static_cast<Eigen::Index>(nd)];
      for (auto nd : face_nodes_x(mesh, false)) sol.reaction_opposite += sol.f_int[3 * static_cast<Eigen::Index>(nd)];
      return sol;
    }

    const Eigen::VectorXd du = solve_free(as.K, r);
    // backtrack while a trial field cannot be integrated
    double alpha = 1.0;
    for (int ls = 0;; ++ls) {
      Eigen::VectorXd trial = u;
      scatter(trial, du, alpha);
      try {
        as = assemble(mesh, states, p, trial, dt, true, opt);
        u = std::move(trial);
        break;
      } catch (const NumericalError&) {
        if (ls >= 8) throw;
        alpha *= 0.5;
      }
    }
    // stagnated displacement: accept a nearly converged residual on the next check
    stagnated = it > 0 && alpha * du.cwiseAbs().maxCoeff() < opt.du_tol * mesh.edge_length;
  }
}

/// Uniaxial tension by face displacement; engineering stress = reaction / A0.
inline StressStrainCurve run_tension_fem(const VoxelMesh& mesh, const MaterialParams& p,
                                         const LoadingProgram& load,
                                         const std::vector<EulerAngles>& orientations,
                                         const std::vector<double>& slip_distance = {},
                                         const FeOptions& opt = {}) {
  load.validate();
  p.validate();
  if (load.target_strain == 0.0) return {{0.0}, {0.0}};
  const auto L = slip_distance.empty() ? mesh.equivalent_diameters() : slip_distance;
  GaussStates states = initial_gauss_states(mesh, p, orientations, L);
  const Eigen::Index ndof = 3 * static_cast<Eigen::Index>(mesh.num_nodes());
  Eigen::VectorXd u = Eigen::VectorXd::Zero(ndof), u_prev = u;
  const double area = mesh.edge_length * mesh.edge_length;
  const double dt_full = load.total_time() / load.n_steps;
  std::vector<double> strain{0.0}, stress{0.0};
  double e_cur = 0.0, e_prev = 0.0;

  // advance from e_cur to e_new, bisecting on failure
  std::function<void(double, double, int)> advance = [&](double e_new, double dt, int depth) {
    Eigen::VectorXd guess = u;
    if (e_cur > e_prev) guess += (u - u_prev) * ((e_new - e_cur) / (e_cur - e_prev));
    try {
      auto sol = solve_step(mesh, states, p, uniaxial_boundary(mesh, e_new * mesh.edge_length), dt, guess, opt);
      u_prev = u;
      u = sol.u;
      states = std::move(sol.states);
      e_prev = e_cur;
      e_cur = e_new;
      strain.push_back(e_new);
      stress.push_back(sol.reaction_loaded / area);
    } catch (const NumericalError&) {
      if (depth >= opt.max_bisections) throw;
      const double mid = 0.5 * (e_cur + e_new);
      advance(mid, 0.5 * dt, depth + 1);
      advance(e_new, 0.5 * dt, depth + 1);
    }
  };
  for (int k = 1; k <= load.n_steps; ++k) advance(load.target_strain * k / load.n_steps, dt_full, 0);
  return resample_curve(strain, stress, load.output_grid);
}

// ---------------------------------------------------------------------------
// Mesh refinement study
// ---------------------------------------------------------------------------

struct MeshStudyRow {
  int n_elem_per_edge = 0;
  double element_size = 0.0;
  double elements_per_grain = 0.0;
  std::vector<double> stress;        // at the requested strains
  std::vector<double> rel_change;    // vs previous row (empty for the first)
  StressStrainCurve curve;
};

/// Same seeds and orientations mapped onto each refinement; mean slip
/// distance is the seed diameter on every mesh.
inline std::vector<MeshStudyRow> mesh_convergence_study(const std::vector<int>& refinements,
                                                        const GrainSeeds& seeds,
                                                        const std::vector<EulerAngles>& orientations,
                                                        const MaterialParams& p, const LoadingProgram& load,
                                                        const std::vector<double>& report_strains,
                                                        const FeOptions& opt = {}) {
  if (refinements.empty()) throw InputError("mesh study: need at least one refinement level");
  std::vector<MeshStudyRow> rows;
  for (int n : refinements) {
    const auto mesh = voxelize_seeds(seeds, n);
    MeshStudyRow row;
    row.n_elem_per_edge = n;
    row.element_size = mesh.element_size();
    row.elements_per_grain = mesh.mean_elements_per_grain();
    row.curve = run_tension_fem(mesh, p, load, orientations, seeds.diameters, opt);
    for (double e : report_strains) row.stress.push_back(row.curve.at(e));
    if (!rows.empty())
      for (std::size_t k = 0; k < report_strains.size(); ++k)
        row.rel_change.push_back(std::abs(row.stress[k] - rows.back().stress[k]) / std::abs(rows.back().stress[k]));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace texuq
