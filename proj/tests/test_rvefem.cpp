#include "texuq/io.hpp"
#include "texuq/rvefem.hpp"

#include <gtest/gtest.h>

using namespace texuq;

namespace {

VoxelMesh uniform_mesh(int n, double edge) {
  VoxelMesh m;
  m.n = n;
  m.edge_length = edge;
  m.n_grains = 1;
  m.grain_id.assign(m.num_elements(), 0);
  return m;
}

Eigen::VectorXd affine_u(const VoxelMesh& m, const Mat3& F) {
  Eigen::VectorXd u(3 * static_cast<Eigen::Index>(m.num_nodes()));
  const double h = m.element_size();
  for (int k = 0; k <= m.n; ++k)
    for (int j = 0; j <= m.n; ++j)
      for (int i = 0; i <= m.n; ++i) {
        const auto nd = static_cast<Eigen::Index>(m.node_index(i, j, k));
        u.segment<3>(3 * nd) = (F - Mat3::Identity()) * Vec3(i * h, j * h, k * h);
      }
  return u;
}

const EulerAngles kOri{25.0, 35.0, 45.0};

}  // namespace

TEST(Voxelize, TwentyFiveGrainsOnTenCubed) {
  RandomStream rng(1);
  const auto m = voxelize(25, 10, 40.0, GrainSizeSpec{}, rng);
  EXPECT_DOUBLE_EQ(m.mean_elements_per_grain(), 40.0);
  EXPECT_EQ(m.empty_grains(), 0u);
  std::size_t total = 0;
  for (auto c : m.elements_per_grain()) total += c;
  EXPECT_EQ(total, 1000u);
  for (int g : m.grain_id) {
    EXPECT_GE(g, 0);
    EXPECT_LT(g, 25);
  }
}

TEST(Voxelize, HundredNinetyGrainsOnTwentyCubed) {
  RandomStream rng(2);
  const auto m = voxelize(190, 20, 80.0, GrainSizeSpec{}, rng);
  EXPECT_NEAR(m.mean_elements_per_grain(), 42.0, 0.5);
  EXPECT_EQ(m.empty_grains(), 0u);
}

TEST(Voxelize, SingleGrainFillsMesh) {
  RandomStream rng(3);
  const auto m = voxelize(1, 4, 40.0, GrainSizeSpec{}, rng);
  for (int g : m.grain_id) EXPECT_EQ(g, 0);
}

TEST(Voxelize, RejectsBadInput) {
  RandomStream rng(4);
  EXPECT_THROW(voxelize(3, 1, 40.0, GrainSizeSpec{}, rng), InputError);
  EXPECT_THROW(voxelize(9, 2, 40.0, GrainSizeSpec{}, rng), InputError);
}

TEST(Voxelize, SameSeedsGiveSameMesh) {
  RandomStream a(5), b(5);
  EXPECT_EQ(voxelize(10, 6, 40.0, GrainSizeSpec{}, a).grain_id, voxelize(10, 6, 40.0, GrainSizeSpec{}, b).grain_id);
}

TEST(Voxelize, JsonRoundTrip) {
  RandomStream rng(6);
  const auto m = voxelize(8, 5, 30.0, GrainSizeSpec{}, rng);
  const auto back = voxel_mesh_from_json(json::parse(to_json(m).dump()));
  EXPECT_EQ(back.n, m.n);
  EXPECT_EQ(back.edge_length, m.edge_length);
  EXPECT_EQ(back.n_grains, m.n_grains);
  EXPECT_EQ(back.grain_id, m.grain_id);
}

TEST(Assemble, ZeroDisplacementNoInternalForce) {
  const MaterialParams p;
  const auto m = uniform_mesh(2, 10.0);
  const auto st = initial_gauss_states(m, p, {kOri}, {20.0});
  const auto r = assemble(m, st, p, Eigen::VectorXd::Zero(3 * 27), 1.0, false, {});
  EXPECT_EQ(r.f_int.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Assemble, SingleElementMatchesHandIntegration) {
  // uniform P: f_a = P * int grad N_a dV0, and for a cube of side h that
  // integral is (h^2 / 4) * (+-1, +-1, +-1) by node corner
  const MaterialParams p;
  const double h = 7.0;
  const auto m = uniform_mesh(1, h);
  const auto st = initial_gauss_states(m, p, {kOri}, {20.0});
  Mat3 F = Mat3::Identity();
  F(0, 0) += 4e-4;
  F(1, 2) += 1e-4;
  F(2, 0) -= 2e-4;
  const auto r = assemble(m, st, p, affine_u(m, F), 1.0, false, {});
  const auto pt = integrate_point(F, st[0], 1.0, p, {.compute_tangent = false});
  const Mat3 P = first_piola(pt.stress.cauchy, F);
  const auto nodes = m.element_nodes(0);
  const std::array<Vec3, 8> corner{Vec3(-1, -1, -1), Vec3(1, -1, -1), Vec3(1, 1, -1), Vec3(-1, 1, -1),
                                   Vec3(-1, -1, 1),  Vec3(1, -1, 1),  Vec3(1, 1, 1),  Vec3(-1, 1, 1)};
  double scale = 0.0, err = 0.0;
  for (int a = 0; a < 8; ++a) {
    const Vec3 fa = P * corner[a] * (h * h / 4.0);
    const Vec3 got = r.f_int.segment<3>(3 * static_cast<Eigen::Index>(nodes[a]));
    scale = std::max(scale, fa.cwiseAbs().maxCoeff());
    err = std::max(err, (got - fa).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(err / scale, 1e-10);
}

TEST(Assemble, ElasticTangentSymmetricAndConsistent) {
  const MaterialParams p;
  RandomStream rng(7);
  VoxelMesh m = uniform_mesh(2, 10.0);
  m.n_grains = 2;
  for (std::size_t e = 0; e < m.num_elements(); ++e) m.grain_id[e] = static_cast<int>(e % 2);
  const auto st = initial_gauss_states(m, p, {kOri, {80.0, 10.0, 5.0}}, {20.0, 15.0});
  Eigen::VectorXd u(3 * 27);
  for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = rng.uniform(-1e-3, 1e-3);
  const auto r = assemble(m, st, p, u, 1.0, true, {});
  const Eigen::MatrixXd K(r.K);
  EXPECT_LT((K - K.transpose()).cwiseAbs().maxCoeff() / K.cwiseAbs().maxCoeff(), 1e-6);
  const double hstep = 1e-6;
  for (Eigen::Index j : {0, 13, 40, 80}) {
    Eigen::VectorXd up = u, um = u;
    up[j] += hstep;
    um[j] -= hstep;
    const Eigen::VectorXd fd =
        (assemble(m, st, p, up, 1.0, false, {}).f_int - assemble(m, st, p, um, 1.0, false, {}).f_int) / (2 * hstep);
    EXPECT_LT((K.col(j) - fd).cwiseAbs().maxCoeff() / K.cwiseAbs().maxCoeff(), 1e-5) << "column " << j;
  }
}

TEST(SolveStep, ZeroLoadConvergesImmediately) {
  const MaterialParams p;
  const auto m = uniform_mesh(2, 10.0);
  const auto st = initial_gauss_states(m, p, {kOri}, {20.0});
  const auto sol = solve_step(m, st, p, uniaxial_boundary(m, 0.0), 1.0, Eigen::VectorXd::Zero(81));
  EXPECT_EQ(sol.iterations, 0);
  EXPECT_EQ(sol.u.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SolveStep, AffinePatchReproducesPointSolution) {
  const MaterialParams p;
  const auto m = uniform_mesh(3, 12.0);
  auto st = initial_gauss_states(m, p, {kOri}, {20.0});
  auto pt = st[0];
  Eigen::VectorXd u = Eigen::VectorXd::Zero(3 * static_cast<Eigen::Index>(m.num_nodes()));
  for (int step = 1; step <= 4; ++step) {
    Mat3 F = Mat3::Identity();
    F(0, 0) += 1.5e-3 * step;
    F(1, 1) -= 0.6e-3 * step;
    F(0, 1) += 0.2e-3 * step;
    const auto sol = solve_step(m, st, p, affine_boundary(m, F), 1.0, u);
    const auto ref = integrate_point(F, pt, 1.0, p, {.compute_tangent = false});
    double err = 0.0;
    for (const auto& s : sol.cauchy) err = std::max(err, (s - ref.stress.cauchy).norm() / ref.stress.cauchy.norm());
    EXPECT_LT(err, 1e-6) << "step " << step;
    EXPECT_LT((sol.u - affine_u(m, F)).cwiseAbs().maxCoeff(), 1e-9 * m.edge_length);
    st = sol.states;
    pt = ref.state;
    u = sol.u;
  }
  EXPECT_GT((pt.Fp - Mat3::Identity()).norm(), 1e-4);
}

TEST(SolveStep, EquilibriumAndReactionBalance) {
  const MaterialParams p;
  RandomStream rng(8);
  const auto [m, seeds] = voxelize_with_seeds(4, 3, 30.0, GrainSizeSpec{}, rng);
  std::vector<EulerAngles> ori;
  for (int g = 0; g < 4; ++g) ori.push_back(matrix_to_euler(random_rotation(rng)));
  const auto st = initial_gauss_states(m, p, ori, seeds.diameters);
  const auto sol = solve_step(m, st, p, uniaxial_boundary(m, 0.003 * m.edge_length), 1.0,
                              Eigen::VectorXd::Zero(3 * static_cast<Eigen::Index>(m.num_nodes())));
  EXPECT_LT(sol.residual_norm, 1e-8 * sol.reference_force);
  EXPECT_NEAR(sol.reaction_loaded, -sol.reaction_opposite, 1e-6 * std::abs(sol.reaction_loaded));
  Vec3 total = Vec3::Zero();
  for (std::size_t nd = 0; nd < m.num_nodes(); ++nd) total += sol.f_int.segment<3>(3 * static_cast<Eigen::Index>(nd));
  EXPECT_LT(total.cwiseAbs().maxCoeff(), 1e-8 * sol.reference_force);
}

TEST(RunTensionFem, IsotropicElasticSlope) {
  MaterialParams p;
  p.C11 = 250000.0;
  p.C12 = 110000.0;
  p.C44 = 70000.0;  // Zener ratio 1
  const double E = (p.C11 - p.C12) * (p.C11 + 2.0 * p.C12) / (p.C11 + p.C12);
  const auto m = uniform_mesh(2, 10.0);
  const auto c = run_tension_fem(m, p, LoadingProgram::uniform(2e-4, 2, 3), {kOri}, {20.0});
  EXPECT_NEAR(c.stress[1] / c.strain[1], E, 0.01 * E);
}

TEST(RunTensionFem, WorkerCountDoesNotChangeCurve) {
  const MaterialParams p;
  RandomStream rng(9);
  const auto [m, seeds] = voxelize_with_seeds(4, 3, 30.0, GrainSizeSpec{}, rng);
  std::vector<EulerAngles> ori;
  for (int g = 0; g < 4; ++g) ori.push_back(matrix_to_euler(random_rotation(rng)));
  const auto load = LoadingProgram::uniform(0.004, 4, 5);
  FeOptions one, three;
  three.workers = 3;
  const auto a = run_tension_fem(m, p, load, ori, seeds.diameters, one);
  EXPECT_EQ(a.stress, run_tension_fem(m, p, load, ori, seeds.diameters, one).stress);
  EXPECT_EQ(a.stress, run_tension_fem(m, p, load, ori, seeds.diameters, three).stress);
}

TEST(RunTensionFem, TaylorBoundsFullField) {
  const MaterialParams p;
  RandomStream rng(10);
  const int ng = 8;
  const auto [m, seeds] = voxelize_with_seeds(ng, 4, 40.0, GrainSizeSpec{}, rng);
  GrainPopulation pop;
  const auto count = m.elements_per_grain();
  std::vector<EulerAngles> ori;
  for (int g = 0; g < ng; ++g) {
    ori.push_back(matrix_to_euler(random_rotation(rng)));
    pop.grains.push_back({ori.back(), static_cast<double>(count[g]) / m.num_elements(), seeds.diameters[g],
                          Component::Random});
  }
  const auto load = LoadingProgram::uniform(0.012, 24, 25);
  const double fe = run_tension_fem(m, p, load, ori, seeds.diameters).at(0.01);
  const double taylor = run_tension_taylor(pop, p, load).at(0.01);
  EXPECT_LE(fe, taylor);
  EXPECT_GT(fe, 0.5 * taylor);
}

TEST(MeshStudy, SingleAndRepeatedLevels) {
  const MaterialParams p;
  RandomStream rng(11);
  const auto seeds = generate_seeds(3, 20.0, GrainSizeSpec{}, rng);
  const std::vector<EulerAngles> ori{{0, 0, 0}, {30, 40, 50}, {60, 20, 10}};
  const auto load = LoadingProgram::uniform(0.003, 3, 4);
  const auto one = mesh_convergence_study({2}, seeds, ori, p, load, {0.003});
  ASSERT_EQ(one.size(), 1u);
  EXPECT_TRUE(one[0].rel_change.empty());
  const auto two = mesh_convergence_study({2, 2}, seeds, ori, p, load, {0.003});
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[1].rel_change[0], 0.0);
  EXPECT_THROW(mesh_convergence_study({}, seeds, ori, p, load, {0.003}), InputError);
}
