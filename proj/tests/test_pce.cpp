#include "texuq/io.hpp"
#include "texuq/orientations.hpp"
#include "texuq/pce.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <set>

using namespace texuq;

namespace {

InputSpec weld_spec() {
  const auto b = TextureBounds::weld_ebsd();
  return {b.lower(), b.upper(), {"Cb", "Gs", "Bs", "Cu", "S1", "S2", "S3", "Ty"}};
}

// Raw samples on the spec box with outputs given in scaled coordinates.
std::vector<PceSample> sample_function(const InputSpec& spec, std::size_t n, std::uint64_t seed,
                                       const std::function<std::vector<double>(const Eigen::VectorXd&)>& f) {
  RandomStream rng(seed);
  std::vector<PceSample> out;
  for (auto& x : latin_hypercube(spec.min, spec.max, n, rng)) {
    const auto xi = scale_inputs(x, spec);
    out.push_back({std::move(x), f(xi)});
  }
  return out;
}

// Index of a multi-index in a model's ordered list.
std::size_t find_index(const PceModel& m, const MultiIndex& a) {
  for (std::size_t k = 0; k < m.n_basis(); ++k)
    if (m.multi_indices[k] == a) return k;
  throw std::runtime_error("multi-index not present");
}

MultiIndex unit(std::size_t n, std::size_t k, int deg = 1) {
  MultiIndex a(n, 0);
  a[k] = deg;
  return a;
}

// Random degree-2 polynomial in the orthonormal basis over 8 inputs.
Eigen::VectorXd random_coefficients(std::size_t n_basis, std::uint64_t seed) {
  RandomStream rng(seed);
  Eigen::VectorXd c(static_cast<Eigen::Index>(n_basis));
  for (auto& v : c) v = rng.uniform(-50.0, 50.0);
  c[0] = 400.0;
  return c;
}

}  // namespace

TEST(ScaleInputs, EndpointsAndMidpoint) {
  const auto spec = weld_spec();
  EXPECT_TRUE(scale_inputs(spec.min, spec).isApprox(Eigen::VectorXd::Constant(8, -1.0)));
  std::vector<double> mid(8);
  for (std::size_t k = 0; k < 8; ++k) mid[k] = 0.5 * (spec.min[k] + spec.max[k]);
  EXPECT_LT(scale_inputs(mid, spec).cwiseAbs().maxCoeff(), 1e-15);
  auto x = mid;
  x[0] = 73.81;
  EXPECT_DOUBLE_EQ(scale_inputs(x, spec)[0], 1.0);
}

TEST(ScaleInputs, OutOfBoundsNamesComponent) {
  const auto spec = weld_spec();
  auto x = spec.min;
  x[3] = 20.0;
  try {
    scale_inputs(x, spec);
    FAIL() << "expected an error";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("Cu"), std::string::npos);
  }
  x = spec.max;
  x[0] += 1e-10;  // within tolerance
  EXPECT_DOUBLE_EQ(scale_inputs(x, spec)[0], 1.0);
}

TEST(ScaleInputs, FrozenInputMapsToZero) {
  const InputSpec spec{{0.0, 5.0}, {1.0, 5.0}, {}};
  EXPECT_EQ(scale_inputs({0.25, 5.0}, spec)[1], 0.0);
  EXPECT_EQ(spec.name(1), "x2");
}

TEST(Basis, ZeroIndexAndEndpoint) {
  const Eigen::Vector3d xi(0.3, -0.7, 0.9);
  EXPECT_DOUBLE_EQ(eval_basis(xi, {{0, 0, 0}})[0], 1.0);
  EXPECT_NEAR(eval_basis(Eigen::Vector3d(1.0, 0.2, 0.2), {{1, 0, 0}})[0], std::sqrt(3.0), 1e-15);
  // L~_k(1) = sqrt(2k + 1)
  const auto p = legendre_orthonormal(1.0, 6);
  for (int k = 0; k <= 6; ++k) EXPECT_NEAR(p[static_cast<std::size_t>(k)], std::sqrt(2.0 * k + 1.0), 1e-12);
}

TEST(Basis, GaussLegendreOrthonormality) {
  // n-point Gauss-Legendre nodes by Newton on P_n; exact for degree <= 2n - 1
  const int n = 8, d = 6;
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(d + 1, d + 1);
  for (int i = 1; i <= n; ++i) {
    double x = std::cos(kPi * (i - 0.25) / (n + 0.5)), dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    const auto p = legendre_orthonormal(x, d);
    for (int r = 0; r <= d; ++r)
      for (int c = 0; c <= d; ++c) G(r, c) += 0.5 * w * p[static_cast<std::size_t>(r)] * p[static_cast<std::size_t>(c)];
  }
  EXPECT_LT((G - Eigen::MatrixXd::Identity(d + 1, d + 1)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Basis, MonteCarloOrthonormality) {
  const auto idx = total_degree_indices(3, 2);
  RandomStream rng(31);
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(idx.size()));
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d xi(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    const Eigen::RowVectorXd r = eval_basis(xi, idx);
    G.noalias() += r.transpose() * r;
  }
  G /= n;
  for (Eigen::Index i = 0; i < G.rows(); ++i)
    for (Eigen::Index j = 0; j < G.cols(); ++j) EXPECT_NEAR(G(i, j), i == j ? 1.0 : 0.0, 5e-3) << i << "," << j;
}

TEST(TotalDegree, CountsAndOrder) {
  EXPECT_EQ(total_degree_indices(8, 2).size(), 45u);
  const auto d0 = total_degree_indices(8, 0);
  ASSERT_EQ(d0.size(), 1u);
  EXPECT_EQ(total_degree(d0[0]), 0);
  const auto one = total_degree_indices(1, 3);
  ASSERT_EQ(one.size(), 4u);
  for (int k = 0; k < 4; ++k) EXPECT_EQ(one[static_cast<std::size_t>(k)][0], k);
  EXPECT_THROW(total_degree_indices(3, -1), InputError);
}

TEST(TotalDegree, BinomialCountGradedUnique) {
  for (std::size_t n = 1; n <= 6; ++n)
    for (int d = 0; d <= 5; ++d) {
      const auto idx = total_degree_indices(n, d);
      // C(n + d, d)
      double c = 1.0;
      for (int k = 1; k <= d; ++k) c = c * static_cast<double>(n + static_cast<std::size_t>(k)) / k;
      EXPECT_EQ(idx.size(), static_cast<std::size_t>(std::llround(c)));
      std::set<MultiIndex> seen(idx.begin(), idx.end());
      EXPECT_EQ(seen.size(), idx.size());
      for (std::size_t k = 1; k < idx.size(); ++k) {
        EXPECT_LE(total_degree(idx[k - 1]), total_degree(idx[k]));
        EXPECT_LE(total_degree(idx[k]), d);
      }
    }
  const auto idx = total_degree_indices(3, 1);
  EXPECT_EQ(idx[1], (MultiIndex{1, 0, 0}));
  EXPECT_EQ(idx[3], (MultiIndex{0, 0, 1}));
}

TEST(Fit, LinearFunctionCoefficients) {
  const auto spec = weld_spec();
  const auto s = sample_function(spec, 200, 1, [](const Eigen::VectorXd& xi) { return std::vector<double>{3.0 + 2.0 * xi[0]}; });
  const auto m = fit(s, spec, 2).model;
  const auto i1 = find_index(m, unit(8, 0));
  for (std::size_t a = 0; a < m.n_basis(); ++a) {
    const double expect = a == 0 ? 3.0 : a == i1 ? 2.0 / std::sqrt(3.0) : 0.0;
    EXPECT_NEAR(m.coefficients(static_cast<Eigen::Index>(a), 0), expect, 1e-10);
  }
  const auto mo = moments(m);
  EXPECT_NEAR(mo.mean[0], 3.0, 1e-10);
  EXPECT_NEAR(mo.variance[0], 4.0 / 3.0, 1e-10);
}

TEST(Fit, ConstantOutputs) {
  const auto spec = weld_spec();
  const auto s = sample_function(spec, 100, 2, [](const Eigen::VectorXd&) { return std::vector<double>{7.5, -2.0}; });
  const auto m = fit(s, spec, 2).model;
  EXPECT_NEAR(m.coefficients(0, 0), 7.5, 1e-12);
  EXPECT_NEAR(m.coefficients(0, 1), -2.0, 1e-12);
  EXPECT_LT(m.coefficients.bottomRows(m.coefficients.rows() - 1).cwiseAbs().maxCoeff(), 1e-12);
  for (double v : moments(m).variance) EXPECT_LT(v, 1e-24);
  EXPECT_NEAR(predict(m, spec.max)[0], 7.5, 1e-12);
}

TEST(Fit, TextureConfigurationIsSolvable) {
  const auto spec = weld_spec();
  const auto s = sample_function(spec, 160, 3, [](const Eigen::VectorXd& xi) { return std::vector<double>{xi.sum()}; });
  const auto r = fit(s, spec, 2);
  EXPECT_EQ(r.model.n_basis(), 45u);
  EXPECT_LT(r.condition_estimate, 1e3);
}

TEST(Fit, TooFewSamplesCitesRequirement) {
  const auto spec = weld_spec();
  const auto s = sample_function(spec, 45, 4, [](const Eigen::VectorXd& xi) { return std::vector<double>{xi[0]}; });
  try {
    fit(s, spec, 2);
    FAIL() << "expected an error";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("M > P"), std::string::npos);
  }
}

TEST(Fit, RankDeficientReportsCondition) {
  const InputSpec spec{{0.0, 0.0}, {1.0, 1.0}, {}};
  std::vector<PceSample> s;
  for (int i = 0; i < 20; ++i) s.push_back({{0.5, 0.1 * (i % 10)}, {1.0}});  // first input never varies
  try {
    fit(s, spec, 2);
    FAIL() << "expected an error";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("condition"), std::string::npos);
  }
}

TEST(Fit, MismatchedOutputsRejected) {
  const InputSpec spec{{0.0}, {1.0}, {}};
  EXPECT_THROW(fit({{{0.1}, {1.0}}, {{0.2}, {1.0, 2.0}}}, spec, 0), InputError);
  EXPECT_THROW(fit({}, spec, 0), InputError);
}

TEST(Fit, FrozenInputDropsTerms) {
  InputSpec spec = weld_spec();
  spec.min[2] = spec.max[2] = 10.0;
  const auto s = sample_function(spec, 120, 5, [](const Eigen::VectorXd& xi) { return std::vector<double>{1.0 + xi[0] * xi[1]}; });
  const auto m = fit(s, spec, 2).model;
  EXPECT_EQ(m.n_basis(), 36u);  // C(9, 2)
  for (const auto& a : m.multi_indices) EXPECT_EQ(a[2], 0);
  EXPECT_NEAR(predict(m, s[7].inputs)[0], s[7].outputs[0], 1e-10);
}

TEST(Property, ExactRecoveryOfDegreeTwoPolynomial) {
  const auto spec = weld_spec();
  const auto idx = total_degree_indices(8, 2);
  const Eigen::VectorXd c = random_coefficients(idx.size(), 6);
  const auto f = [&](const Eigen::VectorXd& xi) { return std::vector<double>{eval_basis(xi, idx).dot(c)}; };
  const auto train = sample_function(spec, 200, 7, f);
  const auto r = fit(train, spec, 2);
  EXPECT_LT((r.model.coefficients.col(0) - c).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(r.residual_rms[0], 1e-8);
  for (std::size_t i : {0u, 50u, 199u}) EXPECT_NEAR(predict(r.model, train[i].inputs)[0], train[i].outputs[0], 1e-9);
  const auto v = validate(r.model, sample_function(spec, 50, 8, f));
  EXPECT_GE(v.r2_min, 1.0 - 1e-9);
}

TEST(Property, MomentsMatchMonteCarlo) {
  const auto spec = weld_spec();
  const auto idx = total_degree_indices(8, 2);
  const Eigen::VectorXd c = random_coefficients(idx.size(), 9);
  const auto m = fit(sample_function(spec, 200, 10, [&](const Eigen::VectorXd& xi) {
                       return std::vector<double>{eval_basis(xi, idx).dot(c)};
                     }),
                     spec, 2)
                     .model;
  RandomStream rng(11);
  const int n = 100000;
  double s1 = 0.0, s2 = 0.0;
  std::vector<double> raw(8);
  for (int i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < 8; ++k) raw[k] = rng.uniform(spec.min[k], spec.max[k]);
    const double y = predict(m, raw)[0];
    s1 += y;
    s2 += y * y;
  }
  const double mean = s1 / n, var = s2 / n - mean * mean;
  const auto mo = moments(m);
  EXPECT_NEAR(mean, mo.mean[0], 0.01 * std::abs(mo.mean[0]));
  EXPECT_NEAR(var, mo.variance[0], 0.01 * mo.variance[0]);
}

TEST(Property, SampleOrderInvariance) {
  const auto spec = weld_spec();
  auto s = sample_function(spec, 150, 12, [](const Eigen::VectorXd& xi) {
    return std::vector<double>{std::exp(0.3 * xi[0]) + xi[1] * xi[5], std::sin(xi[2])};
  });
  const auto a = fit(s, spec, 2).model;
  std::reverse(s.begin(), s.end());
  std::swap(s[3], s[90]);
  const auto b = fit(s, spec, 2).model;
  EXPECT_LT((a.coefficients - b.coefficients).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Sobol, SingleAndAdditiveFunctions) {
  const auto spec = weld_spec();
  const auto only = fit(sample_function(spec, 100, 13, [](const Eigen::VectorXd& xi) { return std::vector<double>{xi[0]}; }),
                        spec, 2)
                        .model;
  const auto s = sobol_indices(only, 0);
  EXPECT_NEAR(s.first[0], 1.0, 1e-9);
  EXPECT_NEAR(s.total[0], 1.0, 1e-9);
  for (std::size_t k = 1; k < 8; ++k) EXPECT_LT(s.total[k], 1e-9);

  const auto add = fit(sample_function(spec, 100, 14, [](const Eigen::VectorXd& xi) { return std::vector<double>{xi[0] + xi[1]}; }),
                       spec, 2)
                       .model;
  const auto t = sobol_indices(add, 0);
  EXPECT_NEAR(t.first[0], 0.5, 1e-9);
  EXPECT_NEAR(t.first[1], 0.5, 1e-9);
  EXPECT_NEAR(std::accumulate(t.first.begin(), t.first.end(), 0.0), 1.0, 1e-6);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(t.first[k], t.total[k], 1e-9);
}

TEST(Sobol, IshigamiMatchesClosedForm) {
  const oracle::Ishigami f;
  const auto m = fit(oracle::ishigami_samples(2000, 15, f), oracle::ishigami_spec(), 9).model;
  const auto s = sobol_indices(m, 0);
  EXPECT_NEAR(s.first[0], f.s1(), 0.02);
  EXPECT_NEAR(s.first[1], f.s2(), 0.02);
  EXPECT_NEAR(s.first[2], f.s3(), 0.02);
  EXPECT_NEAR(s.total[0], f.total1(), 0.02);
  EXPECT_NEAR(s.total[1], f.s2(), 0.02);
  EXPECT_NEAR(s.total[2], f.total3(), 0.02);
  const auto mo = moments(m);
  EXPECT_NEAR(mo.mean[0], f.mean(), 0.02 * f.variance());
  EXPECT_NEAR(mo.variance[0], f.variance(), 0.02 * f.variance());
}

TEST(Sobol, IndexBoundsOnGeneralFunction) {
  const auto spec = weld_spec();
  const auto m = fit(sample_function(spec, 200, 16, [](const Eigen::VectorXd& xi) {
                       return std::vector<double>{std::exp(xi[0] * xi[1]) + std::cos(2.0 * xi[2]) * xi[3] + xi[7]};
                     }),
                     spec, 2)
                     .model;
  const auto s = sobol_indices(m, 0);
  double sf = 0.0, st = 0.0;
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_GE(s.first[k], 0.0);
    EXPECT_LE(s.total[k], 1.0);
    EXPECT_LE(s.first[k], s.total[k] + 1e-12);
    sf += s.first[k];
    st += s.total[k];
  }
  EXPECT_LE(sf, 1.0 + 1e-9);
  EXPECT_GE(st, 1.0 - 1e-9);
}

TEST(Sobol, ZeroVarianceAndRangeErrors) {
  const InputSpec spec{{0.0}, {1.0}, {}};
  std::vector<PceSample> s;
  for (int i = 0; i < 10; ++i) s.push_back({{0.1 * i}, {4.0}});
  const auto m = fit(s, spec, 1).model;
  EXPECT_THROW(sobol_indices(m, 0), NumericalError);
  EXPECT_THROW(sobol_indices(m, 1), InputError);
}

TEST(Validate, PerfectAndMeanPredictors) {
  const InputSpec spec{{0.0, 0.0}, {1.0, 1.0}, {}};
  std::vector<PceSample> s;
  RandomStream rng(17);
  for (const auto& x : latin_hypercube(spec.min, spec.max, 30, rng)) s.push_back({x, {1.0 + x[0] - 2.0 * x[1] * x[1]}});
  const auto m = fit(s, spec, 2).model;
  const auto perfect = validate(m, s);
  EXPECT_NEAR(perfect.r2_min, 1.0, 1e-12);
  EXPECT_LT(perfect.rmse_mean, 1e-12);

  PceModel mean_model;
  mean_model.input_spec = spec;
  mean_model.max_degree = 0;
  mean_model.multi_indices = {{0, 0}};
  double mean = 0.0;
  for (const auto& p : s) mean += p.outputs[0] / static_cast<double>(s.size());
  mean_model.coefficients = Eigen::MatrixXd::Constant(1, 1, mean);
  EXPECT_NEAR(validate(mean_model, s).r2[0], 0.0, 1e-12);
  EXPECT_THROW(validate(m, {s[0]}), InputError);
}

TEST(Json, ModelRoundTripIsBitIdentical) {
  const auto m = fit(oracle::ishigami_samples(300, 18), oracle::ishigami_spec(), 4, {0.5}).model;
  const auto back = pce_model_from_json(json::parse(to_json(m).dump()));
  EXPECT_EQ(back.multi_indices, m.multi_indices);
  EXPECT_EQ(back.max_degree, m.max_degree);
  EXPECT_EQ(back.strain_grid, m.strain_grid);
  EXPECT_EQ(back.input_spec.min, m.input_spec.min);
  EXPECT_EQ(back.input_spec.names, m.input_spec.names);
  for (Eigen::Index a = 0; a < m.coefficients.rows(); ++a) EXPECT_EQ(back.coefficients(a, 0), m.coefficients(a, 0));
}

TEST(Json, RejectsInconsistentModels) {
  const auto m = fit(oracle::ishigami_samples(100, 19), oracle::ishigami_spec(), 2).model;
  auto j = to_json(m);
  j["max_degree"] = 1;
  EXPECT_THROW(pce_model_from_json(j), InputError);
  j = to_json(m);
  j["coefficients"].erase(0);
  EXPECT_THROW(pce_model_from_json(j), InputError);
  j = to_json(m);
  j["extra"] = 1;
  EXPECT_THROW(pce_model_from_json(j), InputError);
}
