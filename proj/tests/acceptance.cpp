// Acceptance runner: one PASS/FAIL line per criterion.
//   acceptance [--criterion N] [--out DIR]

#include "texuq/texuq.hpp"

#include "oracles.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

using namespace texuq;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  bool soft = false;  // reported, never fails the run
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream o;
  o.precision(prec);
  o << v;
  return o.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path g_out = "acceptance_out";

// ---------------------------------------------------------------------------

Outcome schmid() {
  const auto t0 = Clock::now();
  const auto r = oracle::schmid_onset(MaterialParams{});
  const double expect = r.tau_c0 * std::sqrt(6.0);
  const double rel = std::abs(r.sigma_onset - expect) / expect;
  const double t = seconds_since(t0);
  return {rel < 0.02 && t < 5.0, "onset " + fmt(r.sigma_onset, 6) + " MPa vs " + fmt(expect, 6) + " MPa, rel " +
                                     fmt(rel, 3) + " (tol 0.02), " + fmt(t, 3) + " s (limit 5)"};
}

Outcome det_fp() {
  const MaterialParams p;
  RandomStream rng(4242);
  double worst = 0.0, min_plastic = std::numeric_limits<double>::infinity();
  const double rate = 1e-3, target = 0.04;
  const int steps = 80;
  for (int g = 0; g < 100; ++g) {
    oracle::SinglePoint pt{p, initial_state(p, random_rotation(rng)), {}};
    UniaxialTensionDriver<oracle::SinglePoint> drv(pt);
    for (int k = 1; k <= steps; ++k) {
      drv.advance(1.0 + target * k / steps, target / steps / rate);
      worst = std::max(worst, std::abs(pt.committed.Fp.determinant() - 1.0));
    }
    min_plastic = std::min(min_plastic, (pt.committed.Fp - Mat3::Identity()).norm());
  }
  return {worst < 1e-8 && min_plastic > 1e-3,
          "max |det Fp - 1| = " + fmt(worst, 3) + " (tol 1e-8), min |Fp - I| = " + fmt(min_plastic, 3)};
}

Outcome fixed_points() {
  // density: no grain-size term, monotonic slip until steady state
  MaterialParams p;
  p.B_size = 0.0;
  auto st = initial_state(p);
  const double rate = 1e-3, dt = 1.0;  // 1e-3 slip per step
  for (int i = 0; i < 30000; ++i) st = evolve_state(st, Slip12::Constant(rate), dt, p);
  const double s_ss = p.C_hard / (p.b_burgers * p.D_soft);
  double rho_err = 0.0, x_err = 0.0;
  for (int a = 0; a < kNumSlip; ++a) rho_err = std::max(rho_err, std::abs(std::sqrt(st.rho_ssd[a]) - s_ss) / s_ss);
  const MaterialParams q;
  const double xs = q.E_kin / q.F_kin;
  auto sx = initial_state(q);
  for (int i = 0; i < 30000; ++i) sx = evolve_state(sx, Slip12::Constant(rate), dt, q);
  for (int a = 0; a < kNumSlip; ++a) x_err = std::max(x_err, std::abs(sx.X[a] - xs) / xs);
  return {rho_err < 1e-3 && x_err < 1e-3, "sqrt(rho) rel err " + fmt(rho_err, 3) + " vs C/(bD) = " + fmt(s_ss, 6) +
                                              ", X rel err " + fmt(x_err, 3) + " vs E/F = " + fmt(xs, 6) +
                                              " (tol 1e-3)"};
}

Outcome fe_point() {
  const auto t0 = Clock::now();
  const MaterialParams p;
  VoxelMesh m;
  m.n = 4;
  m.edge_length = 20.0;
  m.n_grains = 1;
  m.grain_id.assign(m.num_elements(), 0);
  auto st = initial_gauss_states(m, p, {{25.0, 35.0, 45.0}}, {20.0});
  auto pt = st[0];
  Eigen::VectorXd u = Eigen::VectorXd::Zero(3 * static_cast<Eigen::Index>(m.num_nodes()));
  double worst = 0.0;
  const int steps = 10;
  for (int k = 1; k <= steps; ++k) {
    const double e = 0.01 * k / steps;
    const Mat3 F = Eigen::Vector3d(1.0 + e, 1.0 - 0.4 * e, 1.0 - 0.4 * e).asDiagonal();
    const auto sol = solve_step(m, st, p, affine_boundary(m, F), 1.0, u);
    IntegratorOptions io;
    io.compute_tangent = false;
    const auto ref = integrate_point(F, pt, 1.0, p, io);
    for (const auto& s : sol.cauchy) worst = std::max(worst, (s - ref.stress.cauchy).norm() / ref.stress.cauchy.norm());
    st = sol.states;
    pt = ref.state;
    u = sol.u;
  }
  const double t = seconds_since(t0);
  const double plastic = (pt.Fp - Mat3::Identity()).norm();
  return {worst < 1e-6 && t < 60.0 && plastic > 1e-3,
          "max rel stress diff " + fmt(worst, 3) + " over 512 Gauss points x " + std::to_string(steps) +
              " steps (tol 1e-6), |Fp - I| = " + fmt(plastic, 3) + ", " + fmt(t, 3) + " s (limit 60)"};
}

Outcome mesh_trend() {
  const auto t0 = Clock::now();
  auto cfg = config_from_json(json::object());
  cfg.seed = 2024;
  MeshStudySettings s;
  s.grain_count = 25;
  s.edge_length = 40.0;
  s.refinements = {5, 8, 10};
  s.target_strain = 0.012;
  s.n_steps = 24;
  s.report_strains = {0.01};
  const auto r = run_mesh_study(cfg, s, 1);
  const double c1 = r.rows[1].rel_change[0], c2 = r.rows[2].rel_change[0];
  const double t = seconds_since(t0);
  std::string d = "flow stress at 1%:";
  for (const auto& row : r.rows)
    d += " " + std::to_string(row.n_elem_per_edge) + "^3 (" + fmt(row.elements_per_grain, 3) + " el/grain) " +
         fmt(row.stress[0], 6);
  d += "; changes " + fmt(c1, 3) + " > " + fmt(c2, 3) + ", final < 0.02; " + fmt(t, 3) + " s (limit 1800)";
  return {c1 > c2 && c2 < 0.02 && t < 1800.0, d};
}

Outcome realization_trend() {
  const auto t0 = Clock::now();
  auto cfg = config_from_json(json::object());
  cfg.seed = 2024;
  cfg.offsets = {0.002};
  cfg.loading = LoadingProgram::uniform(0.006, 30, 31);
  cfg.realization_study.grain_counts = {25, 190, 615};
  cfg.realization_study.realizations = 20;
  const auto rows = run_realization_study(cfg, 1);
  std::string d = "std of 0.2% offset stress:";
  bool decreasing = true;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    d += " " + std::to_string(rows[i].grain_count) + " grains " + fmt(rows[i].std[0], 4) + " MPa";
    if (i > 0) decreasing = decreasing && rows[i].std[0] < rows[i - 1].std[0];
  }
  const double t = seconds_since(t0);
  d += "; " + fmt(t, 3) + " s (limit 1800)";
  return {decreasing && t < 1800.0, d};
}

Outcome pce_recovery() {
  const auto b = TextureBounds::weld_ebsd();
  const InputSpec spec{b.lower(), b.upper(), {}};
  const auto idx = total_degree_indices(8, 2);
  RandomStream crng(71);
  Eigen::VectorXd c(static_cast<Eigen::Index>(idx.size()));
  for (auto& v : c) v = crng.uniform(-50.0, 50.0);
  RandomStream rng(72);
  std::vector<PceSample> all;
  for (const auto& x : latin_hypercube(spec.min, spec.max, 200, rng))
    all.push_back({x, {eval_basis(scale_inputs(x, spec), idx).dot(c)}});
  const std::vector<PceSample> train(all.begin(), all.begin() + 160), held(all.begin() + 160, all.end());
  const auto m = fit(train, spec, 2).model;
  const double cerr = (m.coefficients.col(0) - c).cwiseAbs().maxCoeff();
  const double r2 = validate(m, held).r2_min;
  return {cerr < 1e-8 && r2 >= 1.0 - 1e-9,
          "max coefficient error " + fmt(cerr, 3) + " (tol 1e-8), held-out R2 " + fmt(r2, 16) + " (>= 1 - 1e-9)"};
}

Outcome ishigami() {
  const oracle::Ishigami f;
  const auto m = fit(oracle::ishigami_samples(2000, 81, f), oracle::ishigami_spec(), 9).model;
  const auto s = sobol_indices(m, 0);
  const double e1 = std::abs(s.first[0] - f.s1()), e2 = std::abs(s.first[1] - f.s2()), e3 = std::abs(s.first[2] - f.s3());
  return {e1 < 0.02 && e2 < 0.02 && e3 < 0.02,
          "S1 " + fmt(s.first[0]) + " (" + fmt(f.s1()) + "), S2 " + fmt(s.first[1]) + " (" + fmt(f.s2()) + "), S3 " +
              fmt(s.first[2]) + " (" + fmt(f.s3()) + "), tol 0.02"};
}

CampaignConfig campaign_config() {
  return config_from_json({{"seed", 2024},
                           {"texture_bounds", "weld_ebsd"},
                           {"n_samples", 200},
                           {"grain_count", 615},
                           {"grain_size", {{"mean", 20.0}, {"std", 8.0}}},
                           {"loading", {{"target_strain", 0.04}, {"strain_rate", 0.001}, {"n_steps", 80}, {"n_output", 101}}},
                           {"pce_degree", 2},
                           {"train_fraction", 0.8},
                           {"simulator", "taylor"},
                           {"population_seeding", "common"}});
}

double band_width_at(const CampaignResult& r, const std::vector<double>& grid, double e) {
  std::vector<double> sd;
  for (double v : r.moments.variance) sd.push_back(std::sqrt(v));
  return 2.0 * interp_linear(grid, sd, e);
}

Outcome campaign() {
  const auto t0 = Clock::now();
  const auto cfg = campaign_config();
  const auto r = run_campaign(cfg, g_out / "campaign");
  const auto& v = *r.curve_validation;
  const double w02 = band_width_at(r, cfg.loading.output_grid, 0.002);
  const double w30 = band_width_at(r, cfg.loading.output_grid, 0.03);
  const double t = seconds_since(t0);
  return {v.r2_min > 0.95 && w30 >= w02,
          "validation R2 min " + fmt(v.r2_min) + " (> 0.95) over " + std::to_string(v.r2.size()) + " strain points, " +
              std::to_string(r.validation.size()) + " held-out curves; band width (2 std) " + fmt(w02) +
              " MPa at 0.2% <= " + fmt(w30) + " MPa at 3.0%; " + fmt(t, 3) + " s"};
}

Outcome ranking() {
  // reuse the campaign written by the end-to-end criterion when it matches
  const auto cfg = campaign_config();
  const fs::path dir = g_out / "campaign";
  PceModel offset_model;
  bool reused = false;
  if (fs::exists(dir / "manifest.json") && fs::exists(dir / "offset_pce_model.json") &&
      read_json_file(dir / "manifest.json").at("config") == config_to_json(cfg)) {
    offset_model = pce_model_from_json(read_json_file(dir / "offset_pce_model.json"));
    reused = true;
  } else {
    offset_model = run_campaign(cfg, dir).offset_model;
  }
  const auto s = sobol_indices(offset_model, 0);
  const auto order = rank_by_total(s);
  std::string d = "total indices at 0.2% offset:";
  for (int i : order) d += " " + std::string(kComponentAbbrev[i]) + " " + fmt(s.total[i], 3);
  d += reused ? " (campaign reused)" : "";
  const std::set<int> top{order[0], order[1]};
  const bool ok = top == std::set<int>{static_cast<int>(Component::Cube), static_cast<int>(Component::Goss)};
  return {ok, d, true};
}

Outcome determinism() {
  auto cfg = campaign_config();
  cfg.n_samples = 60;
  cfg.grain_count = 60;
  cfg.surrogate_draws = 20000;
  std::vector<std::string> manifests;
  std::string first_diff;
  const std::vector<int> workers{1, 3, 1};
  for (std::size_t k = 0; k < workers.size(); ++k) {
    cfg.workers = workers[k];
    const fs::path dir = g_out / ("determinism_" + std::to_string(k));
    fs::remove_all(dir);
    run_campaign(cfg, dir);
    manifests.push_back(slurp(dir / "manifest.json"));
    if (k > 0) {
      for (const auto& [file, sum] : read_json_file(dir / "manifest.json").at("artifacts").items())
        if (slurp(dir / file) != slurp(g_out / "determinism_0" / file) && first_diff.empty()) first_diff = file;
    }
  }
  const bool ok = manifests[0] == manifests[1] && manifests[0] == manifests[2] && first_diff.empty();
  return {ok, "60 samples x 60 grains, workers 1/3/1: manifests and all checksummed artifacts " +
                  std::string(ok ? "byte-identical" : "differ (" + first_diff + ")")};
}

const std::vector<std::pair<std::string, std::function<Outcome()>>>& criteria() {
  static const std::vector<std::pair<std::string, std::function<Outcome()>>> c{
      {"Schmid onset for <100> tension", schmid},
      {"plastic incompressibility", det_fp},
      {"hardening fixed points", fixed_points},
      {"FE vs material point under affine stretch", fe_point},
      {"mesh refinement trend", mesh_trend},
      {"realization variability trend", realization_trend},
      {"PCE exact recovery", pce_recovery},
      {"Sobol indices of the Ishigami function", ishigami},
      {"end-to-end texture campaign", campaign},
      {"Cube and Goss lead the sensitivity ranking", ranking},
      {"determinism across worker counts", determinism},
  };
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  int only = 0;
  std::string out = g_out.string();
  app.add_option("--criterion", only, "run a single criterion (1-11)")->check(CLI::Range(1, 11));
  app.add_option("--out", out, "directory for campaign outputs");
  CLI11_PARSE(app, argc, argv);
  g_out = out;

  bool all_pass = true;
  const auto& list = criteria();
  for (std::size_t i = 0; i < list.size(); ++i) {
    if (only != 0 && static_cast<int>(i) + 1 != only) continue;
    Outcome o;
    try {
      o = list[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what(), i + 1 == 10};
    }
    std::cout << "criterion " << i + 1 << " [" << list[i].first << "]: " << (o.pass ? "PASS" : "FAIL")
              << (o.soft ? " (soft)" : "") << " - " << o.detail << std::endl;
    if (!o.pass && !o.soft) all_pass = false;
  }
  return all_pass ? 0 : 1;
}
