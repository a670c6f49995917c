#pragma once

// Campaign orchestration: configuration, texture UQ sweep, surrogate fit and
// report files, plus the mesh and realization studies.

#include "texuq/io.hpp"

#include <chrono>
#include <iostream>
#include <mutex>
#include <numeric>

namespace texuq {

enum class SimulatorKind { Taylor, Fem };

/// How sample populations are seeded: independently per sample, or from one
/// common stream so that curves differ only through the texture weights.
enum class PopulationSeeding { PerSample, Common };

struct FemSettings {
  int elements_per_edge = 10;
  std::size_t grain_count = 25;
  double edge_length = 0.0;  // um; 0 = from the mean grain volume
  FeOptions options;
};

struct MeshStudySettings {
  std::size_t grain_count = 25;
  double edge_length = 0.0;
  std::vector<int> refinements{5, 8, 10};
  double target_strain = 0.012;
  int n_steps = 24;
  std::vector<double> report_strains{0.01};
};

struct RealizationSettings {
  std::vector<std::size_t> grain_counts{25, 190, 615};
  std::size_t realizations = 20;
};

struct CalibrationSettings {
  std::string reference_csv;
  std::vector<ParameterBox> free_parameters = CalibrationSpec::default_free();
  int max_evals = 300;
  double tolerance = 1e-3;
  CalibrationSimConfig sim;
};

struct CampaignConfig {
  std::uint64_t seed = 1;
  MaterialParams material;
  std::optional<CalibrationSettings> calibration;
  TextureBounds texture_bounds = TextureBounds::weld_ebsd();
  std::size_t n_samples = 200;
  std::size_t grain_count = 615;
  GrainSizeSpec grain_size;
  LoadingProgram loading;
  double spread_fwhm = 15.0;
  std::array<std::optional<EulerAngles>, 8> component_ideals{};  // overrides of the default ideals
  int pce_degree = 2;
  double train_fraction = 0.8;
  int workers = 1;
  SimulatorKind simulator = SimulatorKind::Taylor;
  PopulationSeeding seeding = PopulationSeeding::Common;
  FemSettings fem;
  std::vector<double> offsets = default_offsets();
  std::size_t surrogate_draws = 100000;
  std::size_t overlay_samples = 8;
  MeshStudySettings mesh_study;
  RealizationSettings realization_study;

  void validate() const {
    material.validate();
    texture_bounds.validate();
    grain_size.validate();
    loading.validate();
    if (n_samples < 2) throw InputError("config: n_samples must be >= 2");
    if (grain_count < 1) throw InputError("config: grain_count must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InputError("config: train_fraction must be in (0, 1)");
    if (pce_degree < 0) throw InputError("config: pce_degree must be >= 0");
    if (workers < 1) throw InputError("config: workers must be >= 1");
    if (!(spread_fwhm > 0.0)) throw InputError("config: spread_fwhm must be > 0");
    if (offsets.empty()) throw InputError("config: offsets must not be empty");
    if (surrogate_draws < 1) throw InputError("config: surrogate_draws must be >= 1");
    if (fem.elements_per_edge < 2) throw InputError("config: fem.elements_per_edge must be >= 2");
  }

  TextureLibrary library() const {
    auto lib = TextureLibrary::defaults(spread_fwhm);
    for (int i = 0; i < 8; ++i)
      if (component_ideals[i]) lib.components[i].ideal = *component_ideals[i];
    return lib;
  }
};

// ---------------------------------------------------------------------------
// Config JSON
// ---------------------------------------------------------------------------

inline const char* to_string(SimulatorKind s) { return s == SimulatorKind::Taylor ? "taylor" : "fem"; }
inline const char* to_string(PopulationSeeding s) { return s == PopulationSeeding::PerSample ? "per_sample" : "common"; }

inline CampaignConfig config_from_json(const json& j) {
  const std::string w = "config";
  require_keys(j,
               {"seed", "material", "calibration", "texture_bounds", "n_samples", "grain_count", "grain_size",
                "loading", "spread_fwhm", "component_ideals", "pce_degree", "train_fraction", "workers", "simulator",
                "population_seeding", "fem", "offsets", "surrogate_draws", "overlay_samples", "mesh_study",
                "realization_study"},
               w);
  CampaignConfig c;
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed, w);
  if (j.contains("material")) c.material = material_from_json(j.at("material"));
  if (j.contains("texture_bounds")) c.texture_bounds = texture_bounds_from_json(j.at("texture_bounds"));
  c.n_samples = get_or(j, "n_samples", c.n_samples, w);
  c.grain_count = get_or(j, "grain_count", c.grain_count, w);
  if (j.contains("grain_size")) c.grain_size = grain_size_from_json(j.at("grain_size"));
  if (j.contains("loading")) c.loading = loading_from_json(j.at("loading"));
  c.spread_fwhm = get_or(j, "spread_fwhm", c.spread_fwhm, w);
  if (j.contains("component_ideals")) {
    const auto& ci = j.at("component_ideals");
    if (!ci.is_object()) throw InputError("config: component_ideals must map component names to [phi1, Phi, phi2]");
    for (const auto& [k, v] : ci.items()) {
      const auto comp = component_from_string(k);
      if (comp == Component::Random) throw InputError("config: Random has no ideal orientation");
      if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number())
        throw InputError("config: component_ideals." + k + " must be [phi1, Phi, phi2] in degrees");
      c.component_ideals[static_cast<std::size_t>(comp)] = EulerAngles{v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
    }
  }
  c.pce_degree = get_or(j, "pce_degree", c.pce_degree, w);
  c.train_fraction = get_or(j, "train_fraction", c.train_fraction, w);
  c.workers = get_or(j, "workers", c.workers, w);
  c.offsets = get_or(j, "offsets", c.offsets, w);
  c.surrogate_draws = get_or(j, "surrogate_draws", c.surrogate_draws, w);
  c.overlay_samples = get_or(j, "overlay_samples", c.overlay_samples, w);

  const auto sim = get_or<std::string>(j, "simulator", "taylor", w);
  if (sim == "taylor") c.simulator = SimulatorKind::Taylor;
  else if (sim == "fem") c.simulator = SimulatorKind::Fem;
  else throw InputError("config: simulator must be 'taylor' or 'fem'");
  const auto seeding = get_or<std::string>(j, "population_seeding", "common", w);
  if (seeding == "per_sample") c.seeding = PopulationSeeding::PerSample;
  else if (seeding == "common") c.seeding = PopulationSeeding::Common;
  else throw InputError("config: population_seeding must be 'per_sample' or 'common'");

  if (j.contains("fem")) {
    const auto& f = j.at("fem");
    const std::string wf = "config.fem";
    require_keys(f, {"elements_per_edge", "grain_count", "edge_length", "kinematics"}, wf);
    c.fem.elements_per_edge = get_or(f, "elements_per_edge", c.fem.elements_per_edge, wf);
    c.fem.grain_count = get_or(f, "grain_count", c.fem.grain_count, wf);
    c.fem.edge_length = get_or(f, "edge_length", c.fem.edge_length, wf);
    const auto kin = get_or<std::string>(f, "kinematics", "total_lagrangian", wf);
    if (kin == "total_lagrangian") c.fem.options.kinematics = Kinematics::TotalLagrangian;
    else if (kin == "small_strain") c.fem.options.kinematics = Kinematics::SmallStrain;
    else throw InputError("config.fem: kinematics must be 'total_lagrangian' or 'small_strain'");
  }
  if (j.contains("mesh_study")) {
    const auto& m = j.at("mesh_study");
    const std::string wm = "config.mesh_study";
    require_keys(m, {"grain_count", "edge_length", "refinements", "target_strain", "n_steps", "report_strains"}, wm);
    auto& s = c.mesh_study;
    s.grain_count = get_or(m, "grain_count", s.grain_count, wm);
    s.edge_length = get_or(m, "edge_length", s.edge_length, wm);
    s.refinements = get_or(m, "refinements", s.refinements, wm);
    s.target_strain = get_or(m, "target_strain", s.target_strain, wm);
    s.n_steps = get_or(m, "n_steps", s.n_steps, wm);
    s.report_strains = get_or(m, "report_strains", s.report_strains, wm);
  }
  if (j.contains("realization_study")) {
    const auto& r = j.at("realization_study");
    const std::string wr = "config.realization_study";
    require_keys(r, {"grain_counts", "realizations"}, wr);
    c.realization_study.grain_counts = get_or(r, "grain_counts", c.realization_study.grain_counts, wr);
    c.realization_study.realizations = get_or(r, "realizations", c.realization_study.realizations, wr);
  }
  if (j.contains("calibration")) {
    const auto& k = j.at("calibration");
    const std::string wc = "config.calibration";
    require_keys(k, {"reference_csv", "free_parameters", "max_evals", "tolerance", "grain_count", "n_steps", "seed"}, wc);
    CalibrationSettings s;
    s.reference_csv = get_or<std::string>(k, "reference_csv", "", wc);
    if (k.contains("free_parameters")) s.free_parameters = parameter_boxes_from_json(k.at("free_parameters"));
    s.max_evals = get_or(k, "max_evals", s.max_evals, wc);
    s.tolerance = get_or(k, "tolerance", s.tolerance, wc);
    s.sim.n_grains = get_or(k, "grain_count", s.sim.n_grains, wc);
    s.sim.n_steps = get_or(k, "n_steps", s.sim.n_steps, wc);
    s.sim.seed = get_or(k, "seed", s.sim.seed, wc);
    s.sim.grain_size = c.grain_size;
    c.calibration = s;
  }
  c.validate();
  return c;
}

/// Echo of the configuration without the worker count, which must not
/// influence any output.
inline json config_to_json(const CampaignConfig& c) {
  json j = {{"seed", c.seed},
            {"material", to_json(c.material)},
            {"texture_bounds", to_json(c.texture_bounds)},
            {"n_samples", c.n_samples},
            {"grain_count", c.grain_count},
            {"grain_size", to_json(c.grain_size)},
            {"loading", to_json(c.loading)},
            {"spread_fwhm", c.spread_fwhm},
            {"pce_degree", c.pce_degree},
            {"train_fraction", c.train_fraction},
            {"simulator", to_string(c.simulator)},
            {"population_seeding", to_string(c.seeding)},
            {"offsets", c.offsets},
            {"surrogate_draws", c.surrogate_draws},
            {"overlay_samples", c.overlay_samples}};
  json ideals = json::object();
  for (int i = 0; i < 8; ++i)
    if (c.component_ideals[i])
      ideals[std::string(kComponentAbbrev[i])] = {c.component_ideals[i]->phi1, c.component_ideals[i]->Phi,
                                                  c.component_ideals[i]->phi2};
  if (!ideals.empty()) j["component_ideals"] = ideals;
  if (c.simulator == SimulatorKind::Fem)
    j["fem"] = {{"elements_per_edge", c.fem.elements_per_edge},
                {"grain_count", c.fem.grain_count},
                {"edge_length", c.fem.edge_length},
                {"kinematics", c.fem.options.kinematics == Kinematics::SmallStrain ? "small_strain" : "total_lagrangian"}};
  return j;
}

// ---------------------------------------------------------------------------
// Single simulations
// ---------------------------------------------------------------------------

/// Cube edge holding `count` grains of the expected truncated-free volume.
inline double rve_edge_for(std::size_t count, const GrainSizeSpec& g) {
  const double m = g.mean, s = g.std;
  return std::cbrt(static_cast<double>(count) * kPi / 6.0 * (m * m * m + 3.0 * m * s * s));
}

inline StressStrainCurve simulate_curve(const CampaignConfig& c, const TextureWeights& w, RandomStream rng,
                                        int workers) {
  const auto lib = c.library();
  if (c.simulator == SimulatorKind::Taylor) {
    const auto pop = build_population(c.grain_size, c.grain_count, w, rng, lib);
    TaylorOptions opt;
    opt.workers = workers;
    return run_tension_taylor(pop, c.material, c.loading, opt);
  }
  const double edge = c.fem.edge_length > 0.0 ? c.fem.edge_length : rve_edge_for(c.fem.grain_count, c.grain_size);
  auto [mesh, seeds] = voxelize_with_seeds(c.fem.grain_count, c.fem.elements_per_edge, edge, c.grain_size, rng);
  const auto ori = generate_grain_orientations(w, c.fem.grain_count, rng, lib);
  FeOptions opt = c.fem.options;
  opt.workers = workers;
  return run_tension_fem(mesh, c.material, c.loading, ori, seeds.diameters, opt);
}

// ---------------------------------------------------------------------------
// Campaign
// ---------------------------------------------------------------------------

/// Stream keys below the campaign seed.
inline constexpr std::uint64_t kLhsStream = 1, kSplitStream = 2, kDrawStream = 3, kOverlayStream = 4,
                               kSampleStreamBase = 1000;

struct SampleRecord {
  std::size_t index = 0;
  std::vector<double> raw;  // percent, as drawn
  TextureWeights weights;   // normalized, as simulated
  bool ok = false;
  std::string cause;
  StressStrainCurve curve;
  std::vector<double> offset_stress;
};

struct OffsetStats {
  double offset = 0.0;
  double pce_mean = 0.0, pce_std = 0.0;
  double draw_min = 0.0, draw_mean = 0.0, draw_max = 0.0;
  double sample_min = 0.0, sample_mean = 0.0, sample_max = 0.0;
};

struct CampaignResult {
  std::vector<SampleRecord> samples;
  std::vector<std::size_t> train, validation;
  PceModel curve_model, offset_model;
  std::optional<ValidationReport> curve_validation, offset_validation;
  Moments moments;
  std::vector<std::optional<SobolIndices>> offset_sobol;
  std::vector<OffsetStats> offset_stats;
  std::vector<std::size_t> overlay;
  double simulation_seconds = 0.0;
  double surrogate_seconds = 0.0;  // for surrogate_draws evaluations
};

inline InputSpec texture_input_spec(const TextureBounds& b) {
  InputSpec s{b.lower(), b.upper(), {}};
  for (int i = 0; i < 8; ++i) s.names.emplace_back(kComponentAbbrev[i]);
  return s;
}

/// Seeded shuffle of the successful samples, first round(f n) for training.
/// Both lists are returned sorted.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_train_validation(
    std::vector<std::size_t> ok, double train_fraction, std::uint64_t seed) {
  RandomStream rng = RandomStream(seed).split(kSplitStream);
  for (std::size_t i = ok.size(); i > 1; --i) std::swap(ok[i - 1], ok[rng.index(i)]);
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ok.size()))), 1, ok.size());
  std::vector<std::size_t> train(ok.begin(), ok.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> val(ok.begin() + static_cast<std::ptrdiff_t>(n_train), ok.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

inline std::vector<PceSample> curve_rows(const std::vector<SampleRecord>& s, const std::vector<std::size_t>& idx) {
  std::vector<PceSample> rows;
  for (auto i : idx) rows.push_back({s[i].raw, s[i].curve.stress});
  return rows;
}

inline std::vector<PceSample> offset_rows(const std::vector<SampleRecord>& s, const std::vector<std::size_t>& idx) {
  std::vector<PceSample> rows;
  for (auto i : idx) rows.push_back({s[i].raw, s[i].offset_stress});
  return rows;
}

/// Weights drawn for the campaign: raw LHS percentages and their normalized form.
inline std::vector<SampleRecord> draw_campaign_weights(const CampaignConfig& c) {
  RandomStream lhs = RandomStream(c.seed).split(kLhsStream);
  const auto raw = latin_hypercube(c.texture_bounds.lower(), c.texture_bounds.upper(), c.n_samples, lhs);
  std::vector<SampleRecord> out(c.n_samples);
  for (std::size_t i = 0; i < c.n_samples; ++i) {
    out[i].index = i;
    out[i].raw = raw[i];
    out[i].weights = normalize_weights(to_array8(raw[i]));
  }
  return out;
}

inline RandomStream sample_stream(const CampaignConfig& c, std::size_t index) {
  const RandomStream root(c.seed);
  return c.seeding == PopulationSeeding::Common ? root.split(kSampleStreamBase)
                                                : root.split(kSampleStreamBase + index);
}

/// Surrogate fit, validation, moments, Sobol indices and offset statistics
/// on already simulated samples.
inline void analyze_samples(const CampaignConfig& c, CampaignResult& r) {
  std::vector<std::size_t> ok;
  for (const auto& s : r.samples)
    if (s.ok) ok.push_back(s.index);
  std::tie(r.train, r.validation) = split_train_validation(ok, c.train_fraction, c.seed);
  const auto spec = texture_input_spec(c.texture_bounds);
  r.curve_model = fit(curve_rows(r.samples, r.train), spec, c.pce_degree, c.loading.output_grid).model;
  r.offset_model = fit(offset_rows(r.samples, r.train), spec, c.pce_degree, c.offsets).model;
  if (r.validation.size() >= 2) {
    r.curve_validation = validate(r.curve_model, curve_rows(r.samples, r.validation));
    r.offset_validation = validate(r.offset_model, offset_rows(r.samples, r.validation));
  }
  r.moments = moments(r.curve_model);

  r.offset_sobol.clear();
  for (std::size_t k = 0; k < c.offsets.size(); ++k) {
    try {
      r.offset_sobol.push_back(sobol_indices(r.offset_model, k));
    } catch (const NumericalError&) {
      r.offset_sobol.push_back(std::nullopt);
    }
  }

  // Table-4 style spread from surrogate draws over the uniform input box
  const auto om = moments(r.offset_model);
  RandomStream draws = RandomStream(c.seed).split(kDrawStream);
  const std::size_t no = c.offsets.size();
  std::vector<double> mn(no, std::numeric_limits<double>::infinity()), mx(no, -std::numeric_limits<double>::infinity()),
      sum(no, 0.0);
  const auto t0 = std::chrono::steady_clock::now();
  Eigen::VectorXd xi(8);
  for (std::size_t d = 0; d < c.surrogate_draws; ++d) {
    for (int k = 0; k < 8; ++k) xi[k] = spec.frozen(static_cast<std::size_t>(k)) ? 0.0 : draws.uniform(-1.0, 1.0);
    const auto y = predict_scaled(r.offset_model, xi);
    for (std::size_t k = 0; k < no; ++k) {
      const double v = y[static_cast<Eigen::Index>(k)];
      mn[k] = std::min(mn[k], v);
      mx[k] = std::max(mx[k], v);
      sum[k] += v;
    }
  }
  r.surrogate_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.offset_stats.clear();
  for (std::size_t k = 0; k < no; ++k) {
    OffsetStats s;
    s.offset = c.offsets[k];
    s.pce_mean = om.mean[k];
    s.pce_std = std::sqrt(om.variance[k]);
    s.draw_min = mn[k];
    s.draw_max = mx[k];
    s.draw_mean = sum[k] / static_cast<double>(c.surrogate_draws);
    s.sample_min = std::numeric_limits<double>::infinity();
    s.sample_max = -s.sample_min;
    for (auto i : ok) {
      const double v = r.samples[i].offset_stress[k];
      s.sample_min = std::min(s.sample_min, v);
      s.sample_max = std::max(s.sample_max, v);
      s.sample_mean += v / static_cast<double>(ok.size());
    }
    r.offset_stats.push_back(s);
  }

  RandomStream pick = RandomStream(c.seed).split(kOverlayStream);
  auto pool = r.validation;
  for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[pick.index(i)]);
  pool.resize(std::min(pool.size(), c.overlay_samples));
  std::sort(pool.begin(), pool.end());
  r.overlay = pool;
}

struct CampaignOptions {
  bool verbose = false;
  bool write_outputs = true;
};

inline std::string sample_dir_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%04zu", i);
  return buf;
}

inline void write_campaign(const CampaignConfig& c, const CampaignResult& r, const fs::path& out);

/// Sample weights, simulate every curve over the worker pool, then fit and
/// analyze the surrogate. Fails when more than 10 % of the samples fail.
inline CampaignResult run_campaign(const CampaignConfig& c, const fs::path& out, const CampaignOptions& opt = {}) {
  c.validate();
  CampaignResult r;
  r.samples = draw_campaign_weights(c);
  const auto t0 = std::chrono::steady_clock::now();
  std::mutex log_mutex;
  std::size_t done = 0;
  parallel_for(c.n_samples, c.workers, [&](std::size_t i) {
    auto& s = r.samples[i];
    try {
      s.curve = simulate_curve(c, s.weights, sample_stream(c, i), 1);
      s.offset_stress = yield_and_flow_stress(s.curve, c.offsets);
      s.ok = true;
    } catch (const Error& e) {
      s.ok = false;
      s.cause = e.what();
    }
    if (opt.verbose) {
      std::lock_guard<std::mutex> lock(log_mutex);
      ++done;
      if (done % 10 == 0 || done == c.n_samples)
        std::clog << "[campaign] simulated " << done << "/" << c.n_samples << "\n";
    }
  });
  r.simulation_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::size_t failed = 0;
  for (const auto& s : r.samples) failed += !s.ok;
  if (opt.write_outputs && !out.empty()) {
    for (const auto& s : r.samples) {
      const auto dir = out / "samples" / sample_dir_name(s.index);
      json wj = {{"index", s.index},
                 {"raw_percent", s.raw},
                 {"components", std::vector<std::string>(kComponentAbbrev.begin(), kComponentAbbrev.begin() + 8)},
                 {"weights_percent", weights_to_json(s.weights)},
                 {"random_percent", 100.0 * s.weights.random_fraction()},
                 {"status", s.ok ? "ok" : "failed"},
                 {"cause", s.cause}};
      write_json_file(dir / "weights.json", wj);
      if (s.ok) write_curve_csv(dir / "curve.csv", s.curve);
    }
  }
  if (10 * failed > c.n_samples) {
    std::string first;
    for (const auto& s : r.samples)
      if (!s.ok) {
        first = s.cause;
        break;
      }
    throw NumericalError("campaign: " + std::to_string(failed) + " of " + std::to_string(c.n_samples) +
                         " samples failed (limit 10%); first cause: " + first);
  }
  analyze_samples(c, r);
  if (opt.write_outputs && !out.empty()) write_campaign(c, r, out);
  return r;
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

inline std::string band_csv(const CampaignConfig& c, const CampaignResult& r) {
  std::string s = "strain,mean,std,lower,upper,sample_mean,sample_std\n";
  std::vector<std::size_t> ok;
  for (const auto& x : r.samples)
    if (x.ok) ok.push_back(x.index);
  for (std::size_t k = 0; k < c.loading.output_grid.size(); ++k) {
    const double m = r.moments.mean[k], sd = std::sqrt(r.moments.variance[k]);
    double sm = 0.0, ss = 0.0;
    for (auto i : ok) sm += r.samples[i].curve.stress[k] / static_cast<double>(ok.size());
    for (auto i : ok) ss += std::pow(r.samples[i].curve.stress[k] - sm, 2);
    ss = ok.size() > 1 ? std::sqrt(ss / static_cast<double>(ok.size() - 1)) : 0.0;
    s += fmt_double(c.loading.output_grid[k]) + "," + fmt_double(m) + "," + fmt_double(sd) + "," +
         fmt_double(m - sd) + "," + fmt_double(m + sd) + "," + fmt_double(sm) + "," + fmt_double(ss) + "\n";
  }
  return s;
}

inline std::string sobol_csv(const CampaignConfig& c, const CampaignResult& r) {
  std::string s = "offset,component,first_order,total_order\n";
  for (std::size_t k = 0; k < c.offsets.size(); ++k)
    for (int i = 0; i < 8; ++i) {
      s += fmt_double(c.offsets[k]) + "," + std::string(kComponentAbbrev[i]) + ",";
      if (r.offset_sobol[k]) s += fmt_double(r.offset_sobol[k]->first[i]) + "," + fmt_double(r.offset_sobol[k]->total[i]);
      else s += "undefined,undefined";
      s += "\n";
    }
  return s;
}

inline std::string validation_csv(const CampaignConfig& c, const CampaignResult& r) {
  std::string s = "strain,rmse,r2\n";
  if (!r.curve_validation) return s;
  for (std::size_t k = 0; k < c.loading.output_grid.size(); ++k)
    s += fmt_double(c.loading.output_grid[k]) + "," + fmt_double(r.curve_validation->rmse[k]) + "," +
         fmt_double(r.curve_validation->r2[k]) + "\n";
  return s;
}

inline std::string overlay_csv(const CampaignConfig& c, const CampaignResult& r) {
  std::string s = "sample,strain,simulated,predicted\n";
  for (auto i : r.overlay) {
    const auto y = predict(r.curve_model, r.samples[i].raw);
    for (std::size_t k = 0; k < c.loading.output_grid.size(); ++k)
      s += std::to_string(i) + "," + fmt_double(c.loading.output_grid[k]) + "," +
           fmt_double(r.samples[i].curve.stress[k]) + "," + fmt_double(y[static_cast<Eigen::Index>(k)]) + "\n";
  }
  return s;
}

inline std::string offsets_csv(const CampaignResult& r) {
  std::string s = "offset,pce_mean,pce_std,surrogate_min,surrogate_mean,surrogate_max,sample_min,sample_mean,sample_max\n";
  for (const auto& o : r.offset_stats)
    s += fmt_double(o.offset) + "," + fmt_double(o.pce_mean) + "," + fmt_double(o.pce_std) + "," +
         fmt_double(o.draw_min) + "," + fmt_double(o.draw_mean) + "," + fmt_double(o.draw_max) + "," +
         fmt_double(o.sample_min) + "," + fmt_double(o.sample_mean) + "," + fmt_double(o.sample_max) + "\n";
  return s;
}

/// Inputs ordered by decreasing total index.
inline std::vector<int> rank_by_total(const SobolIndices& s) {
  std::vector<int> order(s.total.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return s.total[a] > s.total[b]; });
  return order;
}

inline std::string summary_text(const CampaignConfig& c, const CampaignResult& r) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  std::size_t failed = 0;
  for (const auto& s : r.samples) failed += !s.ok;
  o << "samples: " << r.samples.size() << " simulated, " << failed << " failed\n";
  o << "simulator: " << to_string(c.simulator) << ", grains per sample: "
    << (c.simulator == SimulatorKind::Taylor ? c.grain_count : c.fem.grain_count) << "\n";
  o << "surrogate: degree " << c.pce_degree << ", " << r.curve_model.n_basis() << " basis terms, " << r.train.size()
    << " training / " << r.validation.size() << " validation samples\n";
  o.precision(4);
  if (r.curve_validation)
    o << "validation: min R2 " << r.curve_validation->r2_min << ", mean R2 " << r.curve_validation->r2_mean
      << ", mean RMSE " << r.curve_validation->rmse_mean << " MPa\n";
  else
    o << "validation: skipped (fewer than 2 validation samples)\n";
  o.precision(2);
  o << "\noffset stresses (MPa): surrogate mean [min, max] over " << c.surrogate_draws << " draws\n";
  for (const auto& s : r.offset_stats)
    o << "  " << 100.0 * s.offset << "% offset: " << s.draw_mean << " [" << s.draw_min << ", " << s.draw_max
      << "], pce std " << s.pce_std << "\n";
  o << "\nsensitivity ranking by total Sobol index:\n";
  o.precision(3);
  for (std::size_t k = 0; k < c.offsets.size(); ++k) {
    o.precision(2);
    o << "  " << 100.0 * c.offsets[k] << "% offset: ";
    o.precision(3);
    if (!r.offset_sobol[k]) {
      o << "undefined (zero variance)\n";
      continue;
    }
    bool first = true;
    for (int i : rank_by_total(*r.offset_sobol[k])) {
      o << (first ? "" : ", ") << kComponentAbbrev[i] << " " << r.offset_sobol[k]->total[i];
      first = false;
    }
    o << "\n";
  }
  return o.str();
}

inline void write_campaign(const CampaignConfig& c, const CampaignResult& r, const fs::path& out) {
  write_json_file(out / "pce_model.json", to_json(r.curve_model));
  write_json_file(out / "offset_pce_model.json", to_json(r.offset_model));
  write_text_file(out / "report" / "band.csv", band_csv(c, r));
  write_text_file(out / "report" / "sobol.csv", sobol_csv(c, r));
  write_text_file(out / "report" / "validation.csv", validation_csv(c, r));
  write_text_file(out / "report" / "validation_overlay.csv", overlay_csv(c, r));
  write_text_file(out / "report" / "offsets.csv", offsets_csv(r));
  write_text_file(out / "report" / "summary.txt", summary_text(c, r));

  json manifest = {{"seed", c.seed}, {"config", config_to_json(c)}};
  json samples = json::array();
  std::vector<std::string> artifacts{"pce_model.json",        "offset_pce_model.json",
                                     "report/band.csv",       "report/sobol.csv",
                                     "report/validation.csv", "report/validation_overlay.csv",
                                     "report/offsets.csv",    "report/summary.txt"};
  for (const auto& s : r.samples) {
    const std::string dir = "samples/" + sample_dir_name(s.index);
    samples.push_back({{"index", s.index}, {"dir", dir}, {"status", s.ok ? "ok" : "failed"}, {"cause", s.cause}});
    artifacts.push_back(dir + "/weights.json");
    if (s.ok) artifacts.push_back(dir + "/curve.csv");
  }
  manifest["samples"] = samples;
  manifest["train"] = r.train;
  manifest["validation"] = r.validation;
  json sums = json::object();
  for (const auto& a : artifacts) sums[a] = sha256_file(out / a);
  manifest["artifacts"] = sums;
  write_json_file(out / "manifest.json", manifest);

  // wall-clock data lives apart from the checksummed artifacts
  const double per_sim = r.simulation_seconds / static_cast<double>(std::max<std::size_t>(1, r.samples.size()));
  const double per_eval = r.surrogate_seconds / static_cast<double>(c.surrogate_draws);
  write_json_file(out / "timing.json", {{"simulation_seconds", r.simulation_seconds},
                                        {"surrogate_seconds", r.surrogate_seconds},
                                        {"surrogate_draws", c.surrogate_draws},
                                        {"simulation_to_surrogate_cost_ratio", per_eval > 0.0 ? per_sim / per_eval : 0.0}});
}

/// Reloads samples written by a campaign (weights.json + curve.csv).
inline std::vector<SampleRecord> load_campaign_samples(const fs::path& dir) {
  const auto manifest = read_json_file(dir / "manifest.json");
  std::vector<SampleRecord> out;
  for (const auto& e : manifest.at("samples")) {
    SampleRecord s;
    s.index = e.at("index").get<std::size_t>();
    const fs::path sd = dir / e.at("dir").get<std::string>();
    const auto w = read_json_file(sd / "weights.json");
    s.raw = w.at("raw_percent").get<std::vector<double>>();
    s.weights = normalize_weights(to_array8(s.raw));
    s.ok = e.at("status").get<std::string>() == "ok";
    s.cause = e.at("cause").get<std::string>();
    if (s.ok) s.curve = read_curve_csv(sd / "curve.csv");
    out.push_back(std::move(s));
  }
  return out;
}

/// Surrogate refit from a campaign directory with the campaign's split.
inline PceModel fit_from_campaign(const CampaignConfig& c, const fs::path& dir) {
  const auto samples = load_campaign_samples(dir);
  std::vector<std::size_t> ok;
  for (const auto& s : samples)
    if (s.ok) ok.push_back(s.index);
  const auto [train, val] = split_train_validation(ok, c.train_fraction, c.seed);
  return fit(curve_rows(samples, train), texture_input_spec(c.texture_bounds), c.pce_degree,
             samples[train.front()].curve.strain)
      .model;
}

// ---------------------------------------------------------------------------
// Studies
// ---------------------------------------------------------------------------

struct MeshStudyOutput {
  std::vector<MeshStudyRow> rows;
  GrainSeeds seeds;
  std::size_t empty_grains_coarsest = 0;
};

/// Seeds drawn once (preferring a draw with no empty grain on the coarsest
/// mesh, up to 10 tries) and shared by every refinement.
inline MeshStudyOutput run_mesh_study(const CampaignConfig& c, const MeshStudySettings& s, int workers) {
  if (s.refinements.size() < 2) throw InputError("mesh study: need at least two refinement levels");
  RandomStream rng = RandomStream(c.seed).split(0x6d657368);
  const double edge = s.edge_length > 0.0 ? s.edge_length : rve_edge_for(s.grain_count, c.grain_size);
  const int coarsest = *std::min_element(s.refinements.begin(), s.refinements.end());
  MeshStudyOutput out;
  for (int attempt = 0; attempt < 10; ++attempt) {
    out.seeds = generate_seeds(s.grain_count, edge, c.grain_size, rng);
    out.empty_grains_coarsest = voxelize_seeds(out.seeds, coarsest).empty_grains();
    if (out.empty_grains_coarsest == 0) break;
  }
  const auto ori = generate_grain_orientations(TextureWeights{}, s.grain_count, rng,
                                               c.library());
  const auto load = LoadingProgram::uniform(s.target_strain, s.n_steps, static_cast<std::size_t>(s.n_steps) + 1);
  FeOptions opt = c.fem.options;
  opt.workers = workers;
  out.rows = mesh_convergence_study(s.refinements, out.seeds, ori, c.material, load, s.report_strains, opt);
  return out;
}

inline std::vector<RealizationRow> run_realization_study(const CampaignConfig& c, int workers) {
  RealizationOptions opt;
  opt.offsets = c.offsets;
  opt.workers = workers;
  return realization_study(c.grain_size, c.realization_study.grain_counts, c.realization_study.realizations,
                           c.material, c.loading, RandomStream(c.seed).split(0x7265616c), opt);
}

inline CalibrationResult run_calibration(const CampaignConfig& c, const StressStrainCurve& reference,
                                         CalibrationSpec* spec_out = nullptr) {
  if (!c.calibration) throw InputError("calibration block missing from config");
  CalibrationSpec spec;
  spec.free_parameters = c.calibration->free_parameters;
  spec.reference = reference;
  spec.max_evals = c.calibration->max_evals;
  spec.tolerance = c.calibration->tolerance;
  spec.base = c.material;
  auto sim = c.calibration->sim;
  sim.workers = c.workers;
  auto res = calibrate(spec, sim);
  if (spec_out) *spec_out = spec;
  return res;
}

}  // namespace texuq
