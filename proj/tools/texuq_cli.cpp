// Command-line front end: simulate, sample, campaign, fit-pce, analyze,
// calibrate, mesh-study, realization-study.

#include "texuq/texuq.hpp"

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>

using namespace texuq;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

struct Common {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "configuration JSON (strict schema)");
  sub->add_option("--out", c.out, "output directory");
  sub->add_option("--seed", c.seed, "override the configured seed");
  sub->add_option("--workers", c.workers, "worker threads (TEXUQ_WORKERS overrides)");
}

CampaignConfig load_config(const Common& c) {
  CampaignConfig cfg = c.config.empty() ? config_from_json(json::object()) : config_from_json(read_json_file(c.config));
  if (c.seed) cfg.seed = *c.seed;
  if (c.workers) cfg.workers = *c.workers;
  cfg.workers = workers_from_env(cfg.workers);
  if (cfg.workers < 1) throw InputError("--workers must be >= 1");
  return cfg;
}

void print_sobol(std::ostream& os, const PceModel& m) {
  os << std::fixed << std::setprecision(4);
  for (std::size_t k = 0; k < m.n_outputs(); ++k) {
    os << "output " << m.strain_grid[k] << ":";
    try {
      const auto s = sobol_indices(m, k);
      for (std::size_t i = 0; i < s.first.size(); ++i)
        os << "  " << m.input_spec.name(i) << " S=" << s.first[i] << " ST=" << s.total[i];
    } catch (const NumericalError&) {
      os << "  undefined (zero variance)";
    }
    os << "\n";
  }
}

int cmd_simulate(const Common& common, const std::string& weights_path) {
  const auto cfg = load_config(common);
  const TextureWeights w = weights_path.empty() ? TextureWeights{} : weights_from_json(read_json_file(weights_path));
  const fs::path out(common.out);
  const auto curve = simulate_curve(cfg, w, RandomStream(cfg.seed).split(kSampleStreamBase), cfg.workers);
  write_curve_csv(out / "curve.csv", curve);
  json info = {{"weights_percent", weights_to_json(w)}, {"random_percent", 100.0 * w.random_fraction()},
               {"simulator", to_string(cfg.simulator)}};
  try {
    info["offset_stress"] = yield_and_flow_stress(curve, cfg.offsets);
    info["offsets"] = cfg.offsets;
  } catch (const Error& e) {
    info["offset_stress_error"] = e.what();
  }
  write_json_file(out / "simulation.json", info);
  std::cout << "wrote " << (out / "curve.csv").string() << "\n";
  return kExitOk;
}

int cmd_sample(const Common& common) {
  const auto cfg = load_config(common);
  const auto samples = draw_campaign_weights(cfg);
  std::string csv = "sample";
  for (int i = 0; i < 8; ++i) csv += std::string(",raw_") + std::string(kComponentAbbrev[i]);
  for (int i = 0; i < 8; ++i) csv += "," + std::string(kComponentAbbrev[i]);
  csv += ",Random\n";
  json arr = json::array();
  for (const auto& s : samples) {
    csv += std::to_string(s.index);
    for (double v : s.raw) csv += "," + fmt_double(v);
    for (double f : s.weights.fractions) csv += "," + fmt_double(100.0 * f);
    csv += "," + fmt_double(100.0 * s.weights.random_fraction()) + "\n";
    arr.push_back({{"index", s.index}, {"raw_percent", s.raw}, {"weights_percent", weights_to_json(s.weights)}});
  }
  const fs::path out(common.out);
  write_text_file(out / "weights.csv", csv);
  write_json_file(out / "weights.json", arr);
  std::cout << "wrote " << samples.size() << " weight samples to " << out.string() << "\n";
  return kExitOk;
}

int cmd_campaign(const Common& common, bool quiet) {
  auto cfg = load_config(common);
  const fs::path out(common.out);
  if (cfg.calibration && !cfg.calibration->reference_csv.empty()) {
    CalibrationSpec spec;
    const auto res = run_calibration(cfg, read_curve_csv(cfg.calibration->reference_csv), &spec);
    write_json_file(out / "calibration.json", to_json(res, spec));
    cfg.material = res.best;
  }
  const auto r = run_campaign(cfg, out, {!quiet, true});
  std::cout << summary_text(cfg, r);
  return kExitOk;
}

int cmd_fit_pce(const Common& common, const std::string& from) {
  const auto cfg = load_config(common);
  const fs::path src = from.empty() ? fs::path(common.out) : fs::path(from);
  const auto model = fit_from_campaign(cfg, src);
  const fs::path out(common.out);
  write_json_file(out / "pce_model.json", to_json(model));
  std::cout << "fitted " << model.n_basis() << " basis terms x " << model.n_outputs() << " outputs -> "
            << (out / "pce_model.json").string() << "\n";
  return kExitOk;
}

int cmd_analyze(const Common& common, const std::string& model_path) {
  if (model_path.empty()) throw InputError("analyze: --model is required");
  const auto m = pce_model_from_json(read_json_file(model_path));
  const auto mo = moments(m);
  std::string mcsv = "output,mean,variance\n";
  for (std::size_t k = 0; k < m.n_outputs(); ++k)
    mcsv += fmt_double(m.strain_grid[k]) + "," + fmt_double(mo.mean[k]) + "," + fmt_double(mo.variance[k]) + "\n";
  std::string scsv = "output,input,first_order,total_order\n";
  for (std::size_t k = 0; k < m.n_outputs(); ++k) {
    std::optional<SobolIndices> s;
    try {
      s = sobol_indices(m, k);
    } catch (const NumericalError&) {
    }
    for (std::size_t i = 0; i < m.input_spec.size(); ++i)
      scsv += fmt_double(m.strain_grid[k]) + "," + m.input_spec.name(i) + "," +
              (s ? fmt_double(s->first[i]) + "," + fmt_double(s->total[i]) : std::string("undefined,undefined")) + "\n";
  }
  const fs::path out(common.out);
  write_text_file(out / "moments.csv", mcsv);
  write_text_file(out / "sobol.csv", scsv);
  print_sobol(std::cout, m);
  return kExitOk;
}

int cmd_calibrate(const Common& common, const std::string& reference) {
  auto cfg = load_config(common);
  if (!cfg.calibration) cfg.calibration = CalibrationSettings{};
  std::string ref = reference.empty() ? cfg.calibration->reference_csv : reference;
  if (ref.empty()) throw InputError("calibrate: a reference curve is required (--reference)");
  CalibrationSpec spec;
  const auto res = run_calibration(cfg, read_curve_csv(ref), &spec);
  const fs::path out(common.out);
  write_json_file(out / "result.json", to_json(res, spec));
  write_text_file(out / "trace.csv", trace_to_csv(res, spec));
  std::cout << "best RMS " << res.best_rms << " MPa after " << res.evaluations << " evaluations (" << res.stop_reason
            << ")\n";
  return kExitOk;
}

int cmd_mesh_study(const Common& common) {
  const auto cfg = load_config(common);
  const auto r = run_mesh_study(cfg, cfg.mesh_study, cfg.workers);
  const fs::path out(common.out);
  std::string csv = "elements_per_edge,element_size_um,elements_per_grain";
  for (double e : cfg.mesh_study.report_strains) csv += ",stress_at_" + fmt_double(e) + ",rel_change_at_" + fmt_double(e);
  csv += "\n";
  for (const auto& row : r.rows) {
    csv += std::to_string(row.n_elem_per_edge) + "," + fmt_double(row.element_size) + "," +
           fmt_double(row.elements_per_grain);
    for (std::size_t k = 0; k < row.stress.size(); ++k)
      csv += "," + fmt_double(row.stress[k]) + "," + (row.rel_change.empty() ? "" : fmt_double(row.rel_change[k]));
    csv += "\n";
    write_curve_csv(out / ("curve_n" + std::to_string(row.n_elem_per_edge) + ".csv"), row.curve);
    write_json_file(out / ("mesh_n" + std::to_string(row.n_elem_per_edge) + ".json"),
                    to_json(voxelize_seeds(r.seeds, row.n_elem_per_edge)));
  }
  write_text_file(out / "mesh_study.csv", csv);
  std::cout << csv;
  return kExitOk;
}

int cmd_realization_study(const Common& common) {
  const auto cfg = load_config(common);
  const auto rows = run_realization_study(cfg, cfg.workers);
  std::string csv = "grain_count";
  for (double o : cfg.offsets) csv += ",mean_" + fmt_double(o) + ",std_" + fmt_double(o);
  csv += "\n";
  std::string raw = "grain_count,realization";
  for (double o : cfg.offsets) raw += ",stress_" + fmt_double(o);
  raw += "\n";
  for (const auto& r : rows) {
    csv += std::to_string(r.grain_count);
    for (std::size_t k = 0; k < r.mean.size(); ++k) csv += "," + fmt_double(r.mean[k]) + "," + fmt_double(r.std[k]);
    csv += "\n";
    for (std::size_t i = 0; i < r.values.size(); ++i) {
      raw += std::to_string(r.grain_count) + "," + std::to_string(i);
      for (double v : r.values[i]) raw += "," + fmt_double(v);
      raw += "\n";
    }
  }
  const fs::path out(common.out);
  write_text_file(out / "realization_study.csv", csv);
  write_text_file(out / "realizations.csv", raw);
  std::cout << csv;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"texture uncertainty quantification for polycrystal tension"};
  app.require_subcommand(1);

  Common common;
  std::string weights_path, from_dir, model_path, reference;
  bool quiet = false;

  auto* sim = app.add_subcommand("simulate", "one stress-strain curve from texture weights");
  add_common(sim, common);
  sim->add_option("--weights", weights_path, "weights JSON (percent per component)");
  auto* sam = app.add_subcommand("sample", "emit LHS texture weight samples");
  add_common(sam, common);
  auto* camp = app.add_subcommand("campaign", "full texture UQ campaign");
  add_common(camp, common);
  camp->add_flag("--quiet", quiet, "no progress lines");
  auto* fitc = app.add_subcommand("fit-pce", "refit the surrogate from campaign curves");
  add_common(fitc, common);
  fitc->add_option("--from", from_dir, "campaign directory (default: --out)");
  auto* ana = app.add_subcommand("analyze", "moments and Sobol indices of a surrogate");
  add_common(ana, common);
  ana->add_option("--model", model_path, "PCE model JSON")->required();
  auto* cal = app.add_subcommand("calibrate", "fit material parameters to a reference curve");
  add_common(cal, common);
  cal->add_option("--reference", reference, "reference curve CSV (strain,stress_mpa)");
  cal->add_option("--spec", common.config, "alias of --config");
  auto* mesh = app.add_subcommand("mesh-study", "FE mesh refinement study");
  add_common(mesh, common);
  auto* real = app.add_subcommand("realization-study", "Taylor realization variability study");
  add_common(real, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sim) return cmd_simulate(common, weights_path);
    if (*sam) return cmd_sample(common);
    if (*camp) return cmd_campaign(common, quiet);
    if (*fitc) return cmd_fit_pce(common, from_dir);
    if (*ana) return cmd_analyze(common, model_path);
    if (*cal) return cmd_calibrate(common, reference);
    if (*mesh) return cmd_mesh_study(common);
    if (*real) return cmd_realization_study(common);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
