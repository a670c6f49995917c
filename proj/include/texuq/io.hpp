#pragma once

// JSON and CSV persistence. Object readers are strict: unknown keys are
// rejected. Doubles are written with 17 significant digits so files
// round-trip bit-identically.

#include "texuq/calibrate.hpp"
#include "texuq/pce.hpp"
#include "texuq/rvefem.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace texuq {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Strict-object helpers
// ---------------------------------------------------------------------------

/// Throws if `j` is not an object or carries a key outside `allowed`.
inline void require_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) throw InputError(where + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || k == a;
    if (!ok) throw InputError(where + ": unknown key '" + k + "'");
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InputError(where + ": key '" + key + "' has the wrong type");
  }
}

template <class T>
T get_required(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw InputError(where + ": missing key '" + key + "'");
  return get_or<T>(j, key, T{}, where);
}

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

inline void write_json_file(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::string hex;
  char b[3];
  for (unsigned i = 0; i < len; ++i) {
    std::snprintf(b, sizeof b, "%02x", md[i]);
    hex += b;
  }
  return hex;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string curve_to_csv(const StressStrainCurve& c) {
  std::string s = "strain,stress_mpa\n";
  for (std::size_t i = 0; i < c.strain.size(); ++i) s += fmt_double(c.strain[i]) + "," + fmt_double(c.stress[i]) + "\n";
  return s;
}

inline void write_curve_csv(const fs::path& path, const StressStrainCurve& c) { write_text_file(path, curve_to_csv(c)); }

/// Reads `strain,stress_mpa` (header optional).
inline StressStrainCurve read_curve_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  StressStrainCurve c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected two columns");
    try {
      const double e = std::stod(line.substr(0, comma)), s = std::stod(line.substr(comma + 1));
      c.strain.push_back(e);
      c.stress.push_back(s);
    } catch (const std::exception&) {
      if (lineno == 1) continue;  // header
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": not a number");
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

inline json to_json(const MaterialParams& p) {
  json j = json::object();
  for (const auto& [name, ptr] : material_param_fields()) j[name] = p.*ptr;
  return j;
}

/// Missing keys keep their defaults.
inline MaterialParams material_from_json(const json& j, MaterialParams p = {}) {
  if (!j.is_object()) throw InputError("material: expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number()) throw InputError("material: '" + k + "' must be a number");
    material_param(p, k) = v.get<double>();
  }
  p.validate();
  return p;
}

inline json to_json(const GrainSizeSpec& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"min_cut", s.min_cut}, {"max_cut", s.max_cut}};
}

inline GrainSizeSpec grain_size_from_json(const json& j) {
  const std::string w = "grain_size";
  require_keys(j, {"mean", "std", "min_cut", "max_cut"}, w);
  const double mean = get_or(j, "mean", 20.0, w), sd = get_or(j, "std", 8.0, w);
  auto s = GrainSizeSpec::with_default_cuts(mean, sd);
  s.min_cut = get_or(j, "min_cut", s.min_cut, w);
  s.max_cut = get_or(j, "max_cut", s.max_cut, w);
  s.validate();
  return s;
}

/// Grains as {phi1, Phi, phi2 (deg), diameter, volume_fraction, component}.
/// Doubles survive the round trip exactly.
inline json to_json(const GrainPopulation& pop) {
  json arr = json::array();
  for (const auto& g : pop.grains)
    arr.push_back({{"phi1", g.orientation.phi1},
                   {"Phi", g.orientation.Phi},
                   {"phi2", g.orientation.phi2},
                   {"diameter", g.diameter},
                   {"volume_fraction", g.volume_fraction},
                   {"component", std::string(abbrev(g.component))}});
  return {{"grains", arr}};
}

inline GrainPopulation population_from_json(const json& j) {
  require_keys(j, {"grains"}, "population");
  const auto& arr = j.at("grains");
  if (!arr.is_array() || arr.empty()) throw InputError("population: 'grains' must be a non-empty array");
  GrainPopulation pop;
  double total = 0.0;
  for (const auto& e : arr) {
    const std::string w = "population grain";
    require_keys(e, {"phi1", "Phi", "phi2", "diameter", "volume_fraction", "component"}, w);
    Grain g;
    g.orientation = {get_required<double>(e, "phi1", w), get_required<double>(e, "Phi", w),
                     get_required<double>(e, "phi2", w)};
    g.diameter = get_required<double>(e, "diameter", w);
    g.volume_fraction = get_required<double>(e, "volume_fraction", w);
    g.component = component_from_string(get_or<std::string>(e, "component", "Random", w));
    if (!(g.diameter > 0.0) || !(g.volume_fraction > 0.0))
      throw InputError("population: diameters and volume fractions must be positive");
    total += g.volume_fraction;
    pop.grains.push_back(g);
  }
  if (std::abs(total - 1.0) > 1e-9) throw InputError("population: volume fractions must sum to 1");
  return pop;
}

inline json to_json(const LoadingProgram& l) {
  return {{"target_strain", l.target_strain}, {"strain_rate", l.strain_rate}, {"n_steps", l.n_steps},
          {"output_grid", l.output_grid}};
}

/// Either an explicit `output_grid` or `n_output` evenly spaced points.
inline LoadingProgram loading_from_json(const json& j) {
  const std::string w = "loading";
  require_keys(j, {"target_strain", "strain_rate", "n_steps", "n_output", "output_grid"}, w);
  LoadingProgram l;
  l.target_strain = get_or(j, "target_strain", l.target_strain, w);
  l.strain_rate = get_or(j, "strain_rate", l.strain_rate, w);
  l.n_steps = get_or(j, "n_steps", l.n_steps, w);
  if (j.contains("output_grid") && j.contains("n_output"))
    throw InputError("loading: give either output_grid or n_output, not both");
  if (j.contains("output_grid")) l.output_grid = get_or(j, "output_grid", std::vector<double>{}, w);
  else l.output_grid = linspace(0.0, l.target_strain, get_or<std::size_t>(j, "n_output", 101, w));
  l.validate();
  return l;
}

inline json to_json(const TextureBounds& b) {
  json arr = json::array();
  for (int i = 0; i < 8; ++i)
    arr.push_back({{"name", std::string(kComponentAbbrev[i])}, {"min", b.bounds[i].min}, {"max", b.bounds[i].max}});
  return {{"components", arr}};
}

/// {"components": [{"name": "Cb", "min": 2.5, "max": 73.81}, ...]} with all
/// eight components, or the preset name "weld_ebsd".
inline TextureBounds texture_bounds_from_json(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "weld_ebsd") return TextureBounds::weld_ebsd();
    throw InputError("texture_bounds: unknown preset '" + j.get<std::string>() + "'");
  }
  const std::string w = "texture_bounds";
  require_keys(j, {"components"}, w);
  const auto& arr = j.at("components");
  if (!arr.is_array()) throw InputError("texture_bounds: 'components' must be an array");
  TextureBounds b;
  std::set<int> seen;
  for (const auto& e : arr) {
    require_keys(e, {"name", "min", "max"}, w);
    const auto c = component_from_string(get_required<std::string>(e, "name", w));
    if (c == Component::Random) throw InputError("texture_bounds: Random takes the remainder, no bound allowed");
    if (!seen.insert(static_cast<int>(c)).second) throw InputError("texture_bounds: duplicate component");
    b.bounds[static_cast<int>(c)] = {get_required<double>(e, "min", w), get_required<double>(e, "max", w)};
  }
  if (seen.size() != 8) throw InputError("texture_bounds: all eight components must be given");
  b.validate();
  return b;
}

inline json weights_to_json(const TextureWeights& w) {
  json j = json::object();
  for (int i = 0; i < 8; ++i) j[std::string(kComponentAbbrev[i])] = 100.0 * w.fractions[i];
  return j;
}

/// Percent per component; omitted components are 0; the rest is Random.
inline TextureWeights weights_from_json(const json& j) {
  if (!j.is_object()) throw InputError("weights: expected an object of percentages");
  std::array<double, 8> raw{};
  for (const auto& [k, v] : j.items()) {
    const auto c = component_from_string(k);
    if (c == Component::Random) throw InputError("weights: Random is implied by the remainder");
    if (!v.is_number()) throw InputError("weights: '" + k + "' must be a number");
    raw[static_cast<std::size_t>(c)] = v.get<double>();
  }
  return normalize_weights(raw);
}

inline json to_json(const InputSpec& s) {
  return {{"min", s.min}, {"max", s.max}, {"names", s.names}, {"distribution", "uniform"}};
}

inline InputSpec input_spec_from_json(const json& j) {
  const std::string w = "input_spec";
  require_keys(j, {"min", "max", "names", "distribution"}, w);
  if (get_or<std::string>(j, "distribution", "uniform", w) != "uniform")
    throw InputError("input_spec: only uniform inputs are supported");
  InputSpec s;
  s.min = get_required<std::vector<double>>(j, "min", w);
  s.max = get_required<std::vector<double>>(j, "max", w);
  s.names = get_or(j, "names", std::vector<std::string>{}, w);
  s.validate();
  return s;
}

inline json to_json(const PceModel& m) {
  json coef = json::array();
  for (Eigen::Index a = 0; a < m.coefficients.rows(); ++a) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.coefficients.cols(); ++c) row.push_back(m.coefficients(a, c));
    coef.push_back(std::move(row));
  }
  return {{"input_spec", to_json(m.input_spec)},
          {"max_degree", m.max_degree},
          {"multi_indices", m.multi_indices},
          {"strain_grid", m.strain_grid},
          {"coefficients", std::move(coef)}};
}

inline PceModel pce_model_from_json(const json& j) {
  const std::string w = "pce_model";
  require_keys(j, {"input_spec", "max_degree", "multi_indices", "strain_grid", "coefficients"}, w);
  PceModel m;
  m.input_spec = input_spec_from_json(j.at("input_spec"));
  m.max_degree = get_required<int>(j, "max_degree", w);
  m.multi_indices = get_required<std::vector<MultiIndex>>(j, "multi_indices", w);
  m.strain_grid = get_required<std::vector<double>>(j, "strain_grid", w);
  const auto coef = get_required<std::vector<std::vector<double>>>(j, "coefficients", w);
  if (coef.size() != m.multi_indices.size()) throw InputError("pce_model: one coefficient row per multi-index");
  m.coefficients.resize(static_cast<Eigen::Index>(coef.size()), static_cast<Eigen::Index>(m.strain_grid.size()));
  for (std::size_t a = 0; a < coef.size(); ++a) {
    if (coef[a].size() != m.strain_grid.size()) throw InputError("pce_model: coefficient row length mismatch");
    for (std::size_t c = 0; c < coef[a].size(); ++c)
      m.coefficients(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) = coef[a][c];
  }
  for (const auto& a : m.multi_indices) {
    if (a.size() != m.input_spec.size()) throw InputError("pce_model: multi-index length mismatch");
    if (total_degree(a) > m.max_degree) throw InputError("pce_model: multi-index exceeds max_degree");
  }
  if (!m.coefficients.allFinite()) throw InputError("pce_model: non-finite coefficients");
  return m;
}

/// Dimensions plus grain ids, x fastest.
inline json to_json(const VoxelMesh& m) {
  return {{"n_elem_per_edge", m.n}, {"edge_length", m.edge_length}, {"n_grains", m.n_grains},
          {"grain_id", m.grain_id}};
}

inline VoxelMesh voxel_mesh_from_json(const json& j) {
  const std::string w = "mesh";
  require_keys(j, {"n_elem_per_edge", "edge_length", "n_grains", "grain_id"}, w);
  VoxelMesh m;
  m.n = get_required<int>(j, "n_elem_per_edge", w);
  m.edge_length = get_required<double>(j, "edge_length", w);
  m.n_grains = get_required<std::size_t>(j, "n_grains", w);
  m.grain_id = get_required<std::vector<int>>(j, "grain_id", w);
  if (m.n < 1 || m.grain_id.size() != m.num_elements()) throw InputError("mesh: grain_id size mismatch");
  for (int g : m.grain_id)
    if (g < 0 || static_cast<std::size_t>(g) >= m.n_grains) throw InputError("mesh: grain id out of range");
  return m;
}

inline std::vector<ParameterBox> parameter_boxes_from_json(const json& j) {
  if (!j.is_array()) throw InputError("free_parameters: expected an array");
  std::vector<ParameterBox> out;
  for (const auto& e : j) {
    require_keys(e, {"name", "lo", "hi"}, "free_parameters");
    out.push_back({get_required<std::string>(e, "name", "free_parameters"),
                   get_required<double>(e, "lo", "free_parameters"),
                   get_required<double>(e, "hi", "free_parameters")});
  }
  return out;
}

inline json to_json(const CalibrationResult& r, const CalibrationSpec& spec) {
  json free = json::object();
  for (std::size_t k = 0; k < spec.free_parameters.size(); ++k) free[spec.free_parameters[k].name] = r.best_free[k];
  return {{"best_rms_mpa", r.best_rms}, {"best_free_parameters", free}, {"material", to_json(r.best)},
          {"evaluations", r.evaluations}, {"stop_reason", r.stop_reason}};
}

inline std::string trace_to_csv(const CalibrationResult& r, const CalibrationSpec& spec) {
  std::string s = "evaluation";
  for (const auto& b : spec.free_parameters) s += "," + b.name;
  s += ",rms_mpa,best_rms_mpa,failed\n";
  for (const auto& t : r.trace) {
    s += std::to_string(t.evaluation);
    for (double v : t.parameters) s += "," + fmt_double(v);
    s += "," + fmt_double(t.error) + "," + fmt_double(t.best_so_far) + "," + (t.failed ? "1" : "0") + "\n";
  }
  return s;
}

}  // namespace texuq
