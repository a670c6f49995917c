#pragma once

// Crystal orientations (Bunge ZXZ Euler angles), ideal rolling/weld texture
// components, texture-fraction bounds and grain-orientation sampling.

#include "texuq/core.hpp"

#include <Eigen/Geometry>

#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace texuq {

/// Bunge (phi1, Phi, phi2) in degrees. The associated rotation
/// R = Rz(phi1) Rx(Phi) Rz(phi2) maps crystal-frame vectors to the sample
/// frame: v_sample = R v_crystal.
struct EulerAngles {
  double phi1 = 0.0;
  double Phi = 0.0;
  double phi2 = 0.0;
};

inline double wrap_360(double a) {
  double w = std::fmod(a, 360.0);
  if (w < 0.0) w += 360.0;
  if (w >= 360.0) w -= 360.0;
  return w;
}

/// Brings angles into phi1, phi2 in [0, 360) and Phi in [0, 180] without
/// changing the rotation they describe.
inline EulerAngles wrap(EulerAngles e) {
  double Phi = wrap_360(e.Phi);
  if (Phi > 180.0) {
    // Rx(-t) = Rz(180) Rx(t) Rz(180)
    Phi = 360.0 - Phi;
    e.phi1 += 180.0;
    e.phi2 += 180.0;
  }
  return {wrap_360(e.phi1), Phi, wrap_360(e.phi2)};
}

inline Mat3 euler_to_matrix(const EulerAngles& e) {
  const double c1 = std::cos(deg2rad(e.phi1)), s1 = std::sin(deg2rad(e.phi1));
  const double c = std::cos(deg2rad(e.Phi)), s = std::sin(deg2rad(e.Phi));
  const double c2 = std::cos(deg2rad(e.phi2)), s2 = std::sin(deg2rad(e.phi2));
  Mat3 r;
  r << c1 * c2 - s1 * s2 * c, -c1 * s2 - s1 * c2 * c, s1 * s,
       s1 * c2 + c1 * s2 * c, -s1 * s2 + c1 * c2 * c, -c1 * s,
       s * s2, s * c2, c;
  return r;
}

inline EulerAngles matrix_to_euler(const Mat3& r) {
  const double c = std::clamp(r(2, 2), -1.0, 1.0);
  const double Phi = std::acos(c);
  double phi1 = 0.0, phi2 = 0.0;
  if (std::sin(Phi) > 1e-10) {
    phi1 = std::atan2(r(0, 2), -r(1, 2));
    phi2 = std::atan2(r(2, 0), r(2, 1));
  } else {
    // gimbal lock: only phi1 +/- phi2 is defined, put it all in phi1
    phi1 = std::atan2(r(1, 0), r(0, 0));
  }
  return wrap({rad2deg(phi1), rad2deg(Phi), rad2deg(phi2)});
}

// ---------------------------------------------------------------------------
// Texture components
// ---------------------------------------------------------------------------

enum class Component : int { Cube = 0, Goss, Brass, S1, S2, S3, Copper, Taylor, Random };

inline constexpr int kNumTextureComponents = 8;  // excluding Random

inline constexpr std::array<std::string_view, 9> kComponentAbbrev{"Cb", "Gs", "Bs", "S1", "S2",
                                                                  "S3", "Cu", "Ty", "Random"};
inline constexpr std::array<std::string_view, 9> kComponentName{
    "Cube", "Goss", "Brass", "S1", "S2", "S3", "Copper", "Taylor", "Random"};

inline std::string_view abbrev(Component c) { return kComponentAbbrev[static_cast<int>(c)]; }

/// Accepts either the two-letter abbreviation or the full name.
inline Component component_from_string(std::string_view s) {
  for (int i = 0; i < 9; ++i)
    if (s == kComponentAbbrev[i] || s == kComponentName[i]) return static_cast<Component>(i);
  throw InputError("unknown texture component '" + std::string(s) + "'");
}

struct TextureComponent {
  Component id = Component::Random;
  std::optional<EulerAngles> ideal;  // absent for Random
  double spread_fwhm = 15.0;         // degrees
};

/// Ideal orientations and spreads for all nine components.
struct TextureLibrary {
  std::array<TextureComponent, 9> components;

  const TextureComponent& operator[](Component c) const {
    return components[static_cast<std::size_t>(c)];
  }
  TextureComponent& operator[](Component c) { return components[static_cast<std::size_t>(c)]; }

  static TextureLibrary defaults(double spread_fwhm = 15.0) {
    TextureLibrary lib;
    const std::array<EulerAngles, 8> ideals{{
        {0.0, 0.0, 0.0},     // Cube
        {0.0, 45.0, 0.0},    // Goss
        {35.0, 45.0, 0.0},   // Brass
        {59.0, 34.0, 65.0},  // S1
        {53.0, 75.0, 34.0},  // S2
        {27.0, 58.0, 18.0},  // S3
        {90.0, 35.0, 45.0},  // Copper
        {90.0, 27.0, 45.0},  // Taylor
    }};
    for (int i = 0; i < 8; ++i)
      lib.components[i] = {static_cast<Component>(i), ideals[i], spread_fwhm};
    lib.components[8] = {Component::Random, std::nullopt, spread_fwhm};
    return lib;
  }
};

/// Volume fractions of the eight named components; whatever is left is Random.
struct TextureWeights {
  std::array<double, 8> fractions{};

  double random_fraction() const {
    double s = 0.0;
    for (double f : fractions) s += f;
    return 1.0 - s;
  }
  double sum() const { return 1.0 - random_fraction(); }
};

struct FractionBound {
  double min = 0.0;  // percent
  double max = 0.0;  // percent
};

/// Per-component [min, max] volume percentages.
struct TextureBounds {
  std::array<FractionBound, 8> bounds{};

  void validate() const {
    for (int i = 0; i < 8; ++i) {
      const auto& b = bounds[i];
      if (!(b.min >= 0.0 && b.max <= 100.0 && b.min <= b.max))
        throw InputError("invalid texture bound for " + std::string(kComponentAbbrev[i]));
    }
  }
  std::vector<double> lower() const {
    std::vector<double> v(8);
    for (int i = 0; i < 8; ++i) v[i] = bounds[i].min;
    return v;
  }
  std::vector<double> upper() const {
    std::vector<double> v(8);
    for (int i = 0; i < 8; ++i) v[i] = bounds[i].max;
    return v;
  }

  /// Bounds measured on the electron-beam weld EBSD survey (104 map sections).
  static TextureBounds weld_ebsd() {
    TextureBounds b;
    b.bounds = {{{2.5, 73.81},
                 {0.71, 63.25},
                 {0.0, 44.86},
                 {0.01, 16.01},
                 {0.0, 18.68},
                 {0.02, 50.25},
                 {0.0, 11.48},
                 {0.0, 14.86}}};
    return b;
  }
};

/// Percentages -> fractions. Raw vectors summing above 100 % are rescaled to
/// exactly 100 %; the remainder is left to Random.
inline TextureWeights normalize_weights(const std::array<double, 8>& raw_percent) {
  double total = 0.0;
  for (double r : raw_percent) {
    if (!(r >= 0.0)) throw InputError("normalize_weights: negative or NaN entry");
    total += r;
  }
  const double scale = total > 100.0 ? 100.0 / total : 1.0;
  TextureWeights w;
  for (int i = 0; i < 8; ++i) w.fractions[i] = raw_percent[i] * scale / 100.0;
  return w;
}

inline std::array<double, 8> to_array8(const std::vector<double>& v) {
  if (v.size() != 8) throw InputError("expected 8 texture entries, got " + std::to_string(v.size()));
  std::array<double, 8> a{};
  std::copy(v.begin(), v.end(), a.begin());
  return a;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Uniformly distributed rotation on SO(3) (Shoemake quaternion method).
inline Mat3 random_rotation(RandomStream& rng) {
  const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const Eigen::Quaterniond q(b * std::cos(2.0 * kPi * u3), a * std::sin(2.0 * kPi * u2),
                             a * std::cos(2.0 * kPi * u2), b * std::sin(2.0 * kPi * u3));
  return q.normalized().toRotationMatrix();
}

inline Vec3 random_unit_vector(RandomStream& rng) {
  const double z = rng.uniform(-1.0, 1.0);
  const double t = rng.uniform(0.0, 2.0 * kPi);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(t), r * std::sin(t), z};
}

/// Named components: ideal orientation followed by a misorientation about a
/// uniformly random axis whose angle is half-normal with the component FWHM.
/// Random: uniform on SO(3).
inline EulerAngles sample_orientation(const TextureComponent& c, RandomStream& rng) {
  if (c.id == Component::Random || !c.ideal) return matrix_to_euler(random_rotation(rng));
  if (!(c.spread_fwhm > 0.0)) throw InputError("sample_orientation: spread_fwhm must be > 0");
  const double sigma = deg2rad(c.spread_fwhm) / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  const double angle = std::abs(rng.normal(0.0, sigma));
  const Vec3 axis = random_unit_vector(rng);
  const Mat3 dr = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  return matrix_to_euler(euler_to_matrix(*c.ideal) * dr);
}

struct GrainDraw {
  Component component;
  EulerAngles orientation;
};

/// Component assignment plus orientation for each grain; see
/// generate_grain_orientations.
inline std::vector<GrainDraw> draw_grain_components(const TextureWeights& w, std::size_t n_grains,
                                                    RandomStream& rng,
                                                    const TextureLibrary& lib = TextureLibrary::defaults()) {
  if (n_grains < 1) throw InputError("generate_grain_orientations: n_grains must be >= 1");
  double total = 0.0;
  for (double f : w.fractions) {
    if (!(f >= 0.0)) throw InputError("texture fractions must be non-negative");
    total += f;
  }
  if (total > 1.0 + 1e-9)
    throw InputError("texture fractions sum to " + std::to_string(total) + " > 1");
  // one substream per grain: a grain's draws do not depend on the components
  // picked for the grains before it
  const RandomStream base(rng.engine()());
  std::vector<GrainDraw> out;
  out.reserve(n_grains);
  for (std::size_t g = 0; g < n_grains; ++g) {
    RandomStream gs = base.split(g);
    const double u = gs.uniform();
    Component comp = Component::Random;
    double acc = 0.0;
    for (int i = 0; i < 8; ++i) {
      acc += w.fractions[i];
      if (u < acc) {
        comp = static_cast<Component>(i);
        break;
      }
    }
    out.push_back({comp, sample_orientation(lib[comp], gs)});
  }
  return out;
}

inline std::vector<EulerAngles> generate_grain_orientations(
    const TextureWeights& w, std::size_t n_grains, RandomStream& rng,
    const TextureLibrary& lib = TextureLibrary::defaults()) {
  std::vector<EulerAngles> out;
  for (const auto& d : draw_grain_components(w, n_grains, rng, lib)) out.push_back(d.orientation);
  return out;
}

/// LHS over the bounds box (percent), each draw passed through
/// normalize_weights. Deterministic given the stream state.
inline std::vector<TextureWeights> sample_weights(const TextureBounds& b, std::size_t n_samples,
                                                  RandomStream& rng) {
  b.validate();
  std::vector<TextureWeights> out;
  for (const auto& raw : latin_hypercube(b.lower(), b.upper(), n_samples, rng))
    out.push_back(normalize_weights(to_array8(raw)));
  return out;
}

}  // namespace texuq
