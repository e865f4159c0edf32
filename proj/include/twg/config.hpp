#pragma once
// Run configuration: JSON schema "twg.config/1" (see docs/schema.md).

#include "twg/core.hpp"
#include "twg/cross_section.hpp"
#include "twg/smooth_bumps.hpp"
#include "twg/tube3d.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace twg {

using Json = nlohmann::json;

inline constexpr const char* kConfigSchema = "twg.config/1";

struct FlowConfig {
  std::vector<Plateau> plateaus;  ///< empty: use gamma of the first Mourre window
  Real T = 1.0;
  Real dt = 0;                    ///< 0: largest stable step
  Real kmin = -8, kmax = 8;
  int samples = 0;                ///< grid for the unitary group and the position form; 0: resolve gamma
  int trajectories = 21;          ///< flow lines written to flow.csv
};

struct TubeConfig {
  Real Ltube = 10;
  Real h3 = 0.2;
  std::optional<Real> h;  ///< cross-section spacing for the tube; default geometry.h
  TwistProfile profile;  ///< beta is copied from the run
  int nev = 6;
  std::vector<Real> hs_alpha{2.0, 0.0};
  std::vector<Real> hs_L;  ///< default {L/2, L, 2L}
  bool hs = true;
  bool stochastic = false;
  int probes = 64;
};

struct RunConfig {
  GeometrySpec geometry;
  Real beta = 0;
  Real kmax = 3;
  int nk = 121;
  int nmax = 6;
  std::optional<Real> R;
  std::vector<Real> energies;
  Real delta = 0.1;
  std::optional<FlowConfig> flow;
  std::optional<TubeConfig> tube;
  std::string output_dir = "out";
  std::uint64_t seed = 1;
  Json source;  ///< parsed input, echoed into reports

  std::vector<Real> kgrid() const;
};

namespace detail {

template <class T>
T field(const Json& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

inline void require_positive(Real v, const char* what) {
  if (!(v > 0)) throw ConfigError(std::string(what) + " must be positive");
}

inline GeometrySpec parse_geometry(const Json& g, const std::filesystem::path& base) {
  if (!g.is_object()) throw ConfigError("config: 'geometry' must be an object");
  GeometrySpec s;
  const auto shape = field<std::string>(g, "shape", "rectangle");
  s.h = field<Real>(g, "h", 0.05);
  if (shape == "rectangle") {
    Rectangle r{field<Real>(g, "a", 1.0), field<Real>(g, "b", 1.0)};
    require_positive(r.a, "geometry.a");
    require_positive(r.b, "geometry.b");
    s.shape = r;
  } else if (shape == "disc") {
    Disc d{field<Real>(g, "r", 1.0)};
    require_positive(d.r, "geometry.r");
    s.shape = d;
  } else if (shape == "mask") {
    auto p = std::filesystem::path(field<std::string>(g, "path", ""));
    if (p.empty()) throw ConfigError("geometry.path is required for a mask");
    if (p.is_relative()) p = base / p;
    s.shape = Mask{p.string()};
  } else {
    throw ConfigError("geometry.shape must be rectangle, disc or mask");
  }
  require_positive(s.h, "geometry.h");
  return s;
}

inline TwistProfile parse_profile(const Json& p, const std::filesystem::path& base) {
  TwistProfile prof;
  if (p.is_null()) return prof;
  const auto kind = field<std::string>(p, "kind", "none");
  if (kind == "none") return prof;
  if (kind == "gaussian") {
    GaussianPerturbation g{field<Real>(p, "eps0", 0.1), field<Real>(p, "sigma", 1.0)};
    require_positive(g.sigma, "tube.profile.sigma");
    prof.eps = g;
  } else if (kind == "table") {
    auto path = std::filesystem::path(field<std::string>(p, "path", ""));
    if (path.empty()) throw ConfigError("tube.profile.path is required for a table profile");
    if (path.is_relative()) path = base / path;
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open profile table '" + path.string() + "'");
    prof.eps = read_profile_csv(in);
  } else {
    throw ConfigError("tube.profile.kind must be none, gaussian or table");
  }
  return prof;
}

}  // namespace detail

/// Validates and converts a parsed configuration. Relative paths resolve against `base`.
inline RunConfig parse_config(const Json& j, const std::filesystem::path& base = ".") {
  using detail::field;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const auto schema = field<std::string>(j, "schema", kConfigSchema);
  if (schema != kConfigSchema) throw ConfigError("unsupported config schema '" + schema + "'");
  RunConfig c;
  c.source = j;
  c.geometry = detail::parse_geometry(j.value("geometry", Json::object()), base);
  c.beta = field<Real>(j, "beta", 0.0);
  if (c.beta < 0) throw ConfigError("beta must be nonnegative");
  c.kmax = field<Real>(j, "kmax", 3.0);
  detail::require_positive(c.kmax, "kmax");
  c.nk = field<int>(j, "nk", 121);
  if (c.nk < 16) throw ConfigError("nk must be at least 16");
  c.nmax = field<int>(j, "nmax", 6);
  if (c.nmax < 1) throw ConfigError("nmax must be at least 1");
  if (j.contains("R") && !j["R"].is_null()) {
    c.R = field<Real>(j, "R", 0.0);
    detail::require_positive(*c.R, "R");
  }
  c.energies = field<std::vector<Real>>(j, "energies", {});
  c.delta = field<Real>(j, "delta", 0.1);
  detail::require_positive(c.delta, "delta");
  c.output_dir = field<std::string>(j, "output_dir", "out");
  c.seed = field<std::uint64_t>(j, "seed", 1);

  if (j.contains("flow") && !j["flow"].is_null()) {
    const Json& f = j["flow"];
    FlowConfig fc;
    for (const auto& p : f.value("plateaus", Json::array())) {
      if (!p.is_array() || p.size() < 2) throw ConfigError("flow.plateaus entries are [lo, hi] or [lo, hi, sign]");
      Plateau pl{p[0].get<Real>(), p[1].get<Real>(), p.size() > 2 ? p[2].get<int>() : 1};
      if (!(pl.hi >= pl.lo)) throw ConfigError("flow plateau with hi < lo");
      fc.plateaus.push_back(pl);
    }
    fc.T = field<Real>(f, "T", 1.0);
    fc.dt = field<Real>(f, "dt", 0.0);
    fc.kmin = field<Real>(f, "kmin", -8.0);
    fc.kmax = field<Real>(f, "kmax", 8.0);
    fc.samples = field<int>(f, "samples", 0);
    fc.trajectories = field<int>(f, "trajectories", 21);
    if (!(fc.kmax > fc.kmin)) throw ConfigError("flow.kmax must exceed flow.kmin");
    if (fc.samples != 0 && fc.samples < 64) throw ConfigError("flow.samples must be 0 (auto) or at least 64");
    if (fc.dt < 0) throw ConfigError("flow.dt must be nonnegative");
    c.flow = fc;
  }
  if (j.contains("tube") && !j["tube"].is_null()) {
    const Json& t = j["tube"];
    TubeConfig tc;
    tc.Ltube = field<Real>(t, "Ltube", 10.0);
    tc.h3 = field<Real>(t, "h3", 0.2);
    detail::require_positive(tc.Ltube, "tube.Ltube");
    detail::require_positive(tc.h3, "tube.h3");
    if (t.contains("h") && !t["h"].is_null()) {
      tc.h = field<Real>(t, "h", 0.0);
      detail::require_positive(*tc.h, "tube.h");
    }
    tc.profile = detail::parse_profile(t.value("profile", Json()), base);
    tc.profile.beta = c.beta;
    tc.nev = field<int>(t, "nev", 6);
    if (tc.nev < 1 || tc.nev > 30) throw ConfigError("tube.nev must be in [1, 30]");
    tc.hs = field<bool>(t, "hs", true);
    tc.hs_alpha = field<std::vector<Real>>(t, "hs_alpha", tc.hs_alpha);
    for (Real a : tc.hs_alpha)
      if (a < 0) throw ConfigError("tube.hs_alpha entries must be nonnegative");
    tc.hs_L = field<std::vector<Real>>(t, "hs_L", {0.5 * tc.Ltube, tc.Ltube, 2 * tc.Ltube});
    for (Real L : tc.hs_L) detail::require_positive(L, "tube.hs_L entries");
    tc.stochastic = field<bool>(t, "stochastic", false);
    tc.probes = field<int>(t, "probes", 64);
    c.tube = tc;
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_config(j, path.parent_path());
}

inline std::vector<Real> RunConfig::kgrid() const {
  std::vector<Real> g(nk);
  for (int i = 0; i < nk; ++i) g[i] = -kmax + 2 * kmax * i / (nk - 1);
  return g;
}

}  // namespace twg
