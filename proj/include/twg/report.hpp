#pragma once
// JSON bundles, SVG figures and the markdown summary. Output is deterministic: no clocks,
// no hash-ordered containers, fixed number formatting in SVG.

#include "twg/config.hpp"
#include "twg/conjugate_flow.hpp"
#include "twg/critical_levels.hpp"
#include "twg/mourre.hpp"
#include "twg/tube3d.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace twg {

inline constexpr int kSchemaVersion = 1;

inline std::string schema_name(const std::string& kind) { return "twg." + kind + "/" + std::to_string(kSchemaVersion); }

/// Non-finite values become null.
inline Json num(Real x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

inline Json to_json(const std::vector<Real>& v) {
  Json a = Json::array();
  for (Real x : v) a.push_back(num(x));
  return a;
}

inline Json to_json(const VectorR& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v[i]));
  return a;
}

inline Json geometry_json(const GeometrySpec& g) {
  Json j;
  j["h"] = g.h;
  if (const auto* r = std::get_if<Rectangle>(&g.shape)) {
    j["shape"] = "rectangle";
    j["a"] = r->a;
    j["b"] = r->b;
  } else if (const auto* d = std::get_if<Disc>(&g.shape)) {
    j["shape"] = "disc";
    j["r"] = d->r;
  } else {
    j["shape"] = "mask";
    j["path"] = std::get<Mask>(g.shape).path;
  }
  return j;
}

inline Json to_json(const CriticalPoint& p) {
  Json j;
  j["kind"] = p.kind == CriticalKind::stationary ? "stationary" : "crossing";
  j["E"] = num(p.E);
  j["k0"] = num(p.k0);
  j["branch"] = p.branch;
  j["slope"] = num(p.slope);
  if (p.kind == CriticalKind::crossing) {
    j["branch2"] = p.branch2;
    j["slope2"] = num(p.slope2);
    j["gap"] = num(p.gap);
  }
  j["endpoint"] = p.endpoint;
  j["refinement_failed"] = p.refinement_failed;
  return j;
}

inline Json to_json(const std::vector<CriticalPoint>& ps) {
  Json a = Json::array();
  for (const auto& p : ps) a.push_back(to_json(p));
  return a;
}

inline Json to_json(const CriticalAnalysis& a) {
  Json j;
  j["schema"] = schema_name("critical");
  j["R"] = num(a.bound.R);
  j["R_ceiling"] = num(a.levels.Rceiling);
  j["E1"] = to_json(a.levels.E1set);
  j["E2"] = to_json(a.levels.E2set);
  j["same_sign_crossings"] = to_json(a.levels.benign);
  j["flagged"] = to_json(a.levels.flagged);
  j["E"] = to_json(a.levels.Eset);
  j["E_c"] = to_json(a.levels.Ecset);
  j["window_bound"] = {{"R", num(a.bound.R)}, {"kR", num(a.bound.kR)}, {"NR", a.bound.NR}, {"LR", a.bound.LR}};
  j["bkrs"] = {{"E1_at_0", num(a.fit.e1_at_zero)}, {"c_ls", num(a.fit.c_ls)}, {"c_lower", num(a.fit.c_lower)}};
  j["warnings"] = a.levels.warnings;
  return j;
}

inline Json to_json(const MourreWindow& w) {
  Json j;
  j["E"] = w.E;
  j["delta"] = w.delta;
  j["delta_requested"] = w.delta_requested;
  j["halvings"] = w.halvings;
  j["eta"] = w.eta;
  j["N"] = w.N;
  j["bypass"] = w.bypass;
  Json kp = Json::array();
  for (const auto& k : w.kpoints)
    kp.push_back({{"branch", k.branch}, {"k", num(k.k)}, {"slope", num(k.slope)}, {"class", k.cls}});
  j["kpoints"] = kp;
  Json js = Json::array();
  for (const auto& J : w.J)
    js.push_back({{"lo", num(J.J.lo)},
                  {"hi", num(J.J.hi)},
                  {"class", J.cls},
                  {"sign", J.sign},
                  {"witness", num(J.witness)},
                  {"branches", J.branches}});
  j["J"] = js;
  j["notes"] = w.notes;
  return j;
}

inline Json to_json(const MourreReport& r) {
  Json j;
  j["c_est"] = num(r.c_est);
  j["d0"] = num(r.d0);
  j["d1"] = num(r.d1);
  j["d_scale"] = num(r.d_scale);
  j["pass"] = r.pass;
  j["has_J0"] = r.has_J0;
  j["has_J1"] = r.has_J1;
  if (r.crossterm)
    j["crossterm"] = {{"btilde", num(r.crossterm->btilde)},
                      {"C_est", num(r.crossterm->C_est)},
                      {"max_ratio", num(r.crossterm->max_ratio)},
                      {"samples", r.crossterm->samples}};
  Json pk = Json::array();
  for (const auto& s : r.per_k) pk.push_back({num(s.k), num(s.rho_min), s.rank});
  j["per_k"] = pk;  // [k, min Rayleigh quotient, rank of chi]
  return j;
}

inline Json to_json(const TubeSpectrum& s) {
  return {{"Ltube", s.Ltube},
          {"values", to_json(s.values)},
          {"residuals", to_json(s.residuals)},
          {"E1_at_0", num(s.e1_ref)},
          {"below_edge", s.below_edge},
          {"candidates", to_json(s.candidates)}};
}

inline Json to_json(const HsDiagnostic& d) {
  Json e = Json::array();
  for (const auto& x : d.entries)
    e.push_back({{"Ltube", x.Ltube}, {"norm", num(x.norm)}, {"std_error", num(x.std_error)}, {"dim", x.dim}});
  return {{"alpha", d.alpha}, {"entries", e}, {"ratios", to_json(d.ratios)}};
}

/// Fixed-precision formatting for SVG coordinates.
inline std::string fmt(Real x, int prec = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, x);
  return buf;
}

/// Minimal SVG line plot in data coordinates.
class SvgPlot {
 public:
  SvgPlot(Real xmin, Real xmax, Real ymin, Real ymax, int width = 720, int height = 480)
      : x0_(xmin), x1_(xmax), y0_(ymin), y1_(ymax), w_(width), h_(height) {
    if (!(x1_ > x0_)) x1_ = x0_ + 1;
    if (!(y1_ > y0_)) y1_ = y0_ + 1;
  }

  Real px(Real x) const { return kMargin + (x - x0_) / (x1_ - x0_) * (w_ - 2 * kMargin); }
  Real py(Real y) const { return h_ - kMargin - (y - y0_) / (y1_ - y0_) * (h_ - 2 * kMargin); }

  void polyline(const std::vector<Real>& xs, const std::vector<Real>& ys, const std::string& color, Real width = 1.2) {
    std::ostringstream os;
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << fmt(width, 1) << "\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!std::isfinite(ys[i])) continue;
      os << fmt(px(xs[i])) << ',' << fmt(py(std::clamp(ys[i], y0_, y1_))) << ' ';
    }
    os << "\"/>\n";
    body_ += os.str();
  }

  void hline(Real y, const std::string& color, bool dashed = true) {
    if (y < y0_ || y > y1_) return;
    body_ += "<line x1=\"" + fmt(px(x0_)) + "\" x2=\"" + fmt(px(x1_)) + "\" y1=\"" + fmt(py(y)) + "\" y2=\"" +
             fmt(py(y)) + "\" stroke=\"" + color + "\" stroke-width=\"0.8\"" +
             (dashed ? " stroke-dasharray=\"4,3\"" : "") + "/>\n";
  }

  void band(Real ylo, Real yhi, const std::string& color, Real opacity = 0.15) {
    ylo = std::max(ylo, y0_);
    yhi = std::min(yhi, y1_);
    if (!(yhi > ylo)) return;
    body_ += "<rect x=\"" + fmt(px(x0_)) + "\" y=\"" + fmt(py(yhi)) + "\" width=\"" + fmt(px(x1_) - px(x0_)) +
             "\" height=\"" + fmt(py(ylo) - py(yhi)) + "\" fill=\"" + color + "\" fill-opacity=\"" + fmt(opacity) +
             "\"/>\n";
  }

  void column(Real xlo, Real xhi, const std::string& color, Real opacity = 0.2) {
    xlo = std::max(xlo, x0_);
    xhi = std::min(xhi, x1_);
    if (!(xhi > xlo)) return;
    body_ += "<rect x=\"" + fmt(px(xlo)) + "\" y=\"" + fmt(py(y1_)) + "\" width=\"" +
             fmt(std::max<Real>(px(xhi) - px(xlo), 1.0)) + "\" height=\"" + fmt(py(y0_) - py(y1_)) + "\" fill=\"" +
             color + "\" fill-opacity=\"" + fmt(opacity) + "\"/>\n";
  }

  void text(Real x, Real y, const std::string& s, int size = 12) {
    body_ += "<text x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" font-size=\"" + std::to_string(size) +
             "\" font-family=\"sans-serif\">" + s + "</text>\n";
  }

  std::string str(const std::string& title, const std::string& xlabel, const std::string& ylabel) const {
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_ << "\" height=\"" << h_ << "\" viewBox=\"0 0 "
       << w_ << ' ' << h_ << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << w_ - 2 * kMargin << "\" height=\""
       << h_ - 2 * kMargin << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const Real x = x0_ + (x1_ - x0_) * i / 4, y = y0_ + (y1_ - y0_) * i / 4;
      os << "<text x=\"" << fmt(px(x) - 12) << "\" y=\"" << h_ - kMargin + 16
         << "\" font-size=\"11\" font-family=\"sans-serif\">" << fmt(x) << "</text>\n";
      os << "<text x=\"4\" y=\"" << fmt(py(y) + 4) << "\" font-size=\"11\" font-family=\"sans-serif\">" << fmt(y)
         << "</text>\n";
    }
    os << "<text x=\"" << w_ / 2 - 60 << "\" y=\"20\" font-size=\"14\" font-family=\"sans-serif\">" << title
       << "</text>\n";
    os << "<text x=\"" << w_ / 2 << "\" y=\"" << h_ - 8 << "\" font-size=\"12\" font-family=\"sans-serif\">" << xlabel
       << "</text>\n";
    os << "<text x=\"4\" y=\"20\" font-size=\"12\" font-family=\"sans-serif\">" << ylabel << "</text>\n";
    os << body_ << "</svg>\n";
    return os.str();
  }

 private:
  static constexpr int kMargin = 50;
  Real x0_, x1_, y0_, y1_;
  int w_, h_;
  std::string body_;
};

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

/// Branches of the band table; optional critical levels (dashed) and a Mourre window overlay.
inline std::string bands_svg(const BandTable& t, const std::vector<Branch>& branches,
                             const CriticalLevelSet* levels = nullptr, const MourreWindow* w = nullptr) {
  Real ymin = t.energies.row(0).minCoeff(), ymax = t.energies.row(t.nmax - 1).maxCoeff();
  if (w) {
    ymin = std::min(ymin, w->E - 3 * w->delta);
    ymax = std::min(ymax, std::max(w->E + 3 * w->delta, ymin + 1));
  }
  const Real pad = 0.05 * (ymax - ymin);
  SvgPlot p(t.kgrid.front(), t.kgrid.back(), ymin - pad, ymax + pad);
  if (w) {
    p.band(w->E - w->delta, w->E + w->delta, "#2ca02c");
    for (const auto& J : w->J) p.column(J.J.lo, J.J.hi, J.cls == 0 ? "#1f77b4" : "#d62728");
  }
  if (levels)
    for (Real e : levels->Ecset) p.hline(e, "#888888");
  for (const auto& b : branches) {
    std::vector<Real> xs(t.kgrid.begin() + b.j0, t.kgrid.begin() + b.j1() + 1);
    p.polyline(xs, b.values, palette(static_cast<std::size_t>(b.label)));
  }
  std::string title = "bands, beta = " + fmt(t.beta, 3);
  if (w) title = "Mourre window E = " + fmt(w->E, 4) + ", delta = " + fmt(w->delta, 4);
  return p.str(title, "k", "E");
}

inline std::string flow_svg(const FlowResult& r) {
  const Real kmin = r.phi.minCoeff(), kmax = r.phi.maxCoeff();
  SvgPlot p(r.tgrid.front(), r.tgrid.back(), kmin, kmax);
  for (Eigen::Index c = 0; c < r.phi.cols(); ++c) {
    std::vector<Real> ys(r.phi.rows());
    for (Eigen::Index i = 0; i < r.phi.rows(); ++i) ys[i] = r.phi(i, c);
    p.polyline(r.tgrid, ys, palette(static_cast<std::size_t>(c)));
  }
  return p.str("flow lines phi(t, k)", "t", "phi");
}

}  // namespace twg
