// Acceptance run: one pass/fail line per criterion.
//
//   acceptance [--only 1,4,...] [--known-fail 2]
//
// Exit status is 0 when every criterion outside --known-fail passes and every known failure
// still fails; 1 otherwise.

#include "oracles/oracles.hpp"
#include "twg/conjugate_flow.hpp"
#include "twg/mourre.hpp"
#include "twg/tube3d.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace twg;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string f(Real x, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, x);
  return buf;
}

DiscreteOperators square_ops(Real h, int nmu = 6) { return assemble_operators(build_grid({Rectangle{1, 1}, h}), nmu); }
DiscreteOperators disc_ops(Real h) { return assemble_operators(build_grid({Disc{1}, h})); }

struct Sweep {
  FiberFamily fam;
  BandTable table;
  std::vector<Branch> branches;
  Sweep(const DiscreteOperators& ops, Real beta, std::vector<Real> kgrid, int nmax)
      : fam(ops, beta), table(sweep_bands(fam, kgrid, nmax)), branches(track_branches(table)) {}
};

// Disc at h = 1/50, beta = 0.2, |k| <= 2: shared by the band, velocity and inequality criteria.
const Sweep& disc50() {
  static const DiscreteOperators ops = disc_ops(1.0 / 50);
  static const Sweep s(ops, 0.2, uniform_grid(-2, 2, 21), 6);
  return s;
}

Outcome c1_cross_section() {
  const Real exact = 2 * pi * pi;
  const Real m16 = square_ops(1.0 / 16, 1).mu1(), m32 = square_ops(1.0 / 32, 1).mu1(), m64 = square_ops(1.0 / 64, 1).mu1();
  const Real rel = std::abs(m64 - exact) / exact;
  const Real r1 = std::abs(m16 - exact) / std::abs(m32 - exact), r2 = std::abs(m32 - exact) / std::abs(m64 - exact);
  return {rel <= 3e-3 && r1 >= 3.5 && r1 <= 4.5 && r2 >= 3.5 && r2 <= 4.5,
          "mu1(h=1/64) = " + f(m64, 8) + ", rel err " + f(rel, 3) + " (<= 3e-3); error ratios " + f(r1) + ", " +
              f(r2) + " (in [3.5, 4.5])"};
}

Outcome c2_weyl() {
  const Real lambda = 80 * pi * pi;
  const int lattice = oracle::rectangle_count(1, 1, lambda);
  const Real exact_ratio = lattice * 4 * pi / lambda;
  const DiscreteOperators ops = square_ops(1.0 / 64, 0);
  const int count = count_below(ops.L, lambda);
  const Real ratio = count * 4 * pi / lambda;
  // The computed count must reproduce the exact count before its ratio means anything.
  const bool ok = count == lattice && ratio >= 0.85 && ratio <= 1.15;
  return {ok, "N(80 pi^2): computed " + std::to_string(count) + " (h=1/64), exact lattice " + std::to_string(lattice) +
                  "; ratio " + f(ratio) + " computed, " + f(exact_ratio) + " exact (target [0.85, 1.15])"};
}

Outcome c3_disc_bands() {
  const auto& s = disc50();
  Real worst = 0, wk = 0;
  int wn = 0;
  for (std::size_t j = 0; j < s.table.nk(); ++j) {
    const auto env = oracle::disc_envelope(0.2, s.table.kgrid[j], 6);
    for (int n = 0; n < 6; ++n) {
      const Real e = std::abs(s.table.energies(n, j) - env[n]) / env[n];
      if (e > worst) {
        worst = e;
        wk = s.table.kgrid[j];
        wn = n + 1;
      }
    }
  }
  return {worst <= 0.02, "disc h=1/50, beta=0.2, 21 k in [-2, 2], n <= 6: max rel deviation from Bessel envelope " +
                             f(worst, 3) + " (n=" + std::to_string(wn) + ", k=" + f(wk) + "; <= 0.02)"};
}

Outcome c4_feynman_hellmann() {
  const auto& s = disc50();
  const FhCheck c = fh_check(s.fam, s.table, 6, 1e-3, 1);
  return {c.max_rel_error <= 1e-4 && c.unmatched == 0 && c.samples > 0,
          "max rel error " + f(c.max_rel_error, 3) + " over " + std::to_string(c.samples) +
              " band/k samples at dk = 1e-3 (<= 1e-4), unmatched " + std::to_string(c.unmatched)};
}

Outcome c5_inequalities() {
  const auto& s = disc50();
  const InequalityReport r = check_band_inequalities(s.table, s.branches);
  const BkrsFit fit = fit_bkrs(s.table, s.fam);
  const bool ok = r.holds(1e-8) && fit.c_ls > 0 && fit.c_ls <= 1 + 1e-8;
  return {ok, "velocity excess " + f(r.velocity_bound_excess, 3) + ", sqrt-Lipschitz excess " +
                  f(r.sqrt_lipschitz_excess, 3) + " (<= 1e-8); fitted c = " + f(fit.c_ls, 5) + " (in (0, 1])"};
}

Outcome c6_critical_levels() {
  // beta = 0: only stationary points, at the transverse eigenvalues.
  const DiscreteOperators sq = square_ops(1.0 / 32, 8);
  const Sweep s0(sq, 0.0, uniform_grid(-2, 2, 41), 6);
  const CriticalAnalysis a0 = analyze_critical(s0.fam, s0.table, s0.branches, 100);
  std::vector<Real> mus;
  for (Real m : sq.mu)
    if (m < 100 && (mus.empty() || m - mus.back() > 1e-6)) mus.push_back(m);
  Real dev = a0.levels.Eset.size() == mus.size() ? 0.0 : 1e300;
  for (std::size_t i = 0; i < mus.size() && i < a0.levels.Eset.size(); ++i)
    dev = std::max(dev, std::abs(a0.levels.Eset[i] - mus[i]));
  const bool part1 = a0.levels.E2set.empty() && dev <= 1e-4;

  // Disc, beta = 0.2: the m = +-1 crossing at k = 0.
  const DiscreteOperators dops = disc_ops(1.0 / 80);
  const Sweep s1(dops, 0.2, uniform_grid(-0.3, 0.3, 13), 3);
  const CriticalAnalysis a1 = analyze_critical(s1.fam, s1.table, s1.branches, 16);
  const Real j11 = oracle::bessel_zero(1, 1);
  const Real target = j11 * j11 + 0.04;
  Real best = 1e300;
  for (const auto& p : a1.levels.E2set) best = std::min(best, std::abs(p.E - target));
  const Real rel = best / target;
  const bool part2 = rel <= 1e-2;
  return {part1 && part2, "beta=0 square h=1/32: E2 size " + std::to_string(a0.levels.E2set.size()) + ", " +
                              std::to_string(a0.levels.Eset.size()) + " levels vs " + std::to_string(mus.size()) +
                              " mu_n < 100, max dev " + f(dev, 3) + "; disc h=1/80 crossing vs j11^2+beta^2 = " +
                              f(target, 6) + ": rel dev " + f(rel, 3) + " (<= 1e-2, abs " + f(best, 3) + ")"};
}

Outcome c7_mourre() {
  const DiscreteOperators sq = square_ops(1.0 / 16);
  const Sweep s(sq, 0.0, uniform_grid(-3, 3, 121), 4);
  const CriticalAnalysis a = analyze_critical(s.fam, s.table, s.branches, 40);
  const MourreRun run = run_mourre(s.fam, s.table, s.branches, a.levels, sq.mu1() + 1, 0.1);
  const Real target = 2 * std::sqrt(0.9);
  const Real c0 = run.report.c_est;
  const bool part1 = c0 >= 0.95 * target && c0 <= 1.05 * target;

  // A same-sign crossing of the beta = 1 disc: the window has J1 components.
  const DiscreteOperators d = disc_ops(1.0 / 12);
  const Sweep t(d, 1.0, uniform_grid(-6, 6, 121), 8);
  const CriticalAnalysis b = analyze_critical(t.fam, t.table, t.branches, 36);
  Real E = 0;
  for (const auto& p : b.levels.benign)
    if (p.k0 > 0 && (E == 0 || p.E < E)) E = p.E;
  std::vector<Real> cs;
  bool has_j1 = true;
  for (Real delta : {0.1, 0.05, 0.025}) {
    const MourreRun r = run_mourre(t.fam, t.table, t.branches, b.levels, E, delta);
    has_j1 = has_j1 && r.report.has_J1;
    cs.push_back(r.report.c_est);
  }
  const bool part2 = E > 0 && has_j1 && cs[0] > 0 && cs[1] > cs[0] && cs[2] > cs[1];
  return {part1 && part2, "square beta=0: c_est " + f(c0, 5) + " in [" + f(0.95 * target, 5) + ", " +
                              f(1.05 * target, 5) + "]; disc J1 window at E=" + f(E, 6) + ": c_est " + f(cs[0]) +
                              " -> " + f(cs[1]) + " -> " + f(cs[2]) + " for delta 0.1, 0.05, 0.025"};
}

Outcome c8_negative_control() {
  const DiscreteOperators sq = square_ops(1.0 / 16);
  const Sweep s(sq, 0.0, uniform_grid(-3, 3, 121), 4);
  const CriticalAnalysis a = analyze_critical(s.fam, s.table, s.branches, 40);
  const Real E = a.levels.E1set.front().E;
  bool raised = false;
  try {
    build_window(s.fam, s.table, s.branches, a.levels, E, 0.1);
  } catch (const CriticalEnergyError&) {
    raised = true;
  }
  WindowOptions opt;
  opt.bypass = true;
  const MourreWindow w = build_window(s.fam, s.table, s.branches, a.levels, E, 0.1, opt);
  const MourreReport r = verify_mourre(s.fam, s.table, s.branches, w, build_gamma(w));
  const bool ok = raised && r.c_est <= 0.05 * r.d_scale;
  return {ok, std::string("critical-energy error ") + (raised ? "raised" : "NOT raised") + " at E = " + f(E, 8) +
                  "; bypass c_est " + f(r.c_est, 4) + " <= 0.05 * d-scale " + f(0.05 * r.d_scale, 4)};
}

Outcome c9_commutators() {
  const DiscreteOperators ops = square_ops(1.0 / 8);
  const FiberFamily fam(ops, 0.8);
  const BumpGamma g({{0.5, 1.5, 1}});
  const VectorC phi = fam.solve(1.0, 1).vectors.col(0);
  const auto fk = [](Real k) { return std::exp(-2 * (k - 1) * (k - 1)); };
  std::vector<CommutatorCheck> runs;
  for (int n : {121, 241, 481, 961}) runs.push_back(double_commutator_check(fam, g, uniform_grid(-2, 4, n), fk, phi));
  bool ok = true;
  std::string orders;
  for (std::size_t i = 1; i < runs.size(); ++i) {
    const Real p = std::log(runs[i - 1].c1_residual / runs[i].c1_residual) / std::log(runs[i - 1].dk / runs[i].dk);
    ok = ok && p >= 1.8 && p <= 2.2;
    orders += (orders.empty() ? "" : ", ") + f(p, 3);
  }
  const auto& last = runs.back();
  ok = ok && last.consistent_form == "direct";
  return {ok, "[H, iA] residual " + f(runs.front().c1_residual, 3) + " -> " + f(last.c1_residual, 3) +
                  ", observed orders " + orders + " (in [1.8, 2.2]); double commutator: direct " +
                  f(last.c2_residual_direct, 3) + ", displayed form " + f(last.c2_residual_paper, 3) +
                  " -> consistent form '" + last.consistent_form + "'"};
}

Outcome c10_flow() {
  const BumpGamma g({{-1.0, 1.0, 1}});
  FlowOptions tight;
  tight.local_tol = 1e-13;
  tight.max_subdivision = 24;
  Real group = 0, jac = 0;
  const Real dk = 1e-3;
  for (Real k = -3.5; k <= 3.5; k += 0.125) {
    for (Real t : {0.25, 0.5, 1.0})
      for (Real s : {0.25, 0.5, 1.0}) {
        const Real a = flow_map(g, t + s, k).first;
        const Real b = flow_map(g, t, flow_map(g, s, k).first).first;
        group = std::max(group, std::abs(a - b));
      }
    const auto at = [&](Real x) { return flow_map(g, 1.0, x, tight).first; };
    const Real fd = (-at(k + 2 * dk) + 8 * at(k + dk) - 8 * at(k - dk) + at(k - 2 * dk)) / (12 * dk);
    const Real d = flow_map(g, 1.0, k, tight).second;
    jac = std::max(jac, std::abs(fd - d) / d);
  }
  const auto fn = SampledFunction::sample(-8, 16.0 / 1024, 1024, [](Real k) {
    const Real u = (k - 0.3) / 0.6;
    return Complex(std::exp(-0.5 * u * u), 0.4 * u * std::exp(-0.5 * u * u));
  });
  Real unit = 0;
  for (Real t : {0.5, 1.0, -1.0}) unit = std::max(unit, std::abs(apply_group(g, t, fn).f.norm() / fn.norm() - 1));
  const PositionFormCheck pf = position_form_check(g, fn, 4);
  const bool ok = group <= 1e-6 && jac <= 1e-6 && unit <= 1e-6 && pf.residual <= 1e-6;
  return {ok, "group law " + f(group, 3) + ", Jacobian " + f(jac, 3) + ", unitarity " + f(unit, 3) +
                  ", position form " + f(pf.residual, 3) + " (padding 4; all <= 1e-6)"};
}

Outcome c11_tube_band_edge() {
  const DiscreteOperators ops = square_ops(1.0 / 8);
  const Real beta = 0.4;
  const FiberFamily fam(ops, beta);
  const Real e1 = fam.solve(0.0, 1).values[0];
  TwistProfile p;
  p.beta = beta;
  std::vector<Real> errs;
  bool above = true;
  std::string s;
  for (Real L : {5.0, 10.0, 20.0}) {
    const TubeOperator t = assemble_tube(ops, p, L, 0.2);
    const TubeSpectrum sp = tube_low_spectrum(t, 1, ops.mu1(), e1);
    errs.push_back(sp.values[0] - e1);
    above = above && sp.below_edge == 0 && errs.back() > 0;
    s += (s.empty() ? "" : ", ") + f(errs.back() * L * L, 4);
  }
  const Real r1 = errs[0] / errs[1], r2 = errs[1] / errs[2];
  const bool ok = above && r1 >= 3.5 && r1 <= 4.5 && r2 >= 3.5 && r2 <= 4.5;
  return {ok, "E1(0) = " + f(e1, 8) + "; (lambda1 - E1(0)) L^2 at L = 5, 10, 20: " + s + "; ratios " + f(r1) + ", " +
                  f(r2) + " (in [3.5, 4.5])"};
}

Outcome c12_hs() {
  const DiscreteOperators ops = square_ops(1.0 / 8);
  TwistProfile p;
  p.beta = 1.0;
  p.eps = GaussianPerturbation{0.5, 1.0};
  const auto d = hs_diagnostic(ops, p, {2.0, 0.0}, {5.0, 10.0, 20.0}, 0.2);
  bool ok = true;
  for (Real r : d[0].ratios) ok = ok && std::abs(r - 1) <= 0.05;
  for (Real r : d[1].ratios) ok = ok && std::abs(r / std::sqrt(2.0) - 1) <= 0.1;
  return {ok, "alpha=2 ratios " + f(d[0].ratios[0]) + ", " + f(d[0].ratios[1]) + " (within 5% of 1); alpha=0 ratios " +
                  f(d[1].ratios[0]) + ", " + f(d[1].ratios[1]) + " (within 10% of sqrt 2)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only, known_fail;
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--known-fail", known_fail, "criteria expected to fail")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"cross-section oracle", c1_cross_section},
      {"Weyl law", c2_weyl},
      {"disc band oracle", c3_disc_bands},
      {"Feynman-Hellmann", c4_feynman_hellmann},
      {"band inequalities", c5_inequalities},
      {"critical levels", c6_critical_levels},
      {"Mourre certificate", c7_mourre},
      {"negative control", c8_negative_control},
      {"commutator identities", c9_commutators},
      {"flow and group", c10_flow},
      {"tube band edge", c11_tube_band_edge},
      {"HS diagnostic", c12_hs},
  };
  const std::set<int> run(only.begin(), only.end()), expected(known_fail.begin(), known_fail.end());
  int unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!run.empty() && !run.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool known = expected.count(id) > 0;
    if (o.pass == known) ++unexpected;
    std::cout << "C" << id << (id < 10 ? "  " : " ") << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first
              << ": " << o.detail << " [" << f(secs, 3) << " s]" << (known && !o.pass ? " (known failure)" : "")
              << std::endl;
  }
  return unexpected == 0 ? 0 : 1;
}
