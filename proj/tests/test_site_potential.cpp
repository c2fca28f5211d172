#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "qmmm/harness.hpp"  // fit_slope
#include "qmmm/site_potential.hpp"

using namespace qmmm;

namespace {

Eigen::VectorXd random_vec(int n, unsigned seed, double amp) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> ud(-amp, amp);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = ud(rng);
  return v;
}

}  // namespace

TEST_CASE("stencil domain enumerates exactly the lattice ball minus the origin") {
  const auto spec = LatticeSpec::triangular();
  for (double rb : {1.2, 2.0, 3.3}) {
    const auto dom = StencilDomain::build(spec, rb, 2);
    int brute = 0;
    const int n = int(rb) + 3;
    for (int i = -2 * n; i <= 2 * n; ++i)
      for (int j = -2 * n; j <= 2 * n; ++j) {
        const Vec2 x = spec.bravais * Vec2(i, j);
        if (x.norm() > 1e-12 && x.norm() <= rb + 1e-12) ++brute;
      }
    CHECK(dom.n_offsets() == brute);
    CHECK(dom.n_dof() == 2 * brute);
    CHECK(dom.window_dof() == 2 * (brute + 1));
    for (const auto& off : dom.offsets) {
      CHECK(off.norm() > 1e-12);
      CHECK(off.norm() <= rb + 1e-12);
    }
  }
}

TEST_CASE("homogeneous site gradient matches finite differences") {
  TBParams p;
  const auto dom = StencilDomain::build(LatticeSpec::triangular(), 1.8, 2);
  const Eigen::VectorXd g = random_vec(dom.n_dof(), 7, 0.02);
  const Eigen::VectorXd grad = homogeneous_site_gradient(g, p, dom);
  for (int i = 0; i < g.size(); i += 3) {
    Eigen::VectorXd gp = g, gm = g;
    gp[i] += 1e-6;
    gm[i] -= 1e-6;
    const double fd = (homogeneous_site_potential(gp, p, dom) -
                       homogeneous_site_potential(gm, p, dom)) /
                      2e-6;
    CHECK(std::abs(grad[i] - fd) <= 1e-6);
  }
}

TEST_CASE("perfect lattice is an equilibrium of the homogeneous force") {
  TBParams p;
  for (int comps : {2, 1}) {
    TBParams q = p;
    if (comps == 1) q.z_period = 1.0;
    const auto dom = StencilDomain::build(LatticeSpec::triangular(), 2.0, comps);
    const Eigen::VectorXd f0 =
        homogeneous_force(Eigen::VectorXd::Zero(dom.window_dof()), q, dom);
    CHECK(f0.cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("Taylor remainder of the site potential scales at order k+1") {
  TBParams p;
  const auto dom = StencilDomain::build(LatticeSpec::triangular(), 1.6, 2);
  const Eigen::VectorXd dir = random_vec(dom.n_dof(), 13, 1.0);
  for (int k : {2, 3}) {
    const auto tp = build_taylor_potential(k, p, dom);
    std::vector<double> ts, rem;
    for (double t : {0.02, 0.014, 0.01, 0.007, 0.005}) {
      const Eigen::VectorXd g = t * dir;
      const double r =
          std::abs(homogeneous_site_potential(g, p, dom) - tp.eval(g));
      if (r > 1e-13) {
        ts.push_back(t);
        rem.push_back(r);
      }
    }
    REQUIRE(ts.size() >= 3);
    const FitResult f = fit_slope(ts, rem);
    CHECK(std::abs(f.slope - (k + 1)) < 0.2);
  }
}

TEST_CASE("Taylor remainder of the force scales at order k+1") {
  TBParams p;
  const auto dom = StencilDomain::build(LatticeSpec::triangular(), 1.6, 2);
  const Eigen::VectorXd dir = random_vec(dom.window_dof(), 14, 1.0);
  for (int k : {1, 2}) {
    const auto tf = build_taylor_force(k, p, dom);
    std::vector<double> ts, rem;
    // small amplitudes: the next-order term has a large coefficient, so the
    // asymptotic slope only emerges well inside the convergence radius
    for (double t : {0.01, 0.007, 0.005, 0.003, 0.002}) {
      const Eigen::VectorXd w = t * dir;
      const double r =
          (homogeneous_force(w, p, dom) - tf.eval(w)).cwiseAbs().maxCoeff();
      if (r > 1e-13) {
        ts.push_back(t);
        rem.push_back(r);
      }
    }
    REQUIRE(ts.size() >= 3);
    const FitResult f = fit_slope(ts, rem);
    CHECK(std::abs(f.slope - (k + 1)) < 0.2);
  }
}

TEST_CASE("Taylor force vanishes at the reference state") {
  TBParams p;
  const auto dom = StencilDomain::build(LatticeSpec::triangular(), 2.0, 2);
  const auto tf = build_taylor_force(1, p, dom);
  CHECK(tf.eval(Eigen::VectorXd::Zero(dom.window_dof())).cwiseAbs().maxCoeff() <=
        1e-10);
}

TEST_CASE("Taylor force directional derivative matches finite differences") {
  TBParams p;
  const auto dom = StencilDomain::build(LatticeSpec::triangular(), 1.4, 2);
  const auto tf = build_taylor_force(2, p, dom);
  const Eigen::VectorXd w = random_vec(dom.window_dof(), 15, 0.02);
  const Eigen::VectorXd dw = random_vec(dom.window_dof(), 16, 1.0);
  const Eigen::VectorXd jv = tf.jac_apply(w, dw);
  const double h = 1e-6;
  const Eigen::VectorXd fd = (tf.eval(w + h * dw) - tf.eval(w - h * dw)) / (2 * h);
  CHECK((jv - fd).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("Taylor models round-trip through JSON and the coefficient cache") {
  TBParams p;
  const auto dom = StencilDomain::build(LatticeSpec::triangular(), 1.4, 2);
  const auto tp = build_taylor_potential(3, p, dom);
  const auto tp2 = TaylorSitePotential::from_json(tp.to_json());
  const auto tf = build_taylor_force(2, p, dom);
  const auto tf2 = TaylorForce::from_json(tf.to_json());
  const Eigen::VectorXd g = random_vec(dom.n_dof(), 17, 0.05);
  const Eigen::VectorXd w = random_vec(dom.window_dof(), 18, 0.05);
  CHECK(tp2.eval(g) == doctest::Approx(tp.eval(g)).epsilon(1e-14));
  CHECK((tf2.eval(w) - tf.eval(w)).cwiseAbs().maxCoeff() < 1e-14);

  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "taylor_cache_test";
  fs::remove_all(dir);
  const auto c1 = build_taylor_potential(3, p, dom, 1e-4, 1e-10, dir.string());
  REQUIRE(!fs::is_empty(dir));
  const auto c2 = build_taylor_potential(3, p, dom, 1e-4, 1e-10, dir.string());
  CHECK(c2.c0 == c1.c0);
  CHECK((c2.grad - c1.grad).cwiseAbs().maxCoeff() == 0.0);
  CHECK(c2.eval(g) == c1.eval(g));  // cached coefficients are bit-identical
  fs::remove_all(dir);
}

TEST_CASE("buffered site potential reduces to the homogeneous one away from boundaries") {
  TBParams p;
  const auto cfg =
      build_reference(LatticeSpec::triangular(), 9.0, DefectKind::none, 0.0);
  const double rb = 1.8;
  const auto dec = decompose(cfg, 3.0, 5.0, rb);
  const auto dom = StencilDomain::build(LatticeSpec::triangular(), rb, 2);
  const Displacement u(cfg.size(), 2);
  // an MM site well inside the domain sees exactly the homogeneous cluster
  const int l = *cfg.id_at(Vec2(4.0, 0.0));
  REQUIRE(dec.labels[l] == Region::MM);
  const double vb = buffered_site_potential(dec, cfg, l, u, p);
  const double vh =
      homogeneous_site_potential(Eigen::VectorXd::Zero(dom.n_dof()), p, dom);
  CHECK(vb == doctest::Approx(vh).epsilon(1e-12));
}

TEST_CASE("buffered-vs-larger-buffer site potential gap decays in the buffer radius") {
  // nearest-neighbour hopping with a moderate band filling gives clean,
  // oscillation-free exponential locality at the radii probed here
  TBParams p;
  p.r_cut = 1.5;
  p.taper_margin = 0.3;
  p.ons_coeff = 0.8;
  p.beta = 1.0;
  const auto spec = LatticeSpec::triangular();
  const auto cfg = build_reference(spec, 12.0, DefectKind::none, 0.0);
  const double r_big = 7.0;
  const auto dom_big = StencilDomain::build(spec, r_big, 2);
  const double v_ref =
      homogeneous_site_potential(Eigen::VectorXd::Zero(dom_big.n_dof()), p, dom_big);
  std::vector<double> rbs = {2.0, 3.0, 4.0, 5.0}, gaps;
  for (double rb : rbs) {
    const auto dom = StencilDomain::build(spec, rb, 2);
    gaps.push_back(std::abs(
        homogeneous_site_potential(Eigen::VectorXd::Zero(dom.n_dof()), p, dom) -
        v_ref));
  }
  for (std::size_t i = 1; i < gaps.size(); ++i) CHECK(gaps[i] < gaps[i - 1]);
  // exponential: log-gap vs radius is linear with negative rate
  std::vector<double> es;
  for (double g : gaps) es.push_back(g);
  double num = 0, den = 0, mr = 0, mg = 0;
  for (std::size_t i = 0; i < rbs.size(); ++i) {
    mr += rbs[i] / rbs.size();
    mg += std::log(es[i]) / rbs.size();
  }
  for (std::size_t i = 0; i < rbs.size(); ++i) {
    num += (rbs[i] - mr) * (std::log(es[i]) - mg);
    den += (rbs[i] - mr) * (rbs[i] - mr);
  }
  CHECK(num / den < 0);
}
