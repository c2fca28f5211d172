#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "qmmm/tb.hpp"

using namespace qmmm;

namespace {

std::vector<Vec3> perturbed_cluster(double radius, unsigned seed,
                                    double amp = 0.05) {
  const auto cfg =
      build_reference(LatticeSpec::triangular(), radius, DefectKind::none, 0.0);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> ud(-amp, amp);
  std::vector<Vec3> pos(cfg.size());
  for (int i = 0; i < cfg.size(); ++i)
    pos[i] = Vec3(cfg.site(i).x() + ud(rng), cfg.site(i).y() + ud(rng), 0.0);
  return pos;
}

double cluster_energy(const std::vector<Vec3>& pos, const TBParams& p) {
  return band_energy(solve_spectrum(assemble_hamiltonian(pos, p)), p);
}

}  // namespace

TEST_CASE("taper is a C^1 switch between 1 and 0") {
  TBParams p;
  CHECK(p.taper(p.r_cut - p.taper_margin) == doctest::Approx(1.0));
  CHECK(p.taper(p.r_cut) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(p.taper(p.r_cut + 0.3) == 0.0);
  for (double r : {2.05, 2.2, 2.35, 2.49}) {
    const double fd = (p.taper(r + 1e-6) - p.taper(r - 1e-6)) / 2e-6;
    CHECK(p.taper_deriv(r) == doctest::Approx(fd).epsilon(1e-6));
  }
  // derivative vanishes at both taper ends (smooth cutoff)
  CHECK(std::abs(p.taper_deriv(p.r_cut - p.taper_margin)) < 1e-12);
  CHECK(std::abs(p.taper_deriv(p.r_cut)) < 1e-12);
}

TEST_CASE("radial kernels match finite differences and vanish past the cutoff") {
  TBParams p;
  for (double r : {0.8, 1.0, 1.4, 2.1, 2.4}) {
    const double fdh = (p.hop(r + 1e-6) - p.hop(r - 1e-6)) / 2e-6;
    const double fdd = (p.dens(r + 1e-6) - p.dens(r - 1e-6)) / 2e-6;
    CHECK(p.hop_deriv(r) == doctest::Approx(fdh).epsilon(1e-6));
    CHECK(p.dens_deriv(r) == doctest::Approx(fdd).epsilon(1e-6));
  }
  CHECK(p.hop(p.r_cut + 1e-9) == 0.0);
  CHECK(p.dens(p.r_cut + 1e-9) == 0.0);
  // documented closed forms inside the taper-free zone
  CHECK(p.hop(1.3) == doctest::Approx(-std::exp(-2.0 * 0.3)).epsilon(1e-14));
  CHECK(p.dens(1.3) == doctest::Approx(std::exp(-3.0 * 0.3)).epsilon(1e-14));
}

TEST_CASE("periodic pair kernels equal an explicit image sum") {
  TBParams p;
  p.z_period = 1.0;
  const Vec3 d(0.9, 0.3, 0.2);
  double hop = 0, dens = 0;
  for (int m = -6; m <= 6; ++m) {  // r_cut = 2.5 -> |m| <= 3 images suffice
    const Vec3 dm = d + Vec3(0, 0, m * p.z_period);
    TBParams flat = p;
    flat.z_period = 0;
    hop += flat.pair_hop(dm);
    dens += flat.pair_dens(dm);
  }
  CHECK(p.pair_hop(d) == doctest::Approx(hop).epsilon(1e-14));
  CHECK(p.pair_dens(d) == doctest::Approx(dens).epsilon(1e-14));

  const Vec3 gh = p.pair_hop_grad(d), gd = p.pair_dens_grad(d);
  for (int k = 0; k < 3; ++k) {
    Vec3 dp = d, dm = d;
    dp[k] += 1e-6;
    dm[k] -= 1e-6;
    CHECK(gh[k] == doctest::Approx((p.pair_hop(dp) - p.pair_hop(dm)) / 2e-6)
                       .epsilon(1e-5));
    CHECK(gd[k] == doctest::Approx((p.pair_dens(dp) - p.pair_dens(dm)) / 2e-6)
                       .epsilon(1e-5));
  }
}

TEST_CASE("occupation helpers are mutually consistent") {
  TBParams p;
  CHECK(p.fermi(p.mu) == doctest::Approx(0.5));
  CHECK(p.fermi(-50.0) == doctest::Approx(1.0));
  CHECK(p.fermi(50.0) == doctest::Approx(0.0).epsilon(1e-12));
  for (double a : {-0.7, 0.0, 0.4, 2.0}) {
    const double fd = (p.gfun(a + 1e-6) - p.gfun(a - 1e-6)) / 2e-6;
    CHECK(p.gprime(a) == doctest::Approx(fd).epsilon(1e-6));
    CHECK(p.gdivided(a, a) == doctest::Approx(p.gprime(a)).epsilon(1e-12));
    const double b = a + 0.31;
    CHECK(p.gdivided(a, b) ==
          doctest::Approx((p.gfun(a) - p.gfun(b)) / (a - b)).epsilon(1e-9));
  }
}

TEST_CASE("eigendecomposition is accurate and ascending") {
  TBParams p;
  const auto pos = perturbed_cluster(4.0, 3);
  const Eigen::MatrixXd H = assemble_hamiltonian(pos, p);
  const auto sp = solve_spectrum(H);
  for (int s = 1; s < sp.evals.size(); ++s) CHECK(sp.evals[s] >= sp.evals[s - 1]);
  const double resid =
      (H * sp.evecs - sp.evecs * sp.evals.asDiagonal()).cwiseAbs().maxCoeff();
  CHECK(resid < 1e-11 * H.cwiseAbs().maxCoeff());
  const double orth = (sp.evecs.transpose() * sp.evecs -
                       Eigen::MatrixXd::Identity(sp.evals.size(), sp.evals.size()))
                          .cwiseAbs()
                          .maxCoeff();
  CHECK(orth < 1e-12);
}

TEST_CASE("site energies partition the band energy exactly") {
  TBParams p;
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> rad(1.2, 4.5);
  for (int t = 0; t < 20; ++t) {
    const auto pos = perturbed_cluster(rad(rng), 100 + t);
    const auto sp = solve_spectrum(assemble_hamiltonian(pos, p));
    const double e = band_energy(sp, p);
    const double s = site_energies(sp, p).sum();
    CHECK(std::abs(e - s) <= 1e-12 * std::max(1.0, std::abs(e)));
  }
}

TEST_CASE("band-energy gradient matches central finite differences") {
  TBParams p;
  auto pos = perturbed_cluster(3.0, 7);
  const auto grad = total_gradient(pos, p);
  std::mt19937 rng(8);
  std::uniform_int_distribution<int> pick(0, int(pos.size()) - 1);
  const double scale = std::max(1.0, std::abs(cluster_energy(pos, p)));
  for (int t = 0; t < 12; ++t) {
    const int i = pick(rng), k = t % 2;
    auto pp = pos, pm = pos;
    pp[i][k] += 1e-5;
    pm[i][k] -= 1e-5;
    const double fd = (cluster_energy(pp, p) - cluster_energy(pm, p)) / 2e-5;
    CHECK(std::abs(grad[i][k] - fd) <= 1e-6 * scale);
  }
}

TEST_CASE("weighted site gradient matches finite differences of the weighted sum") {
  TBParams p;
  auto pos = perturbed_cluster(2.6, 21);
  std::mt19937 rng(22);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  Eigen::VectorXd w(pos.size());
  for (int i = 0; i < w.size(); ++i) w[i] = ud(rng);
  const auto sp = solve_spectrum(assemble_hamiltonian(pos, p));
  const auto grad = weighted_site_gradient(sp, pos, p, w);
  auto weighted = [&](const std::vector<Vec3>& q) {
    return w.dot(site_energies(solve_spectrum(assemble_hamiltonian(q, p)), p));
  };
  std::uniform_int_distribution<int> pick(0, int(pos.size()) - 1);
  for (int t = 0; t < 10; ++t) {
    const int i = pick(rng), k = t % 2;
    auto pp = pos, pm = pos;
    pp[i][k] += 1e-5;
    pm[i][k] -= 1e-5;
    const double fd = (weighted(pp) - weighted(pm)) / 2e-5;
    CHECK(std::abs(grad[i][k] - fd) <= 1e-6);
  }
  // all-ones weights agree with the diagonal fast path
  const auto g1 = weighted_site_gradient(sp, pos, p,
                                         Eigen::VectorXd::Ones(pos.size()));
  const auto g2 = total_gradient(sp, pos, p);
  for (std::size_t i = 0; i < pos.size(); ++i)
    CHECK((g1[i] - g2[i]).norm() < 1e-10);
}

TEST_CASE("single-site energy gradient matches finite differences") {
  TBParams p;
  auto pos = perturbed_cluster(2.2, 31);
  const int l = 0;
  const auto sp = solve_spectrum(assemble_hamiltonian(pos, p));
  const auto grad = site_energy_gradient(sp, pos, p, l);
  auto el = [&](const std::vector<Vec3>& q) {
    return site_energies(solve_spectrum(assemble_hamiltonian(q, p)), p)[l];
  };
  std::mt19937 rng(32);
  std::uniform_int_distribution<int> pick(0, int(pos.size()) - 1);
  for (int t = 0; t < 10; ++t) {
    const int i = pick(rng), k = t % 2;
    auto pp = pos, pm = pos;
    pp[i][k] += 1e-5;
    pm[i][k] -= 1e-5;
    CHECK(std::abs(grad[i][k] - (el(pp) - el(pm)) / 2e-5) <= 1e-6);
  }
}

TEST_CASE("band energy is invariant under isometries and permutations") {
  TBParams p;
  auto pos = perturbed_cluster(3.2, 41);
  const double e0 = cluster_energy(pos, p);
  std::mt19937 rng(42);

  SUBCASE("rotation + translation") {
    const double th = 1.234;
    std::vector<Vec3> moved(pos.size());
    for (std::size_t i = 0; i < pos.size(); ++i)
      moved[i] = Vec3(std::cos(th) * pos[i].x() - std::sin(th) * pos[i].y() + 3.7,
                      std::sin(th) * pos[i].x() + std::cos(th) * pos[i].y() - 1.2,
                      pos[i].z());
    CHECK(std::abs(cluster_energy(moved, p) - e0) < 1e-10);
  }
  SUBCASE("reflection") {
    auto moved = pos;
    for (auto& x : moved) x.y() = -x.y();
    CHECK(std::abs(cluster_energy(moved, p) - e0) < 1e-10);
  }
  SUBCASE("relabeling") {
    auto moved = pos;
    std::shuffle(moved.begin(), moved.end(), rng);
    CHECK(std::abs(cluster_energy(moved, p) - e0) < 1e-10);
    // site energies are permutation-equivariant
    std::vector<int> perm(pos.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = int(i);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Vec3> permuted(pos.size());
    for (std::size_t i = 0; i < perm.size(); ++i) permuted[i] = pos[perm[i]];
    const auto ea = site_energies(solve_spectrum(assemble_hamiltonian(pos, p)), p);
    const auto eb =
        site_energies(solve_spectrum(assemble_hamiltonian(permuted, p)), p);
    for (std::size_t i = 0; i < perm.size(); ++i)
      CHECK(std::abs(eb[i] - ea[perm[i]]) < 1e-10);
  }
}

TEST_CASE("accumulating configurations are rejected") {
  TBParams p;
  std::vector<Vec3> pos = {{0, 0, 0}, {p.min_dist * 0.5, 0, 0}};
  CHECK_THROWS_AS((void)assemble_hamiltonian(pos, p), AccumulationError);
}

TEST_CASE("parameters round-trip through JSON") {
  TBParams p;
  p.beta = 2.5;
  p.mu = 0.3;
  p.h_hop.rate = 1.7;
  p.z_period = 0.9;
  const TBParams q = TBParams::from_json(p.to_json());
  CHECK(q.beta == p.beta);
  CHECK(q.mu == p.mu);
  CHECK(q.h_hop.rate == p.h_hop.rate);
  CHECK(q.z_period == p.z_period);
  CHECK(q.content_key() == p.content_key());

  nlohmann::json bad = p.to_json();
  bad["beta"] = -1.0;
  CHECK_THROWS_AS((void)TBParams::from_json(bad), InvalidParameter);
}
