#include "qmmm/tb.hpp"

#include <lapacke.h>

#include <cmath>
#include <sstream>

namespace qmmm {

nlohmann::json RadialFn::to_json() const {
  return {{"family", family}, {"amp", amp}, {"rate", rate}, {"r0", r0}};
}

RadialFn RadialFn::from_json(const nlohmann::json& j) {
  RadialFn f;
  f.family = j.value("family", "exp");
  if (f.family != "exp")
    throw InvalidParameter("unknown radial family: " + f.family);
  f.amp = j.at("amp").get<double>();
  f.rate = j.at("rate").get<double>();
  f.r0 = j.value("r0", 1.0);
  return f;
}

namespace {
// smooth transition kernel: e^{-1/x} for x > 0, identically 0 otherwise.
// The resulting step psi(t) = f(1-t) / (f(1-t) + f(t)) is infinitely
// differentiable everywhere, including the knots, so tapered interactions
// stay smooth no matter where lattice pair distances fall
inline double bump(double x) { return x > 0 ? std::exp(-1.0 / x) : 0.0; }
}  // namespace

double TBParams::taper(double r) const {
  const double lo = r_cut - taper_margin;
  if (r <= lo) return 1.0;
  if (r >= r_cut) return 0.0;
  const double t = (r - lo) / taper_margin;
  const double a = bump(1.0 - t), b = bump(t);
  return a / (a + b);
}

double TBParams::taper_deriv(double r) const {
  const double lo = r_cut - taper_margin;
  if (r <= lo || r >= r_cut) return 0.0;
  const double t = (r - lo) / taper_margin;
  const double a = bump(1.0 - t), b = bump(t);
  // d/dt [a/(a+b)] with a' = -a / (1-t)^2, b' = b / t^2
  const double ap = -a / ((1.0 - t) * (1.0 - t));
  const double bp = b / (t * t);
  const double s = a + b;
  return (ap * s - a * (ap + bp)) / (s * s) / taper_margin;
}

namespace {
inline double radial(const RadialFn& f, double r) {
  return f.amp * std::exp(-f.rate * (r - f.r0));
}
}  // namespace

double TBParams::hop(double r) const { return radial(h_hop, r) * taper(r); }
double TBParams::hop_deriv(double r) const {
  const double e = radial(h_hop, r);
  return e * (-h_hop.rate * taper(r) + taper_deriv(r));
}
double TBParams::dens(double r) const { return radial(rho, r) * taper(r); }
double TBParams::dens_deriv(double r) const {
  const double e = radial(rho, r);
  return e * (-rho.rate * taper(r) + taper_deriv(r));
}

double TBParams::pair_hop(const Vec3& d) const {
  if (z_period <= 0) return hop(d.norm());
  const double rin2 = d.x() * d.x() + d.y() * d.y();
  if (rin2 >= r_cut * r_cut) return 0.0;
  double acc = 0.0;
  const int nmax = int(std::ceil((r_cut + std::abs(d.z())) / z_period)) + 1;
  for (int n = -nmax; n <= nmax; ++n) {
    const double dz = d.z() + n * z_period;
    const double r = std::sqrt(rin2 + dz * dz);
    if (r < r_cut) acc += hop(r);
  }
  return acc;
}

Vec3 TBParams::pair_hop_grad(const Vec3& d) const {
  if (z_period <= 0) {
    const double r = d.norm();
    if (r >= r_cut || r == 0.0) return Vec3::Zero();
    return hop_deriv(r) / r * d;
  }
  const double rin2 = d.x() * d.x() + d.y() * d.y();
  Vec3 acc = Vec3::Zero();
  if (rin2 >= r_cut * r_cut) return acc;
  const int nmax = int(std::ceil((r_cut + std::abs(d.z())) / z_period)) + 1;
  for (int n = -nmax; n <= nmax; ++n) {
    const double dz = d.z() + n * z_period;
    const double r = std::sqrt(rin2 + dz * dz);
    if (r >= r_cut || r == 0.0) continue;
    acc += hop_deriv(r) / r * Vec3(d.x(), d.y(), dz);
  }
  return acc;
}

double TBParams::pair_dens(const Vec3& d) const {
  if (z_period <= 0) return dens(d.norm());
  const double rin2 = d.x() * d.x() + d.y() * d.y();
  if (rin2 >= r_cut * r_cut) return 0.0;
  double acc = 0.0;
  const int nmax = int(std::ceil((r_cut + std::abs(d.z())) / z_period)) + 1;
  for (int n = -nmax; n <= nmax; ++n) {
    const double dz = d.z() + n * z_period;
    const double r = std::sqrt(rin2 + dz * dz);
    if (r < r_cut) acc += dens(r);
  }
  return acc;
}

Vec3 TBParams::pair_dens_grad(const Vec3& d) const {
  if (z_period <= 0) {
    const double r = d.norm();
    if (r >= r_cut || r == 0.0) return Vec3::Zero();
    return dens_deriv(r) / r * d;
  }
  const double rin2 = d.x() * d.x() + d.y() * d.y();
  Vec3 acc = Vec3::Zero();
  if (rin2 >= r_cut * r_cut) return acc;
  const int nmax = int(std::ceil((r_cut + std::abs(d.z())) / z_period)) + 1;
  for (int n = -nmax; n <= nmax; ++n) {
    const double dz = d.z() + n * z_period;
    const double r = std::sqrt(rin2 + dz * dz);
    if (r >= r_cut || r == 0.0) continue;
    acc += dens_deriv(r) / r * Vec3(d.x(), d.y(), dz);
  }
  return acc;
}

double TBParams::fermi(double eps) const {
  const double x = beta * (eps - mu);
  if (x > 0) {
    const double e = std::exp(-x);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(x));
}

double TBParams::gfun(double eps) const { return fermi(eps) * eps; }

double TBParams::gprime(double eps) const {
  const double f = fermi(eps);
  return f + eps * (-beta * f * (1.0 - f));
}

double TBParams::gdivided(double a, double b) const {
  if (std::abs(a - b) < 1e-8) return gprime(0.5 * (a + b));
  return (gfun(a) - gfun(b)) / (a - b);
}

nlohmann::json TBParams::to_json() const {
  return {{"h_hop", h_hop.to_json()}, {"rho", rho.to_json()},
          {"ons_coeff", ons_coeff},   {"r_cut", r_cut},
          {"mu", mu},                 {"beta", beta},
          {"taper_margin", taper_margin}, {"z_period", z_period},
          {"min_dist", min_dist}};
}

TBParams TBParams::from_json(const nlohmann::json& j) {
  TBParams p;
  if (j.contains("h_hop")) p.h_hop = RadialFn::from_json(j.at("h_hop"));
  if (j.contains("rho")) p.rho = RadialFn::from_json(j.at("rho"));
  if (j.contains("h_ons")) p.ons_coeff = j.at("h_ons").value("coeff", 1.0);
  p.ons_coeff = j.value("ons_coeff", p.ons_coeff);
  p.r_cut = j.value("r_cut", p.r_cut);
  p.mu = j.value("mu", p.mu);
  p.beta = j.value("beta", p.beta);
  p.taper_margin = j.value("taper_margin", p.taper_margin);
  p.z_period = j.value("z_period", p.z_period);
  p.min_dist = j.value("min_dist", p.min_dist);
  if (p.beta <= 0) throw InvalidParameter("beta must be positive (T > 0)");
  return p;
}

std::string TBParams::content_key() const {
  std::ostringstream os;
  os.precision(17);
  os << h_hop.family << ',' << h_hop.amp << ',' << h_hop.rate << ','
     << h_hop.r0 << '|' << rho.family << ',' << rho.amp << ',' << rho.rate
     << ',' << rho.r0 << '|' << ons_coeff << '|' << r_cut << '|' << mu << '|'
     << beta << '|' << taper_margin << '|' << z_period;
  return os.str();
}

Eigen::MatrixXd assemble_hamiltonian(const std::vector<Vec3>& positions,
                                     const TBParams& params) {
  const int n = int(positions.size());
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd rho_bar = Eigen::VectorXd::Zero(n);
  const double md2 = params.min_dist * params.min_dist;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const Vec3 d = positions[i] - positions[j];
      if (params.z_period <= 0 && d.squaredNorm() < md2)
        throw AccumulationError("two positions closer than the minimum distance");
      const double h = params.pair_hop(d);
      H(i, j) = H(j, i) = h;
      const double q = params.pair_dens(d);
      rho_bar[i] += q;
      rho_bar[j] += q;
    }
  }
  for (int i = 0; i < n; ++i) H(i, i) = params.ons_coeff * rho_bar[i];
  return H;
}

SpectralData solve_spectrum(const Eigen::MatrixXd& H) {
  SpectralData s;
  const int n = int(H.rows());
  s.evecs = H;
  s.evals.resize(n);
  const int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', n,
                                  s.evecs.data(), n, s.evals.data());
  if (info != 0)
    throw std::runtime_error("dsyevd failed, info=" + std::to_string(info));
  return s;
}

double band_energy(const SpectralData& spectral, const TBParams& params) {
  double e = 0.0;
  for (int s = 0; s < spectral.evals.size(); ++s)
    e += params.gfun(spectral.evals[s]);
  return e;
}

Eigen::VectorXd site_energies(const SpectralData& spectral,
                              const TBParams& params) {
  Eigen::VectorXd g(spectral.evals.size());
  for (int s = 0; s < g.size(); ++s) g[s] = params.gfun(spectral.evals[s]);
  return spectral.evecs.array().square().matrix() * g;
}

namespace {

// gradient of sum_{ij} K_ij dH_ij/dp for symmetric K
std::vector<Vec3> accumulate_gradient(const Eigen::MatrixXd& K,
                                      const std::vector<Vec3>& positions,
                                      const TBParams& params) {
  const int n = int(positions.size());
  Eigen::VectorXd rho_bar = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double q = params.pair_dens(positions[i] - positions[j]);
      rho_bar[i] += q;
      rho_bar[j] += q;
    }
  std::vector<Vec3> grad(n, Vec3::Zero());
  for (int i = 0; i < n; ++i) {
    const double hi = params.ons_coeff;  // h_ons'(rho_bar_i), linear model
    for (int j = i + 1; j < n; ++j) {
      const Vec3 d = positions[i] - positions[j];
      const Vec3 gh = params.pair_hop_grad(d);
      const Vec3 gq = params.pair_dens_grad(d);
      // hopping: H_ij = H_ji contribute 2 K_ij each
      const Vec3 hop_term = 2.0 * K(i, j) * gh;
      // onsite: K_ii h' d(rho_bar_i) + K_jj h' d(rho_bar_j)
      const Vec3 ons_term = (K(i, i) * hi + K(j, j) * hi) * gq;
      grad[i] += hop_term + ons_term;
      grad[j] -= hop_term + ons_term;
    }
  }
  (void)0;
  return grad;
}

}  // namespace

std::vector<Vec3> weighted_site_gradient(const SpectralData& spectral,
                                         const std::vector<Vec3>& positions,
                                         const TBParams& params,
                                         const Eigen::VectorXd& weights) {
  const int n = int(positions.size());
  const Eigen::MatrixXd& V = spectral.evecs;
  Eigen::MatrixXd B = V.transpose() * (weights.asDiagonal() * V);
  for (int s = 0; s < n; ++s)
    for (int t = 0; t < n; ++t)
      B(s, t) *= params.gdivided(spectral.evals[s], spectral.evals[t]);
  const Eigen::MatrixXd K = V * B * V.transpose();
  return accumulate_gradient(K, positions, params);
}

std::vector<Vec3> total_gradient(const SpectralData& spectral,
                                 const std::vector<Vec3>& positions,
                                 const TBParams& params) {
  Eigen::VectorXd gp(spectral.evals.size());
  for (int s = 0; s < gp.size(); ++s) gp[s] = params.gprime(spectral.evals[s]);
  const Eigen::MatrixXd K =
      spectral.evecs * gp.asDiagonal() * spectral.evecs.transpose();
  return accumulate_gradient(K, positions, params);
}

std::vector<Vec3> total_gradient(const std::vector<Vec3>& positions,
                                 const TBParams& params) {
  return total_gradient(solve_spectrum(assemble_hamiltonian(positions, params)),
                        positions, params);
}

std::vector<Vec3> site_energy_gradient(const SpectralData& spectral,
                                       const std::vector<Vec3>& positions,
                                       const TBParams& params, int l) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(positions.size());
  w[l] = 1.0;
  return weighted_site_gradient(spectral, positions, params, w);
}

}  // namespace qmmm
