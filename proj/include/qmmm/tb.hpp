#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "json.hpp"
#include "qmmm/lattice.hpp"

namespace qmmm {

struct AccumulationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Radial function family used for hopping and embedding-density kernels.
/// "exp": amp * exp(-rate * (r - r0)), multiplied by a C^infinity taper so
/// that the function vanishes identically beyond r_cut.
struct RadialFn {
  std::string family = "exp";
  double amp = 1.0, rate = 1.0, r0 = 1.0;

  nlohmann::json to_json() const;
  static RadialFn from_json(const nlohmann::json& j);
};

struct TBParams {
  RadialFn h_hop{"exp", -1.0, 2.0, 1.0};
  RadialFn rho{"exp", 1.0, 3.0, 1.0};
  double ons_coeff = 1.0;  // h_ons(x) = ons_coeff * x
  double r_cut = 2.5;
  double mu = 0.0;
  double beta = 10.0;         // 1/(k_B T), T > 0
  double taper_margin = 0.5;  // taper active on [r_cut - margin, r_cut]
  double z_period = 0.0;      // > 0: periodic images along e3 (anti-plane screw)
  double min_dist = 0.5;      // non-accumulation threshold (condition on pairs)

  double taper(double r) const;
  double taper_deriv(double r) const;
  double hop(double r) const;        // tapered
  double hop_deriv(double r) const;
  double dens(double r) const;       // tapered embedding kernel
  double dens_deriv(double r) const;

  // pair quantities including out-of-plane periodic images when z_period > 0
  double pair_hop(const Vec3& d) const;
  Vec3 pair_hop_grad(const Vec3& d) const;
  double pair_dens(const Vec3& d) const;
  Vec3 pair_dens_grad(const Vec3& d) const;

  double fermi(double eps) const;   // occupation f(eps)
  double gfun(double eps) const;    // f(eps) * eps
  double gprime(double eps) const;
  double gdivided(double a, double b) const;  // divided difference of gfun

  nlohmann::json to_json() const;
  static TBParams from_json(const nlohmann::json& j);
  /// stable content key used for the Taylor coefficient cache
  std::string content_key() const;
};

struct SpectralData {
  Eigen::VectorXd evals;  // ascending
  Eigen::MatrixXd evecs;  // orthonormal columns
};

Eigen::MatrixXd assemble_hamiltonian(const std::vector<Vec3>& positions,
                                     const TBParams& params);

/// Dense symmetric eigendecomposition (LAPACK dsyevd).
SpectralData solve_spectrum(const Eigen::MatrixXd& H);

double band_energy(const SpectralData& spectral, const TBParams& params);

Eigen::VectorXd site_energies(const SpectralData& spectral,
                              const TBParams& params);

/// Gradient of sum_l w_l E_l with respect to every cluster position, via the
/// first-order matrix-function perturbation (divided-difference) formula.
std::vector<Vec3> weighted_site_gradient(const SpectralData& spectral,
                                         const std::vector<Vec3>& positions,
                                         const TBParams& params,
                                         const Eigen::VectorXd& weights);

/// Gradient of the band energy (all weights = 1; cheaper diagonal path).
std::vector<Vec3> total_gradient(const std::vector<Vec3>& positions,
                                 const TBParams& params);
std::vector<Vec3> total_gradient(const SpectralData& spectral,
                                 const std::vector<Vec3>& positions,
                                 const TBParams& params);

std::vector<Vec3> site_energy_gradient(const SpectralData& spectral,
                                       const std::vector<Vec3>& positions,
                                       const TBParams& params, int l);

}  // namespace qmmm
