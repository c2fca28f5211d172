#pragma once

#include "qmmm/lattice.hpp"
#include "qmmm/site_potential.hpp"

namespace qmmm {

struct BranchCutError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingPredictor : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Anti-plane screw dislocation predictor. The core sits off-lattice (a
/// triangle barycenter next to the origin by default) so the branch cut
/// {x2 = core.y, x1 >= core.x} contains no lattice sites.
struct ScrewPredictor {
  double b3 = 1.0;   // out-of-plane Burgers component, units of the 3D period
  Vec2 core{0, 0};
  double r_hat = 2.0;

  static ScrewPredictor standard(const LatticeSpec& spec);

  bool on_branch_cut(const Vec2& x) const;
  /// region right of the core where the slipped predictor is smooth
  bool in_omega_gamma(const Vec2& x) const {
    return x.x() > core.x() + r_hat;
  }
};

/// u0(x) = (b3 / 2 pi) arg(x - core) with arg in (0, 2 pi); for the pure
/// screw the core-regularized map is the identity.
double screw_u0(const Vec2& x, const ScrewPredictor& pred);

/// Slip relabeling S (adjoint: S*). For the pure screw b12 = 0, so both act
/// as the identity.
Displacement slip_map(const Displacement& u, const ScrewPredictor& pred,
                      bool adjoint = false);

/// Precomputed strain stencil e_rho(l) over |rho| <= r_stencil. Inside
/// Omega_Gamma the slipped (smooth) branch difference is used, elsewhere the
/// raw finite difference of u0.
struct ElasticStrainField {
  StencilDomain dom;       // comps = 1
  Eigen::MatrixXd values;  // n_offsets x n_sites

  Eigen::VectorXd at(int id) const { return values.col(id); }
};

ElasticStrainField elastic_strain(const ReferenceConfig& config,
                                  const ScrewPredictor& pred,
                                  double r_stencil);

enum class CaseKind { P, D };

/// ee(l) + D u(l) over the stencil domain: the exact argument fed to the
/// (Taylor) site potentials in both coupling schemes.
Eigen::VectorXd unified_argument(const ReferenceConfig& config, int l,
                                 const Displacement& u, CaseKind kind,
                                 const StencilDomain& dom,
                                 const ElasticStrainField* strain = nullptr);

}  // namespace qmmm
