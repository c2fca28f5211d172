#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qmmm/lattice.hpp"
#include "qmmm/tb.hpp"

namespace qmmm {

struct DerivativeInconsistency : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonEquilibriumReference : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Perfect-lattice offsets R = B_{R_BUF} cap (Lambda_hom \ 0), deterministic
/// lexicographic order. `comps` is the number of active displacement
/// components per offset (2 in-plane for point defects, 1 out-of-plane for
/// the anti-plane screw).
struct StencilDomain {
  double r_buf = 0;
  int comps = 2;
  std::vector<Vec2> offsets;

  int n_offsets() const { return int(offsets.size()); }
  int n_dof() const { return n_offsets() * comps; }
  int window_dof() const { return (n_offsets() + 1) * comps; }  // center + offsets

  static StencilDomain build(const LatticeSpec& spec, double r_buf, int comps);
};

/// Positions of the homogeneous cluster {0} u R displaced by g (origin held
/// at its reference position; g holds stencil differences).
std::vector<Vec3> homogeneous_cluster_positions(const StencilDomain& dom,
                                                const Eigen::VectorXd& g);

/// V_#^BUF(g): site energy of the cluster origin under stencil displacement g.
double homogeneous_site_potential(const Eigen::VectorXd& g,
                                  const TBParams& params,
                                  const StencilDomain& dom);

/// Analytic gradient of V_#^BUF with respect to g (divided-difference route).
Eigen::VectorXd homogeneous_site_gradient(const Eigen::VectorXd& g,
                                          const TBParams& params,
                                          const StencilDomain& dom);

/// F_#^BUF(w): gradient of the cluster band energy at the center site, where
/// w displaces the whole window (layout: center dofs first, then offsets).
Eigen::VectorXd homogeneous_force(const Eigen::VectorXd& w,
                                  const TBParams& params,
                                  const StencilDomain& dom);

struct Tensor3Entry {
  int i, j, k;  // i <= j <= k
  double v;     // symmetric tensor element
};

struct TaylorSitePotential {
  int order = 2;
  StencilDomain dom;
  double c0 = 0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  std::vector<Tensor3Entry> third;
  double drop_tol = 1e-10;
  double fd_step = 1e-4;

  double eval(const Eigen::VectorXd& g) const;
  Eigen::VectorXd grad_eval(const Eigen::VectorXd& g) const;

  nlohmann::json to_json() const;
  static TaylorSitePotential from_json(const nlohmann::json& j);
};

struct TaylorForce {
  int order = 1;
  StencilDomain dom;
  Eigen::MatrixXd jac;  // comps x window_dof
  std::vector<Tensor3Entry> second;  // (component, wi, wj) with wi <= wj
  double drop_tol = 1e-10;
  double fd_step = 1e-4;

  Eigen::VectorXd eval(const Eigen::VectorXd& w) const;
  /// directional derivative dF(w)[dw]
  Eigen::VectorXd jac_apply(const Eigen::VectorXd& w,
                            const Eigen::VectorXd& dw) const;

  nlohmann::json to_json() const;
  static TaylorForce from_json(const nlohmann::json& j);
};

TaylorSitePotential build_taylor_potential(
    int k, const TBParams& params, const StencilDomain& dom,
    double fd_step = 1e-4, double drop_tol = 1e-10,
    const std::optional<std::string>& cache_dir = std::nullopt);

TaylorForce build_taylor_force(
    int k, const TBParams& params, const StencilDomain& dom,
    double fd_step = 1e-4, double drop_tol = 1e-10,
    const std::optional<std::string>& cache_dir = std::nullopt);

/// Position of every site under a displacement field (comps = 2: in-plane,
/// comps = 1: out-of-plane).
Vec3 displaced_position(const ReferenceConfig& config, const Displacement& u,
                        int id);

/// V_l^BUF: site energy of l on the cluster QM u BUF (l in QM) or
/// B_{R_BUF}(l) (otherwise), evaluated at the displaced positions.
double buffered_site_potential(const RegionDecomposition& decomp,
                               const ReferenceConfig& config, int l,
                               const Displacement& u, const TBParams& params);

/// F_l^BUF: cluster band-energy gradient at l, same cluster rule.
Eigen::VectorXd buffered_force(const RegionDecomposition& decomp,
                               const ReferenceConfig& config, int l,
                               const Displacement& u, const TBParams& params);

/// Cluster site ids used by the buffered evaluations (exposed for coupling).
std::vector<int> buffered_cluster_ids(const RegionDecomposition& decomp,
                                      const ReferenceConfig& config, int l);

}  // namespace qmmm
