#pragma once

#include <optional>

#include "qmmm/dislocation.hpp"
#include "qmmm/lattice.hpp"
#include "qmmm/site_potential.hpp"
#include "qmmm/tb.hpp"

namespace qmmm {

struct AdmissibilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Scheme { energy, force };

/// Hybrid QM/MM model: buffered tight-binding site energies/forces on the QM
/// region, Taylor-expanded homogeneous site potential/force on MM and the
/// participating far-field shell.
struct HybridModel {
  const ReferenceConfig* config = nullptr;
  RegionDecomposition decomp;
  TBParams params;
  CaseKind kind = CaseKind::P;
  Scheme scheme = Scheme::energy;
  TaylorSitePotential taylor_e;
  TaylorForce taylor_f;
  std::optional<ScrewPredictor> predictor;
  std::optional<ElasticStrainField> strain;  // on taylor stencil, case D

  int comps() const { return kind == CaseKind::P ? 2 : 1; }

  // precomputed structure
  std::vector<int> qm_cluster;       // QM u BUF ids, sorted
  std::vector<int> qm_pos_in_cluster;  // cluster slot of each decomp.qm_ids
  Eigen::VectorXd qm_weights;        // indicator of QM sites over the cluster
  Eigen::VectorXd e0_qm;             // per-QM-site reference site energy
  std::vector<int> active_ids;       // (MM u FF) sites within R_MM + R_BUF
  Eigen::MatrixXi windows;           // n_offsets x n_active neighbor ids
  Eigen::VectorXd u0_site;           // predictor values (case D), else empty
  std::vector<Eigen::VectorXd> ee;   // per active site (case D)
  std::vector<double> vmm_ee;        // taylor_e(ee) per active site (case D)
};

HybridModel build_hybrid_model(
    const ReferenceConfig& config, const RegionDecomposition& decomp,
    const TBParams& params, int k_e, int k_f, CaseKind kind, Scheme scheme,
    double fd_step = 1e-4, double drop_tol = 1e-10,
    const std::optional<std::string>& cache_dir = std::nullopt,
    const std::optional<ScrewPredictor>& predictor = std::nullopt);

void check_admissible(const HybridModel& model, const Displacement& u);

double hybrid_energy(const HybridModel& model, const Displacement& u);

Displacement hybrid_energy_gradient(const HybridModel& model,
                                    const Displacement& u);

/// energy + gradient sharing one QM cluster eigensolve (solver hot path)
double hybrid_energy_and_gradient(const HybridModel& model,
                                  const Displacement& u, Displacement& grad);

/// F^H: buffered QM forces on QM rows, Taylor force on MM rows, zero on FF.
Displacement hybrid_force(const HybridModel& model, const Displacement& u);

/// Directional derivative of hybrid_force at u in direction v (analytic on
/// MM rows, finite differences on QM rows).
Displacement hybrid_force_jacobian_apply(const HybridModel& model,
                                         const Displacement& u,
                                         const Displacement& v);

/// TB positions of the full configuration under the corrector u (predictor
/// included for case D).
std::vector<Vec3> model_positions(const HybridModel& model,
                                  const Displacement& u,
                                  const std::vector<int>& ids);

}  // namespace qmmm
