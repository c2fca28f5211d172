#pragma once

#include <functional>
#include <optional>
#include <ostream>

#include "qmmm/coupling.hpp"

namespace qmmm {

struct LanczosError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SolverResult {
  Displacement u_star;
  int iterations = 0;
  double residual_norm = 0;  // l2 gradient norm / l2 force norm
  bool converged = false;
  std::optional<double> stability_min_eig;
  double wall_time = 0;  // seconds
  double energy = 0;     // final objective (energy difference) when applicable
  std::string message;   // diagnostics on non-convergence
};

/// f(x, grad) -> value; grad is resized/filled by the callee.
using Objective =
    std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

struct OptResult {
  Eigen::VectorXd x;
  double f = 0;
  double residual_norm = 0;
  int iterations = 0;
  bool converged = false;
  std::string message;
};

/// L-BFGS (two-loop recursion) with a strong-Wolfe line search.
OptResult lbfgs_minimize(const Objective& fg, const Eigen::VectorXd& x0,
                         double tol, int max_iter, int memory = 20,
                         std::ostream* log = nullptr);

/// Restarted GMRES with modified Gram-Schmidt and Givens rotations; returns
/// the approximate solution of A x = b, x0 = 0.
Eigen::VectorXd gmres_solve(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply,
    const Eigen::VectorXd& b, int restart, double rtol, int max_outer = 20,
    double* achieved_rel_res = nullptr);

/// Smallest eigenvalues of a symmetric operator by Lanczos with full
/// reorthogonalization. Throws LanczosError when the requested values have
/// not converged within max_iter steps.
std::vector<double> lanczos_smallest(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply, int n,
    int n_eigs, int max_iter = 400, double tol = 1e-8);

/// Flattened u.data indices of the relaxed degrees of freedom (QM u MM rows).
std::vector<int> free_dof_indices(const HybridModel& model);

/// Energy-mixing solve: local minimization of the hybrid energy over the
/// admissible set.
SolverResult minimize_energy(const HybridModel& model, const Displacement& u0,
                             double tol = 1e-8, int max_iter = 2000,
                             std::ostream* log = nullptr);

/// Force-mixing solve: damped Newton-Krylov on the hybrid force.
SolverResult solve_force_balance(const HybridModel& model,
                                 const Displacement& u0, double tol = 1e-8,
                                 int max_iter = 100,
                                 std::ostream* log = nullptr);

/// Pure tight-binding reference ("atomistic") solve on the full domain with a
/// clamped boundary shell of width r_clamp (defaults to the interaction
/// cutoff). Surrogate for the infinite-lattice solution in error studies.
SolverResult reference_solve_atm(
    const ReferenceConfig& config, const TBParams& params, CaseKind kind,
    double r_domain, double tol = 1e-8, int max_iter = 5000,
    double r_clamp = -1.0, const Displacement* warm_start = nullptr,
    std::ostream* log = nullptr,
    const std::optional<ScrewPredictor>& predictor = std::nullopt);

/// Smallest eigenvalues of the free-DOF Hessian (energy scheme) or of the
/// symmetrized force Jacobian (force scheme) at u_star.
std::vector<double> stability_check(const HybridModel& model,
                                    const Displacement& u_star, int n_eigs,
                                    int max_iter = 400);

}  // namespace qmmm
