#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qmmm/solver.hpp"

namespace qmmm {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FitResult {
  double slope = 0, intercept = 0, r2 = 0;
};

/// OLS fit of log(y) against log(x); throws InvalidParameter on non-positive
/// data or fewer than 3 points.
FitResult fit_slope(const std::vector<double>& xs,
                    const std::vector<double>& ys);

/// Radius schedules used by the reference study
double schedule_r_buf(double r_qm);                  // 1 + 0.6 log(R_QM)
double schedule_r_mm(double r_qm, double r_buf);     // R_QM^3/2 + 2 R_BUF

struct ExperimentConfig {
  CaseKind kind = CaseKind::P;
  DefectKind defect = DefectKind::divacancy;
  double r_def = 1.1;
  TBParams params;
  std::string scheme = "energy";  // energy | force | both
  int k_e = 2;
  int k_f = 1;
  std::vector<double> r_qm;       // ascending ladder
  bool auto_schedule = true;      // derive R_BUF / R_MM from the schedules
  std::vector<double> r_buf;      // explicit overrides (same length as r_qm)
  std::vector<double> r_mm;
  double r_buf_max = 0;           // > 0: clamp schedule from above
  double r_mm_cap = 0;            // > 0: clamp schedule from above
  double gamma = 1.0;
  double tol = 1e-8;
  double reference_tol = 1e-7;
  int max_iter = 2000;
  double reference_r_domain = 0;  // 0: auto 2 * max(R_MM)
  // free radius of the reference solve (0: default boundary clamp of one
  // interaction cutoff). Setting it to the common R_MM gives the hybrid and
  // the reference identical free site sets, so boundary effects cancel.
  double reference_free_radius = 0;
  bool reference_continuation = true;
  // start hybrid solves from the transferred reference solution (far field
  // zeroed). Keeps every solve in the reference minimizer's basin when the
  // defect core admits several symmetry-broken reconstructions.
  bool warm_start = false;
  bool exclude_last = false;      // drop final ladder point from the fit
  double fd_step = 1e-4;
  double drop_tol = 1e-10;
  double b3 = 1.0;                // Burgers component, case D
  std::string out_dir = ".";
  std::string cache_dir;          // Taylor coefficient cache ("" = no cache)
  unsigned seed = 0;
  // optional assertions evaluated by the CLI (NaN = not asserted)
  double assert_geom_slope_max = std::nan("");
  double assert_energy_slope_max = std::nan("");

  static ExperimentConfig from_json(const nlohmann::json& j);
  /// Reads .json or .toml (a small TOML subset: sections, scalars, arrays).
  static ExperimentConfig load(const std::string& path);
  nlohmann::json to_json() const;
};

/// Parses the supported TOML subset into a json object (exposed for tests).
nlohmann::json toml_subset_parse(const std::string& text);

struct ExperimentRecord {
  std::string scheme;
  double r_qm = 0, r_mm = 0, r_buf = 0;
  int n_qm = 0;
  double geom_error = 0;
  double energy_error = std::nan("");  // energy scheme only
  double resid = 0;
  int iters = 0;
  double wall_s = 0;
  bool ok = false;
  std::string note;
};

struct StudyResult {
  std::vector<ExperimentRecord> records;
  std::map<std::string, FitResult> geom_fits;     // per scheme
  std::map<std::string, FitResult> energy_fits;   // energy scheme
  SolverResult reference;
  double reference_r_domain = 0;
  std::vector<std::string> csv_paths;
  std::string json_path;
  bool all_ok = false;
};

StudyResult run_convergence_study(const ExperimentConfig& cfg,
                                  std::ostream* log = nullptr);

/// One hybrid solve at the given R_QM with an optional per-site diagnostics
/// dump (positions, region, displacement, residual row, reference-state
/// interface force).
SolverResult run_single(const ExperimentConfig& cfg, double r_qm,
                        const std::string& dump_csv = "",
                        std::ostream* log = nullptr);

/// (|x_l|, |Du(l)|_gamma) pairs for decay-profile fits.
std::vector<std::pair<double, double>> du_decay_profile(
    const ReferenceConfig& config, const Displacement& u, double gamma);

/// Geometric shell average of a (radius, value) profile over [r_min, r_max]
/// with the given number of bins; zero/negative bins are dropped.
std::vector<std::pair<double, double>> shell_average(
    const std::vector<std::pair<double, double>>& profile, double r_min,
    double r_max, int bins);

/// Zero-extended transfer of a displacement between geometries (site matching
/// through lattice coordinates).
Displacement transfer_displacement(const Displacement& u,
                                   const ReferenceConfig& src,
                                   const ReferenceConfig& dst);

}  // namespace qmmm
