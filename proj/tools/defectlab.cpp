// defectlab: command-line driver for the hybrid QM/MM lattice toolkit.
//
//   defectlab solve      --config FILE [--r-qm R] [--dump FILE.csv]
//   defectlab converge   --config FILE
//   defectlab properties [--config FILE]
//   defectlab coeffs     --config FILE [--order K]
//
// Global flags: --out DIR, --threads N, --seed S.
// Exit code 0 iff all requested assertions pass.

#include <cstdio>
#include <iostream>
#include <random>

#include "CLI11.hpp"
#include "qmmm/harness.hpp"

extern "C" void openblas_set_num_threads(int);

namespace {

using namespace qmmm;

int cmd_solve(const ExperimentConfig& cfg, double r_qm,
              const std::string& dump) {
  const double rq = r_qm > 0 ? r_qm : (cfg.r_qm.empty() ? 3.0 : cfg.r_qm[0]);
  const SolverResult sol = run_single(cfg, rq, dump, &std::cerr);
  std::printf("scheme=%s R_QM=%.3f converged=%d iters=%d resid=%.3e "
              "energy=%.10g wall=%.2fs\n",
              cfg.scheme.c_str(), rq, int(sol.converged), sol.iterations,
              sol.residual_norm, sol.energy, sol.wall_time);
  if (!sol.message.empty()) std::printf("note: %s\n", sol.message.c_str());
  return sol.converged ? 0 : 1;
}

int cmd_converge(const ExperimentConfig& cfg) {
  const StudyResult study = run_convergence_study(cfg, &std::cerr);
  std::printf("%-7s %8s %9s %7s %5s %12s %12s %9s %5s %8s\n", "scheme",
              "R_QM", "R_MM", "R_BUF", "n_qm", "geom_error", "energy_error",
              "resid", "iter", "wall_s");
  for (const auto& r : study.records) {
    std::printf("%-7s %8.3f %9.2f %7.3f %5d %12.4e ", r.scheme.c_str(),
                r.r_qm, r.r_mm, r.r_buf, r.n_qm, r.geom_error);
    if (std::isnan(r.energy_error)) std::printf("%12s ", "-");
    else std::printf("%12.4e ", r.energy_error);
    std::printf("%9.2e %5d %8.2f%s%s\n", r.resid, r.iters, r.wall_s,
                r.ok ? "" : "  FAILED: ", r.ok ? "" : r.note.c_str());
  }
  for (const auto& [s, f] : study.geom_fits)
    std::printf("geom slope   (%s): %+.3f  (r2=%.4f)\n", s.c_str(), f.slope,
                f.r2);
  for (const auto& [s, f] : study.energy_fits)
    std::printf("energy slope (%s): %+.3f  (r2=%.4f)\n", s.c_str(), f.slope,
                f.r2);
  std::printf("summary: %s\n", study.json_path.c_str());
  return study.all_ok ? 0 : 1;
}

bool report(const char* name, bool ok, double value) {
  std::printf("%-44s %s  (%.3e)\n", name, ok ? "pass" : "FAIL", value);
  return ok;
}

// Fast invariant suite: schedule formulas, slope fitter, energy partition,
// isometry/permutation invariance, equilibrium force, ghost-force decay.
int cmd_properties(const ExperimentConfig& cfg, unsigned seed) {
  bool all = true;
  const auto spec = LatticeSpec::triangular();
  const TBParams& params = cfg.params;
  std::mt19937 rng(seed ? seed : 42);

  {  // radius schedules match the documented formulas to 12 digits
    double err = 0;
    for (double rq : {2.5, 4.0, 6.5, 11.0}) {
      const double rb = schedule_r_buf(rq);
      err = std::max(err, std::abs(rb - (1 + 0.6 * std::log(rq))));
      err = std::max(err, std::abs(schedule_r_mm(rq, rb) -
                                   (0.5 * rq * rq * rq + 2 * rb)));
    }
    all &= report("radius schedules", err < 1e-12, err);
  }
  {  // slope fitter recovers exact power laws
    std::vector<double> xs = {2, 3, 5, 8, 13}, ys;
    for (double x : xs) ys.push_back(7.5 * std::pow(x, -3.0));
    const FitResult f = fit_slope(xs, ys);
    const double err = std::abs(f.slope + 3.0);
    all &= report("log-log slope fit", err < 1e-12, err);
  }
  {  // site energies partition the band energy on random clusters
    std::uniform_real_distribution<double> ud(-0.05, 0.05);
    double err = 0;
    for (int t = 0; t < 5; ++t) {
      const auto cfgP = build_reference(spec, 2.0 + t, DefectKind::none, 0.0);
      std::vector<Vec3> pos(cfgP.size());
      for (int i = 0; i < cfgP.size(); ++i)
        pos[i] = Vec3(cfgP.site(i).x() + ud(rng), cfgP.site(i).y() + ud(rng), 0);
      const auto sp = solve_spectrum(assemble_hamiltonian(pos, params));
      const double gap =
          std::abs(band_energy(sp, params) - site_energies(sp, params).sum());
      err = std::max(err, gap / std::max(1.0, std::abs(band_energy(sp, params))));
    }
    all &= report("energy partition", err < 1e-12, err);
  }
  {  // rotation + permutation invariance of the band energy
    const auto cfgP = build_reference(spec, 3.0, DefectKind::none, 0.0);
    std::vector<Vec3> pos(cfgP.size());
    std::uniform_real_distribution<double> ud(-0.05, 0.05);
    for (int i = 0; i < cfgP.size(); ++i)
      pos[i] = Vec3(cfgP.site(i).x() + ud(rng), cfgP.site(i).y() + ud(rng), 0);
    const double e0 =
        band_energy(solve_spectrum(assemble_hamiltonian(pos, params)),
                    params);
    const double th = 0.7;
    std::vector<Vec3> rot(pos.size());
    for (std::size_t i = 0; i < pos.size(); ++i)
      rot[i] = Vec3(std::cos(th) * pos[i].x() - std::sin(th) * pos[i].y(),
                    std::sin(th) * pos[i].x() + std::cos(th) * pos[i].y(),
                    pos[i].z());
    std::shuffle(rot.begin(), rot.end(), rng);
    const double e1 =
        band_energy(solve_spectrum(assemble_hamiltonian(rot, params)),
                    params);
    const double err = std::abs(e1 - e0);
    all &= report("isometry + permutation invariance", err < 1e-10, err);
  }
  {  // perfect lattice is an equilibrium of the homogeneous force
    const auto dom = StencilDomain::build(spec, schedule_r_buf(3.0), 2);
    const double f0 =
        homogeneous_force(Eigen::VectorXd::Zero(dom.window_dof()), params, dom)
            .cwiseAbs()
            .maxCoeff();
    all &= report("homogeneous force at equilibrium", f0 < 1e-12, f0);
  }
  {  // interface (ghost) force at the reference state decays in R_BUF
    std::vector<double> rbs = {1.2, 2.1, 3.1}, ghosts;
    for (double rb : rbs) {
      const double rq = rb + 1.5, rm = rq + 3.0;
      const auto cfgP =
          build_reference(spec, rm + 2 * rb + 0.5, DefectKind::none, 0.0);
      const auto dec = decompose(cfgP, rq, rm, rb);
      const auto model = build_hybrid_model(cfgP, dec, params, cfg.k_e,
                                            cfg.k_f, CaseKind::P,
                                            Scheme::energy, cfg.fd_step,
                                            cfg.drop_tol);
      const Displacement u(cfgP.size(), 2);
      ghosts.push_back(
          hybrid_energy_gradient(model, u).data.cwiseAbs().maxCoeff());
    }
    const bool dec0 = ghosts[1] < ghosts[0] && ghosts[2] < ghosts[1];
    all &= report("interface force decay in R_BUF", dec0, ghosts.back());
  }
  return all ? 0 : 1;
}

int cmd_coeffs(const ExperimentConfig& cfg, int order) {
  const auto spec = LatticeSpec::triangular();
  const int comps = cfg.kind == CaseKind::P ? 2 : 1;
  const double rb = cfg.r_buf.empty() ? schedule_r_buf(cfg.r_qm.empty() ? 3.0 : cfg.r_qm[0])
                                      : cfg.r_buf[0];
  const auto dom = StencilDomain::build(spec, rb, comps);
  std::optional<std::string> cache =
      cfg.cache_dir.empty() ? std::nullopt
                            : std::optional<std::string>(cfg.cache_dir);
  const int k_e = order > 0 ? order : cfg.k_e;
  const auto tp =
      build_taylor_potential(k_e, cfg.params, dom, cfg.fd_step, cfg.drop_tol, cache);
  const auto tf = build_taylor_force(order > 0 ? order : cfg.k_f, cfg.params,
                                     dom, cfg.fd_step, cfg.drop_tol, cache);
  std::printf("stencil: R_BUF=%.4f offsets=%d dof=%d window_dof=%d\n", rb,
              dom.n_offsets(), dom.n_dof(), dom.window_dof());
  std::printf("potential: order=%d  c0=%.12g  |grad|_inf=%.3e  "
              "third_terms=%zu\n",
              tp.order, tp.c0, tp.grad.cwiseAbs().maxCoeff(), tp.third.size());
  std::printf("force: order=%d  |jac|_inf=%.3e  second_terms=%zu\n", tf.order,
              tf.jac.cwiseAbs().maxCoeff(), tf.second.size());
  if (cache) std::printf("cache dir: %s\n", cache->c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hybrid QM/MM lattice defect toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, dump_csv;
  int threads = 1, order = 0;
  unsigned seed = 0;
  double r_qm = 0;

  app.add_option("--threads", threads, "BLAS thread count");
  app.add_option("--seed", seed, "RNG seed for property suites");
  app.add_option("--out", out_dir, "output directory override");

  auto* solve = app.add_subcommand("solve", "one hybrid solve");
  solve->add_option("--config", config_path, "config file (.toml/.json)")
      ->required();
  solve->add_option("--r-qm", r_qm, "QM radius (default: first ladder entry)");
  solve->add_option("--dump", dump_csv, "per-site diagnostics CSV");

  auto* conv = app.add_subcommand("converge", "convergence-rate study");
  conv->add_option("--config", config_path, "config file (.toml/.json)")
      ->required();

  auto* props = app.add_subcommand("properties", "invariant suites");
  props->add_option("--config", config_path, "optional config file");

  auto* coeffs = app.add_subcommand("coeffs", "build/inspect Taylor caches");
  coeffs->add_option("--config", config_path, "config file (.toml/.json)")
      ->required();
  coeffs->add_option("--order", order, "expansion order override");

  CLI11_PARSE(app, argc, argv);
  openblas_set_num_threads(std::max(1, threads));

  try {
    qmmm::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = qmmm::ExperimentConfig::load(config_path);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed) cfg.seed = seed;

    if (solve->parsed()) return cmd_solve(cfg, r_qm, dump_csv);
    if (conv->parsed()) return cmd_converge(cfg);
    if (props->parsed()) return cmd_properties(cfg, seed);
    if (coeffs->parsed()) return cmd_coeffs(cfg, order);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
