#include "qmmm/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>

namespace qmmm {

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  }
};

Eigen::VectorXd gather(const Eigen::VectorXd& full,
                       const std::vector<int>& idx) {
  Eigen::VectorXd out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = full[idx[i]];
  return out;
}

void scatter(const Eigen::VectorXd& x, const std::vector<int>& idx,
             Eigen::VectorXd& full) {
  for (std::size_t i = 0; i < idx.size(); ++i) full[idx[i]] = x[i];
}

// ---- strong Wolfe line search (bracketing + zoom, bisection-safeguarded) ---

struct PhiEval {
  double a, f, d;  // step, value, slope
  Eigen::VectorXd g;
};

class LineFunction {
 public:
  LineFunction(const Objective& fg, const Eigen::VectorXd& x,
               const Eigen::VectorXd& p)
      : fg_(fg), x_(x), p_(p) {}

  PhiEval operator()(double a) {
    // a trial step that makes atoms accumulate is outside the objective's
    // domain; score it +inf so the search backtracks instead of aborting
    Eigen::VectorXd g;
    try {
      const double f = fg_(x_ + a * p_, g);
      return {a, f, g.dot(p_), std::move(g)};
    } catch (const AccumulationError&) {
      constexpr double inf = std::numeric_limits<double>::infinity();
      return {a, inf, inf, Eigen::VectorXd()};
    }
  }

 private:
  const Objective& fg_;
  const Eigen::VectorXd& x_;
  const Eigen::VectorXd& p_;
};

constexpr double kC1 = 1e-4;
constexpr double kC2 = 0.9;

bool wolfe_zoom(LineFunction& phi, double f0, double d0, PhiEval lo,
                PhiEval hi, PhiEval& out) {
  for (int it = 0; it < 50; ++it) {
    if (std::abs(hi.a - lo.a) < 1e-14 * std::max(1.0, std::abs(lo.a))) break;
    const double a = 0.5 * (lo.a + hi.a);
    PhiEval e = phi(a);
    if (e.f > f0 + kC1 * a * d0 || e.f >= lo.f) {
      hi = std::move(e);
    } else {
      if (std::abs(e.d) <= -kC2 * d0) {
        out = std::move(e);
        return true;
      }
      if (e.d * (hi.a - lo.a) >= 0) hi = std::move(lo);
      lo = std::move(e);
    }
  }
  // curvature not certified; accept the low point if it gives sufficient
  // decrease (keeps the outer iteration moving on very flat directions)
  if (lo.a > 0 && lo.f <= f0 + kC1 * lo.a * d0) {
    out = std::move(lo);
    return true;
  }
  return false;
}

bool wolfe_search(LineFunction& phi, double f0, double d0, double a_init,
                  PhiEval& out) {
  PhiEval prev{0.0, f0, d0, {}};
  double a = a_init;
  for (int it = 0; it < 30; ++it) {
    PhiEval e = phi(a);
    if (e.f > f0 + kC1 * a * d0 || (it > 0 && e.f >= prev.f))
      return wolfe_zoom(phi, f0, d0, std::move(prev), std::move(e), out);
    if (std::abs(e.d) <= -kC2 * d0) {
      out = std::move(e);
      return true;
    }
    if (e.d >= 0)
      return wolfe_zoom(phi, f0, d0, std::move(e), std::move(prev), out);
    prev = std::move(e);
    a = std::min(2.5 * a, 1e8);
  }
  return false;
}

}  // namespace

OptResult lbfgs_minimize(const Objective& fg, const Eigen::VectorXd& x0,
                         double tol, int max_iter, int memory,
                         std::ostream* log) {
  OptResult res;
  res.x = x0;
  Eigen::VectorXd g;
  double f = fg(res.x, g);
  res.f = f;
  res.residual_norm = g.norm();
  if (res.residual_norm <= tol) {
    res.converged = true;
    return res;
  }

  std::vector<Eigen::VectorXd> svec, yvec;
  std::vector<double> rho;

  for (int k = 1; k <= max_iter; ++k) {
    // two-loop recursion
    Eigen::VectorXd q = g;
    const int m = int(svec.size());
    std::vector<double> alpha(m);
    for (int i = m - 1; i >= 0; --i) {
      alpha[i] = rho[i] * svec[i].dot(q);
      q -= alpha[i] * yvec[i];
    }
    if (m > 0) q *= svec[m - 1].dot(yvec[m - 1]) / yvec[m - 1].squaredNorm();
    for (int i = 0; i < m; ++i) {
      const double beta = rho[i] * yvec[i].dot(q);
      q += (alpha[i] - beta) * svec[i];
    }
    Eigen::VectorXd p = -q;
    double d0 = g.dot(p);
    if (!(d0 < 0)) {  // not a descent direction: reset to steepest descent
      p = -g;
      d0 = g.dot(p);
      svec.clear();
      yvec.clear();
      rho.clear();
    }

    const double a_init =
        (k == 1 && m == 0) ? std::min(1.0, 1.0 / g.norm()) : 1.0;
    LineFunction phi(fg, res.x, p);
    PhiEval accepted;
    if (!wolfe_search(phi, f, d0, a_init, accepted)) {
      res.iterations = k - 1;
      res.message = "line search failure";
      return res;
    }

    const Eigen::VectorXd s = accepted.a * p;
    const Eigen::VectorXd y = accepted.g - g;
    res.x += s;
    f = accepted.f;
    g = std::move(accepted.g);
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      svec.push_back(s);
      yvec.push_back(y);
      rho.push_back(1.0 / sy);
      if (int(svec.size()) > memory) {
        svec.erase(svec.begin());
        yvec.erase(yvec.begin());
        rho.erase(rho.begin());
      }
    }

    res.f = f;
    res.residual_norm = g.norm();
    res.iterations = k;
    if (log)
      (*log) << "lbfgs iter=" << k << " f=" << f
             << " |g|=" << res.residual_norm << " step=" << accepted.a
             << "\n";
    if (res.residual_norm <= tol) {
      res.converged = true;
      return res;
    }
  }
  res.message = "max iterations reached";
  return res;
}

Eigen::VectorXd gmres_solve(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply,
    const Eigen::VectorXd& b, int restart, double rtol, int max_outer,
    double* achieved_rel_res) {
  const int n = int(b.size());
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  const double bnorm = b.norm();
  if (achieved_rel_res) *achieved_rel_res = 0.0;
  if (bnorm == 0.0) return x;
  const int m = std::min(restart, n);

  double rel = 1.0;
  for (int outer = 0; outer < max_outer; ++outer) {
    Eigen::VectorXd r = (outer == 0) ? b : Eigen::VectorXd(b - apply(x));
    const double beta = r.norm();
    rel = beta / bnorm;
    if (rel <= rtol) break;

    Eigen::MatrixXd V(n, m + 1);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m + 1, m);
    Eigen::VectorXd cs(m), sn(m), gvec = Eigen::VectorXd::Zero(m + 1);
    V.col(0) = r / beta;
    gvec[0] = beta;

    int j_used = 0;
    for (int j = 0; j < m; ++j) {
      Eigen::VectorXd w = apply(V.col(j));
      for (int i = 0; i <= j; ++i) {  // modified Gram-Schmidt
        H(i, j) = V.col(i).dot(w);
        w -= H(i, j) * V.col(i);
      }
      H(j + 1, j) = w.norm();
      const bool breakdown = H(j + 1, j) < 1e-14 * bnorm;
      if (!breakdown) V.col(j + 1) = w / H(j + 1, j);

      for (int i = 0; i < j; ++i) {  // previous Givens rotations
        const double t = cs[i] * H(i, j) + sn[i] * H(i + 1, j);
        H(i + 1, j) = -sn[i] * H(i, j) + cs[i] * H(i + 1, j);
        H(i, j) = t;
      }
      const double denom = std::hypot(H(j, j), H(j + 1, j));
      cs[j] = denom == 0 ? 1.0 : H(j, j) / denom;
      sn[j] = denom == 0 ? 0.0 : H(j + 1, j) / denom;
      H(j, j) = denom;
      H(j + 1, j) = 0.0;
      gvec[j + 1] = -sn[j] * gvec[j];
      gvec[j] = cs[j] * gvec[j];

      j_used = j + 1;
      rel = std::abs(gvec[j + 1]) / bnorm;
      if (rel <= rtol || breakdown) break;
    }

    Eigen::VectorXd y =
        H.topLeftCorner(j_used, j_used)
            .triangularView<Eigen::Upper>()
            .solve(gvec.head(j_used));
    x += V.leftCols(j_used) * y;
    if (rel <= rtol) break;
  }
  if (achieved_rel_res) *achieved_rel_res = rel;
  return x;
}

std::vector<double> lanczos_smallest(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply, int n,
    int n_eigs, int max_iter, double tol) {
  if (n_eigs < 1 || n_eigs > n) throw InvalidParameter("bad n_eigs");
  const int m = std::min(max_iter, n);
  std::mt19937 rng(12345);
  std::normal_distribution<double> nd;

  Eigen::MatrixXd V(n, m);
  Eigen::VectorXd alpha(m), beta(m);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = nd(rng);
  v.normalize();
  V.col(0) = v;

  auto ritz = [&](int k, std::vector<double>& vals,
                  Eigen::MatrixXd& vecs) {
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(k, k);
    for (int i = 0; i < k; ++i) {
      T(i, i) = alpha[i];
      if (i + 1 < k) T(i, i + 1) = T(i + 1, i) = beta[i];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
    vals.assign(es.eigenvalues().data(), es.eigenvalues().data() + k);
    vecs = es.eigenvectors();
  };

  for (int j = 0; j < m; ++j) {
    Eigen::VectorXd w = apply(V.col(j));
    alpha[j] = V.col(j).dot(w);
    w -= alpha[j] * V.col(j);
    if (j > 0) w -= beta[j - 1] * V.col(j - 1);
    for (int pass = 0; pass < 2; ++pass)  // full reorthogonalization
      for (int i = 0; i <= j; ++i) w -= V.col(i).dot(w) * V.col(i);
    beta[j] = w.norm();

    const int k = j + 1;
    const bool exhausted = (k == n) || (beta[j] < 1e-12) || (k == m);
    if (exhausted || (k >= n_eigs && k % 10 == 0)) {
      std::vector<double> vals;
      Eigen::MatrixXd vecs;
      ritz(k, vals, vecs);
      if (k >= n_eigs) {
        bool ok = true;
        for (int i = 0; i < n_eigs && !exhausted; ++i)
          if (beta[j] * std::abs(vecs(k - 1, i)) >
              tol * std::max(1.0, std::abs(vals[i])))
            ok = false;
        if (ok || k == n || beta[j] < 1e-12)
          return {vals.begin(), vals.begin() + n_eigs};
      }
      if (exhausted) break;
    }
    if (j + 1 < m) V.col(j + 1) = w / beta[j];
  }
  throw LanczosError("Lanczos did not converge within the iteration budget");
}

std::vector<int> free_dof_indices(const HybridModel& model) {
  std::vector<int> idx;
  const int c = model.comps();
  const auto& labels = model.decomp.labels;
  for (int id = 0; id < int(labels.size()); ++id)
    if (labels[id] != Region::FF)
      for (int k = 0; k < c; ++k) idx.push_back(id * c + k);
  return idx;
}

SolverResult minimize_energy(const HybridModel& model, const Displacement& u0,
                             double tol, int max_iter, std::ostream* log) {
  if (model.scheme != Scheme::energy)
    throw InvalidParameter("minimize_energy requires the energy scheme");
  check_admissible(model, u0);
  Timer timer;
  const auto idx = free_dof_indices(model);

  Displacement u = u0;
  Displacement gfield;
  const Objective fg = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    scatter(x, idx, u.data);
    const double f = hybrid_energy_and_gradient(model, u, gfield);
    g = gather(gfield.data, idx);
    return f;
  };

  const OptResult opt =
      lbfgs_minimize(fg, gather(u0.data, idx), tol, max_iter, 20, log);

  SolverResult res;
  res.u_star = u0;
  scatter(opt.x, idx, res.u_star.data);
  res.iterations = opt.iterations;
  res.residual_norm = opt.residual_norm;
  res.converged = opt.converged;
  res.energy = opt.f;
  res.message = opt.message;
  res.wall_time = timer.elapsed();
  return res;
}

SolverResult solve_force_balance(const HybridModel& model,
                                 const Displacement& u0, double tol,
                                 int max_iter, std::ostream* log) {
  if (model.scheme != Scheme::force)
    throw InvalidParameter("solve_force_balance requires the force scheme");
  check_admissible(model, u0);
  Timer timer;
  const auto idx = free_dof_indices(model);

  Displacement u = u0;
  Displacement f_field = hybrid_force(model, u);
  Eigen::VectorXd r = gather(f_field.data, idx);
  double res_norm = r.norm();
  std::vector<double> history{res_norm};

  SolverResult res;
  res.u_star = u;
  res.residual_norm = res_norm;
  if (res_norm <= tol) {
    res.converged = true;
    res.wall_time = timer.elapsed();
    return res;
  }

  Displacement dir(model.config->size(), model.comps());
  const auto apply = [&](const Eigen::VectorXd& w) {
    scatter(w, idx, dir.data);
    const Displacement jv = hybrid_force_jacobian_apply(model, u, dir);
    return gather(jv.data, idx);
  };

  for (int k = 1; k <= max_iter; ++k) {
    const Eigen::VectorXd d = gmres_solve(apply, -r, 50, 1e-2);

    // damped step: backtrack on the force norm
    double t = 1.0;
    bool accepted = false;
    Displacement u_try = u;
    for (int bt = 0; bt < 30; ++bt) {
      u_try.data = u.data;
      for (std::size_t i = 0; i < idx.size(); ++i)
        u_try.data[idx[i]] += t * d[i];
      f_field = hybrid_force(model, u_try);
      const Eigen::VectorXd r_try = gather(f_field.data, idx);
      if (r_try.norm() <= (1.0 - 1e-4 * t) * res_norm) {
        u = u_try;
        r = r_try;
        res_norm = r.norm();
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    res.iterations = k;
    if (!accepted) {
      res.message = "backtracking failed to reduce the force norm";
      break;
    }
    history.push_back(res_norm);
    if (log)
      (*log) << "newton iter=" << k << " |F|=" << res_norm << " step=" << t
             << "\n";
    if (res_norm <= tol) {
      res.converged = true;
      break;
    }
    if (k >= 5) {
      const double prev = history[history.size() - 6];
      if ((prev - res_norm) / prev < 1e-3) {
        res.message = "stagnation: force norm reduction below 1e-3 over 5 steps";
        break;
      }
    }
  }
  if (!res.converged && res.message.empty())
    res.message = "max iterations reached";
  res.u_star = u;
  res.residual_norm = res_norm;
  res.wall_time = timer.elapsed();
  return res;
}

SolverResult reference_solve_atm(const ReferenceConfig& config,
                                 const TBParams& params, CaseKind kind,
                                 double r_domain, double tol, int max_iter,
                                 double r_clamp, const Displacement* warm_start,
                                 std::ostream* log,
                                 const std::optional<ScrewPredictor>& predictor) {
  if (r_clamp < 0) r_clamp = params.r_cut;
  if (r_domain > config.domain_radius + 1e-9)
    throw InvalidGeometry("reference radius exceeds the built domain");
  const int c = kind == CaseKind::P ? 2 : 1;
  const int n = config.size();

  Eigen::VectorXd u0_site;
  std::optional<ScrewPredictor> pred = predictor;
  if (kind == CaseKind::D) {
    if (!pred) pred = ScrewPredictor::standard(config.spec);
    if (params.z_period <= 0)
      throw InvalidParameter("anti-plane case requires z_period > 0");
    u0_site.resize(n);
    for (int id = 0; id < n; ++id)
      u0_site[id] = screw_u0(config.site(id), *pred);
  }

  std::vector<int> idx;
  for (int id = 0; id < n; ++id)
    if (config.site(id).norm() <= r_domain - r_clamp + 1e-12)
      for (int k = 0; k < c; ++k) idx.push_back(id * c + k);

  Displacement u(n, c);
  std::vector<Vec3> pos(n);
  const auto positions = [&]() {
    for (int id = 0; id < n; ++id) {
      const Vec2& x = config.site(id);
      if (kind == CaseKind::P)
        pos[id] = Vec3(x.x() + u.site(id)[0], x.y() + u.site(id)[1], 0.0);
      else
        pos[id] = Vec3(x.x(), x.y(), u0_site[id] + u.site(id)[0]);
    }
  };

  positions();
  const SpectralData s0 = solve_spectrum(assemble_hamiltonian(pos, params));
  const double e0 = band_energy(s0, params);

  const Objective fg = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    scatter(x, idx, u.data);
    positions();
    const SpectralData sp = solve_spectrum(assemble_hamiltonian(pos, params));
    const auto grads = total_gradient(sp, pos, params);
    Eigen::VectorXd gfull(std::int64_t(n) * c);
    for (int id = 0; id < n; ++id) {
      if (c == 2) {
        gfull[2 * id] = grads[id].x();
        gfull[2 * id + 1] = grads[id].y();
      } else {
        gfull[id] = grads[id].z();
      }
    }
    g = gather(gfull, idx);
    return band_energy(sp, params) - e0;
  };

  Timer timer;
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(idx.size());
  if (warm_start) {
    if (warm_start->comps != c || warm_start->n_sites() != n)
      throw InvalidParameter("warm start does not match the configuration");
    x0 = gather(warm_start->data, idx);
  }
  const OptResult opt = lbfgs_minimize(fg, x0, tol, max_iter, 20, log);

  SolverResult res;
  res.u_star = Displacement(n, c);
  scatter(opt.x, idx, res.u_star.data);
  res.iterations = opt.iterations;
  res.residual_norm = opt.residual_norm;
  res.converged = opt.converged;
  res.energy = opt.f;
  res.message = opt.message;
  res.wall_time = timer.elapsed();
  return res;
}

std::vector<double> stability_check(const HybridModel& model,
                                    const Displacement& u_star, int n_eigs,
                                    int max_iter) {
  check_admissible(model, u_star);
  const auto idx = free_dof_indices(model);
  const int n = int(idx.size());

  if (model.scheme == Scheme::energy) {
    Displacement up = u_star, um = u_star;
    const auto apply = [&](const Eigen::VectorXd& v) {
      const double h = 1e-6 / std::max(1.0, v.cwiseAbs().maxCoeff());
      up.data = u_star.data;
      um.data = u_star.data;
      for (int i = 0; i < n; ++i) {
        up.data[idx[i]] += h * v[i];
        um.data[idx[i]] -= h * v[i];
      }
      const Displacement gp = hybrid_energy_gradient(model, up);
      const Displacement gm = hybrid_energy_gradient(model, um);
      return Eigen::VectorXd((gather(gp.data, idx) - gather(gm.data, idx)) /
                             (2 * h));
    };
    return lanczos_smallest(apply, n, n_eigs, max_iter);
  }

  // force scheme: assemble the free-DOF Jacobian and symmetrize
  Eigen::MatrixXd jac(n, n);
  Displacement dir(model.config->size(), model.comps());
  for (int i = 0; i < n; ++i) {
    dir.data.setZero();
    dir.data[idx[i]] = 1.0;
    const Displacement jv = hybrid_force_jacobian_apply(model, u_star, dir);
    jac.col(i) = gather(jv.data, idx);
  }
  const Eigen::MatrixXd sym = 0.5 * (jac + jac.transpose());
  const auto apply = [&](const Eigen::VectorXd& v) {
    return Eigen::VectorXd(sym * v);
  };
  return lanczos_smallest(apply, n, n_eigs, max_iter);
}

}  // namespace qmmm
