#include "qmmm/coupling.hpp"

#include <algorithm>
#include <cmath>

namespace qmmm {

namespace {

// stencil window of u around site l, shifted so the center entry is zero;
// for case D the elastic strain of the predictor is added (slip-corrected)
void window_argument(const HybridModel& model, const Displacement& u,
                     int active_idx, Eigen::VectorXd& g) {
  const int c = model.comps();
  const int n_off = model.taylor_e.dom.n_offsets();
  const int l = model.active_ids[active_idx];
  const double* ul = u.site(l);
  g.resize(std::int64_t(n_off) * c);
  for (int j = 0; j < n_off; ++j) {
    const int nb = model.windows(j, active_idx);
    const double* un = u.site(nb);
    for (int k = 0; k < c; ++k) g[j * c + k] = un[k] - ul[k];
  }
  if (model.kind == CaseKind::D) g += model.ee[active_idx];
}

void project_rows(const HybridModel& model, const std::vector<Vec3>& grads,
                  const std::vector<int>& ids, Displacement& out,
                  double scale = 1.0) {
  const int c = model.comps();
  for (std::size_t s = 0; s < ids.size(); ++s) {
    double* row = out.site(ids[s]);
    if (c == 2) {
      row[0] += scale * grads[s].x();
      row[1] += scale * grads[s].y();
    } else {
      row[0] += scale * grads[s].z();
    }
  }
}

void zero_ff_rows(const HybridModel& model, Displacement& g) {
  const auto& labels = model.decomp.labels;
  for (int id = 0; id < int(labels.size()); ++id)
    if (labels[id] == Region::FF)
      for (int k = 0; k < g.comps; ++k) g.site(id)[k] = 0.0;
}

// fills the QM rows of the hybrid force from one shared cluster evaluation
void qm_force_rows(const HybridModel& model, const Displacement& u,
                   Displacement& out) {
  const auto pos = model_positions(model, u, model.qm_cluster);
  const auto spectral = solve_spectrum(assemble_hamiltonian(pos, model.params));
  const auto grads = total_gradient(spectral, pos, model.params);
  const int c = model.comps();
  for (std::size_t i = 0; i < model.decomp.qm_ids.size(); ++i) {
    const int slot = model.qm_pos_in_cluster[i];
    double* row = out.site(model.decomp.qm_ids[i]);
    if (c == 2) {
      row[0] = grads[slot].x();
      row[1] = grads[slot].y();
    } else {
      row[0] = grads[slot].z();
    }
  }
}

}  // namespace

std::vector<Vec3> model_positions(const HybridModel& model,
                                  const Displacement& u,
                                  const std::vector<int>& ids) {
  std::vector<Vec3> pos(ids.size());
  const auto& cfg = *model.config;
  if (model.kind == CaseKind::P) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const Vec2& x = cfg.site(ids[i]);
      const double* ui = u.site(ids[i]);
      pos[i] = Vec3(x.x() + ui[0], x.y() + ui[1], 0.0);
    }
  } else {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const Vec2& x = cfg.site(ids[i]);
      pos[i] = Vec3(x.x(), x.y(), model.u0_site[ids[i]] + u.site(ids[i])[0]);
    }
  }
  return pos;
}

HybridModel build_hybrid_model(const ReferenceConfig& config,
                               const RegionDecomposition& decomp,
                               const TBParams& params, int k_e, int k_f,
                               CaseKind kind, Scheme scheme, double fd_step,
                               double drop_tol,
                               const std::optional<std::string>& cache_dir,
                               const std::optional<ScrewPredictor>& predictor) {
  HybridModel m;
  m.config = &config;
  m.decomp = decomp;
  m.params = params;
  m.kind = kind;
  m.scheme = scheme;
  if (scheme == Scheme::energy && k_e < 2)
    throw InvalidParameter("energy mixing requires k_E >= 2");
  if (scheme == Scheme::force && k_f < 1)
    throw InvalidParameter("force mixing requires k_F >= 1");

  const int c = m.comps();
  if (kind == CaseKind::D) {
    m.predictor = predictor ? *predictor : ScrewPredictor::standard(config.spec);
    if (params.z_period <= 0)
      throw InvalidParameter(
          "anti-plane case requires z_period > 0 (slip periodicity)");
    m.u0_site.resize(config.size());
    for (int id = 0; id < config.size(); ++id)
      m.u0_site[id] = screw_u0(config.site(id), *m.predictor);
  }

  const StencilDomain dom = StencilDomain::build(config.spec, decomp.r_buf, c);
  m.taylor_e = build_taylor_potential(k_e, params, dom, fd_step, drop_tol,
                                      cache_dir);
  m.taylor_f = build_taylor_force(k_f, params, dom, fd_step, drop_tol,
                                  cache_dir);

  // shared QM evaluation cluster and reference site energies
  m.qm_cluster = decomp.qm_ids;
  m.qm_cluster.insert(m.qm_cluster.end(), decomp.buffer_ids.begin(),
                      decomp.buffer_ids.end());
  std::sort(m.qm_cluster.begin(), m.qm_cluster.end());
  m.qm_pos_in_cluster.resize(decomp.qm_ids.size());
  m.qm_weights = Eigen::VectorXd::Zero(int(m.qm_cluster.size()));
  for (std::size_t i = 0; i < decomp.qm_ids.size(); ++i) {
    const auto it = std::lower_bound(m.qm_cluster.begin(), m.qm_cluster.end(),
                                     decomp.qm_ids[i]);
    m.qm_pos_in_cluster[i] = int(it - m.qm_cluster.begin());
    m.qm_weights[m.qm_pos_in_cluster[i]] = 1.0;
  }
  {
    const Displacement u0(config.size(), c);
    const auto pos = model_positions(m, u0, m.qm_cluster);
    const auto spectral =
        solve_spectrum(assemble_hamiltonian(pos, m.params));
    const Eigen::VectorXd ev = site_energies(spectral, m.params);
    m.e0_qm.resize(int(decomp.qm_ids.size()));
    for (std::size_t i = 0; i < decomp.qm_ids.size(); ++i)
      m.e0_qm[int(i)] = ev[m.qm_pos_in_cluster[i]];
  }

  // MM/FF sites participating in the Taylor sums and their stencil windows
  const double r_active = decomp.r_mm + decomp.r_buf;
  if (config.domain_radius < decomp.r_mm + 2 * decomp.r_buf - 1e-9)
    throw InvalidGeometry(
        "domain radius must be at least R_MM + 2 R_BUF to close the stencil "
        "windows");
  for (int id = 0; id < config.size(); ++id)
    if (decomp.labels[id] != Region::QM &&
        config.site(id).norm() <= r_active + 1e-12)
      m.active_ids.push_back(id);
  const int n_off = dom.n_offsets();
  m.windows.resize(n_off, int(m.active_ids.size()));
  for (std::size_t a = 0; a < m.active_ids.size(); ++a) {
    const Vec2& x = config.site(m.active_ids[a]);
    for (int j = 0; j < n_off; ++j) {
      const auto nb = config.id_at(x + dom.offsets[j]);
      if (!nb)
        throw InvalidGeometry("stencil window leaves the computational domain");
      m.windows(j, int(a)) = *nb;
    }
  }

  if (kind == CaseKind::D) {
    const auto strain = elastic_strain(config, *m.predictor, decomp.r_buf);
    m.ee.resize(m.active_ids.size());
    m.vmm_ee.resize(m.active_ids.size());
    for (std::size_t a = 0; a < m.active_ids.size(); ++a) {
      m.ee[a] = strain.at(m.active_ids[a]);
      m.vmm_ee[a] = m.taylor_e.eval(m.ee[a]);
    }
    m.strain = std::move(strain);
  } else {
    m.vmm_ee.assign(m.active_ids.size(), m.taylor_e.c0);
  }
  return m;
}

void check_admissible(const HybridModel& model, const Displacement& u) {
  if (u.comps != model.comps())
    throw AdmissibilityError("displacement component count mismatch");
  if (u.n_sites() != model.config->size())
    throw AdmissibilityError("displacement size does not match configuration");
  const auto& labels = model.decomp.labels;
  for (int id = 0; id < int(labels.size()); ++id)
    if (labels[id] == Region::FF)
      for (int k = 0; k < u.comps; ++k)
        if (u.site(id)[k] != 0.0)
          throw AdmissibilityError("displacement must vanish on the far field");
}

double hybrid_energy(const HybridModel& model, const Displacement& u) {
  check_admissible(model, u);
  double e = 0.0;
  {
    const auto pos = model_positions(model, u, model.qm_cluster);
    const auto spectral =
        solve_spectrum(assemble_hamiltonian(pos, model.params));
    const Eigen::VectorXd ev = site_energies(spectral, model.params);
    for (std::size_t i = 0; i < model.decomp.qm_ids.size(); ++i)
      e += ev[model.qm_pos_in_cluster[i]] - model.e0_qm[int(i)];
  }
  Eigen::VectorXd g;
  for (std::size_t a = 0; a < model.active_ids.size(); ++a) {
    window_argument(model, u, int(a), g);
    e += model.taylor_e.eval(g) - model.vmm_ee[a];
  }
  return e;
}

double hybrid_energy_and_gradient(const HybridModel& model,
                                  const Displacement& u, Displacement& grad) {
  check_admissible(model, u);
  const int c = model.comps();
  grad = Displacement(model.config->size(), c);
  double e = 0.0;

  const auto pos = model_positions(model, u, model.qm_cluster);
  const auto spectral = solve_spectrum(assemble_hamiltonian(pos, model.params));
  const Eigen::VectorXd ev = site_energies(spectral, model.params);
  for (std::size_t i = 0; i < model.decomp.qm_ids.size(); ++i)
    e += ev[model.qm_pos_in_cluster[i]] - model.e0_qm[int(i)];
  const auto qm_grads =
      weighted_site_gradient(spectral, pos, model.params, model.qm_weights);
  project_rows(model, qm_grads, model.qm_cluster, grad);

  Eigen::VectorXd g;
  const int n_off = model.taylor_e.dom.n_offsets();
  for (std::size_t a = 0; a < model.active_ids.size(); ++a) {
    const int l = model.active_ids[a];
    window_argument(model, u, int(a), g);
    e += model.taylor_e.eval(g) - model.vmm_ee[a];
    const Eigen::VectorXd gv = model.taylor_e.grad_eval(g);
    double* rl = grad.site(l);
    for (int j = 0; j < n_off; ++j) {
      double* rn = grad.site(model.windows(j, int(a)));
      for (int k = 0; k < c; ++k) {
        rn[k] += gv[j * c + k];
        rl[k] -= gv[j * c + k];
      }
    }
  }
  zero_ff_rows(model, grad);
  return e;
}

Displacement hybrid_energy_gradient(const HybridModel& model,
                                    const Displacement& u) {
  Displacement grad;
  hybrid_energy_and_gradient(model, u, grad);
  return grad;
}

Displacement hybrid_force(const HybridModel& model, const Displacement& u) {
  check_admissible(model, u);
  const int c = model.comps();
  Displacement out(model.config->size(), c);
  qm_force_rows(model, u, out);

  // MM rows: Taylor force on the centered stencil window (center entry 0;
  // rigid shifts of the window leave the homogeneous force invariant)
  const int n_off = model.taylor_f.dom.n_offsets();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(model.taylor_f.dom.window_dof());
  Eigen::VectorXd g;
  for (std::size_t a = 0; a < model.active_ids.size(); ++a) {
    const int l = model.active_ids[a];
    if (model.decomp.labels[l] != Region::MM) continue;
    window_argument(model, u, int(a), g);
    w.tail(std::int64_t(n_off) * c) = g;
    const Eigen::VectorXd f = model.taylor_f.eval(w);
    for (int k = 0; k < c; ++k) out.site(l)[k] = f[k];
  }
  return out;
}

Displacement hybrid_force_jacobian_apply(const HybridModel& model,
                                         const Displacement& u,
                                         const Displacement& v) {
  check_admissible(model, u);
  check_admissible(model, v);
  const int c = model.comps();
  Displacement out(model.config->size(), c);

  const double vmax = v.data.size() ? v.data.cwiseAbs().maxCoeff() : 0.0;
  if (vmax == 0.0) return out;

  // QM rows by central differences of the cluster force
  {
    const double h = 1e-6 / vmax;
    Displacement up = u, um = u;
    up.data += h * v.data;
    um.data -= h * v.data;
    Displacement fp(model.config->size(), c), fm(model.config->size(), c);
    qm_force_rows(model, up, fp);
    qm_force_rows(model, um, fm);
    for (int id : model.decomp.qm_ids)
      for (int k = 0; k < c; ++k)
        out.site(id)[k] = (fp.site(id)[k] - fm.site(id)[k]) / (2 * h);
  }

  // MM rows analytically through the Taylor force Jacobian
  const int n_off = model.taylor_f.dom.n_offsets();
  const auto wdof = model.taylor_f.dom.window_dof();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(wdof);
  Eigen::VectorXd dw = Eigen::VectorXd::Zero(wdof);
  Eigen::VectorXd g;
  for (std::size_t a = 0; a < model.active_ids.size(); ++a) {
    const int l = model.active_ids[a];
    if (model.decomp.labels[l] != Region::MM) continue;
    window_argument(model, u, int(a), g);
    w.tail(std::int64_t(n_off) * c) = g;
    const double* vl = v.site(l);
    for (int j = 0; j < n_off; ++j) {
      const double* vn = v.site(model.windows(j, int(a)));
      for (int k = 0; k < c; ++k) dw[(j + 1) * c + k] = vn[k] - vl[k];
    }
    const Eigen::VectorXd df = model.taylor_f.jac_apply(w, dw);
    for (int k = 0; k < c; ++k) out.site(l)[k] = df[k];
  }
  return out;
}

}  // namespace qmmm
