#include "qmmm/site_potential.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

namespace qmmm {

StencilDomain StencilDomain::build(const LatticeSpec& spec, double r_buf,
                                   int comps) {
  StencilDomain dom;
  dom.r_buf = r_buf;
  dom.comps = comps;
  const Mat2 A = spec.bravais;
  const int M = int(std::ceil(r_buf * A.inverse().cwiseAbs().sum())) + 2;
  for (int n1 = -M; n1 <= M; ++n1)
    for (int n2 = -M; n2 <= M; ++n2) {
      if (n1 == 0 && n2 == 0) continue;
      const Vec2 x = A * Vec2(n1, n2);
      if (x.norm() <= r_buf + 1e-12) dom.offsets.push_back(x);
    }
  return dom;
}

std::vector<Vec3> homogeneous_cluster_positions(const StencilDomain& dom,
                                                const Eigen::VectorXd& g) {
  if (g.size() != dom.n_dof())
    throw InvalidParameter("stencil displacement has wrong size");
  std::vector<Vec3> pos(dom.n_offsets() + 1);
  pos[0] = Vec3::Zero();
  for (int j = 0; j < dom.n_offsets(); ++j) {
    Vec3 p(dom.offsets[j].x(), dom.offsets[j].y(), 0.0);
    if (dom.comps == 2) {
      p.x() += g[2 * j];
      p.y() += g[2 * j + 1];
    } else {
      p.z() += g[j];
    }
    pos[j + 1] = p;
  }
  return pos;
}

double homogeneous_site_potential(const Eigen::VectorXd& g,
                                  const TBParams& params,
                                  const StencilDomain& dom) {
  const auto pos = homogeneous_cluster_positions(dom, g);
  const auto spec = solve_spectrum(assemble_hamiltonian(pos, params));
  return site_energies(spec, params)[0];
}

Eigen::VectorXd homogeneous_site_gradient(const Eigen::VectorXd& g,
                                          const TBParams& params,
                                          const StencilDomain& dom) {
  const auto pos = homogeneous_cluster_positions(dom, g);
  const auto spec = solve_spectrum(assemble_hamiltonian(pos, params));
  const auto full = site_energy_gradient(spec, pos, params, 0);
  Eigen::VectorXd out(dom.n_dof());
  for (int j = 0; j < dom.n_offsets(); ++j) {
    if (dom.comps == 2) {
      out[2 * j] = full[j + 1].x();
      out[2 * j + 1] = full[j + 1].y();
    } else {
      out[j] = full[j + 1].z();
    }
  }
  return out;
}

Eigen::VectorXd homogeneous_force(const Eigen::VectorXd& w,
                                  const TBParams& params,
                                  const StencilDomain& dom) {
  if (w.size() != dom.window_dof())
    throw InvalidParameter("window displacement has wrong size");
  const int c = dom.comps;
  std::vector<Vec3> pos(dom.n_offsets() + 1);
  auto place = [&](int slot, const Vec2& base) {
    Vec3 p(base.x(), base.y(), 0.0);
    if (c == 2) {
      p.x() += w[slot * 2];
      p.y() += w[slot * 2 + 1];
    } else {
      p.z() += w[slot];
    }
    return p;
  };
  pos[0] = place(0, Vec2::Zero());
  for (int j = 0; j < dom.n_offsets(); ++j) pos[j + 1] = place(j + 1, dom.offsets[j]);
  const auto grad = total_gradient(pos, params);
  Eigen::VectorXd out(c);
  if (c == 2) {
    out << grad[0].x(), grad[0].y();
  } else {
    out << grad[0].z();
  }
  return out;
}

namespace {

double perm_multiplicity(int i, int j, int k) {
  if (i == j && j == k) return 1.0;
  if (i == j || j == k || i == k) return 3.0;
  return 6.0;
}

nlohmann::json tensor_to_json(const std::vector<Tensor3Entry>& t) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : t) arr.push_back({e.i, e.j, e.k, e.v});
  return arr;
}

std::vector<Tensor3Entry> tensor_from_json(const nlohmann::json& arr) {
  std::vector<Tensor3Entry> t;
  for (const auto& e : arr)
    t.push_back({e[0].get<int>(), e[1].get<int>(), e[2].get<int>(),
                 e[3].get<double>()});
  return t;
}

nlohmann::json dom_to_json(const StencilDomain& d) {
  nlohmann::json j;
  j["r_buf"] = d.r_buf;
  j["comps"] = d.comps;
  nlohmann::json offs = nlohmann::json::array();
  for (const auto& o : d.offsets) offs.push_back({o.x(), o.y()});
  j["offsets"] = offs;
  return j;
}

StencilDomain dom_from_json(const nlohmann::json& j) {
  StencilDomain d;
  d.r_buf = j.at("r_buf").get<double>();
  d.comps = j.at("comps").get<int>();
  for (const auto& o : j.at("offsets"))
    d.offsets.push_back(Vec2(o[0].get<double>(), o[1].get<double>()));
  return d;
}

}  // namespace

double TaylorSitePotential::eval(const Eigen::VectorXd& g) const {
  if (g.size() != dom.n_dof()) throw InvalidParameter("stencil-domain mismatch");
  double v = c0 + grad.dot(g);
  if (order >= 2) v += 0.5 * g.dot(hess * g);
  for (const auto& e : third)
    v += e.v * perm_multiplicity(e.i, e.j, e.k) / 6.0 * g[e.i] * g[e.j] * g[e.k];
  return v;
}

Eigen::VectorXd TaylorSitePotential::grad_eval(const Eigen::VectorXd& g) const {
  if (g.size() != dom.n_dof()) throw InvalidParameter("stencil-domain mismatch");
  Eigen::VectorXd out = grad;
  if (order >= 2) out += hess * g;
  for (const auto& e : third) {
    const double c = e.v * perm_multiplicity(e.i, e.j, e.k) / 6.0;
    out[e.i] += c * g[e.j] * g[e.k];
    out[e.j] += c * g[e.i] * g[e.k];
    out[e.k] += c * g[e.i] * g[e.j];
  }
  return out;
}

nlohmann::json TaylorSitePotential::to_json() const {
  nlohmann::json j;
  j["order"] = order;
  j["dom"] = dom_to_json(dom);
  j["c0"] = c0;
  j["grad"] = std::vector<double>(grad.data(), grad.data() + grad.size());
  std::vector<double> h(hess.data(), hess.data() + hess.size());
  j["hess"] = h;
  j["third"] = tensor_to_json(third);
  j["drop_tol"] = drop_tol;
  j["fd_step"] = fd_step;
  return j;
}

Eigen::VectorXd TaylorForce::eval(const Eigen::VectorXd& w) const {
  if (w.size() != dom.window_dof())
    throw InvalidParameter("stencil-domain mismatch");
  Eigen::VectorXd out = jac * w;
  for (const auto& e : second) {
    const double m = (e.j == e.k) ? 0.5 : 1.0;
    out[e.i] += m * e.v * w[e.j] * w[e.k];
  }
  return out;
}

Eigen::VectorXd TaylorForce::jac_apply(const Eigen::VectorXd& w,
                                       const Eigen::VectorXd& dw) const {
  Eigen::VectorXd out = jac * dw;
  for (const auto& e : second) {
    if (e.j == e.k) {
      out[e.i] += e.v * w[e.j] * dw[e.j];
    } else {
      out[e.i] += e.v * (w[e.j] * dw[e.k] + w[e.k] * dw[e.j]);
    }
  }
  return out;
}

nlohmann::json TaylorForce::to_json() const {
  nlohmann::json j;
  j["order"] = order;
  j["dom"] = dom_to_json(dom);
  std::vector<double> jd(jac.data(), jac.data() + jac.size());
  j["jac"] = jd;
  j["jac_rows"] = jac.rows();
  j["jac_cols"] = jac.cols();
  j["second"] = tensor_to_json(second);
  j["drop_tol"] = drop_tol;
  j["fd_step"] = fd_step;
  return j;
}

namespace {

std::string cache_path(const std::string& dir, const std::string& kind,
                       const std::string& key) {
  const auto h = std::hash<std::string>{}(key);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016zx", h);
  return dir + "/" + kind + "_" + buf + ".json";
}

std::optional<nlohmann::json> cache_load(const std::string& path,
                                         const std::string& key) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  nlohmann::json j;
  in >> j;
  if (j.value("key", "") != key) return std::nullopt;
  return j;
}

void cache_store(const std::string& path, nlohmann::json j,
                 const std::string& key) {
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  j["key"] = key;
  std::ofstream out(path);
  out << j.dump();
}

std::string make_key(const char* kind, const TBParams& params,
                     const StencilDomain& dom, int k, double fd_step,
                     double drop_tol) {
  std::ostringstream os;
  os.precision(17);
  os << kind << '|' << params.content_key() << '|' << dom.r_buf << '|'
     << dom.comps << '|' << k << '|' << fd_step << '|' << drop_tol;
  return os.str();
}

}  // namespace

TaylorSitePotential TaylorSitePotential::from_json(const nlohmann::json& j) {
  TaylorSitePotential p;
  p.order = j.at("order").get<int>();
  p.c0 = j.at("c0").get<double>();
  const auto g = j.at("grad").get<std::vector<double>>();
  p.grad = Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
  const auto h = j.at("hess").get<std::vector<double>>();
  const int n = int(g.size());
  p.hess = Eigen::Map<const Eigen::MatrixXd>(h.data(), n, n);
  p.third = tensor_from_json(j.at("third"));
  p.drop_tol = j.at("drop_tol").get<double>();
  p.fd_step = j.at("fd_step").get<double>();
  p.dom = dom_from_json(j.at("dom"));
  return p;
}

TaylorForce TaylorForce::from_json(const nlohmann::json& j) {
  TaylorForce f;
  f.order = j.at("order").get<int>();
  const auto jd = j.at("jac").get<std::vector<double>>();
  f.jac = Eigen::Map<const Eigen::MatrixXd>(
      jd.data(), j.at("jac_rows").get<int>(), j.at("jac_cols").get<int>());
  f.second = tensor_from_json(j.at("second"));
  f.drop_tol = j.at("drop_tol").get<double>();
  f.fd_step = j.at("fd_step").get<double>();
  f.dom = dom_from_json(j.at("dom"));
  return f;
}

TaylorSitePotential build_taylor_potential(
    int k, const TBParams& params, const StencilDomain& dom, double fd_step,
    double drop_tol, const std::optional<std::string>& cache_dir) {
  if (k < 2 || k > 3) throw InvalidParameter("energy expansion order must be 2 or 3");
  if (fd_step <= 0) throw InvalidParameter("fd_step must be positive");
  const std::string key = make_key("tpot", params, dom, k, fd_step, drop_tol);
  if (cache_dir) {
    if (auto j = cache_load(cache_path(*cache_dir, "tpot", key), key)) {
      auto p = TaylorSitePotential::from_json(*j);
      p.dom = dom;
      return p;
    }
  }

  TaylorSitePotential pot;
  pot.order = k;
  pot.dom = dom;
  pot.drop_tol = drop_tol;
  pot.fd_step = fd_step;
  const int n = dom.n_dof();
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
  pot.c0 = homogeneous_site_potential(zero, params, dom);
  pot.grad = homogeneous_site_gradient(zero, params, dom);

  auto hess_at = [&](const Eigen::VectorXd& base) {
    Eigen::MatrixXd H(n, n);
    for (int j = 0; j < n; ++j) {
      Eigen::VectorXd gp = base, gm = base;
      gp[j] += fd_step;
      gm[j] -= fd_step;
      H.col(j) = (homogeneous_site_gradient(gp, params, dom) -
                  homogeneous_site_gradient(gm, params, dom)) /
                 (2.0 * fd_step);
    }
    return H;
  };

  Eigen::MatrixXd H = hess_at(zero);
  const double asym = (H - H.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-4)
    throw DerivativeInconsistency(
        "Hessian asymmetry " + std::to_string(asym) + " exceeds 1e-4; check fd_step");
  H = 0.5 * (H + H.transpose());
  H = (H.cwiseAbs().array() < drop_tol).select(0.0, H);
  pot.hess = H;

  if (k == 3) {
    // third derivatives as mixed second differences of the analytic gradient,
    // Richardson-extrapolated to remove the O(h^2) truncation term; the step
    // is large relative to fd_step so eigensolver noise stays below the
    // h^-2 amplification
    const double h3 = 100.0 * fd_step;
    auto grad_at = [&](const Eigen::VectorXd& g) {
      return homogeneous_site_gradient(g, params, dom);
    };
    auto d2 = [&](int a, int b, double h) -> Eigen::VectorXd {
      if (a == b) {
        Eigen::VectorXd gp = zero, gm = zero;
        gp[a] += h;
        gm[a] -= h;
        return (grad_at(gp) - 2.0 * pot.grad + grad_at(gm)) / (h * h);
      }
      Eigen::VectorXd gpp = zero, gpm = zero, gmp = zero, gmm = zero;
      gpp[a] += h;
      gpp[b] += h;
      gpm[a] += h;
      gpm[b] -= h;
      gmp[a] -= h;
      gmp[b] += h;
      gmm[a] -= h;
      gmm[b] -= h;
      return (grad_at(gpp) - grad_at(gpm) - grad_at(gmp) + grad_at(gmm)) /
             (4.0 * h * h);
    };
    std::map<std::array<int, 3>, std::pair<double, int>> acc;
    for (int a = 0; a < n; ++a)
      for (int b = a; b < n; ++b) {
        const Eigen::VectorXd D =
            (4.0 * d2(a, b, h3) - d2(a, b, 2.0 * h3)) / 3.0;
        for (int i = 0; i < n; ++i) {
          std::array<int, 3> key = {i, a, b};
          std::sort(key.begin(), key.end());
          auto& [sum, cnt] = acc[key];
          sum += D[i];
          ++cnt;
        }
      }
    for (const auto& [key, sc] : acc) {
      const double v = sc.first / sc.second;
      if (std::abs(v) >= drop_tol)
        pot.third.push_back({key[0], key[1], key[2], v});
    }
  }

  if (cache_dir)
    cache_store(cache_path(*cache_dir, "tpot", key), pot.to_json(), key);
  return pot;
}

TaylorForce build_taylor_force(int k, const TBParams& params,
                               const StencilDomain& dom, double fd_step,
                               double drop_tol,
                               const std::optional<std::string>& cache_dir) {
  if (k < 1 || k > 2) throw InvalidParameter("force expansion order must be 1 or 2");
  if (fd_step <= 0) throw InvalidParameter("fd_step must be positive");
  const std::string key = make_key("tforce", params, dom, k, fd_step, drop_tol);
  const int c = dom.comps;
  const int m = dom.window_dof();
  if (cache_dir) {
    if (auto j = cache_load(cache_path(*cache_dir, "tforce", key), key)) {
      auto f = TaylorForce::from_json(*j);
      f.dom = dom;
      return f;
    }
  }

  TaylorForce tf;
  tf.order = k;
  tf.dom = dom;
  tf.drop_tol = drop_tol;
  tf.fd_step = fd_step;

  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(m);
  const Eigen::VectorXd f0 = homogeneous_force(zero, params, dom);
  if (f0.cwiseAbs().maxCoeff() > 1e-10)
    throw NonEquilibriumReference(
        "zeroth-order force on the reference lattice is " +
        std::to_string(f0.cwiseAbs().maxCoeff()));

  auto jac_at = [&](const Eigen::VectorXd& base) {
    Eigen::MatrixXd J(c, m);
    for (int j = 0; j < m; ++j) {
      Eigen::VectorXd wp = base, wm = base;
      wp[j] += fd_step;
      wm[j] -= fd_step;
      J.col(j) = (homogeneous_force(wp, params, dom) -
                  homogeneous_force(wm, params, dom)) /
                 (2.0 * fd_step);
    }
    return J;
  };

  Eigen::MatrixXd J = jac_at(zero);
  J = (J.cwiseAbs().array() < drop_tol).select(0.0, J);
  tf.jac = J;

  if (k == 2) {
    // force curvature as mixed second differences of the analytic force,
    // Richardson-extrapolated (same stepping rationale as the third-order
    // energy coefficients)
    const double h2 = 100.0 * fd_step;
    auto F = [&](const Eigen::VectorXd& w) {
      return homogeneous_force(w, params, dom);
    };
    auto d2 = [&](int a, int b, double h) -> Eigen::VectorXd {
      if (a == b) {
        Eigen::VectorXd wp = zero, wm = zero;
        wp[a] += h;
        wm[a] -= h;
        return (F(wp) - 2.0 * f0 + F(wm)) / (h * h);
      }
      Eigen::VectorXd wpp = zero, wpm = zero, wmp = zero, wmm = zero;
      wpp[a] += h;
      wpp[b] += h;
      wpm[a] += h;
      wpm[b] -= h;
      wmp[a] -= h;
      wmp[b] += h;
      wmm[a] -= h;
      wmm[b] -= h;
      return (F(wpp) - F(wpm) - F(wmp) + F(wmm)) / (4.0 * h * h);
    };
    for (int a = 0; a < m; ++a)
      for (int b = a; b < m; ++b) {
        const Eigen::VectorXd D =
            (4.0 * d2(a, b, h2) - d2(a, b, 2.0 * h2)) / 3.0;
        for (int ci = 0; ci < c; ++ci)
          if (std::abs(D[ci]) >= drop_tol)
            tf.second.push_back({ci, a, b, D[ci]});
      }
  }

  if (cache_dir)
    cache_store(cache_path(*cache_dir, "tforce", key), tf.to_json(), key);
  return tf;
}

Vec3 displaced_position(const ReferenceConfig& config, const Displacement& u,
                        int id) {
  const Vec2& x = config.site(id);
  if (u.comps == 2)
    return {x.x() + u.site(id)[0], x.y() + u.site(id)[1], 0.0};
  return {x.x(), x.y(), u.site(id)[0]};
}

std::vector<int> buffered_cluster_ids(const RegionDecomposition& decomp,
                                      const ReferenceConfig& config, int l) {
  if (decomp.labels[l] == Region::QM) {
    std::vector<int> ids = decomp.qm_ids;
    ids.insert(ids.end(), decomp.buffer_ids.begin(), decomp.buffer_ids.end());
    std::sort(ids.begin(), ids.end());
    return ids;
  }
  if (config.site(l).norm() + decomp.r_buf > config.domain_radius + 1e-12)
    throw InvalidGeometry("buffer cluster extends past the generated domain");
  return config.ids_within(config.site(l), decomp.r_buf);
}

namespace {

std::pair<std::vector<Vec3>, int> cluster_positions(
    const RegionDecomposition& decomp, const ReferenceConfig& config, int l,
    const Displacement& u) {
  const auto ids = buffered_cluster_ids(decomp, config, l);
  std::vector<Vec3> pos(ids.size());
  int lidx = -1;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    pos[i] = displaced_position(config, u, ids[i]);
    if (ids[i] == l) lidx = int(i);
  }
  return {std::move(pos), lidx};
}

}  // namespace

double buffered_site_potential(const RegionDecomposition& decomp,
                               const ReferenceConfig& config, int l,
                               const Displacement& u, const TBParams& params) {
  auto [pos, lidx] = cluster_positions(decomp, config, l, u);
  const auto spec = solve_spectrum(assemble_hamiltonian(pos, params));
  return site_energies(spec, params)[lidx];
}

Eigen::VectorXd buffered_force(const RegionDecomposition& decomp,
                               const ReferenceConfig& config, int l,
                               const Displacement& u, const TBParams& params) {
  auto [pos, lidx] = cluster_positions(decomp, config, l, u);
  const auto grad = total_gradient(pos, params);
  Eigen::VectorXd out(u.comps);
  if (u.comps == 2) {
    out << grad[lidx].x(), grad[lidx].y();
  } else {
    out << grad[lidx].z();
  }
  return out;
}

}  // namespace qmmm
