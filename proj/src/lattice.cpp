#include "qmmm/lattice.hpp"

#include <algorithm>
#include <cmath>

namespace qmmm {

namespace {

std::int64_t cell_key(int n1, int n2) {
  return (std::int64_t(n1) << 32) ^ (std::int64_t(std::uint32_t(n2)));
}

}  // namespace

std::string to_string(DefectKind k) {
  switch (k) {
    case DefectKind::none: return "none";
    case DefectKind::vacancy: return "vacancy";
    case DefectKind::divacancy: return "divacancy";
    case DefectKind::interstitial: return "interstitial";
    case DefectKind::screw: return "screw";
  }
  return "?";
}

DefectKind defect_from_string(const std::string& s) {
  if (s == "none") return DefectKind::none;
  if (s == "vacancy") return DefectKind::vacancy;
  if (s == "divacancy") return DefectKind::divacancy;
  if (s == "interstitial") return DefectKind::interstitial;
  if (s == "screw") return DefectKind::screw;
  throw InvalidParameter("unsupported defect kind: " + s);
}

LatticeSpec LatticeSpec::triangular() {
  LatticeSpec s;
  s.bravais << 1.0, 0.5, 0.0, std::sqrt(3.0) / 2.0;
  return s;
}

ReferenceConfig build_reference(const LatticeSpec& spec, double domain_radius,
                                DefectKind kind, double r_def) {
  if (spec.bravais.determinant() <= 0)
    throw InvalidGeometry("bravais matrix must have positive determinant");
  if (domain_radius <= r_def)
    throw InvalidGeometry("domain_radius must exceed R_def");
  if (r_def < 0) throw InvalidGeometry("R_def must be nonnegative");

  ReferenceConfig cfg;
  cfg.spec = spec;
  cfg.defect = kind;
  cfg.r_def = r_def;
  cfg.domain_radius = domain_radius;

  const Mat2 A = spec.bravais;
  const Mat2 Ainv = A.inverse();
  // bound |n| so that |A n| <= R is contained
  const double opn = Ainv.cwiseAbs().sum();  // crude but safe operator bound
  const int M = int(std::ceil(domain_radius * opn)) + 2;

  std::vector<std::pair<std::int64_t, Vec2>> kept;
  for (int n1 = -M; n1 <= M; ++n1) {
    for (int n2 = -M; n2 <= M; ++n2) {
      const Vec2 x = A * Vec2(n1, n2);
      if (x.norm() > domain_radius + 1e-12) continue;
      if (kind == DefectKind::vacancy && n1 == 0 && n2 == 0) {
        if (r_def < 1e-12) throw InvalidGeometry("vacancy requires R_def > 0");
        continue;
      }
      if (kind == DefectKind::divacancy &&
          ((n1 == 0 && n2 == 0) || (n1 == 1 && n2 == 0))) {
        if ((A * Vec2(1, 0)).norm() > r_def)
          throw InvalidGeometry("divacancy sites must lie inside B_{R_def}");
        continue;
      }
      kept.emplace_back(cell_key(n1, n2), x);
    }
  }
  // lexicographic in (n1, n2) by construction of the loop
  for (const auto& [key, x] : kept) {
    cfg.index_[key] = int(cfg.sites_.size());
    cfg.sites_.push_back(x);
  }
  if (kind == DefectKind::interstitial) {
    // experimental: one extra site at the barycenter of the triangle
    // {0, a1, a2} adjacent to the origin
    const Vec2 x = (A * Vec2(1, 0) + A * Vec2(0, 1)) / 3.0;
    if (x.norm() > r_def)
      throw InvalidGeometry("interstitial site must lie inside B_{R_def}");
    cfg.sites_.push_back(x);
  }
  cfg.build_grid();
  return cfg;
}

void ReferenceConfig::build_grid() {
  cell_size_ = 1.0;
  grid_n_ = 2 * (int(std::ceil(domain_radius / cell_size_)) + 2) + 1;
  grid_.assign(std::size_t(grid_n_) * grid_n_, {});
  const int half = grid_n_ / 2;
  for (int id = 0; id < size(); ++id) {
    const int gx = int(std::floor(sites_[id].x() / cell_size_)) + half;
    const int gy = int(std::floor(sites_[id].y() / cell_size_)) + half;
    grid_[std::size_t(gy) * grid_n_ + gx].push_back(id);
  }
}

std::optional<int> ReferenceConfig::id_at(const Vec2& x) const {
  const Vec2 n = spec.bravais.inverse() * x;
  const int n1 = int(std::lround(n.x()));
  const int n2 = int(std::lround(n.y()));
  auto it = index_.find(cell_key(n1, n2));
  if (it == index_.end()) return std::nullopt;
  if ((sites_[it->second] - x).norm() > 1e-8) return std::nullopt;
  return it->second;
}

std::vector<int> ReferenceConfig::ids_within(const Vec2& center,
                                             double radius) const {
  std::vector<int> out;
  const int half = grid_n_ / 2;
  const int r = int(std::ceil(radius / cell_size_)) + 1;
  const int cx = int(std::floor(center.x() / cell_size_)) + half;
  const int cy = int(std::floor(center.y() / cell_size_)) + half;
  for (int gy = std::max(0, cy - r); gy <= std::min(grid_n_ - 1, cy + r); ++gy)
    for (int gx = std::max(0, cx - r); gx <= std::min(grid_n_ - 1, cx + r); ++gx)
      for (int id : grid_[std::size_t(gy) * grid_n_ + gx])
        if ((sites_[id] - center).norm() <= radius) out.push_back(id);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::pair<Vec2, int>> ReferenceConfig::neighbors(
    int id, double radius) const {
  std::vector<std::pair<Vec2, int>> out;
  for (int k : ids_within(sites_[id], radius)) {
    if (k == id) continue;
    out.emplace_back(sites_[k] - sites_[id], k);
  }
  return out;
}

nlohmann::json ReferenceConfig::to_json() const {
  nlohmann::json j;
  j["bravais"] = {{spec.bravais(0, 0), spec.bravais(0, 1)},
                  {spec.bravais(1, 0), spec.bravais(1, 1)}};
  j["defect"] = to_string(defect);
  j["R_def"] = r_def;
  j["domain_radius"] = domain_radius;
  auto& arr = j["sites"] = nlohmann::json::array();
  for (const auto& x : sites_) arr.push_back({x.x(), x.y()});
  return j;
}

RegionDecomposition decompose(const ReferenceConfig& config, double r_qm,
                              double r_mm, double r_buf) {
  if (!(config.r_def + r_buf < r_qm))
    throw InvalidGeometry("invalid decomposition: requires R_def + R_BUF < R_QM");
  if (!(r_qm < r_mm))
    throw InvalidGeometry("invalid decomposition: requires R_QM < R_MM");
  if (!(r_mm + r_buf <= config.domain_radius + 1e-12))
    throw InvalidGeometry(
        "invalid decomposition: requires R_MM + R_BUF <= domain_radius");

  RegionDecomposition d;
  d.r_qm = r_qm;
  d.r_mm = r_mm;
  d.r_buf = r_buf;
  d.labels.resize(config.size());
  for (int id = 0; id < config.size(); ++id) {
    const double r = config.site(id).norm();
    if (r <= r_qm) {
      d.labels[id] = Region::QM;
      d.qm_ids.push_back(id);
    } else if (r <= r_mm) {
      d.labels[id] = Region::MM;
      d.mm_ids.push_back(id);
    } else {
      d.labels[id] = Region::FF;
      ++d.n_ff;
    }
    if (r > r_qm && r <= r_qm + r_buf) d.buffer_ids.push_back(id);
  }
  return d;
}

double stencil_truncation_radius(double gamma) {
  if (gamma <= 0) throw InvalidParameter("gamma must be positive");
  // e^{-2 gamma R} < 1e-14
  return -std::log(1e-14) / (2.0 * gamma);
}

double weighted_seminorm(const Displacement& u, const ReferenceConfig& config,
                         double gamma, const std::vector<int>* subset) {
  const double rt = stencil_truncation_radius(gamma);
  double acc = 0.0;
  auto add_site = [&](int id) {
    for (const auto& [rho, k] : config.neighbors(id, rt)) {
      const double w = std::exp(-2.0 * gamma * rho.norm());
      acc += w * (u.at(k) - u.at(id)).squaredNorm();
    }
  };
  if (subset) {
    for (int id : *subset) add_site(id);
  } else {
    for (int id = 0; id < config.size(); ++id) add_site(id);
  }
  return std::sqrt(acc);
}

double weighted_seminorm_difference(const Displacement& ua,
                                    const ReferenceConfig& ca,
                                    const Displacement& ub,
                                    const ReferenceConfig& cb, double gamma) {
  if (ua.comps != ub.comps)
    throw InvalidParameter("displacement component mismatch");
  const bool a_master = ca.domain_radius >= cb.domain_radius;
  const ReferenceConfig& master = a_master ? ca : cb;
  const ReferenceConfig& other = a_master ? cb : ca;
  const Displacement& um = a_master ? ua : ub;
  const Displacement& uo = a_master ? ub : ua;

  const int c = ua.comps;
  // difference field on the master geometry, other extended by zero
  Displacement diff(master.size(), c);
  for (int id = 0; id < master.size(); ++id) {
    Eigen::VectorXd v = um.at(id);
    if (auto oid = other.id_at(master.site(id))) v -= uo.at(*oid);
    diff.at(id) = v;
  }
  return weighted_seminorm(diff, master, gamma);
}

}  // namespace qmmm
