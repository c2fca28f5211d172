#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace qmmm {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;

struct InvalidGeometry : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidParameter : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DefectKind { none, vacancy, divacancy, interstitial, screw };

std::string to_string(DefectKind k);
DefectKind defect_from_string(const std::string& s);

/// Bravais description of the reference crystal. The default is the 2D
/// triangular lattice with unit spacing, columns (1,0) and (1/2, sqrt3/2).
struct LatticeSpec {
  Mat2 bravais;

  static LatticeSpec triangular();
};

/// Finite piece of the reference configuration: all lattice sites inside
/// B_{domain_radius}, with the defect applied inside B_{r_def}. Site ids are
/// assigned lexicographically in lattice coordinates so runs are reproducible.
class ReferenceConfig {
 public:
  LatticeSpec spec;
  DefectKind defect = DefectKind::none;
  double r_def = 0.0;
  double domain_radius = 0.0;

  const std::vector<Vec2>& sites() const { return sites_; }
  int size() const { return static_cast<int>(sites_.size()); }
  const Vec2& site(int id) const { return sites_[id]; }

  /// Integer lattice coordinates of a site (barycentric interstitials get a
  /// synthetic key). Inverse of id_of_cell.
  std::optional<int> id_at(const Vec2& x) const;

  /// All sites k != l with |x_k - x_l| <= radius, as (offset, id) pairs in a
  /// deterministic (id-sorted) order.
  std::vector<std::pair<Vec2, int>> neighbors(int id, double radius) const;
  std::vector<int> ids_within(const Vec2& center, double radius) const;

  nlohmann::json to_json() const;

  friend ReferenceConfig build_reference(const LatticeSpec& spec,
                                         double domain_radius, DefectKind kind,
                                         double r_def);

 private:
  std::vector<Vec2> sites_;
  // cell list for radius queries
  double cell_size_ = 1.0;
  int grid_n_ = 0;
  std::vector<std::vector<int>> grid_;
  std::unordered_map<std::int64_t, int> index_;  // lattice (n1,n2) -> id

  void build_grid();
  friend class GridScan;
};

ReferenceConfig build_reference(const LatticeSpec& spec, double domain_radius,
                                DefectKind kind, double r_def);

/// Displacement field aligned to site ids. `comps` active components per
/// site: 2 (in-plane) for point defects, 1 (out-of-plane) for the anti-plane
/// screw case.
struct Displacement {
  int comps = 2;
  Eigen::VectorXd data;  // size n_sites * comps, site-major

  Displacement() = default;
  Displacement(int n_sites, int comps_)
      : comps(comps_), data(Eigen::VectorXd::Zero(std::int64_t(n_sites) * comps_)) {}

  int n_sites() const { return comps == 0 ? 0 : int(data.size() / comps); }
  double* site(int id) { return data.data() + std::int64_t(id) * comps; }
  const double* site(int id) const { return data.data() + std::int64_t(id) * comps; }
  Eigen::Map<Eigen::VectorXd> at(int id) {
    return {site(id), comps};
  }
  Eigen::Map<const Eigen::VectorXd> at(int id) const {
    return {site(id), comps};
  }
};

enum class Region : unsigned char { QM, MM, FF };

struct RegionDecomposition {
  double r_qm = 0, r_mm = 0, r_buf = 0;
  std::vector<Region> labels;
  std::vector<int> qm_ids;
  std::vector<int> mm_ids;
  std::vector<int> buffer_ids;  // (B_{r_qm+r_buf} cap Lambda) \ QM
  int n_ff = 0;
};

RegionDecomposition decompose(const ReferenceConfig& config, double r_qm,
                              double r_mm, double r_buf);

/// Truncation radius at which e^{-2 gamma r} drops below 1e-14.
double stencil_truncation_radius(double gamma);

/// || Du ||_{l^2_gamma} over `subset` (all sites when empty), with the rho-sum
/// truncated once the weight is below double precision.
double weighted_seminorm(const Displacement& u, const ReferenceConfig& config,
                         double gamma, const std::vector<int>* subset = nullptr);

/// Same norm applied to the difference of two fields that may live on
/// different geometries; sites are matched through lattice coordinates and
/// both fields are extended by zero where absent. The sum runs over sites of
/// `config_a` union `config_b`.
double weighted_seminorm_difference(const Displacement& ua,
                                    const ReferenceConfig& ca,
                                    const Displacement& ub,
                                    const ReferenceConfig& cb, double gamma);

}  // namespace qmmm
