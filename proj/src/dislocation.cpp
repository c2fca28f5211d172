#include "qmmm/dislocation.hpp"

#include <cmath>

namespace qmmm {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

double angle_in_0_2pi(const Vec2& d) {
  double a = std::atan2(d.y(), d.x());
  if (a <= 0) a += kTwoPi;
  return a;  // (0, 2 pi], cut along the positive x1 axis
}
}  // namespace

ScrewPredictor ScrewPredictor::standard(const LatticeSpec& spec) {
  ScrewPredictor p;
  p.core = (spec.bravais * Vec2(1, 0) + spec.bravais * Vec2(0, 1)) / 3.0;
  return p;
}

bool ScrewPredictor::on_branch_cut(const Vec2& x) const {
  // only points exactly on the half line count: the predictor has well-defined
  // one-sided limits arbitrarily close to the cut, and lattice sites stay a
  // finite distance away from it
  return x.y() == core.y() && x.x() >= core.x();
}

double screw_u0(const Vec2& x, const ScrewPredictor& pred) {
  if (pred.on_branch_cut(x)) throw BranchCutError("point lies on the branch cut");
  return pred.b3 / kTwoPi * angle_in_0_2pi(x - pred.core);
}

Displacement slip_map(const Displacement& u, const ScrewPredictor&, bool) {
  // pure screw: b12 = 0, S = S* = identity
  return u;
}

ElasticStrainField elastic_strain(const ReferenceConfig& config,
                                  const ScrewPredictor& pred,
                                  double r_stencil) {
  ElasticStrainField f;
  f.dom = StencilDomain::build(config.spec, r_stencil, 1);
  const int n_off = f.dom.n_offsets();
  f.values.resize(n_off, config.size());
  for (int id = 0; id < config.size(); ++id) {
    const Vec2& x = config.site(id);
    const bool smooth = pred.in_omega_gamma(x);
    const double u_here = screw_u0(x, pred);
    const double th_here = angle_in_0_2pi(x - pred.core);
    for (int j = 0; j < n_off; ++j) {
      const Vec2 xp = x + f.dom.offsets[j];
      if (smooth) {
        // slipped branch: wrap the angle increment into (-pi, pi]
        double dth = angle_in_0_2pi(xp - pred.core) - th_here;
        if (dth > M_PI) dth -= kTwoPi;
        if (dth <= -M_PI) dth += kTwoPi;
        f.values(j, id) = pred.b3 / kTwoPi * dth;
      } else {
        f.values(j, id) = screw_u0(xp, pred) - u_here;
      }
    }
  }
  return f;
}

Eigen::VectorXd unified_argument(const ReferenceConfig& config, int l,
                                 const Displacement& u, CaseKind kind,
                                 const StencilDomain& dom,
                                 const ElasticStrainField* strain) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(dom.n_dof());
  const int c = dom.comps;
  for (int j = 0; j < dom.n_offsets(); ++j) {
    const auto nb = config.id_at(config.site(l) + dom.offsets[j]);
    if (!nb)
      throw InvalidGeometry("stencil neighbor missing from the configuration");
    for (int k = 0; k < c; ++k)
      g[j * c + k] = u.site(*nb)[k] - u.site(l)[k];
  }
  if (kind == CaseKind::D) {
    if (!strain) throw MissingPredictor("case D requires a strain field");
    if (c != 1 || strain->dom.n_offsets() != dom.n_offsets())
      throw InvalidParameter("strain field stencil mismatch");
    g += strain->at(l);
  }
  return g;
}

}  // namespace qmmm
