#include "pgnnl/physloss.hpp"

#include <cmath>
#include <sstream>

#include <unsupported/Eigen/AutoDiff>

#include "pgnnl/errors.hpp"
#include "pgnnl/io.hpp"
#include "pgnnl/nnet.hpp"

namespace pgnnl {

namespace {

using Ad = Eigen::AutoDiffScalar<Eigen::Vector4d>;

template <typename S>
struct TermsT {
  S dE_kin, dE_pot, W_con, W_diss;
};

struct GolfEnergy {
  GolfParams p;

  template <typename S>
  S kinetic(const S& /*x1*/, const S& x2) const {
    return 0.5 * p.J * x2 * x2;
  }
  template <typename S>
  S potential(const S& x1, const S& /*x2*/) const {
    using std::cos;
    return p.m * p.g * p.a * (1.0 - cos(x1));
  }
  template <typename S>
  S control(const S& x1p, const S& x1c, double u) const {
    return 4.0 * u * (x1c - x1p);
  }
  // Friction power F_G x2 integrated by the trapezoid rule in time.
  template <typename S>
  S dissipation(const S& x1p, const S& x2p, const S& x1c, const S& x2c, double dt) const {
    return 0.5 * dt * (golf_friction(x1p, x2p, p) * x2p + golf_friction(x1c, x2c, p) * x2c);
  }
};

struct ValveEnergy {
  double inv_T2, damping, gain;

  explicit ValveEnergy(const ValveParams& p) {
    const double T = p.time_constant();
    inv_T2 = 1.0 / (T * T);
    damping = 2.0 * p.D_V / T;
    gain = p.K_V / (T * T);
  }

  template <typename S>
  S kinetic(const S& /*x1*/, const S& x2) const {
    return 0.5 * x2 * x2;
  }
  template <typename S>
  S potential(const S& x1, const S& /*x2*/) const {
    return 0.5 * inv_T2 * x1 * x1;
  }
  template <typename S>
  S control(const S& x1p, const S& x1c, double u) const {
    return gain * u * (x1c - x1p);
  }
  template <typename S>
  S dissipation(const S& /*x1p*/, const S& x2p, const S& /*x1c*/, const S& x2c, double dt) const {
    return 0.5 * dt * damping * (x2p * x2p + x2c * x2c);
  }
};

template <typename M, typename S>
TermsT<S> compute_terms(const M& m, const S& x1p, const S& x2p, const S& x1c, const S& x2c, double u, double dt) {
  return {m.kinetic(x1c, x2c) - m.kinetic(x1p, x2p), m.potential(x1c, x2c) - m.potential(x1p, x2p),
          m.control(x1p, x1c, u), m.dissipation(x1p, x2p, x1c, x2c, dt)};
}

void check_state(const Eigen::VectorXd& x, const char* what) {
  if (x.size() != 2) throw ShapeError(std::string("energy model: ") + what + " must have 2 entries");
  if (!x.allFinite()) throw DomainError(std::string("energy model: non-finite ") + what);
}

}  // namespace

struct EnergyModel::Impl {
  std::string tag;
  std::function<double(double, double)> kinetic, potential;
  std::function<double(double, double, double)> control;
  std::function<double(double, double, double, double, double)> dissipation;
  std::function<TermsT<Ad>(const Ad&, const Ad&, const Ad&, const Ad&, double, double)> terms_ad;
};

namespace {

template <typename M>
std::shared_ptr<const EnergyModel::Impl> make_impl(const M& m, std::string tag) {
  auto impl = std::make_shared<EnergyModel::Impl>();
  impl->tag = std::move(tag);
  impl->kinetic = [m](double x1, double x2) { return m.kinetic(x1, x2); };
  impl->potential = [m](double x1, double x2) { return m.potential(x1, x2); };
  impl->control = [m](double x1p, double x1c, double u) { return m.control(x1p, x1c, u); };
  impl->dissipation = [m](double x1p, double x2p, double x1c, double x2c, double dt) {
    return m.dissipation(x1p, x2p, x1c, x2c, dt);
  };
  impl->terms_ad = [m](const Ad& x1p, const Ad& x2p, const Ad& x1c, const Ad& x2c, double u, double dt) {
    return compute_terms(m, x1p, x2p, x1c, x2c, u, dt);
  };
  return impl;
}

}  // namespace

EnergyModel EnergyModel::golf(const GolfParams& p) {
  p.validate();
  return EnergyModel(make_impl(GolfEnergy{p}, "golf"));
}

EnergyModel EnergyModel::valve(const ValveParams& p) {
  p.validate();
  return EnergyModel(make_impl(ValveEnergy(p), "valve"));
}

EnergyModel EnergyModel::for_plant(const PlantModel& plant) {
  switch (plant.id()) {
    case PlantId::Golf:
      return golf(plant.golf_params());
    case PlantId::Valve:
      return valve(plant.valve_params());
    default:
      throw ConfigError("no energy model for plant '" + plant.name() + "'");
  }
}

const std::string& EnergyModel::tag() const { return impl_->tag; }

double EnergyModel::kinetic(const Eigen::VectorXd& x) const {
  check_state(x, "state");
  return impl_->kinetic(x(0), x(1));
}

double EnergyModel::potential(const Eigen::VectorXd& x) const {
  check_state(x, "state");
  return impl_->potential(x(0), x(1));
}

double EnergyModel::control_work(const Eigen::VectorXd& x_prev, const Eigen::VectorXd& x_curr,
                                 double u_prev) const {
  check_state(x_prev, "x_prev");
  check_state(x_curr, "x_curr");
  return impl_->control(x_prev(0), x_curr(0), u_prev);
}

double EnergyModel::dissipation_work(const Eigen::VectorXd& x_prev, const Eigen::VectorXd& x_curr,
                                     double dt) const {
  check_state(x_prev, "x_prev");
  check_state(x_curr, "x_curr");
  return impl_->dissipation(x_prev(0), x_prev(1), x_curr(0), x_curr(1), dt);
}

EnergyTerms EnergyModel::terms(const Eigen::VectorXd& x_prev, const Eigen::VectorXd& x_curr, double u_prev,
                               double dt) const {
  check_state(x_prev, "x_prev");
  check_state(x_curr, "x_curr");
  if (!std::isfinite(u_prev) || !std::isfinite(dt)) throw DomainError("energy model: non-finite input or dt");
  const auto& m = *impl_;
  EnergyTerms t;
  t.dE_kin = m.kinetic(x_curr(0), x_curr(1)) - m.kinetic(x_prev(0), x_prev(1));
  t.dE_pot = m.potential(x_curr(0), x_curr(1)) - m.potential(x_prev(0), x_prev(1));
  t.W_con = m.control(x_prev(0), x_curr(0), u_prev);
  t.W_diss = m.dissipation(x_prev(0), x_prev(1), x_curr(0), x_curr(1), dt);
  return t;
}

ResidualGradient EnergyModel::residual_gradient(const Eigen::VectorXd& x_prev, const Eigen::VectorXd& x_curr,
                                                double u_prev, double dt) const {
  check_state(x_prev, "x_prev");
  check_state(x_curr, "x_curr");
  const Ad x1p(x_prev(0), 4, 0), x2p(x_prev(1), 4, 1), x1c(x_curr(0), 4, 2), x2c(x_curr(1), 4, 3);
  const auto t = impl_->terms_ad(x1p, x2p, x1c, x2c, u_prev, dt);
  const Ad r = t.dE_kin + t.dE_pot - t.W_con + t.W_diss;
  ResidualGradient g;
  g.residual = r.value();
  g.d_prev = r.derivatives().head<2>();
  g.d_curr = r.derivatives().tail<2>();
  return g;
}

double delta_energy(const EnergyModel& em, const Eigen::VectorXd& x_curr, const Eigen::VectorXd& x_prev,
                    double u_prev, double dt) {
  const double r = em.terms(x_prev, x_curr, u_prev, dt).residual();
  if (!std::isfinite(r)) throw DomainError("delta_energy: non-finite residual");
  return r;
}

PhysicsLossResult physics_loss(const EnergyModel& em, const Eigen::MatrixXd& states, std::span<const StepPair> pairs,
                               double dt) {
  if (states.cols() != em.state_dim()) throw ShapeError("physics_loss: state width does not match the energy model");
  PhysicsLossResult out;
  out.gradient = Eigen::MatrixXd::Zero(states.rows(), states.cols());
  if (pairs.empty()) return out;
  const double scale = 1.0 / static_cast<double>(pairs.size());
  out.terms.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.prev < 0 || p.curr < 0 || p.prev >= states.rows() || p.curr >= states.rows())
      throw ShapeError("physics_loss: pair index out of range");
    const Eigen::VectorXd xp = states.row(p.prev).transpose();
    const Eigen::VectorXd xc = states.row(p.curr).transpose();
    const EnergyTerms t = em.terms(xp, xc, p.u_prev, dt);
    const auto g = em.residual_gradient(xp, xc, p.u_prev, dt);
    const double r = t.residual();
    out.value += scale * r * r;
    out.gradient.row(p.prev) += (2.0 * scale * r) * g.d_prev.transpose();
    out.gradient.row(p.curr) += (2.0 * scale * r) * g.d_curr.transpose();
    out.terms.push_back(t);
  }
  if (!std::isfinite(out.value)) throw DomainError("physics_loss: non-finite value");
  return out;
}

PhysicsLossResult physics_loss(const EnergyModel& em, const Eigen::MatrixXd& states, const Eigen::VectorXd& u,
                               double dt) {
  if (states.rows() < 2) throw ShapeError("physics_loss: need at least two states");
  if (u.size() != states.rows()) throw ShapeError("physics_loss: states and inputs differ in length");
  std::vector<StepPair> pairs;
  for (Eigen::Index k = 1; k < states.rows(); ++k) pairs.push_back({k - 1, k, u(k - 1)});
  return physics_loss(em, states, pairs, dt);
}

ConstraintSpec bound_constraint(int channel, double bound) {
  ConstraintSpec c;
  c.name = "bound_y" + std::to_string(channel + 1);
  c.kind = ConstraintKind::Inequality;
  c.h = [channel, bound](const Eigen::RowVectorXd& y, const Eigen::RowVectorXd&) { return std::abs(y(channel)) - bound; };
  c.dh_dy = [channel](const Eigen::RowVectorXd& y, const Eigen::RowVectorXd&) {
    Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(y.size());
    g(channel) = y(channel) > 0 ? 1.0 : (y(channel) < 0 ? -1.0 : 0.0);
    return g;
  };
  return c;
}

ConstraintSpec equality_constraint(int channel, double value) {
  ConstraintSpec c;
  c.name = "equal_y" + std::to_string(channel + 1);
  c.kind = ConstraintKind::Equality;
  c.h = [channel, value](const Eigen::RowVectorXd& y, const Eigen::RowVectorXd&) { return y(channel) - value; };
  c.dh_dy = [channel](const Eigen::RowVectorXd& y, const Eigen::RowVectorXd&) {
    Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(y.size());
    g(channel) = 1.0;
    return g;
  };
  return c;
}

ConstraintLossResult constraint_loss(const ConstraintSpec& spec, const Eigen::MatrixXd& y, const Eigen::MatrixXd& u) {
  if (u.rows() != y.rows()) throw ShapeError("constraint_loss: predictions and inputs differ in length");
  ConstraintLossResult out;
  out.gradient = Eigen::MatrixXd::Zero(y.rows(), y.cols());
  if (y.rows() == 0) return out;
  const double scale = 1.0 / static_cast<double>(y.rows());
  for (Eigen::Index k = 0; k < y.rows(); ++k) {
    const Eigen::RowVectorXd yk = y.row(k);
    const Eigen::RowVectorXd uk = u.row(k);
    const double h = spec.h(yk, uk);
    if (spec.kind == ConstraintKind::Equality) {
      out.value += scale * h * h;
      if (spec.dh_dy) out.gradient.row(k) = 2.0 * scale * h * spec.dh_dy(yk, uk);
    } else if (h > 0) {
      out.value += scale * h;
      if (spec.dh_dy) out.gradient.row(k) = scale * spec.dh_dy(yk, uk);
    }
  }
  return out;
}

void ComposedLossConfig::validate() const {
  if (!(lambda_phy >= 0.0 && lambda_phy <= 1.0)) throw ConfigError("lambda_phy must lie in [0, 1]");
  if (lambda_phy == 0.0 || lambda_phy == 1.0)
    warn("lambda_phy = " + format_double(lambda_phy) + " disables one loss term");
}

ComposedLossResult composed_loss(const ComposedLossConfig& cfg, const Eigen::MatrixXd& y_hat,
                                 const Eigen::MatrixXd& y, const Eigen::MatrixXd& u,
                                 std::span<const StepPair> pairs, double dt) {
  if (y_hat.rows() != y.rows() || y_hat.cols() != y.cols())
    throw ShapeError("composed_loss: predictions and targets differ in shape");
  if (u.rows() != y_hat.rows()) throw ShapeError("composed_loss: predictions and inputs differ in length");
  const Standardizer scale =
      cfg.output_scale.channels() == 0 ? Standardizer::identity(y_hat.cols()) : cfg.output_scale;
  if (scale.channels() != y_hat.cols())
    throw ShapeError("composed_loss: output standardizer width does not match predictions");
  const double lambda = cfg.lambda_phy;
  const Eigen::Index n = y_hat.rows();

  ComposedLossResult out;
  out.error_term = mse(y_hat, y);
  Eigen::MatrixXd grad_err = n > 0 ? Eigen::MatrixXd((2.0 / n) * (y_hat - y)) : Eigen::MatrixXd(y_hat);

  // Physics terms act on physical units; chain rule through y = z * std + mean.
  const Eigen::MatrixXd y_phys = scale.invert(y_hat);
  Eigen::MatrixXd grad_phys = Eigen::MatrixXd::Zero(n, y_hat.cols());
  if (cfg.energy) {
    auto pl = physics_loss(*cfg.energy, y_phys, pairs, dt);
    out.energy_term = pl.value;
    grad_phys += pl.gradient;
    out.terms = std::move(pl.terms);
  }
  for (const auto& c : cfg.constraints) {
    const auto cl = constraint_loss(c, y_phys, u);
    out.constraint_term += cl.value;
    grad_phys += cl.gradient;
  }
  out.physics_term = out.energy_term + out.constraint_term;
  const Eigen::MatrixXd grad_phy_std = grad_phys * scale.std.asDiagonal();

  if (lambda == 0.0) {
    out.total = out.error_term;
    out.gradient = grad_err;
  } else if (lambda == 1.0) {
    out.total = out.physics_term;
    out.gradient = grad_phy_std;
  } else {
    out.total = (1.0 - lambda) * out.error_term + lambda * out.physics_term;
    out.gradient = (1.0 - lambda) * grad_err + lambda * grad_phy_std;
  }
  return out;
}

ComposedLossResult composed_loss(const ComposedLossConfig& cfg, const Eigen::MatrixXd& y_hat,
                                 const Eigen::MatrixXd& y, const Eigen::MatrixXd& u, double dt) {
  if (y_hat.rows() < 2) throw ShapeError("composed_loss: need at least two samples");
  if (u.rows() != y_hat.rows() || u.cols() < 1) throw ShapeError("composed_loss: predictions and inputs differ in length");
  std::vector<StepPair> pairs;
  for (Eigen::Index k = 1; k < y_hat.rows(); ++k) pairs.push_back({k - 1, k, u(k - 1, 0)});
  return composed_loss(cfg, y_hat, y, u, pairs, dt);
}

std::string energy_terms_to_csv(std::span<const EnergyTerms> terms) {
  std::ostringstream os;
  os << "k,dE_kin,dE_pot,W_con,W_diss,residual\n";
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const auto& t = terms[i];
    os << i + 1 << ',' << format_double(t.dE_kin) << ',' << format_double(t.dE_pot) << ','
       << format_double(t.W_con) << ',' << format_double(t.W_diss) << ',' << format_double(t.residual()) << '\n';
  }
  return os.str();
}

}  // namespace pgnnl
