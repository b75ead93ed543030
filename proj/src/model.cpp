#include "streamfed/model.hpp"

#include "streamfed/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace streamfed {
namespace {

double softplus(double s) {
  return s > 0.0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
}

int two_point_index(const Example& z) {
  if (z.label == 1.0) return 1;
  if (z.label == 2.0) return 2;
  throw InvalidArgument("two-point loss: label must be 1 or 2, got " +
                        std::to_string(z.label));
}

void check_dims(const LossSpec& loss, const Vector& theta, const Example& z) {
  if (loss.kind == LossKind::AdversarialTwoPoint) {
    if (theta.size() != 2) {
      throw InvalidArgument("two-point loss requires dim 2, got " +
                            std::to_string(theta.size()));
    }
    return;
  }
  if (theta.size() != z.features.size()) {
    throw InvalidArgument("dimension mismatch: theta has " +
                          std::to_string(theta.size()) + ", features have " +
                          std::to_string(z.features.size()));
  }
}

void check_inside(const Domain& domain, const Vector& theta) {
  if (theta.size() != domain.dim()) {
    throw InvalidArgument("theta dimension does not match the domain");
  }
  if (!domain.contains(theta)) {
    throw InvalidArgument("theta lies outside the domain; project it first");
  }
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Domain Domain::ball(Vector center, double radius) {
  if (!(radius > 0.0) || !std::isfinite(radius)) {
    throw InvalidArgument("ball radius must be positive and finite");
  }
  Domain d;
  d.kind_ = Kind::L2Ball;
  d.center_ = std::move(center);
  d.radius_ = radius;
  return d;
}

Domain Domain::ball(Eigen::Index dim, double radius) {
  return ball(Vector::Zero(dim), radius);
}

Domain Domain::box(Vector lower, Vector upper) {
  if (lower.size() != upper.size() || lower.size() == 0) {
    throw InvalidArgument("box bounds must be nonempty and of equal length");
  }
  if (((upper - lower).array() <= 0.0).any()) {
    throw InvalidArgument("box requires lower < upper in every coordinate");
  }
  Domain d;
  d.kind_ = Kind::Box;
  d.center_ = 0.5 * (lower + upper);
  d.lower_ = std::move(lower);
  d.upper_ = std::move(upper);
  d.radius_ = 0.5 * (d.upper_ - d.lower_).norm();
  return d;
}

double Domain::diameter() const { return 2.0 * radius_; }

Vector Domain::project(const Vector& v) const {
  if (v.size() != dim()) {
    throw InvalidArgument("projection: dimension mismatch");
  }
  if (kind_ == Kind::Box) {
    return v.cwiseMax(lower_).cwiseMin(upper_);
  }
  const Vector offset = v - center_;
  const double norm = offset.norm();
  if (norm <= radius_) return v;
  return center_ + offset * (radius_ / norm);
}

bool Domain::contains(const Vector& v, double rel_tol) const {
  if (v.size() != dim() || !v.allFinite()) return false;
  if (kind_ == Kind::Box) {
    const Vector slack = rel_tol * (upper_ - lower_);
    return ((v - lower_ + slack).array() >= 0.0).all() &&
           ((upper_ + slack - v).array() >= 0.0).all();
  }
  return (v - center_).norm() <= radius_ * (1.0 + rel_tol);
}

double LossSpec::gradient_bound() const {
  return std::sqrt(2.0 * smoothness_L * bound_B);
}

LossSpec LossSpec::logistic(const Domain& domain, double max_feature_norm) {
  const double reach = domain.center().norm() + domain.radius();
  LossSpec spec;
  spec.kind = LossKind::Logistic;
  spec.bound_B = softplus(reach * max_feature_norm);
  spec.smoothness_L = std::max(max_feature_norm * max_feature_norm / 4.0, 1e-12);
  return spec;
}

LossSpec LossSpec::squared(const Domain& domain, double max_feature_norm,
                           double max_abs_label) {
  const double reach = domain.center().norm() + domain.radius();
  const double residual = reach * max_feature_norm + max_abs_label;
  LossSpec spec;
  spec.kind = LossKind::Squared;
  spec.bound_B = 0.5 * residual * residual;
  spec.smoothness_L = std::max(max_feature_norm * max_feature_norm, 1e-12);
  return spec;
}

LossSpec LossSpec::adversarial_two_point() {
  LossSpec spec;
  spec.kind = LossKind::AdversarialTwoPoint;
  // max over [-1,1]^2: ℓ(·;1) peaks at (1,1) with 4 + 4.5.
  spec.bound_B = 8.5;
  // Hessians [[3,1],[1,1]] and [[2,1],[1,1]]; the larger top eigenvalue is 2+√2.
  spec.smoothness_L = 2.0 + std::sqrt(2.0);
  return spec;
}

double raw_loss(const LossSpec& loss, const Vector& theta, const Example& z) {
  check_dims(loss, theta, z);
  switch (loss.kind) {
    case LossKind::Logistic: {
      const double s = theta.dot(z.features);
      return softplus(s) - z.label * s;
    }
    case LossKind::Squared: {
      const double r = theta.dot(z.features) - z.label;
      return 0.5 * r * r;
    }
    case LossKind::AdversarialTwoPoint: {
      const double a = theta[0];
      const double s = theta[0] + theta[1];
      if (two_point_index(z) == 1) {
        return (a + 1.0) * (a + 1.0) + 0.5 * (s + 1.0) * (s + 1.0);
      }
      return 0.5 * (a - 1.0) * (a - 1.0) + 0.5 * (s - 1.0) * (s - 1.0);
    }
  }
  return 0.0;
}

void accumulate_raw_grad(const LossSpec& loss, const Vector& theta,
                         const Example& z, double scale, Vector& out) {
  check_dims(loss, theta, z);
  switch (loss.kind) {
    case LossKind::Logistic: {
      const double s = theta.dot(z.features);
      out.noalias() += (scale * (sigmoid(s) - z.label)) * z.features;
      return;
    }
    case LossKind::Squared: {
      const double r = theta.dot(z.features) - z.label;
      out.noalias() += (scale * r) * z.features;
      return;
    }
    case LossKind::AdversarialTwoPoint: {
      const double a = theta[0];
      const double s = theta[0] + theta[1];
      double g0 = 0.0;
      double g1 = 0.0;
      if (two_point_index(z) == 1) {
        g0 = 2.0 * (a + 1.0) + (s + 1.0);
        g1 = s + 1.0;
      } else {
        g0 = (a - 1.0) + (s - 1.0);
        g1 = s - 1.0;
      }
      out[0] += scale * g0;
      out[1] += scale * g1;
      return;
    }
  }
}

Vector raw_grad(const LossSpec& loss, const Vector& theta, const Example& z) {
  Vector g = Vector::Zero(theta.size());
  accumulate_raw_grad(loss, theta, z, 1.0, g);
  return g;
}

double loss_value(const LossSpec& loss, const Domain& domain, const Vector& theta,
                  const Example& z) {
  check_inside(domain, theta);
  return raw_loss(loss, theta, z);
}

Vector loss_grad(const LossSpec& loss, const Domain& domain, const Vector& theta,
                 const Example& z) {
  check_inside(domain, theta);
  return raw_grad(loss, theta, z);
}

std::optional<double> predict_label(const LossSpec& loss, const Vector& theta,
                                    const Example& z) {
  if (loss.kind != LossKind::Logistic) return std::nullopt;
  check_dims(loss, theta, z);
  return theta.dot(z.features) > 0.0 ? 1.0 : 0.0;
}

double max_feature_norm(std::span<const Example> examples) {
  double best = 0.0;
  for (const auto& z : examples) best = std::max(best, z.features.norm());
  return best;
}

}  // namespace streamfed
