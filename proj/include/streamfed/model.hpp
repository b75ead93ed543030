#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>

namespace streamfed {

using Vector = Eigen::VectorXd;

/// One labeled sample plus its arrival metadata.
struct Example {
  Vector features;
  double label = 0.0;
  int client_id = 0;
  int arrival_round = 0;
  std::int64_t global_index = 0;  // 1-based position in the client's stream
};

/// The feasible set Θ. Either a Euclidean ball or an axis-aligned box; the
/// box exists only for the two-point lower-bound instance.
class Domain {
 public:
  enum class Kind { L2Ball, Box };

  static Domain ball(Vector center, double radius);
  static Domain ball(Eigen::Index dim, double radius);
  static Domain box(Vector lower, Vector upper);

  Kind kind() const noexcept { return kind_; }
  Eigen::Index dim() const noexcept { return center_.size(); }
  const Vector& center() const noexcept { return center_; }
  double radius() const noexcept { return radius_; }
  const Vector& lower() const noexcept { return lower_; }
  const Vector& upper() const noexcept { return upper_; }
  double diameter() const;

  /// Euclidean projection onto the set. Points inside are returned unchanged.
  Vector project(const Vector& v) const;

  /// Membership with a relative slack of `rel_tol` (scaled by radius/extent).
  bool contains(const Vector& v, double rel_tol = 1e-9) const;

 private:
  Kind kind_ = Kind::L2Ball;
  Vector center_;
  double radius_ = 0.0;
  Vector lower_;
  Vector upper_;
};

enum class LossKind { Logistic, Squared, AdversarialTwoPoint };

/// Loss family with its recorded bound B (sup of the loss over Θ×Z) and
/// smoothness constant L.
struct LossSpec {
  LossKind kind = LossKind::Logistic;
  double bound_B = 0.0;
  double smoothness_L = 1.0;

  /// G = sqrt(2 L B), the gradient-norm bound implied by bounded + smooth.
  double gradient_bound() const;
  /// Upper bound 2·sqrt(2LB) shared by σ₀ and ζ.
  double noise_bound() const { return 2.0 * gradient_bound(); }

  /// Logistic loss on a ball domain; B = log(1 + exp(r·max‖x‖)) with
  /// r = ‖center‖ + radius, L = max‖x‖² / 4.
  static LossSpec logistic(const Domain& domain, double max_feature_norm);
  /// Half squared error; B from the data range, L = max‖x‖².
  static LossSpec squared(const Domain& domain, double max_feature_norm,
                          double max_abs_label);
  /// ℓ(θ;1) = (θ₁+1)² + ½(θ₁+θ₂+1)², ℓ(θ;2) = ½(θ₁−1)² + ½(θ₁+θ₂−1)²
  /// on Θ = [−1,1]². B = 8.5, L = 2 + √2.
  static LossSpec adversarial_two_point();
};

/// Checked evaluation: θ must lie in Θ and dimensions must agree.
double loss_value(const LossSpec& loss, const Domain& domain, const Vector& theta,
                  const Example& z);
Vector loss_grad(const LossSpec& loss, const Domain& domain, const Vector& theta,
                 const Example& z);

/// Unchecked evaluation on all of R^d. Local SGD steps are not projected, so
/// the trainer evaluates gradients outside Θ through these.
double raw_loss(const LossSpec& loss, const Vector& theta, const Example& z);
void accumulate_raw_grad(const LossSpec& loss, const Vector& theta,
                         const Example& z, double scale, Vector& out);
Vector raw_grad(const LossSpec& loss, const Vector& theta, const Example& z);

/// Binary prediction for classification losses; nullopt for Squared.
std::optional<double> predict_label(const LossSpec& loss, const Vector& theta,
                                    const Example& z);

double sigmoid(double x);

/// Largest Euclidean feature norm in a sample collection.
double max_feature_norm(std::span<const Example> examples);

}  // namespace streamfed
