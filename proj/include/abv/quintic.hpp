#pragma once

#include <stdexcept>

#include <Eigen/Core>

namespace abv {

template <class Scalar>
using Vector6 = Eigen::Matrix<Scalar, 6, 1>;

/// Position, velocity and acceleration at one end of a quintic.
template <class Scalar>
struct BoundaryState {
  Scalar p{0};
  Scalar v{0};
  Scalar a{0};
};

/// q(t) = sum c_i t^i on [0, T], ascending powers.
template <class Scalar>
class Quintic {
 public:
  Quintic() : coeffs_(Vector6<Scalar>::Zero()) {}
  explicit Quintic(const Vector6<Scalar>& coeffs) : coeffs_(coeffs) {}

  const Vector6<Scalar>& coeffs() const { return coeffs_; }

  Scalar position(Scalar t) const {
    const auto& c = coeffs_;
    return c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))));
  }
  Scalar velocity(Scalar t) const {
    const auto& c = coeffs_;
    return c[1] + t * (2 * c[2] + t * (3 * c[3] + t * (4 * c[4] + t * 5 * c[5])));
  }
  Scalar acceleration(Scalar t) const {
    const auto& c = coeffs_;
    return 2 * c[2] + t * (6 * c[3] + t * (12 * c[4] + t * 20 * c[5]));
  }
  Scalar jerk(Scalar t) const {
    const auto& c = coeffs_;
    return 6 * c[3] + t * (24 * c[4] + t * 60 * c[5]);
  }

  /// Closed-form integral of jerk^2 over [0, T].
  Scalar jerk_energy(Scalar T) const {
    const Scalar a = 6 * coeffs_[3];
    const Scalar b = 24 * coeffs_[4];
    const Scalar c = 60 * coeffs_[5];
    // (a + b t + c t^2)^2 integrated term by term.
    return a * a * T + a * b * T * T + (b * b + 2 * a * c) * T * T * T / 3 + b * c * T * T * T * T / 2 +
           c * c * T * T * T * T * T / 5;
  }

  bool operator==(const Quintic&) const = default;

 private:
  Vector6<Scalar> coeffs_;
};

/// The unique quintic meeting position/velocity/acceleration at t = 0 and t = T.
template <class Scalar>
Quintic<Scalar> solve_quintic(const BoundaryState<Scalar>& start, const BoundaryState<Scalar>& end, Scalar T) {
  if (!(T > Scalar(0))) throw std::invalid_argument("solve_quintic: horizon must be positive");
  const Scalar T2 = T * T;
  const Scalar T3 = T2 * T;
  const Scalar T4 = T3 * T;
  const Scalar T5 = T4 * T;
  const Scalar h = end.p - start.p;
  Vector6<Scalar> c;
  c[0] = start.p;
  c[1] = start.v;
  c[2] = start.a / 2;
  c[3] = (20 * h - (8 * end.v + 12 * start.v) * T - (3 * start.a - end.a) * T2) / (2 * T3);
  c[4] = (-30 * h + (14 * end.v + 16 * start.v) * T + (3 * start.a - 2 * end.a) * T2) / (2 * T4);
  c[5] = (12 * h - 6 * (end.v + start.v) * T + (end.a - start.a) * T2) / (2 * T5);
  return Quintic<Scalar>(c);
}

}  // namespace abv
