#pragma once

#include <cmath>

#include <Eigen/Core>

namespace meshloop {

// Forward-mode dual number with a fixed number of tangent directions.
// Used for the small per-primitive Jacobians (projection, pivots,
// rasterized depth) where hand-derived expressions would be error prone.
template <int N>
struct Dual {
  using Tangent = Eigen::Matrix<double, N, 1>;

  double v = 0.0;
  Tangent d = Tangent::Zero();

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit by design of AD types
  Dual(double value, const Tangent& tangent) : v(value), d(tangent) {}

  static Dual variable(double value, int slot) {
    Dual r(value);
    r.d[slot] = 1.0;
    return r;
  }

  Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
  Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
  Dual& operator*=(const Dual& o) { d = d * o.v + o.d * v; v *= o.v; return *this; }
  Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.v;
    d = (d - o.d * (v * inv)) * inv;
    v *= inv;
    return *this;
  }
};

template <int N> Dual<N> operator+(Dual<N> a, const Dual<N>& b) { return a += b; }
template <int N> Dual<N> operator-(Dual<N> a, const Dual<N>& b) { return a -= b; }
template <int N> Dual<N> operator*(Dual<N> a, const Dual<N>& b) { return a *= b; }
template <int N> Dual<N> operator/(Dual<N> a, const Dual<N>& b) { return a /= b; }
template <int N> Dual<N> operator+(Dual<N> a, double b) { a.v += b; return a; }
template <int N> Dual<N> operator+(double b, Dual<N> a) { a.v += b; return a; }
template <int N> Dual<N> operator-(Dual<N> a, double b) { a.v -= b; return a; }
template <int N> Dual<N> operator-(double b, const Dual<N>& a) { return Dual<N>(b - a.v, -a.d); }
template <int N> Dual<N> operator*(Dual<N> a, double b) { a.v *= b; a.d *= b; return a; }
template <int N> Dual<N> operator*(double b, Dual<N> a) { a.v *= b; a.d *= b; return a; }
template <int N> Dual<N> operator/(Dual<N> a, double b) { a.v /= b; a.d /= b; return a; }
template <int N> Dual<N> operator/(double b, const Dual<N>& a) {
  const double inv = 1.0 / a.v;
  return Dual<N>(b * inv, a.d * (-b * inv * inv));
}
template <int N> Dual<N> operator-(const Dual<N>& a) { return Dual<N>(-a.v, -a.d); }

template <int N> bool operator<(const Dual<N>& a, const Dual<N>& b) { return a.v < b.v; }
template <int N> bool operator>(const Dual<N>& a, const Dual<N>& b) { return a.v > b.v; }

template <int N> Dual<N> sqrt(const Dual<N>& a) {
  const double s = std::sqrt(a.v);
  return Dual<N>(s, a.d * (0.5 / s));
}
template <int N> Dual<N> exp(const Dual<N>& a) {
  const double e = std::exp(a.v);
  return Dual<N>(e, a.d * e);
}

inline double value_of(double x) { return x; }
template <int N> double value_of(const Dual<N>& x) { return x.v; }

}  // namespace meshloop

namespace Eigen {

template <int N>
struct NumTraits<meshloop::Dual<N>> : NumTraits<double> {
  using Real = meshloop::Dual<N>;
  using NonInteger = meshloop::Dual<N>;
  using Nested = meshloop::Dual<N>;
  using Literal = meshloop::Dual<N>;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 3,
    MulCost = 3
  };
};

}  // namespace Eigen
