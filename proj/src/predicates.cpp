#include "meshloop/predicates.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace meshloop::predicates {
namespace {

constexpr double kEps = 1.1102230246251565e-16;  // 2^-53
constexpr double kOrientBound = (7.0 + 56.0 * kEps) * kEps * 4.0;
constexpr double kInsphereBound = (16.0 + 224.0 * kEps) * kEps * 4.0;

// Nonoverlapping expansion, components ordered by increasing magnitude.
class Expansion {
 public:
  Expansion() = default;
  explicit Expansion(double v) {
    if (v != 0.0) c_.push_back(v);
  }
  static Expansion difference(double a, double b) {
    const double x = a - b;
    const double bv = a - x;
    const double av = x + bv;
    const double br = bv - b;
    const double ar = a - av;
    Expansion e;
    const double y = ar + br;
    if (y != 0.0) e.c_.push_back(y);
    if (x != 0.0) e.c_.push_back(x);
    return e;
  }

  int sign() const {
    if (c_.empty()) return 0;
    return c_.back() > 0 ? 1 : -1;
  }

  Expansion operator-() const {
    Expansion r = *this;
    for (double& v : r.c_) v = -v;
    return r;
  }

  friend Expansion operator+(const Expansion& a, const Expansion& b) {
    Expansion h = a;
    for (double v : b.c_) h = h.grow(v);
    return h;
  }
  friend Expansion operator-(const Expansion& a, const Expansion& b) { return a + (-b); }
  friend Expansion operator*(const Expansion& a, const Expansion& b) {
    Expansion acc;
    for (double v : b.c_) acc = acc + a.scale(v);
    return acc;
  }

 private:
  static void two_sum(double a, double b, double& x, double& y) {
    x = a + b;
    const double bv = x - a;
    const double av = x - bv;
    y = (a - av) + (b - bv);
  }
  static void fast_two_sum(double a, double b, double& x, double& y) {
    x = a + b;
    y = b - (x - a);
  }

  Expansion grow(double b) const {
    Expansion h;
    double q = b;
    for (double e : c_) {
      double qn, hh;
      two_sum(q, e, qn, hh);
      if (hh != 0.0) h.c_.push_back(hh);
      q = qn;
    }
    if (q != 0.0 || h.c_.empty()) {
      if (q != 0.0) h.c_.push_back(q);
    }
    return h;
  }

  Expansion scale(double b) const {
    Expansion h;
    if (c_.empty() || b == 0.0) return h;
    double q = c_[0] * b;
    double hh = std::fma(c_[0], b, -q);
    if (hh != 0.0) h.c_.push_back(hh);
    for (std::size_t i = 1; i < c_.size(); ++i) {
      const double p1 = c_[i] * b;
      const double p0 = std::fma(c_[i], b, -p1);
      double sum;
      two_sum(q, p0, sum, hh);
      if (hh != 0.0) h.c_.push_back(hh);
      fast_two_sum(p1, sum, q, hh);
      if (hh != 0.0) h.c_.push_back(hh);
    }
    if (q != 0.0) h.c_.push_back(q);
    return h;
  }

  std::vector<double> c_;
};

int orient3d_exact(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  Expansion u[3], v[3], w[3];
  for (int k = 0; k < 3; ++k) {
    u[k] = Expansion::difference(b[k], a[k]);
    v[k] = Expansion::difference(c[k], a[k]);
    w[k] = Expansion::difference(d[k], a[k]);
  }
  const Expansion det = u[0] * (v[1] * w[2] - v[2] * w[1]) -
                        u[1] * (v[0] * w[2] - v[2] * w[0]) +
                        u[2] * (v[0] * w[1] - v[1] * w[0]);
  return det.sign();
}

int insphere_exact(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d, const Vec3& e) {
  Expansion ax = Expansion::difference(a.x(), e.x()), ay = Expansion::difference(a.y(), e.y()),
            az = Expansion::difference(a.z(), e.z());
  Expansion bx = Expansion::difference(b.x(), e.x()), by = Expansion::difference(b.y(), e.y()),
            bz = Expansion::difference(b.z(), e.z());
  Expansion cx = Expansion::difference(c.x(), e.x()), cy = Expansion::difference(c.y(), e.y()),
            cz = Expansion::difference(c.z(), e.z());
  Expansion dx = Expansion::difference(d.x(), e.x()), dy = Expansion::difference(d.y(), e.y()),
            dz = Expansion::difference(d.z(), e.z());

  const Expansion ab = ax * by - bx * ay;
  const Expansion bc = bx * cy - cx * by;
  const Expansion cd = cx * dy - dx * cy;
  const Expansion da = dx * ay - ax * dy;
  const Expansion ac = ax * cy - cx * ay;
  const Expansion bd = bx * dy - dx * by;

  const Expansion abc = az * bc - bz * ac + cz * ab;
  const Expansion bcd = bz * cd - cz * bd + dz * bc;
  const Expansion cda = cz * da + dz * ac + az * cd;
  const Expansion dab = dz * ab + az * bd + bz * da;

  const Expansion alift = ax * ax + ay * ay + az * az;
  const Expansion blift = bx * bx + by * by + bz * bz;
  const Expansion clift = cx * cx + cy * cy + cz * cz;
  const Expansion dlift = dx * dx + dy * dy + dz * dz;

  const Expansion det = (dlift * abc - clift * dab) + (blift * cda - alift * bcd);
  return det.sign();
}

}  // namespace

double orient3d_fast(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  const Vec3 u = b - a, v = c - a, w = d - a;
  return u.dot(v.cross(w));
}

int orient3d(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  const Vec3 u = b - a, v = c - a, w = d - a;
  const double m0 = v.y() * w.z(), m1 = v.z() * w.y();
  const double m2 = v.x() * w.z(), m3 = v.z() * w.x();
  const double m4 = v.x() * w.y(), m5 = v.y() * w.x();
  const double det = u.x() * (m0 - m1) - u.y() * (m2 - m3) + u.z() * (m4 - m5);
  const double perm = std::abs(u.x()) * (std::abs(m0) + std::abs(m1)) +
                      std::abs(u.y()) * (std::abs(m2) + std::abs(m3)) +
                      std::abs(u.z()) * (std::abs(m4) + std::abs(m5));
  const double bound = kOrientBound * perm;
  if (det > bound) return 1;
  if (-det > bound) return -1;
  return orient3d_exact(a, b, c, d);
}

int insphere_det(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d, const Vec3& e) {
  const double aex = a.x() - e.x(), aey = a.y() - e.y(), aez = a.z() - e.z();
  const double bex = b.x() - e.x(), bey = b.y() - e.y(), bez = b.z() - e.z();
  const double cex = c.x() - e.x(), cey = c.y() - e.y(), cez = c.z() - e.z();
  const double dex = d.x() - e.x(), dey = d.y() - e.y(), dez = d.z() - e.z();

  const double aexbey = aex * bey, bexaey = bex * aey;
  const double bexcey = bex * cey, cexbey = cex * bey;
  const double cexdey = cex * dey, dexcey = dex * cey;
  const double dexaey = dex * aey, aexdey = aex * dey;
  const double aexcey = aex * cey, cexaey = cex * aey;
  const double bexdey = bex * dey, dexbey = dex * bey;

  const double ab = aexbey - bexaey, bc = bexcey - cexbey, cd = cexdey - dexcey;
  const double da = dexaey - aexdey, ac = aexcey - cexaey, bd = bexdey - dexbey;

  const double abc = aez * bc - bez * ac + cez * ab;
  const double bcd = bez * cd - cez * bd + dez * bc;
  const double cda = cez * da + dez * ac + aez * cd;
  const double dab = dez * ab + aez * bd + bez * da;

  const double alift = aex * aex + aey * aey + aez * aez;
  const double blift = bex * bex + bey * bey + bez * bez;
  const double clift = cex * cex + cey * cey + cez * cez;
  const double dlift = dex * dex + dey * dey + dez * dez;

  const double det = (dlift * abc - clift * dab) + (blift * cda - alift * bcd);

  const double aezp = std::abs(aez), bezp = std::abs(bez), cezp = std::abs(cez),
               dezp = std::abs(dez);
  const double aexbeyp = std::abs(aexbey), bexaeyp = std::abs(bexaey);
  const double bexceyp = std::abs(bexcey), cexbeyp = std::abs(cexbey);
  const double cexdeyp = std::abs(cexdey), dexceyp = std::abs(dexcey);
  const double dexaeyp = std::abs(dexaey), aexdeyp = std::abs(aexdey);
  const double aexceyp = std::abs(aexcey), cexaeyp = std::abs(cexaey);
  const double bexdeyp = std::abs(bexdey), dexbeyp = std::abs(dexbey);
  const double perm =
      ((cexdeyp + dexceyp) * bezp + (dexbeyp + bexdeyp) * cezp + (bexceyp + cexbeyp) * dezp) *
          alift +
      ((dexaeyp + aexdeyp) * cezp + (aexceyp + cexaeyp) * dezp + (cexdeyp + dexceyp) * aezp) *
          blift +
      ((aexbeyp + bexaeyp) * dezp + (bexdeyp + dexbeyp) * aezp + (dexaeyp + aexdeyp) * bezp) *
          clift +
      ((bexceyp + cexbeyp) * aezp + (cexaeyp + aexceyp) * bezp + (aexbeyp + bexaeyp) * cezp) *
          dlift;
  const double bound = kInsphereBound * perm;
  if (det > bound) return 1;
  if (-det > bound) return -1;
  return insphere_exact(a, b, c, d, e);
}

int insphere_det_sos(const std::array<const Vec3*, 5>& p,
                     const std::array<std::uint64_t, 5>& priority) {
  const int s = insphere_det(*p[0], *p[1], *p[2], *p[3], *p[4]);
  if (s != 0) return s;
  // d det / d lift_i = (-1)^i * orient3d(the other four, in order).
  std::array<int, 5> order{0, 1, 2, 3, 4};
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return priority[a] > priority[b]; });
  for (int i : order) {
    std::array<const Vec3*, 4> rest{};
    int m = 0;
    for (int j = 0; j < 5; ++j)
      if (j != i) rest[m++] = p[j];
    const int o = orient3d(*rest[0], *rest[1], *rest[2], *rest[3]);
    if (o != 0) return (i % 2 == 0) ? o : -o;
  }
  return 0;
}

}  // namespace meshloop::predicates
