#include "meshloop/delaunay.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <unordered_map>

#include "meshloop/predicates.hpp"
#include "meshloop/scene.hpp"

namespace meshloop {
namespace {

constexpr int kInf = -1;

// Face opposite vertex i, ordered so that vertex i lies on its positive side.
constexpr int kFace[4][3] = {{1, 3, 2}, {0, 2, 3}, {0, 3, 1}, {0, 1, 2}};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t spread_bits(std::uint64_t v) {
  v &= 0x1fffff;
  v = (v | v << 32) & 0x1f00000000ffffULL;
  v = (v | v << 16) & 0x1f0000ff0000ffULL;
  v = (v | v << 8) & 0x100f00f00f00f00fULL;
  v = (v | v << 4) & 0x10c30c30c30c30c3ULL;
  v = (v | v << 2) & 0x1249249249249249ULL;
  return v;
}

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};
struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const {
    return splitmix64(static_cast<std::uint64_t>(k.x) * 73856093ULL ^
                      static_cast<std::uint64_t>(k.y) * 19349663ULL ^
                      static_cast<std::uint64_t>(k.z) * 83492791ULL);
  }
};

class Builder {
 public:
  Builder(std::vector<Vec3> pts, std::vector<std::uint64_t> prio, std::uint64_t seed)
      : pts_(std::move(pts)), prio_(std::move(prio)), rng_(seed) {}

  void run(const std::vector<int>& order);
  std::vector<Tet> finite_cells() const;

 private:
  struct Cell {
    std::array<int, 4> v;
    std::array<int, 4> n;
  };

  bool infinite(int c) const { return cells_[c].v[3] == kInf; }
  bool finite_conflict(int c, int p) const;
  bool conflict(int c, int p) const;
  int locate(int p);
  void insert(int p);
  int new_cell(const std::array<int, 4>& v);
  void bootstrap(const std::array<int, 4>& first);

  std::vector<Vec3> pts_;
  std::vector<std::uint64_t> prio_;
  std::vector<Cell> cells_;
  std::vector<char> alive_;
  std::vector<int> free_;
  std::mt19937_64 rng_;
  int hint_ = 0;

  // scratch
  std::vector<int> stamp_;
  int epoch_ = 0;
};

bool Builder::finite_conflict(int c, int p) const {
  const auto& v = cells_[c].v;
  const std::array<const Vec3*, 5> pts{&pts_[v[0]], &pts_[v[1]], &pts_[v[2]], &pts_[v[3]],
                                       &pts_[p]};
  const std::array<std::uint64_t, 5> pr{prio_[v[0]], prio_[v[1]], prio_[v[2]], prio_[v[3]],
                                        prio_[p]};
  return predicates::insphere_det_sos(pts, pr) < 0;
}

bool Builder::conflict(int c, int p) const {
  if (!infinite(c)) return finite_conflict(c, p);
  const auto& v = cells_[c].v;
  const int o = predicates::orient3d(pts_[v[0]], pts_[v[1]], pts_[v[2]], pts_[p]);
  if (o != 0) return o > 0;
  // Coplanar with a hull facet: same answer as the finite cell behind it,
  // whose circumsphere meets the facet plane in the facet's circumcircle.
  return finite_conflict(cells_[c].n[3], p);
}

int Builder::new_cell(const std::array<int, 4>& v) {
  int id;
  if (!free_.empty()) {
    id = free_.back();
    free_.pop_back();
    alive_[id] = 1;
  } else {
    id = static_cast<int>(cells_.size());
    cells_.push_back({});
    alive_.push_back(1);
    stamp_.push_back(0);
  }
  cells_[id].v = v;
  cells_[id].n = {-1, -1, -1, -1};
  return id;
}

void Builder::bootstrap(const std::array<int, 4>& t) {
  const int c0 = new_cell(t);
  std::array<int, 4> inf_cells{};
  for (int i = 0; i < 4; ++i) {
    const int a = t[kFace[i][0]], b = t[kFace[i][1]], c = t[kFace[i][2]];
    inf_cells[i] = new_cell({a, c, b, kInf});
    cells_[c0].n[i] = inf_cells[i];
    cells_[inf_cells[i]].n[3] = c0;
  }
  // Pair the infinite cells along shared hull edges.
  for (int i = 0; i < 4; ++i) {
    for (int fi = 0; fi < 3; ++fi) {
      Cell& ci = cells_[inf_cells[i]];
      if (ci.n[fi] != -1) continue;
      std::array<int, 3> key{ci.v[kFace[fi][0]], ci.v[kFace[fi][1]], ci.v[kFace[fi][2]]};
      std::sort(key.begin(), key.end());
      for (int j = 0; j < 4 && ci.n[fi] == -1; ++j) {
        if (j == i) continue;
        Cell& cj = cells_[inf_cells[j]];
        for (int fj = 0; fj < 3; ++fj) {
          std::array<int, 3> k2{cj.v[kFace[fj][0]], cj.v[kFace[fj][1]], cj.v[kFace[fj][2]]};
          std::sort(k2.begin(), k2.end());
          if (k2 == key) {
            ci.n[fi] = inf_cells[j];
            cj.n[fj] = inf_cells[i];
            break;
          }
        }
      }
    }
  }
  hint_ = c0;
}

int Builder::locate(int p) {
  int c = hint_;
  if (!alive_[c]) {
    for (c = 0; c < static_cast<int>(cells_.size()) && !alive_[c]; ++c) {
    }
  }
  if (infinite(c)) c = cells_[c].n[3];
  const int max_steps = 4 * static_cast<int>(cells_.size()) + 64;
  std::uniform_int_distribution<int> pick(0, 3);
  for (int step = 0; step < max_steps; ++step) {
    const int off = pick(rng_);
    bool moved = false;
    for (int k = 0; k < 4; ++k) {
      const int i = (k + off) & 3;
      const auto& v = cells_[c].v;
      if (predicates::orient3d(pts_[v[kFace[i][0]]], pts_[v[kFace[i][1]]],
                               pts_[v[kFace[i][2]]], pts_[p]) < 0) {
        c = cells_[c].n[i];
        if (infinite(c)) return c;
        moved = true;
        break;
      }
    }
    if (!moved) return c;
  }
  // Walk did not settle; fall back to a scan.
  for (int i = 0; i < static_cast<int>(cells_.size()); ++i)
    if (alive_[i] && conflict(i, p)) return i;
  throw Error("delaunay: point location failed");
}

void Builder::insert(int p) {
  const int start = locate(p);
  ++epoch_;
  const int in_cavity = 2 * epoch_;
  const int outside = 2 * epoch_ + 1;

  std::vector<int> cavity{start};
  stamp_[start] = in_cavity;
  struct Boundary {
    int cell, face;
  };
  std::vector<Boundary> boundary;
  for (std::size_t k = 0; k < cavity.size(); ++k) {
    const int c = cavity[k];
    for (int i = 0; i < 4; ++i) {
      const int nb = cells_[c].n[i];
      if (stamp_[nb] == in_cavity) continue;
      if (stamp_[nb] != outside && conflict(nb, p)) {
        stamp_[nb] = in_cavity;
        cavity.push_back(nb);
      } else {
        stamp_[nb] = outside;
        boundary.push_back({c, i});
      }
    }
  }

  struct Open {
    std::array<int, 3> key;
    int cell, face;
  };
  std::vector<Open> open;
  std::vector<int> created;
  created.reserve(boundary.size());
  for (const auto& b : boundary) {
    const Cell old = cells_[b.cell];
    std::array<int, 4> v{old.v[kFace[b.face][0]], old.v[kFace[b.face][1]],
                         old.v[kFace[b.face][2]], p};
    for (int k = 0; k < 3; ++k) {
      if (v[k] == kInf) {
        std::swap(v[k], v[3]);
        const int o1 = (k + 1) % 3, o2 = (k + 2) % 3;
        std::swap(v[o1], v[o2]);
        break;
      }
    }
    const int nc = new_cell(v);
    created.push_back(nc);
    const int outer = old.n[b.face];
    const int p_pos = static_cast<int>(std::find(v.begin(), v.end(), p) - v.begin());
    cells_[nc].n[p_pos] = outer;
    for (int j = 0; j < 4; ++j) {
      if (cells_[outer].n[j] == b.cell) {
        cells_[outer].n[j] = nc;
        break;
      }
    }
    for (int f = 0; f < 4; ++f) {
      if (f == p_pos) continue;
      std::array<int, 3> key{v[kFace[f][0]], v[kFace[f][1]], v[kFace[f][2]]};
      std::sort(key.begin(), key.end());
      auto it = std::find_if(open.begin(), open.end(), [&](const Open& o) { return o.key == key; });
      if (it != open.end()) {
        cells_[nc].n[f] = it->cell;
        cells_[it->cell].n[it->face] = nc;
        *it = open.back();
        open.pop_back();
      } else {
        open.push_back({key, nc, f});
      }
    }
  }
  if (!open.empty()) throw Error("delaunay: cavity retriangulation left unmatched faces");

  for (int c : cavity) {
    alive_[c] = 0;
    free_.push_back(c);
  }
  hint_ = created.front();
  for (int c : created) {
    if (!infinite(c)) {
      hint_ = c;
      break;
    }
  }
}

void Builder::run(const std::vector<int>& order) {
  // First tetrahedron: a, b, the point farthest from line ab, then the point
  // farthest from plane abc.
  const int a = order[0];
  int b = -1;
  double best = -1;
  for (int i : order) {
    const double d = (pts_[i] - pts_[a]).squaredNorm();
    if (d > best) best = d, b = i;
  }
  int c = -1;
  best = -1;
  for (int i : order) {
    const double d = (pts_[i] - pts_[a]).cross(pts_[b] - pts_[a]).squaredNorm();
    if (d > best) best = d, c = i;
  }
  int d = -1;
  best = -1;
  for (int i : order) {
    const double v = std::abs(predicates::orient3d_fast(pts_[a], pts_[b], pts_[c], pts_[i]));
    if (v > best) best = v, d = i;
  }
  const BoundingBox box = [&] {
    BoundingBox bb;
    for (const auto& q : pts_) bb.extend(q);
    return bb;
  }();
  const double diag = box.diagonal();
  const int o = predicates::orient3d(pts_[a], pts_[b], pts_[c], pts_[d]);
  if (o == 0 || best <= 1e-13 * diag * diag * diag)
    throw InvalidArgument("all sites are coplanar within tolerance");
  std::array<int, 4> first = o > 0 ? std::array<int, 4>{a, b, c, d}
                                   : std::array<int, 4>{a, c, b, d};
  bootstrap(first);
  for (int i : order) {
    if (i == a || i == b || i == c || i == d) continue;
    insert(i);
  }
}

std::vector<Tet> Builder::finite_cells() const {
  std::vector<Tet> out;
  for (std::size_t c = 0; c < cells_.size(); ++c)
    if (alive_[c] && cells_[c].v[3] != kInf) out.push_back(cells_[c].v);
  return out;
}

}  // namespace

double tet_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  return predicates::orient3d_fast(a, b, c, d) / 6.0;
}

std::vector<Tet> canonical_tets(std::vector<Tet> tets) {
  for (auto& t : tets) {
    const int m = static_cast<int>(std::min_element(t.begin(), t.end()) - t.begin());
    // Even permutation bringing position m to the front.
    switch (m) {
      case 1: t = {t[1], t[0], t[3], t[2]}; break;
      case 2: t = {t[2], t[3], t[0], t[1]}; break;
      case 3: t = {t[3], t[2], t[1], t[0]}; break;
      default: break;
    }
    // Rotate the remaining three cyclically so the smallest comes second.
    while (t[1] > t[2] || t[1] > t[3]) t = {t[0], t[2], t[3], t[1]};
  }
  std::sort(tets.begin(), tets.end());
  return tets;
}

Tetrahedralization triangulate(std::span<const Vec3> sites, std::uint64_t seed) {
  require(sites.size() >= 4, "triangulate needs at least 4 sites");
  for (const auto& s : sites)
    if (!s.allFinite()) throw InvalidArgument("triangulate: non-finite site coordinate");

  BoundingBox box;
  for (const auto& s : sites) box.extend(s);
  const double diag = box.diagonal();
  const double merge_tol = 1e-9 * diag;

  Tetrahedralization out;
  out.n_sites = sites.size();
  out.site_remap.resize(sites.size());

  // Merge near-duplicates with a hash grid of cell size merge_tol.
  std::vector<int> unique_sites;
  {
    std::unordered_map<CellKey, std::vector<int>, CellKeyHash> grid;
    const double inv = merge_tol > 0 ? 1.0 / merge_tol : 1.0;
    for (int i = 0; i < static_cast<int>(sites.size()); ++i) {
      const Vec3 q = (sites[i] - box.lo) * inv;
      const CellKey k{static_cast<std::int64_t>(std::floor(q.x())),
                      static_cast<std::int64_t>(std::floor(q.y())),
                      static_cast<std::int64_t>(std::floor(q.z()))};
      int rep = -1;
      for (int dx = -1; dx <= 1 && rep < 0; ++dx)
        for (int dy = -1; dy <= 1 && rep < 0; ++dy)
          for (int dz = -1; dz <= 1 && rep < 0; ++dz) {
            auto it = grid.find({k.x + dx, k.y + dy, k.z + dz});
            if (it == grid.end()) continue;
            for (int j : it->second)
              if ((sites[j] - sites[i]).norm() <= merge_tol) {
                rep = j;
                break;
              }
          }
      if (rep >= 0) {
        out.site_remap[i] = rep;
      } else {
        out.site_remap[i] = i;
        grid[k].push_back(i);
        unique_sites.push_back(i);
      }
    }
  }
  if (unique_sites.size() < 4) throw InvalidArgument("fewer than 4 distinct sites");

  const std::size_t n = unique_sites.size();
  std::vector<Vec3> pts(n);
  std::vector<std::uint64_t> prio(n);
  std::vector<std::uint64_t> morton(n);
  const Vec3 extent = (box.hi - box.lo).cwiseMax(1e-300);
  for (std::size_t u = 0; u < n; ++u) {
    pts[u] = sites[unique_sites[u]];
    prio[u] = splitmix64(seed * 0x2545f4914f6cdd1dULL + static_cast<std::uint64_t>(unique_sites[u]));
    const Vec3 q = ((pts[u] - box.lo).cwiseQuotient(extent) * 2097151.0).cwiseMax(0.0);
    morton[u] = spread_bits(static_cast<std::uint64_t>(q.x())) |
                (spread_bits(static_cast<std::uint64_t>(q.y())) << 1) |
                (spread_bits(static_cast<std::uint64_t>(q.z())) << 2);
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return morton[a] != morton[b] ? morton[a] < morton[b] : a < b;
  });

  Builder builder(std::move(pts), std::move(prio), seed);
  builder.run(order);
  auto tets = builder.finite_cells();
  for (auto& t : tets)
    for (int& v : t) v = unique_sites[v];
  out.tets = canonical_tets(std::move(tets));
  return out;
}

std::vector<DelaunayViolation> verify_delaunay(std::span<const Vec3> sites,
                                               std::span<const Tet> tets, double rel_tol) {
  std::vector<DelaunayViolation> out;
  if (tets.empty() || sites.empty()) return out;
  for (const auto& t : tets)
    for (int v : t)
      require(v >= 0 && static_cast<std::size_t>(v) < sites.size(),
              "verify_delaunay: tet index out of range");

  // Uniform grid over the sites for ball queries.
  BoundingBox box;
  for (const auto& s : sites) box.extend(s);
  const Vec3 ext = (box.hi - box.lo).cwiseMax(1e-12);
  const double cell = std::max(1e-12, std::cbrt(ext.prod() / static_cast<double>(sites.size())) * 2.0);
  const Eigen::Vector3i dims = ((ext / cell).array().floor().cast<int>() + 1).min(256).matrix();
  auto cell_of = [&](const Vec3& p) {
    Eigen::Vector3i c = ((p - box.lo) / cell).array().floor().cast<int>().matrix();
    return c.cwiseMax(0).cwiseMin(dims - Eigen::Vector3i::Ones()).eval();
  };
  std::vector<std::vector<int>> bins(static_cast<std::size_t>(dims.prod()));
  auto bin_index = [&](const Eigen::Vector3i& c) {
    return static_cast<std::size_t>((c.z() * dims.y() + c.y()) * dims.x() + c.x());
  };
  for (int i = 0; i < static_cast<int>(sites.size()); ++i) bins[bin_index(cell_of(sites[i]))].push_back(i);

  for (std::size_t ti = 0; ti < tets.size(); ++ti) {
    const auto& t = tets[ti];
    using LVec = Eigen::Matrix<long double, 3, 1>;
    const LVec a = sites[t[0]].cast<long double>();
    const LVec u = sites[t[1]].cast<long double>() - a;
    const LVec v = sites[t[2]].cast<long double>() - a;
    const LVec w = sites[t[3]].cast<long double>() - a;
    const long double denom = 2 * u.dot(v.cross(w));
    if (denom == 0) continue;
    const LVec rel = (u.squaredNorm() * v.cross(w) + v.squaredNorm() * w.cross(u) +
                      w.squaredNorm() * u.cross(v)) / denom;
    const long double r = std::sqrt(rel.squaredNorm());
    const LVec center = a + rel;
    const Vec3 cd = center.cast<double>();
    const double rd = static_cast<double>(r);
    const Eigen::Vector3i lo = cell_of(cd - Vec3::Constant(rd));
    const Eigen::Vector3i hi = cell_of(cd + Vec3::Constant(rd));
    for (int z = lo.z(); z <= hi.z(); ++z)
      for (int y = lo.y(); y <= hi.y(); ++y)
        for (int x = lo.x(); x <= hi.x(); ++x)
          for (int s : bins[bin_index({x, y, z})]) {
            if (s == t[0] || s == t[1] || s == t[2] || s == t[3]) continue;
            const long double dist = std::sqrt((sites[s].cast<long double>() - center).squaredNorm());
            const long double depth = r - dist;
            if (depth > rel_tol * r) out.push_back({ti, s, static_cast<double>(depth)});
          }
  }
  return out;
}

}  // namespace meshloop
