#include "mmflow/space.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>

namespace mmflow {
namespace {

std::atomic<std::uint64_t> next_space_id{1};

constexpr double antipodal_margin = 1e-9;
constexpr double tiny = 1e-14;

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

void normalize(std::vector<double>& v) {
  const double n = norm(v);
  for (double& c : v) c /= n;
}

bool is_hub(const Point& p) { return p.coords[0] == 0.0; }

// Direction of y seen from x on a star tree: (edge, +1 outward / -1 inward).
std::pair<int, int> tree_direction(const Point& x, const Point& y) {
  if (is_hub(x)) return {y.edge, 1};
  if (!is_hub(y) && y.edge == x.edge && y.coords[0] > x.coords[0]) return {x.edge, 1};
  return {x.edge, -1};
}

}  // namespace

Space Space::sphere(int n) {
  if (n < 1) throw usage_error("sphere dimension must be >= 1");
  Space s;
  s.kind_ = SpaceKind::sphere;
  s.dim_ = n;
  s.id_ = next_space_id++;
  return s;
}

Space Space::euclidean(int n) {
  if (n < 1) throw usage_error("euclidean dimension must be >= 1");
  Space s;
  s.kind_ = SpaceKind::euclidean;
  s.dim_ = n;
  s.id_ = next_space_id++;
  return s;
}

Space Space::star_tree(std::vector<double> legs) {
  if (legs.empty()) throw usage_error("star tree needs at least one leg");
  for (double l : legs)
    if (!(l > 0) || !std::isfinite(l)) throw usage_error("star tree legs must be positive");
  Space s;
  s.kind_ = SpaceKind::star_tree;
  s.dim_ = 1;
  s.legs_ = std::move(legs);
  s.id_ = next_space_id++;
  return s;
}

CaseTag Space::case_tag() const {
  return kind_ == SpaceKind::sphere ? CaseTag::cat1_local : CaseTag::global_k;
}

double Space::diameter_bound() const {
  switch (kind_) {
    case SpaceKind::sphere: return pi;
    case SpaceKind::euclidean: return std::numeric_limits<double>::infinity();
    case SpaceKind::star_tree: {
      std::vector<double> l = legs_;
      std::sort(l.rbegin(), l.rend());
      return l.size() == 1 ? l[0] : l[0] + l[1];
    }
  }
  return 0;
}

double Space::uniqueness_radius() const {
  return kind_ == SpaceKind::sphere ? pi : std::numeric_limits<double>::infinity();
}

std::string Space::describe() const {
  std::ostringstream os;
  switch (kind_) {
    case SpaceKind::sphere: os << "sphere S^" << dim_; break;
    case SpaceKind::euclidean: os << "euclidean R^" << dim_; break;
    case SpaceKind::star_tree:
      os << "star tree (";
      for (std::size_t i = 0; i < legs_.size(); ++i) os << (i ? "," : "") << legs_[i];
      os << ")";
      break;
  }
  return os.str();
}

Point Space::point(std::vector<double> coords) const {
  if (kind_ == SpaceKind::star_tree) throw usage_error("use tree_point for star trees");
  const std::size_t want = kind_ == SpaceKind::sphere ? dim_ + 1 : dim_;
  if (coords.size() != want) throw usage_error("coordinate count does not match " + describe());
  for (double c : coords)
    if (!std::isfinite(c)) throw usage_error("non-finite coordinate");
  if (kind_ == SpaceKind::sphere) {
    if (norm(coords) < tiny) throw usage_error("zero vector is not a sphere point");
    normalize(coords);
  }
  return Point{id_, std::move(coords), 0};
}

Point Space::tree_point(int edge, double offset) const {
  if (kind_ != SpaceKind::star_tree) throw usage_error("tree_point on a non-tree space");
  if (edge < 0 || edge >= static_cast<int>(legs_.size())) throw usage_error("tree edge out of range");
  if (offset < 0 || offset > legs_[edge] * (1 + 1e-15)) throw usage_error("tree offset out of range");
  offset = std::min(offset, legs_[edge]);
  if (offset == 0.0) edge = 0;
  return Point{id_, {offset}, edge};
}

Point Space::hub() const { return tree_point(0, 0.0); }

void Space::require_same(const Point& p) const {
  if (p.space_id != id_) throw usage_error("point does not belong to " + describe());
}

Point Space::random_point(std::mt19937_64& rng, double euclid_box) const {
  switch (kind_) {
    case SpaceKind::sphere: {
      std::normal_distribution<double> g;
      std::vector<double> v(dim_ + 1);
      do {
        for (double& c : v) c = g(rng);
      } while (norm(v) < 1e-6);
      return point(std::move(v));
    }
    case SpaceKind::euclidean: {
      std::uniform_real_distribution<double> u(-euclid_box, euclid_box);
      std::vector<double> v(dim_);
      for (double& c : v) c = u(rng);
      return point(std::move(v));
    }
    case SpaceKind::star_tree: {
      std::uniform_int_distribution<int> e(0, static_cast<int>(legs_.size()) - 1);
      const int edge = e(rng);
      std::uniform_real_distribution<double> u(0.0, legs_[edge]);
      return tree_point(edge, u(rng));
    }
  }
  return {};
}

Point Space::random_in_ball(const Point& center, double r, std::mt19937_64& rng) const {
  require_same(center);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double rho = r * u01(rng);
  switch (kind_) {
    case SpaceKind::sphere: {
      std::normal_distribution<double> g;
      std::vector<double> v(dim_ + 1);
      double n = 0;
      do {
        for (double& c : v) c = g(rng);
        const double proj = dot(v, center.coords);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= proj * center.coords[i];
        n = norm(v);
      } while (n < 1e-6);
      for (double& c : v) c *= rho / n;
      return sphere_exp(*this, center, v);
    }
    case SpaceKind::euclidean: {
      std::normal_distribution<double> g;
      std::vector<double> v(dim_);
      double n = 0;
      do {
        for (double& c : v) c = g(rng);
        n = norm(v);
      } while (n < 1e-6);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = center.coords[i] + rho * v[i] / n;
      return point(std::move(v));
    }
    case SpaceKind::star_tree: {
      const int m = static_cast<int>(legs_.size());
      const double a = center.coords[0];
      std::uniform_int_distribution<int> pick(0, m - 1);
      if (is_hub(center)) {
        const int e = pick(rng);
        return tree_point(e, std::min(rho, legs_[e]));
      }
      const int e = center.edge;
      if (u01(rng) < 0.5) return tree_point(e, std::min(a + rho, legs_[e]));
      if (rho <= a || m == 1) return tree_point(e, std::max(a - rho, 0.0));
      int other = pick(rng);
      while (other == e) other = pick(rng);
      return tree_point(other, std::min(rho - a, legs_[other]));
    }
  }
  return {};
}

double distance(const Space& s, const Point& x, const Point& y) {
  s.require_same(x);
  s.require_same(y);
  switch (s.kind()) {
    case SpaceKind::sphere: {
      double dm = 0, dp = 0;
      for (std::size_t i = 0; i < x.coords.size(); ++i) {
        const double a = x.coords[i] - y.coords[i];
        const double b = x.coords[i] + y.coords[i];
        dm += a * a;
        dp += b * b;
      }
      return 2.0 * std::atan2(std::sqrt(dm), std::sqrt(dp));
    }
    case SpaceKind::euclidean: {
      double d = 0;
      for (std::size_t i = 0; i < x.coords.size(); ++i) {
        const double a = x.coords[i] - y.coords[i];
        d += a * a;
      }
      return std::sqrt(d);
    }
    case SpaceKind::star_tree: {
      const double a = x.coords[0], b = y.coords[0];
      return x.edge == y.edge ? std::abs(a - b) : a + b;
    }
  }
  return 0;
}

double distance_sq(const Space& s, const Point& x, const Point& y) {
  const double d = distance(s, x, y);
  return d * d;
}

std::vector<double> sphere_log(const Point& x, const Point& y) {
  std::vector<double> v = y.coords;
  const double c = dot(x.coords, y.coords);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * x.coords[i];
  const double n = norm(v);
  double dm = 0, dp = 0;
  for (std::size_t i = 0; i < x.coords.size(); ++i) {
    const double a = x.coords[i] - y.coords[i];
    const double b = x.coords[i] + y.coords[i];
    dm += a * a;
    dp += b * b;
  }
  const double d = 2.0 * std::atan2(std::sqrt(dm), std::sqrt(dp));
  if (n < tiny) {
    std::fill(v.begin(), v.end(), 0.0);
    return v;
  }
  for (double& e : v) e *= d / n;
  return v;
}

Point sphere_exp(const Space& s, const Point& x, const std::vector<double>& v) {
  const double th = norm(v);
  std::vector<double> p = x.coords;
  if (th > 0) {
    const double c = std::cos(th), sn = std::sin(th) / th;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = c * x.coords[i] + sn * v[i];
  }
  return s.point(std::move(p));
}

Point geodesic_point(const Space& s, const Point& x, const Point& y, double t) {
  const double d = distance(s, x, y);
  switch (s.kind()) {
    case SpaceKind::sphere: {
      if (d >= pi - antipodal_margin) throw geometry_error("antipodal pair: geodesic is not unique");
      if (d < tiny) return x;
      const double a = std::sin((1 - t) * d) / std::sin(d);
      const double b = std::sin(t * d) / std::sin(d);
      std::vector<double> p(x.coords.size());
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = a * x.coords[i] + b * y.coords[i];
      return s.point(std::move(p));
    }
    case SpaceKind::euclidean: {
      std::vector<double> p(x.coords.size());
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = (1 - t) * x.coords[i] + t * y.coords[i];
      return s.point(std::move(p));
    }
    case SpaceKind::star_tree: {
      const double a = x.coords[0], b = y.coords[0];
      if (x.edge == y.edge) return s.tree_point(x.edge, (1 - t) * a + t * b);
      // Through the hub: down x's leg for length a, then up y's leg.
      const double arc = t * d;
      if (arc <= a) return s.tree_point(x.edge, a - arc);
      return s.tree_point(y.edge, std::min(arc - a, b));
    }
  }
  return x;
}

double comparison_angle_sides(double b, double c, double a) {
  if (b <= tiny || c <= tiny) throw geometry_error("degenerate triangle: zero side at the apex");
  if (a + b + c >= 2 * pi) throw geometry_error("perimeter >= 2*pi: no comparison triangle");
  const double cosA = (std::cos(a) - std::cos(b) * std::cos(c)) / (std::sin(b) * std::sin(c));
  return std::acos(std::clamp(cosA, -1.0, 1.0));
}

double comparison_angle(const Space& s, const Point& apex, const Point& y, const Point& z) {
  return comparison_angle_sides(distance(s, apex, y), distance(s, apex, z), distance(s, y, z));
}

double first_variation(const Space& s, const Point& x, const Point& y, const Point& z) {
  const double dy = distance(s, x, y), dz = distance(s, x, z);
  if (dy <= tiny || dz <= tiny) throw geometry_error("first variation needs distinct points");
  if (dy >= s.uniqueness_radius() - antipodal_margin || dz >= s.uniqueness_radius() - antipodal_margin)
    throw geometry_error("first variation beyond the uniqueness radius");
  switch (s.kind()) {
    case SpaceKind::euclidean: {
      double ip = 0;
      for (std::size_t i = 0; i < x.coords.size(); ++i)
        ip += (y.coords[i] - x.coords[i]) * (z.coords[i] - x.coords[i]);
      return -2.0 * ip;
    }
    case SpaceKind::sphere: return -2.0 * dot(sphere_log(x, y), sphere_log(x, z));
    case SpaceKind::star_tree: {
      const double cosang = tree_direction(x, y) == tree_direction(x, z) ? 1.0 : -1.0;
      return -2.0 * dy * dz * cosang;
    }
  }
  return 0;
}

double sphere_k_candidate(double R) { return 2.0 * R / std::tan(R); }

double sphere_k_scan(double R, int radial_samples, double h) {
  const Space s2 = Space::sphere(2);
  const Point x = s2.point({0, 0, 1});
  auto f = [&](const std::vector<double>& q, const std::vector<double>& u, double t) {
    const Point c = s2.point({std::cos(t) * q[0] + std::sin(t) * u[0],
                              std::cos(t) * q[1] + std::sin(t) * u[1],
                              std::cos(t) * q[2] + std::sin(t) * u[2]});
    return distance_sq(s2, x, c);
  };
  double k = 2.0;
  for (int i = 1; i <= radial_samples; ++i) {
    const double r = R * i / radial_samples;
    const std::vector<double> q{std::sin(r), 0, std::cos(r)};
    const std::vector<double> radial{std::cos(r), 0, -std::sin(r)};
    const std::vector<double> tangential{0, 1, 0};
    for (const auto* u : {&radial, &tangential}) {
      const double second = (f(q, *u, h) - 2 * f(q, *u, 0) + f(q, *u, -h)) / (h * h);
      k = std::min(k, second);
    }
  }
  return k;
}

namespace {

constexpr int table_nodes = 512;

const std::vector<double>& sphere_k_table() {
  static const std::vector<double> table = [] {
    std::vector<double> t(table_nodes);
    for (int i = 1; i < table_nodes; ++i) t[i] = sphere_k_scan(pi * i / table_nodes);
    t[0] = 2.0;
    return t;
  }();
  return table;
}

}  // namespace

double convexity_constant(const Space& s, double R) {
  if (!(R > 0)) throw usage_error("convexity radius must be positive");
  if (s.kind() != SpaceKind::sphere) return 2.0;
  if (R >= pi) throw geometry_error("convexity radius must be < pi on the sphere");
  // Linear interpolation of a concave profile never exceeds it.
  const double pos = R / pi * table_nodes;
  const int i = static_cast<int>(pos);
  if (i < 1 || i >= table_nodes - 1) return sphere_k_scan(R);
  const auto& t = sphere_k_table();
  const double w = pos - i;
  return (1 - w) * t[i] + w * t[i + 1];
}

std::vector<double> default_steps() {
  std::vector<double> h;
  for (int j = 0; j <= 6; ++j) h.push_back(1e-3 * std::ldexp(1.0, -j));
  return h;
}

double richardson(const std::vector<double>& h, const std::vector<double>& q, int max_order) {
  if (h.size() != q.size() || h.empty()) throw usage_error("richardson needs matching nonempty samples");
  const std::size_t m = std::min<std::size_t>(h.size(), max_order + 1);
  const std::size_t off = h.size() - m;
  // Neville evaluation of the interpolating polynomial at 0.
  std::vector<double> p(q.begin() + off, q.end());
  for (std::size_t k = 1; k < m; ++k)
    for (std::size_t i = 0; i + k < m; ++i) {
      const double hi = h[off + i], hk = h[off + i + k];
      p[i] = (hk * p[i] - hi * p[i + 1]) / (hk - hi);
    }
  return p[0];
}

CommutativityReport check_commutativity(const Space& s, const Point& x, const Point& y,
                                        const Point& z, const std::vector<double>& steps,
                                        double tol) {
  const double dxy2 = distance_sq(s, x, y), dxz2 = distance_sq(s, x, z);
  if (dxy2 <= 0 || dxz2 <= 0) throw geometry_error("commutativity needs distinct points");
  std::vector<double> ql, qr;
  for (double h : steps) {
    ql.push_back((distance_sq(s, geodesic_point(s, x, y, h), z) - dxz2) / h);
    qr.push_back((distance_sq(s, geodesic_point(s, x, z, h), y) - dxy2) / h);
  }
  CommutativityReport r;
  r.lhs = richardson(steps, ql, 2);
  r.rhs = richardson(steps, qr, 2);
  r.gap = std::abs(r.lhs - r.rhs);
  r.tol = tol;
  r.pass = r.gap <= tol;
  return r;
}

bool check_cat1_triangle(const Space& s, const Point& x, const Point& y, const Point& z, int samples,
                         double slack) {
  const double b = distance(s, x, y), c = distance(s, x, z), a = distance(s, y, z);
  if (a + b + c >= 2 * pi) throw geometry_error("perimeter >= 2*pi: no comparison triangle");
  if (samples < 2) throw usage_error("need at least two samples");
  // Comparison triangle: y~ = e1, z~ in the e1-e2 plane, x~ placed by its two sides.
  std::vector<double> xt{std::cos(b), 0, 0};
  if (std::sin(a) > tiny) {
    const double alpha = (std::cos(c) - std::cos(a) * std::cos(b)) / std::sin(a);
    xt[1] = alpha;
    xt[2] = std::sqrt(std::max(0.0, 1 - xt[0] * xt[0] - alpha * alpha));
  } else {
    xt[1] = std::sin(b);
  }
  const Space s2 = Space::sphere(2);
  const Point xs = s2.point(xt);
  for (int i = 0; i < samples; ++i) {
    const double t = static_cast<double>(i) / (samples - 1);
    const Point g = geodesic_point(s, y, z, t);
    const Point gt = s2.point({std::cos(t * a), std::sin(t * a), 0});
    if (distance(s, x, g) > distance(s2, xs, gt) + slack) return false;
  }
  return true;
}

}  // namespace mmflow
