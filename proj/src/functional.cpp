#include "mmflow/functional.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <boost/math/tools/minima.hpp>

namespace mmflow {
namespace {

constexpr double antipodal_margin = 1e-9;

// Point at arc length `arc` from x along the geodesic toward target.
Point march(const Space& s, const Point& x, const Point& target, double arc) {
  const double d = distance(s, x, target);
  if (d == 0.0) return x;
  return geodesic_point(s, x, target, std::min(1.0, arc / d));
}

// Brent minimization of g on [lo, hi] after a coarse scan for a bracket.
std::pair<double, double> line_min(const std::function<double(double)>& g, double lo, double hi,
                                   int scan = 16) {
  double best_s = lo, best_v = g(lo);
  int best_i = 0;
  for (int i = 1; i <= scan; ++i) {
    const double s = lo + (hi - lo) * i / scan;
    const double v = g(s);
    if (v < best_v) {
      best_v = v;
      best_s = s;
      best_i = i;
    }
  }
  const double a = lo + (hi - lo) * std::max(0, best_i - 1) / scan;
  const double b = lo + (hi - lo) * std::min(scan, best_i + 1) / scan;
  std::uintmax_t iters = 200;
  const auto r = boost::math::tools::brent_find_minima(g, a, b, std::numeric_limits<double>::digits, iters);
  if (r.second < best_v) return {r.first, r.second};
  return {best_s, best_v};
}

using Vec = std::vector<double>;

double vnorm(const Vec& v) {
  double s = 0;
  for (double c : v) s += c * c;
  return std::sqrt(s);
}

Vec tangent_projection(const Point& z, Vec v) {
  double c = 0;
  for (std::size_t i = 0; i < v.size(); ++i) c += v[i] * z.coords[i];
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * z.coords[i];
  return v;
}

std::vector<Vec> tangent_basis(const Point& z) {
  std::vector<Vec> basis;
  const std::size_t n = z.coords.size();
  for (std::size_t k = 0; k < n && basis.size() + 1 < n; ++k) {
    Vec e(n, 0.0);
    e[k] = 1.0;
    e = tangent_projection(z, e);
    for (const Vec& b : basis) {
      double c = 0;
      for (std::size_t i = 0; i < n; ++i) c += e[i] * b[i];
      for (std::size_t i = 0; i < n; ++i) e[i] -= c * b[i];
    }
    const double m = vnorm(e);
    if (m < 1e-6) continue;
    for (double& c : e) c /= m;
    basis.push_back(e);
  }
  return basis;
}

struct Objective {
  const Functional& f;
  const Space& s;
  const Point& x;
  double tau;
  double operator()(const Point& z) const {
    const double v = f(z);
    if (!std::isfinite(v)) return infinity;
    return v + distance_sq(s, x, z) / (2 * tau);
  }
};

std::vector<Point> starts(const Functional& f, const Space& s, const Point& x) {
  std::vector<Point> out{x};
  for (const Point& a : f.anchors)
    if (a.space_id == s.id()) out.push_back(a);
  return out;
}

ProxResult solve_euclidean(const Objective& F, const Functional& f, const Space& s,
                           const SolverOptions& opt) {
  const int n = s.dimension();
  Point best;
  double best_v = infinity;
  int total = 0;
  for (Point z : starts(f, s, F.x)) {
    double v = F(z);
    double scale = 1.0;
    for (const Point& a : f.anchors) scale = std::max(scale, 2 * distance(s, a, F.x));
    for (int pass = 0;; ++pass) {
      if (++total > opt.max_iterations) throw solver_error("euclidean prox did not converge", total, v);
      std::vector<Vec> dirs;
      for (int i = 0; i < n; ++i) {
        Vec e(n, 0.0);
        e[i] = 1.0;
        dirs.push_back(e);
      }
      auto toward = [&](const Point& p) {
        Vec d(n);
        for (int i = 0; i < n; ++i) d[i] = p.coords[i] - z.coords[i];
        const double m = vnorm(d);
        if (m > 1e-14) {
          for (double& c : d) c /= m;
          dirs.push_back(d);
        }
      };
      toward(F.x);
      for (const Point& a : f.anchors) toward(a);
      const Point start = z;
      const double v0 = v;
      for (const Vec& u : dirs) {
        auto g = [&](double t) {
          Vec c = z.coords;
          for (int i = 0; i < n; ++i) c[i] += t * u[i];
          return F(s.point(std::move(c)));
        };
        const auto [t, gv] = line_min(g, -scale, scale);
        if (gv < v) {
          Vec c = z.coords;
          for (int i = 0; i < n; ++i) c[i] += t * u[i];
          z = s.point(std::move(c));
          v = gv;
        }
      }
      const double moved = distance(s, start, z);
      scale = std::max(4 * moved, 1e-9);
      if (v0 - v <= opt.tolerance * std::max(1.0, std::abs(v))) break;
    }
    if (v < best_v) {
      best_v = v;
      best = z;
    }
  }
  return ProxResult{best, best_v, distance(s, F.x, best), total, false};
}

ProxResult solve_tree(const Objective& F, const Space& s) {
  Point best = F.x;
  double best_v = F(F.x);
  int edges = 0;
  for (int e = 0; e < static_cast<int>(s.legs().size()); ++e, ++edges) {
    auto g = [&](double o) { return F(s.tree_point(e, std::clamp(o, 0.0, s.legs()[e]))); };
    const auto [o, v] = line_min(g, 0.0, s.legs()[e], 64);
    if (v < best_v) {
      best_v = v;
      best = s.tree_point(e, std::clamp(o, 0.0, s.legs()[e]));
    }
  }
  return ProxResult{best, best_v, distance(s, F.x, best), edges, false};
}

ProxResult solve_sphere(const Objective& F, const Functional& f, const Space& s,
                        const SolverOptions& opt) {
  Point best;
  double best_v = infinity;
  int total = 0;
  for (Point z : starts(f, s, F.x)) {
    if (distance(s, z, F.x) >= pi - antipodal_margin) continue;
    double v = F(z);
    double scale = 1.0;
    for (int pass = 0;; ++pass) {
      if (++total > opt.max_iterations) throw solver_error("sphere prox did not converge", total, v);
      const auto basis = tangent_basis(z);
      const double h = 1e-6;
      Vec grad(z.coords.size(), 0.0);
      for (const Vec& b : basis) {
        Vec vp = b, vm = b;
        for (double& c : vp) c *= h;
        for (double& c : vm) c *= -h;
        const double gi = (F(sphere_exp(s, z, vp)) - F(sphere_exp(s, z, vm))) / (2 * h);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += gi * b[i];
      }
      std::vector<Vec> dirs;
      const double gn = vnorm(grad);
      if (gn > 0) {
        Vec d = grad;
        for (double& c : d) c /= -gn;
        dirs.push_back(d);
      }
      auto toward = [&](const Point& p) {
        if (distance(s, z, p) >= pi - antipodal_margin) return;
        Vec d = sphere_log(z, p);
        const double m = vnorm(d);
        if (m > 1e-14) {
          for (double& c : d) c /= m;
          dirs.push_back(d);
        }
      };
      toward(F.x);
      for (const Point& a : f.anchors) toward(a);
      const Point start = z;
      const double v0 = v;
      for (const Vec& u : dirs) {
        auto g = [&](double t) {
          Vec w = u;
          for (double& c : w) c *= t;
          return F(sphere_exp(s, z, w));
        };
        const auto [t, gv] = line_min(g, -scale, scale);
        if (gv < v) {
          Vec w = u;
          for (double& c : w) c *= t;
          z = sphere_exp(s, z, w);
          v = gv;
        }
      }
      scale = std::clamp(4 * distance(s, start, z), 1e-9, pi / 2);
      if (v0 - v <= opt.tolerance * std::max(1.0, std::abs(v))) break;
    }
    if (v < best_v) {
      best_v = v;
      best = z;
    }
  }
  if (!std::isfinite(best_v)) throw solver_error("sphere prox found no admissible start", total, best_v);
  return ProxResult{best, best_v, distance(s, F.x, best), total, false};
}

double sphere_lambda_dist(double R) { return R <= pi / 2 ? 0.0 : std::cos(R) / std::sin(R); }

}  // namespace

double default_tau_star(const Space& s, double lambda, bool bounded_below, double ball_radius) {
  if (lambda >= 0 || bounded_below) return infinity;
  const double K = convexity_constant(s, ball_radius);
  return std::max(0.0, -K / (2 * lambda));
}

Functional half_sqdist(const Space& s, const Point& anchor, double weight, double ball_radius) {
  s.require_same(anchor);
  if (!(weight > 0)) throw usage_error("half_sqdist weight must be positive");
  Functional f;
  f.name = "half_sqdist";
  f.lambda = s.kind() == SpaceKind::sphere ? weight * convexity_constant(s, ball_radius) / 2 : weight;
  f.evaluator = [s, anchor, weight](const Point& x) { return 0.5 * weight * distance_sq(s, anchor, x); };
  f.domain = [](const Point&) { return true; };
  f.closed_form_prox = [s, anchor, weight](const Point& x, double tau) {
    return march(s, x, anchor, tau * weight / (1 + tau * weight) * distance(s, x, anchor));
  };
  f.lower_bound = 0.0;
  f.quadratic = QuadraticForm{anchor, weight, 0.0};
  f.anchors = {anchor};
  f.tau_star = default_tau_star(s, f.lambda, true, ball_radius);
  return f;
}

Functional dist_to(const Space& s, const Point& anchor, double ball_radius) {
  s.require_same(anchor);
  Functional f;
  f.name = "dist";
  f.lambda = s.kind() == SpaceKind::sphere ? sphere_lambda_dist(ball_radius) : 0.0;
  f.evaluator = [s, anchor](const Point& x) { return distance(s, anchor, x); };
  f.domain = [](const Point&) { return true; };
  f.closed_form_prox = [s, anchor](const Point& x, double tau) { return march(s, x, anchor, tau); };
  f.lipschitz_bound = 1.0;
  f.lower_bound = 0.0;
  f.anchors = {anchor};
  f.tau_star = default_tau_star(s, f.lambda, true, ball_radius);
  return f;
}

Functional combine(const Space& s, double a, const Functional& f, double b, const Functional& g) {
  if (a < 0 || b < 0) throw usage_error("combination weights must be nonnegative");
  Functional h;
  h.name = "sum(" + f.name + "," + g.name + ")";
  h.lambda = a * f.lambda + b * g.lambda;
  h.evaluator = [a, b, f, g](const Point& x) {
    const double u = a == 0 ? 0.0 : a * f(x);
    const double v = b == 0 ? 0.0 : b * g(x);
    return u + v;
  };
  h.domain = [f, g](const Point& x) { return f.domain(x) && g.domain(x); };
  if (f.lipschitz_bound && g.lipschitz_bound) h.lipschitz_bound = a * *f.lipschitz_bound + b * *g.lipschitz_bound;
  if (f.lower_bound && g.lower_bound) h.lower_bound = a * *f.lower_bound + b * *g.lower_bound;
  h.anchors = f.anchors;
  h.anchors.insert(h.anchors.end(), g.anchors.begin(), g.anchors.end());
  if (s.kind() == SpaceKind::euclidean && f.quadratic && g.quadratic && a + b > 0) {
    const double wa = a * f.quadratic->weight, wb = b * g.quadratic->weight, W = wa + wb;
    const auto& pa = f.quadratic->anchor.coords;
    const auto& pb = g.quadratic->anchor.coords;
    std::vector<double> m(pa.size());
    double gap2 = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = (wa * pa[i] + wb * pb[i]) / W;
      gap2 += (pa[i] - pb[i]) * (pa[i] - pb[i]);
    }
    const Point mp = s.point(m);
    const double c = a * f.quadratic->constant + b * g.quadratic->constant + wa * wb / (2 * W) * gap2;
    h.quadratic = QuadraticForm{mp, W, c};
    h.closed_form_prox = [s, mp, W](const Point& x, double tau) {
      return march(s, x, mp, tau * W / (1 + tau * W) * distance(s, x, mp));
    };
  }
  h.tau_star = default_tau_star(s, h.lambda, h.lower_bound.has_value());
  return h;
}

Functional custom(const Space& s, std::string name, Functional::Evaluator eval, double lambda,
                  std::optional<double> lower_bound, std::vector<Point> anchors) {
  Functional f;
  f.name = std::move(name);
  f.evaluator = std::move(eval);
  f.lambda = lambda;
  f.domain = [ev = f.evaluator](const Point& x) { return std::isfinite(ev(x)); };
  f.lower_bound = lower_bound;
  f.anchors = std::move(anchors);
  f.tau_star = default_tau_star(s, lambda, lower_bound.has_value());
  return f;
}

double evaluate(const Functional& f, const Point& x) { return f(x); }

ProxResult prox_solver(const Functional& f, const Space& s, const Point& x, double tau,
                       const SolverOptions& opt) {
  s.require_same(x);
  if (!(tau > 0)) throw usage_error("prox step must be positive");
  if (tau >= f.tau_star) throw horizon_error("prox step is beyond the coercivity horizon");
  const Objective F{f, s, x, tau};
  switch (s.kind()) {
    case SpaceKind::euclidean: return solve_euclidean(F, f, s, opt);
    case SpaceKind::star_tree: return solve_tree(F, s);
    case SpaceKind::sphere: return solve_sphere(F, f, s, opt);
  }
  return {};
}

ProxResult prox(const Functional& f, const Space& s, const Point& x, double tau,
                const SolverOptions& opt) {
  s.require_same(x);
  if (!(tau > 0)) throw usage_error("prox step must be positive");
  if (tau >= f.tau_star) throw horizon_error("prox step is beyond the coercivity horizon");
  if (!f.closed_form_prox) return prox_solver(f, s, x, tau, opt);
  Point z = (*f.closed_form_prox)(x, tau);
  const double d = distance(s, x, z);
  return ProxResult{z, f(z) + d * d / (2 * tau), d, 0, true};
}

double moreau_yosida(const Functional& f, const Space& s, const Point& x, double tau) {
  return prox(f, s, x, tau).value;
}

std::vector<double> default_radii() {
  std::vector<double> r;
  for (int j = 0; j <= 3; ++j) r.push_back(1e-2 * std::ldexp(1.0, -j));
  return r;
}

namespace {

std::vector<Point> slope_probes(const Functional& f, const Space& s, const Point& x, double r,
                                std::mt19937_64& rng) {
  std::vector<Point> out;
  switch (s.kind()) {
    case SpaceKind::euclidean: {
      const int n = s.dimension();
      auto push = [&](Vec u) {
        const double m = vnorm(u);
        if (m < 1e-14) return;
        Vec c = x.coords;
        for (int i = 0; i < n; ++i) c[i] += r * u[i] / m;
        out.push_back(s.point(std::move(c)));
      };
      for (int i = 0; i < n; ++i)
        for (double sg : {1.0, -1.0}) {
          Vec e(n, 0.0);
          e[i] = sg;
          push(e);
        }
      for (const Point& a : f.anchors) {
        Vec d(n);
        for (int i = 0; i < n; ++i) d[i] = a.coords[i] - x.coords[i];
        push(d);
        for (double& c : d) c = -c;
        push(d);
      }
      std::normal_distribution<double> g;
      for (int k = 0; k < 64; ++k) {
        Vec u(n);
        for (double& c : u) c = g(rng);
        push(u);
      }
      break;
    }
    case SpaceKind::sphere: {
      auto push = [&](Vec u) {
        u = tangent_projection(x, std::move(u));
        const double m = vnorm(u);
        if (m < 1e-14) return;
        for (double& c : u) c *= r / m;
        out.push_back(sphere_exp(s, x, u));
      };
      for (const Vec& b : tangent_basis(x)) {
        push(b);
        Vec nb = b;
        for (double& c : nb) c = -c;
        push(nb);
      }
      for (const Point& a : f.anchors) {
        if (distance(s, x, a) >= pi - antipodal_margin) continue;
        Vec d = sphere_log(x, a);
        push(d);
        for (double& c : d) c = -c;
        push(d);
      }
      std::normal_distribution<double> g;
      for (int k = 0; k < 64; ++k) {
        Vec u(x.coords.size());
        for (double& c : u) c = g(rng);
        push(u);
      }
      break;
    }
    case SpaceKind::star_tree: {
      const double a = x.coords[0];
      const int m = static_cast<int>(s.legs().size());
      if (a == 0.0) {
        for (int e = 0; e < m; ++e) out.push_back(s.tree_point(e, std::min(r, s.legs()[e])));
        break;
      }
      const int e = x.edge;
      if (a < s.legs()[e]) out.push_back(s.tree_point(e, std::min(a + r, s.legs()[e])));
      if (r <= a) {
        out.push_back(s.tree_point(e, a - r));
      } else {
        for (int o = 0; o < m; ++o)
          if (o != e) out.push_back(s.tree_point(o, std::min(r - a, s.legs()[o])));
      }
      break;
    }
  }
  return out;
}

}  // namespace

double local_slope(const Functional& f, const Space& s, const Point& x, const std::vector<double>& radii,
                   unsigned seed) {
  s.require_same(x);
  const double fx = f(x);
  if (!std::isfinite(fx)) throw usage_error("local slope needs a point of the domain");
  if (radii.empty()) throw usage_error("local slope needs at least one radius");
  // Probes must stay on the near side of kinks: shrink the ladder to a
  // quarter of the distance to the closest anchor (and the hub on trees).
  double near = infinity;
  for (const Point& a : f.anchors) {
    const double d = distance(s, x, a);
    if (d > 0) near = std::min(near, d);
  }
  if (s.kind() == SpaceKind::star_tree && x.coords[0] > 0) near = std::min(near, x.coords[0]);
  const double scale = std::min(1.0, near / (4 * radii.front()));
  std::mt19937_64 rng(seed);
  std::vector<double> hs, sup;
  for (double r0 : radii) {
    const double r = r0 * scale;
    double best = -1;
    for (const Point& y : slope_probes(f, s, x, r, rng)) {
      const double d = distance(s, x, y);
      if (d <= 0) continue;
      const double fy = f(y);
      const double q = std::isfinite(fy) ? std::max(fx - fy, 0.0) / d : 0.0;
      best = std::max(best, q);
    }
    if (best < 0) continue;
    hs.push_back(r);
    sup.push_back(best);
  }
  if (hs.empty()) throw usage_error("local slope sample set is empty");
  return std::max(0.0, richardson(hs, sup, 1));
}

double check_lambda_convexity(const Functional& f, const Space& s, int sample_triples, unsigned seed,
                              const std::optional<BallRegion>& region) {
  std::mt19937_64 rng(seed);
  double mu = infinity;
  auto draw = [&]() { return region ? s.random_in_ball(region->center, region->radius, rng) : s.random_point(rng); };
  for (int i = 0; i < sample_triples; ++i) {
    const Point x = draw(), y = draw();
    const double fx = f(x), fy = f(y);
    if (!std::isfinite(fx) || !std::isfinite(fy)) continue;
    const double d = distance(s, x, y);
    if (d < 1e-3 || d >= s.uniqueness_radius() - 1e-6) continue;
    for (int k = 1; k <= 9; ++k) {
      const double t = k / 10.0;
      const double defect = (1 - t) * fx + t * fy - f(geodesic_point(s, x, y, t));
      mu = std::min(mu, 2 * defect / ((1 - t) * t * d * d));
    }
  }
  return mu;
}

}  // namespace mmflow
