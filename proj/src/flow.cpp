#include "mmflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <random>

namespace mmflow {

namespace {

std::size_t default_output_points(double T) {
  return std::max<std::size_t>(16, static_cast<std::size_t>(std::ceil(64 * T - 1e-9)));
}

double max_gap(const Space& s, const std::vector<Point>& a, const std::vector<Point>& b) {
  double g = 0;
  for (std::size_t i = 0; i < a.size(); ++i) g = std::max(g, distance(s, a[i], b[i]));
  return g;
}

// Trapezoid rule over v on [t[i0], t[i1]].
double trapezoid(const std::vector<double>& t, const std::vector<double>& v, std::size_t i0, std::size_t i1) {
  double I = 0;
  for (std::size_t i = i0; i < i1; ++i) I += 0.5 * (t[i + 1] - t[i]) * (v[i] + v[i + 1]);
  return I;
}

// Same rule on every other node, with a single trailing cell when the count is odd.
double trapezoid_coarse(const std::vector<double>& t, const std::vector<double>& v, std::size_t i0,
                        std::size_t i1) {
  double I = 0;
  std::size_t i = i0;
  for (; i + 2 <= i1; i += 2) I += 0.5 * (t[i + 2] - t[i]) * (v[i] + v[i + 2]);
  if (i < i1) I += 0.5 * (t[i1] - t[i]) * (v[i] + v[i1]);
  return I;
}

// (1 - e^{-lambda T}) / lambda, T at lambda = 0.
double relaxed_time(double lambda, double T) {
  return std::abs(lambda * T) < 1e-12 ? T : -std::expm1(-lambda * T) / lambda;
}

double max_of(const std::vector<double>& v, std::size_t i0, std::size_t i1) {
  double m = 0;
  for (std::size_t i = i0; i <= i1 && i < v.size(); ++i) m = std::max(m, v[i]);
  return m;
}

}  // namespace

FlowCurve flow(const Functional& f, const Space& s, const Point& x0, double T, double tolerance,
               const FlowOptions& opt) {
  if (!(T > 0)) throw usage_error("flow horizon must be positive");
  if (!(tolerance > 0)) throw usage_error("flow tolerance must be positive");
  const std::size_t M = opt.output_points ? opt.output_points : default_output_points(T);
  std::size_t N = M;
  while (T / static_cast<double>(N) >= f.tau_star / 8) {
    N *= 2;
    if (N > opt.max_steps) throw horizon_error("no mesh on the ladder is below tau_*/8");
  }
  FlowCurve fc;
  SampledRun prev = run_sampled(f, s, x0, T, N, N / M);
  fc.meshes.push_back(T / static_cast<double>(N));
  std::size_t levels = 1;
  while (2 * N <= opt.max_steps) {
    N *= 2;
    SampledRun cur = run_sampled(f, s, x0, T, N, N / M);
    const double g = max_gap(s, cur.points, prev.points);
    if (!fc.gaps.empty() && g > fc.gaps.back() * 1.05 + 1e-13) fc.cauchy = false;
    fc.gaps.push_back(g);
    fc.meshes.push_back(T / static_cast<double>(N));
    prev = std::move(cur);
    ++levels;
    if (levels >= opt.min_levels && cauchy_estimate(fc.gaps) <= tolerance) {
      fc.converged = fc.cauchy;
      break;
    }
  }
  fc.times = std::move(prev.times);
  fc.points = std::move(prev.points);
  fc.energies = std::move(prev.energies);
  fc.speeds = central_speeds(s, fc.times, fc.points);
  fc.apriori = prev.apriori;
  fc.cauchy_gap = cauchy_estimate(fc.gaps);
  return fc;
}

SemigroupReport semigroup_check(const Functional& f, const Space& s, const Point& x0, double T, double tolerance,
                                int grid, Budget budget) {
  if (grid < 1) throw usage_error("semigroup grid must be positive");
  const std::size_t cells = 2 * static_cast<std::size_t>(grid);
  FlowOptions opt;
  opt.output_points = cells * ((default_output_points(T) + cells - 1) / cells);
  const std::size_t M = opt.output_points, step = M / cells;
  const FlowCurve base = flow(f, s, x0, T, tolerance, opt);
  const double dt = T / static_cast<double>(cells);

  std::vector<std::future<FlowCurve>> jobs;
  for (int i = 1; i <= grid; ++i) {
    const std::size_t idx = static_cast<std::size_t>(i) * step;
    jobs.push_back(std::async(std::launch::async, [&, idx] {
      FlowOptions o;
      o.output_points = M - idx;
      return flow(f, s, base.points[idx], T - base.times[idx], tolerance, o);
    }));
  }
  SemigroupReport rep;
  for (int j = 1; j <= grid; ++j) rep.t_values.push_back(j * dt);
  for (int i = 1; i <= grid; ++i) {
    const FlowCurve sub = jobs[static_cast<std::size_t>(i - 1)].get();
    const std::size_t si = static_cast<std::size_t>(i) * step;
    rep.s_values.push_back(base.times[si]);
    for (int j = 1; j <= grid; ++j) {
      const std::size_t tj = static_cast<std::size_t>(j) * step;
      const double gap = distance(s, sub.points[tj], base.points[si + tj]);
      const double t = sub.times[tj];
      const double spread = std::exp(-std::min(f.lambda, 0.0) * t);
      const double tol = budget.a * (base.cauchy_gap * (1 + spread) + sub.cauchy_gap) + 1e-12;
      rep.gaps.push_back(gap);
      rep.tols.push_back(tol);
      rep.worst_excess = std::max(rep.worst_excess, gap - tol);
      if (gap > tol) rep.pass = false;
    }
  }
  return rep;
}

ContractionReport contraction_check(const Functional& f, const Space& s, const Point& x0, const Point& y0, double T,
                                    double tolerance, std::optional<double> lambda, Budget budget) {
  ContractionReport rep;
  rep.x0 = x0;
  rep.y0 = y0;
  rep.lambda_used = lambda.value_or(f.lambda);
  rep.lambda_overridden = lambda.has_value();
  auto fy = std::async(std::launch::async, [&] { return flow(f, s, y0, T, tolerance); });
  const FlowCurve xi = flow(f, s, x0, T, tolerance);
  const FlowCurve zeta = fy.get();
  rep.gap_x = xi.cauchy_gap;
  rep.gap_y = zeta.cauchy_gap;
  const double d0 = distance(s, x0, y0);
  for (std::size_t i = 0; i < xi.times.size(); ++i) {
    const double t = xi.times[i];
    rep.times.push_back(t);
    if (d0 == 0) {
      // Identical starts: report zero gap.
      rep.ratio.push_back(0.0);
      rep.tol.push_back(0.0);
      continue;
    }
    const double scale = std::exp(-rep.lambda_used * t) * d0;
    const double r = distance(s, xi.points[i], zeta.points[i]) / scale;
    const double tol = budget.a * (rep.gap_x + rep.gap_y) / scale;
    rep.ratio.push_back(r);
    rep.tol.push_back(tol);
    if (r > rep.max_ratio) {
      rep.max_ratio = r;
      rep.worst_time = t;
    }
    if (r > 1 + tol) rep.pass = false;
  }
  return rep;
}

DiscreteContractionReport discrete_contraction_check(const Functional& f, const Space& s, const Point& x0,
                                                     const Point& y0, const Partition& p) {
  const double lam = f.lambda, tau = p.mesh();
  if (lam * tau <= -1) throw usage_error("lambda |tau| must exceed -1");
  if (!(tau < f.tau_star / 8)) throw horizon_error("mesh must be below tau_*/8");
  auto fy = std::async(std::launch::async, [&] { return run_scheme(f, s, y0, p); });
  const DiscreteSolution a = run_scheme(f, s, x0, p);
  const DiscreteSolution b = fy.get();

  DiscreteContractionReport rep;
  rep.lambda_tau = lam == 0 ? 0.0 : std::log1p(lam * tau) / tau;
  rep.lambda_minus = std::min(0.0, rep.lambda_tau);
  rep.lambda_plus = std::max(0.0, rep.lambda_tau);
  if (rep.lambda_tau > lam + 1e-15 * (1 + std::abs(lam))) rep.lamtau_ok = false;
  for (std::size_t k = 1; k <= p.steps(); ++k) {
    const double tk = p.step(k);
    const double lk = lam == 0 ? 0.0 : std::log1p(lam * tk) / tk;
    if (lk < rep.lambda_tau - 1e-12 * (1 + std::abs(lam))) rep.lamtau_ok = false;
  }

  const double d00 = distance_sq(s, x0, y0);
  std::vector<double> Kp(p.steps() + 1, 0.0);
  for (std::size_t k = 1; k <= p.steps(); ++k) {
    const double tk = p.step(k);
    const Point &xp = a.points[k - 1], &xk = a.points[k], &yp = b.points[k - 1], &yk = b.points[k];
    const auto K1 = k_for_radius(s, distance(s, xk, yp) + a.displacements[k]);
    const auto K2 = k_for_radius(s, distance(s, yk, xk) + b.displacements[k]);
    if (!K1 || !K2) {
      ++rep.skipped_steps;
      continue;
    }
    const double K = std::min({0.0, *K1, *K2});
    Kp[k] = K;
    rep.K_prime = std::min(rep.K_prime, K);
    const double dx = a.energies[k - 1] - a.energies[k], dy = b.energies[k - 1] - b.energies[k];
    const double lhs = (1 + lam * tk) * distance_sq(s, xk, yk);
    const double rhs = distance_sq(s, xp, yp) - lam * tk * distance_sq(s, xk, yp) + 2 * tk * dy - K * tk * (dx + dy);
    const double res = lhs - rhs;
    if (res > rep.worst_step_residual) {
      rep.worst_step_residual = res;
      rep.worst_step = k;
    }
    if (res > 1e-8 * (1 + distance_sq(s, xp, yp))) rep.pass = false;
  }

  // Summed form: only the excess over sqrt(|tau|) is recorded.
  for (std::size_t k = 1; k <= p.steps(); ++k) {
    const double t = p.time(k);
    const double lhs = std::exp(2 * (rep.lambda_tau * t + rep.lambda_minus * tau)) * distance_sq(s, a.points[k], b.points[k]);
    const double w = std::exp(2 * rep.lambda_plus * t) * tau;
    const double dy = b.energies[0] - b.energies[k], dx = a.energies[0] - a.energies[k];
    const double rhs = d00 + 2 * w * dy - rep.K_prime * w * (dx + dy);
    rep.fitted_c = std::max(rep.fitted_c, std::max(0.0, lhs - rhs) / std::sqrt(tau));
  }
  if (!rep.lamtau_ok) rep.pass = false;
  return rep;
}

std::vector<double> default_eps() {
  std::vector<double> e;
  for (int j = 0; j <= 5; ++j) e.push_back(1e-2 * std::ldexp(1.0, -j));
  return e;
}

EviReport evi_check(const FlowCurve& curve, const Functional& f, const Space& s, const Point& y,
                    const std::vector<double>& times, const std::vector<double>& eps, std::size_t substeps) {
  if (eps.size() < 2) throw usage_error("EVI needs at least two eps values");
  EviReport rep;
  const double phiy = f(y);
  for (double t : times) {
    std::size_t idx = 0;
    try {
      idx = curve.index_of(t);
    } catch (const usage_error&) {
      ++rep.skipped;
      continue;
    }
    const Point& x = curve.points[idx];
    const double d2 = distance_sq(s, x, y);
    if (!std::isfinite(phiy) || idx == 0 ||
        (s.kind() == SpaceKind::sphere && std::sqrt(d2) >= pi - 1e-6)) {
      ++rep.skipped;
      continue;
    }
    std::vector<double> q;
    for (double e : eps) {
      const SampledRun r = run_sampled(f, s, x, e, substeps, substeps);
      q.push_back((distance_sq(s, r.points.back(), y) - d2) / (2 * e));
    }
    const std::size_t n = q.size();
    const double e1 = eps[n - 1], e0 = eps[n - 2];
    const double q0 = q[n - 1] - e1 * (q[n - 2] - q[n - 1]) / (e0 - e1);
    const double phix = curve.energies[idx];
    const double res = q0 + f.lambda / 2 * d2 + phix - phiy;
    const double tol = 3 * std::abs(q0 - q[n - 1]) + 1e-10 * (1 + std::abs(phix) + std::abs(phiy) + d2);
    rep.times.push_back(t);
    rep.residuals.push_back(res);
    rep.tols.push_back(tol);
    rep.worst_excess = std::max(rep.worst_excess, res - tol);
    if (res > tol) rep.pass = false;
  }
  return rep;
}

IntegratedEviReport integrated_evi_check(const FlowCurve& curve, const Functional& f, const Space& s, const Point& y,
                                         double T, Budget budget) {
  const std::size_t iT = curve.index_of(T);
  const double lam = f.lambda, phiy = f(y);
  if (!std::isfinite(phiy)) throw usage_error("test point outside the domain");
  std::vector<double> v(iT + 1);
  for (std::size_t i = 0; i <= iT; ++i) v[i] = std::exp(lam * curve.times[i]) * (phiy - curve.energies[i]);
  const double I = trapezoid(curve.times, v, 0, iT), I2 = trapezoid_coarse(curve.times, v, 0, iT);
  const double decay = std::exp(-lam * T);
  const double dT = distance(s, curve.points[iT], y);
  const double d0 = distance_sq(s, curve.points[0], y);
  const double g = curve.cauchy_gap, vmax = max_of(curve.speeds, 0, iT);
  const double cl = relaxed_time(lam, T);

  IntegratedEviReport rep;
  rep.lhs = dT * dT;
  rep.quadrature = 2 * decay * std::abs(I - I2);
  rep.rhs = decay * d0 + 2 * decay * I;
  const double flow_part = 2 * dT * g + g * g + 2 * vmax * g * cl;
  rep.tol = budget.a * flow_part + budget.b * rep.quadrature + 1e-12 * (1 + d0);
  rep.rhs2 = decay * d0 - 2 * cl * (curve.energies[iT] - phiy);
  rep.tol2 = budget.a * flow_part + 1e-12 * (1 + d0);
  rep.pass = rep.lhs <= rep.rhs + rep.tol && rep.lhs <= rep.rhs2 + rep.tol2;
  return rep;
}

namespace {

struct DissipationInput {
  const std::vector<double>* times;
  const std::vector<Point>* points;
  const std::vector<double>* energies;
};

// Residual of the identity on [t[i0], t[i1]] and the spread between the fine
// and coarse (every other node) evaluations of the integral.
std::pair<DissipationReport, double> dissipation_core(const DissipationInput& in, const Functional& f, const Space& s,
                                                      std::size_t i0, std::size_t i1) {
  const auto& t = *in.times;
  const auto& x = *in.points;
  const std::vector<double> v = central_speeds(s, t, x);
  std::vector<double> sl(t.size(), 0.0), w(t.size(), 0.0);
  for (std::size_t i = i0; i <= i1; ++i) {
    sl[i] = local_slope(f, s, x[i]);
    w[i] = v[i] * v[i] + sl[i] * sl[i];
  }
  // Coarse integrand: speeds from the doubled spacing.
  std::vector<double> wc = w;
  const std::size_t n = t.size();
  for (std::size_t i = i0; i <= i1; i += 2) {
    const std::size_t lo = i >= 2 ? i - 2 : i, hi = std::min(i + 2, n - 1);
    const double vc = distance(s, x[lo], x[hi]) / (t[hi] - t[lo]);
    wc[i] = vc * vc + sl[i] * sl[i];
  }
  if ((i1 - i0) % 2) wc[i1] = w[i1];
  DissipationReport rep;
  rep.S = t[i0];
  rep.T = t[i1];
  rep.drop = (*in.energies)[i0] - (*in.energies)[i1];
  rep.integral = 0.5 * trapezoid(t, w, i0, i1);
  rep.residual = rep.drop - rep.integral;
  const double spread = 0.5 * std::abs(trapezoid(t, w, i0, i1) - trapezoid_coarse(t, wc, i0, i1));
  return {rep, spread};
}

}  // namespace

DissipationReport dissipation_check(const FlowCurve& curve, const Functional& f, const Space& s, double S, double T,
                                    Budget budget) {
  const std::size_t i0 = curve.index_of(S), i1 = curve.index_of(T);
  if (!(i0 < i1)) throw usage_error("dissipation needs S < T");
  auto [rep, spread] = dissipation_core({&curve.times, &curve.points, &curve.energies}, f, s, i0, i1);
  const double g = curve.cauchy_gap, vmax = max_of(curve.speeds, i0, i1);
  const double h = curve.times[1] - curve.times[0];
  const double H = std::max(1.0, std::abs(f.lambda));
  const double flow_part = 2 * vmax * g + vmax * g * (T - S) * (1 / h + H);
  rep.tol = budget.a * flow_part + budget.b * spread + 1e-12;
  rep.within = std::abs(rep.residual) <= rep.tol;
  return rep;
}

DissipationStudy dissipation_study(const Functional& f, const Space& s, const Point& x0, double S, double T,
                                   const std::vector<double>& meshes) {
  DissipationStudy st;
  std::vector<std::future<double>> jobs;
  for (double tau : meshes) {
    jobs.push_back(std::async(std::launch::async, [&, tau] {
      const DiscreteSolution sol = run_scheme(f, s, x0, Partition::uniform(T, tau));
      const auto& t = sol.partition.times();
      const std::size_t i0 = static_cast<std::size_t>(std::lround(S / tau)), i1 = sol.steps();
      if (std::abs(t[i0] - S) > 1e-9) throw usage_error("S must be a node of every mesh");
      return std::abs(dissipation_core({&t, &sol.points, &sol.energies}, f, s, i0, i1).first.residual);
    }));
  }
  for (std::size_t j = 0; j < meshes.size(); ++j) {
    st.meshes.push_back(meshes[j]);
    st.residuals.push_back(jobs[j].get());
    if (j > 0 && st.residuals[j] > st.residuals[j - 1]) st.decreasing = false;
  }
  std::vector<double> hm, rm;
  for (std::size_t j = 0; j < st.meshes.size(); ++j)
    if (st.residuals[j] > 0) {
      hm.push_back(st.meshes[j]);
      rm.push_back(st.residuals[j]);
    }
  st.order = hm.size() >= 2 ? fit_order(hm, rm) : 0.0;
  return st;
}

StationaryReport stationary_check(const Functional& f, const Space& s, const Point& x, double T, double tol,
                                  unsigned seed) {
  if (!std::isfinite(f(x))) throw usage_error("stationary check needs a point of the domain");
  StationaryReport rep;
  rep.slope = local_slope(f, s, x);
  rep.slope_zero = rep.slope <= tol;

  // A start with slope above tol moves by about tol * (1 - e^{-lambda T}) / lambda.
  const double reach = relaxed_time(f.lambda, T);
  const FlowCurve fc = flow(f, s, x, T, tol * reach / 20);
  for (const Point& p : fc.points) rep.max_move = std::max(rep.max_move, distance(s, x, p));
  rep.move_tol = 0.5 * tol * reach;
  rep.flow_fixed = rep.max_move <= rep.move_tol;

  std::mt19937_64 rng(seed);
  const double fx = f(x);
  const double r_min = 1e-4;
  for (double r : {1e-1, 1e-2, 1e-3, r_min}) {
    std::vector<Point> targets = f.anchors;
    for (int k = 0; k < 64; ++k) targets.push_back(s.random_point(rng));
    for (const Point& z : targets) {
      const double dz = distance(s, x, z);
      if (dz <= r || (s.kind() == SpaceKind::sphere && dz >= pi - 1e-6)) continue;
      const Point q = geodesic_point(s, x, z, r / dz);
      const double fq = f(q);
      if (!std::isfinite(fq)) continue;
      rep.quotient_sup = std::max(rep.quotient_sup, (fx - fq) / (r * r));
    }
  }
  rep.quotient_bounded = rep.quotient_sup <= std::max(0.0, -f.lambda / 2) + tol / r_min;
  rep.agree = rep.slope_zero == rep.flow_fixed && rep.slope_zero == rep.quotient_bounded;
  return rep;
}

SlopeDecayReport slope_decay_check(const FlowCurve& curve, const Functional& f, const Space& s, double S, double T,
                                   Budget budget) {
  const std::size_t iS = curve.index_of(S), iT = curve.index_of(T);
  if (iS > iT) throw usage_error("slope decay needs S <= T");
  SlopeDecayReport rep;
  rep.lambda_clamped = f.lambda > 0;
  rep.lambda_used = std::min(f.lambda, 0.0);
  const double lam = rep.lambda_used;
  for (std::size_t i = 0; i <= iT; ++i) {
    rep.times.push_back(curve.times[i]);
    rep.slopes.push_back(local_slope(f, s, curve.points[i]));
  }
  const double H = std::max(1.0, std::abs(f.lambda));
  const double quad = std::sqrt(2.0) * std::abs(lam) *
                      std::abs(trapezoid(rep.times, rep.slopes, iS, iT) - trapezoid_coarse(rep.times, rep.slopes, iS, iT));
  rep.tol = 1e-6 + budget.a * 2 * H * curve.cauchy_gap + budget.b * quad;
  const double phi0 = curve.energies[0];
  for (std::size_t i = 1; i <= iT; ++i) {
    const double lhs = rep.slopes[i] - rep.slopes[0];
    const double rhs = -std::sqrt(2.0) * lam * std::sqrt(curve.times[i]) * std::sqrt(std::max(0.0, phi0 - curve.energies[i]));
    rep.pointwise_worst = std::max(rep.pointwise_worst, lhs - rhs);
  }
  for (std::size_t i = iS + 1; i <= iT; ++i) {
    const double lhs = rep.slopes[i] - rep.slopes[iS];
    const double rhs = -std::sqrt(2.0) * lam * trapezoid(rep.times, rep.slopes, iS, i);
    rep.integrated_worst = std::max(rep.integrated_worst, lhs - rhs);
  }
  rep.trend_to_zero = rep.slopes.back() <= std::max(rep.tol, 1e-3 * rep.slopes.front());
  rep.pass = rep.pointwise_worst <= rep.tol && rep.integrated_worst <= rep.tol;
  return rep;
}

ChainedFlow flow_ball_chained(const Functional& f, const Space& s, const Point& x0, double T, double tolerance,
                              double radius, const FlowOptions& opt) {
  if (s.kind() != SpaceKind::sphere) throw usage_error("ball-chained flow is for spheres");
  const std::size_t M = opt.output_points ? opt.output_points : default_output_points(T);
  const double h = T / static_cast<double>(M);
  ChainedFlow out;
  FlowCurve& c = out.curve;
  c.times.push_back(0);
  c.points.push_back(x0);
  c.energies.push_back(f(x0));
  c.cauchy_gap = 0;
  c.converged = true;
  std::size_t i = 0;
  Point center = x0;
  out.centers.push_back(center);
  while (i < M) {
    FlowOptions o = opt;
    o.output_points = M - i;
    const FlowCurve leg = flow(f, s, center, T - static_cast<double>(i) * h, tolerance, o);
    out.leg_gaps.push_back(leg.cauchy_gap);
    c.cauchy_gap += leg.cauchy_gap;
    c.converged = c.converged && leg.converged;
    c.cauchy = c.cauchy && leg.cauchy;
    c.meshes = leg.meshes;
    c.gaps = leg.gaps;
    std::size_t hit = 0;
    for (std::size_t j = 1; j < leg.points.size(); ++j)
      if (distance(s, leg.points[j], center) >= radius) {
        hit = j;
        break;
      }
    const std::size_t take = hit ? hit : leg.points.size() - 1;
    double C = 0;
    for (std::size_t j = 1; j <= take; ++j) {
      c.times.push_back(j + i == M ? T : static_cast<double>(i + j) * h);
      c.points.push_back(leg.points[j]);
      c.energies.push_back(leg.energies[j]);
      C = std::max({C, distance_sq(s, leg.points[j], center), leg.energies[0] - leg.energies[j]});
    }
    if (hit && i + hit < M) {
      const double a = distance(s, leg.points[hit - 1], center), b = distance(s, leg.points[hit], center);
      const double when = leg.times[hit - 1] + (radius - a) / (b - a) * (leg.times[hit] - leg.times[hit - 1]);
      out.leg_durations.push_back(when);
      out.leg_C.push_back(C);
      const double slack = when - radius * radius / (2 * C);
      out.worst_leg_slack = std::min(out.worst_leg_slack, slack);
      if (slack < -1e-12) out.legs_ok = false;
      center = leg.points[hit];
      out.centers.push_back(center);
      out.restart_times.push_back(c.times.back());
    }
    i += take;
  }
  c.speeds = central_speeds(s, c.times, c.points);
  return out;
}

ChainAgreement compare_chained(const ChainedFlow& chained, const FlowCurve& direct, const Space& s, double lambda,
                               Budget budget) {
  if (chained.curve.times.size() != direct.times.size()) throw usage_error("chained and direct grids differ");
  ChainAgreement rep;
  rep.max_gap = max_gap(s, chained.curve.points, direct.points);
  const double spread = std::exp(std::max(0.0, -lambda) * direct.horizon());
  double legs = 0;
  for (double g : chained.leg_gaps) legs += g;
  rep.tol = budget.a * (direct.cauchy_gap + legs * spread) + 1e-12;
  rep.pass = rep.max_gap <= rep.tol;
  return rep;
}

}  // namespace mmflow
