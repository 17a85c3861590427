#include "mmflow/scheme.hpp"

#include <algorithm>
#include <cmath>
#include <future>

#include <boost/math/quadrature/gauss.hpp>

namespace mmflow {

Partition::Partition(std::vector<double> times) : times_(std::move(times)) {
  if (times_.size() < 2) throw usage_error("partition needs at least one step");
  if (times_.front() != 0.0) throw usage_error("partition must start at 0");
  for (std::size_t k = 1; k < times_.size(); ++k) {
    const double tau = times_[k] - times_[k - 1];
    if (!(tau > 0)) throw usage_error("partition times must be strictly increasing");
    mesh_ = std::max(mesh_, tau);
  }
}

Partition Partition::uniform_steps(double T, std::size_t n) {
  if (!(T > 0) || n == 0) throw usage_error("uniform partition needs T > 0 and n > 0");
  std::vector<double> t(n + 1);
  for (std::size_t k = 0; k <= n; ++k) t[k] = T * static_cast<double>(k) / static_cast<double>(n);
  t[n] = T;
  return Partition(std::move(t));
}

Partition Partition::uniform(double T, double tau) {
  if (!(T > 0) || !(tau > 0)) throw usage_error("uniform partition needs T > 0 and tau > 0");
  const auto n = static_cast<std::size_t>(std::ceil(T / tau - 1e-9));
  if (std::abs(static_cast<double>(n) * tau - T) <= 1e-9 * T) return uniform_steps(T, n);
  std::vector<double> t;
  for (std::size_t k = 0; k < n; ++k) t.push_back(static_cast<double>(k) * tau);
  t.push_back(T);
  return Partition(std::move(t));
}

std::size_t Partition::locate(double t) const {
  const double T = horizon();
  if (t < -1e-14 || t > T + 1e-12 * std::max(1.0, T)) throw usage_error("time outside the partition");
  if (t <= 0) return 1;
  auto it = std::lower_bound(times_.begin(), times_.end(), t);
  std::size_t k = it == times_.end() ? steps() : static_cast<std::size_t>(it - times_.begin());
  return std::clamp<std::size_t>(k, 1, steps());
}

bool Partition::is_node(double t, double eps) const {
  auto it = std::lower_bound(times_.begin(), times_.end(), t - eps);
  return it != times_.end() && std::abs(*it - t) <= eps;
}

Partition Partition::refine() const {
  std::vector<double> t;
  t.reserve(2 * times_.size());
  for (std::size_t k = 1; k < times_.size(); ++k) {
    t.push_back(times_[k - 1]);
    t.push_back(0.5 * (times_[k - 1] + times_[k]));
  }
  t.push_back(times_.back());
  return Partition(std::move(t));
}

DiscreteSolution run_scheme(const Functional& f, const Space& s, const Point& x0, const Partition& p,
                            const SolverOptions& opt) {
  s.require_same(x0);
  const double phi0 = f(x0);
  if (!std::isfinite(phi0)) throw usage_error("initial point outside the domain");
  if (p.mesh() >= f.tau_star) throw horizon_error("mesh not below the coercivity horizon");
  DiscreteSolution sol{p, {x0}, {phi0}, {0.0}};
  sol.points.reserve(p.steps() + 1);
  for (std::size_t k = 1; k <= p.steps(); ++k) {
    ProxResult r;
    try {
      r = prox(f, s, sol.points.back(), p.step(k), opt);
    } catch (const std::exception& e) {
      throw step_error(k, e.what());
    }
    sol.energies.push_back(f(r.minimizer));
    sol.displacements.push_back(r.displacement);
    sol.points.push_back(std::move(r.minimizer));
  }
  return sol;
}

InvariantReport check_invariants(const DiscreteSolution& sol, double tol) {
  InvariantReport rep;
  rep.energy_slack = infinity;
  rep.step_slack = infinity;
  for (std::size_t k = 1; k <= sol.steps(); ++k) {
    const double drop = sol.energies[k - 1] - sol.energies[k];
    const double step = 2 * sol.partition.step(k) * drop - sol.displacements[k] * sol.displacements[k];
    if (drop < rep.energy_slack || step < rep.step_slack) rep.worst_step = k;
    rep.energy_slack = std::min(rep.energy_slack, drop);
    rep.step_slack = std::min(rep.step_slack, step);
  }
  rep.pass = rep.energy_slack >= -tol && rep.step_slack >= -tol;
  return rep;
}

AprioriAccumulator::AprioriAccumulator(const Space& s, Point x_star, const Point& x0, double phi0)
    : s_(&s), x_star_(std::move(x_star)), x0_(x0), phi0_(phi0) {}

void AprioriAccumulator::add(double tau, const Point& xk, double phik, double dk) {
  ++k_;
  t_ += tau;
  sum_d_ += dk;
  sum_d2_over_tau_ += dk * dk / tau;
  const double drop = phi0_ - phik;
  C_ = std::max({C_, distance_sq(*s_, xk, x_star_), drop});
  const double summed = drop - 0.5 * sum_d2_over_tau_;
  const double a = distance_sq(*s_, x0_, xk);
  const double b = sum_d_ * sum_d_;
  const double c = sum_d2_over_tau_ * t_;
  const double e = 2 * C_ * t_;
  const double link = std::min({b - a, c - b, e - c, 2 * C_ * tau - dk * dk}) / std::max(1.0, e);
  if (summed < summed_ || link < chain_) worst_ = k_;
  summed_ = std::min(summed_, summed);
  chain_ = std::min(chain_, link);
}

AprioriBounds AprioriAccumulator::finish(double T, double slack) const {
  if (t_ > T * (1 + 1e-12)) throw usage_error("discrete solution runs past T");
  AprioriBounds out;
  out.x_star = x_star_;
  out.Q = std::max(phi0_, distance_sq(*s_, x0_, x_star_));
  out.T = T;
  out.C = C_;
  out.summed_slack = summed_;
  out.chain_slack = chain_;
  if (s_->kind() == SpaceKind::sphere && C_ > 0) out.smallness_tau = pi * pi / (2 * C_);
  out.worst_step = worst_;
  out.pass = summed_ >= -slack * std::max(1.0, C_) && chain_ >= -slack;
  return out;
}

AprioriBounds apriori_check(const DiscreteSolution& sol, const Space& s, const Point& x_star, double T,
                            double slack) {
  AprioriAccumulator acc(s, x_star, sol.x0(), sol.energies[0]);
  for (std::size_t k = 1; k <= sol.steps(); ++k)
    acc.add(sol.partition.step(k), sol.points[k], sol.energies[k], sol.displacements[k]);
  return acc.finish(T, slack);
}

std::optional<double> k_for_radius(const Space& s, double R) {
  if (s.kind() != SpaceKind::sphere) return 2.0;
  R = R * (1 + 1e-12) + 1e-12;
  if (R >= pi - 1e-9) return std::nullopt;
  return convexity_constant(s, R);
}

namespace {

double step_fraction(const Partition& p, std::size_t k, double t) {
  return std::clamp((t - p.time(k - 1)) / p.step(k), 0.0, 1.0);
}

double residual_at(const DiscreteSolution& sol, std::size_t k, double t, double K) {
  const Partition& p = sol.partition;
  return ((p.time(k) - t) / p.step(k) + std::max(0.0, -K) / 2) * (sol.energies[k - 1] - sol.energies[k]);
}

double deviation_at(const DiscreteSolution& sol, std::size_t k, double t) {
  const Partition& p = sol.partition;
  return (p.time(k) - t) / p.step(k) * sol.displacements[k];
}

}  // namespace

std::optional<double> admissible_k(const Space& s, const DiscreteSolution& sol, const std::vector<Point>& ys) {
  if (s.kind() != SpaceKind::sphere) return 2.0;
  double R = 0;
  for (std::size_t k = 1; k <= sol.steps(); ++k)
    for (const Point& y : ys) R = std::max(R, distance(s, sol.points[k], y) + sol.displacements[k]);
  return k_for_radius(s, R);
}

InterpolantBundle::InterpolantBundle(const DiscreteSolution& sol, const Space& s, Point y, double K)
    : sol_(&sol), y_(std::move(y)), K_(K) {
  d2_.reserve(sol.points.size());
  for (const Point& x : sol.points) d2_.push_back(distance_sq(s, x, y_));
}

std::size_t InterpolantBundle::at(double t) const { return sol_->partition.locate(t); }

const Point& InterpolantBundle::xbar(double t) const {
  const std::size_t k = at(t);
  return t <= 0 ? sol_->points[0] : sol_->points[k];
}

double InterpolantBundle::dbar2(double t) const {
  const std::size_t k = at(t);
  const double a = step_fraction(sol_->partition, k, t);
  return d2_[k - 1] + a * (d2_[k] - d2_[k - 1]);
}

double InterpolantBundle::dbar(double t) const { return std::sqrt(std::max(0.0, dbar2(t))); }

double InterpolantBundle::dbar2_rate(double t) const {
  const std::size_t k = at(t);
  return (d2_[k] - d2_[k - 1]) / sol_->partition.step(k);
}

double InterpolantBundle::phibar(double t) const {
  const std::size_t k = at(t);
  const double a = step_fraction(sol_->partition, k, t);
  return sol_->energies[k - 1] + a * (sol_->energies[k] - sol_->energies[k - 1]);
}

double InterpolantBundle::residual(double t) const { return residual_at(*sol_, at(t), t, K_); }

double InterpolantBundle::deviation(double t) const { return deviation_at(*sol_, at(t), t); }

double InterpolantBundle::residual_integral(std::size_t k) const {
  const double Kp = std::min(0.0, K_);
  return (0.5 - Kp / 2) * sol_->partition.step(k) * (sol_->energies[k - 1] - sol_->energies[k]);
}

double InterpolantBundle::deviation_sq_integral(std::size_t k) const {
  const double d = sol_->displacements[k];
  return sol_->partition.step(k) * d * d / 3;
}

double InterpolantBundle::deviation_sq_bound(std::size_t k) const {
  const double tau = sol_->partition.step(k);
  return tau / 3 * 2 * tau * (sol_->energies[k - 1] - sol_->energies[k]);
}

std::optional<double> discrete_evi_residual(const DiscreteSolution& sol, const Space& s, const Functional& f,
                                            const Point& y, double t) {
  const Partition& p = sol.partition;
  if (t <= 0 || t >= p.horizon() || p.is_node(t)) return std::nullopt;
  const double phiy = f(y);
  if (!std::isfinite(phiy)) return std::nullopt;
  const std::size_t k = p.locate(t);
  const double d2k = distance_sq(s, sol.points[k], y);
  const auto K = k_for_radius(s, std::sqrt(d2k) + sol.displacements[k]);
  if (!K) return std::nullopt;
  const double rate = (d2k - distance_sq(s, sol.points[k - 1], y)) / p.step(k);
  const double a = step_fraction(p, k, t);
  const double phibar = sol.energies[k - 1] + a * (sol.energies[k] - sol.energies[k - 1]);
  const double lhs = 0.5 * rate + 0.5 * f.lambda * d2k + phibar - phiy;
  return lhs - residual_at(sol, k, t, *K);
}

double dbar_pair2(const DiscreteSolution& a, const DiscreteSolution& b, const Space& s, double t, double u) {
  const std::size_t k = a.partition.locate(t), l = b.partition.locate(u);
  const double al = step_fraction(a.partition, k, t), be = step_fraction(b.partition, l, u);
  return (1 - al) * (1 - be) * distance_sq(s, a.points[k - 1], b.points[l - 1]) +
         al * (1 - be) * distance_sq(s, a.points[k], b.points[l - 1]) +
         (1 - al) * be * distance_sq(s, a.points[k - 1], b.points[l]) +
         al * be * distance_sq(s, a.points[k], b.points[l]);
}

ComparisonReport compare_solutions(const DiscreteSolution& a, const DiscreteSolution& b, const Space& s,
                                   const Functional& f) {
  ComparisonReport rep;
  rep.lambda_clamped = f.lambda > 0;
  const double lam = std::min(f.lambda, 0.0);
  rep.lambda_used = lam;
  if (s.kind() == SpaceKind::sphere) {
    double R = 0;
    for (std::size_t k = 0; k <= a.steps(); ++k)
      for (std::size_t l = 0; l <= b.steps(); ++l)
        R = std::max(R, distance(s, a.points[k], b.points[l]));
    double dmax = 0;
    for (double d : a.displacements) dmax = std::max(dmax, d);
    for (double d : b.displacements) dmax = std::max(dmax, d);
    const auto K = k_for_radius(s, R + dmax);
    if (!K) throw geometry_error("no admissible convexity radius for the two solutions");
    rep.K = *K;
  }
  const double T = std::min(a.partition.horizon(), b.partition.horizon());
  std::vector<double> grid;
  for (double t : a.partition.times()) if (t <= T) grid.push_back(t);
  for (double t : b.partition.times()) if (t <= T) grid.push_back(t);
  std::sort(grid.begin(), grid.end());
  std::vector<double> merged{grid.front()};
  for (double t : grid) if (t - merged.back() > 1e-12 * std::max(1.0, T)) merged.push_back(t);

  const double d00 = distance_sq(s, a.x0(), b.x0());
  double I1 = 0, I2 = 0;
  using GL = boost::math::quadrature::gauss<double, 7>;
  for (std::size_t i = 1; i < merged.size(); ++i) {
    const double u0 = merged[i - 1], u1 = merged[i];
    const double mid = 0.5 * (u0 + u1);
    const std::size_t k = a.partition.locate(mid), l = b.partition.locate(mid);
    I1 += GL::integrate(
        [&](double t) {
          const double Da = deviation_at(a, k, t), Db = deviation_at(b, l, t);
          return std::exp(2 * lam * t) *
                 (2 * (residual_at(a, k, t, rep.K) + residual_at(b, l, t, rep.K)) - lam * (Da * Da + Db * Db));
        },
        u0, u1);
    I2 += GL::integrate(
        [&](double t) { return std::exp(lam * t) * (deviation_at(a, k, t) + deviation_at(b, l, t)); }, u0, u1);
    const double bound = std::exp(-lam * u1) * (std::sqrt(d00 + I1) - 2 * lam * I2);
    const double gap = std::sqrt(std::max(0.0, dbar_pair2(a, b, s, u1, u1)));
    rep.times.push_back(u1);
    rep.gap.push_back(gap);
    rep.bound.push_back(bound);
    rep.sup_bound = std::max(rep.sup_bound, bound);
    rep.worst_slack = std::min(rep.worst_slack, bound - gap);
    if (bound - gap < -1e-9 * (1 + bound)) rep.pass = false;
  }
  return rep;
}

Point FlowCurve::at(const Space& s, double t) const {
  if (t < -1e-12 || t > horizon() + 1e-9) throw usage_error("time outside the flow horizon");
  if (t <= times.front()) return points.front();
  if (t >= times.back()) return points.back();
  auto it = std::upper_bound(times.begin(), times.end(), t);
  const std::size_t i = static_cast<std::size_t>(it - times.begin()) - 1;
  const double frac = (t - times[i]) / (times[i + 1] - times[i]);
  if (frac <= 1e-12) return points[i];
  if (frac >= 1 - 1e-12) return points[i + 1];
  return geodesic_point(s, points[i], points[i + 1], frac);
}

std::size_t FlowCurve::index_of(double t, double eps) const {
  auto it = std::lower_bound(times.begin(), times.end(), t - eps);
  if (it == times.end() || std::abs(*it - t) > eps) throw usage_error("time is not a flow grid time");
  return static_cast<std::size_t>(it - times.begin());
}

SampledRun run_sampled(const Functional& f, const Space& s, const Point& x0, double T, std::size_t steps,
                       std::size_t stride, const SolverOptions& opt) {
  if (steps == 0 || stride == 0 || steps % stride != 0) throw usage_error("stride must divide the step count");
  s.require_same(x0);
  const double phi0 = f(x0);
  if (!std::isfinite(phi0)) throw usage_error("initial point outside the domain");
  if (T / static_cast<double>(steps) >= f.tau_star) throw horizon_error("mesh not below the coercivity horizon");
  SampledRun run;
  run.times.push_back(0);
  run.points.push_back(x0);
  run.energies.push_back(phi0);
  AprioriAccumulator acc(s, x0, x0, phi0);
  InvariantReport& inv = run.invariants;
  inv.energy_slack = infinity;
  inv.step_slack = infinity;
  Point x = x0;
  double phi = phi0, t_prev = 0;
  for (std::size_t k = 1; k <= steps; ++k) {
    const double t = k == steps ? T : T * static_cast<double>(k) / static_cast<double>(steps);
    const double tau = t - t_prev;
    ProxResult r;
    try {
      r = prox(f, s, x, tau, opt);
    } catch (const std::exception& e) {
      throw step_error(k, e.what());
    }
    const double phik = f(r.minimizer);
    const double drop = phi - phik;
    const double step = 2 * tau * drop - r.displacement * r.displacement;
    if (drop < inv.energy_slack || step < inv.step_slack) inv.worst_step = k;
    inv.energy_slack = std::min(inv.energy_slack, drop);
    inv.step_slack = std::min(inv.step_slack, step);
    acc.add(tau, r.minimizer, phik, r.displacement);
    x = std::move(r.minimizer);
    phi = phik;
    t_prev = t;
    if (k % stride == 0) {
      run.times.push_back(t);
      run.points.push_back(x);
      run.energies.push_back(phi);
    }
  }
  inv.pass = inv.energy_slack >= -1e-9 && inv.step_slack >= -1e-9;
  run.apriori = acc.finish(T);
  return run;
}

double cauchy_estimate(const std::vector<double>& gaps) {
  if (gaps.empty()) return infinity;
  const double last = gaps.back();
  if (last == 0 || gaps.size() == 1) return last;
  const double prev = gaps[gaps.size() - 2];
  const double r = prev > 0 ? std::min(0.9, last / prev) : 0.9;
  return last * std::max(1.0, r / (1 - r));
}

std::vector<double> central_speeds(const Space& s, const std::vector<double>& t, const std::vector<Point>& x) {
  const std::size_t n = x.size();
  std::vector<double> v(n, 0.0);
  if (n < 2) return v;
  v[0] = distance(s, x[0], x[1]) / (t[1] - t[0]);
  v[n - 1] = distance(s, x[n - 2], x[n - 1]) / (t[n - 1] - t[n - 2]);
  for (std::size_t i = 1; i + 1 < n; ++i) v[i] = distance(s, x[i - 1], x[i + 1]) / (t[i + 1] - t[i - 1]);
  return v;
}

FlowCurve converge_flow(const Functional& f, const Space& s, const Point& x0, double T,
                        const std::vector<double>& meshes, std::size_t output_points) {
  if (meshes.empty()) throw usage_error("empty mesh sequence");
  std::vector<std::size_t> n;
  for (std::size_t j = 0; j < meshes.size(); ++j) {
    if (!(meshes[j] > 0) || (j > 0 && !(meshes[j] < meshes[j - 1])))
      throw usage_error("meshes must be positive and strictly decreasing");
    n.push_back(static_cast<std::size_t>(std::ceil(T / meshes[j] - 1e-9)));
  }
  const std::size_t M = output_points ? output_points : n.front();
  for (std::size_t nj : n)
    if (nj % M != 0) throw usage_error("every mesh must refine the output grid");
  std::vector<std::future<SampledRun>> jobs;
  for (std::size_t nj : n)
    jobs.push_back(std::async(std::launch::async, [&, nj] { return run_sampled(f, s, x0, T, nj, nj / M); }));
  std::vector<SampledRun> runs;
  for (auto& j : jobs) runs.push_back(j.get());

  FlowCurve fc;
  for (std::size_t j = 0; j < runs.size(); ++j) {
    fc.meshes.push_back(T / static_cast<double>(n[j]));
    if (j == 0) continue;
    double g = 0;
    for (std::size_t i = 0; i < runs[j].points.size(); ++i)
      g = std::max(g, distance(s, runs[j].points[i], runs[j - 1].points[i]));
    if (!fc.gaps.empty() && g > fc.gaps.back() * 1.05 + 1e-13) fc.cauchy = false;
    fc.gaps.push_back(g);
  }
  SampledRun& fine = runs.back();
  fc.times = std::move(fine.times);
  fc.points = std::move(fine.points);
  fc.energies = std::move(fine.energies);
  fc.speeds = central_speeds(s, fc.times, fc.points);
  fc.apriori = fine.apriori;
  fc.cauchy_gap = cauchy_estimate(fc.gaps);
  fc.converged = fc.cauchy && !fc.gaps.empty();
  return fc;
}

ErrorBoundReport error_bound_check(const DiscreteSolution& sol, const Space& s, const Functional& f,
                                   const FlowCurve& flow, double a) {
  ErrorBoundReport rep;
  rep.lambda_clamped = f.lambda > 0;
  const double lam = std::min(f.lambda, 0.0);
  rep.lambda_used = lam;
  const Partition& p = sol.partition;
  std::vector<std::size_t> ks;
  std::vector<Point> xi;
  for (std::size_t k = 1; k <= sol.steps(); ++k) {
    if (p.time(k) > flow.horizon() + 1e-9) break;
    ks.push_back(k);
    xi.push_back(flow.at(s, p.time(k)));
  }
  const auto K = admissible_k(s, sol, xi);
  if (!K) throw geometry_error("no admissible convexity radius for the error estimate");
  rep.K = *K;
  const double Kp = std::min(0.0, *K);
  const double mesh = p.mesh();
  const double c = std::sqrt(1 - Kp - 2 * lam / 3 * mesh) + std::sqrt(-4 * lam / 3 * mesh);
  double vmax = 0;
  for (double v : flow.speeds) vmax = std::max(vmax, v);
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const double t = p.time(ks[i]);
    bool node = true;
    try {
      flow.index_of(t);
    } catch (const usage_error&) {
      node = false;
    }
    double h = 0;
    if (!node) {
      auto it = std::upper_bound(flow.times.begin(), flow.times.end(), t);
      h = *it - *(it - 1);
    }
    const double g = flow.cauchy_gap + (node ? 0.0 : vmax * h);
    const double rhs = std::exp(-2 * lam * t) * c * c * mesh * (sol.energies[0] - sol.energies[ks[i]]);
    const double d = distance(s, sol.points[ks[i]], xi[i]);
    const double slack = std::sqrt(std::max(0.0, rhs)) - std::max(0.0, d - a * g);
    if (slack < rep.worst_slack) {
      rep.worst_slack = slack;
      rep.worst_time = t;
    }
  }
  rep.pass = rep.worst_slack >= -1e-12;
  return rep;
}

double sup_error(const DiscreteSolution& sol, const Space& s, const std::function<Point(double)>& oracle) {
  double e = distance(s, sol.x0(), oracle(0));
  const Partition& p = sol.partition;
  for (std::size_t k = 1; k <= sol.steps(); ++k)
    for (int j = 0; j <= 4; ++j)
      e = std::max(e, distance(s, sol.points[k], oracle(p.time(k - 1) + j * p.step(k) / 4)));
  return e;
}

double fit_order(const std::vector<double>& meshes, const std::vector<double>& errors) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t i = 0; i < meshes.size() && i < errors.size(); ++i) {
    if (!(errors[i] > 0) || !(meshes[i] > 0)) continue;
    const double x = std::log(meshes[i]), y = std::log(errors[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  if (n < 2) return 0;
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

ConvergenceTable convergence_study(const Functional& f, const Space& s, const Point& x0, double T,
                                   const std::vector<double>& meshes,
                                   const std::function<Point(double)>& oracle) {
  ConvergenceTable tab;
  for (double m : meshes) {
    const DiscreteSolution sol = run_scheme(f, s, x0, Partition::uniform(T, m));
    tab.meshes.push_back(sol.partition.mesh());
    tab.sup_errors.push_back(sup_error(sol, s, oracle));
    const std::size_t n = tab.sup_errors.size();
    if (n > 1 && !(tab.sup_errors[n - 1] < tab.sup_errors[n - 2])) tab.monotone = false;
  }
  tab.order = fit_order(tab.meshes, tab.sup_errors);
  return tab;
}

std::optional<KeyEstimate> key_estimate_residual(const Functional& f, const Space& s, const Point& x, double tau,
                                                 const Point& y) {
  const double phix = f(x), phiy = f(y);
  if (!std::isfinite(phix) || !std::isfinite(phiy)) return std::nullopt;
  if (tau >= f.tau_star / 8) return std::nullopt;
  const ProxResult r = prox(f, s, x, tau);
  const Point& xt = r.minimizer;
  const double dxx = distance(s, x, xt);
  const double phit = f(xt);
  KeyEstimate out;
  out.R = distance(s, xt, y) + dxx;
  if (s.kind() == SpaceKind::sphere) {
    const double C = std::max(dxx * dxx, phix - phit);
    if (C > 0 && tau >= pi * pi / (2 * C)) return std::nullopt;
    const auto K = k_for_radius(s, out.R);
    if (!K) return std::nullopt;
    out.K = *K;
  }
  const double lhs = distance_sq(s, xt, y);
  const double base = distance_sq(s, x, y) - f.lambda * tau * lhs + 2 * tau * (phiy - phit);
  out.residual = lhs - (base - out.K / 2 * dxx * dxx);
  out.residual_weak = lhs - (base + std::max(0.0, -out.K) * tau * (phix - phit));
  return out;
}

}  // namespace mmflow
