#include "mmflow/splitting.hpp"

#include <algorithm>
#include <cmath>
#include <future>

namespace mmflow {

std::optional<double> effective_lipschitz(const Functional& f, const Space& s,
                                          const std::optional<BoundingBall>& ball) {
  if (f.lipschitz_bound) return f.lipschitz_bound;
  if (f.quadratic) {
    if (ball) return f.quadratic->weight * (ball->radius + distance(s, ball->center, f.quadratic->anchor));
    if (std::isfinite(s.diameter_bound())) return f.quadratic->weight * s.diameter_bound();
  }
  return std::nullopt;
}

SplitScheme run_split(const Functional& f1, const Functional& f2, const Space& s, const Point& z0,
                      const Partition& p, const std::optional<BoundingBall>& ball, const SolverOptions& opt) {
  s.require_same(z0);
  if (!ball && !std::isfinite(s.diameter_bound()))
    throw usage_error("splitting needs a bounded space or a bounding ball");
  if (ball) s.require_same(ball->center);
  const double a1 = f1(z0), a2 = f2(z0);
  if (!std::isfinite(a1) || !std::isfinite(a2)) throw usage_error("z0 must lie in both domains");
  auto inside = [&](const Point& z) {
    return !ball || distance(s, ball->center, z) <= ball->radius * (1 + 1e-12) + 1e-12;
  };
  if (!inside(z0)) throw usage_error("z0 lies outside the bounding ball");

  SplitScheme sc{p, {z0}, {z0}, {a1}, {a2}, {a1}, {a2}, {0.0}, {0.0}, std::nullopt, ball};
  const auto L1 = effective_lipschitz(f1, s, ball), L2 = effective_lipschitz(f2, s, ball);
  if (L1 && L2) sc.declared_budget = 2 * std::pow(std::max(*L1, *L2), 2) * p.horizon();
  auto half_step = [&](const Functional& f, const Point& from, double tau, std::size_t index) {
    ProxResult r;
    try {
      r = prox(f, s, from, tau, opt);
    } catch (const std::exception& e) {
      throw step_error(index, e.what());
    }
    if (!inside(r.minimizer)) throw step_error(index, "trajectory left the bounding ball");
    return r.minimizer;
  };
  for (std::size_t k = 1; k <= p.steps(); ++k) {
    const double tau = p.step(k);
    Point zh = half_step(f1, sc.points.back(), tau, 2 * k - 1);
    Point zk = half_step(f2, zh, tau, 2 * k);
    const double h1 = f1(zh), h2 = f2(zh), e1 = f1(zk), e2 = f2(zk);
    const double d = std::max({0.0, h2 - sc.phi2.back(), e1 - h1});
    sc.half.push_back(std::move(zh));
    sc.points.push_back(std::move(zk));
    sc.phi1_half.push_back(h1);
    sc.phi2_half.push_back(h2);
    sc.phi1.push_back(e1);
    sc.phi2.push_back(e2);
    sc.delta.push_back(d);
    sc.delta_sum.push_back(sc.delta_sum.back() + d);
  }
  return sc;
}

SplitModuli split_moduli(const Functional& f1, const Functional& f2, const Space& s, const Partition& p,
                         const std::optional<BoundingBall>& ball) {
  const double tau = p.mesh();
  if (f1.lambda * tau <= -1 || f2.lambda * tau <= -1) throw usage_error("lambda_i |tau| must exceed -1");
  auto lt = [tau](double l) { return l == 0 ? 0.0 : std::log1p(l * tau) / tau; };
  SplitModuli m;
  m.lambda1_tau = lt(f1.lambda);
  m.lambda2_tau = lt(f2.lambda);
  m.D = ball ? std::min(2 * ball->radius, s.diameter_bound()) : s.diameter_bound();
  const auto K = k_for_radius(s, m.D);
  m.K_prime = K ? std::min(0.0, *K) : std::nan("");
  return m;
}

DeltaBudgetReport delta_budget(const SplitScheme& scheme, const Space& s, double L1, double L2, double T) {
  if (scheme.partition.horizon() > T * (1 + 1e-12)) throw usage_error("scheme runs past T");
  DeltaBudgetReport rep;
  const double L = std::max(L1, L2);
  rep.budget = 2 * L * L * T;
  rep.sum = scheme.delta_sum.back();
  for (std::size_t k = 1; k <= scheme.steps(); ++k) {
    if (!(scheme.delta[k] >= 0)) rep.nonnegative = false;
    const double tau = scheme.partition.step(k);
    const double d1 = distance(s, scheme.points[k - 1], scheme.half[k]);
    const double d2 = distance(s, scheme.half[k], scheme.points[k]);
    if (L1 > 0) rep.worst_step_ratio = std::max(rep.worst_step_ratio, d1 / (2 * L1 * tau));
    if (L2 > 0) rep.worst_step_ratio = std::max(rep.worst_step_ratio, d2 / (2 * L2 * tau));
    if ((L1 == 0 && d1 > 0) || (L2 == 0 && d2 > 0)) rep.worst_step_ratio = infinity;
  }
  rep.pass = rep.nonnegative && rep.sum <= rep.budget * (1 + 1e-12) + 1e-12 && rep.worst_step_ratio <= 1 + 1e-9;
  return rep;
}

SplitBoundReport bound_check(const SplitScheme& scheme, const Functional& f1, const Functional& f2, const Space& s,
                             double T) {
  if (scheme.partition.horizon() > T * (1 + 1e-12)) throw usage_error("scheme runs past T");
  SplitBoundReport rep;
  const std::size_t N = scheme.steps();
  const double a1 = scheme.phi1[0], a2 = scheme.phi2[0];
  for (std::size_t n = 1; n <= N; ++n) {
    const double gain = std::max({scheme.phi1[n] - a1, scheme.phi1_half[n] - a1, scheme.phi2[n] - a2,
                                  scheme.phi2_half[n] - a2});
    const double slack = scheme.delta_sum[n] - gain;
    rep.energy_slack = std::min(rep.energy_slack, slack);
    if (slack < -1e-12 * (1 + std::abs(a1) + std::abs(a2))) rep.pass = false;
  }
  if (f1.lower_bound && f2.lower_bound) {
    rep.chain_checked = true;
    const double Delta = scheme.delta_sum[N];
    const double c = std::sqrt(std::max(0.0, a1 - *f1.lower_bound + 2 * Delta)) +
                     std::sqrt(std::max(0.0, a2 - *f2.lower_bound + 2 * Delta));
    // Above 400 steps the outer index is strided to keep the pair count bounded.
    const std::size_t stride = std::max<std::size_t>(1, N / 400);
    const auto& t = scheme.partition.times();
    for (std::size_t l = 1; l <= N; l += stride)
      for (std::size_t k = l; k <= N; ++k) {
        const double bound = std::sqrt(2 * (t[k] - t[l - 1])) * c;
        const double d = std::max({distance(s, scheme.points[l - 1], scheme.half[k]),
                                   distance(s, scheme.points[l - 1], scheme.points[k]),
                                   distance(s, scheme.half[l], scheme.half[k]),
                                   distance(s, scheme.half[l], scheme.points[k])});
        ++rep.pairs;
        const double slack = (bound - d) / std::max(1.0, bound);
        rep.chain_slack = std::min(rep.chain_slack, slack);
        if (slack < -1e-12) rep.pass = false;
      }
  }
  return rep;
}

std::optional<SplitKeyEstimate> split_key_estimate_residual(const SplitScheme& scheme, const Functional& f1,
                                                            const Functional& f2, const Space& s, const Point& w,
                                                            std::size_t k) {
  if (k < 1 || k > scheme.steps()) throw usage_error("step index out of range");
  const double w1 = f1(w), w2 = f2(w);
  if (!std::isfinite(w1) || !std::isfinite(w2)) return std::nullopt;
  const double tau = scheme.partition.step(k);
  if (tau >= f1.tau_star / 8 || tau >= f2.tau_star / 8) return std::nullopt;
  const Point &zp = scheme.points[k - 1], &zh = scheme.half[k], &zk = scheme.points[k];
  const double d1 = distance(s, zp, zh), d2 = distance(s, zh, zk);
  const double p1 = scheme.phi1[k - 1], p2h = scheme.phi2_half[k];
  const double h1 = scheme.phi1_half[k], e2 = scheme.phi2[k];
  if (s.kind() == SpaceKind::sphere) {
    const double C1 = std::max(d1 * d1, p1 - h1), C2 = std::max(d2 * d2, p2h - e2);
    if ((C1 > 0 && tau >= pi * pi / (2 * C1)) || (C2 > 0 && tau >= pi * pi / (2 * C2))) return std::nullopt;
  }
  const auto K1 = k_for_radius(s, distance(s, zh, w) + d1);
  const auto K2 = k_for_radius(s, distance(s, zk, w) + d2);
  if (!K1 || !K2) return std::nullopt;
  SplitKeyEstimate out;
  out.K = std::min(*K1, *K2);
  const double Kp = std::min(0.0, out.K);
  const double lhs = (1 + f2.lambda * tau) * distance_sq(s, zk, w);
  const double rhs = distance_sq(s, zp, w) - f1.lambda * tau * distance_sq(s, zh, w) +
                     2 * tau * (w1 + w2 - h1 - e2) - Kp * tau * (p1 - h1 + p2h - e2);
  out.residual = lhs - rhs;
  return out;
}

TkConvergence tk_convergence(const Functional& f1, const Functional& f2, const Space& s, const Point& z0, double T,
                             const std::vector<double>& meshes, const std::optional<BoundingBall>& ball) {
  if (meshes.size() < 2) throw usage_error("convergence needs at least two meshes");
  for (std::size_t j = 1; j < meshes.size(); ++j)
    if (!(meshes[j] < meshes[j - 1])) throw usage_error("meshes must be strictly decreasing");
  const double h = meshes.back();
  const Functional sum = combine(s, 1.0, f1, 1.0, f2);
  const std::size_t n = static_cast<std::size_t>(std::ceil(T / h - 1e-9));
  auto ref_job = std::async(std::launch::async, [&] { return converge_flow(sum, s, z0, T, {h / 2, h / 4}, n); });
  std::vector<std::future<SplitScheme>> jobs;
  for (double tau : meshes)
    jobs.push_back(std::async(std::launch::async, [&, tau] { return run_split(f1, f2, s, z0, Partition::uniform(T, tau), ball); }));
  const FlowCurve ref = ref_job.get();

  TkConvergence out;
  out.reference_gap = ref.cauchy_gap;
  out.certified = true;
  for (std::size_t j = 0; j < meshes.size(); ++j) {
    const SplitScheme sc = jobs[j].get();
    double e = 0;
    for (std::size_t k = 0; k <= sc.steps(); ++k)
      e = std::max(e, distance(s, sc.points[k], ref.at(s, sc.partition.time(k))));
    out.meshes.push_back(meshes[j]);
    out.sup_errors.push_back(e);
    out.delta_sums.push_back(sc.delta_sum.back());
    out.certified = out.certified && sc.certified();
    if (j > 0 && e > out.sup_errors[j - 1]) out.monotone = false;
  }
  out.order = fit_order(out.meshes, out.sup_errors);
  const std::size_t m = out.sup_errors.size();
  out.pass = out.sup_errors[m - 1] < out.sup_errors[m - 2] || out.sup_errors[m - 1] <= 1e-12;
  return out;
}

}  // namespace mmflow
