#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "mmflow/flow.hpp"

using namespace mmflow;

namespace {

// Radial flow of (1/2) d^2(p, .) on S^2 with p the north pole: the colatitude
// solves r' = -r and the longitude is fixed.
Point radial_oracle(const Space& s2, double r0, double lon, double t) {
  const double r = r0 * std::exp(-t);
  return s2.point({std::sin(r) * std::cos(lon), std::sin(r) * std::sin(lon), std::cos(r)});
}

// Spherical law of cosines for two points given by colatitude and longitude.
double sphere_distance(double r1, double l1, double r2, double l2) {
  const double c = std::cos(r1) * std::cos(r2) + std::sin(r1) * std::sin(r2) * std::cos(l1 - l2);
  return std::acos(std::clamp(c, -1.0, 1.0));
}

Point colat(const Space& s2, double r, double lon) { return radial_oracle(s2, r, lon, 0.0); }

}  // namespace

TEST_CASE("flow examples") {
  const Space r1 = Space::euclidean(1);
  const auto q = half_sqdist(r1, r1.point({0}));
  const FlowCurve fc = flow(q, r1, r1.point({1}), 1.0, 1e-6);
  CHECK(fc.converged);
  CHECK(std::abs(fc.points.back().coords[0] - std::exp(-1.0)) <= 3 * fc.cauchy_gap);
  CHECK(fc.points.back().coords[0] == doctest::Approx(0.36788).epsilon(1e-4));
  for (std::size_t i = 1; i < fc.energies.size(); ++i) CHECK(fc.energies[i] <= fc.energies[i - 1]);
  CHECK(fc.times.front() == 0.0);
  CHECK(fc.points.front().coords[0] == 1.0);

  const FlowCurve still = flow(q, r1, r1.point({0}), 1.0, 1e-6);
  CHECK(still.converged);
  for (const Point& p : still.points) CHECK(p.coords[0] == 0.0);

  const Space tree = Space::star_tree({3, 3, 3});
  const FlowCurve ft = flow(dist_to(tree, tree.hub()), tree, tree.tree_point(1, 2.0), 1.0, 1e-8);
  CHECK(ft.points.back().edge == 1);
  CHECK(ft.points.back().coords[0] == doctest::Approx(1.0).epsilon(1e-9));
  for (double v : ft.speeds) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("flow reports ladder exhaustion") {
  const Space r1 = Space::euclidean(1);
  FlowOptions opt;
  opt.max_steps = 256;
  const FlowCurve fc = flow(half_sqdist(r1, r1.point({0})), r1, r1.point({1}), 1.0, 1e-9, opt);
  CHECK_FALSE(fc.converged);
  CHECK(fc.cauchy_gap > 1e-9);
  CHECK_THROWS_AS(flow(half_sqdist(r1, r1.point({0})), r1, r1.point({1}), 0.0, 1e-6), usage_error);
}

TEST_CASE("semigroup property on a 5x5 grid") {
  const Space r2 = Space::euclidean(2);
  const auto q = half_sqdist(r2, r2.point({0.5, 0}));
  const auto rep = semigroup_check(q, r2, r2.point({1, 1}), 1.0, 1e-5);
  CHECK(rep.pass);
  CHECK(rep.gaps.size() == 25);
  const Space s2 = Space::sphere(2);
  const auto qs = half_sqdist(s2, s2.point({0, 0, 1}));
  CHECK(semigroup_check(qs, s2, colat(s2, 0.9, 0.3), 1.0, 1e-5).pass);
}

TEST_CASE("contraction examples") {
  const Space r2 = Space::euclidean(2);
  const auto q = half_sqdist(r2, r2.point({0, 0}));
  const auto rep = contraction_check(q, r2, r2.point({1, 0.5}), r2.point({-0.3, 0.8}), 1.0, 3e-7);
  CHECK(rep.pass);
  for (double r : rep.ratio) CHECK(std::abs(r - 1) <= 1e-6);

  const auto same = contraction_check(q, r2, r2.point({1, 0.5}), r2.point({1, 0.5}), 1.0, 1e-5);
  CHECK(same.pass);
  CHECK(same.max_ratio == 0.0);

  const Space s2 = Space::sphere(2);
  const Point p = s2.point({0, 0, 1});
  const auto qs = half_sqdist(s2, p);
  const double sampled = check_lambda_convexity(qs, s2, 2000, 5, BallRegion{p, pi / 3});
  const double lam = std::min(sampled, qs.lambda);
  const double r1 = 0.9, l1 = 0.2, r2v = 0.6, l2 = 1.4;
  const auto sr = contraction_check(qs, s2, colat(s2, r1, l1), colat(s2, r2v, l2), 1.0, 1e-6, lam);
  CHECK(sr.pass);
  CHECK(sr.lambda_overridden);
  for (std::size_t i = 0; i < sr.times.size(); i += 8) {
    const double t = sr.times[i];
    const double d = sphere_distance(r1 * std::exp(-t), l1, r2v * std::exp(-t), l2);
    const double d0 = sphere_distance(r1, l1, r2v, l2);
    CHECK(sr.ratio[i] == doctest::Approx(d / (std::exp(-lam * t) * d0)).epsilon(1e-4));
  }
}

TEST_CASE("discrete contraction") {
  const Space r1 = Space::euclidean(1);
  const auto q = half_sqdist(r1, r1.point({0}));
  const Partition p = Partition::uniform(1.0, 0.1);
  const auto rep = discrete_contraction_check(q, r1, r1.point({2}), r1.point({-1}), p);
  CHECK(rep.pass);
  CHECK(rep.K_prime == 0.0);
  CHECK(rep.lambda_tau == doctest::Approx(std::log(1.1) / 0.1));
  CHECK(rep.lambda_tau <= 1.0);
  // Closed-form steps x_k = x0 / 1.1^k: margin of the intermediate inequality.
  double worst = -1e300;
  for (int k = 1; k <= 10; ++k) {
    const double xp = 2 / std::pow(1.1, k - 1), xk = 2 / std::pow(1.1, k);
    const double yp = -1 / std::pow(1.1, k - 1), yk = -1 / std::pow(1.1, k);
    const double lhs = 1.1 * (xk - yk) * (xk - yk);
    const double rhs = (xp - yp) * (xp - yp) - 0.1 * (xk - yp) * (xk - yp) + 0.2 * 0.5 * (yp * yp - yk * yk);
    worst = std::max(worst, lhs - rhs);
  }
  CHECK(rep.worst_step_residual == doctest::Approx(worst).epsilon(1e-9));

  const auto same = discrete_contraction_check(q, r1, r1.point({2}), r1.point({2}), p);
  CHECK(same.pass);
  CHECK(same.fitted_c == 0.0);

  const Space tree = Space::star_tree({2, 2, 2});
  const auto d = dist_to(tree, tree.hub());
  const auto flat = discrete_contraction_check(d, tree, tree.tree_point(0, 1.5), tree.tree_point(2, 0.7), p);
  CHECK(flat.lambda_tau == 0.0);
  CHECK(flat.lambda_plus == 0.0);
  CHECK(flat.pass);

  const Space s2 = Space::sphere(2);
  const Point np = s2.point({0, 0, 1});
  const auto sp = discrete_contraction_check(half_sqdist(s2, np), s2, colat(s2, 0.9, 0), colat(s2, 0.7, 2.0),
                                             Partition::uniform(1.0, 0.05));
  CHECK(sp.pass);
  CHECK(sp.skipped_steps == 0);
}

TEST_CASE("evi examples") {
  const Space r2 = Space::euclidean(2);
  const auto q = half_sqdist(r2, r2.point({0, 0}));
  const FlowCurve fc = flow(q, r2, r2.point({1, -0.5}), 1.0, 1e-6);
  const std::vector<double> ts{0.25, 0.5, 1.0};
  const auto eq = evi_check(fc, q, r2, r2.point({0, 0}), ts);
  CHECK(eq.pass);
  REQUIRE(eq.residuals.size() == 3);
  for (double r : eq.residuals) CHECK(std::abs(r) <= 1e-6);

  for (double t : ts) {
    const auto self = evi_check(fc, q, r2, fc.at(r2, t), {t});
    CHECK(self.pass);
    CHECK(self.residuals[0] <= self.tols[0]);
  }
  CHECK(evi_check(fc, q, r2, r2.point({0, 0}), {0.3 + 1e-4}).skipped == 1);

  const Space s2 = Space::sphere(2);
  const Point p = s2.point({0, 0, 1});
  const auto qs = half_sqdist(s2, p);
  const FlowCurve fs = flow(qs, s2, colat(s2, 0.9, 0.4), 1.0, 1e-6);
  for (double ry : {0.2, 0.5, 1.0}) CHECK(evi_check(fs, qs, s2, colat(s2, ry, 0.4), ts).pass);
}

TEST_CASE("integrated evi") {
  const Space r2 = Space::euclidean(2);
  const Point a = r2.point({0, 0});
  const auto d = dist_to(r2, a);
  const FlowCurve fc = flow(d, r2, r2.point({3, 0}), 2.0, 1e-8);
  const auto rep = integrated_evi_check(fc, d, r2, a, 2.0);
  CHECK(rep.pass);
  // Unit-speed motion toward the anchor: r(t) = 3 - t.
  CHECK(rep.lhs == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(rep.rhs2 == doctest::Approx(9.0 - 2 * 2.0 * 1.0).epsilon(1e-7));
  CHECK(rep.rhs == doctest::Approx(9.0 - 2 * (3.0 * 2 - 2.0)).epsilon(1e-6));

  const auto early = integrated_evi_check(fc, d, r2, a, fc.times[1]);
  CHECK(early.pass);
  CHECK(early.lhs == doctest::Approx(9.0).epsilon(1e-2));
  CHECK(early.rhs == doctest::Approx(9.0).epsilon(1e-2));

  const auto q = half_sqdist(r2, a);
  const FlowCurve still = flow(q, r2, a, 1.0, 1e-8);
  const auto st = integrated_evi_check(still, q, r2, a, 1.0);
  CHECK(st.pass);
  CHECK(st.lhs == 0.0);
  CHECK(st.rhs == 0.0);

  const Space s2 = Space::sphere(2);
  const Point p = s2.point({0, 0, 1});
  const auto qs = half_sqdist(s2, p);
  const FlowCurve fs = flow(qs, s2, colat(s2, 0.9, 0.0), 1.0, 1e-6);
  CHECK(integrated_evi_check(fs, qs, s2, colat(s2, 0.4, 1.0), 1.0).pass);
}

TEST_CASE("dissipation") {
  const Space r1 = Space::euclidean(1);
  const auto q = half_sqdist(r1, r1.point({0}));
  const FlowCurve fc = flow(q, r1, r1.point({1}), 1.0, 1e-7);
  const auto rep = dissipation_check(fc, q, r1, 0.25, 1.0);
  // Both sides equal (e^{-0.5} - e^{-2}) / 2.
  CHECK(rep.drop == doctest::Approx(0.5 * (std::exp(-0.5) - std::exp(-2.0))).epsilon(1e-6));
  CHECK(rep.within);
  CHECK(std::abs(rep.residual) <= 1e-4);

  const FlowCurve still = flow(q, r1, r1.point({0}), 1.0, 1e-7);
  const auto zero = dissipation_check(still, q, r1, 0.25, 1.0);
  CHECK(zero.residual == 0.0);

  const Space tree = Space::star_tree({3, 3, 3});
  const auto d = dist_to(tree, tree.hub());
  const FlowCurve ft = flow(d, tree, tree.tree_point(0, 2.0), 1.5, 1e-8);
  const auto tr = dissipation_check(ft, d, tree, 0.5, 1.5);
  CHECK(tr.drop == doctest::Approx(1.0));
  CHECK(std::abs(tr.residual) <= 1e-6);

  const std::vector<double> meshes{0.1, 0.05, 0.025, 0.0125};
  const auto study = dissipation_study(q, r1, r1.point({1}), 0.2, 1.0, meshes);
  CHECK(study.decreasing);
  CHECK(study.order >= 0.9);
  const auto kink = dissipation_study(d, tree, tree.tree_point(0, 2.0), 0.5, 3.0, meshes);
  CHECK(kink.decreasing);
  CHECK(kink.residuals.back() <= 0.1);
}

TEST_CASE("stationary characterization") {
  const Space r2 = Space::euclidean(2);
  const Point p = r2.point({0.5, -0.5});
  const auto q = half_sqdist(r2, p);
  const auto at_min = stationary_check(q, r2, p, 0.1);
  CHECK(at_min.agree);
  CHECK(at_min.slope_zero);
  CHECK(at_min.flow_fixed);
  CHECK(at_min.quotient_bounded);
  const Point x = r2.point({1, 0});
  const auto off = stationary_check(q, r2, x, 0.1);
  CHECK(off.agree);
  CHECK_FALSE(off.slope_zero);
  CHECK_FALSE(off.flow_fixed);
  // The flow moves by |x - p| (1 - e^{-T}).
  CHECK(off.max_move == doctest::Approx(std::sqrt(0.5) * (1 - std::exp(-0.1))).epsilon(1e-4));
  const auto dp = stationary_check(dist_to(r2, p), r2, p, 0.1);
  CHECK(dp.agree);
  CHECK(dp.slope_zero);
  CHECK(dp.quotient_sup == 0.0);

  const Space s2 = Space::sphere(2);
  const Point np = s2.point({0, 0, 1});
  const auto qs = half_sqdist(s2, np);
  CHECK(stationary_check(qs, s2, np, 0.1).agree);
  CHECK(stationary_check(qs, s2, colat(s2, 0.7, 1.0), 0.1).agree);
  const Space tree = Space::star_tree({2, 2, 2});
  const auto sum = combine(tree, 1, dist_to(tree, tree.tree_point(0, 2)), 1, dist_to(tree, tree.tree_point(1, 2)));
  const auto on_path = stationary_check(sum, tree, tree.tree_point(0, 1.0), 0.1);
  CHECK(on_path.agree);
  CHECK(on_path.slope_zero);
  const auto off_path = stationary_check(sum, tree, tree.tree_point(2, 1.0), 0.1);
  CHECK(off_path.agree);
  CHECK_FALSE(off_path.slope_zero);
}

TEST_CASE("slope decay") {
  const Space r1 = Space::euclidean(1);
  const auto q = half_sqdist(r1, r1.point({0}));
  const FlowCurve fc = flow(q, r1, r1.point({1}), 1.0, 1e-6);
  const auto rep = slope_decay_check(fc, q, r1, 0.25, 1.0);
  CHECK(rep.pass);
  CHECK(rep.lambda_clamped);
  for (std::size_t i = 0; i < rep.times.size(); i += 16)
    CHECK(rep.slopes[i] == doctest::Approx(std::exp(-rep.times[i])).epsilon(1e-4));

  const Space tree = Space::star_tree({3, 3, 3});
  const auto d = dist_to(tree, tree.hub());
  const FlowCurve ft = flow(d, tree, tree.tree_point(2, 1.0), 2.0, 1e-8);
  const auto tr = slope_decay_check(ft, d, tree, 0.5, 2.0);
  CHECK(tr.pass);
  CHECK(tr.trend_to_zero);
  CHECK(tr.slopes.front() == doctest::Approx(1.0));
  CHECK(tr.slopes.back() == 0.0);

  const FlowCurve still = flow(q, r1, r1.point({0}), 1.0, 1e-6);
  const auto st = slope_decay_check(still, q, r1, 0.5, 1.0);
  CHECK(st.pass);
  CHECK(st.pointwise_worst <= 0.0);

  // Semi-concave potential -x^2/4 + x^4/4 on (0.1, 1): lambda = -1/2.
  const auto w = custom(r1, "double-well", [](const Point& x) {
    const double v = x.coords[0];
    return v > 0.1 && v < 1.5 ? -0.25 * v * v + 0.25 * v * v * v * v : infinity;
  }, -0.5, -1.0);
  const FlowCurve fw = flow(w, r1, r1.point({0.3}), 1.0, 1e-4);
  CHECK(slope_decay_check(fw, w, r1, 0.25, 1.0).pass);
}

TEST_CASE("ball-chained sphere flow") {
  const Space s2 = Space::sphere(2);
  const Point p = s2.point({0, 0, 1});
  const auto qs = half_sqdist(s2, p, 1.0, 2 * pi / 5);
  const double r0 = 2 * pi / 5;
  const Point x0 = colat(s2, r0, 0.3);
  const ChainedFlow ch = flow_ball_chained(qs, s2, x0, 1.0, 1e-6);
  REQUIRE(ch.restart_times.size() == 1);
  // First exit when r0 (1 - e^{-t}) = pi/6.
  CHECK(ch.leg_durations[0] == doctest::Approx(-std::log(1 - (pi / 6) / r0)).epsilon(1e-3));
  CHECK(ch.legs_ok);
  CHECK(ch.worst_leg_slack > 0);
  CHECK(distance(s2, ch.curve.points.back(), radial_oracle(s2, r0, 0.3, 1.0)) <= 1e-5);
  const FlowCurve direct = flow(qs, s2, x0, 1.0, 1e-6);
  CHECK(compare_chained(ch, direct, s2, qs.lambda).pass);

  const Point near = colat(s2, 0.3, 0.3);
  const ChainedFlow inside = flow_ball_chained(qs, s2, near, 1.0, 1e-6);
  CHECK(inside.restart_times.empty());
  const FlowCurve dn = flow(qs, s2, near, 1.0, 1e-6);
  for (std::size_t i = 0; i < dn.points.size(); ++i) CHECK(distance(s2, dn.points[i], inside.curve.points[i]) == 0.0);

  const Space r2 = Space::euclidean(2);
  CHECK_THROWS_AS(flow_ball_chained(half_sqdist(r2, r2.point({0, 0})), r2, r2.point({1, 0}), 1.0, 1e-6),
                  usage_error);
}
