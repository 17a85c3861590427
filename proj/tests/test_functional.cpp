#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "mmflow/functional.hpp"

using namespace mmflow;

namespace {

// Independent 1-D grid search for min_z z^2/2 + (z - x)^2 / (2 tau).
double grid_prox_value(double x, double tau) {
  double best = 1e300;
  for (int i = -400000; i <= 400000; ++i) {
    const double z = x * i / 200000.0;
    best = std::min(best, 0.5 * z * z + (z - x) * (z - x) / (2 * tau));
  }
  return best;
}

// Golden-section search along the sphere geodesic for the arc s minimizing
// (d - s)^2 / 2 + s^2 / (2 tau).
double golden_arc(double d, double tau) {
  auto g = [&](double s) { return 0.5 * (d - s) * (d - s) + s * s / (2 * tau); };
  double a = 0, b = d;
  const double r = (std::sqrt(5.0) - 1) / 2;
  for (int i = 0; i < 200; ++i) {
    const double c = b - r * (b - a), e = a + r * (b - a);
    if (g(c) < g(e)) b = e; else a = c;
  }
  return 0.5 * (a + b);
}

}  // namespace

TEST_CASE("evaluate examples") {
  const Space r2 = Space::euclidean(2);
  const Point p = r2.point({0, 0});
  const auto q = half_sqdist(r2, p);
  CHECK(evaluate(q, r2.point({2, 0})) == doctest::Approx(2.0));
  const auto d = dist_to(r2, p);
  CHECK(evaluate(d, p) == 0.0);
  const auto sum = combine(r2, 1.0, half_sqdist(r2, r2.point({3, 0})), 1.0, d);
  CHECK(evaluate(sum, p) == doctest::Approx(4.5));
}

TEST_CASE("prox examples") {
  const Space r1 = Space::euclidean(1);
  const auto q = half_sqdist(r1, r1.point({0}));
  const auto pr = prox(q, r1, r1.point({2}), 0.5);
  CHECK(pr.minimizer.coords[0] == doctest::Approx(4.0 / 3));
  CHECK(pr.closed_form);

  const Space r2 = Space::euclidean(2);
  const Point p = r2.point({0, 0});
  const auto dz = prox(dist_to(r2, p), r2, r2.point({3, 0}), 1.0);
  CHECK(distance(r2, dz.minimizer, p) == doctest::Approx(2.0));
  CHECK(dz.minimizer.coords[1] == doctest::Approx(0.0));

  const Space s2 = Space::sphere(2);
  const Point sp = s2.point({0, 0, 1});
  const Point x = s2.point({std::sin(1.0), 0, std::cos(1.0)});
  const auto sq = prox(half_sqdist(s2, sp), s2, x, 0.25);
  CHECK(distance(s2, x, sq.minimizer) == doctest::Approx(golden_arc(1.0, 0.25)).epsilon(1e-7));
  CHECK(distance(s2, x, sq.minimizer) == doctest::Approx(0.2));
  CHECK(distance(s2, sp, sq.minimizer) == doctest::Approx(0.8));
}

TEST_CASE("prox respects the coercivity horizon") {
  const Space r1 = Space::euclidean(1);
  const auto f = custom(r1, "concave-quadratic", [](const Point& x) { return -0.5 * x.coords[0] * x.coords[0]; },
                        -1.0);
  CHECK(f.tau_star == doctest::Approx(1.0));
  CHECK_THROWS_AS(prox(f, r1, r1.point({1}), 1.0), horizon_error);
  CHECK_NOTHROW(prox(f, r1, r1.point({1}), 0.5));
  CHECK_THROWS_AS(prox(half_sqdist(r1, r1.point({0})), r1, r1.point({1}), 0.0), usage_error);
}

TEST_CASE("moreau_yosida examples") {
  const Space r1 = Space::euclidean(1);
  const auto q = half_sqdist(r1, r1.point({0}));
  const double v = moreau_yosida(q, r1, r1.point({2}), 0.5);
  CHECK(v == doctest::Approx(grid_prox_value(2.0, 0.5)).epsilon(1e-9));
  CHECK(v == doctest::Approx(4.0 / 3));
  const Space r2 = Space::euclidean(2);
  const Point p = r2.point({1, 1});
  CHECK(moreau_yosida(dist_to(r2, p), r2, p, 3.0) == 0.0);
  const Point x = r2.point({0.3, -0.4});
  const auto f = combine(r2, 1.0, half_sqdist(r2, p), 0.5, dist_to(r2, r2.point({0, 0})));
  double prev = -1e300;
  for (double tau : {1e-1, 1e-2, 1e-3, 1e-4}) {
    const double m = moreau_yosida(f, r2, x, tau);
    CHECK(m <= f(x) + 1e-12);
    CHECK(f(x) - m <= 5 * tau);
    CHECK(m >= prev - 1e-12);
    prev = m;
  }
}

TEST_CASE("prox invariants on samples") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> ut(0.01, 1.0);
  const Space r2 = Space::euclidean(2), s2 = Space::sphere(2), tree = Space::star_tree({2, 1, 3});
  struct Case {
    const Space* s;
    Functional f;
  };
  std::vector<Case> cases;
  cases.push_back({&r2, half_sqdist(r2, r2.point({0.5, -0.2}), 2.0)});
  cases.push_back({&r2, dist_to(r2, r2.point({0.1, 0.3}))});
  cases.push_back({&r2, combine(r2, 1.0, dist_to(r2, r2.point({1, 0})), 1.0, dist_to(r2, r2.point({0, 1})))});
  cases.push_back({&tree, dist_to(tree, tree.tree_point(1, 1.0))});
  cases.push_back({&tree, combine(tree, 1.0, dist_to(tree, tree.tree_point(0, 2)), 1.0, dist_to(tree, tree.tree_point(1, 1)))});
  const Point np = s2.point({0, 0, 1});
  cases.push_back({&s2, half_sqdist(s2, np)});
  for (const auto& c : cases) {
    for (int i = 0; i < 100; ++i) {
      const Point x = c.s->kind() == SpaceKind::sphere ? c.s->random_in_ball(np, pi / 3, rng) : c.s->random_point(rng);
      const double tau = ut(rng);
      const auto r = prox(c.f, *c.s, x, tau);
      CHECK(r.value <= c.f(x) + 1e-12);
      CHECK(c.f(r.minimizer) <= c.f(x) + 1e-12);
      CHECK(r.displacement * r.displacement <= 2 * tau * (c.f(x) - c.f(r.minimizer)) + 1e-9);
    }
  }
}

TEST_CASE("closed-form prox agrees with the inner solver") {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> ut(0.01, 1.0);
  const Space r2 = Space::euclidean(2), s2 = Space::sphere(2), tree = Space::star_tree({2, 1, 3});
  const Point np = s2.point({0, 0, 1});
  struct Case {
    const Space* s;
    Functional f;
  };
  std::vector<Case> cases{{&r2, half_sqdist(r2, r2.point({0.5, -0.2}), 2.0)},
                          {&r2, dist_to(r2, r2.point({0.1, 0.3}))},
                          {&r2, combine(r2, 1.0, half_sqdist(r2, r2.point({1, 0})), 1.0, half_sqdist(r2, r2.point({0, 1})))},
                          {&tree, half_sqdist(tree, tree.tree_point(2, 2.5))},
                          {&tree, dist_to(tree, tree.tree_point(1, 0.5))},
                          {&s2, half_sqdist(s2, np)},
                          {&s2, dist_to(s2, np)}};
  for (const auto& c : cases) {
    REQUIRE(c.f.closed_form_prox.has_value());
    for (int i = 0; i < 100; ++i) {
      const Point x = c.s->kind() == SpaceKind::sphere ? c.s->random_in_ball(np, pi / 3, rng) : c.s->random_point(rng);
      const double tau = ut(rng);
      const auto a = prox(c.f, *c.s, x, tau);
      const auto b = prox_solver(c.f, *c.s, x, tau);
      CHECK(std::abs(a.value - b.value) <= 1e-8);
      CHECK(b.value >= a.value - 1e-12);
    }
  }
}

TEST_CASE("local_slope examples") {
  const Space r2 = Space::euclidean(2);
  const Point p = r2.point({0, 0});
  const auto q = half_sqdist(r2, p);
  CHECK(local_slope(q, r2, r2.point({3, 0})) == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(local_slope(q, r2, p) == 0.0);
  CHECK(local_slope(dist_to(r2, p), r2, r2.point({1, 2})) == doctest::Approx(1.0).epsilon(1e-9));
  const Space tree = Space::star_tree({2, 2, 2});
  CHECK(local_slope(dist_to(tree, tree.hub()), tree, tree.tree_point(1, 1.0)) == doctest::Approx(1.0));
  CHECK(local_slope(dist_to(tree, tree.hub()), tree, tree.hub()) == 0.0);
  const auto sum = combine(tree, 1, dist_to(tree, tree.tree_point(0, 2)), 1, dist_to(tree, tree.tree_point(1, 2)));
  CHECK(local_slope(sum, tree, tree.tree_point(2, 1.0)) == doctest::Approx(2.0));
  CHECK(local_slope(sum, tree, tree.tree_point(0, 1.0)) == doctest::Approx(0.0));
  CHECK_THROWS_AS(local_slope(q, r2, p, {}), usage_error);
  // Points closer to a kink than the default probe radius.
  CHECK(local_slope(dist_to(tree, tree.hub()), tree, tree.tree_point(2, 1e-3)) == doctest::Approx(1.0));
  CHECK(local_slope(q, r2, r2.point({1e-3, 0})) == doctest::Approx(1e-3).epsilon(1e-6));
  CHECK(local_slope(dist_to(r2, p), r2, r2.point({0, 2e-3})) == doctest::Approx(1.0));
}

TEST_CASE("local_slope is lower semicontinuous along sequences") {
  const Space r2 = Space::euclidean(2);
  const auto f = combine(r2, 1.0, dist_to(r2, r2.point({0, 0})), 0.3, half_sqdist(r2, r2.point({1, 1})));
  const Point x = r2.point({0.4, 0.2});
  const double sx = local_slope(f, r2, x);
  double liminf = 1e300;
  for (int n = 4; n <= 12; ++n) {
    const double e = std::ldexp(1.0, -n);
    liminf = std::min(liminf, local_slope(f, r2, r2.point({0.4 + e, 0.2 - e})));
  }
  CHECK(liminf >= sx - 1e-6);
}

TEST_CASE("check_lambda_convexity examples") {
  const Space r2 = Space::euclidean(2);
  const auto q = half_sqdist(r2, r2.point({0.5, 0.5}));
  CHECK(check_lambda_convexity(q, r2, 500, 1) >= q.lambda - 1e-7);
  CHECK(check_lambda_convexity(q, r2, 500, 1) == doctest::Approx(1.0).epsilon(1e-6));
  const auto d = dist_to(r2, r2.point({0, 0}));
  CHECK(check_lambda_convexity(d, r2, 500, 2) >= -1e-7);
  const Space s2 = Space::sphere(2);
  const Point p = s2.point({0, 0, 1});
  const auto sq = half_sqdist(s2, p, 1.0, pi / 3);
  const double mu = check_lambda_convexity(sq, s2, 2000, 3, BallRegion{p, pi / 3});
  CHECK(mu >= (pi / 3) / std::tan(pi / 3) - 1e-3);
  CHECK(mu >= sq.lambda - 1e-7);
  const Space tree = Space::star_tree({2, 2, 2});
  CHECK(check_lambda_convexity(dist_to(tree, tree.tree_point(0, 1)), tree, 500, 4) >= -1e-7);
}
