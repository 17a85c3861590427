#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "mmflow/space.hpp"

using namespace mmflow;

namespace {

// Sides 1, 1, sqrt(2) on S^2: apex at the pole, bisection on the longitude
// gap until the arc between the two other vertices equals sqrt(2).
constexpr double kAngleUnitUnitRoot2 = 1.7640431720375263;

double oracle_second_difference_inf(double R, int samples, unsigned seed) {
  const Space s2 = Space::sphere(2);
  const Point x = s2.point({0, 0, 1});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double h = 1e-3;
  double inf = 1e300;
  for (int i = 0; i < samples; ++i) {
    const double r = R * std::sqrt(u(rng));
    const double lon = 2 * pi * u(rng);
    const double psi = 2 * pi * u(rng);
    const std::vector<double> q{std::sin(r) * std::cos(lon), std::sin(r) * std::sin(lon), std::cos(r)};
    const std::vector<double> er{std::cos(r) * std::cos(lon), std::cos(r) * std::sin(lon), -std::sin(r)};
    const std::vector<double> el{-std::sin(lon), std::cos(lon), 0};
    std::vector<double> dir(3);
    for (int k = 0; k < 3; ++k) dir[k] = std::cos(psi) * er[k] + std::sin(psi) * el[k];
    auto f = [&](double t) {
      std::vector<double> c(3);
      for (int k = 0; k < 3; ++k) c[k] = std::cos(t) * q[k] + std::sin(t) * dir[k];
      return distance_sq(s2, x, s2.point(c));
    };
    // Only geodesic pieces inside the ball count.
    if (distance(s2, x, s2.point({std::cos(h) * q[0] + std::sin(h) * dir[0], std::cos(h) * q[1] + std::sin(h) * dir[1],
                                  std::cos(h) * q[2] + std::sin(h) * dir[2]})) >= R)
      continue;
    if (distance(s2, x, s2.point({std::cos(h) * q[0] - std::sin(h) * dir[0], std::cos(h) * q[1] - std::sin(h) * dir[1],
                                  std::cos(h) * q[2] - std::sin(h) * dir[2]})) >= R)
      continue;
    inf = std::min(inf, (f(h) - 2 * f(0) + f(-h)) / (h * h));
  }
  return inf;
}

}  // namespace

TEST_CASE("distance examples") {
  const Space s2 = Space::sphere(2);
  CHECK(distance(s2, s2.point({1, 0, 0}), s2.point({0, 1, 0})) == doctest::Approx(pi / 2).epsilon(1e-14));
  const Space r2 = Space::euclidean(2);
  CHECK(distance(r2, r2.point({0, 0}), r2.point({3, 4})) == doctest::Approx(5.0));
  const Space tree = Space::star_tree({3, 3, 3});
  CHECK(distance(tree, tree.tree_point(0, 1.5), tree.tree_point(1, 2.0)) == doctest::Approx(3.5));
  CHECK(distance(tree, tree.tree_point(1, 1.0), tree.tree_point(1, 2.5)) == doctest::Approx(1.5));
  CHECK(distance(tree, tree.hub(), tree.tree_point(2, 2.0)) == doctest::Approx(2.0));
}

TEST_CASE("distance rejects points of another space") {
  const Space a = Space::euclidean(2), b = Space::euclidean(2);
  CHECK_THROWS_AS(distance(a, a.point({0, 0}), b.point({1, 1})), usage_error);
}

TEST_CASE("metric axioms on samples") {
  std::mt19937_64 rng(11);
  for (const Space& s : {Space::sphere(2), Space::euclidean(3), Space::star_tree({1, 2, 3})}) {
    for (int i = 0; i < 200; ++i) {
      const Point x = s.random_point(rng), y = s.random_point(rng), z = s.random_point(rng);
      CHECK(distance(s, x, y) == doctest::Approx(distance(s, y, x)).epsilon(1e-14));
      CHECK(distance(s, x, x) <= 1e-12);
      CHECK(distance(s, x, z) <= distance(s, x, y) + distance(s, y, z) + 1e-12);
    }
  }
}

TEST_CASE("geodesic_point examples") {
  const Space s2 = Space::sphere(2);
  const Point m = geodesic_point(s2, s2.point({1, 0, 0}), s2.point({0, 1, 0}), 0.5);
  CHECK(m.coords[0] == doctest::Approx(1 / std::sqrt(2.0)));
  CHECK(m.coords[1] == doctest::Approx(1 / std::sqrt(2.0)));
  CHECK(std::abs(m.coords[2]) < 1e-15);
  const Space r2 = Space::euclidean(2);
  const Point q = geodesic_point(r2, r2.point({0, 0}), r2.point({4, 0}), 0.25);
  CHECK(q.coords[0] == doctest::Approx(1.0));
  CHECK(q.coords[1] == doctest::Approx(0.0));
  const Space tree = Space::star_tree({3, 3, 3});
  const Point h = geodesic_point(tree, tree.tree_point(0, 2), tree.tree_point(1, 2), 0.5);
  CHECK(h.coords[0] == 0.0);
  CHECK(distance(tree, h, tree.hub()) == 0.0);
}

TEST_CASE("geodesic_point rejects antipodal pairs") {
  const Space s2 = Space::sphere(2);
  CHECK_THROWS_AS(geodesic_point(s2, s2.point({1, 0, 0}), s2.point({-1, 0, 0}), 0.5), geometry_error);
}

TEST_CASE("geodesic_point splits distance proportionally") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (const Space& s : {Space::sphere(2), Space::euclidean(2), Space::star_tree({2, 1, 4, 3})}) {
    for (int i = 0; i < 500; ++i) {
      const Point x = s.random_point(rng), y = s.random_point(rng);
      const double d = distance(s, x, y);
      if (d >= pi - 1e-6 && s.kind() == SpaceKind::sphere) continue;
      const double t = u(rng);
      const Point p = geodesic_point(s, x, y, t);
      CHECK(std::abs(distance(s, x, p) - t * d) <= 1e-10);
      CHECK(std::abs(distance(s, p, y) - (1 - t) * d) <= 1e-10);
    }
  }
}

TEST_CASE("comparison_angle") {
  CHECK(comparison_angle_sides(1, 1, std::sqrt(2.0)) == doctest::Approx(kAngleUnitUnitRoot2).epsilon(1e-12));
  const Space r2 = Space::euclidean(2);
  const Point apex = r2.point({0, 0}), y = r2.point({1, 0});
  CHECK(comparison_angle(r2, apex, y, y) == doctest::Approx(0.0));
  const Space s2 = Space::sphere(2);
  CHECK(comparison_angle(s2, s2.point({1, 0, 0}), s2.point({0, 1, 0}), s2.point({0, 0, 1})) ==
        doctest::Approx(pi / 2));
  CHECK_THROWS_AS(comparison_angle(r2, apex, apex, y), geometry_error);
  CHECK_THROWS_AS(comparison_angle_sides(3, 3, 0.5), geometry_error);
}

TEST_CASE("first_variation examples") {
  const Space r2 = Space::euclidean(2);
  CHECK(first_variation(r2, r2.point({0, 0}), r2.point({1, 0}), r2.point({0, 1})) == doctest::Approx(0.0));
  CHECK(first_variation(r2, r2.point({0, 0}), r2.point({1, 0}), r2.point({1, 0})) == doctest::Approx(-2.0));
  const Space s2 = Space::sphere(2);
  CHECK(std::abs(first_variation(s2, s2.point({1, 0, 0}), s2.point({0, 1, 0}), s2.point({0, 0, 1}))) < 1e-14);
  CHECK_THROWS_AS(first_variation(r2, r2.point({0, 0}), r2.point({0, 0}), r2.point({0, 1})), geometry_error);
}

TEST_CASE("first_variation matches difference quotients at rate O(h)") {
  std::mt19937_64 rng(5);
  for (const Space& s : {Space::sphere(2), Space::euclidean(3), Space::star_tree({2, 2, 2})}) {
    int checked = 0;
    for (int i = 0; i < 100; ++i) {
      const Point x = s.random_point(rng), y = s.random_point(rng), z = s.random_point(rng);
      const double dy = distance(s, x, y), dz = distance(s, x, z);
      if (dy < 1e-2 || dz < 1e-2 || dy > pi - 0.1 || dz > pi - 0.1) continue;
      if (s.kind() == SpaceKind::star_tree && x.coords[0] < 1e-2) continue;
      const double exact = first_variation(s, x, y, z);
      double prev = 1e300;
      for (double h : {1e-3, 5e-4, 2.5e-4}) {
        const double q = (distance_sq(s, geodesic_point(s, x, y, h), z) - dz * dz) / h;
        const double err = std::abs(q - exact);
        CHECK(err <= 20 * h * (1 + dy * dy + dz * dz));
        CHECK(err <= prev * 0.55 + 1e-9);
        prev = err;
      }
      ++checked;
    }
    CHECK(checked > 30);
  }
}

TEST_CASE("convexity_constant") {
  const Space r2 = Space::euclidean(2);
  CHECK(convexity_constant(r2, 10.0) == 2.0);
  CHECK(convexity_constant(Space::star_tree({1, 1}), 0.5) == 2.0);
  const Space s2 = Space::sphere(2);
  const double k3 = convexity_constant(s2, pi / 3);
  CHECK(k3 == doctest::Approx(1.2092).epsilon(1e-4));
  CHECK(k3 <= sphere_k_candidate(pi / 3) + 1e-6);
  CHECK(std::abs(convexity_constant(s2, pi / 2)) < 1e-3);
  CHECK(convexity_constant(s2, 0.4 * pi) > 0);
  CHECK(convexity_constant(s2, 0.6 * pi) < 0);
  CHECK_THROWS_AS(convexity_constant(s2, pi), geometry_error);
  CHECK_THROWS_AS(convexity_constant(s2, 0.0), usage_error);
}

TEST_CASE("sphere K table is below the sampled second-difference modulus") {
  const Space s2 = Space::sphere(2);
  unsigned seed = 100;
  for (double R : {pi / 6, pi / 4, pi / 3, pi / 2, 2 * pi / 3}) {
    const double k = convexity_constant(s2, R);
    const double empirical = oracle_second_difference_inf(R, 20000, seed++);
    CHECK(empirical >= k - 1e-6);
    CHECK(empirical - k < 2e-2 * (1 + std::abs(k)));
  }
}

TEST_CASE("richardson extrapolation is exact on polynomials") {
  std::vector<double> h{0.1, 0.05, 0.025, 0.0125};
  std::vector<double> q;
  for (double x : h) q.push_back(3 - 2 * x + 5 * x * x);
  CHECK(richardson(h, q, 2) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("check_commutativity examples") {
  const Space r2 = Space::euclidean(2);
  const auto rep = check_commutativity(r2, r2.point({0, 0}), r2.point({2, 0}), r2.point({1, 1}));
  CHECK(rep.lhs == doctest::Approx(-4.0));
  CHECK(rep.rhs == doctest::Approx(-4.0));
  CHECK(rep.pass);
  const Space s2 = Space::sphere(2);
  const auto oct = check_commutativity(s2, s2.point({1, 0, 0}), s2.point({0, 1, 0}), s2.point({0, 0, 1}));
  CHECK(std::abs(oct.lhs) < 1e-8);
  CHECK(std::abs(oct.rhs) < 1e-8);
  std::mt19937_64 rng(7);
  const Point x = s2.random_point(rng), y = s2.random_point(rng), z = s2.random_point(rng);
  const auto rnd = check_commutativity(s2, x, y, z);
  CHECK(rnd.gap <= 1e-6);
  CHECK(rnd.lhs == doctest::Approx(first_variation(s2, x, y, z)).epsilon(1e-6));
}

TEST_CASE("check_cat1_triangle") {
  const Space r2 = Space::euclidean(2);
  CHECK(check_cat1_triangle(r2, r2.point({0, 0}), r2.point({1, 0}), r2.point({0.2, 0.9}), 100));
  const Space s2 = Space::sphere(2);
  CHECK(check_cat1_triangle(s2, s2.point({1, 0, 0}), s2.point({0, 1, 0}), s2.point({0, 0, 1}), 100, 1e-12));
  const Space tree = Space::star_tree({2, 2, 2});
  CHECK(check_cat1_triangle(tree, tree.tree_point(0, 1.0), tree.tree_point(1, 0.7), tree.tree_point(2, 1.4), 100));
  CHECK_THROWS_AS(check_cat1_triangle(s2, s2.point({1, 0, 0}), s2.point({-1, 1e-3, 0}), s2.point({0, -1, 0}), 10),
                  geometry_error);
}
