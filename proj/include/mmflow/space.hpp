#ifndef mmflow_space_hpp
#define mmflow_space_hpp

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmflow {

constexpr double pi = 3.14159265358979323846;

/* Raised when arguments are inconsistent (mismatched spaces, bad ranges). */
class usage_error : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/* Raised for degenerate geodesics, triangles or out-of-range radii. */
class geometry_error : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

enum class SpaceKind { sphere, euclidean, star_tree };
enum class CaseTag { cat1_local, global_k };

/*
 * A point of a model space. Sphere: unit vector in R^{n+1}. Euclidean:
 * vector in R^n. Star tree: coords = {offset} on leg `edge`; the hub is
 * stored canonically as edge 0, offset 0.
 */
struct Point {
  std::uint64_t space_id = 0;
  std::vector<double> coords;
  int edge = 0;
};

class Space {
public:
  static Space sphere(int n);
  static Space euclidean(int n);
  static Space star_tree(std::vector<double> legs);

  SpaceKind kind() const { return kind_; }
  CaseTag case_tag() const;
  int dimension() const { return dim_; }
  const std::vector<double>& legs() const { return legs_; }
  std::uint64_t id() const { return id_; }
  double diameter_bound() const;
  double uniqueness_radius() const;
  std::string describe() const;

  // Sphere coordinates are normalized; throws on zero vectors.
  Point point(std::vector<double> coords) const;
  Point tree_point(int edge, double offset) const;
  Point hub() const;

  Point random_point(std::mt19937_64& rng, double euclid_box = 2.0) const;
  // Uniform-in-radius sample of the closed ball B(center, r).
  Point random_in_ball(const Point& center, double r, std::mt19937_64& rng) const;

  void require_same(const Point& p) const;

private:
  SpaceKind kind_ = SpaceKind::euclidean;
  int dim_ = 1;
  std::vector<double> legs_;
  std::uint64_t id_ = 0;
};

double distance(const Space& s, const Point& x, const Point& y);
double distance_sq(const Space& s, const Point& x, const Point& y);

// Point at parameter t of the minimal geodesic from x to y.
Point geodesic_point(const Space& s, const Point& x, const Point& y, double t);

// Spherical comparison angle at the vertex with adjacent sides b, c and
// opposite side a.
double comparison_angle_sides(double b, double c, double a);
double comparison_angle(const Space& s, const Point& apex, const Point& y, const Point& z);

// lim_{s->0} [d^2(gamma(s), z) - d^2(x, z)] / s, gamma the geodesic x -> y.
double first_variation(const Space& s, const Point& x, const Point& y, const Point& z);

// K with d^2(x, .) K-convex on B(x, R).
double convexity_constant(const Space& s, double R);
double sphere_k_candidate(double R);
// The second-difference scan behind the sphere table, exposed for tests.
double sphere_k_scan(double R, int radial_samples = 400, double h = 1e-4);

struct CommutativityReport {
  double lhs = 0;
  double rhs = 0;
  double gap = 0;
  double tol = 0;
  bool pass = false;
};

std::vector<double> default_steps();
// Polynomial extrapolation to h = 0 of samples q(h_i); order capped.
double richardson(const std::vector<double>& h, const std::vector<double>& q, int max_order = 4);

CommutativityReport check_commutativity(const Space& s, const Point& x, const Point& y,
                                        const Point& z,
                                        const std::vector<double>& steps = default_steps(),
                                        double tol = 1e-6);

bool check_cat1_triangle(const Space& s, const Point& x, const Point& y, const Point& z,
                         int samples, double slack = 1e-9);

// Sphere helpers on the embedding.
std::vector<double> sphere_log(const Point& x, const Point& y);
Point sphere_exp(const Space& s, const Point& x, const std::vector<double>& v);

}  // namespace mmflow

#endif
