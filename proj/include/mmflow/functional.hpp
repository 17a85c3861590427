#ifndef mmflow_functional_hpp
#define mmflow_functional_hpp

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mmflow/space.hpp"

namespace mmflow {

constexpr double infinity = std::numeric_limits<double>::infinity();

class horizon_error : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

class solver_error : public std::runtime_error {
public:
  solver_error(const std::string& what, int iterations, double residual)
      : std::runtime_error(what), iterations(iterations), residual(residual) {}
  int iterations;
  double residual;
};

/* Quadratic part w/2 d^2(anchor, .) + c, kept so sums of quadratics stay closed form. */
struct QuadraticForm {
  Point anchor;
  double weight = 1;
  double constant = 0;
};

/*
 * A semi-convex potential on a fixed space. `lambda` is the declared modulus
 * (on the sphere: the modulus on the ball of radius `ball_radius` around the
 * anchors). Evaluators return +inf outside the domain.
 */
struct Functional {
  using Evaluator = std::function<double(const Point&)>;
  using ProxFn = std::function<Point(const Point&, double)>;

  std::string name;
  Evaluator evaluator;
  double lambda = 0;
  double tau_star = infinity;
  std::function<bool(const Point&)> domain;
  std::optional<ProxFn> closed_form_prox;
  std::optional<double> lipschitz_bound;
  std::optional<double> lower_bound;
  std::optional<QuadraticForm> quadratic;
  // Points the inner solver uses as search directions and starts.
  std::vector<Point> anchors;

  double operator()(const Point& x) const { return evaluator(x); }
};

struct ProxResult {
  Point minimizer;
  double value = 0;
  double displacement = 0;
  int iterations = 0;
  bool closed_form = false;
};

struct SolverOptions {
  double tolerance = 1e-10;
  int max_iterations = 10000;
};

Functional half_sqdist(const Space& s, const Point& anchor, double weight = 1.0,
                       double ball_radius = pi / 3);
Functional dist_to(const Space& s, const Point& anchor, double ball_radius = pi / 3);
Functional combine(const Space& s, double a, const Functional& f, double b, const Functional& g);
Functional custom(const Space& s, std::string name, Functional::Evaluator eval, double lambda,
                  std::optional<double> lower_bound = std::nullopt,
                  std::vector<Point> anchors = {});

// Horizon from the declared modulus and the space's global K.
double default_tau_star(const Space& s, double lambda, bool bounded_below,
                        double ball_radius = pi / 3);

double evaluate(const Functional& f, const Point& x);

ProxResult prox(const Functional& f, const Space& s, const Point& x, double tau,
                const SolverOptions& opt = {});
// Always runs the inner solver, ignoring any closed form.
ProxResult prox_solver(const Functional& f, const Space& s, const Point& x, double tau,
                       const SolverOptions& opt = {});
double moreau_yosida(const Functional& f, const Space& s, const Point& x, double tau);

std::vector<double> default_radii();
double local_slope(const Functional& f, const Space& s, const Point& x,
                   const std::vector<double>& radii = default_radii(), unsigned seed = 1);

struct BallRegion {
  Point center;
  double radius;
};

// Largest mu satisfying the mu-convexity inequality on all samples.
double check_lambda_convexity(const Functional& f, const Space& s, int sample_triples, unsigned seed,
                              const std::optional<BallRegion>& region = std::nullopt);

}  // namespace mmflow

#endif
