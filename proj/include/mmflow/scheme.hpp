#ifndef mmflow_scheme_hpp
#define mmflow_scheme_hpp

#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmflow/functional.hpp"
#include "mmflow/space.hpp"

namespace mmflow {

// A prox failure inside a trajectory, tagged with the step that failed.
class step_error : public std::runtime_error {
public:
  step_error(std::size_t step, const std::string& what)
      : std::runtime_error("step " + std::to_string(step) + ": " + what), step(step) {}
  std::size_t step;
};

class Partition {
public:
  explicit Partition(std::vector<double> times);
  // N = ceil(T/tau) steps; equal steps when T/tau is an integer, else a short last step.
  static Partition uniform(double T, double tau);
  static Partition uniform_steps(double T, std::size_t n);

  std::size_t steps() const { return times_.size() - 1; }
  double time(std::size_t k) const { return times_[k]; }
  double step(std::size_t k) const { return times_[k] - times_[k - 1]; }
  double mesh() const { return mesh_; }
  double horizon() const { return times_.back(); }
  const std::vector<double>& times() const { return times_; }
  // k >= 1 with t in (t^{k-1}, t^k]; t = 0 maps to 1.
  std::size_t locate(double t) const;
  bool is_node(double t, double eps = 1e-12) const;
  Partition refine() const;

private:
  std::vector<double> times_;
  double mesh_ = 0;
};

struct DiscreteSolution {
  Partition partition;
  std::vector<Point> points;
  std::vector<double> energies;
  std::vector<double> displacements;  // displacements[0] = 0

  const Point& x0() const { return points.front(); }
  std::size_t steps() const { return partition.steps(); }
};

DiscreteSolution run_scheme(const Functional& f, const Space& s, const Point& x0, const Partition& p,
                            const SolverOptions& opt = {});

struct InvariantReport {
  double energy_slack = 0;  // min_k phi_{k-1} - phi_k
  double step_slack = 0;    // min_k 2 tau_k (phi_{k-1} - phi_k) - d_k^2
  std::size_t worst_step = 0;
  bool pass = true;
};
InvariantReport check_invariants(const DiscreteSolution& sol, double tol = 1e-9);

struct AprioriBounds {
  Point x_star;
  double Q = 0;
  double T = 0;
  double C = 0;
  double summed_slack = infinity;  // min_k (phi0 - phi_k) - sum d^2/(2 tau)
  double chain_slack = infinity;   // worst link of the displayed chain, scaled
  double smallness_tau = infinity; // pi^2/(2C) on the sphere
  bool pass = true;
  std::size_t worst_step = 0;
};

// Streaming form of the a priori check; C is the running maximum, which is
// never larger than the final one, so the chain is checked conservatively.
class AprioriAccumulator {
public:
  AprioriAccumulator(const Space& s, Point x_star, const Point& x0, double phi0);
  void add(double tau, const Point& xk, double phik, double dk);
  AprioriBounds finish(double T, double slack = 1e-9) const;

private:
  const Space* s_;
  Point x_star_, x0_;
  double phi0_;
  double t_ = 0, sum_d_ = 0, sum_d2_over_tau_ = 0, C_ = 0;
  double summed_ = infinity, chain_ = infinity;
  std::size_t k_ = 0, worst_ = 0;
};

AprioriBounds apriori_check(const DiscreteSolution& sol, const Space& s, const Point& x_star, double T,
                            double slack = 1e-9);

// K for a Key-Lemma ball of radius R, padded against rounding; 2 off the
// sphere, empty when no admissible radius below pi exists.
std::optional<double> k_for_radius(const Space& s, double R);

// K' for the Key-Lemma ball that contains every test point in ys for every
// step of sol. Empty when no admissible radius below pi exists.
std::optional<double> admissible_k(const Space& s, const DiscreteSolution& sol, const std::vector<Point>& ys);

// Interpolants of one discrete solution against a test point y. Holds a
// pointer to sol, which must outlive the bundle.
class InterpolantBundle {
public:
  InterpolantBundle(const DiscreteSolution& sol, const Space& s, Point y, double K);

  const Point& xbar(double t) const;
  double dbar2(double t) const;
  double dbar(double t) const;
  double dbar2_rate(double t) const;
  double phibar(double t) const;
  double residual(double t) const;
  double deviation(double t) const;

  double residual_integral(std::size_t k) const;
  double deviation_sq_integral(std::size_t k) const;
  double deviation_sq_bound(std::size_t k) const;
  double K() const { return K_; }

private:
  std::size_t at(double t) const;
  const DiscreteSolution* sol_;
  Point y_;
  double K_;
  std::vector<double> d2_;
};

// LHS - RHS of the discrete EVI at an interior time; empty when t is a grid
// time, y is outside the domain, or no admissible K exists.
std::optional<double> discrete_evi_residual(const DiscreteSolution& sol, const Space& s, const Functional& f,
                                            const Point& y, double t);

struct ComparisonReport {
  std::vector<double> times;
  std::vector<double> gap;    // dbar_{tau sigma}(t, t)
  std::vector<double> bound;  // right side of the two-solution estimate
  double lambda_used = 0;
  bool lambda_clamped = false;
  double K = 2;
  double worst_slack = infinity;
  double sup_bound = 0;
  bool pass = true;
};
double dbar_pair2(const DiscreteSolution& a, const DiscreteSolution& b, const Space& s, double t, double u);
ComparisonReport compare_solutions(const DiscreteSolution& a, const DiscreteSolution& b, const Space& s,
                                   const Functional& f);

struct FlowCurve {
  std::vector<double> times;
  std::vector<Point> points;
  std::vector<double> energies;
  std::vector<double> speeds;
  std::vector<double> meshes;
  std::vector<double> gaps;
  double cauchy_gap = infinity;
  bool converged = false;
  bool cauchy = true;  // no successive gap grew beyond tolerance
  AprioriBounds apriori;  // from the finest run, x_* = x0

  double horizon() const { return times.back(); }
  double mesh() const { return meshes.back(); }
  // Geodesic interpolation between grid points.
  Point at(const Space& s, double t) const;
  std::size_t index_of(double t, double eps = 1e-9) const;
};

// One uniform run recorded only at every stride-th node.
struct SampledRun {
  std::vector<double> times;
  std::vector<Point> points;
  std::vector<double> energies;
  AprioriBounds apriori;
  InvariantReport invariants;
};
SampledRun run_sampled(const Functional& f, const Space& s, const Point& x0, double T, std::size_t steps,
                       std::size_t stride, const SolverOptions& opt = {});

// Symmetric differences d(x_{i-1}, x_{i+1}) / (t_{i+1} - t_{i-1}), one-sided at the ends.
std::vector<double> central_speeds(const Space& s, const std::vector<double>& t, const std::vector<Point>& x);

// Successive-gap based estimate of the distance from the last run to the limit.
double cauchy_estimate(const std::vector<double>& gaps);

FlowCurve converge_flow(const Functional& f, const Space& s, const Point& x0, double T,
                        const std::vector<double>& meshes, std::size_t output_points = 0);

struct ErrorBoundReport {
  double worst_slack = infinity;  // sqrt(RHS) - (d - a gap), minimized
  double worst_time = 0;
  double lambda_used = 0;
  bool lambda_clamped = false;
  double K = 2;
  bool pass = true;
};
ErrorBoundReport error_bound_check(const DiscreteSolution& sol, const Space& s, const Functional& f,
                                   const FlowCurve& flow, double a = 3.0);

struct ConvergenceTable {
  std::vector<double> meshes;
  std::vector<double> sup_errors;
  double order = 0;
  bool monotone = true;
};
// Sup over [0, T] of d(xbar(t), oracle(t)), sampled at five points per step.
double sup_error(const DiscreteSolution& sol, const Space& s, const std::function<Point(double)>& oracle);
// Least-squares slope of log(err) against log(mesh).
double fit_order(const std::vector<double>& meshes, const std::vector<double>& errors);
ConvergenceTable convergence_study(const Functional& f, const Space& s, const Point& x0, double T,
                                   const std::vector<double>& meshes, const std::function<Point(double)>& oracle);

struct KeyEstimate {
  double residual = 0;  // first displayed form, LHS - RHS
  double residual_weak = 0;  // second form
  double K = 2;
  double R = 0;
};
// Empty when the ball or smallness preconditions fail for this sample.
std::optional<KeyEstimate> key_estimate_residual(const Functional& f, const Space& s, const Point& x, double tau,
                                                 const Point& y);

}  // namespace mmflow

#endif
