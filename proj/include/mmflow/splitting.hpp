#ifndef mmflow_splitting_hpp
#define mmflow_splitting_hpp

#include <cstddef>
#include <optional>
#include <vector>

#include "mmflow/functional.hpp"
#include "mmflow/scheme.hpp"
#include "mmflow/space.hpp"

namespace mmflow {

// Caller-declared bounded region; half-steps leaving it abort the run.
struct BoundingBall {
  Point center;
  double radius = 0;
};

struct SplitScheme {
  Partition partition;
  std::vector<Point> half;    // half[k] = prox of f1 from points[k-1]; half[0] = z0
  std::vector<Point> points;  // points[k] = prox of f2 from half[k]
  std::vector<double> phi1_half, phi2_half, phi1, phi2;
  std::vector<double> delta;      // delta[0] = 0
  std::vector<double> delta_sum;  // running sum
  std::optional<double> declared_budget;  // 2 max(L1, L2)^2 T when both are Lipschitz
  std::optional<BoundingBall> ball;

  std::size_t steps() const { return partition.steps(); }
  bool certified() const { return declared_budget.has_value(); }
};

// Lipschitz constant of f on the ball (or globally without one), when known.
std::optional<double> effective_lipschitz(const Functional& f, const Space& s,
                                          const std::optional<BoundingBall>& ball);

// Prox failures are rethrown as step_error with the half-step index 2k-1 or 2k.
SplitScheme run_split(const Functional& f1, const Functional& f2, const Space& s, const Point& z0,
                      const Partition& p, const std::optional<BoundingBall>& ball = std::nullopt,
                      const SolverOptions& opt = {});

struct SplitModuli {
  double lambda1_tau = 0, lambda2_tau = 0;
  double K_prime = 0;  // min{0, K(D)}; NaN when the diameter admits no K
  double D = 0;
};
SplitModuli split_moduli(const Functional& f1, const Functional& f2, const Space& s, const Partition& p,
                         const std::optional<BoundingBall>& ball = std::nullopt);

struct DeltaBudgetReport {
  double sum = 0;
  double budget = 0;   // 2 max(L1, L2)^2 T
  double worst_step_ratio = 0;  // max over half-steps of d / (2 L tau)
  bool nonnegative = true;
  bool pass = true;
};
DeltaBudgetReport delta_budget(const SplitScheme& scheme, const Space& s, double L1, double L2, double T);

struct SplitBoundReport {
  double energy_slack = infinity;  // (i): min over N of sum delta - max gain
  double chain_slack = infinity;   // (ii): min over l <= k, scaled by the bound
  bool chain_checked = false;      // needs declared lower bounds
  std::size_t pairs = 0;
  bool pass = true;
};
SplitBoundReport bound_check(const SplitScheme& scheme, const Functional& f1, const Functional& f2, const Space& s,
                             double T);

struct SplitKeyEstimate {
  double residual = 0;  // LHS - RHS of the exact intermediate inequality
  double K = 2;
};
// Empty when the Key-Lemma ball or smallness preconditions fail.
std::optional<SplitKeyEstimate> split_key_estimate_residual(const SplitScheme& scheme, const Functional& f1,
                                                            const Functional& f2, const Space& s, const Point& w,
                                                            std::size_t k);

struct TkConvergence {
  std::vector<double> meshes;
  std::vector<double> sup_errors;  // over grid times, against the reference flow
  std::vector<double> delta_sums;
  double order = 0;
  double reference_gap = 0;
  bool monotone = true;
  bool certified = false;  // every run carries an a priori budget
  bool pass = true;
};
// Reference: converge_flow on f1 + f2 at two levels below the finest mesh.
TkConvergence tk_convergence(const Functional& f1, const Functional& f2, const Space& s, const Point& z0, double T,
                             const std::vector<double>& meshes,
                             const std::optional<BoundingBall>& ball = std::nullopt);

}  // namespace mmflow

#endif
