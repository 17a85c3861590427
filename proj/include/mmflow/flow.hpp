#ifndef mmflow_flow_hpp
#define mmflow_flow_hpp

#include <cstddef>
#include <optional>
#include <vector>

#include "mmflow/functional.hpp"
#include "mmflow/scheme.hpp"
#include "mmflow/space.hpp"

namespace mmflow {

struct FlowOptions {
  std::size_t output_points = 0;  // 0: 64 per unit time, at least 16
  std::size_t max_steps = std::size_t{1} << 24;
  std::size_t min_levels = 3;
};

// Mesh ladder N = M 2^j grown until the Cauchy estimate is below tolerance.
// On exhaustion the curve comes back with converged = false.
FlowCurve flow(const Functional& f, const Space& s, const Point& x0, double T, double tolerance,
               const FlowOptions& opt = {});

// Assertion budget a * gap + b * quadrature, shared by every flow-level check.
struct Budget {
  double a = 3.0;
  double b = 1.0;
};

struct SemigroupReport {
  std::vector<double> s_values, t_values;
  std::vector<double> gaps;  // row-major over (s, t)
  std::vector<double> tols;
  double worst_excess = -infinity;
  bool pass = true;
};
SemigroupReport semigroup_check(const Functional& f, const Space& s, const Point& x0, double T, double tolerance,
                                int grid = 5, Budget budget = {});

struct ContractionReport {
  Point x0, y0;
  std::vector<double> times;
  std::vector<double> ratio;  // d(xi, zeta) / (e^{-lambda t} d(x0, y0))
  std::vector<double> tol;
  double lambda_used = 0;
  bool lambda_overridden = false;
  double max_ratio = 0;
  double worst_time = 0;
  double gap_x = 0, gap_y = 0;
  bool pass = true;
};
// lambda defaults to f.lambda; on the sphere pass the ball-restricted modulus.
ContractionReport contraction_check(const Functional& f, const Space& s, const Point& x0, const Point& y0, double T,
                                    double tolerance, std::optional<double> lambda = std::nullopt,
                                    Budget budget = {});

struct DiscreteContractionReport {
  double lambda_tau = 0, lambda_minus = 0, lambda_plus = 0;
  double K_prime = 0;  // min over steps of min{0, K}
  double worst_step_residual = -infinity;  // exact intermediate inequality
  std::size_t worst_step = 0;
  std::size_t skipped_steps = 0;  // no admissible Key-Lemma radius
  double fitted_c = 0;  // max excess of the summed form over sqrt(|tau|); reported only
  bool lamtau_ok = true;
  bool pass = true;
};
DiscreteContractionReport discrete_contraction_check(const Functional& f, const Space& s, const Point& x0,
                                                     const Point& y0, const Partition& p);

std::vector<double> default_eps();

struct EviReport {
  std::vector<double> times;
  std::vector<double> residuals;  // extrapolated LHS - phi(y)
  std::vector<double> tols;
  std::size_t skipped = 0;
  double worst_excess = -infinity;
  bool pass = true;
};
// Forward quotients come from short flows started at the curve points; by the
// semigroup property they are the quotients of the curve itself.
EviReport evi_check(const FlowCurve& curve, const Functional& f, const Space& s, const Point& y,
                    const std::vector<double>& times, const std::vector<double>& eps = default_eps(),
                    std::size_t substeps = 64);

struct IntegratedEviReport {
  double lhs = 0;
  double rhs = 0, tol = 0;    // integral form
  double rhs2 = 0, tol2 = 0;  // (1 - e^{-lambda T}) / lambda form
  double quadrature = 0;
  bool pass = true;
};
IntegratedEviReport integrated_evi_check(const FlowCurve& curve, const Functional& f, const Space& s, const Point& y,
                                         double T, Budget budget = {});

struct DissipationReport {
  double S = 0, T = 0;
  double drop = 0;      // phi(xi(S)) - phi(xi(T))
  double integral = 0;  // (1/2) int |xi'|^2 + |grad phi|^2
  double residual = 0;  // drop - integral, signed
  double tol = 0;
  bool within = true;
};
DissipationReport dissipation_check(const FlowCurve& curve, const Functional& f, const Space& s, double S, double T,
                                    Budget budget = {});

struct DissipationStudy {
  std::vector<double> meshes;
  std::vector<double> residuals;  // absolute values
  double order = 0;
  bool decreasing = true;
};
// Uses the nodes of one discrete solution per mesh as the flow grid.
DissipationStudy dissipation_study(const Functional& f, const Space& s, const Point& x0, double S, double T,
                                   const std::vector<double>& meshes);

struct StationaryReport {
  double slope = 0;
  double max_move = 0;
  double move_tol = 0;
  double quotient_sup = 0;
  bool slope_zero = false;
  bool flow_fixed = false;
  bool quotient_bounded = false;
  bool agree = false;
};
StationaryReport stationary_check(const Functional& f, const Space& s, const Point& x, double T, double tol = 1e-6,
                                  unsigned seed = 1);

struct SlopeDecayReport {
  std::vector<double> times;
  std::vector<double> slopes;
  double lambda_used = 0;
  bool lambda_clamped = false;
  double pointwise_worst = -infinity;   // from x0 to xi(t), all grid t
  double integrated_worst = -infinity;  // from xi(S) to xi(t), t > S
  double tol = 0;
  bool trend_to_zero = false;  // last slope below 1e-3 of the first, or below tol
  bool pass = true;
};
SlopeDecayReport slope_decay_check(const FlowCurve& curve, const Functional& f, const Space& s, double S, double T,
                                   Budget budget = {});

struct ChainedFlow {
  FlowCurve curve;
  std::vector<double> restart_times;
  std::vector<Point> centers;
  std::vector<double> leg_durations;  // completed legs only, boundary time interpolated
  std::vector<double> leg_C;
  std::vector<double> leg_gaps;
  double worst_leg_slack = infinity;  // duration - (r^2)/(2 C)
  bool legs_ok = true;
};
ChainedFlow flow_ball_chained(const Functional& f, const Space& s, const Point& x0, double T, double tolerance,
                              double radius = pi / 6, const FlowOptions& opt = {});

struct ChainAgreement {
  double max_gap = 0;
  double tol = 0;
  bool pass = true;
};
ChainAgreement compare_chained(const ChainedFlow& chained, const FlowCurve& direct, const Space& s,
                               double lambda, Budget budget = {});

}  // namespace mmflow

#endif
