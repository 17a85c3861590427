#ifndef mmflow_scenario_hpp
#define mmflow_scenario_hpp

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmflow/functional.hpp"
#include "mmflow/splitting.hpp"
#include "mmflow/space.hpp"

namespace mmflow {

constexpr int scenario_schema_version = 1;

// Schema or parse failure; `field` is a JSON pointer, `line` is 0 when unknown.
class config_error : public std::runtime_error {
public:
  config_error(const std::string& source, const std::string& field, int line, const std::string& what);
  std::string field;
  int line;
};

struct SuiteInfo {
  std::string name;
  std::string module;
  std::string anchor;
  std::string description;
};
const std::vector<SuiteInfo>& suite_catalog();
// Empty filter lists everything; an unknown module yields an empty list.
std::vector<SuiteInfo> list_suites(const std::string& module_filter = "");
bool known_module(const std::string& module);

// Closed-form description of a functional, kept for oracles.
struct FunctionalSpec {
  std::string type;  // half_sqdist, dist, sum
  Point anchor;
  double weight = 1;
  double ball = pi / 3;
  std::vector<std::pair<std::string, double>> terms;
};

struct Tolerances {
  double key = 1e-8;
  double commutativity = 1e-6;
  double apriori = 1e-9;
  double discrete_evi = 1e-8;
  double split_key = 1e-8;
  double flow = 1e-6;
  double stationary = 1e-4;
  double order_min = 0.5;
  double tk_target = 1e-3;
  std::optional<double> contraction_equality;
};

struct Samples {
  int key = 1000;
  int commutativity = 1000;
  int evi_times = 50;
  int evi_points = 20;
  int contraction_pairs = 10;
  int flow_evi = 100;
  int stationary = 50;
  int split_points = 20;
};

struct Scenario {
  std::string id;
  std::string source;
  Space space = Space::euclidean(1);
  std::map<std::string, FunctionalSpec> specs;
  std::map<std::string, Functional> functionals;
  std::string main;  // functional for single-functional suites
  std::optional<std::pair<std::string, std::string>> split;
  std::optional<BoundingBall> bounding_ball;
  std::optional<BoundingBall> region;  // sampling region
  Point x0;
  std::vector<Point> minimizers;
  double T = 1;
  std::vector<double> meshes;
  unsigned seed = 1;
  std::vector<std::string> suites;
  Tolerances tol;
  Samples samples;
};

Scenario parse_scenario(const std::string& text, const std::string& source = "<string>");
Scenario load_scenario(const std::string& path);

enum class CheckStatus { pass, fail, skipped };
std::string to_string(CheckStatus s);

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::optional<double> order;
};

struct CheckResult {
  std::string name;
  std::string anchor;
  CheckStatus status = CheckStatus::pass;
  double worst_residual = 0;
  double tolerance = 0;
  std::vector<std::string> flags;
  nlohmann::ordered_json details = nlohmann::ordered_json::object();
  std::vector<Table> tables;
  double seconds = 0;  // runtime, kept out of the report body
};

struct RunReport {
  std::string id;
  unsigned seed = 1;
  double tol_scale = 1;
  std::vector<CheckResult> checks;
  bool pass() const;
  nlohmann::ordered_json to_json() const;
};

struct RunOptions {
  double tol_scale = 1;
  std::optional<unsigned> seed;
};

RunReport run_scenario(const Scenario& sc, const RunOptions& opt = {});
CheckResult run_suite(const Scenario& sc, const std::string& suite, const RunOptions& opt = {});

// Writes <dir>/<id>.report.json, one <id>.<table>.tsv per table and the
// <id>.runtime.json sidecar; each file is written to a temporary name then renamed.
void write_report(const RunReport& rep, const std::string& dir, double total_seconds);
std::string format_table(const Table& t);

}  // namespace mmflow

#endif
