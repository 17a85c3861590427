#include "mmflow/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

#include "mmflow/flow.hpp"
#include "mmflow/scheme.hpp"

namespace mmflow {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

config_error::config_error(const std::string& source, const std::string& field, int line, const std::string& what)
    : std::runtime_error(source + (line > 0 ? ":" + std::to_string(line) : "") + ": " +
                         (field.empty() ? "" : field + ": ") + what),
      field(field),
      line(line) {}

const std::vector<SuiteInfo>& suite_catalog() {
  static const std::vector<SuiteInfo> catalog = {
      {"commutativity", "geodesic_spaces", "Commutativity of first variations",
       "first-variation commutativity gap after extrapolation on random triples"},
      {"key_estimate", "minimizing_movements", "Key lemma",
       "one-step variational inequality on random (x, tau, y) samples"},
      {"apriori", "minimizing_movements", "A priori estimates",
       "summed energy inequality and distance chain on every generated run"},
      {"discrete_evi", "minimizing_movements", "Discrete evolution variational inequality",
       "interpolant residual at interior times against admissible test points"},
      {"convergence", "minimizing_movements", "Unique limits of discrete solutions",
       "sup-error along the mesh ladder with fitted order"},
      {"error_bound", "minimizing_movements", "Error estimate",
       "distance of each discrete solution to the limit flow against the displayed bound"},
      {"semigroup", "gradient_flow", "Semigroup property",
       "G(s, G(t, x)) against G(s + t, x) on a time grid"},
      {"contraction", "gradient_flow", "Contraction property",
       "flow distance ratio against e^{-lambda t} on random start pairs, with the discrete form"},
      {"evi", "gradient_flow", "Evolution variational inequality",
       "forward-quotient EVI residual and its integrated form on random samples"},
      {"dissipation", "gradient_flow", "Energy dissipation identity",
       "energy identity on the flow and its residual along the mesh ladder"},
      {"stationary", "gradient_flow", "Characterization of stationary points",
       "agreement of slope, flow and quotient predicates"},
      {"slope_decay", "gradient_flow", "Large time behavior",
       "slope bounds along the flow"},
      {"ball_chained", "gradient_flow", "Gradient flows on spheres of large diameter",
       "flow restarted on small balls against the direct flow"},
      {"tk_convergence", "trotter_kato", "Trotter-Kato product formula",
       "splitting scheme against the sum flow, with the delta budget and a priori bounds"},
      {"split_key", "trotter_kato", "Splitting key estimate",
       "exact intermediate inequality on every step against test points"},
  };
  return catalog;
}

bool known_module(const std::string& module) {
  for (const auto& s : suite_catalog())
    if (s.module == module) return true;
  return false;
}

std::vector<SuiteInfo> list_suites(const std::string& module_filter) {
  std::vector<SuiteInfo> out;
  for (const auto& s : suite_catalog())
    if (module_filter.empty() || s.module == module_filter) out.push_back(s);
  return out;
}

namespace {

const SuiteInfo* find_suite(const std::string& name) {
  for (const auto& s : suite_catalog())
    if (s.name == name) return &s;
  return nullptr;
}

std::size_t suite_index(const std::string& name) {
  const auto& c = suite_catalog();
  for (std::size_t i = 0; i < c.size(); ++i)
    if (c[i].name == name) return i;
  return c.size();
}

// Field errors carry the line of the first occurrence of the member name,
// which is exact for the flat configs this reads.
class Reader {
public:
  Reader(const std::string& text, std::string source) : text_(text), source_(std::move(source)) {}

  [[noreturn]] void fail(const std::string& path, const std::string& what) const {
    throw config_error(source_, path, line_of(path), what);
  }

  int line_of(const std::string& path) const {
    std::size_t from = 0;
    std::size_t start = 1;
    int line = 0;
    while (start < path.size()) {
      std::size_t end = path.find('/', start);
      if (end == std::string::npos) end = path.size();
      const std::string seg = path.substr(start, end - start);
      start = end + 1;
      if (!seg.empty() && std::all_of(seg.begin(), seg.end(), ::isdigit)) continue;
      const std::size_t at = text_.find('"' + seg + '"', from);
      if (at == std::string::npos) break;
      from = at;
      line = 1 + static_cast<int>(std::count(text_.begin(), text_.begin() + static_cast<long>(at), '\n'));
    }
    return line;
  }

  const json& member(const json& obj, const std::string& key, const std::string& path) const {
    if (!obj.contains(key)) fail(path + "/" + key, "missing required field");
    return obj.at(key);
  }

  double number(const json& j, const std::string& path) const {
    if (!j.is_number()) fail(path, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) fail(path, "expected a finite number");
    return v;
  }

  double positive(const json& j, const std::string& path) const {
    const double v = number(j, path);
    if (!(v > 0)) fail(path, "expected a positive number");
    return v;
  }

  int count(const json& j, const std::string& path) const {
    if (!j.is_number_integer() || j.get<long long>() < 1 || j.get<long long>() > 100000)
      fail(path, "expected an integer in [1, 100000]");
    return j.get<int>();
  }

  std::string string(const json& j, const std::string& path) const {
    if (!j.is_string()) fail(path, "expected a string");
    return j.get<std::string>();
  }

  void only(const json& obj, const std::string& path, std::initializer_list<const char*> keys) const {
    if (!obj.is_object()) fail(path, "expected an object");
    for (const auto& [k, v] : obj.items()) {
      bool ok = false;
      for (const char* key : keys) ok = ok || k == key;
      if (!ok) fail(path + "/" + k, "unknown field");
    }
  }

  const std::string& source() const { return source_; }

private:
  const std::string& text_;
  std::string source_;
};

Space parse_space(const Reader& r, const json& j) {
  r.only(j, "/space", {"kind", "dimension", "legs"});
  const std::string kind = r.string(r.member(j, "kind", "/space"), "/space/kind");
  try {
    if (kind == "euclidean" || kind == "sphere") {
      const json& d = r.member(j, "dimension", "/space");
      if (!d.is_number_integer() || d.get<int>() < 1 || d.get<int>() > 64)
        r.fail("/space/dimension", "expected an integer in [1, 64]");
      return kind == "sphere" ? Space::sphere(d.get<int>()) : Space::euclidean(d.get<int>());
    }
    if (kind == "star_tree" || kind == "startree") {
      const json& legs = r.member(j, "legs", "/space");
      if (!legs.is_array() || legs.size() < 2) r.fail("/space/legs", "expected at least two leg lengths");
      std::vector<double> L;
      for (std::size_t i = 0; i < legs.size(); ++i) L.push_back(r.positive(legs[i], "/space/legs/" + std::to_string(i)));
      return Space::star_tree(L);
    }
  } catch (const std::invalid_argument& e) {
    r.fail("/space", e.what());
  }
  r.fail("/space/kind", "expected euclidean, sphere or star_tree");
}

Point parse_point(const Reader& r, const Space& s, const json& j, const std::string& path) {
  try {
    switch (s.kind()) {
      case SpaceKind::euclidean: {
        if (!j.is_array() || j.size() != static_cast<std::size_t>(s.dimension()))
          r.fail(path, "expected " + std::to_string(s.dimension()) + " coordinates");
        std::vector<double> c;
        for (std::size_t i = 0; i < j.size(); ++i) c.push_back(r.number(j[i], path + "/" + std::to_string(i)));
        return s.point(c);
      }
      case SpaceKind::sphere: {
        if (j.is_object()) {
          r.only(j, path, {"colatitude", "longitude"});
          if (s.dimension() != 2) r.fail(path, "polar coordinates need the 2-sphere");
          const double a = r.number(r.member(j, "colatitude", path), path + "/colatitude");
          const double b = j.contains("longitude") ? r.number(j["longitude"], path + "/longitude") : 0.0;
          return s.point({std::sin(a) * std::cos(b), std::sin(a) * std::sin(b), std::cos(a)});
        }
        if (!j.is_array() || j.size() != static_cast<std::size_t>(s.dimension() + 1))
          r.fail(path, "expected " + std::to_string(s.dimension() + 1) + " coordinates or {colatitude, longitude}");
        std::vector<double> c;
        for (std::size_t i = 0; i < j.size(); ++i) c.push_back(r.number(j[i], path + "/" + std::to_string(i)));
        return s.point(c);
      }
      case SpaceKind::star_tree: {
        if (j.is_string() && j.get<std::string>() == "hub") return s.hub();
        r.only(j, path, {"leg", "offset"});
        const json& leg = r.member(j, "leg", path);
        if (!leg.is_number_integer() || leg.get<int>() < 0 || leg.get<std::size_t>() >= s.legs().size())
          r.fail(path + "/leg", "expected a leg index below " + std::to_string(s.legs().size()));
        const double off = r.number(r.member(j, "offset", path), path + "/offset");
        if (off < 0 || off > s.legs()[leg.get<std::size_t>()]) r.fail(path + "/offset", "offset outside the leg");
        return s.tree_point(leg.get<int>(), off);
      }
    }
  } catch (const config_error&) {
    throw;
  } catch (const std::exception& e) {
    r.fail(path, e.what());
  }
  r.fail(path, "unsupported space");
}

FunctionalSpec parse_spec(const Reader& r, const Space& s, const json& j, const std::string& path) {
  FunctionalSpec spec;
  spec.type = r.string(r.member(j, "type", path), path + "/type");
  if (spec.type == "half_sqdist" || spec.type == "dist") {
    r.only(j, path, {"type", "anchor", "weight", "ball_radius", "lambda", "lipschitz", "lower_bound"});
    spec.anchor = parse_point(r, s, r.member(j, "anchor", path), path + "/anchor");
    if (j.contains("weight")) {
      if (spec.type == "dist") r.fail(path + "/weight", "dist takes no weight; use a sum");
      spec.weight = r.positive(j["weight"], path + "/weight");
    }
    if (j.contains("ball_radius")) spec.ball = r.positive(j["ball_radius"], path + "/ball_radius");
  } else if (spec.type == "sum") {
    r.only(j, path, {"type", "terms", "lambda", "lipschitz", "lower_bound"});
    const json& terms = r.member(j, "terms", path);
    if (!terms.is_array() || terms.size() < 2) r.fail(path + "/terms", "expected at least two terms");
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const std::string p = path + "/terms/" + std::to_string(i);
      r.only(terms[i], p, {"ref", "weight"});
      const std::string ref = r.string(r.member(terms[i], "ref", p), p + "/ref");
      const double w = terms[i].contains("weight") ? r.number(terms[i]["weight"], p + "/weight") : 1.0;
      spec.terms.emplace_back(ref, w);
    }
  } else {
    r.fail(path + "/type", "expected half_sqdist, dist or sum");
  }
  return spec;
}

void build_functionals(const Reader& r, Scenario& sc, const json& defs) {
  std::set<std::string> visiting;
  std::function<const Functional&(const std::string&, const std::string&)> build =
      [&](const std::string& name, const std::string& from) -> const Functional& {
    if (auto it = sc.functionals.find(name); it != sc.functionals.end()) return it->second;
    if (!sc.specs.count(name)) r.fail(from, "unknown functional '" + name + "'");
    if (!visiting.insert(name).second) r.fail(from, "cyclic reference to '" + name + "'");
    const FunctionalSpec& spec = sc.specs.at(name);
    const std::string path = "/functionals/" + name;
    Functional f;
    try {
      if (spec.type == "half_sqdist") {
        f = half_sqdist(sc.space, spec.anchor, spec.weight, spec.ball);
      } else if (spec.type == "dist") {
        f = dist_to(sc.space, spec.anchor, spec.ball);
      } else {
        for (std::size_t i = 0; i < spec.terms.size(); ++i) {
          const auto& [ref, w] = spec.terms[i];
          const Functional& g = build(ref, path + "/terms/" + std::to_string(i) + "/ref");
          if (i == 0) continue;
          if (i == 1) {
            const Functional& g0 = sc.functionals.at(spec.terms[0].first);
            f = combine(sc.space, spec.terms[0].second, g0, w, g);
          } else {
            f = combine(sc.space, 1.0, f, w, g);
          }
        }
      }
    } catch (const config_error&) {
      throw;
    } catch (const std::exception& e) {
      r.fail(path, e.what());
    }
    const json& j = defs.at(name);
    if (j.contains("lambda")) f.lambda = r.number(j["lambda"], path + "/lambda");
    if (j.contains("lipschitz")) f.lipschitz_bound = r.positive(j["lipschitz"], path + "/lipschitz");
    if (j.contains("lower_bound")) f.lower_bound = r.number(j["lower_bound"], path + "/lower_bound");
    if (j.contains("lambda") || j.contains("lower_bound"))
      f.tau_star = default_tau_star(sc.space, f.lambda, f.lower_bound.has_value(), spec.ball);
    visiting.erase(name);
    return sc.functionals.emplace(name, std::move(f)).first->second;
  };
  for (const auto& [name, spec] : sc.specs) build(name, "/functionals/" + name);
}

std::optional<BoundingBall> parse_ball(const Reader& r, const Space& s, const json& j, const std::string& path) {
  r.only(j, path, {"center", "radius"});
  return BoundingBall{parse_point(r, s, r.member(j, "center", path), path + "/center"),
                      r.positive(r.member(j, "radius", path), path + "/radius")};
}

}  // namespace

Scenario parse_scenario(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t at = std::min<std::size_t>(e.byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(at), '\n'));
    throw config_error(source, "", line, std::string("malformed JSON: ") + e.what());
  }
  const Reader r(text, source);
  r.only(j, "", {"schema_version", "id", "space", "functionals", "functional", "split", "bounding_ball", "region",
                 "x0", "minimizers", "T", "meshes", "seed", "suites", "tolerances", "samples"});
  const json& ver = r.member(j, "schema_version", "");
  if (!ver.is_number_integer() || ver.get<int>() != scenario_schema_version)
    r.fail("/schema_version", "unsupported schema version (expected " + std::to_string(scenario_schema_version) + ")");

  Scenario sc;
  sc.source = source;
  sc.id = r.string(r.member(j, "id", ""), "/id");
  if (sc.id.empty() || sc.id.find_first_not_of("abcdefghijklmnopqrstuvwxyz0123456789-_") != std::string::npos)
    r.fail("/id", "expected a non-empty id of [a-z0-9-_]");
  sc.space = parse_space(r, r.member(j, "space", ""));

  const json& defs = r.member(j, "functionals", "");
  if (!defs.is_object() || defs.empty()) r.fail("/functionals", "expected a non-empty object");
  for (const auto& [name, def] : defs.items()) sc.specs[name] = parse_spec(r, sc.space, def, "/functionals/" + name);
  build_functionals(r, sc, defs);

  if (j.contains("functional")) {
    sc.main = r.string(j["functional"], "/functional");
    if (!sc.functionals.count(sc.main)) r.fail("/functional", "unknown functional '" + sc.main + "'");
  } else if (sc.functionals.size() == 1) {
    sc.main = sc.functionals.begin()->first;
  }
  if (j.contains("split")) {
    const json& sp = j["split"];
    if (!sp.is_array() || sp.size() != 2) r.fail("/split", "expected two functional names");
    const std::string a = r.string(sp[0], "/split/0"), b = r.string(sp[1], "/split/1");
    if (!sc.functionals.count(a)) r.fail("/split/0", "unknown functional '" + a + "'");
    if (!sc.functionals.count(b)) r.fail("/split/1", "unknown functional '" + b + "'");
    sc.split = std::make_pair(a, b);
  }
  if (j.contains("bounding_ball")) sc.bounding_ball = parse_ball(r, sc.space, j["bounding_ball"], "/bounding_ball");
  if (j.contains("region")) sc.region = parse_ball(r, sc.space, j["region"], "/region");
  if (sc.space.kind() == SpaceKind::sphere && !sc.region) r.fail("/region", "a sampling region is required on the sphere");

  sc.x0 = parse_point(r, sc.space, r.member(j, "x0", ""), "/x0");
  if (j.contains("minimizers")) {
    if (!j["minimizers"].is_array()) r.fail("/minimizers", "expected an array of points");
    for (std::size_t i = 0; i < j["minimizers"].size(); ++i)
      sc.minimizers.push_back(parse_point(r, sc.space, j["minimizers"][i], "/minimizers/" + std::to_string(i)));
  }
  if (j.contains("T")) sc.T = r.positive(j["T"], "/T");
  if (j.contains("meshes")) {
    const json& m = j["meshes"];
    if (!m.is_array() || m.size() < 2) r.fail("/meshes", "expected at least two meshes");
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double h = r.positive(m[i], "/meshes/" + std::to_string(i));
      if (!sc.meshes.empty() && !(h < sc.meshes.back()))
        r.fail("/meshes/" + std::to_string(i), "mesh ladder must be strictly decreasing");
      if (h > sc.T) r.fail("/meshes/" + std::to_string(i), "mesh exceeds the horizon");
      sc.meshes.push_back(h);
    }
  } else {
    for (int k = 0; k <= 5; ++k) sc.meshes.push_back(0.1 * std::ldexp(1.0, -k));
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() || j["seed"].get<unsigned long long>() > 0xffffffffULL)
      r.fail("/seed", "expected an unsigned 32-bit integer");
    sc.seed = j["seed"].get<unsigned>();
  }

  const json& suites = r.member(j, "suites", "");
  if (!suites.is_array() || suites.empty()) r.fail("/suites", "expected a non-empty array of suite names");
  for (std::size_t i = 0; i < suites.size(); ++i) {
    const std::string p = "/suites/" + std::to_string(i);
    const std::string name = r.string(suites[i], p);
    if (!find_suite(name)) r.fail(p, "unknown suite '" + name + "'");
    if (std::find(sc.suites.begin(), sc.suites.end(), name) != sc.suites.end()) r.fail(p, "duplicate suite");
    const std::string& module = find_suite(name)->module;
    if (module == "trotter_kato" && !sc.split) r.fail(p, "suite needs a split pair");
    if (module != "trotter_kato" && sc.main.empty()) r.fail("/functional", "suite '" + name + "' needs a main functional");
    sc.suites.push_back(name);
  }

  if (j.contains("tolerances")) {
    const json& t = j["tolerances"];
    r.only(t, "/tolerances", {"key", "commutativity", "apriori", "discrete_evi", "split_key", "flow", "stationary",
                              "order_min", "tk_target", "contraction_equality"});
    auto set = [&](const char* key, double& v) {
      if (t.contains(key)) v = r.positive(t[key], std::string("/tolerances/") + key);
    };
    set("key", sc.tol.key);
    set("commutativity", sc.tol.commutativity);
    set("apriori", sc.tol.apriori);
    set("discrete_evi", sc.tol.discrete_evi);
    set("split_key", sc.tol.split_key);
    set("flow", sc.tol.flow);
    set("stationary", sc.tol.stationary);
    set("order_min", sc.tol.order_min);
    set("tk_target", sc.tol.tk_target);
    if (t.contains("contraction_equality"))
      sc.tol.contraction_equality = r.positive(t["contraction_equality"], "/tolerances/contraction_equality");
  }
  if (j.contains("samples")) {
    const json& t = j["samples"];
    r.only(t, "/samples", {"key", "commutativity", "evi_times", "evi_points", "contraction_pairs", "flow_evi",
                           "stationary", "split_points"});
    auto set = [&](const char* key, int& v) {
      if (t.contains(key)) v = r.count(t[key], std::string("/samples/") + key);
    };
    set("key", sc.samples.key);
    set("commutativity", sc.samples.commutativity);
    set("evi_times", sc.samples.evi_times);
    set("evi_points", sc.samples.evi_points);
    set("contraction_pairs", sc.samples.contraction_pairs);
    set("flow_evi", sc.samples.flow_evi);
    set("stationary", sc.samples.stationary);
    set("split_points", sc.samples.split_points);
  }
  return sc;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error(path, "", 0, "cannot read file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), path);
}

std::string to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::pass: return "pass";
    case CheckStatus::fail: return "fail";
    case CheckStatus::skipped: return "skipped";
  }
  return "fail";
}

namespace {

struct Shared {
  std::optional<FlowCurve> main_flow;
};

struct Ctx {
  const Scenario& sc;
  double scale;
  Budget budget;
  std::mt19937_64 rng;
  Shared* shared;

  const Space& s() const { return sc.space; }
  const Functional& f() const { return sc.functionals.at(sc.main); }

  Point sample(const std::optional<BoundingBall>& region) {
    if (region) return sc.space.random_in_ball(region->center, region->radius, rng);
    return sc.space.random_point(rng);
  }
  Point sample() { return sample(sc.region); }
  double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }

  const FlowCurve& main_flow() {
    if (!shared->main_flow) shared->main_flow = flow(f(), s(), sc.x0, sc.T, sc.tol.flow);
    return *shared->main_flow;
  }
};

// Closed-form flow of a single anchor: quadratics contract the distance by
// e^{-w t}, distances travel at unit speed.
std::optional<std::function<Point(double)>> oracle_for(const Scenario& sc, const std::string& name, const Point& x0) {
  const Space& s = sc.space;
  const FunctionalSpec& spec = sc.specs.at(name);
  const Functional& f = sc.functionals.at(name);
  std::optional<QuadraticForm> q;
  if (spec.type == "half_sqdist") q = QuadraticForm{spec.anchor, spec.weight, 0};
  else if (spec.type == "sum" && s.kind() == SpaceKind::euclidean && f.quadratic) q = f.quadratic;
  if (q) {
    const double d0 = distance(s, x0, q->anchor);
    if (s.kind() == SpaceKind::sphere && d0 >= pi - 1e-9) return std::nullopt;
    return [&s, x0, q](double t) { return geodesic_point(s, x0, q->anchor, -std::expm1(-q->weight * t)); };
  }
  if (spec.type == "dist") {
    const double d0 = distance(s, x0, spec.anchor);
    if (s.kind() == SpaceKind::sphere && d0 >= pi - 1e-9) return std::nullopt;
    const Point p = spec.anchor;
    return [&s, x0, p, d0](double t) { return d0 <= t ? p : geodesic_point(s, x0, p, t / d0); };
  }
  return std::nullopt;
}

ojson num(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

void finish(CheckResult& r, bool ok) { r.status = ok ? CheckStatus::pass : CheckStatus::fail; }

void suite_key_estimate(Ctx& c, CheckResult& r) {
  const Functional& f = c.f();
  const int n = c.sc.samples.key;
  const double tau_max = 0.999 * std::min(1.0, f.tau_star / 8);
  int evaluated = 0, skipped = 0;
  double worst = -infinity;
  for (int attempt = 0; evaluated < n && attempt < 50 * n; ++attempt) {
    const Point x = c.sample(), y = c.sample();
    const double tau = tau_max * std::exp(c.uniform(std::log(1e-3), 0.0));
    const auto k = key_estimate_residual(f, c.s(), x, tau, y);
    if (!k) {
      ++skipped;
      continue;
    }
    ++evaluated;
    worst = std::max({worst, k->residual, k->residual_weak});
  }
  r.tolerance = c.sc.tol.key * c.scale;
  r.worst_residual = worst;
  r.details["samples"] = evaluated;
  r.details["skipped"] = skipped;
  finish(r, evaluated >= n && worst <= r.tolerance);
}

void suite_commutativity(Ctx& c, CheckResult& r) {
  const int n = c.sc.samples.commutativity;
  r.tolerance = c.sc.tol.commutativity * c.scale;
  int evaluated = 0, skipped = 0, failed = 0;
  double worst = 0;
  for (int attempt = 0; evaluated < n && attempt < 50 * n; ++attempt) {
    const Point x = c.sample(), y = c.sample(), z = c.sample();
    try {
      const CommutativityReport rep = check_commutativity(c.s(), x, y, z, default_steps(), r.tolerance);
      ++evaluated;
      worst = std::max(worst, rep.gap);
      if (!rep.pass) ++failed;
    } catch (const geometry_error&) {
      ++skipped;
    }
  }
  r.worst_residual = worst;
  r.details["samples"] = evaluated;
  r.details["skipped"] = skipped;
  r.details["failed"] = failed;
  finish(r, evaluated >= n && failed == 0);
}

void suite_apriori(Ctx& c, CheckResult& r) {
  r.tolerance = c.sc.tol.apriori * c.scale;
  std::vector<Point> starts = {c.sc.x0, c.sample(), c.sample()};
  double worst = -infinity;
  int runs = 0, failed = 0;
  for (double tau : c.sc.meshes)
    for (const Point& x : starts) {
      const DiscreteSolution sol = run_scheme(c.f(), c.s(), x, Partition::uniform(c.sc.T, tau));
      const AprioriBounds b = apriori_check(sol, c.s(), x, c.sc.T, r.tolerance);
      const InvariantReport inv = check_invariants(sol, r.tolerance);
      ++runs;
      worst = std::max({worst, -b.summed_slack, -b.chain_slack, -inv.energy_slack, -inv.step_slack});
      if (!b.pass || !inv.pass) ++failed;
    }
  r.worst_residual = worst;
  r.details["runs"] = runs;
  r.details["failed"] = failed;
  finish(r, failed == 0);
}

void suite_discrete_evi(Ctx& c, CheckResult& r) {
  r.tolerance = c.sc.tol.discrete_evi * c.scale;
  const DiscreteSolution sol = run_scheme(c.f(), c.s(), c.sc.x0, Partition::uniform(c.sc.T, c.sc.meshes.front()));
  const int nt = c.sc.samples.evi_times, ny = c.sc.samples.evi_points;
  double worst = -infinity;
  int evaluated = 0, short_times = 0;
  for (int i = 0; i < nt; ++i) {
    double t;
    do t = c.uniform(0.0, sol.partition.horizon());
    while (sol.partition.is_node(t, 1e-9));
    int got = 0;
    for (int attempt = 0; got < ny && attempt < 20 * ny; ++attempt) {
      const auto res = discrete_evi_residual(sol, c.s(), c.f(), c.sample(), t);
      if (!res) continue;
      ++got;
      worst = std::max(worst, *res);
    }
    evaluated += got;
    if (got < ny) ++short_times;
  }
  r.worst_residual = worst;
  r.details["mesh"] = c.sc.meshes.front();
  r.details["samples"] = evaluated;
  r.details["times_short_of_points"] = short_times;
  finish(r, short_times == 0 && worst <= r.tolerance);
}

void suite_convergence(Ctx& c, CheckResult& r) {
  auto oracle = oracle_for(c.sc, c.sc.main, c.sc.x0);
  std::function<Point(double)> ref;
  if (oracle) {
    ref = *oracle;
  } else {
    r.flags.push_back("reference_oracle");
    const FlowCurve& fc = c.main_flow();
    ref = [&fc, &c](double t) { return fc.at(c.s(), t); };
  }
  const ConvergenceTable t = convergence_study(c.f(), c.s(), c.sc.x0, c.sc.T, c.sc.meshes, ref);
  Table tab{"convergence", {"mesh", "sup_error"}, {}, t.order};
  for (std::size_t j = 0; j < t.meshes.size(); ++j) tab.rows.push_back({t.meshes[j], t.sup_errors[j]});
  r.tables.push_back(tab);
  r.tolerance = c.sc.tol.order_min;
  r.worst_residual = t.sup_errors.back();
  r.details["order"] = num(t.order);
  r.details["monotone"] = t.monotone;
  finish(r, t.monotone && t.order >= c.sc.tol.order_min);
}

void suite_error_bound(Ctx& c, CheckResult& r) {
  const FlowCurve& fc = c.main_flow();
  double worst = -infinity;
  int failed = 0;
  bool clamped = false;
  ojson rows = ojson::array();
  for (double tau : c.sc.meshes) {
    const DiscreteSolution sol = run_scheme(c.f(), c.s(), c.sc.x0, Partition::uniform(c.sc.T, tau));
    const ErrorBoundReport e = error_bound_check(sol, c.s(), c.f(), fc, c.budget.a);
    worst = std::max(worst, -e.worst_slack);
    clamped = clamped || e.lambda_clamped;
    if (!e.pass) ++failed;
    rows.push_back({{"mesh", tau}, {"worst_slack", num(e.worst_slack)}, {"worst_time", e.worst_time}});
  }
  if (clamped) r.flags.push_back("lambda_clamped");
  r.worst_residual = worst;
  r.tolerance = 0;
  r.details["flow_gap"] = num(fc.cauchy_gap);
  r.details["runs"] = rows;
  finish(r, failed == 0 && fc.converged);
}

void suite_semigroup(Ctx& c, CheckResult& r) {
  const SemigroupReport g = semigroup_check(c.f(), c.s(), c.sc.x0, c.sc.T, c.sc.tol.flow, 5, c.budget);
  r.worst_residual = g.worst_excess;
  r.tolerance = 0;
  r.details["pairs"] = g.gaps.size();
  r.details["max_gap"] = *std::max_element(g.gaps.begin(), g.gaps.end());
  finish(r, g.pass);
}

void suite_contraction(Ctx& c, CheckResult& r) {
  const Functional& f = c.f();
  std::optional<double> lambda;
  if (c.s().kind() == SpaceKind::sphere) {
    const double sampled = check_lambda_convexity(f, c.s(), 2000, static_cast<unsigned>(c.rng()),
                                                  BallRegion{c.sc.region->center, c.sc.region->radius});
    lambda = std::min(sampled, f.lambda);
    r.details["lambda_sampled"] = num(sampled);
    r.details["lambda_declared"] = f.lambda;
  }
  const int n = c.sc.samples.contraction_pairs;
  double worst_excess = -infinity, worst_eq = 0, max_ratio = 0;
  int failed = 0, discrete_failed = 0;
  for (int i = 0; i < n; ++i) {
    const Point x = c.sample(), y = c.sample();
    const ContractionReport rep = contraction_check(f, c.s(), x, y, c.sc.T, c.sc.tol.flow, lambda, c.budget);
    for (std::size_t k = 0; k < rep.ratio.size(); ++k) {
      worst_excess = std::max(worst_excess, rep.ratio[k] - 1 - rep.tol[k]);
      worst_eq = std::max(worst_eq, std::abs(rep.ratio[k] - 1));
    }
    max_ratio = std::max(max_ratio, rep.max_ratio);
    if (!rep.pass) ++failed;
    const DiscreteContractionReport d =
        discrete_contraction_check(f, c.s(), x, y, Partition::uniform(c.sc.T, c.sc.meshes.front()));
    if (!d.pass) ++discrete_failed;
  }
  bool ok = failed == 0 && discrete_failed == 0;
  r.worst_residual = worst_excess;
  r.tolerance = 0;
  if (c.sc.tol.contraction_equality) {
    const double eq = *c.sc.tol.contraction_equality * c.scale;
    r.details["equality_deviation"] = worst_eq;
    r.details["equality_tolerance"] = eq;
    ok = ok && worst_eq <= eq;
  }
  r.details["pairs"] = n;
  r.details["max_ratio"] = max_ratio;
  r.details["failed"] = failed;
  r.details["discrete_failed"] = discrete_failed;
  finish(r, ok);
}

void suite_evi(Ctx& c, CheckResult& r) {
  const FlowCurve& fc = c.main_flow();
  const int n = c.sc.samples.flow_evi;
  std::uniform_int_distribution<std::size_t> pick(1, fc.times.size() - 1);
  double worst = -infinity, worst_int = -infinity;
  int failed = 0, int_failed = 0;
  std::size_t skipped = 0;
  for (int i = 0; i < n; ++i) {
    const double t = fc.times[pick(c.rng)];
    const Point y = c.sample();
    const EviReport e = evi_check(fc, c.f(), c.s(), y, {t});
    skipped += e.skipped;
    worst = std::max(worst, e.worst_excess);
    if (!e.pass) ++failed;
    const IntegratedEviReport ie = integrated_evi_check(fc, c.f(), c.s(), y, c.sc.T, c.budget);
    worst_int = std::max({worst_int, ie.lhs - ie.rhs - ie.tol, ie.lhs - ie.rhs2 - ie.tol2});
    if (!ie.pass) ++int_failed;
  }
  r.worst_residual = worst;
  r.tolerance = 0;
  r.details["samples"] = n;
  r.details["skipped"] = skipped;
  r.details["failed"] = failed;
  r.details["integrated_worst_excess"] = num(worst_int);
  r.details["integrated_failed"] = int_failed;
  finish(r, failed == 0 && int_failed == 0 && skipped == 0);
}

void suite_dissipation(Ctx& c, CheckResult& r) {
  const FlowCurve& fc = c.main_flow();
  const double S = fc.times[(fc.times.size() - 1) / 4];
  const DissipationReport d = dissipation_check(fc, c.f(), c.s(), S, c.sc.T, c.budget);
  const double h0 = c.sc.meshes.front();
  const double S2 = h0 * std::max(1.0, std::round(0.25 * c.sc.T / h0));
  const DissipationStudy st = dissipation_study(c.f(), c.s(), c.sc.x0, S2, c.sc.T, c.sc.meshes);
  Table tab{"dissipation", {"mesh", "residual"}, {}, st.order};
  for (std::size_t j = 0; j < st.meshes.size(); ++j) tab.rows.push_back({st.meshes[j], st.residuals[j]});
  r.tables.push_back(tab);
  // Residuals at rounding level count as converged whatever their ordering.
  const bool tends_to_zero = st.decreasing || *std::max_element(st.residuals.begin(), st.residuals.end()) <= 1e-10;
  r.worst_residual = std::abs(d.residual);
  r.tolerance = d.tol;
  r.details["S"] = S;
  r.details["drop"] = d.drop;
  r.details["integral"] = d.integral;
  r.details["study_S"] = S2;
  r.details["study_order"] = num(st.order);
  r.details["study_decreasing"] = st.decreasing;
  finish(r, d.within && tends_to_zero);
}

void suite_stationary(Ctx& c, CheckResult& r) {
  const int n = c.sc.samples.stationary;
  const double tol = c.sc.tol.stationary;
  int disagree = 0, stationary = 0;
  const int from_min = c.sc.minimizers.empty() ? 0 : std::min(n, std::max(1, n / 5));
  ojson bad = ojson::array();
  for (int i = 0; i < n; ++i) {
    const Point x = i < from_min ? c.sc.minimizers[static_cast<std::size_t>(i) % c.sc.minimizers.size()] : c.sample();
    const StationaryReport rep = stationary_check(c.f(), c.s(), x, 1.0, tol, static_cast<unsigned>(c.rng()));
    if (rep.slope_zero) ++stationary;
    if (!rep.agree) {
      ++disagree;
      if (bad.size() < 5)
        bad.push_back({{"index", i}, {"slope", rep.slope}, {"max_move", rep.max_move},
                       {"quotient_sup", num(rep.quotient_sup)}});
    }
  }
  r.worst_residual = disagree;
  r.tolerance = tol;
  r.details["points"] = n;
  r.details["stationary"] = stationary;
  r.details["disagreements"] = disagree;
  if (!bad.empty()) r.details["examples"] = bad;
  finish(r, disagree == 0);
}

void suite_slope_decay(Ctx& c, CheckResult& r) {
  const FlowCurve& fc = c.main_flow();
  const double S = fc.times[(fc.times.size() - 1) / 4];
  const SlopeDecayReport d = slope_decay_check(fc, c.f(), c.s(), S, c.sc.T, c.budget);
  if (d.lambda_clamped) r.flags.push_back("lambda_clamped");
  r.worst_residual = std::max(d.pointwise_worst, d.integrated_worst);
  r.tolerance = d.tol;
  r.details["first_slope"] = d.slopes.front();
  r.details["last_slope"] = d.slopes.back();
  r.details["trend_to_zero"] = d.trend_to_zero;
  finish(r, d.pass);
}

void suite_ball_chained(Ctx& c, CheckResult& r) {
  if (c.s().kind() != SpaceKind::sphere) {
    r.status = CheckStatus::skipped;
    r.details["reason"] = "needs a sphere";
    return;
  }
  const ChainedFlow ch = flow_ball_chained(c.f(), c.s(), c.sc.x0, c.sc.T, c.sc.tol.flow);
  FlowOptions opt;
  opt.output_points = ch.curve.times.size() - 1;
  const FlowCurve direct = flow(c.f(), c.s(), c.sc.x0, c.sc.T, c.sc.tol.flow, opt);
  const ChainAgreement a = compare_chained(ch, direct, c.s(), c.f().lambda, c.budget);
  r.worst_residual = a.max_gap;
  r.tolerance = a.tol;
  r.details["restarts"] = ch.restart_times.size();
  r.details["leg_durations"] = ch.leg_durations;
  r.details["leg_C"] = ch.leg_C;
  r.details["worst_leg_slack"] = num(ch.worst_leg_slack);
  if (auto oracle = oracle_for(c.sc, c.sc.main, c.sc.x0))
    r.details["endpoint_oracle_error"] = distance(c.s(), ch.curve.points.back(), (*oracle)(c.sc.T));
  finish(r, a.pass && ch.legs_ok && ch.curve.converged && direct.converged);
}

void suite_tk_convergence(Ctx& c, CheckResult& r) {
  const Functional& f1 = c.sc.functionals.at(c.sc.split->first);
  const Functional& f2 = c.sc.functionals.at(c.sc.split->second);
  const Space& s = c.s();
  const TkConvergence tk = tk_convergence(f1, f2, s, c.sc.x0, c.sc.T, c.sc.meshes, c.sc.bounding_ball);

  // Analytic sum flow when both parts are Euclidean quadratics.
  std::optional<std::function<Point(double)>> exact;
  if (s.kind() == SpaceKind::euclidean && f1.quadratic && f2.quadratic) {
    const Functional sum = combine(s, 1.0, f1, 1.0, f2);
    const QuadraticForm q = *sum.quadratic;
    const Point z0 = c.sc.x0;
    exact = [&s, q, z0](double t) { return geodesic_point(s, z0, q.anchor, -std::expm1(-q.weight * t)); };
  }
  const auto L1 = effective_lipschitz(f1, s, c.sc.bounding_ball), L2 = effective_lipschitz(f2, s, c.sc.bounding_ball);
  Table tab{"tk_convergence", {"mesh", "sup_error", "delta_sum"}, {}, tk.order};
  if (exact) tab.columns.push_back("analytic_error");
  int budget_failed = 0, bound_failed = 0;
  std::vector<double> analytic;
  for (std::size_t j = 0; j < tk.meshes.size(); ++j) {
    const SplitScheme sc = run_split(f1, f2, s, c.sc.x0, Partition::uniform(c.sc.T, tk.meshes[j]), c.sc.bounding_ball);
    std::vector<double> row = {tk.meshes[j], tk.sup_errors[j], tk.delta_sums[j]};
    if (exact) {
      double e = 0;
      for (std::size_t k = 0; k <= sc.steps(); ++k)
        e = std::max(e, distance(s, sc.points[k], (*exact)(sc.partition.time(k))));
      row.push_back(e);
      analytic.push_back(e);
    }
    tab.rows.push_back(row);
    if (L1 && L2 && !delta_budget(sc, s, *L1, *L2, c.sc.T).pass) ++budget_failed;
    if (!bound_check(sc, f1, f2, s, c.sc.T).pass) ++bound_failed;
  }
  r.tables.push_back(tab);
  if (!(L1 && L2)) r.flags.push_back("uncertified_budget");
  const double finest = exact ? analytic.back() : tk.sup_errors.back();
  r.worst_residual = finest;
  r.tolerance = c.sc.tol.tk_target * c.scale;
  // Increases between two values at rounding level do not count.
  bool monotone = true;
  for (std::size_t j = 1; j < tk.sup_errors.size(); ++j)
    if (tk.sup_errors[j] > tk.sup_errors[j - 1] && tk.sup_errors[j] > 1e-12) monotone = false;
  r.details["order"] = num(tk.order);
  r.details["monotone"] = monotone;
  r.details["reference_gap"] = num(tk.reference_gap);
  if (L1 && L2) r.details["delta_budget"] = 2 * std::pow(std::max(*L1, *L2), 2) * c.sc.T;
  r.details["budget_failed"] = budget_failed;
  r.details["bound_failed"] = bound_failed;
  if (exact) r.details["analytic_order"] = num(fit_order(tk.meshes, analytic));
  finish(r, tk.pass && monotone && tk.order >= c.sc.tol.order_min && finest <= r.tolerance && budget_failed == 0 &&
                bound_failed == 0);
}

void suite_split_key(Ctx& c, CheckResult& r) {
  const Functional& f1 = c.sc.functionals.at(c.sc.split->first);
  const Functional& f2 = c.sc.functionals.at(c.sc.split->second);
  const SplitScheme sc =
      run_split(f1, f2, c.s(), c.sc.x0, Partition::uniform(c.sc.T, c.sc.meshes.front()), c.sc.bounding_ball);
  const auto region = c.sc.region ? c.sc.region : c.sc.bounding_ball;
  r.tolerance = c.sc.tol.split_key * c.scale;
  double worst = -infinity;
  int evaluated = 0, skipped = 0;
  for (std::size_t k = 1; k <= sc.steps(); ++k)
    for (int i = 0; i < c.sc.samples.split_points; ++i) {
      const auto e = split_key_estimate_residual(sc, f1, f2, c.s(), c.sample(region), k);
      if (!e) {
        ++skipped;
        continue;
      }
      ++evaluated;
      worst = std::max(worst, e->residual);
    }
  r.worst_residual = worst;
  r.details["steps"] = sc.steps();
  r.details["samples"] = evaluated;
  r.details["skipped"] = skipped;
  finish(r, skipped == 0 && worst <= r.tolerance);
}

CheckResult run_suite_impl(const Scenario& sc, const std::string& suite, const RunOptions& opt, Shared& shared) {
  const SuiteInfo* info = find_suite(suite);
  if (!info) throw usage_error("unknown suite '" + suite + "'");
  CheckResult r;
  r.name = info->name;
  r.anchor = info->anchor;
  const unsigned seed = opt.seed.value_or(sc.seed);
  Ctx c{sc, opt.tol_scale, Budget{3.0 * opt.tol_scale, 1.0 * opt.tol_scale},
        std::mt19937_64(std::uint64_t{seed} * 1000003u + suite_index(suite)), &shared};
  const auto t0 = std::chrono::steady_clock::now();
  static const std::map<std::string, void (*)(Ctx&, CheckResult&)> table = {
      {"key_estimate", suite_key_estimate}, {"commutativity", suite_commutativity},
      {"apriori", suite_apriori},           {"discrete_evi", suite_discrete_evi},
      {"convergence", suite_convergence},   {"error_bound", suite_error_bound},
      {"semigroup", suite_semigroup},       {"contraction", suite_contraction},
      {"evi", suite_evi},                   {"dissipation", suite_dissipation},
      {"stationary", suite_stationary},     {"slope_decay", suite_slope_decay},
      {"ball_chained", suite_ball_chained}, {"tk_convergence", suite_tk_convergence},
      {"split_key", suite_split_key},
  };
  try {
    if (info->module == "trotter_kato" && !sc.split) {
      r.status = CheckStatus::skipped;
      r.details["reason"] = "no split pair";
    } else {
      table.at(suite)(c, r);
    }
  } catch (const std::exception& e) {
    r.status = CheckStatus::fail;
    r.details["error"] = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace

CheckResult run_suite(const Scenario& sc, const std::string& suite, const RunOptions& opt) {
  Shared shared;
  return run_suite_impl(sc, suite, opt, shared);
}

RunReport run_scenario(const Scenario& sc, const RunOptions& opt) {
  RunReport rep;
  rep.id = sc.id;
  rep.seed = opt.seed.value_or(sc.seed);
  rep.tol_scale = opt.tol_scale;
  Shared shared;
  for (const std::string& s : sc.suites) rep.checks.push_back(run_suite_impl(sc, s, opt, shared));
  return rep;
}

bool RunReport::pass() const {
  return std::none_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.status == CheckStatus::fail; });
}

ojson RunReport::to_json() const {
  ojson j;
  j["schema_version"] = scenario_schema_version;
  j["scenario"] = id;
  j["seed"] = seed;
  j["tol_scale"] = tol_scale;
  j["status"] = pass() ? "pass" : "fail";
  ojson anchors = ojson::object();
  for (const auto& c : checks) anchors[c.name] = c.anchor;
  j["anchors"] = anchors;
  ojson arr = ojson::array();
  for (const auto& c : checks) {
    ojson o;
    o["name"] = c.name;
    o["anchor"] = c.anchor;
    o["status"] = to_string(c.status);
    o["worst_residual"] = num(c.worst_residual);
    o["tolerance"] = num(c.tolerance);
    o["flags"] = c.flags;
    o["details"] = c.details;
    ojson tabs = ojson::array();
    for (const auto& t : c.tables) {
      ojson tj;
      tj["name"] = t.name;
      tj["columns"] = t.columns;
      ojson rows = ojson::array();
      for (const auto& row : t.rows) {
        ojson rj = ojson::array();
        for (double v : row) rj.push_back(num(v));
        rows.push_back(rj);
      }
      tj["rows"] = rows;
      tj["order"] = t.order ? num(*t.order) : ojson(nullptr);
      tabs.push_back(tj);
    }
    o["tables"] = tabs;
    arr.push_back(o);
  }
  j["checks"] = arr;
  return j;
}

std::string format_table(const Table& t) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "\t" : "") << t.columns[i];
  os << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "\t" : "") << row[i];
    os << '\n';
  }
  if (t.order) os << "# order\t" << *t.order << '\n';
  return os.str();
}

namespace {

void write_atomic(const std::filesystem::path& path, const std::string& body) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << body;
    out.flush();
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void write_report(const RunReport& rep, const std::string& dir, double total_seconds) {
  const std::filesystem::path d(dir);
  std::filesystem::create_directories(d);
  for (const auto& c : rep.checks)
    for (const auto& t : c.tables) write_atomic(d / (rep.id + "." + t.name + ".tsv"), format_table(t));
  ojson rt;
  rt["scenario"] = rep.id;
  rt["total_seconds"] = total_seconds;
  ojson per = ojson::object();
  for (const auto& c : rep.checks) per[c.name] = c.seconds;
  rt["checks"] = per;
  write_atomic(d / (rep.id + ".runtime.json"), rt.dump(2) + "\n");
  write_atomic(d / (rep.id + ".report.json"), rep.to_json().dump(2) + "\n");
}

}  // namespace mmflow
