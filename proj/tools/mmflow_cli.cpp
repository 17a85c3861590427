// Batch runner for scenario configs.
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "mmflow/scenario.hpp"

namespace {

struct Outcome {
  std::string source;
  std::optional<mmflow::RunReport> report;
  std::string error;
  bool config_error = false;
};

Outcome run_one(const std::string& path, const mmflow::RunOptions& opt, const std::string& out_dir) {
  Outcome o{path, std::nullopt, "", false};
  try {
    const mmflow::Scenario sc = mmflow::load_scenario(path);
    const auto t0 = std::chrono::steady_clock::now();
    mmflow::RunReport rep = mmflow::run_scenario(sc, opt);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    mmflow::write_report(rep, out_dir, secs);
    o.report = std::move(rep);
  } catch (const mmflow::config_error& e) {
    o.error = e.what();
    o.config_error = true;
  } catch (const std::exception& e) {
    o.error = e.what();
  }
  return o;
}

void print(const Outcome& o) {
  if (!o.report) {
    std::fprintf(stderr, "%s: %s\n", o.config_error ? "config error" : "error", o.error.c_str());
    return;
  }
  for (const auto& c : o.report->checks)
    std::printf("%-24s %-16s %-8s worst=%-12.4g tol=%-12.4g %8.2fs\n", o.report->id.c_str(), c.name.c_str(),
                mmflow::to_string(c.status).c_str(), c.worst_residual, c.tolerance, c.seconds);
  std::printf("%-24s %s\n", o.report->id.c_str(), o.report->pass() ? "PASS" : "FAIL");
}

int exit_code(const std::vector<Outcome>& all) {
  int code = 0;
  for (const auto& o : all) {
    if (o.config_error) return 2;
    if (!o.report || !o.report->pass()) code = 1;
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Minimizing-movement gradient flow certification runner"};
  app.require_subcommand(1);
  std::size_t workers = 1;
  double tol_scale = 1;
  std::optional<unsigned> seed;
  std::string out_dir = "out";
  app.add_option("--workers", workers, "scenarios run concurrently")->check(CLI::PositiveNumber);
  app.add_option("--tol-scale", tol_scale, "multiplier on assertion tolerances")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out", out_dir, "report directory");

  std::string config;
  auto* run = app.add_subcommand("run", "run one scenario config");
  run->add_option("config", config, "scenario JSON")->required();
  run->fallthrough();

  std::string module;
  auto* list = app.add_subcommand("list", "print the suite catalog");
  list->add_option("--module", module, "restrict to one module");
  list->fallthrough();

  std::string dir;
  auto* verify = app.add_subcommand("verify-all", "run every *.json config in a directory");
  verify->add_option("dir", dir, "scenario directory")->required();
  verify->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  mmflow::RunOptions opt;
  opt.tol_scale = tol_scale;
  opt.seed = seed;

  if (*list) {
    const auto suites = mmflow::list_suites(module);
    if (!module.empty() && !mmflow::known_module(module))
      std::fprintf(stderr, "warning: unknown module '%s'\n", module.c_str());
    for (const auto& s : suites)
      std::printf("%-16s %-22s %-46s %s\n", s.name.c_str(), s.module.c_str(), s.anchor.c_str(), s.description.c_str());
    return 0;
  }

  if (*run) {
    const Outcome o = run_one(config, opt, out_dir);
    print(o);
    return exit_code({o});
  }

  std::vector<std::string> paths;
  std::error_code ec;
  for (const auto& e : std::filesystem::directory_iterator(dir, ec))
    if (e.is_regular_file() && e.path().extension() == ".json") paths.push_back(e.path().string());
  if (ec) {
    std::fprintf(stderr, "config error: cannot list %s: %s\n", dir.c_str(), ec.message().c_str());
    return 2;
  }
  std::sort(paths.begin(), paths.end());
  std::vector<Outcome> all(paths.size());
  std::atomic<std::size_t> next{0};
  std::mutex out_mu;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < paths.size();) {
      all[i] = run_one(paths[i], opt, out_dir);
      std::lock_guard lock(out_mu);
      print(all[i]);
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, std::max<std::size_t>(1, paths.size())); ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return exit_code(all);
}
