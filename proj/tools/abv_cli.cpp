#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "abv/modes.hpp"
#include "abv/scenario.hpp"
#include "abv/simulation.hpp"
#include "abv/sweep.hpp"
#include "abv/telemetry.hpp"

namespace {

int cmd_run(const std::string& path, std::optional<std::uint64_t> seed, std::optional<double> duration,
            std::optional<int> port, const std::string& trace_path, const std::string& metrics_path) {
  const auto scenario = abv::load_scenario(path);
  std::ofstream trace;
  if (!trace_path.empty()) {
    trace.open(trace_path, std::ios::binary);
    if (!trace) throw std::runtime_error("cannot write " + trace_path);
  }
  abv::Metrics metrics;
  if (port) {
    abv::Simulation sim(scenario, seed, duration);
    if (trace.is_open()) sim.set_trace(&trace);
    abv::TelemetryServer server(static_cast<unsigned short>(*port));
    server.start();
    std::cerr << "telemetry on ws://127.0.0.1:" << server.port() << " (/driver, /viewer)\n";
    abv::serve(sim, server, abv::ServeOptions{});
    server.stop();
    metrics = sim.metrics();
  } else {
    metrics = abv::run(scenario, abv::RunOptions{seed, duration, trace.is_open() ? &trace : nullptr});
  }
  const auto json = abv::to_json(metrics).dump(2);
  if (!metrics_path.empty()) {
    std::ofstream out(metrics_path, std::ios::binary);
    out << json << '\n';
  } else {
    std::cout << json << '\n';
  }
  if (metrics.invariant_violations > 0) {
    std::cerr << "mode safety invariant violated " << metrics.invariant_violations << " times\n";
    return 3;
  }
  return 0;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(std::stod(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-speed automation simulator"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run one scenario");
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  std::optional<int> port;
  std::string trace_path, metrics_path;
  bool headless = false;
  run->add_option("--scenario", scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("--duration", duration, "Override the duration in seconds");
  auto* headless_flag = run->add_flag("--headless", headless, "Run as fast as possible (default)");
  run->add_option("--serve", port, "Serve telemetry on PORT with wall-clock pacing")->excludes(headless_flag);
  run->add_option("--trace", trace_path, "Per-step CSV trace");
  run->add_option("--metrics", metrics_path, "Metrics JSON (stdout when omitted)");

  auto* sweep = app.add_subcommand("sweep", "Penetration-rate sweep");
  std::string penetrations = "0,0.25,0.5,0.75,1.0";
  int seeds = 10;
  std::string out_path = "report.csv";
  sweep->add_option("--scenario", scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  sweep->add_option("--penetration", penetrations, "Comma-separated penetration rates");
  sweep->add_option("--seeds", seeds, "Seeds per point")->check(CLI::PositiveNumber);
  sweep->add_option("--out", out_path, "CSV report");

  auto* modes = app.add_subcommand("modes", "Mode arbitration truth table");
  bool table = false;
  modes->add_flag("--table", table, "Print the truth table as CSV")->required();

  auto* validate = app.add_subcommand("validate", "Check a scenario file");
  validate->add_option("--scenario", scenario, "Scenario JSON file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(scenario, seed, duration, port, trace_path, metrics_path);
    if (*sweep) {
      const auto sc = abv::load_scenario(scenario);
      auto report = abv::sweep(sc, parse_list(penetrations), seeds, [](double p, std::uint64_t s) {
        std::cerr << "p=" << p << " seed=" << s << '\n';
      });
      std::ofstream out(out_path, std::ios::binary);
      out << abv::sweep_csv(report);
      std::cout << abv::sweep_summary(report);
      return 0;
    }
    if (*modes) {
      std::cout << abv::truth_table_csv(abv::dump_truth_table());
      return 0;
    }
    if (*validate) {
      abv::load_scenario(scenario);
      std::cout << scenario << ": ok\n";
      return 0;
    }
  } catch (const abv::ScenarioError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
