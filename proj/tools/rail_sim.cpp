// rail-sim: runs a scenario file on the virtual clock and prints the report.

#include <fstream>
#include <optional>
#include <string>

#include "cli_common.hpp"
#include "rail/simulation.hpp"
#include "rail/snapshot.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Deterministic scenario simulator", "rail-sim"};
  app.require_subcommand(1);
  auto* run = app.add_subcommand("run", "Run a scenario and print its report");
  std::string scenario_path;
  std::optional<std::uint64_t> seed;
  std::string out_path;
  run->add_option("scenario", scenario_path, "Scenario JSON file")->required();
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("-o,--output", out_path, "Write the report here instead of stdout");

  return rail::cli::run(app, argc, argv, [&] {
    spdlog::set_level(spdlog::level::warn);
    auto doc = rail::cli::read_json_file(scenario_path);
    if (seed) {
      if (!doc.is_object()) throw rail::Error(rail::ErrorCode::InvalidScenario, "scenario must be an object");
      doc["seed"] = *seed;
    }
    const auto report = rail::sim::run_scenario(rail::sim::parse_scenario(doc));
    const auto text = rail::snapshot::canonical_text(report);
    if (out_path.empty()) {
      std::cout << text;
    } else {
      std::ofstream out(out_path, std::ios::binary);
      out << text;
      if (!out) throw rail::Error(rail::ErrorCode::IoError, "cannot write " + out_path);
    }
    return rail::cli::kOk;
  });
}
