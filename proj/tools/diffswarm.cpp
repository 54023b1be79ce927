// Scenario runner.
//
//   diffswarm track|localize|consensus|plan <scenario.yaml> [--seed N] [--out DIR]
//             [--override key.path=value ...]
//   diffswarm compare <scenario.yaml> --variants adaptive,non_adaptive,...
//   diffswarm validate <scenario.yaml>
//
// Exit codes: 0 success, 2 validation error, 3 runtime fault.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "diffswarm/runner.hpp"
#include "diffswarm/scenario.hpp"

namespace {

constexpr int kValidationError = 2;
constexpr int kRuntimeFault = 3;

struct CommonArgs {
  std::string scenario_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::vector<std::string> variants;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("scenario", args.scenario_path, "Scenario YAML file")->required();
  cmd->add_option("--seed", args.seed, "Override the scenario seed");
  cmd->add_option("--out", args.out_dir, "Directory for CSV, map and summary output");
  cmd->add_option("--override", args.overrides, "key.path=value (repeatable)");
}

int execute(const std::string& command, const CommonArgs& args) {
  using namespace diffswarm;
  scenario::Scenario s;
  try {
    s = scenario::load_scenario(args.scenario_path, args.overrides);
    if (args.seed) scenario::set_seed(s, *args.seed);
    if (!args.variants.empty()) {
      s.variants.clear();
      for (const auto& name : args.variants) {
        const auto v = estimation::parse_variant(name);
        if (!v) throw scenario::ScenarioError("--variants: unknown variant '" + name + "'");
        s.variants.push_back(*v);
      }
    }
  } catch (const scenario::ScenarioError& e) {
    std::cerr << args.scenario_path << ": " << e.what() << '\n';
    return kValidationError;
  }

  if (command == "validate") {
    std::cout << "scenario: " << s.name << "\nvalid: true\n";
    return 0;
  }

  runner::Mode mode = runner::Mode::kTrack;
  if (command == "localize") mode = runner::Mode::kLocalize;
  if (command == "consensus") mode = runner::Mode::kConsensus;
  if (command == "plan") mode = runner::Mode::kPlan;
  if (command == "compare") mode = runner::Mode::kCompare;

  try {
    const auto summary = runner::run(s, mode);
    if (!args.out_dir.empty()) runner::write_outputs(summary, s, args.out_dir);
    std::cout << runner::format_summary(summary, true);
    if (mode == runner::Mode::kCompare) std::cout << '\n' << runner::format_compare_csv(summary);
    if (summary.plan.status == runner::PlanStatus::kInvalidEndpoint) return kRuntimeFault;
  } catch (const std::exception& e) {
    std::cerr << "runtime fault: " << e.what() << '\n';
    return kRuntimeFault;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differential-drive swarm simulation and algorithm toolkit"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string command;
  for (const char* name : {"track", "localize", "consensus", "plan", "compare", "validate"}) {
    CLI::App* cmd = app.add_subcommand(name);
    add_common(cmd, args);
    if (std::string(name) == "compare") {
      cmd->add_option("--variants", args.variants, "Estimator variants to compare")
          ->delimiter(',');
    }
    cmd->callback([&command, name] { command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kValidationError;
  }
  return execute(command, args);
}
