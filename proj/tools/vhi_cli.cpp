// vhi: run contact scenarios from JSON configs.
//
//   vhi solve    --config run.json --out results/
//   vhi sweep    --config seq.json --jobs 4
//   vhi control  --config ctl.json
//   vhi verify   --config audit.json --seed 7
//   vhi validate --config run.json
//
// Exit codes: 0 success, 2 config parse error, 3 validation error, 4 solver failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "vhi/scenario.hpp"

namespace sc = vhi::scenario;

namespace {

int fail(vhi::ErrorCode code, const std::string& message, const std::vector<std::string>& violations = {}) {
  std::cerr << sc::error_json(code, message, violations).dump() << "\n";
  return sc::exit_code(code);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational-hemivariational contact solver"};
  app.require_subcommand(1);

  std::string config;
  std::string out_dir;
  std::optional<unsigned> seed;
  int jobs = 1;

  for (const char* verb : {"solve", "sweep", "control", "verify"}) {
    auto* cmd = app.add_subcommand(verb, std::string("run a scenario whose experiment belongs to '") + verb + "'");
    cmd->add_option("--config", config, "scenario JSON file")->required();
    cmd->add_option("--out", out_dir, "output directory (default: config 'output', else '.')");
    cmd->add_option("--seed", seed, "seed for sampling-based checks (overrides the config)");
    cmd->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  }
  auto* validate = app.add_subcommand("validate", "list violated constraints without solving");
  validate->add_option("--config", config, "scenario JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(vhi::ErrorCode::ConfigParse, e.what());
  }
  const std::string verb = app.get_subcommands().front()->get_name();

  try {
    const sc::Scenario s = sc::load(config);
    if (verb == "validate") {
      const auto v = sc::validate(s);
      std::cout << nlohmann::ordered_json{{"schema_version", sc::kSchemaVersion},
                                          {"experiment", sc::to_string(s.experiment)},
                                          {"valid", v.empty()},
                                          {"violations", v}}
                       .dump(2)
                << "\n";
      return 0;
    }
    if (const auto v = sc::validate(s); !v.empty() && verb == sc::verb_for(s.experiment))
      return fail(sc::violation_code(v.front()), v.front(), v);
    const sc::RunOutput result = sc::run(s, verb, sc::RunOptions{jobs, seed});
    const std::filesystem::path dir = !out_dir.empty() ? out_dir : (!s.output.empty() ? s.output : ".");
    result.write(dir);
    std::cout << result.summary.dump(2) << "\n";
    return 0;
  } catch (const vhi::Error& e) {
    return fail(e.code(), e.what());
  } catch (const std::exception& e) {
    return fail(vhi::ErrorCode::InvalidArgument, e.what());
  }
}
