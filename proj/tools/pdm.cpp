// pdm: config-driven predictive-maintenance pipeline.
// Exit codes: 0 success, 2 configuration or usage error, 3 pipeline failure.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pdm/config.hpp"
#include "pdm/core/log.hpp"
#include "pdm/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kFailure = 3;

struct Options {
  std::string config;
  std::string scenario;
  std::string out;
};

CLI::App* add_command(CLI::App& app, const char* name, const char* help, Options& o, bool scenario) {
  auto* sub = app.add_subcommand(name, help);
  sub->add_option("--config", o.config, "pipeline config (JSON)")->required();
  if (scenario)
    sub->add_option("--scenario", o.scenario, "baseline | s1 | s2")
        ->required()
        ->check(CLI::IsMember({"baseline", "s1", "s2"}));
  sub->add_option("--out", o.out, "output directory (overrides paths.output)");
  return sub;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid knowledge- and data-driven predictive maintenance pipeline"};
  app.require_subcommand(1);
  Options o;
  auto* simulate = add_command(app, "simulate", "generate telemetry and ground truth", o, false);
  auto* preprocess = add_command(app, "preprocess", "build a curated dataset", o, true);
  auto* evaluate = add_command(app, "evaluate", "train, tune and test one scenario", o, true);
  auto* compare = add_command(app, "compare", "run all scenarios and tabulate the best models", o, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  pdm::PipelineConfig cfg;
  pdm::KnowledgeBase kb;
  try {
    cfg = pdm::load_config(o.config);
    kb = pdm::pipeline::preflight(cfg);
  } catch (const std::exception& e) {
    pdm::log::error(e.what());
    return kUsage;
  }
  const std::filesystem::path out = o.out.empty() ? cfg.output : std::filesystem::path(o.out);

  try {
    std::vector<std::filesystem::path> written;
    if (simulate->parsed()) {
      written = pdm::pipeline::cmd_simulate(cfg, kb, out);
    } else if (preprocess->parsed()) {
      written = pdm::pipeline::cmd_preprocess(cfg, kb, pdm::eval::parse_scenario(o.scenario), out);
    } else if (evaluate->parsed()) {
      written = pdm::pipeline::cmd_evaluate(cfg, kb, pdm::eval::parse_scenario(o.scenario), out);
    } else if (compare->parsed()) {
      written = pdm::pipeline::cmd_compare(cfg, kb, out);
    }
    for (const auto& p : written) std::cout << p.string() << '\n';
  } catch (const pdm::Error& e) {
    pdm::log::error(e.what());
    return e.kind() == pdm::ErrorKind::Config ? kUsage : kFailure;
  } catch (const std::exception& e) {
    pdm::log::error(e.what());
    return kFailure;
  }
  return kOk;
}
