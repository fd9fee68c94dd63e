/*
 Copyright 2026 The spavglp Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#include <spavglp/pipeline.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

namespace {

struct Overrides {
  std::string config;
  std::optional<int> degree_y;
  std::optional<int> degree_z;
  std::optional<double> epsilon;
  std::optional<std::string> out;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, Overrides& o, bool with_model) {
  cmd->add_option("--config", o.config, "Run configuration (JSON)");
  if (with_model) {
    cmd->add_option("--degree-y", o.degree_y, "Fast test-function degree");
    cmd->add_option("--degree-z", o.degree_z, "Slow test-function degree");
    cmd->add_option("--epsilon", o.epsilon, "Time-scale separation");
  }
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--threads", o.threads, "Worker threads (default SPAVGLP_THREADS or all cores)");
}

spavglp::RunConfig resolve(const Overrides& o) {
  spavglp::RunConfig c = o.config.empty() ? spavglp::RunConfig{} : spavglp::load_config(o.config);
  if (o.degree_y) c.degree_y = *o.degree_y;
  if (o.degree_z) c.degree_z = *o.degree_z;
  if (o.epsilon) c.epsilon = *o.epsilon;
  if (o.out) c.output_dir = *o.out;
  if (o.threads) c.threads = *o.threads;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = spavglp::cli;
  CLI::App app{"Averaged LP solver and simulator for singularly perturbed control with long-run average cost"};
  app.require_subcommand(1);

  Overrides solve_o, sim_o, verify_o, repro_o;
  std::string sim_solution, verify_solution;

  auto* solve = app.add_subcommand("solve-averaged", "Solve the averaged LP; writes solution.json and certificate.json");
  add_common(solve, solve_o, true);

  auto* sim = app.add_subcommand("simulate-sp", "Simulate the averaged and perturbed systems under the synthesized feedback");
  add_common(sim, sim_o, true);
  sim->add_option("--solution", sim_solution, "solution.json (default <out>/solution.json)");

  auto* verify = app.add_subcommand("verify", "Run the invariant suite on a saved solution");
  add_common(verify, verify_o, false);
  verify->add_option("--solution", verify_solution, "solution.json (default <out>/solution.json)");

  auto* repro = app.add_subcommand("reproduce-example", "Solve and simulate the built-in example at degrees 5 and 7");
  repro->add_option("--out", repro_o.out, "Output directory (default reproduce)");
  repro->add_option("--threads", repro_o.threads, "Worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kUsage;
  }

  if (*solve) {
    return cli::guarded([&] { return cli::cmd_solve(resolve(solve_o)); });
  }
  if (*sim) {
    return cli::guarded([&] {
      const spavglp::RunConfig c = resolve(sim_o);
      const std::string path = sim_solution.empty() ? cli::join_path(c.output_dir, "solution.json") : sim_solution;
      return cli::cmd_simulate(c, path);
    });
  }
  if (*verify) {
    return cli::guarded([&] {
      const spavglp::RunConfig c = resolve(verify_o);
      const std::string path = verify_solution.empty() ? cli::join_path(c.output_dir, "solution.json") : verify_solution;
      return cli::cmd_verify(path, c.output_dir, c.threads);
    });
  }
  if (*repro)
    return cli::cmd_reproduce(repro_o.out.value_or("reproduce"), repro_o.threads.value_or(0));
  return cli::kUsage;
}
