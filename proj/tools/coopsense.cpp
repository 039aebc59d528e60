// Copyright 2026 The coopsense Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// coopsense command line: experiment sweeps, epsilon-star tables, MCSCA traces.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "coopsense/errors.hpp"
#include "coopsense/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitInfeasible = 2;

coopsense::ExperimentConfig load(const std::string& path, const std::optional<int>& threads) {
  coopsense::ExperimentConfig cfg = coopsense::load_config(path);
  if (threads) {
    cfg.threads = *threads;
    cfg.validate();
  }
  return cfg;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) coopsense::fail(coopsense::ErrorCode::kIo, "cannot write " + path.string());
  return os;
}

template <typename Fn>
void emit(const std::string& out, Fn write) {
  if (out.empty()) {
    write(std::cout);
    std::cout.flush();
  } else {
    std::ofstream os = open_out(out);
    write(os);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coopsense: cooperative sensing localization experiments"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::optional<int> threads;

  CLI::App* run = app.add_subcommand("run", "run the configured sweep and write CSV results");
  run->add_option("--config", config, "experiment JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "output directory")->required();
  run->add_option("--threads", threads, "worker threads, 0 for all cores");

  CLI::App* eps = app.add_subcommand("epsilon-star", "tabulate the minimum CRLB per trial");
  eps->add_option("--config", config, "experiment JSON")->required()->check(CLI::ExistingFile);
  eps->add_option("--out", out, "CSV file, stdout when omitted");
  eps->add_option("--threads", threads, "worker threads, 0 for all cores");

  CLI::App* trace = app.add_subcommand("trace-mcsca", "MCSCA convergence trace on trial 0");
  trace->add_option("--config", config, "experiment JSON")->required()->check(CLI::ExistingFile);
  trace->add_option("--out", out, "CSV file, stdout when omitted");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInfeasible;
  }

  try {
    const coopsense::ExperimentConfig cfg = load(config, threads);
    if (run->parsed()) {
      const std::filesystem::path dir(out);
      std::error_code ec;
      std::filesystem::create_directories(dir, ec);
      if (ec) coopsense::fail(coopsense::ErrorCode::kIo, "cannot create " + dir.string());
      const coopsense::SweepResult result = coopsense::run_sweep(cfg);
      std::ofstream rows = open_out(dir / "results.csv");
      coopsense::write_results_csv(rows, result.rows);
      std::ofstream trials = open_out(dir / "trials.csv");
      coopsense::write_trials_csv(trials, cfg, result);
    } else if (eps->parsed()) {
      const auto rows = coopsense::epsilon_star_table(cfg);
      emit(out, [&](std::ostream& os) { coopsense::write_epsilon_star_csv(os, cfg, rows); });
    } else {
      const coopsense::AllocationResult r = coopsense::trace_mcsca(cfg);
      emit(out, [&](std::ostream& os) { coopsense::write_trace_csv(os, r); });
    }
  } catch (const coopsense::Error& e) {
    std::cerr << "coopsense: " << coopsense::to_string(e.code()) << ": " << e.what() << '\n';
    const bool infeasible = e.code() == coopsense::ErrorCode::kConfig ||
                            e.code() == coopsense::ErrorCode::kInfeasibleEpsilon;
    return infeasible ? kExitInfeasible : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "coopsense: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
