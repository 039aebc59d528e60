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

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "coopsense/backhaul.hpp"
#include "coopsense/fusion.hpp"
#include "coopsense/scene.hpp"

namespace coopsense {

enum class Topology { kLinear, kCircular, kRandom };

enum class Algorithm {
  kIdealSdcs,
  kUniform8Sdcs,
  kToaIdcs,
  kToaRssIdcs,
  kHisdcsFull,
  kHisdcsNoselect,
  kBitRealloc,
};

enum class EpsilonRule { kMultiple, kAbsolute };

const char* to_string(Algorithm a);
const char* to_string(Topology t);

struct ScenarioConfig {
  Topology topology = Topology::kLinear;
  int receivers = 5;
  double spacing = 50.0;        // linear receiver spacing [m]
  double tx_distance = 1000.0;  // linear: transmitter offset from the receiver line [m]
  double radius = 500.0;        // circular / random layout radius [m]
  std::optional<Vec2> target_lo;
  std::optional<Vec2> target_hi;
  double snr_db = 0.0;
  int window_samples = 10;      // K_n
  double sample_rate_hz = 1e8;  // f_s
  double backhaul_gain = 48.5;
  double backhaul_power = 1.0;
  double backhaul_noise = 1.0;
  double grid_cell = 2.5;       // coarse localization grid [m]
  double search_margin = 20.0;  // search region around the target region [m]
  std::uint64_t layout_seed = 7;
};

struct ExperimentConfig {
  ScenarioConfig scenario;
  std::string sweep_name = "snr_db";  // snr_db | n | epsilon | k_n | fs
  std::vector<double> sweep_values = {0.0};
  int trials = 500;
  EpsilonRule epsilon_rule = EpsilonRule::kMultiple;
  double epsilon = 1.01;
  std::vector<Algorithm> algorithms;
  std::uint64_t seed = 1;
  SolverConfig solver;
  NoiseModel noise_model = NoiseModel::kNominal;
  int threads = 0;  // 0: hardware concurrency

  void validate() const;
  // Copy with one sweep value applied.
  ExperimentConfig at(double sweep_value) const;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

// Everything fixed by the configuration except the per-trial draws.
struct Layout {
  Vec2 tx = Vec2::Zero();
  std::vector<Vec2> rx;
  Vec2 target_lo = Vec2::Zero();  // target box
  Vec2 target_hi = Vec2::Zero();
  double disc_radius = 0.0;       // > 0: targets restricted to this disc around tx
  SearchRegion search;
  Waveform w;
  std::vector<DelaySearch> delay_spans;
};

Layout make_layout(const ScenarioConfig& cfg);

Vec2 draw_target(const Layout& layout, std::mt19937_64& rng);

// Scene with the target placed and the receiver noise set from the average
// echo SNR at that target.
Scene generate_scenario(const ScenarioConfig& cfg, const Layout& layout, const Vec2& target);

struct AlgorithmOutcome {
  bool ok = false;
  std::string error;  // error code name when !ok
  Vec2 theta = Vec2::Zero();
  double sq_error = 0.0;
  double w = 0.0;     // NaN when no bits are uploaded through the MAC
  int nodes = 0;
  int iterations = 0;
  std::vector<std::pair<int, int>> bits;  // (receiver, total bits)
};

struct TrialOutcome {
  int trial = 0;
  Vec2 target = Vec2::Zero();
  double epsilon_star = 0.0;
  double epsilon = 0.0;
  std::vector<AlgorithmOutcome> algorithms;  // config order
};

// One paired trial: shared echoes, every enabled algorithm.
TrialOutcome run_pipeline_once(const ExperimentConfig& cfg, const Layout& layout, int trial,
                               std::mt19937_64& rng);

std::mt19937_64 trial_rng(std::uint64_t seed, int trial);

// What the fusion center knows before allocating bits on one trial.
struct TrialProblem {
  Scene scene;
  Vec2 target = Vec2::Zero();
  Vec2 theta0 = Vec2::Zero();  // TOA fix from the uploaded delays
  FimContext ctx;
  double epsilon_star = 0.0;
  double epsilon = 0.0;
};

TrialProblem prepare_trial(const ExperimentConfig& cfg, const Layout& layout, int trial);

struct ResultRow {
  std::string sweep_name;
  double sweep_value = 0.0;
  Algorithm algorithm = Algorithm::kHisdcsFull;
  double mse = 0.0;
  double mse_se = 0.0;
  double mean_w = 0.0;
  double w_se = 0.0;
  double mean_nodes = 0.0;
  double mean_iterations = 0.0;
  int trials = 0;  // successful trials
  int failures = 0;
};

struct SweepResult {
  std::vector<ResultRow> rows;               // point-major, config algorithm order
  std::vector<std::vector<TrialOutcome>> outcomes;  // [point][trial]
};

SweepResult run_sweep(const ExperimentConfig& cfg);

void write_results_csv(std::ostream& os, const std::vector<ResultRow>& rows);
void write_trials_csv(std::ostream& os, const ExperimentConfig& cfg, const SweepResult& result);

struct EpsilonStarRow {
  double sweep_value = 0.0;
  int trial = 0;
  Vec2 target = Vec2::Zero();
  double epsilon_star = 0.0;
  double epsilon = 0.0;
};

std::vector<EpsilonStarRow> epsilon_star_table(const ExperimentConfig& cfg);
void write_epsilon_star_csv(std::ostream& os, const ExperimentConfig& cfg,
                            const std::vector<EpsilonStarRow>& rows);

// MCSCA trace on trial 0 of the first sweep point, all receivers.
AllocationResult trace_mcsca(const ExperimentConfig& cfg);
void write_trace_csv(std::ostream& os, const AllocationResult& r);

}  // namespace coopsense
