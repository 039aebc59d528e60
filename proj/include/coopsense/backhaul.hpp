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

#include <string>
#include <vector>

#include <Eigen/Core>

#include "coopsense/fusion.hpp"
#include "coopsense/scene.hpp"

namespace coopsense {

inline constexpr int kMaxMacUsers = 12;

// Capacities of every nonempty subset of the selected receivers, indexed by a
// bitmask over positions in `members`.
struct MacRegion {
  std::vector<int> members;  // receiver ids
  std::vector<double> capacity;

  int size() const { return static_cast<int>(members.size()); }
  double operator[](unsigned mask) const { return capacity[mask]; }
};

MacRegion build_mac_region(const Scene& scene, const std::vector<int>& members);

// Smallest integer W >= 1 with sum_S bits <= C_S W for every subset S.
// bits_per_member follows region.members.
int min_channel_uses(const std::vector<double>& bits_per_member, const MacRegion& region);

// max_S sum_S bits / C_S, without rounding.
double relaxed_channel_uses(const std::vector<double>& bits_per_member, const MacRegion& region);

double surrogate_weight(double x, double x_t, double gamma, double noise_var,
                        NoiseModel model = NoiseModel::kNominal);

struct SolverConfig {
  double mu = 1e-3;
  double beta0 = 20.0;
  double beta_decay = 0.7;
  int max_iter = 200;
  double step_tol = 1e-4;
  double gap_tol = 1e-8;
  bool record_trace = false;
};

// One convex subproblem in scaled units. The matrix inequality is
// [[M - sI, cI], [cI, Jbar(X) - sI]] >= 0, a congruence of the unscaled
// [[M, I], [I, J]] form with c^2 = (J scale) / (M scale).
struct InnerProblem {
  Eigen::MatrixXd dirs;    // 2 x D, column j is a_j
  Eigen::VectorXd y0;      // y(X_t)
  Eigen::VectorXd slope;   // y'(X_t)
  Eigen::VectorXd x_t;     // X_t
  std::vector<int> owner;  // member position of each component
  std::vector<double> capacity;  // by member bitmask
  double coupling = 1.0;
  double w_t = 1.0;
  Eigen::Matrix2d m_t = Eigen::Matrix2d::Identity();
  double epsilon = 1.0;
  double mu = 1e-3;
  double beta = 1.0;
  double gap_tol = 1e-8;

  int dim() const { return static_cast<int>(x_t.size()); }
  int members() const;
  Eigen::Matrix2d surrogate_fim(const Eigen::VectorXd& x) const;
};

struct InnerSolution {
  Eigen::VectorXd x;
  double w = 1.0;
  Eigen::Matrix2d m = Eigen::Matrix2d::Zero();
  double s = 0.0;
  double objective = 0.0;
  // Barrier dual estimates at the last centering.
  std::vector<double> mac_dual;  // by bitmask
  Eigen::VectorXd x_dual;
  double w_dual = 0.0;
  double trace_dual = 0.0;
  Eigen::Matrix4d lmi_dual = Eigen::Matrix4d::Zero();
  int newton_steps = 0;
};

// Maximum constraint violation of a subproblem point (0 when feasible).
double inner_violation(const InnerProblem& p, const InnerSolution& z);

InnerSolution inner_solve(const InnerProblem& p);

struct TraceRow {
  int iteration = 0;
  double beta = 0.0;
  double w = 0.0;
  double trace_m = 0.0;
  double crlb = 0.0;
  double step = 0.0;
  double step_tol = 0.0;
  bool restored = false;
  int newton_steps = 0;
};

struct AllocationResult {
  std::vector<int> selected;                // indices into the FIM context
  std::vector<std::vector<int>> bits;       // per selected receiver
  int channel_uses = 0;                     // W*
  double relaxed_channel_uses = 0.0;        // W-bar
  Eigen::VectorXd relaxed_bits;             // X-bar, stacked over selected
  double relaxed_crlb = 0.0;                // tr(M) at convergence
  double crlb = 0.0;                        // at the rounded bits
  double epsilon = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
  int restorations = 0;
  bool converged = false;
  std::vector<TraceRow> trace;

  // Full-context allocation, zero bits for unselected receivers.
  Allocation allocation(const FimContext& ctx) const;
};

double epsilon_star(const FimContext& ctx, const std::vector<int>& active);

AllocationResult mcsca_run(const FimContext& ctx, const Scene& scene,
                           const std::vector<int>& active, double epsilon,
                           const SolverConfig& cfg = {});

struct SelectionResult {
  AllocationResult best;
  AllocationResult full;  // first run, all receivers
  int mcsca_runs = 0;
};

// Drops the member with the fewest relaxed bits while the relaxed W does not
// grow; best holds the smallest integer W seen, the larger set on ties.
SelectionResult greedy_select(const FimContext& ctx, const Scene& scene, double epsilon,
                              const SolverConfig& cfg = {});

// Greedy selection that starts from an already computed full-set result.
SelectionResult greedy_select(const FimContext& ctx, const Scene& scene, double epsilon,
                              const SolverConfig& cfg, const AllocationResult& full);

AllocationResult bit_realloc(const FimContext& ctx, const Scene& scene, double epsilon,
                             const SolverConfig& cfg = {});

AllocationResult bit_realloc(const FimContext& ctx, const Scene& scene, double epsilon,
                             const AllocationResult& full);

}  // namespace coopsense
