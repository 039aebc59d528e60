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

#include <functional>
#include <vector>

#include <Eigen/Core>

#include "coopsense/estimation.hpp"
#include "coopsense/klt.hpp"
#include "coopsense/scene.hpp"

namespace coopsense {

// Per-receiver component bits; X[n](j). Non-integer values are allowed for
// the relaxed problem.
using Allocation = std::vector<Eigen::VectorXd>;

struct ReceiverFim {
  int receiver_id = 0;
  Eigen::MatrixXd jacobian;   // d s_n / d theta, 2 x 2K_n
  Eigen::MatrixXd projected;  // jacobian * U_n
  Eigen::VectorXd eigvals;    // gamma_nj
  double noise_var = 0.0;

  int dim() const { return static_cast<int>(eigvals.size()); }
};

struct FimContext {
  std::vector<ReceiverFim> receivers;
  NoiseModel model = NoiseModel::kNominal;

  int size() const { return static_cast<int>(receivers.size()); }
  std::vector<int> all() const;
};

struct SearchRegion {
  Vec2 lo = Vec2::Zero();
  Vec2 hi = Vec2::Zero();
  double cell = 2.5;  // coarse grid spacing [m]

  bool contains(const Vec2& p) const;
  Vec2 clamp(const Vec2& p) const;
  SearchRegion inflated(double margin) const;
};

struct PositionEstimate {
  Vec2 theta = Vec2::Zero();
  double objective = 0.0;  // minimized cost (negative log-likelihood up to constants)
  int iterations = 0;
};

// Cost with optional gradient output.
using CostFn = std::function<double(const Vec2&, Vec2*)>;

// Stacked s_n(theta) = sqrt(E) alpha s(kT_s - tau_n(theta)) over the window.
Eigen::VectorXd signal_vector(const Vec2& theta, const Scene& scene, int n, Complex alpha,
                              const SampleWindow& window, const Waveform& w);

// Rows are derivatives with respect to x and y.
Eigen::MatrixXd signal_jacobian(const Vec2& theta, const Scene& scene, int n, Complex alpha,
                                const SampleWindow& window, const Waveform& w);

Vec2 delay_gradient(const Vec2& theta, const Vec2& tx, const Vec2& rx);

double info_weight(double gamma, double noise_var, double bits,
                   NoiseModel model = NoiseModel::kNominal);

double info_weight_slope(double gamma, double noise_var, double bits,
                         NoiseModel model = NoiseModel::kNominal);

FimContext build_fim_context(const Scene& scene, const std::vector<LocalEstimate>& estimates,
                             const std::vector<KltCodec>& codecs, const Vec2& theta,
                             const Waveform& w, NoiseModel model = NoiseModel::kNominal);

// Pulse slope taken at each local delay estimate, delay gradient at theta. Stays
// informative when theta is too coarse to place the pulse inside the window.
FimContext build_anchored_fim_context(const Scene& scene,
                                      const std::vector<LocalEstimate>& estimates,
                                      const std::vector<KltCodec>& codecs, const Vec2& theta,
                                      const Waveform& w, NoiseModel model = NoiseModel::kNominal);

Eigen::Matrix2d fim(const FimContext& ctx, const Allocation& bits, const std::vector<int>& active);

// Limit of unlimited bits: y = 2 / sigma^2 on every component.
Eigen::Matrix2d fim_unquantized(const FimContext& ctx, const std::vector<int>& active);

double crlb_theta(const Eigen::Matrix2d& j);

// Quadratic-form signal observation: (r - s(theta))^T P (r - s(theta)).
struct SignalObservation {
  int receiver = 0;
  Complex alpha{0.0, 0.0};
  SampleWindow window;
  Eigen::VectorXd samples;    // stacked reconstructed window
  Eigen::MatrixXd precision;  // P = (Q_w + Q_n)^-1
};

PositionEstimate minimize_cost(const CostFn& cost, const SearchRegion& region);

CostFn signal_cost(const std::vector<SignalObservation>& obs, const Scene& scene,
                   const Waveform& w);

PositionEstimate fc_ml_localize(const std::vector<SignalObservation>& obs, const Scene& scene,
                                const Waveform& w, const SearchRegion& region);

// Observation for the fusion center built from a quantized window.
SignalObservation quantized_observation(const LocalEstimate& est, const KltCodec& codec,
                                        const QuantizedWindow& q,
                                        NoiseModel model = NoiseModel::kNominal);

// Raw window samples with the receiver noise only.
SignalObservation ideal_observation(const EchoRecord& rec, const LocalEstimate& est,
                                    const SampleWindow& window, double noise_var);

// 8-bit mid-rise quantizer per stacked component, centered on the prior mean and
// spanning +-4 sqrt(max gamma).
SignalObservation uniform_observation(const EchoRecord& rec, const LocalEstimate& est,
                                      const KltCodec& codec, int bits = 8);

CostFn toa_cost(const std::vector<LocalEstimate>& estimates, const Scene& scene);

CostFn toa_rss_cost(const std::vector<LocalEstimate>& estimates, const Scene& scene,
                    const Waveform& w);

PositionEstimate baseline_toa_idcs(const std::vector<LocalEstimate>& estimates,
                                   const Scene& scene, const SearchRegion& region);

PositionEstimate baseline_toa_rss_idcs(const std::vector<LocalEstimate>& estimates,
                                       const Scene& scene, const Waveform& w,
                                       const SearchRegion& region);

}  // namespace coopsense
