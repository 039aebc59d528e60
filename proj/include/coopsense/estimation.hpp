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

#include "coopsense/scene.hpp"

namespace coopsense {

// Delay search interval. The coarse grid defaults to T_s / 4.
struct DelaySearch {
  double tau_min = 0.0;
  double tau_max = 0.0;
  double grid_step = 0.0;     // 0 selects T_s / 4
  double resolution = 1e-12;  // golden-section stopping width [s]
};

struct LocalEstimate {
  double tau_hat = 0.0;
  Complex alpha_hat{0.0, 0.0};
  double crlb_tau = 0.0;    // [s^2]
  double crlb_alpha = 0.0;  // variance of each real component of alpha_hat
  int receiver_id = 0;
};

/// Sum over the record of s(k T_s - tau)^2.
double pulse_energy_sum(double tau, const Waveform& w);

/// Sum over the record of (ds/dt)^2 evaluated at k T_s - tau.
double pulse_slope_sum(double tau, const Waveform& w);

/// Closed-form ML amplitude for a fixed delay. Throws kDegenerateWindow when
/// the pulse at tau has no energy inside the record.
Complex estimate_alpha_given_tau(const EchoRecord& rec, double tau, const Waveform& w,
                                 double energy);

/// Concentrated delay log-likelihood with alpha substituted and constants
/// dropped: |sum_k r_k s(k T_s - tau)|^2 / sum_k s(k T_s - tau)^2.
double delay_objective(const EchoRecord& rec, double tau, const Waveform& w);

/// Grid search of the concentrated likelihood followed by golden-section
/// refinement. Ties on the grid resolve to the smallest delay.
LocalEstimate estimate_delay(const EchoRecord& rec, const Waveform& w, double energy,
                             double noise_var, const DelaySearch& search);

double crlb_tau(Complex alpha_hat, double tau_hat, double noise_var, double energy,
                const Waveform& w);

double crlb_alpha(double tau_hat, double noise_var, double energy, const Waveform& w);

}  // namespace coopsense
