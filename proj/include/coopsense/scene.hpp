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

#include <complex>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Core>

namespace coopsense {

using Vec2 = Eigen::Vector2d;
using Complex = std::complex<double>;

inline constexpr double kSpeedOfLight = 2.99792458e8;

// Sampling and pulse parameters shared by every receiver.
struct Waveform {
  double pulse_width = 2e-8;     // T [s]
  double carrier_hz = 3.55e9;    // f_c
  double bandwidth_hz = 50e6;    // B
  double sample_period = 1e-8;   // T_s
  int total_samples = 0;         // K, samples k = 1..K at t = k T_s
  double window_length = 8e-8;   // T_d

  void validate() const;
  double sample_time(int k) const { return k * sample_period; }
};

// Geometry, powers and backhaul parameters of one sensing instance.
struct Scene {
  Vec2 tx = Vec2::Zero();
  std::vector<Vec2> rx;
  Vec2 target = Vec2::Zero();
  double energy = 1.0;                  // E
  std::vector<double> noise_var;        // sigma_n^2
  std::vector<double> backhaul_power;   // P_n
  std::vector<double> backhaul_gain;    // g_n
  double backhaul_noise = 1.0;          // N0
  double reflect_amp = 1.0;             // |xi_n|
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(rx.size()); }
  void validate() const;
};

struct EchoRecord {
  std::vector<Complex> samples;  // samples[i] holds r_n((i + 1) T_s)
  int receiver_id = 0;
  double true_tau = 0.0;
  Complex true_alpha{0.0, 0.0};
};

/// Unit-energy Gaussian pulse s(t) = 2^{1/4} T^{-1/2} exp(-pi t^2 / T^2).
double pulse_value(double t, const Waveform& w);

/// ds/dt = (-2 pi t / T^2) s(t).
double pulse_derivative(double t, const Waveform& w);

/// Bistatic delay (|tx - target| + |rx - target|) / c.
double bistatic_delay(const Vec2& tx, const Vec2& rx, const Vec2& target);

double propagation_delay(const Scene& scene, int n);

/// Free-space LOS pathloss in dB: 32.4 + 20 log10(d[km]) + 20 log10(f[GHz]).
double pathloss_db(double d_km, double f_ghz);

/// Two-hop amplitude |rho| = 10^{-(L_tx->target + L_target->rx) / 20}.
double pathloss_amplitude(const Vec2& tx, const Vec2& rx, const Vec2& target,
                          double carrier_hz);

/// Deterministic part of the reflecting coefficient magnitude |alpha_n|.
double alpha_magnitude(const Scene& scene, const Waveform& w, int n);

/// Number of samples needed so the record covers [0, tau_max + 5T].
int covering_sample_count(double tau_max, const Waveform& w);

/// Draws xi_n's phase uniformly and synthesizes r_n(k T_s), k = 1..K.
EchoRecord synthesize_echo(const Scene& scene, const Waveform& w, int n,
                           std::mt19937_64& rng);

/// Same, with an explicit effective reflecting coefficient alpha_n.
EchoRecord synthesize_echo(const Scene& scene, const Waveform& w, int n,
                           Complex alpha, std::mt19937_64& rng);

}  // namespace coopsense
