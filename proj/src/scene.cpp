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

#include "coopsense/scene.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "coopsense/errors.hpp"

namespace coopsense {

void Waveform::validate() const {
  require(pulse_width > 0 && std::isfinite(pulse_width), "pulse width must be positive");
  require(sample_period > 0 && std::isfinite(sample_period), "sample period must be positive");
  require(window_length > 0, "window length must be positive");
  require(carrier_hz > 0, "carrier frequency must be positive");
  require(total_samples >= 1, "waveform needs at least one sample");
}

void Scene::validate() const {
  const auto n = rx.size();
  require(n >= 1, "scene needs at least one receiver");
  require(noise_var.size() == n && backhaul_power.size() == n && backhaul_gain.size() == n,
          "per-receiver parameter lists must match the receiver count");
  require(tx.allFinite() && target.allFinite(), "positions must be finite");
  for (std::size_t i = 0; i < n; ++i) {
    require(rx[i].allFinite(), "receiver position must be finite");
    require(noise_var[i] > 0, "noise variance must be positive");
    require(backhaul_power[i] > 0, "backhaul power must be positive");
    require(backhaul_gain[i] > 0, "backhaul gain must be positive");
  }
  require(backhaul_noise > 0, "backhaul noise must be positive");
  require(energy > 0, "transmit energy must be positive");
}

double pulse_value(double t, const Waveform& w) {
  const double T = w.pulse_width;
  return std::pow(2.0, 0.25) / std::sqrt(T) * std::exp(-std::numbers::pi * t * t / (T * T));
}

double pulse_derivative(double t, const Waveform& w) {
  const double T = w.pulse_width;
  return -2.0 * std::numbers::pi * t / (T * T) * pulse_value(t, w);
}

double bistatic_delay(const Vec2& tx, const Vec2& rx, const Vec2& target) {
  return ((tx - target).norm() + (rx - target).norm()) / kSpeedOfLight;
}

double propagation_delay(const Scene& scene, int n) {
  require(n >= 0 && n < scene.size(), "receiver index out of range");
  return bistatic_delay(scene.tx, scene.rx[n], scene.target);
}

double pathloss_db(double d_km, double f_ghz) {
  require(d_km > 0 && f_ghz > 0, "pathloss needs positive distance and frequency");
  return 32.4 + 20.0 * std::log10(d_km) + 20.0 * std::log10(f_ghz);
}

double pathloss_amplitude(const Vec2& tx, const Vec2& rx, const Vec2& target,
                          double carrier_hz) {
  const double f_ghz = carrier_hz * 1e-9;
  const double loss = pathloss_db((tx - target).norm() * 1e-3, f_ghz) +
                      pathloss_db((rx - target).norm() * 1e-3, f_ghz);
  return std::pow(10.0, -loss / 20.0);
}

double alpha_magnitude(const Scene& scene, const Waveform& w, int n) {
  return scene.reflect_amp * pathloss_amplitude(scene.tx, scene.rx[n], scene.target, w.carrier_hz);
}

int covering_sample_count(double tau_max, const Waveform& w) {
  return static_cast<int>(std::ceil((tau_max + 5.0 * w.pulse_width) / w.sample_period));
}

EchoRecord synthesize_echo(const Scene& scene, const Waveform& w, int n,
                           std::mt19937_64& rng) {
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const Complex alpha = std::polar(alpha_magnitude(scene, w, n), phase(rng));
  return synthesize_echo(scene, w, n, alpha, rng);
}

EchoRecord synthesize_echo(const Scene& scene, const Waveform& w, int n,
                           Complex alpha, std::mt19937_64& rng) {
  w.validate();
  require(n >= 0 && n < scene.size(), "receiver index out of range");
  EchoRecord rec;
  rec.receiver_id = n;
  rec.true_tau = propagation_delay(scene, n);
  rec.true_alpha = alpha;
  rec.samples.resize(static_cast<std::size_t>(w.total_samples));

  const double amp = std::sqrt(scene.energy);
  const double sigma = std::sqrt(scene.noise_var[n] / 2.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int k = 1; k <= w.total_samples; ++k) {
    const double s = pulse_value(w.sample_time(k) - rec.true_tau, w);
    // Draw both components unconditionally so the stream stays aligned.
    const double re = gauss(rng);
    const double im = gauss(rng);
    rec.samples[k - 1] = amp * alpha * s + Complex(sigma * re, sigma * im);
  }
  return rec;
}

}  // namespace coopsense
