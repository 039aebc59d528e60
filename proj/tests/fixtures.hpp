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

#include <cmath>
#include <random>
#include <vector>

#include "coopsense/estimation.hpp"
#include "coopsense/fusion.hpp"
#include "coopsense/klt.hpp"
#include "coopsense/scene.hpp"

namespace coopsense::fixture {

struct Linear {
  Scene scene;
  Waveform w;
  SearchRegion region;
};

// Receivers along y = 0 every 50 m, transmitter 1 km away, target near the middle.
inline Linear linear_scene(int n, const Vec2& target, double snr_db) {
  Linear s;
  const double center = 25.0 * (n - 1);
  s.scene.tx = {center, 1000.0};
  for (int i = 0; i < n; ++i) s.scene.rx.push_back({50.0 * i, 0.0});
  s.scene.target = target;
  s.scene.backhaul_power.assign(n, 1.0);
  s.scene.backhaul_gain.assign(n, 48.5);
  s.region.lo = {center - 50.0, 50.0};
  s.region.hi = {center + 50.0, 100.0};
  s.region = s.region.inflated(20.0);

  double tau_max = 0.0;
  for (const Vec2& c : {s.region.lo, s.region.hi, Vec2(s.region.lo.x(), s.region.hi.y()),
                        Vec2(s.region.hi.x(), s.region.lo.y())}) {
    for (const auto& rx : s.scene.rx) tau_max = std::max(tau_max, bistatic_delay(s.scene.tx, rx, c));
  }
  s.w.total_samples = covering_sample_count(tau_max, s.w);

  double power = 0.0;
  for (int i = 0; i < n; ++i) {
    const double a = alpha_magnitude(s.scene, s.w, i);
    power += s.scene.energy * a * a;
  }
  power /= n;
  const double sigma2 = power / (s.w.window_length * std::pow(10.0, snr_db / 10.0));
  s.scene.noise_var.assign(n, sigma2);
  return s;
}

struct Observed {
  std::vector<EchoRecord> records;
  std::vector<LocalEstimate> estimates;
  std::vector<KltCodec> codecs;
};

inline DelaySearch delay_span(const Linear& s, int n) {
  double lo = 1e9, hi = 0.0;
  for (const Vec2& c : {s.region.lo, s.region.hi, Vec2(s.region.lo.x(), s.region.hi.y()),
                        Vec2(s.region.hi.x(), s.region.lo.y())}) {
    const double t = bistatic_delay(s.scene.tx, s.scene.rx[n], c);
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  return {lo - 2 * s.w.pulse_width, hi + 2 * s.w.pulse_width};
}

inline Observed observe(const Linear& s, std::mt19937_64& rng) {
  Observed o;
  for (int n = 0; n < s.scene.size(); ++n) {
    o.records.push_back(synthesize_echo(s.scene, s.w, n, rng));
    o.estimates.push_back(estimate_delay(o.records.back(), s.w, s.scene.energy,
                                         s.scene.noise_var[n], delay_span(s, n)));
    const auto win = build_window(o.estimates.back().tau_hat, s.w);
    o.codecs.push_back(window_covariance(o.estimates.back(), win, s.w, s.scene.energy,
                                         s.scene.noise_var[n]));
  }
  return o;
}

inline Allocation uniform_bits(const FimContext& ctx, double x) {
  Allocation a;
  for (const auto& r : ctx.receivers) a.push_back(Eigen::VectorXd::Constant(r.dim(), x));
  return a;
}

}  // namespace coopsense::fixture
