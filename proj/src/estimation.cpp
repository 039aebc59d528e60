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

#include "coopsense/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "coopsense/errors.hpp"

namespace coopsense {
namespace {

// s(t) underflows relative to its peak long before 8T.
constexpr double kSupportWidths = 8.0;

struct SampleRange {
  int first;
  int last;
};

SampleRange support(double tau, const Waveform& w) {
  const double half = kSupportWidths * w.pulse_width;
  const int first = std::max(1, static_cast<int>(std::floor((tau - half) / w.sample_period)));
  const int last = std::min(w.total_samples,
                            static_cast<int>(std::ceil((tau + half) / w.sample_period)));
  return {first, last};
}

// Captured energy below this fraction of the full pulse means the delay sits
// outside the record.
double degenerate_energy(const Waveform& w) { return 1e-9 / w.sample_period; }

}  // namespace

double pulse_energy_sum(double tau, const Waveform& w) {
  const auto [first, last] = support(tau, w);
  double acc = 0.0;
  for (int k = first; k <= last; ++k) {
    const double s = pulse_value(w.sample_time(k) - tau, w);
    acc += s * s;
  }
  return acc;
}

double pulse_slope_sum(double tau, const Waveform& w) {
  const auto [first, last] = support(tau, w);
  double acc = 0.0;
  for (int k = first; k <= last; ++k) {
    const double d = pulse_derivative(w.sample_time(k) - tau, w);
    acc += d * d;
  }
  return acc;
}

Complex estimate_alpha_given_tau(const EchoRecord& rec, double tau, const Waveform& w,
                                 double energy) {
  const auto [first, last] = support(tau, w);
  Complex corr{0.0, 0.0};
  double norm = 0.0;
  for (int k = first; k <= last; ++k) {
    const double s = pulse_value(w.sample_time(k) - tau, w);
    corr += rec.samples[k - 1] * s;
    norm += s * s;
  }
  if (!(norm > degenerate_energy(w))) {
    fail(ErrorCode::kDegenerateWindow, "pulse at the requested delay lies outside the record");
  }
  return corr / (std::sqrt(energy) * norm);
}

double delay_objective(const EchoRecord& rec, double tau, const Waveform& w) {
  const auto [first, last] = support(tau, w);
  Complex corr{0.0, 0.0};
  double norm = 0.0;
  for (int k = first; k <= last; ++k) {
    const double s = pulse_value(w.sample_time(k) - tau, w);
    corr += rec.samples[k - 1] * s;
    norm += s * s;
  }
  if (!(norm > degenerate_energy(w))) return 0.0;
  return std::norm(corr) / norm;
}

LocalEstimate estimate_delay(const EchoRecord& rec, const Waveform& w, double energy,
                             double noise_var, const DelaySearch& search) {
  if (!(search.tau_max >= search.tau_min)) {
    fail(ErrorCode::kInvalidArgument, "delay search interval is empty");
  }
  const double step = search.grid_step > 0 ? search.grid_step : w.sample_period / 4.0;
  const int cells = static_cast<int>(std::floor((search.tau_max - search.tau_min) / step));

  double best_tau = search.tau_min;
  double best_obj = delay_objective(rec, best_tau, w);
  for (int i = 1; i <= cells; ++i) {
    const double tau = search.tau_min + i * step;
    const double obj = delay_objective(rec, tau, w);
    if (obj > best_obj) {
      best_obj = obj;
      best_tau = tau;
    }
  }

  // Golden-section search on the bracket around the best grid node.
  double lo = std::max(search.tau_min, best_tau - step);
  double hi = std::min(search.tau_max, best_tau + step);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = hi - inv_phi * (hi - lo);
  double b = lo + inv_phi * (hi - lo);
  double fa = delay_objective(rec, a, w);
  double fb = delay_objective(rec, b, w);
  while (hi - lo > search.resolution) {
    if (fa >= fb) {
      hi = b;
      b = a;
      fb = fa;
      a = hi - inv_phi * (hi - lo);
      fa = delay_objective(rec, a, w);
    } else {
      lo = a;
      a = b;
      fa = fb;
      b = lo + inv_phi * (hi - lo);
      fb = delay_objective(rec, b, w);
    }
  }
  const double refined = 0.5 * (lo + hi);
  const double refined_obj = delay_objective(rec, refined, w);
  const double tau_hat = refined_obj >= best_obj ? refined : best_tau;

  LocalEstimate est;
  est.receiver_id = rec.receiver_id;
  est.tau_hat = tau_hat;
  est.alpha_hat = estimate_alpha_given_tau(rec, tau_hat, w, energy);
  est.crlb_alpha = crlb_alpha(tau_hat, noise_var, energy, w);
  est.crlb_tau = std::abs(est.alpha_hat) > 0.0
                     ? crlb_tau(est.alpha_hat, tau_hat, noise_var, energy, w)
                     : std::numeric_limits<double>::infinity();
  return est;
}

double crlb_tau(Complex alpha_hat, double tau_hat, double noise_var, double energy,
                const Waveform& w) {
  const double mag2 = std::norm(alpha_hat);
  if (!(mag2 > 0.0)) fail(ErrorCode::kInvalidArgument, "zero amplitude gives an infinite delay CRLB");
  const double slope = pulse_slope_sum(tau_hat, w);
  if (!(slope > 0.0)) fail(ErrorCode::kDegenerateWindow, "pulse slope vanishes over the record");
  return 1.0 / (2.0 * energy / noise_var * mag2 * slope);
}

double crlb_alpha(double tau_hat, double noise_var, double energy, const Waveform& w) {
  const double sum = pulse_energy_sum(tau_hat, w);
  if (!(sum > degenerate_energy(w))) {
    fail(ErrorCode::kDegenerateWindow, "pulse at the estimated delay lies outside the record");
  }
  return 1.0 / (2.0 * energy / noise_var * sum);
}

}  // namespace coopsense
