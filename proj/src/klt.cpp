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

#include "coopsense/klt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "coopsense/errors.hpp"

namespace coopsense {
namespace {

// Index slack so that exactly aligned edges are not lost to rounding.
constexpr double kEdgeSlack = 1e-9;
constexpr double kTieTol = 1e-12;

}  // namespace

SampleWindow build_window(double tau_hat, const Waveform& w, WindowRule rule) {
  require(w.window_length > 0.0, "window length must be positive");
  require(std::isfinite(tau_hat), "delay estimate must be finite");
  const double lo = (tau_hat - 0.5 * w.window_length) / w.sample_period;
  const double hi = (tau_hat + 0.5 * w.window_length) / w.sample_period;
  long first = 0;
  long last = 0;
  if (rule == WindowRule::kClosed) {
    first = static_cast<long>(std::ceil(lo - kEdgeSlack));
    last = static_cast<long>(std::floor(hi + kEdgeSlack));
  } else {
    first = static_cast<long>(std::floor(lo + kEdgeSlack));
    last = static_cast<long>(std::ceil(hi - kEdgeSlack));
  }
  first = std::max(first, 1L);
  if (w.total_samples > 0) last = std::min(last, static_cast<long>(w.total_samples));
  if (last < first) fail(ErrorCode::kDegenerateWindow, "sample window is empty");

  SampleWindow win;
  win.length = w.window_length;
  for (long k = first; k <= last; ++k) win.indices.push_back(static_cast<int>(k));
  return win;
}

Eigen::VectorXd stack_real(const std::vector<Complex>& values) {
  const Eigen::Index k = static_cast<Eigen::Index>(values.size());
  Eigen::VectorXd out(2 * k);
  for (Eigen::Index i = 0; i < k; ++i) {
    out(i) = values[i].real();
    out(k + i) = values[i].imag();
  }
  return out;
}

Eigen::VectorXd stack_real(const EchoRecord& rec, const SampleWindow& window) {
  std::vector<Complex> values;
  values.reserve(window.indices.size());
  for (int k : window.indices) {
    require(k >= 1 && k <= static_cast<int>(rec.samples.size()), "window exceeds the record");
    values.push_back(rec.samples[k - 1]);
  }
  return stack_real(values);
}

std::vector<Complex> unstack_real(const Eigen::VectorXd& stacked) {
  require(stacked.size() % 2 == 0, "stacked vector must have even length");
  const Eigen::Index k = stacked.size() / 2;
  std::vector<Complex> out(k);
  for (Eigen::Index i = 0; i < k; ++i) out[i] = {stacked(i), stacked(k + i)};
  return out;
}

void ordered_eigen(const Eigen::MatrixXd& q, Eigen::MatrixXd& basis, Eigen::VectorXd& eigvals) {
  if (!q.allFinite()) fail(ErrorCode::kNumericalFailure, "covariance has non-finite entries");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q);
  if (es.info() != Eigen::Success) fail(ErrorCode::kNumericalFailure, "eigensolver failed");
  const Eigen::Index n = q.rows();
  const Eigen::VectorXd& val = es.eigenvalues();
  Eigen::MatrixXd vec = es.eigenvectors();

  std::vector<Eigen::Index> dominant(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::Index first = 0;
    while (first < n && vec(first, j) == 0.0) ++first;
    if (first < n && vec(first, j) < 0.0) vec.col(j) = -vec.col(j);
    vec.col(j).cwiseAbs().maxCoeff(&dominant[j]);
  }

  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return val(a) > val(b); });
  const double tol = kTieTol * std::max(val.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  for (Eigen::Index start = 0; start < n;) {
    Eigen::Index end = start + 1;
    while (end < n && val(order[end - 1]) - val(order[end]) <= tol) ++end;
    std::stable_sort(order.begin() + start, order.begin() + end,
                     [&](Eigen::Index a, Eigen::Index b) { return dominant[a] < dominant[b]; });
    start = end;
  }

  basis.resize(n, n);
  eigvals.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    basis.col(j) = vec.col(order[j]);
    eigvals(j) = val(order[j]);
  }
}

KltCodec window_covariance(const LocalEstimate& est, const SampleWindow& window,
                           const Waveform& w, double energy, double noise_var) {
  require(window.size() > 0, "window must be nonempty");
  require(noise_var >= 0.0 && energy > 0.0, "noise variance and energy must be valid");
  require(std::isfinite(est.crlb_tau) && std::isfinite(est.crlb_alpha),
          "local CRLBs must be finite");
  const int k = window.size();
  std::vector<Complex> slope(k), shape(k);
  Eigen::VectorXd q1 = Eigen::VectorXd::Zero(2 * k);
  Eigen::VectorXd q2 = Eigen::VectorXd::Zero(2 * k);
  for (int i = 0; i < k; ++i) {
    const double t = w.sample_time(window.indices[i]) - est.tau_hat;
    const double s = pulse_value(t, w);
    slope[i] = est.alpha_hat * pulse_derivative(t, w);
    shape[i] = est.alpha_hat * s;
    q1(i) = s;
    q2(k + i) = s;
  }
  const Eigen::VectorXd p = stack_real(slope);
  const Eigen::VectorXd h = stack_real(shape);

  KltCodec codec;
  codec.window = window;
  codec.noise_var = noise_var;
  codec.mean = std::sqrt(energy) * h;
  codec.covariance = energy * est.crlb_tau * p * p.transpose() +
                     energy * 0.5 * est.crlb_alpha * (q1 * q1.transpose() + q2 * q2.transpose());
  codec.covariance.diagonal().array() += 0.5 * noise_var;
  ordered_eigen(codec.covariance, codec.basis, codec.eigvals);
  codec.eigvals = codec.eigvals.cwiseMax(0.5 * noise_var);
  return codec;
}

double quantization_noise_variance(double gamma, int bits, NoiseModel model) {
  require(gamma >= 0.0 && bits >= 0, "eigenvalue and bits must be nonnegative");
  if (model == NoiseModel::kExact) {
    if (bits == 0) return std::numeric_limits<double>::infinity();
    return gamma / std::expm1(2.0 * bits * std::numbers::ln2);
  }
  return gamma * std::exp2(1.0 - 2.0 * bits);
}

QuantizedWindow quantize_window(const Eigen::VectorXd& coeffs, const KltCodec& codec,
                                const std::vector<int>& bits) {
  const Eigen::Index n = codec.dim();
  require(coeffs.size() == n && static_cast<Eigen::Index>(bits.size()) == n,
          "coefficient and bit vectors must match the codec dimension");
  const Eigen::VectorXd mu = codec.component_mean();
  QuantizedWindow out;
  out.bits = bits;
  out.codes.assign(n, 0);
  out.dequantized.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    require(bits[j] >= 0, "bits must be nonnegative");
    if (bits[j] == 0) {
      out.dequantized(j) = mu(j);
      continue;
    }
    const auto cb = standard_codebook(bits[j]);
    const double sd = std::sqrt(codec.eigvals(j));
    const int code = cb->encode((coeffs(j) - mu(j)) / sd);
    out.codes[j] = static_cast<std::uint32_t>(code);
    out.dequantized(j) = mu(j) + sd * cb->levels[code];
  }
  return out;
}

Reconstruction reconstruct(const KltCodec& codec, const QuantizedWindow& q, NoiseModel model) {
  require(q.dequantized.size() == codec.dim(), "quantized window does not match the codec");
  Eigen::VectorXd eta(codec.dim());
  for (Eigen::Index j = 0; j < codec.dim(); ++j) {
    eta(j) = quantization_noise_variance(codec.eigvals(j), q.bits[j], model);
    if (!std::isfinite(eta(j))) eta(j) = codec.eigvals(j);  // mean-only output
  }
  Reconstruction rec;
  rec.signal = codec.basis * q.dequantized;
  rec.error_cov = codec.basis * eta.asDiagonal() * codec.basis.transpose();
  return rec;
}

}  // namespace coopsense
