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
#include <memory>
#include <vector>

#include <Eigen/Core>

#include "coopsense/estimation.hpp"
#include "coopsense/scene.hpp"

namespace coopsense {

// kCovering spans the interval with the enclosing sample grid, so a window of
// length T_d holds T_d / T_s + 2 samples off-grid. kClosed keeps only the
// samples inside the closed interval.
enum class WindowRule { kCovering, kClosed };

enum class NoiseModel { kNominal, kExact };

inline constexpr int kMaxCodebookBits = 20;

struct SampleWindow {
  std::vector<int> indices;  // sample indices k, t = k T_s
  double length = 0.0;       // T_d

  int size() const { return static_cast<int>(indices.size()); }
};

struct KltCodec {
  SampleWindow window;
  Eigen::VectorXd mean;        // sqrt(E) h
  Eigen::MatrixXd covariance;  // Q_r
  Eigen::MatrixXd basis;       // U, columns are eigenvectors
  Eigen::VectorXd eigvals;     // descending
  double noise_var = 0.0;

  int dim() const { return static_cast<int>(mean.size()); }
  Eigen::VectorXd component_mean() const { return basis.transpose() * mean; }
};

struct Codebook {
  std::vector<double> levels;      // ascending, 2^X entries
  std::vector<double> thresholds;  // 2^X - 1 midpoints
  int iterations = 0;
  double mse = 0.0;

  int encode(double x) const;
};

struct QuantizedWindow {
  std::vector<std::uint32_t> codes;
  Eigen::VectorXd dequantized;  // transform-domain values
  std::vector<int> bits;
};

struct Reconstruction {
  Eigen::VectorXd signal;
  Eigen::MatrixXd error_cov;
};

SampleWindow build_window(double tau_hat, const Waveform& w,
                          WindowRule rule = WindowRule::kCovering);

Eigen::VectorXd stack_real(const std::vector<Complex>& values);

Eigen::VectorXd stack_real(const EchoRecord& rec, const SampleWindow& window);

std::vector<Complex> unstack_real(const Eigen::VectorXd& stacked);

KltCodec window_covariance(const LocalEstimate& est, const SampleWindow& window,
                           const Waveform& w, double energy, double noise_var);

// Symmetric eigendecomposition sorted descending, first nonzero entry of each
// eigenvector positive, near-ties ordered by the position of the dominant entry.
void ordered_eigen(const Eigen::MatrixXd& q, Eigen::MatrixXd& basis, Eigen::VectorXd& eigvals);

double quantization_noise_variance(double gamma, int bits, NoiseModel model = NoiseModel::kNominal);

// Lloyd-Max codebook of N(0, 1); cached.
std::shared_ptr<const Codebook> standard_codebook(int bits);

Codebook lloyd_codebook(int bits, double mean, double variance);

QuantizedWindow quantize_window(const Eigen::VectorXd& coeffs, const KltCodec& codec,
                                const std::vector<int>& bits);

Reconstruction reconstruct(const KltCodec& codec, const QuantizedWindow& q,
                           NoiseModel model = NoiseModel::kNominal);

}  // namespace coopsense
