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

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <shared_mutex>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss.hpp>

#include "coopsense/errors.hpp"
#include "coopsense/klt.hpp"

namespace coopsense {
namespace {

constexpr int kMaxIterations = 10000;
constexpr double kMoveTol = 1e-10;
// Below this centroid residual the level update is rounding noise.
constexpr double kResidualFloor = 1e-12;

double density(double x) {
  if (std::isinf(x)) return 0.0;
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

// P(a < Z <= b), evaluated on the tail that avoids cancellation.
double cell_mass(double a, double b) {
  constexpr double r = std::numbers::sqrt2;
  if (a >= 0.0) return 0.5 * (std::erfc(a / r) - std::erfc(b / r));
  if (b <= 0.0) return 0.5 * (std::erfc(-b / r) - std::erfc(-a / r));
  return 1.0 - 0.5 * std::erfc(-a / r) - 0.5 * std::erfc(b / r);
}

// phi(a) - phi(b) without cancellation for narrow cells.
double density_drop(double a, double b) {
  if (std::isinf(a) || std::isinf(b)) return density(a) - density(b);
  if (std::fabs(a) <= std::fabs(b)) return -density(a) * std::expm1(-0.5 * (b - a) * (b + a));
  return density(b) * std::expm1(-0.5 * (a - b) * (a + b));
}

struct CellStats {
  double centroid;
  double d_lower;  // d centroid / d a
  double d_upper;  // d centroid / d b
};

CellStats cell_stats(double a, double b) {
  if (std::isfinite(a) && std::isfinite(b)) {
    const double m = 0.5 * (a + b);
    const double h = 0.5 * (b - a);
    if (h * (std::fabs(m) + h) <= 2.0) {
      // Moments relative to the midpoint keep narrow cells at full precision.
      using quad = boost::math::quadrature::gauss<double, 16>;
      auto w = [&](double u) { return std::exp(-m * u - 0.5 * u * u); };
      const double i0 = quad::integrate(w, -h, h);
      const double i1 = quad::integrate([&](double u) { return u * w(u); }, -h, h);
      const double off = i1 / i0;
      return {m + off, w(-h) * (h + off) / i0, w(h) * (h - off) / i0};
    }
  }
  const double p = cell_mass(a, b);
  const double c = density_drop(a, b) / p;
  return {c, std::isinf(a) ? 0.0 : density(a) * (c - a) / p,
          std::isinf(b) ? 0.0 : density(b) * (b - c) / p};
}

double lower_edge(const std::vector<double>& l, std::size_t i) {
  return i == 0 ? -INFINITY : 0.5 * (l[i - 1] + l[i]);
}

double upper_edge(const std::vector<double>& l, std::size_t i) {
  return i + 1 == l.size() ? INFINITY : 0.5 * (l[i] + l[i + 1]);
}

double codebook_mse(const std::vector<double>& l) {
  double acc = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    const double a = lower_edge(l, i);
    const double b = upper_edge(l, i);
    const double p = cell_mass(a, b);
    const double m1 = density_drop(a, b);
    const double m2 = p + (std::isinf(a) ? 0.0 : a * density(a)) - (std::isinf(b) ? 0.0 : b * density(b));
    acc += m2 - 2.0 * l[i] * m1 + l[i] * l[i] * p;
  }
  return acc;
}

// Centroid/threshold iteration. Each update solves the linearised fixed-point
// equations (tridiagonal) and falls back to the plain centroid step when that
// would break level ordering.
Codebook build_standard(int bits) {
  const std::size_t n = std::size_t{1} << bits;
  const boost::math::normal_distribution<double> unit;
  std::vector<double> l(n);
  for (std::size_t i = 0; i < n; ++i) {
    l[i] = boost::math::quantile(unit, (static_cast<double>(i) + 0.5) / static_cast<double>(n));
  }

  std::vector<double> lo(n), di(n), up(n), rhs(n), step(n), cprime(n), cent(n);
  int it = 0;
  for (; it < kMaxIterations; ++it) {
    double residual = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto st = cell_stats(lower_edge(l, i), upper_edge(l, i));
      cent[i] = st.centroid;
      lo[i] = -0.5 * st.d_lower;
      up[i] = -0.5 * st.d_upper;
      di[i] = 1.0 - 0.5 * (st.d_lower + st.d_upper);
      rhs[i] = st.centroid - l[i];
      residual = std::max(residual, std::fabs(rhs[i]));
    }
    if (residual <= kResidualFloor) break;

    cprime[0] = up[0] / di[0];
    step[0] = rhs[0] / di[0];
    for (std::size_t i = 1; i < n; ++i) {
      const double m = di[i] - lo[i] * cprime[i - 1];
      cprime[i] = up[i] / m;
      step[i] = (rhs[i] - lo[i] * step[i - 1]) / m;
    }
    for (std::size_t i = n - 1; i-- > 0;) step[i] -= cprime[i] * step[i + 1];

    bool ordered = std::isfinite(step[0]) && std::isfinite(step[n - 1]);
    for (std::size_t i = 1; ordered && i < n; ++i) {
      ordered = std::isfinite(step[i]) && l[i] + step[i] > l[i - 1] + step[i - 1];
    }
    double move = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double next = ordered ? l[i] + step[i] : cent[i];
      move = std::max(move, std::fabs(next - l[i]));
      l[i] = next;
    }
    if (move < kMoveTol) {
      ++it;
      break;
    }
  }
  if (it >= kMaxIterations) {
    fail(ErrorCode::kNonConvergence, "Lloyd iteration did not converge for " +
                                         std::to_string(bits) + " bits");
  }

  Codebook cb;
  cb.levels = std::move(l);
  cb.thresholds.resize(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) cb.thresholds[i] = 0.5 * (cb.levels[i] + cb.levels[i + 1]);
  cb.iterations = it;
  cb.mse = codebook_mse(cb.levels);
  return cb;
}

}  // namespace

int Codebook::encode(double x) const {
  return static_cast<int>(std::upper_bound(thresholds.begin(), thresholds.end(), x) -
                          thresholds.begin());
}

std::shared_ptr<const Codebook> standard_codebook(int bits) {
  require(bits >= 1 && bits <= kMaxCodebookBits, "codebook bits out of range");
  static std::shared_mutex mu;
  static std::map<int, std::shared_ptr<const Codebook>> cache;
  {
    std::shared_lock lock(mu);
    if (auto it = cache.find(bits); it != cache.end()) return it->second;
  }
  std::unique_lock lock(mu);
  if (auto it = cache.find(bits); it != cache.end()) return it->second;
  auto cb = std::make_shared<const Codebook>(build_standard(bits));
  cache.emplace(bits, cb);
  return cb;
}

Codebook lloyd_codebook(int bits, double mean, double variance) {
  require(variance > 0.0 && std::isfinite(variance), "codebook variance must be positive");
  require(std::isfinite(mean), "codebook mean must be finite");
  Codebook cb = *standard_codebook(bits);
  const double sd = std::sqrt(variance);
  for (double& v : cb.levels) v = mean + sd * v;
  for (double& v : cb.thresholds) v = mean + sd * v;
  cb.mse *= variance;
  return cb;
}

}  // namespace coopsense
