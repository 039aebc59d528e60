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

#include "coopsense/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <Eigen/Dense>

#include "coopsense/errors.hpp"

namespace coopsense {
namespace {

constexpr double kCoincident = 1e-9;  // [m]
constexpr double kGradTol = 1e-8;
constexpr double kStepTol = 1e-9;  // [m]
constexpr int kMaxRefine = 500;
constexpr int kRefineStarts = 32;

// Fills s and, when requested, ds/dtheta at theta.
void signal_and_jacobian(const Vec2& theta, const Scene& scene, int n, Complex alpha,
                         const SampleWindow& window, const Waveform& w, Eigen::VectorXd* s,
                         Eigen::MatrixXd* jac) {
  require(n >= 0 && n < scene.size(), "receiver index out of range");
  const int k = window.size();
  const double tau = bistatic_delay(scene.tx, scene.rx[n], theta);
  const double amp = std::sqrt(scene.energy);
  Vec2 dtau = Vec2::Zero();
  if (jac) {
    dtau = delay_gradient(theta, scene.tx, scene.rx[n]);
    jac->resize(2, 2 * k);
  }
  if (s) s->resize(2 * k);
  for (int i = 0; i < k; ++i) {
    const double t = w.sample_time(window.indices[i]) - tau;
    if (s) {
      const Complex v = amp * alpha * pulse_value(t, w);
      (*s)(i) = v.real();
      (*s)(k + i) = v.imag();
    }
    if (jac) {
      // d/dtau of s(kT_s - tau) is -s'(kT_s - tau).
      const Complex ds = -amp * alpha * pulse_derivative(t, w);
      jac->col(i) = ds.real() * dtau;
      jac->col(k + i) = ds.imag() * dtau;
    }
  }
}

double nominal_weight(double gamma, double noise_var, double bits) {
  const double g = gamma * std::exp2(2.0 - 2.0 * bits);
  return 2.0 / (g + noise_var);
}

Vec2 projected_gradient(const Vec2& x, const Vec2& g, const SearchRegion& r) {
  Vec2 out = g;
  for (int i = 0; i < 2; ++i) {
    if ((x(i) <= r.lo(i) && g(i) > 0) || (x(i) >= r.hi(i) && g(i) < 0)) out(i) = 0.0;
  }
  return out;
}

PositionEstimate refine(const CostFn& cost, const SearchRegion& region, Vec2 x) {
  Vec2 g;
  double f = cost(x, &g);
  Eigen::Matrix2d h = Eigen::Matrix2d::Identity() * (region.cell / std::max(g.norm(), 1e-300));
  bool scaled = false;
  int it = 0;
  for (; it < kMaxRefine; ++it) {
    const Vec2 pg = projected_gradient(x, g, region);
    if (!(pg.norm() > kGradTol)) break;
    Vec2 d = -h * g;
    if (g.dot(d) >= 0) {
      h = Eigen::Matrix2d::Identity() * (region.cell / g.norm());
      d = -h * g;
    }
    double a = 1.0;
    Vec2 xn, gn;
    double fn = f;
    bool moved = false;
    for (int bt = 0; bt < 60; ++bt) {
      xn = region.clamp(x + a * d);
      fn = cost(xn, &gn);
      if (fn <= f + 1e-4 * g.dot(xn - x) && fn <= f) {
        moved = true;
        break;
      }
      a *= 0.5;
    }
    if (!moved) break;
    const Vec2 s = xn - x;
    const Vec2 y = gn - g;
    x = xn;
    const double df = f - fn;
    f = fn;
    g = gn;
    if (s.norm() <= kStepTol) break;
    const double sy = s.dot(y);
    if (sy > 1e-300) {
      if (!scaled) {
        h = Eigen::Matrix2d::Identity() * (sy / y.squaredNorm());
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::Matrix2d v = Eigen::Matrix2d::Identity() - rho * s * y.transpose();
      h = v * h * v.transpose() + rho * s * s.transpose();
    }
    if (df == 0.0 && s.norm() <= 1e-6) break;
  }
  return {x, f, it};
}

}  // namespace

std::vector<int> FimContext::all() const {
  std::vector<int> out(receivers.size());
  std::iota(out.begin(), out.end(), 0);
  return out;
}

bool SearchRegion::contains(const Vec2& p) const {
  return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
}

Vec2 SearchRegion::clamp(const Vec2& p) const { return p.cwiseMax(lo).cwiseMin(hi); }

SearchRegion SearchRegion::inflated(double margin) const {
  SearchRegion r = *this;
  r.lo.array() -= margin;
  r.hi.array() += margin;
  return r;
}

Vec2 delay_gradient(const Vec2& theta, const Vec2& tx, const Vec2& rx) {
  const Vec2 a = theta - tx;
  const Vec2 b = theta - rx;
  if (a.norm() < kCoincident || b.norm() < kCoincident) {
    fail(ErrorCode::kInvalidArgument, "target coincides with a node; delay gradient undefined");
  }
  return (a / a.norm() + b / b.norm()) / kSpeedOfLight;
}

Eigen::VectorXd signal_vector(const Vec2& theta, const Scene& scene, int n, Complex alpha,
                              const SampleWindow& window, const Waveform& w) {
  Eigen::VectorXd s;
  signal_and_jacobian(theta, scene, n, alpha, window, w, &s, nullptr);
  return s;
}

Eigen::MatrixXd signal_jacobian(const Vec2& theta, const Scene& scene, int n, Complex alpha,
                                const SampleWindow& window, const Waveform& w) {
  Eigen::MatrixXd jac;
  signal_and_jacobian(theta, scene, n, alpha, window, w, nullptr, &jac);
  return jac;
}

double info_weight(double gamma, double noise_var, double bits, NoiseModel model) {
  require(gamma >= 0.0 && noise_var > 0.0 && bits >= 0.0, "invalid information weight inputs");
  if (model == NoiseModel::kNominal) return nominal_weight(gamma, noise_var, bits);
  if (bits > 20.0) {
    const double e = std::exp2(-2.0 * bits);
    return (1.0 - e) / (0.5 * noise_var * (1.0 - e) + gamma * e);
  }
  const double b = std::expm1(2.0 * bits * std::numbers::ln2);
  return b / (0.5 * noise_var * b + gamma);
}

double info_weight_slope(double gamma, double noise_var, double bits, NoiseModel model) {
  require(gamma >= 0.0 && noise_var > 0.0 && bits >= 0.0, "invalid information weight inputs");
  if (model == NoiseModel::kNominal) {
    const double g = gamma * std::exp2(2.0 - 2.0 * bits);
    const double den = g + noise_var;
    return 4.0 * std::numbers::ln2 * g / (den * den);
  }
  if (bits > 20.0) {
    const double e = std::exp2(-2.0 * bits);
    const double y = info_weight(gamma, noise_var, bits, model);
    return y * y * gamma * 2.0 * std::numbers::ln2 * e / ((1.0 - e) * (1.0 - e));
  }
  const double b = std::expm1(2.0 * bits * std::numbers::ln2);
  const double den = 0.5 * noise_var * b + gamma;
  return 2.0 * std::numbers::ln2 * (b + 1.0) * gamma / (den * den);
}

FimContext build_fim_context(const Scene& scene, const std::vector<LocalEstimate>& estimates,
                             const std::vector<KltCodec>& codecs, const Vec2& theta,
                             const Waveform& w, NoiseModel model) {
  require(estimates.size() == codecs.size(), "estimates and codecs must pair up");
  FimContext ctx;
  ctx.model = model;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    const auto& est = estimates[i];
    const auto& codec = codecs[i];
    ReceiverFim r;
    r.receiver_id = est.receiver_id;
    r.jacobian = signal_jacobian(theta, scene, est.receiver_id, est.alpha_hat, codec.window, w);
    if (!r.jacobian.allFinite()) fail(ErrorCode::kNumericalFailure, "non-finite signal Jacobian");
    r.projected = r.jacobian * codec.basis;
    r.eigvals = codec.eigvals;
    r.noise_var = codec.noise_var;
    ctx.receivers.push_back(std::move(r));
  }
  return ctx;
}

FimContext build_anchored_fim_context(const Scene& scene,
                                      const std::vector<LocalEstimate>& estimates,
                                      const std::vector<KltCodec>& codecs, const Vec2& theta,
                                      const Waveform& w, NoiseModel model) {
  require(estimates.size() == codecs.size(), "estimates and codecs must pair up");
  FimContext ctx;
  ctx.model = model;
  const double amp = std::sqrt(scene.energy);
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    const auto& est = estimates[i];
    const auto& codec = codecs[i];
    require(est.receiver_id >= 0 && est.receiver_id < scene.size(), "receiver index out of range");
    const Vec2 dtau = delay_gradient(theta, scene.tx, scene.rx[est.receiver_id]);
    const int k = codec.window.size();
    ReceiverFim r;
    r.receiver_id = est.receiver_id;
    r.jacobian.resize(2, 2 * k);
    for (int j = 0; j < k; ++j) {
      const double t = w.sample_time(codec.window.indices[j]) - est.tau_hat;
      const Complex ds = -amp * est.alpha_hat * pulse_derivative(t, w);
      r.jacobian.col(j) = ds.real() * dtau;
      r.jacobian.col(k + j) = ds.imag() * dtau;
    }
    if (!r.jacobian.allFinite()) fail(ErrorCode::kNumericalFailure, "non-finite signal Jacobian");
    r.projected = r.jacobian * codec.basis;
    r.eigvals = codec.eigvals;
    r.noise_var = codec.noise_var;
    ctx.receivers.push_back(std::move(r));
  }
  return ctx;
}

Eigen::Matrix2d fim(const FimContext& ctx, const Allocation& bits, const std::vector<int>& active) {
  Eigen::Matrix2d j = Eigen::Matrix2d::Zero();
  for (int n : active) {
    require(n >= 0 && n < ctx.size(), "active receiver out of range");
    const auto& r = ctx.receivers[n];
    require(bits[n].size() == r.dim(), "bit vector does not match the receiver window");
    for (int c = 0; c < r.dim(); ++c) {
      const double y = info_weight(r.eigvals(c), r.noise_var, bits[n](c), ctx.model);
      j.noalias() += y * r.projected.col(c) * r.projected.col(c).transpose();
    }
  }
  return j;
}

Eigen::Matrix2d fim_unquantized(const FimContext& ctx, const std::vector<int>& active) {
  Eigen::Matrix2d j = Eigen::Matrix2d::Zero();
  for (int n : active) {
    require(n >= 0 && n < ctx.size(), "active receiver out of range");
    const auto& r = ctx.receivers[n];
    j.noalias() += (2.0 / r.noise_var) * r.jacobian * r.jacobian.transpose();
  }
  return j;
}

double crlb_theta(const Eigen::Matrix2d& j) {
  const double tr = j.trace();
  const double det = j.determinant();
  const double half = 0.5 * tr;
  const double lmin = half - std::sqrt(std::max(half * half - det, 0.0));
  if (!(tr > 0.0) || !(lmin > 1e-12 * tr) || !std::isfinite(tr)) {
    fail(ErrorCode::kUnlocalizable, "Fisher information is singular");
  }
  return tr / det;
}

PositionEstimate minimize_cost(const CostFn& cost, const SearchRegion& region) {
  require((region.hi.array() >= region.lo.array()).all(), "search region is empty");
  require(region.cell > 0.0, "grid cell must be positive");
  const Vec2 span = region.hi - region.lo;
  const int nx = std::max(1, static_cast<int>(std::ceil(span.x() / region.cell)));
  const int ny = std::max(1, static_cast<int>(std::ceil(span.y() / region.cell)));

  const int cols = ny + 1;
  std::vector<double> grid((nx + 1) * cols);
  for (int i = 0; i <= nx; ++i) {
    for (int j = 0; j <= ny; ++j) {
      const Vec2 p(region.lo.x() + span.x() * i / nx, region.lo.y() + span.y() * j / ny);
      const double f = cost(p, nullptr);
      grid[i * cols + j] = std::isfinite(f) ? f : std::numeric_limits<double>::infinity();
    }
  }

  // Refinement starts: the lowest grid-local minima, one per basin.
  struct Node {
    double f;
    Vec2 p;
  };
  std::vector<Node> best;
  for (int i = 0; i <= nx; ++i) {
    for (int j = 0; j <= ny; ++j) {
      const double f = grid[i * cols + j];
      if (!std::isfinite(f)) continue;
      bool minimum = true;
      for (int di = -1; di <= 1 && minimum; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
          const int a = i + di;
          const int b = j + dj;
          if ((di == 0 && dj == 0) || a < 0 || a > nx || b < 0 || b > ny) continue;
          const double g = grid[a * cols + b];
          // Ties go to the first index so a plateau yields one start.
          if (g < f || (g == f && (a < i || (a == i && b < j)))) {
            minimum = false;
            break;
          }
        }
      }
      if (minimum) {
        best.push_back(
            {f, Vec2(region.lo.x() + span.x() * i / nx, region.lo.y() + span.y() * j / ny)});
      }
    }
  }
  if (best.empty()) fail(ErrorCode::kNumericalFailure, "cost is non-finite over the whole region");
  std::stable_sort(best.begin(), best.end(), [](const Node& a, const Node& b) { return a.f < b.f; });
  if (static_cast<int>(best.size()) > kRefineStarts) best.resize(kRefineStarts);

  PositionEstimate out{best.front().p, best.front().f, 0};
  int total = 0;
  for (const auto& start : best) {
    const auto r = refine(cost, region, start.p);
    total += r.iterations;
    if (r.objective < out.objective) out = r;
  }
  out.iterations = total;
  return out;
}

CostFn signal_cost(const std::vector<SignalObservation>& obs, const Scene& scene,
                   const Waveform& w) {
  require(!obs.empty(), "fusion needs at least one receiver");
  return [&obs, &scene, &w](const Vec2& theta, Vec2* grad) {
    double f = 0.0;
    if (grad) grad->setZero();
    Eigen::VectorXd s;
    Eigen::MatrixXd jac;
    for (const auto& o : obs) {
      signal_and_jacobian(theta, scene, o.receiver, o.alpha, o.window, w, &s, grad ? &jac : nullptr);
      const Eigen::VectorXd e = o.samples - s;
      const Eigen::VectorXd pe = o.precision * e;
      f += 0.5 * e.dot(pe);
      if (grad) *grad -= jac * pe;
    }
    return f;
  };
}

PositionEstimate fc_ml_localize(const std::vector<SignalObservation>& obs, const Scene& scene,
                                const Waveform& w, const SearchRegion& region) {
  return minimize_cost(signal_cost(obs, scene, w), region);
}

SignalObservation quantized_observation(const LocalEstimate& est, const KltCodec& codec,
                                        const QuantizedWindow& q, NoiseModel model) {
  SignalObservation o;
  o.receiver = est.receiver_id;
  o.alpha = est.alpha_hat;
  o.window = codec.window;
  o.samples = codec.basis * q.dequantized;
  Eigen::VectorXd y(codec.dim());
  for (int j = 0; j < codec.dim(); ++j) {
    y(j) = info_weight(codec.eigvals(j), codec.noise_var, q.bits[j], model);
  }
  o.precision = codec.basis * y.asDiagonal() * codec.basis.transpose();
  return o;
}

SignalObservation ideal_observation(const EchoRecord& rec, const LocalEstimate& est,
                                    const SampleWindow& window, double noise_var) {
  SignalObservation o;
  o.receiver = est.receiver_id;
  o.alpha = est.alpha_hat;
  o.window = window;
  o.samples = stack_real(rec, window);
  const int n = static_cast<int>(o.samples.size());
  o.precision = Eigen::MatrixXd::Identity(n, n) * (2.0 / noise_var);
  return o;
}

SignalObservation uniform_observation(const EchoRecord& rec, const LocalEstimate& est,
                                      const KltCodec& codec, int bits) {
  require(bits >= 1 && bits <= 30, "uniform quantizer bits out of range");
  SignalObservation o;
  o.receiver = est.receiver_id;
  o.alpha = est.alpha_hat;
  o.window = codec.window;
  const Eigen::VectorXd raw = stack_real(rec, codec.window);
  const double levels = std::exp2(bits);
  const double delta = 8.0 * std::sqrt(codec.eigvals.maxCoeff()) / levels;
  const double top = 0.5 * levels - 0.5;
  o.samples.resize(raw.size());
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    const double u = std::clamp(std::floor((raw(i) - codec.mean(i)) / delta) + 0.5, -top, top);
    o.samples(i) = codec.mean(i) + delta * u;
  }
  const int n = static_cast<int>(raw.size());
  o.precision = Eigen::MatrixXd::Identity(n, n) / (0.5 * codec.noise_var + delta * delta / 12.0);
  return o;
}

CostFn toa_cost(const std::vector<LocalEstimate>& estimates, const Scene& scene) {
  return [&estimates, &scene](const Vec2& theta, Vec2* grad) {
    double f = 0.0;
    if (grad) grad->setZero();
    for (const auto& e : estimates) {
      const Vec2& rx = scene.rx[e.receiver_id];
      const double r = e.tau_hat - bistatic_delay(scene.tx, rx, theta);
      f += r * r / e.crlb_tau;
      if (grad) *grad -= 2.0 * r / e.crlb_tau * delay_gradient(theta, scene.tx, rx);
    }
    return f;
  };
}

CostFn toa_rss_cost(const std::vector<LocalEstimate>& estimates, const Scene& scene,
                    const Waveform& w) {
  CostFn toa = toa_cost(estimates, scene);
  return [toa, &estimates, &scene, &w](const Vec2& theta, Vec2* grad) {
    double f = toa(theta, grad);
    for (const auto& e : estimates) {
      const Vec2& rx = scene.rx[e.receiver_id];
      const double a = scene.reflect_amp * pathloss_amplitude(scene.tx, rx, theta, w.carrier_hz);
      const double model = a * a;
      const double meas = std::norm(e.alpha_hat);
      const double var = 2.0 * meas * e.crlb_alpha;
      const double r = meas - model;
      f += r * r / var;
      if (grad) {
        const Vec2 d1 = theta - scene.tx;
        const Vec2 d2 = theta - rx;
        const Vec2 dmodel = -2.0 * model * (d1 / d1.squaredNorm() + d2 / d2.squaredNorm());
        *grad -= 2.0 * r / var * dmodel;
      }
    }
    return f;
  };
}

PositionEstimate baseline_toa_idcs(const std::vector<LocalEstimate>& estimates,
                                   const Scene& scene, const SearchRegion& region) {
  if (estimates.size() < 2) fail(ErrorCode::kInvalidArgument, "TOA fusion needs two receivers");
  return minimize_cost(toa_cost(estimates, scene), region);
}

PositionEstimate baseline_toa_rss_idcs(const std::vector<LocalEstimate>& estimates,
                                       const Scene& scene, const Waveform& w,
                                       const SearchRegion& region) {
  if (estimates.size() < 2) fail(ErrorCode::kInvalidArgument, "TOA fusion needs two receivers");
  return minimize_cost(toa_rss_cost(estimates, scene, w), region);
}

}  // namespace coopsense
