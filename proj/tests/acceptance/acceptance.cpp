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


// Acceptance runner: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>

#include "coopsense/backhaul.hpp"
#include "coopsense/errors.hpp"
#include "coopsense/estimation.hpp"
#include "coopsense/fusion.hpp"
#include "coopsense/harness.hpp"
#include "coopsense/klt.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "solver_oracles.hpp"

using namespace coopsense;

namespace {

// Pinned tolerances.
constexpr double kCrlbTauRel = 0.05;
constexpr double kCrlbAlphaRel = 1e-9;
constexpr double kCovarianceRel = 1e-6;
constexpr double kEigenRel = 1e-8;
constexpr double kWeightRel = 1e-12;
constexpr double kSlopeRel = 1e-6;
constexpr double kJacobianRel = 1e-4;
constexpr double kFimIdentityRel = 1e-8;
constexpr double kFimLimitRel = 1e-6;
constexpr double kLloydTol = 1e-3;
constexpr double kInnerObjectiveTol = 1e-2;
constexpr double kInnerResidual = 1e-6;
constexpr int kMcscaMaxIter = 50;
constexpr double kMcscaConvergedShare = 0.9;
constexpr double kKktTol = 1e-3;
constexpr double kMonotoneRel = 1e-12;
constexpr int kMinPairedTrials = 500;
constexpr double kHisdcsIdealRatio = 1.5;
constexpr double kSigmas = 2.0;
constexpr double kUniformWRatio = 0.25;
constexpr double kGreedyReduction = 0.15;
constexpr double kReallocBand = 0.25;

struct Options {
  int trials = 500;
  int threads = 0;
  std::uint64_t seed = 1;
  std::string cli = COOPSENSE_CLI_PATH;
};

struct Verdict {
  bool pass = true;
  std::string detail;
  double limit_s = 0.0;  // 0: no runtime bound

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / b.norm();
}

struct Stats {
  double mean = 0.0;
  double se = 0.0;
};

Stats stats(const std::vector<double>& v) {
  Stats s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() < 2) return s;
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  return s;
}

// 1. Closed forms against finite-difference and identity oracles.
Verdict formula_fidelity(const Options&) {
  Verdict v;
  v.limit_s = 60.0;
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  double worst_tau = 0.0, worst_alpha = 0.0, worst_cov = 0.0, worst_eig = 0.0;
  for (int c = 0; c < 20; ++c) {
    Waveform w;
    w.total_samples = 120;
    const double tau = 5e-7 + 2e-7 * u(rng);
    const double mag = 0.2 + 1.8 * u(rng);
    const double phase = 2 * std::numbers::pi * u(rng);
    const double sigma2 = std::pow(10.0, 3.0 + 3.0 * u(rng));
    const double energy = 0.5 + 1.5 * u(rng);
    const Complex alpha = std::polar(mag, phase);

    // Delay bound: numerically inverted (tau, |alpha|) Fisher matrix.
    auto mean = [&](double t, Complex a, double k) {
      return std::sqrt(energy) * a * pulse_value(k * w.sample_period - t, w);
    };
    const double ht = 1e-13, ha = 1e-7;
    Eigen::Matrix2d f = Eigen::Matrix2d::Zero();
    Eigen::Matrix2d fa = Eigen::Matrix2d::Zero();
    for (int k = 1; k <= w.total_samples; ++k) {
      const Complex dt = (mean(tau + ht, alpha, k) - mean(tau - ht, alpha, k)) / (2 * ht);
      const Complex dm = (mean(tau, std::polar(mag + ha, phase), k) -
                          mean(tau, std::polar(mag - ha, phase), k)) / (2 * ha);
      f(0, 0) += std::norm(dt);
      f(1, 1) += std::norm(dm);
      f(0, 1) += (std::conj(dt) * dm).real();
      const Complex dre = (mean(tau, alpha + 1e-3, k) - mean(tau, alpha - 1e-3, k)) / 2e-3;
      const Complex dim = (mean(tau, alpha + Complex(0, 1e-3), k) -
                           mean(tau, alpha - Complex(0, 1e-3), k)) / 2e-3;
      fa(0, 0) += std::norm(dre);
      fa(1, 1) += std::norm(dim);
      fa(0, 1) += (std::conj(dre) * dim).real();
    }
    f(1, 0) = f(0, 1);
    fa(1, 0) = fa(0, 1);
    f *= 2.0 / sigma2;
    fa *= 2.0 / sigma2;
    const double tau_oracle = f.inverse()(0, 0);
    const double ct = crlb_tau(alpha, tau, sigma2, energy, w);
    worst_tau = std::max(worst_tau, std::fabs(ct - tau_oracle) / tau_oracle);

    // Amplitude bound: Fisher matrix of the real and imaginary parts at known delay.
    const double alpha_oracle = fa.inverse()(0, 0);
    const double ca = crlb_alpha(tau, sigma2, energy, w);
    worst_alpha = std::max(worst_alpha, std::fabs(ca - alpha_oracle) / alpha_oracle);

    // Window covariance rebuilt from finite-difference sensitivities of the mean.
    LocalEstimate est;
    est.tau_hat = tau;
    est.alpha_hat = alpha;
    est.crlb_tau = ct;
    est.crlb_alpha = ca;
    const SampleWindow win = build_window(tau, w);
    const KltCodec codec = window_covariance(est, win, w, energy, sigma2);
    auto stacked = [&](double t, Complex a) {
      std::vector<Complex> m;
      for (int k : win.indices) m.push_back(mean(t, a, k));
      return stack_real(m);
    };
    const Eigen::VectorXd d_tau = (stacked(tau + ht, alpha) - stacked(tau - ht, alpha)) / (2 * ht);
    const Eigen::VectorXd d_re = (stacked(tau, alpha + 1e-3) - stacked(tau, alpha - 1e-3)) / 2e-3;
    const Eigen::VectorXd d_im =
        (stacked(tau, alpha + Complex(0, 1e-3)) - stacked(tau, alpha - Complex(0, 1e-3))) / 2e-3;
    Eigen::MatrixXd q = ct * d_tau * d_tau.transpose() +
                        0.5 * ca * (d_re * d_re.transpose() + d_im * d_im.transpose());
    q.diagonal().array() += 0.5 * sigma2;
    worst_cov = std::max(worst_cov, rel(codec.covariance, q));
    worst_cov = std::max(worst_cov, (codec.mean - stacked(tau, alpha)).norm() / codec.mean.norm());
    const Eigen::MatrixXd back = codec.basis * codec.eigvals.asDiagonal() * codec.basis.transpose();
    worst_eig = std::max(worst_eig, rel(back, codec.covariance));
  }
  v.require(worst_tau <= kCrlbTauRel, "delay bound vs numerical Fisher " + fmt(worst_tau));
  v.require(worst_alpha <= kCrlbAlphaRel, "amplitude bound vs Fisher " + fmt(worst_alpha));
  v.require(worst_cov <= kCovarianceRel, "window covariance vs rebuilt " + fmt(worst_cov));
  v.require(worst_eig <= kEigenRel, "eigendecomposition " + fmt(worst_eig));

  // Information weight against its closed form and fixed values.
  double worst_y = 0.0, worst_slope = 0.0, worst_taylor = 0.0;
  for (int c = 0; c < 2000; ++c) {
    const double g = std::pow(10.0, -3.0 + 6.0 * u(rng));
    const double s2 = std::pow(10.0, -2.0 + 4.0 * u(rng));
    const double x = 1e-3 + 16.0 * u(rng);
    const double closed = std::exp2(2 * x - 1) / (g + std::exp2(2 * x - 2) * s2);
    worst_y = std::max(worst_y, std::fabs(info_weight(g, s2, x) - closed) / closed);

    const double h = 1e-4;
    const double y = info_weight(g, s2, x);
    const double fd = (info_weight(g, s2, x + h) - info_weight(g, s2, x - h)) / (2 * h);
    const double slope = info_weight_slope(g, s2, x);
    // Rounding in the difference quotient is about 1e-16 y / h.
    worst_slope = std::max(worst_slope, std::fabs(slope - fd) / (std::fabs(fd) + 1e-4 * y));

    // Surrogate: tangent at x_t with a second-order remainder.
    const double xt = x, z = 16.0 * u(rng);
    const double tangent_gap = std::fabs(surrogate_weight(xt, xt, g, s2) - y) / y;
    worst_taylor = std::max(worst_taylor, tangent_gap / kWeightRel);
    const double lo = std::min(z, xt), hi = std::max(z, xt);
    double curv = 0.0;
    for (int k = 0; k <= 200; ++k) {
      const double p = std::max(lo + (hi - lo) * k / 200.0, h);
      curv = std::max(curv, std::fabs(info_weight_slope(g, s2, p + h) -
                                      info_weight_slope(g, s2, p - h)) / (2 * h));
    }
    const double err = std::fabs(surrogate_weight(z, xt, g, s2) - info_weight(g, s2, z));
    const double bound = 0.5 * curv * 1.05 * (z - xt) * (z - xt) + 1e-12 * y;
    if (err > bound) worst_taylor = std::max(worst_taylor, 1.0 + err / bound);
  }
  v.require(std::fabs(info_weight(1.0, 1.0, 1.0) - 1.0) <= kWeightRel, "y(1; 1, 1) = 1");
  v.require(std::fabs(info_weight(3.0, 0.7, 0.0) - 0.5 / (3.0 + 0.25 * 0.7)) <= kWeightRel,
            "y(0) = 0.5 / (gamma + sigma^2 / 4)");
  v.require(std::fabs(info_weight(3.0, 0.7, 60.0) - 2.0 / 0.7) <= 1e-9, "y -> 2 / sigma^2");
  v.require(worst_y <= kWeightRel, "information weight closed form " + fmt(worst_y));
  v.require(worst_slope <= kSlopeRel, "weight slope vs finite difference " + fmt(worst_slope));
  v.require(worst_taylor <= 1.0, "surrogate tangency and remainder " + fmt(worst_taylor));

  // Signal Jacobian, then the FIM in covariance form against the weighted form.
  double worst_jac = 0.0, worst_fim = 0.0, worst_limit = 0.0;
  std::uniform_int_distribution<int> bits(0, 9);
  for (int c = 0; c < 100; ++c) {
    auto s = fixture::linear_scene(3 + c % 3, {80.0 + c % 7 * 9.0, 55.0 + c % 5 * 10.0}, 5.0);
    const auto o = fixture::observe(s, rng);
    const auto ctx = build_fim_context(s.scene, o.estimates, o.codecs, s.scene.target, s.w);

    if (c < 20) {
      const int n = c % s.scene.size();
      const auto& win = o.codecs[n].window;
      const Complex a = o.estimates[n].alpha_hat;
      const Eigen::MatrixXd jac = signal_jacobian(s.scene.target, s.scene, n, a, win, s.w);
      Eigen::MatrixXd fd(2, jac.cols());
      for (int d = 0; d < 2; ++d) {
        Vec2 e = Vec2::Zero();
        e[d] = 1e-4;
        fd.row(d) = ((signal_vector(s.scene.target + e, s.scene, n, a, win, s.w) -
                      signal_vector(s.scene.target - e, s.scene, n, a, win, s.w)) / 2e-4)
                        .transpose();
      }
      worst_jac = std::max(worst_jac, rel(jac, fd));
    }

    Allocation x;
    for (const auto& r : ctx.receivers) {
      Eigen::VectorXd b(r.dim());
      for (int j = 0; j < r.dim(); ++j) b(j) = bits(rng);
      x.push_back(b);
    }
    Eigen::Matrix2d direct = Eigen::Matrix2d::Zero();
    Eigen::Matrix2d noise_only = Eigen::Matrix2d::Zero();
    for (int n = 0; n < ctx.size(); ++n) {
      QuantizedWindow q;
      q.bits.assign(x[n].data(), x[n].data() + x[n].size());
      q.dequantized = Eigen::VectorXd::Zero(x[n].size());
      Eigen::MatrixXd cov = reconstruct(o.codecs[n], q).error_cov;
      cov.diagonal().array() += 0.5 * ctx.receivers[n].noise_var;
      const auto& jac = ctx.receivers[n].jacobian;
      direct += jac * cov.ldlt().solve(jac.transpose());
      noise_only += jac * jac.transpose() * (2.0 / ctx.receivers[n].noise_var);
    }
    worst_fim = std::max(worst_fim, rel(fim(ctx, x, ctx.all()), direct));
    worst_limit = std::max(worst_limit, rel(fim_unquantized(ctx, ctx.all()), noise_only));
    worst_limit = std::max(worst_limit, rel(fim(ctx, fixture::uniform_bits(ctx, 80.0), ctx.all()),
                                            noise_only));
  }
  v.require(worst_jac <= kJacobianRel, "signal Jacobian vs finite difference " + fmt(worst_jac));
  v.require(worst_fim <= kFimIdentityRel, "FIM identity on 100 instances " + fmt(worst_fim));
  v.require(worst_limit <= kFimLimitRel, "unlimited-bit FIM limit " + fmt(worst_limit));
  v.note("delay bound " + fmt(worst_tau) + ", covariance " + fmt(worst_cov) + ", FIM identity " +
         fmt(worst_fim));
  return v;
}

// 2. One-bit Lloyd-Max codebook of N(0, 1).
Verdict lloyd(const Options&) {
  Verdict v;
  v.limit_s = 10.0;
  const double level = std::sqrt(2.0 / std::numbers::pi);
  const double mse = 1.0 - 2.0 / std::numbers::pi;
  const auto cb = standard_codebook(1);
  const auto grid = oracle::grid_lloyd(1);
  v.require(cb->levels.size() == 2, "two levels");
  if (cb->levels.size() == 2) {
    v.require(std::fabs(cb->levels[0] + level) <= kLloydTol, "lower level " + fmt(cb->levels[0]));
    v.require(std::fabs(cb->levels[1] - level) <= kLloydTol, "upper level " + fmt(cb->levels[1]));
    v.require(std::fabs(cb->levels[1] - grid.levels[1]) <= kLloydTol, "level vs grid oracle");
  }
  v.require(std::fabs(cb->mse - mse) <= kLloydTol, "distortion " + fmt(cb->mse));
  v.require(std::fabs(cb->mse - grid.mse) <= kLloydTol, "distortion vs grid oracle");
  v.require(std::fabs(grid.levels[1] - level) <= kLloydTol && std::fabs(grid.mse - mse) <= kLloydTol,
            "grid oracle fixed point");
  v.note("levels +-" + fmt(cb->levels.back()) + ", distortion " + fmt(cb->mse));
  return v;
}

// 3. Barrier solution of single-member, two-component subproblems vs a dense grid.
Verdict inner_solver(const Options&) {
  Verdict v;
  v.limit_s = 300.0;
  std::mt19937_64 rng(7);
  double worst_gap = 0.0, worst_res = 0.0;
  int failed = 0;
  for (int i = 0; i < 50; ++i) {
    const InnerProblem p = oracle::toy_problem(rng, i % 2 == 0 ? 1e-3 : 1e-2);
    try {
      const InnerSolution sol = inner_solve(p);
      const double oracle = oracle::grid_oracle(p);
      worst_gap = std::max(worst_gap, std::fabs(sol.objective - oracle));
      worst_res = std::max(worst_res, inner_violation(p, sol));
    } catch (const Error&) {
      ++failed;
    }
  }
  v.require(failed == 0, std::to_string(failed) + " solver errors");
  v.require(worst_gap <= kInnerObjectiveTol, "objective gap " + fmt(worst_gap));
  v.require(worst_res <= kInnerResidual, "residual " + fmt(worst_res));
  v.note("50 instances, max gap " + fmt(worst_gap) + ", max residual " + fmt(worst_res));
  return v;
}

ExperimentConfig default_config(const Options& o) {
  ExperimentConfig cfg;
  cfg.trials = o.trials;
  cfg.seed = o.seed;
  cfg.threads = o.threads;
  return cfg;
}

// Smallest integer W with every subset load within W log2(1 + sum P g / N0).
bool satisfies_mac(const Scene& scene, const std::vector<int>& ids,
                   const std::vector<double>& totals, int w, bool* minimal) {
  const int m = static_cast<int>(ids.size());
  bool ok = true, tight = w == 1;
  for (unsigned mask = 1; mask < (1u << m); ++mask) {
    double load = 0.0, snr = 0.0;
    for (int i = 0; i < m; ++i) {
      if (mask & (1u << i)) {
        load += totals[i];
        snr += scene.backhaul_power[ids[i]] * scene.backhaul_gain[ids[i]] / scene.backhaul_noise;
      }
    }
    const double cap = std::log2(1.0 + snr);
    if (load > w * cap * (1.0 + 1e-12)) ok = false;
    if (load > (w - 1) * cap * (1.0 + 1e-12)) tight = true;
  }
  *minimal = tight;
  return ok;
}

// 4. MCSCA convergence on the default linear scenario.
Verdict mcsca_convergence(const Options& o) {
  Verdict v;
  v.limit_s = 900.0;
  const ExperimentConfig cfg = default_config(o);
  const Layout layout = make_layout(cfg.scenario);
  SolverConfig solver = cfg.solver;
  solver.record_trace = true;
  int converged = 0, infeasible = 0, mac_bad = 0, errors = 0;
  double worst_kkt = 0.0;
  for (int t = 0; t < 100; ++t) {
    try {
      const TrialProblem tp = prepare_trial(cfg, layout, t);
      const AllocationResult r = mcsca_run(tp.ctx, tp.scene, tp.ctx.all(), tp.epsilon, solver);
      int first = 0;
      for (const TraceRow& row : r.trace) {
        if (row.step <= row.step_tol) {
          first = row.iteration;
          break;
        }
      }
      if (first > 0 && first <= kMcscaMaxIter) ++converged;
      worst_kkt = std::max(worst_kkt, r.kkt_residual);
      const double crlb = crlb_theta(fim(tp.ctx, r.allocation(tp.ctx), r.selected));
      if (!(crlb <= tp.epsilon) || !(r.crlb <= tp.epsilon)) ++infeasible;
      std::vector<int> ids;
      std::vector<double> totals;
      for (std::size_t i = 0; i < r.selected.size(); ++i) {
        ids.push_back(tp.ctx.receivers[r.selected[i]].receiver_id);
        double sum = 0.0;
        for (int b : r.bits[i]) sum += b;
        totals.push_back(sum);
      }
      bool minimal = false;
      if (!satisfies_mac(tp.scene, ids, totals, r.channel_uses, &minimal) || !minimal) ++mac_bad;
    } catch (const Error&) {
      ++errors;
    }
  }
  v.require(converged >= kMcscaConvergedShare * 100,
            std::to_string(converged) + "/100 converged within 50 iterations");
  v.require(worst_kkt <= kKktTol, "KKT residual " + fmt(worst_kkt));
  v.require(infeasible == 0, std::to_string(infeasible) + " rounded solutions above epsilon");
  v.require(mac_bad == 0, std::to_string(mac_bad) + " channel-use counts off the MAC region");
  v.require(errors == 0, std::to_string(errors) + " runs raised errors");
  v.note(std::to_string(converged) + "/100 converged, max KKT " + fmt(worst_kkt));
  return v;
}

// 5. CRLB never grows with more bits or more receivers.
Verdict monotonicity(const Options& o) {
  Verdict v;
  ExperimentConfig cfg = default_config(o);
  const Layout layout = make_layout(cfg.scenario);
  std::vector<FimContext> contexts;
  for (int t = 0; t < 10; ++t) contexts.push_back(prepare_trial(cfg, layout, t).ctx);

  auto crlb = [](const FimContext& ctx, const Allocation& x, const std::vector<int>& active) {
    try {
      return crlb_theta(fim(ctx, x, active));
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int violations = 0, bit_cases = 0, set_cases = 0, skipped = 0;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const FimContext& ctx = contexts[i % contexts.size()];
    Allocation x;
    for (const auto& r : ctx.receivers) {
      Eigen::VectorXd b(r.dim());
      for (int j = 0; j < r.dim(); ++j) b(j) = u(rng) < 0.2 ? 0.0 : 10.0 * u(rng);
      x.push_back(b);
    }
    double before = 0.0, after = 0.0;
    if (i % 2 == 0) {
      ++bit_cases;
      const int n = static_cast<int>(u(rng) * ctx.size());
      const int j = static_cast<int>(u(rng) * ctx.receivers[n].dim());
      before = crlb(ctx, x, ctx.all());
      x[n](j) += 4.0 * u(rng) + 1e-3;
      after = crlb(ctx, x, ctx.all());
    } else {
      ++set_cases;
      std::vector<int> ids = ctx.all();
      std::shuffle(ids.begin(), ids.end(), rng);
      const int extra = ids.back();
      const int keep = 2 + static_cast<int>(u(rng) * (ctx.size() - 2));
      std::vector<int> small(ids.begin(), ids.begin() + keep);
      std::sort(small.begin(), small.end());
      std::vector<int> big = small;
      big.push_back(extra);
      std::sort(big.begin(), big.end());
      before = crlb(ctx, x, small);
      after = crlb(ctx, x, big);
    }
    if (std::isinf(before)) {
      ++skipped;
      continue;
    }
    const double excess = (after - before) / before;
    worst = std::max(worst, excess);
    if (!(excess <= kMonotoneRel)) ++violations;
  }
  v.require(violations == 0, std::to_string(violations) + " violations");
  v.note(std::to_string(bit_cases) + " bit and " + std::to_string(set_cases) +
         " set perturbations (" + std::to_string(skipped) +
         " from a singular start), worst relative increase " + fmt(worst));
  return v;
}

struct Paired {
  std::vector<std::vector<double>> mse;  // [algorithm][trial]
  std::vector<std::vector<double>> w;
  int failures = 0;
  int size() const { return mse.empty() ? 0 : static_cast<int>(mse.front().size()); }
};

// Trials where every algorithm of one sweep point succeeded.
Paired pair_trials(const std::vector<TrialOutcome>& outcomes, int algorithms) {
  Paired p;
  p.mse.resize(algorithms);
  p.w.resize(algorithms);
  for (const TrialOutcome& t : outcomes) {
    bool all = true;
    for (const auto& a : t.algorithms) all = all && a.ok;
    if (!all) {
      ++p.failures;
      continue;
    }
    for (int k = 0; k < algorithms; ++k) {
      p.mse[k].push_back(t.algorithms[k].sq_error);
      p.w[k].push_back(t.algorithms[k].w);
    }
  }
  return p;
}

std::vector<double> diff(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

struct Comparison {
  bool ran = false;
  double seconds = 0.0;
  Paired paired;
};

enum Slot { kIdeal, kUniform8, kToa, kFull, kNoselect, kRealloc, kSlots };

const Comparison& comparison(const Options& o) {
  static Comparison c;
  if (c.ran) return c;
  const auto start = std::chrono::steady_clock::now();
  ExperimentConfig cfg = default_config(o);
  cfg.algorithms = {Algorithm::kIdealSdcs,  Algorithm::kUniform8Sdcs,   Algorithm::kToaIdcs,
                    Algorithm::kHisdcsFull, Algorithm::kHisdcsNoselect, Algorithm::kBitRealloc};
  const SweepResult r = run_sweep(cfg);
  c.paired = pair_trials(r.outcomes.front(), kSlots);
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  c.ran = true;
  return c;
}

// 6. MSE ordering at 0 dB, five receivers, epsilon = 1.01 epsilon*.
Verdict mse_ordering(const Options& o) {
  Verdict v;
  v.limit_s = 1800.0;
  const Comparison& c = comparison(o);
  const Paired& p = c.paired;
  const Stats ideal = stats(p.mse[kIdeal]), full = stats(p.mse[kFull]), toa = stats(p.mse[kToa]);
  const Stats gap = stats(diff(p.mse[kToa], p.mse[kFull]));
  v.require(p.size() >= kMinPairedTrials, std::to_string(p.size()) + " paired trials");
  v.require(ideal.mean <= full.mean, "ideal <= HISDCS");
  v.require(full.mean <= toa.mean, "HISDCS <= TOA");
  v.require(full.mean <= kHisdcsIdealRatio * ideal.mean,
            "HISDCS / ideal " + fmt(full.mean / ideal.mean));
  v.require(gap.mean >= kSigmas * gap.se, "TOA - HISDCS " + fmt(gap.mean) + " +- " + fmt(gap.se));
  v.note("MSE ideal " + fmt(ideal.mean) + ", HISDCS " + fmt(full.mean) + ", TOA " +
         fmt(toa.mean) + " m^2 over " + std::to_string(p.size()) + " trials (" +
         std::to_string(p.failures) + " dropped), TOA - HISDCS " + fmt(gap.mean) + " +- " +
         fmt(gap.se));
  return v;
}

// 7. HISDCS channel uses against 8-bit uniform quantization.
Verdict channel_uses_vs_uniform(const Options& o) {
  Verdict v;
  const Paired& p = comparison(o).paired;
  const double full = stats(p.w[kFull]).mean, uniform = stats(p.w[kUniform8]).mean;
  v.require(p.size() > 0, "no paired trials");
  v.require(full <= kUniformWRatio * uniform, "ratio " + fmt(full / uniform));
  v.note("W HISDCS " + fmt(full) + ", uniform 8-bit " + fmt(uniform) + ", ratio " +
         fmt(full / uniform));
  return v;
}

// 8. Node selection and bit reallocation.
Verdict node_selection(const Options& o) {
  Verdict v;
  const Paired& p = comparison(o).paired;
  const double full = stats(p.w[kFull]).mean, none = stats(p.w[kNoselect]).mean;
  const double realloc = stats(p.w[kRealloc]).mean;
  const double reduction = (none - full) / none;
  v.require(p.size() > 0, "no paired trials");
  v.require(reduction >= kGreedyReduction, "greedy reduction " + fmt(100 * reduction) + "%");
  v.require(std::fabs(realloc - full) <= kReallocBand * full,
            "bit_realloc vs greedy " + fmt(realloc / full));
  v.note("W greedy " + fmt(full) + ", no selection " + fmt(none) + ", bit_realloc " +
         fmt(realloc) + ", reduction " + fmt(100 * reduction) + "%");
  return v;
}

// 9. Epsilon sweep.
Verdict epsilon_sweep(const Options& o) {
  Verdict v;
  ExperimentConfig cfg = default_config(o);
  cfg.sweep_name = "epsilon";
  cfg.sweep_values = {1.01, 1.1, 1.5, 2.0};
  cfg.algorithms = {Algorithm::kHisdcsFull};
  const SweepResult r = run_sweep(cfg);

  const int points = static_cast<int>(r.outcomes.size());
  std::vector<std::vector<double>> mse(points), w(points);
  int dropped = 0;
  for (int t = 0; t < cfg.trials; ++t) {
    bool all = true;
    for (int k = 0; k < points; ++k) all = all && r.outcomes[k][t].algorithms.front().ok;
    if (!all) {
      ++dropped;
      continue;
    }
    for (int k = 0; k < points; ++k) {
      mse[k].push_back(r.outcomes[k][t].algorithms.front().sq_error);
      w[k].push_back(r.outcomes[k][t].algorithms.front().w);
    }
  }
  const int n = static_cast<int>(mse.front().size());
  v.require(n >= kMinPairedTrials, std::to_string(n) + " paired trials");
  std::string mse_row, w_row;
  for (int k = 0; k < points; ++k) {
    const double m = stats(mse[k]).mean, c = stats(w[k]).mean;
    mse_row += (k ? " " : "") + fmt(m);
    w_row += (k ? " " : "") + fmt(c);
    if (k > 0) {
      v.require(stats(mse[k - 1]).mean <= m, "MSE drops from " + fmt(cfg.sweep_values[k - 1]) +
                                                  " to " + fmt(cfg.sweep_values[k]));
      v.require(stats(w[k - 1]).mean >= c, "W grows from " + fmt(cfg.sweep_values[k - 1]) +
                                                " to " + fmt(cfg.sweep_values[k]));
    }
  }
  const Stats dm = stats(diff(mse.back(), mse.front()));
  const Stats dw = stats(diff(w.front(), w.back()));
  v.require(dm.mean >= kSigmas * dm.se, "endpoint MSE rise " + fmt(dm.mean) + " +- " + fmt(dm.se));
  v.require(dw.mean >= kSigmas * dw.se, "endpoint W drop " + fmt(dw.mean) + " +- " + fmt(dw.se));
  v.note("MSE [" + mse_row + "], W [" + w_row + "] over " + std::to_string(n) + " trials (" +
         std::to_string(dropped) + " dropped)");
  return v;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// 10. Repeated CLI runs produce identical bytes.
Verdict determinism(const Options& o) {
  Verdict v;
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("coopsense_acceptance_" + std::to_string(o.seed));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path cfg = dir / "config.json";
  std::ofstream(cfg) << R"({
  "scenario": {"topology": "linear", "receivers": 4, "snr_db": 0},
  "sweep": {"name": "snr_db", "values": [0, 6]},
  "trials": 3,
  "epsilon": {"rule": "multiple", "value": 1.1},
  "algorithms": ["baselines", "hisdcs_full", "hisdcs_noselect", "bit_realloc"],
  "seed": )" << o.seed << "\n}\n";

  auto sh = [&](const std::string& args) {
    const std::string cmd = "\"" + o.cli + "\" " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
  };
  const std::string c = " --config \"" + cfg.string() + "\"";
  int bad_exit = 0, run = 0;
  for (const char* threads : {"1", "2", "1"}) {
    const fs::path out = dir / ("run" + std::to_string(run++));
    bad_exit += sh("run" + c + " --out \"" + out.string() + "\" --threads " + threads) != 0;
  }
  for (int i = 0; i < 2; ++i) {
    const std::string s = std::to_string(i);
    bad_exit += sh("epsilon-star" + c + " --out \"" + (dir / ("eps" + s + ".csv")).string() + "\"") != 0;
    bad_exit += sh("trace-mcsca" + c + " --out \"" + (dir / ("trace" + s + ".csv")).string() + "\"") != 0;
  }
  v.require(bad_exit == 0, std::to_string(bad_exit) + " CLI runs exited nonzero");
  int compared = 0, differ = 0;
  auto same = [&](const fs::path& a, const fs::path& b) {
    ++compared;
    const std::string x = slurp(a), y = slurp(b);
    if (x.empty() || x != y) ++differ;
  };
  for (const char* f : {"results.csv", "trials.csv"}) {
    same(dir / "run0" / f, dir / "run1" / f);
    same(dir / "run0" / f, dir / "run2" / f);
  }
  same(dir / "eps0.csv", dir / "eps1.csv");
  same(dir / "trace0.csv", dir / "trace1.csv");
  v.require(differ == 0, std::to_string(differ) + " of " + std::to_string(compared) +
                             " output pairs differ or are empty");
  v.note(std::to_string(compared) + " output pairs compared byte for byte");
  fs::remove_all(dir);
  return v;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Verdict(const Options&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coopsense acceptance checks"};
  Options opts;
  std::vector<int> only;
  app.add_option("--only", only, "criteria to run, default all")->delimiter(',');
  app.add_option("--trials", opts.trials, "Monte Carlo trials for the sweep criteria");
  app.add_option("--threads", opts.threads, "worker threads, 0 for all cores");
  app.add_option("--seed", opts.seed, "experiment seed");
  app.add_option("--cli", opts.cli, "coopsense executable");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {1, "formula fidelity", formula_fidelity},
      {2, "Lloyd-Max one-bit codebook", lloyd},
      {3, "inner solver vs grid oracle", inner_solver},
      {4, "MCSCA convergence", mcsca_convergence},
      {5, "CRLB monotonicity", monotonicity},
      {6, "MSE ordering", mse_ordering},
      {7, "channel uses vs uniform 8-bit", channel_uses_vs_uniform},
      {8, "node selection and bit reallocation", node_selection},
      {9, "epsilon sweep trends", epsilon_sweep},
      {10, "CLI determinism", determinism},
  };

  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run(opts);
    } catch (const std::exception& e) {
      v.require(false, std::string("exception: ") + e.what());
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    // Criteria 7 and 8 reuse the sweep timed under 6.
    if (c.id == 6) secs = std::max(secs, comparison(opts).seconds);
    if (v.limit_s > 0.0) {
      v.require(secs <= v.limit_s, "runtime over " + fmt(v.limit_s) + " s");
    }
    failed += v.pass ? 0 : 1;
    std::printf("criterion %2d %s  %s  (%.1f s)  %s\n", c.id, v.pass ? "PASS" : "FAIL", c.name,
                secs, v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
