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
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "coopsense/backhaul.hpp"
#include "coopsense/errors.hpp"

namespace coopsense {
namespace {

using Eigen::Matrix2d;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Components of the selected receivers stacked into one problem. M is
// measured in units of m_scale and the FIM in units of 1 / j_scale.
struct Stack {
  std::vector<int> active;   // ctx indices
  std::vector<int> offset;   // first component of each member
  std::vector<int> owner;
  MatrixXd dirs;             // scaled by sqrt(j_scale)
  VectorXd gamma;
  VectorXd noise;
  double m_scale = 1.0;
  double j_scale = 1.0;
  NoiseModel model = NoiseModel::kNominal;

  int dim() const { return static_cast<int>(owner.size()); }
  double coupling() const { return std::sqrt(j_scale / m_scale); }

  VectorXd weights(const VectorXd& x) const {
    VectorXd y(dim());
    for (int j = 0; j < dim(); ++j) y[j] = info_weight(gamma[j], noise[j], x[j], model);
    return y;
  }
  VectorXd slopes(const VectorXd& x) const {
    VectorXd g(dim());
    for (int j = 0; j < dim(); ++j) g[j] = info_weight_slope(gamma[j], noise[j], x[j], model);
    return g;
  }
  Matrix2d fim(const VectorXd& x) const { return dirs * weights(x).asDiagonal() * dirs.transpose(); }

  // Position CRLB in physical units.
  double crlb(const VectorXd& x) const;
  // Smallest admissible M in scaled units, J^-1 / m_scale.
  Matrix2d m_floor(const VectorXd& x) const { return fim(x).inverse() * (j_scale / m_scale); }

  std::vector<double> totals(const VectorXd& x) const {
    std::vector<double> t(active.size(), 0.0);
    for (int j = 0; j < dim(); ++j) t[owner[j]] += x[j];
    return t;
  }
};

double trace_inverse(const Matrix2d& j) {
  const double det = j.determinant();
  if (!(det > 0.0)) return std::numeric_limits<double>::infinity();
  return j.trace() / det;
}

double Stack::crlb(const VectorXd& x) const { return trace_inverse(fim(x)) * j_scale; }

Stack make_stack(const FimContext& ctx, const std::vector<int>& active, double m_scale,
                 double j_scale) {
  Stack st;
  st.active = active;
  st.m_scale = m_scale;
  st.j_scale = j_scale;
  st.model = ctx.model;
  int total = 0;
  for (int n : active) {
    require(n >= 0 && n < ctx.size(), "active index out of range");
    st.offset.push_back(total);
    total += ctx.receivers[n].dim();
  }
  st.dirs.resize(2, total);
  st.gamma.resize(total);
  st.noise.resize(total);
  st.owner.resize(total);
  const double scale = std::sqrt(j_scale);
  for (std::size_t p = 0; p < active.size(); ++p) {
    const ReceiverFim& r = ctx.receivers[active[p]];
    for (int j = 0; j < r.dim(); ++j) {
      const int k = st.offset[p] + j;
      st.dirs.col(k) = scale * r.projected.col(j);
      st.gamma[k] = r.eigvals[j];
      st.noise[k] = r.noise_var;
      st.owner[k] = static_cast<int>(p);
    }
  }
  return st;
}

// d CRLB / dX_j = -y'_j a_j^T J^-2 a_j, up to the positive unit factor.
VectorXd crlb_descent(const Stack& st, const VectorXd& x) {
  const Matrix2d inv = st.fim(x).inverse();
  const Matrix2d inv2 = inv * inv;
  const VectorXd g = st.slopes(x);
  VectorXd out(st.dim());
  for (int j = 0; j < st.dim(); ++j) out[j] = g[j] * st.dirs.col(j).dot(inv2 * st.dirs.col(j));
  return out;
}

// x + lambda d for the smallest lambda (bisection) with crlb <= target.
VectorXd raise_until(const Stack& st, const VectorXd& x, const VectorXd& d, double target) {
  double hi = 1.0;
  while (!(st.crlb(x + hi * d) <= target)) {
    hi *= 2.0;
    if (hi > 1e6) fail(ErrorCode::kNumericalFailure, "cannot restore the CRLB constraint");
  }
  double lo = 0.0;
  for (int i = 0; i < 60 && hi - lo > 1e-12 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (st.crlb(x + mid * d) <= target ? hi : lo) = mid;
  }
  return x + hi * d;
}

double point_norm(const VectorXd& x, double w, const Matrix2d& m) {
  return std::sqrt(x.squaredNorm() + w * w + m.squaredNorm());
}

constexpr double kRestoreShare = 0.25;
constexpr double kStartMargin = 0.05;
constexpr double kRoundSlack = 1e-9;

// J unit chosen so the J block of the scaled matrix inequality dominates the M
// block; the shift s then measures the margin of M over J^-1.
double j_unit(const FimContext& ctx, const std::vector<int>& active, double eps, double eps_star) {
  Eigen::SelfAdjointEigenSolver<Matrix2d> eig(fim_unquantized(ctx, active), Eigen::EigenvaluesOnly);
  return 10.0 * eps / ((eps - eps_star) * eig.eigenvalues()[0]);
}

struct Iterate {
  VectorXd x;
  double w = 1.0;
  Matrix2d m = Matrix2d::Zero();
};

// Makes the iterate strictly feasible for the true constraints: CRLB below
// epsilon, M above J^-1, W above every MAC ratio. eps is in physical units.
// With a previous iterate the bits are pulled back along the segment towards
// it; without one they are raised along the CRLB descent direction.
bool restore(const Stack& st, const MacRegion& region, double eps, double eps_star, Iterate& it,
             const Iterate* prev = nullptr) {
  bool changed = false;
  constexpr double kFloorBits = 1e-9;
  for (int j = 0; j < st.dim(); ++j) {
    if (!(it.x[j] > kFloorBits)) {
      it.x[j] = kFloorBits;
      changed = true;
    }
  }
  const double margin = 1e-6 * (eps - eps_star);
  double c = st.crlb(it.x);
  if (!(c < eps - margin)) {
    if (prev != nullptr) {
      const double target = std::max(eps - 2.0 * margin, st.crlb(prev->x));
      double lo = 0.0, hi = 1.0;
      for (int i = 0; i < 60 && hi - lo > 1e-12; ++i) {
        const double mid = 0.5 * (lo + hi);
        (st.crlb(prev->x + mid * (it.x - prev->x)) <= target ? lo : hi) = mid;
      }
      it.x = prev->x + lo * (it.x - prev->x);
      it.w = prev->w + lo * (it.w - prev->w);
      it.m = prev->m + lo * (it.m - prev->m);
    } else {
      VectorXd d = crlb_descent(st, it.x).cwiseMax(0.0);
      const double dn = d.lpNorm<Eigen::Infinity>();
      require(dn > 0.0, "CRLB gradient vanished during restoration");
      it.x = raise_until(st, it.x, d / dn, eps - 2.0 * margin);
    }
    c = st.crlb(it.x);
    changed = true;
  }
  const Matrix2d floor_m = st.m_floor(it.x);
  const double eps_s = eps / st.m_scale;
  Eigen::SelfAdjointEigenSolver<Matrix2d> eig(it.m - floor_m, Eigen::EigenvaluesOnly);
  if (!(eig.eigenvalues()[0] > 1e-12 * eps_s) || !(it.m.trace() < eps_s)) {
    const double delta = kRestoreShare * (eps - c) / st.m_scale;
    it.m = floor_m + delta * Matrix2d::Identity();
    changed = true;
  }
  const double w_min = std::max(1.0, relaxed_channel_uses(st.totals(it.x), region));
  if (!(it.w > w_min * (1.0 + 1e-12))) {
    it.w = w_min * (1.0 + 1e-9) + 1e-9;
    changed = true;
  }
  return changed;
}

// Relative stationarity and complementarity residual of the relaxed problem
// at the last subproblem solution. Multipliers are refit by least squares on
// the active set identified by the barrier duals, with the matrix multiplier
// restricted to the range of the barrier estimate.
double kkt_residual(const Stack& st, const MacRegion& region, double eps_s,
                    const InnerSolution& sol) {
  const int d = st.dim();
  const int members = region.size();
  const unsigned masks = 1u << members;
  const VectorXd g = st.slopes(sol.x);
  const Matrix2d jfim = st.fim(sol.x);
  const double c = st.coupling();

  double biggest = std::max({1.0, sol.w_dual, sol.trace_dual, sol.x_dual.maxCoeff()});
  for (unsigned mask = 1; mask < masks; ++mask) biggest = std::max(biggest, sol.mac_dual[mask]);
  const double thr = 1e-6 * biggest;

  std::vector<unsigned> mac_active;
  for (unsigned mask = 1; mask < masks; ++mask) {
    if (sol.mac_dual[mask] > thr) mac_active.push_back(mask);
  }
  const bool w_active = sol.w_dual > thr;
  const bool trace_active = sol.trace_dual > thr;
  std::vector<bool> x_active(d);
  for (int j = 0; j < d; ++j) x_active[j] = sol.x_dual[j] > thr;

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> zeig(sol.lmi_dual);
  std::vector<Eigen::Vector4d> range;
  const double zmax = zeig.eigenvalues()[3];
  for (int k = 3; k >= 0; --k) {
    if (zeig.eigenvalues()[k] > 1e-6 * zmax) range.push_back(zeig.eigenvectors().col(k));
  }
  std::vector<Eigen::Matrix4d> zbasis;
  for (std::size_t a = 0; a < range.size(); ++a) {
    for (std::size_t b = a; b < range.size(); ++b) {
      zbasis.push_back(a == b ? Eigen::Matrix4d(range[a] * range[a].transpose())
                              : Eigen::Matrix4d(range[a] * range[b].transpose() +
                                                range[b] * range[a].transpose()));
    }
  }

  // Unknowns: [lambda_tr, phi..., lambda_S..., nu_W].
  const int n_phi = static_cast<int>(zbasis.size());
  const int col_tr = 0, col_phi = 1, col_mac = 1 + n_phi;
  const int col_w = col_mac + static_cast<int>(mac_active.size());
  const int unknowns = col_w + 1;
  std::vector<int> free_x;
  for (int j = 0; j < d; ++j) {
    if (!x_active[j]) free_x.push_back(j);
  }
  const int rows = 1 + static_cast<int>(free_x.size()) + 3;
  MatrixXd a = MatrixXd::Zero(rows, unknowns);
  VectorXd b0 = VectorXd::Zero(rows);

  // d/dW: 1 - sum lambda_S C_S - nu_W.
  b0[0] = 1.0;
  for (std::size_t k = 0; k < mac_active.size(); ++k) a(0, col_mac + k) = -region[mac_active[k]];
  if (w_active) a(0, col_w) = -1.0;
  // d/dX_j: sum_{S owns j} lambda_S - y'_j a_j^T Z22 a_j.
  auto lmi_x = [&](const Eigen::Matrix4d& z, int j) {
    const Matrix2d z22 = z.bottomRightCorner<2, 2>();
    return g[j] * st.dirs.col(j).dot(z22 * st.dirs.col(j));
  };
  for (std::size_t r = 0; r < free_x.size(); ++r) {
    const int j = free_x[r];
    for (std::size_t k = 0; k < mac_active.size(); ++k) {
      if (mac_active[k] & (1u << st.owner[j])) a(1 + r, col_mac + k) = 1.0;
    }
    for (int q = 0; q < n_phi; ++q) a(1 + r, col_phi + q) = -lmi_x(zbasis[q], j);
  }
  // d/dM: lambda_tr I - Z11 on (11), (22); -2 Z12 on (12).
  const int rm = 1 + static_cast<int>(free_x.size());
  if (trace_active) {
    a(rm, col_tr) = 1.0;
    a(rm + 2, col_tr) = 1.0;
  }
  for (int q = 0; q < n_phi; ++q) {
    a(rm, col_phi + q) = -zbasis[q](0, 0);
    a(rm + 1, col_phi + q) = -2.0 * zbasis[q](0, 1);
    a(rm + 2, col_phi + q) = -zbasis[q](1, 1);
  }

  VectorXd theta = a.completeOrthogonalDecomposition().solve(-b0);
  // Sign constraints.
  theta[col_tr] = std::max(0.0, theta[col_tr]);
  for (int k = col_mac; k < unknowns; ++k) theta[k] = std::max(0.0, theta[k]);
  Eigen::Matrix4d z = Eigen::Matrix4d::Zero();
  for (int q = 0; q < n_phi; ++q) z += theta[col_phi + q] * zbasis[q];
  {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> e(z);
    z = e.eigenvectors() * e.eigenvalues().cwiseMax(0.0).asDiagonal() * e.eigenvectors().transpose();
  }
  VectorXd lam_member = VectorXd::Zero(members);
  double lam_cap = 0.0;
  for (std::size_t k = 0; k < mac_active.size(); ++k) {
    const double lam = theta[col_mac + k];
    lam_cap += lam * region[mac_active[k]];
    for (int i = 0; i < members; ++i) {
      if (mac_active[k] & (1u << i)) lam_member[i] += lam;
    }
  }
  const double nu_w = w_active ? theta[col_w] : 0.0;
  const double lam_tr = trace_active ? theta[col_tr] : 0.0;

  double r2 = 0.0, s2 = 0.0;
  auto add = [&](double r, double s) {
    r2 += r * r;
    s2 += s * s;
  };
  add(1.0 - lam_cap - nu_w, 1.0 + lam_cap + nu_w);
  for (int j = 0; j < d; ++j) {
    const double lmi = lmi_x(z, j);
    const double lam = lam_member[st.owner[j]];
    // Active bounds absorb their row with a nonnegative multiplier.
    const double r = x_active[j] ? std::min(0.0, lam - lmi) : lam - lmi;
    add(r, lam + std::abs(lmi));
  }
  add(lam_tr - z(0, 0), lam_tr + std::abs(z(0, 0)));
  add(2.0 * z(0, 1), 2.0 * std::abs(z(0, 1)));
  add(lam_tr - z(1, 1), lam_tr + std::abs(z(1, 1)));

  // Complementarity against the true constraint functions.
  const auto totals = st.totals(sol.x);
  for (std::size_t k = 0; k < mac_active.size(); ++k) {
    double sum = 0.0;
    for (int i = 0; i < members; ++i) {
      if (mac_active[k] & (1u << i)) sum += totals[i];
    }
    const double cap = region[mac_active[k]];
    const double lam = theta[col_mac + k];
    add(lam * (cap * sol.w - sum), lam * (cap * sol.w + sum));
  }
  add(lam_tr * (eps_s - sol.m.trace()), lam_tr * eps_s);
  Eigen::Matrix4d gmat;
  gmat << sol.m, c * Matrix2d::Identity(), c * Matrix2d::Identity(), jfim;
  add((z * gmat).trace(), (z.cwiseAbs() * gmat.cwiseAbs()).trace());
  return std::sqrt(r2) / std::max(std::sqrt(s2), std::numeric_limits<double>::min());
}

std::vector<int> receiver_ids(const FimContext& ctx, const std::vector<int>& active) {
  std::vector<int> ids;
  for (int n : active) ids.push_back(ctx.receivers[n].receiver_id);
  return ids;
}

void finalize_bits(const Stack& st, const MacRegion& region, const VectorXd& x_int,
                   AllocationResult& res) {
  res.bits.assign(st.active.size(), {});
  for (std::size_t p = 0; p < st.active.size(); ++p) {
    const int begin = st.offset[p];
    const int end = p + 1 < st.active.size() ? st.offset[p + 1] : st.dim();
    for (int j = begin; j < end; ++j) res.bits[p].push_back(static_cast<int>(x_int[j]));
  }
  res.crlb = st.crlb(x_int);
  res.channel_uses = min_channel_uses(st.totals(x_int), region);
}

}  // namespace

Allocation AllocationResult::allocation(const FimContext& ctx) const {
  Allocation out;
  for (const auto& r : ctx.receivers) out.push_back(VectorXd::Zero(r.dim()));
  for (std::size_t p = 0; p < selected.size(); ++p) {
    for (std::size_t j = 0; j < bits[p].size(); ++j) out[selected[p]][j] = bits[p][j];
  }
  return out;
}

double epsilon_star(const FimContext& ctx, const std::vector<int>& active) {
  return crlb_theta(fim_unquantized(ctx, active));
}

AllocationResult mcsca_run(const FimContext& ctx, const Scene& scene,
                           const std::vector<int>& active, double epsilon,
                           const SolverConfig& cfg) {
  require(!active.empty(), "MCSCA needs at least one receiver");
  require(cfg.max_iter >= 1 && cfg.beta0 > 0.0 && cfg.mu >= 0.0, "invalid solver configuration");
  const double eps_star = epsilon_star(ctx, active);
  if (!(epsilon > eps_star)) {
    fail(ErrorCode::kInfeasibleEpsilon, "epsilon " + std::to_string(epsilon) +
                                            " is not above the minimum achievable CRLB " +
                                            std::to_string(eps_star));
  }
  const MacRegion region = build_mac_region(scene, receiver_ids(ctx, active));
  const Stack st = make_stack(ctx, active, epsilon - eps_star, j_unit(ctx, active, epsilon, eps_star));
  const int d = st.dim();

  // Uniform start at 80% of each node's own capacity, scaled up to feasibility.
  Iterate cur;
  cur.x.resize(d);
  for (int j = 0; j < d; ++j) {
    const int p = st.owner[j];
    const int begin = st.offset[p];
    const int end = p + 1 < static_cast<int>(st.active.size()) ? st.offset[p + 1] : d;
    cur.x[j] = 0.8 * region[1u << p] / (end - begin);
  }
  const double target = epsilon - kStartMargin * (epsilon - eps_star);
  if (!(st.crlb(cur.x) <= target)) {
    double hi = 2.0;
    while (!(st.crlb(hi * cur.x) <= target)) {
      hi *= 2.0;
      if (hi > 1e6) fail(ErrorCode::kNumericalFailure, "cannot reach a feasible start");
    }
    double lo = hi / 2.0;
    for (int i = 0; i < 60; ++i) {
      const double mid = 0.5 * (lo + hi);
      (st.crlb(mid * cur.x) <= target ? hi : lo) = mid;
    }
    cur.x *= hi;
  }
  cur.w = 0.0;
  cur.m = Matrix2d::Zero();
  restore(st, region, epsilon, eps_star, cur);

  AllocationResult res;
  res.selected = active;
  res.epsilon = epsilon;
  InnerSolution last;
  bool have_solution = false;
  for (int t = 0; t < cfg.max_iter; ++t) {
    InnerProblem p;
    p.dirs = st.dirs;
    p.y0 = st.weights(cur.x);
    p.slope = st.slopes(cur.x);
    p.x_t = cur.x;
    p.owner = st.owner;
    p.capacity = region.capacity;
    p.w_t = cur.w;
    p.m_t = cur.m;
    p.epsilon = epsilon / st.m_scale;
    p.coupling = st.coupling();
    p.mu = cfg.mu;
    p.beta = cfg.beta0 / std::pow(1.0 + t, cfg.beta_decay);
    p.gap_tol = cfg.gap_tol;
    InnerSolution sol = inner_solve(p);

    Iterate next{sol.x, sol.w, sol.m};
    const bool restored = restore(st, region, epsilon, eps_star, next, &cur);
    res.restorations += restored ? 1 : 0;
    const double step = point_norm(next.x - cur.x, next.w - cur.w, next.m - cur.m);
    const double tol = cfg.step_tol * (1.0 + point_norm(cur.x, cur.w, cur.m));
    if (cfg.record_trace) {
      TraceRow row;
      row.iteration = t + 1;
      row.beta = p.beta;
      row.w = next.w;
      row.trace_m = next.m.trace() * st.m_scale;
      row.crlb = st.crlb(next.x);
      row.step = step;
      row.step_tol = tol;
      row.restored = restored;
      row.newton_steps = sol.newton_steps;
      res.trace.push_back(row);
    }
    cur = next;
    last = std::move(sol);
    have_solution = true;
    res.iterations = t + 1;
    if (step <= tol) {
      res.converged = true;
      break;
    }
  }
  if (have_solution) res.kkt_residual = kkt_residual(st, region, epsilon / st.m_scale, last);

  res.relaxed_bits = cur.x;
  res.relaxed_channel_uses = relaxed_channel_uses(st.totals(cur.x), region);
  res.relaxed_crlb = cur.m.trace() * st.m_scale;

  // Start from the floor and lift components to their ceiling, best CRLB first,
  // until the rounded point is no worse than the relaxed one.
  const VectorXd x_ceil = cur.x.array().ceil().max(0.0).matrix();
  VectorXd x_int = (cur.x.array() + kRoundSlack).floor().max(0.0).matrix();
  const double bound = std::min(epsilon, st.crlb(cur.x));
  while (!(st.crlb(x_int) <= bound)) {
    int best = -1;
    double best_crlb = std::numeric_limits<double>::infinity();
    for (int k = 0; k < d; ++k) {
      if (x_int[k] >= x_ceil[k]) continue;
      x_int[k] += 1.0;
      const double c = st.crlb(x_int);
      x_int[k] -= 1.0;
      if (c < best_crlb) {
        best_crlb = c;
        best = k;
      }
    }
    if (best < 0) {
      x_int = x_ceil;
      break;
    }
    x_int[best] += 1.0;
  }
  finalize_bits(st, region, x_int, res);
  return res;
}

namespace {

bool feasible_subset(const FimContext& ctx, const std::vector<int>& active, double epsilon) {
  if (active.empty()) return false;
  try {
    return epsilon > epsilon_star(ctx, active);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kUnlocalizable) return false;
    throw;
  }
}

}  // namespace

SelectionResult greedy_select(const FimContext& ctx, const Scene& scene, double epsilon,
                              const SolverConfig& cfg) {
  return greedy_select(ctx, scene, epsilon, cfg, mcsca_run(ctx, scene, ctx.all(), epsilon, cfg));
}

SelectionResult greedy_select(const FimContext& ctx, const Scene& scene, double epsilon,
                              const SolverConfig& cfg, const AllocationResult& full) {
  SelectionResult out;
  out.full = full;
  out.best = full;
  out.mcsca_runs = 1;
  AllocationResult prev = full;
  while (prev.selected.size() > 1) {
    // Drop the member with the fewest relaxed bits; the later one on ties.
    int drop = -1;
    double fewest = std::numeric_limits<double>::infinity();
    int begin = 0;
    for (std::size_t p = 0; p < prev.selected.size(); ++p) {
      const int len = ctx.receivers[prev.selected[p]].dim();
      const double total = prev.relaxed_bits.segment(begin, len).sum();
      begin += len;
      if (total <= fewest) {
        fewest = total;
        drop = static_cast<int>(p);
      }
    }
    std::vector<int> next = prev.selected;
    next.erase(next.begin() + drop);
    if (!feasible_subset(ctx, next, epsilon)) break;
    AllocationResult cand;
    try {
      cand = mcsca_run(ctx, scene, next, epsilon, cfg);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kInfeasibleEpsilon) break;
      throw;
    }
    ++out.mcsca_runs;
    if (cand.relaxed_channel_uses > prev.relaxed_channel_uses) break;
    // Integer ties keep the larger set.
    if (cand.channel_uses < out.best.channel_uses) out.best = cand;
    prev = std::move(cand);
  }
  return out;
}

AllocationResult bit_realloc(const FimContext& ctx, const Scene& scene, double epsilon,
                             const SolverConfig& cfg) {
  return bit_realloc(ctx, scene, epsilon, mcsca_run(ctx, scene, ctx.all(), epsilon, cfg));
}

AllocationResult bit_realloc(const FimContext& ctx, const Scene& scene, double epsilon,
                             const AllocationResult& full) {
  const std::vector<int>& active = full.selected;
  const Stack st = make_stack(ctx, active, 1.0, 1.0);
  const int d = st.dim();
  require(full.relaxed_bits.size() == d, "relaxed bits do not match the selected receivers");

  VectorXd x = (full.relaxed_bits.array() + 1e-6).floor().max(0.0).matrix();
  Matrix2d j = st.fim(x);
  VectorXd y = st.weights(x);
  int increments = 0;
  std::vector<TraceRow> trace;
  while (!(trace_inverse(j) <= epsilon)) {
    int best = -1;
    double best_crlb = std::numeric_limits<double>::infinity();
    for (int k = 0; k < d; ++k) {
      const double y_up = info_weight(st.gamma[k], st.noise[k], x[k] + 1.0, st.model);
      const Matrix2d cand = j + (y_up - y[k]) * st.dirs.col(k) * st.dirs.col(k).transpose();
      const double c = trace_inverse(cand);
      if (c < best_crlb) {
        best_crlb = c;
        best = k;
      }
    }
    require(best >= 0, "bit reallocation found no admissible increment");
    x[best] += 1.0;
    y[best] = info_weight(st.gamma[best], st.noise[best], x[best], st.model);
    j = st.fim(x);
    TraceRow row;
    row.iteration = ++increments;
    row.crlb = trace_inverse(j);
    trace.push_back(row);
    if (increments > 64 * d) {
      fail(ErrorCode::kNonConvergence, "bit reallocation did not reach the CRLB target");
    }
  }

  AllocationResult res;
  res.epsilon = epsilon;
  res.relaxed_bits = full.relaxed_bits;
  res.relaxed_channel_uses = full.relaxed_channel_uses;
  res.relaxed_crlb = full.relaxed_crlb;
  res.kkt_residual = full.kkt_residual;
  res.iterations = increments;
  res.converged = true;
  res.trace = std::move(trace);
  res.crlb = trace_inverse(j);

  // Members with no bits leave the selected set.
  std::vector<int> kept;
  std::vector<double> totals;
  const auto all_totals = st.totals(x);
  for (std::size_t p = 0; p < active.size(); ++p) {
    const int begin = st.offset[p];
    const int len = ctx.receivers[active[p]].dim();
    if (all_totals[p] > 0.0) {
      kept.push_back(active[p]);
      totals.push_back(all_totals[p]);
      std::vector<int> bits;
      for (int k = begin; k < begin + len; ++k) bits.push_back(static_cast<int>(x[k]));
      res.bits.push_back(std::move(bits));
    }
  }
  res.selected = kept;
  if (kept.empty()) {
    res.channel_uses = 1;
  } else {
    res.channel_uses = min_channel_uses(totals, build_mac_region(scene, receiver_ids(ctx, kept)));
  }
  return res;
}

}  // namespace coopsense
