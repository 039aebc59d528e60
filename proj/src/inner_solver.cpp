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

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "coopsense/backhaul.hpp"
#include "coopsense/errors.hpp"

namespace coopsense {

int InnerProblem::members() const {
  int m = 0;
  for (int o : owner) m = std::max(m, o + 1);
  return m;
}

Eigen::Matrix2d InnerProblem::surrogate_fim(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd u = y0 + slope.cwiseProduct(x - x_t);
  return dirs * u.asDiagonal() * dirs.transpose();
}

namespace {

using Eigen::Matrix2d;
using Eigen::Matrix4d;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Layout of the stacked variable z = [X, W, m11, m12, m22, s].
struct Layout {
  int d;
  int w() const { return d; }
  int m11() const { return d + 1; }
  int m12() const { return d + 2; }
  int m22() const { return d + 3; }
  int s() const { return d + 4; }
  int size() const { return d + 5; }
};

Matrix2d block_m(const VectorXd& z, const Layout& L) {
  Matrix2d m;
  m << z[L.m11()], z[L.m12()], z[L.m12()], z[L.m22()];
  return m;
}

class Barrier {
 public:
  explicit Barrier(const InnerProblem& p)
      : p_(p), L_{p.dim()}, members_(p.members()), masks_(1u << members_) {
    weight_ = VectorXd::Ones(L_.size());
    weight_[L_.m12()] = 2.0;
    weight_[L_.s()] = 0.0;
    center_ = VectorXd::Zero(L_.size());
    center_.head(L_.d) = p.x_t;
    center_[L_.w()] = p.w_t;
    center_[L_.m11()] = p.m_t(0, 0);
    center_[L_.m12()] = p.m_t(0, 1);
    center_[L_.m22()] = p.m_t(1, 1);
    trust2_ = std::pow(1.001 * p.beta, 2);
    member_of_.assign(L_.d, 0);
    for (int j = 0; j < L_.d; ++j) member_of_[j] = p.owner[j];
  }

  const Layout& layout() const { return L_; }
  int constraint_count() const { return L_.d + 1 + 1 + 1 + 1 + static_cast<int>(masks_ - 1) + 4; }

  double prox(const VectorXd& z) const {
    const VectorXd dz = z - center_;
    return dz.cwiseProduct(dz).dot(weight_);
  }

  Matrix4d lmi(const VectorXd& z) const {
    Matrix4d f = Matrix4d::Zero();
    const double s = z[L_.s()];
    f.topLeftCorner<2, 2>() = block_m(z, L_) - s * Matrix2d::Identity();
    f.topRightCorner<2, 2>() = p_.coupling * Matrix2d::Identity();
    f.bottomLeftCorner<2, 2>() = p_.coupling * Matrix2d::Identity();
    f.bottomRightCorner<2, 2>() = p_.surrogate_fim(z.head(L_.d)) - s * Matrix2d::Identity();
    return f;
  }

  std::vector<double> member_totals(const VectorXd& z) const {
    std::vector<double> t(members_, 0.0);
    for (int j = 0; j < L_.d; ++j) t[member_of_[j]] += z[j];
    return t;
  }

  // Scalar constraint values; all must be positive. Order: X, W-1, trace, s,
  // trust, MAC masks.
  std::vector<double> scalars(const VectorXd& z) const {
    std::vector<double> h;
    h.reserve(constraint_count());
    for (int j = 0; j < L_.d; ++j) h.push_back(z[j]);
    const double pr = prox(z);
    h.push_back(z[L_.w()] - 1.0);
    h.push_back(p_.epsilon - z[L_.m11()] - z[L_.m22()] - p_.mu * pr);
    h.push_back(z[L_.s()] - p_.mu * pr);
    h.push_back(trust2_ - (z.head(L_.d) - p_.x_t).squaredNorm());
    const auto totals = member_totals(z);
    for (unsigned mask = 1; mask < masks_; ++mask) {
      double sum = 0.0;
      for (int i = 0; i < members_; ++i) {
        if (mask & (1u << i)) sum += totals[i];
      }
      h.push_back(p_.capacity[mask] * z[L_.w()] - sum - p_.mu * p_.w_t * pr);
    }
    return h;
  }

  // Barrier value, +inf outside the domain.
  double value(const VectorXd& z, double t) const {
    const auto h = scalars(z);
    // Offset by W_t so phi stays small near the tangent point.
    double phi = t * (z[L_.w()] - p_.w_t + p_.mu * prox(z));
    for (double v : h) {
      if (!(v > 0.0)) return std::numeric_limits<double>::infinity();
      phi -= std::log(v);
    }
    Eigen::LLT<Matrix4d> llt(lmi(z));
    if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    const Matrix4d lower = llt.matrixL();
    double logdet = 0.0;
    for (int i = 0; i < 4; ++i) {
      if (!(lower(i, i) > 0.0)) return std::numeric_limits<double>::infinity();
      logdet += 2.0 * std::log(lower(i, i));
    }
    return phi - logdet;
  }

  void derivatives(const VectorXd& z, double t, VectorXd& grad, MatrixXd& hess) const {
    const int n = L_.size();
    const int d = L_.d;
    grad = VectorXd::Zero(n);
    hess = MatrixXd::Zero(n, n);
    const VectorXd dz = z - center_;
    const VectorXd dprox = 2.0 * weight_.cwiseProduct(dz);
    const double pr = prox(z);

    grad[L_.w()] += t;
    grad += t * p_.mu * dprox;
    double diag_scale = t * p_.mu;  // coefficient of 2 diag(weight)

    for (int j = 0; j < d; ++j) {
      grad[j] -= 1.0 / z[j];
      hess(j, j) += 1.0 / (z[j] * z[j]);
    }
    {
      const double h = z[L_.w()] - 1.0;
      grad[L_.w()] -= 1.0 / h;
      hess(L_.w(), L_.w()) += 1.0 / (h * h);
    }
    {
      const double h = p_.epsilon - z[L_.m11()] - z[L_.m22()] - p_.mu * pr;
      VectorXd g = -p_.mu * dprox;
      g[L_.m11()] -= 1.0;
      g[L_.m22()] -= 1.0;
      grad -= g / h;
      hess.selfadjointView<Eigen::Lower>().rankUpdate(g, 1.0 / (h * h));
      diag_scale += p_.mu / h;
    }
    {
      const double h = z[L_.s()] - p_.mu * pr;
      VectorXd g = -p_.mu * dprox;
      g[L_.s()] += 1.0;
      grad -= g / h;
      hess.selfadjointView<Eigen::Lower>().rankUpdate(g, 1.0 / (h * h));
      diag_scale += p_.mu / h;
    }
    {
      const VectorXd dx = z.head(d) - p_.x_t;
      const double h = trust2_ - dx.squaredNorm();
      VectorXd g = VectorXd::Zero(n);
      g.head(d) = -2.0 * dx;
      grad -= g / h;
      hess.selfadjointView<Eigen::Lower>().rankUpdate(g, 1.0 / (h * h));
      for (int j = 0; j < d; ++j) hess(j, j) += 2.0 / h;
    }

    // MAC constraints: grad h_S = a_S + b with a_S = C_S e_W - 1_S and a shared
    // proximal part b, so the sum of outer products collapses to member blocks.
    {
      const auto totals = member_totals(z);
      const VectorXd b = -p_.mu * p_.w_t * dprox;
      Eigen::MatrixXd rr = Eigen::MatrixXd::Zero(members_, members_);
      Eigen::VectorXd rw = Eigen::VectorXd::Zero(members_);  // sum w_S C_S over S containing i
      Eigen::VectorXd ca = Eigen::VectorXd::Zero(members_);  // sum w_S h_S over S containing i
      double aww = 0.0, c_w = 0.0, omega = 0.0, inv_sum = 0.0;
      double gw = 0.0;
      Eigen::VectorXd g_member = Eigen::VectorXd::Zero(members_);
      double g_b = 0.0;
      for (unsigned mask = 1; mask < masks_; ++mask) {
        double sum = 0.0;
        for (int i = 0; i < members_; ++i) {
          if (mask & (1u << i)) sum += totals[i];
        }
        const double cap = p_.capacity[mask];
        const double h = cap * z[L_.w()] - sum - p_.mu * p_.w_t * pr;
        const double w2 = 1.0 / (h * h);
        inv_sum += 1.0 / h;
        omega += w2;
        aww += w2 * cap * cap;
        c_w += w2 * cap;
        gw += cap / h;
        g_b += 1.0 / h;
        for (int i = 0; i < members_; ++i) {
          if (!(mask & (1u << i))) continue;
          rw[i] += w2 * cap;
          ca[i] += w2;
          g_member[i] += 1.0 / h;
          for (int k = 0; k <= i; ++k) {
            if (mask & (1u << k)) rr(i, k) += w2;
          }
        }
      }
      // Gradient: -sum (a_S + b) / h_S.
      grad[L_.w()] -= gw;
      for (int j = 0; j < d; ++j) grad[j] += g_member[member_of_[j]];
      grad -= g_b * b;

      // sum w_S a_S a_S^T.
      hess(L_.w(), L_.w()) += aww;
      for (int j = 0; j < d; ++j) {
        hess(L_.w(), j) += -rw[member_of_[j]];
        for (int k = 0; k <= j; ++k) {
          const int a = member_of_[j], c = member_of_[k];
          hess(j, k) += a >= c ? rr(a, c) : rr(c, a);
        }
      }
      // Cross terms c b^T + b c^T with c = sum w_S a_S, plus omega b b^T.
      VectorXd cvec = VectorXd::Zero(n);
      cvec[L_.w()] = c_w;
      for (int j = 0; j < d; ++j) cvec[j] = -ca[member_of_[j]];
      hess.selfadjointView<Eigen::Lower>().rankUpdate(cvec, b, 1.0);
      hess.selfadjointView<Eigen::Lower>().rankUpdate(b, omega);
      diag_scale += p_.mu * p_.w_t * inv_sum;
    }

    for (int k = 0; k < n; ++k) hess(k, k) += 2.0 * diag_scale * weight_[k];

    // Log-det barrier of F(z) = F0 + sum z_k F_k.
    const Matrix4d f = lmi(z);
    Eigen::LLT<Matrix4d> llt(f);
    if (llt.info() != Eigen::Success) fail(ErrorCode::kNumericalFailure, "LMI left its domain");
    const Matrix4d sinv = llt.solve(Matrix4d::Identity());
    const Matrix2d s22 = sinv.bottomRightCorner<2, 2>();

    // Small directions: m11, m12, m22, s.
    std::array<Matrix4d, 4> basis;
    for (auto& b : basis) b.setZero();
    basis[0](0, 0) = 1.0;
    basis[1](0, 1) = basis[1](1, 0) = 1.0;
    basis[2](1, 1) = 1.0;
    basis[3] = -Matrix4d::Identity();
    const int small[4] = {L_.m11(), L_.m12(), L_.m22(), L_.s()};
    std::array<Matrix4d, 4> sbs;
    for (int a = 0; a < 4; ++a) {
      sbs[a] = sinv * basis[a] * sinv;
      grad[small[a]] -= (sinv * basis[a]).trace();
      for (int c = 0; c <= a; ++c) {
        const double v = (sbs[a] * basis[c]).trace();
        hess(std::max(small[a], small[c]), std::min(small[a], small[c])) += v;
      }
    }
    const MatrixXd& a = p_.dirs;
    const MatrixXd sa = s22 * a;  // 2 x d
    for (int j = 0; j < d; ++j) {
      grad[j] -= p_.slope[j] * a.col(j).dot(sa.col(j));
    }
    for (int c = 0; c < 4; ++c) {
      const Matrix2d r = sbs[c].bottomRightCorner<2, 2>();
      for (int j = 0; j < d; ++j) {
        hess(small[c], j) += p_.slope[j] * a.col(j).dot(r * a.col(j));
      }
    }
    const MatrixXd k = a.transpose() * sa;  // d x d
    for (int j = 0; j < d; ++j) {
      for (int i = 0; i <= j; ++i) {
        hess(j, i) += p_.slope[i] * p_.slope[j] * k(i, j) * k(i, j);
      }
    }
    const MatrixXd full = hess.selfadjointView<Eigen::Lower>();
    hess = full;
  }

  void duals(const VectorXd& z, double t, InnerSolution& out) const {
    const auto h = scalars(z);
    out.x_dual.resize(L_.d);
    for (int j = 0; j < L_.d; ++j) out.x_dual[j] = 1.0 / (t * h[j]);
    out.w_dual = 1.0 / (t * h[L_.d]);
    out.trace_dual = 1.0 / (t * h[L_.d + 1]);
    out.mac_dual.assign(masks_, 0.0);
    for (unsigned mask = 1; mask < masks_; ++mask) {
      out.mac_dual[mask] = 1.0 / (t * h[L_.d + 3 + mask]);
    }
    Eigen::LLT<Matrix4d> llt(lmi(z));
    out.lmi_dual = llt.solve(Matrix4d::Identity()) / t;
  }

  const VectorXd& center() const { return center_; }

 private:
  const InnerProblem& p_;
  Layout L_;
  int members_;
  unsigned masks_;
  VectorXd weight_;
  VectorXd center_;
  double trust2_;
  std::vector<int> member_of_;
};

void check_problem(const InnerProblem& p) {
  const int d = p.dim();
  require(d >= 1, "subproblem needs at least one component");
  require(p.dirs.rows() == 2 && p.dirs.cols() == d, "direction matrix must be 2 x D");
  require(p.y0.size() == d && p.slope.size() == d, "tangent data must have D entries");
  require(static_cast<int>(p.owner.size()) == d, "owner list must have D entries");
  require(p.members() <= kMaxMacUsers, "too many MAC members");
  require(p.capacity.size() == (std::size_t{1} << p.members()), "capacity table size mismatch");
  require(p.mu >= 0.0 && p.beta > 0.0 && p.epsilon > 0.0 && p.coupling > 0.0,
          "invalid subproblem parameters");
  require(p.x_t.allFinite() && p.dirs.allFinite() && p.slope.allFinite(), "non-finite data");
}

}  // namespace

double inner_violation(const InnerProblem& p, const InnerSolution& z) {
  Barrier bar(p);
  const Layout& L = bar.layout();
  VectorXd v(L.size());
  v.head(L.d) = z.x;
  v[L.w()] = z.w;
  v[L.m11()] = z.m(0, 0);
  v[L.m12()] = 0.5 * (z.m(0, 1) + z.m(1, 0));
  v[L.m22()] = z.m(1, 1);
  v[L.s()] = z.s;
  double worst = 0.0;
  for (double x : bar.scalars(v)) worst = std::max(worst, -x);
  Eigen::SelfAdjointEigenSolver<Matrix4d> eig(bar.lmi(v), Eigen::EigenvaluesOnly);
  worst = std::max(worst, -eig.eigenvalues()[0]);
  return worst;
}

InnerSolution inner_solve(const InnerProblem& p) {
  check_problem(p);
  Barrier bar(p);
  const Layout& L = bar.layout();
  VectorXd z = bar.center();
  for (int j = 0; j < L.d; ++j) {
    if (!(z[j] > 0.0)) fail(ErrorCode::kRestorationRequired, "start has a nonpositive bit count");
  }
  // Interior shift of the start.
  if (!(p.epsilon - z[L.m11()] - z[L.m22()] > 0.0)) {
    fail(ErrorCode::kRestorationRequired, "start violates the trace constraint");
  }
  {
    Matrix4d g = bar.lmi(z);
    Eigen::SelfAdjointEigenSolver<Matrix4d> eig(g, Eigen::EigenvaluesOnly);
    double lo = eig.eigenvalues()[0];
    if (!(lo > 0.0)) {
      const double delta = 1e-9 * std::abs(p.m_t.trace());
      z[L.m11()] += delta;
      z[L.m22()] += delta;
      Eigen::SelfAdjointEigenSolver<Matrix4d> again(bar.lmi(z), Eigen::EigenvaluesOnly);
      lo = again.eigenvalues()[0];
      if (!(lo > 0.0) || !(p.epsilon - z[L.m11()] - z[L.m22()] - p.mu * bar.prox(z) > 0.0)) {
        fail(ErrorCode::kRestorationRequired, "start violates the matrix inequality");
      }
    }
    z[L.s()] = 0.5 * lo;
  }
  if (!std::isfinite(bar.value(z, 1.0))) {
    fail(ErrorCode::kRestorationRequired, "start is not strictly feasible");
  }

  const double m = bar.constraint_count();
  double t = 1.0;
  int steps = 0;
  VectorXd grad;
  MatrixXd hess;
  constexpr int kMaxCentering = 100;
  constexpr double kDecrement = 1e-10;
  constexpr double kRounding = 1e-13;
  constexpr double kLooseDecrement = 1e-3;
  while (true) {
    // Intermediate stages only need to stay near the central path.
    const bool last = m / t <= p.gap_tol;
    const double decrement_tol = last ? kDecrement : kLooseDecrement;
    for (int it = 0; it < kMaxCentering; ++it) {
      bar.derivatives(z, t, grad, hess);
      Eigen::LDLT<MatrixXd> ldlt(hess);
      VectorXd dz = ldlt.solve(-grad);
      if (!dz.allFinite()) {
        fail(ErrorCode::kNumericalFailure, "non-finite Newton step");
      }
      double slope = grad.dot(dz);
      if (!(slope < 0.0)) {
        // Indefinite factorization from rounding; fall back to steepest descent.
        dz = -grad;
        slope = -grad.squaredNorm();
      }
      const double phi0 = bar.value(z, t);
      // Decrements below the rounding level of phi cannot be verified.
      if (-slope / 2.0 <= std::max(decrement_tol, kRounding * std::abs(phi0))) break;
      double alpha = 1.0;
      double phi = bar.value(z + alpha * dz, t);
      while (!(phi <= phi0 + 0.25 * alpha * slope) && alpha > 1e-12) {
        alpha *= 0.5;
        phi = bar.value(z + alpha * dz, t);
      }
      ++steps;
      if (!(phi <= phi0 + 0.25 * alpha * slope)) break;
      z += alpha * dz;
    }
    if (last) break;
    t *= 10.0;
  }

  InnerSolution out;
  out.x = z.head(L.d);
  out.w = z[L.w()];
  out.m = block_m(z, L);
  out.s = z[L.s()];
  out.objective = out.w + p.mu * bar.prox(z);
  out.newton_steps = steps;
  bar.duals(z, t, out);
  return out;
}

}  // namespace coopsense
