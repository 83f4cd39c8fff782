// Copyright 2026 The Ensemble Dispatch Authors
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

#include "ensdispatch/box_qp.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace ensdispatch {
namespace {

Eigen::VectorXd Clamp(const Eigen::VectorXd& v, const Eigen::VectorXd& lo,
                      const Eigen::VectorXd& hi) {
  return v.cwiseMax(lo).cwiseMin(hi);
}

double InfNorm(const Eigen::VectorXd& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

double Violation(const Eigen::VectorXd& cx, const Eigen::VectorXd& lo,
                 const Eigen::VectorXd& hi) {
  return InfNorm(cx - Clamp(cx, lo, hi));
}

// Problem rescaled so that the Hessian has unit spectral bound and every
// constraint row has unit norm. Zero rows are dropped (they are checked for
// feasibility separately).
struct Scaled {
  BoxQp qp;
  double objective_scale = 1.0;
  std::vector<int> rows;        // original row of each scaled row
  Eigen::VectorXd row_scale;    // original row = scaled row * row_scale
};

Scaled Rescale(const BoxQp& p) {
  Scaled s;
  double lmax = p.hessian.size() ? LargestEigenvalueBound(p.hessian) : 0.0;
  double gmax = InfNorm(p.linear);
  s.objective_scale = lmax > 0.0 ? 1.0 / lmax : 1.0 / std::max(1.0, gmax);
  s.qp.hessian = p.hessian * s.objective_scale;
  s.qp.linear = p.linear * s.objective_scale;
  s.qp.lower = p.lower;
  s.qp.upper = p.upper;
  const Eigen::Index n = p.hessian.rows();
  std::vector<double> norms;
  for (Eigen::Index j = 0; j < p.constraints.rows(); ++j) {
    double norm = p.constraints.row(j).norm();
    if (norm > 0.0) {
      s.rows.push_back(static_cast<int>(j));
      norms.push_back(norm);
    }
  }
  const Eigen::Index k = static_cast<Eigen::Index>(s.rows.size());
  s.qp.constraints.resize(k, n);
  s.qp.constraint_lower.resize(k);
  s.qp.constraint_upper.resize(k);
  s.row_scale.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const int j = s.rows[i];
    s.row_scale[i] = norms[i];
    s.qp.constraints.row(i) = p.constraints.row(j) / norms[i];
    s.qp.constraint_lower[i] = p.constraint_lower[j] / norms[i];
    s.qp.constraint_upper[i] = p.constraint_upper[j] / norms[i];
  }
  return s;
}

// Gradient of the augmented Lagrangian at x for multipliers y and penalty rho.
Eigen::VectorXd AugmentedGradient(const BoxQp& q, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& y, double rho) {
  Eigen::VectorXd grad = q.hessian * x + q.linear;
  if (q.constraints.rows() > 0) {
    Eigen::VectorXd w = q.constraints * x + y / rho;
    Eigen::VectorXd excess =
        w - Clamp(w, q.constraint_lower, q.constraint_upper);
    grad += rho * (q.constraints.transpose() * excess);
  }
  return grad;
}

// FISTA with gradient restart on the augmented Lagrangian.
int MinimizeAugmented(const BoxQp& q, const Eigen::VectorXd& y, double rho,
                      double tolerance, int max_iterations,
                      Eigen::VectorXd* x) {
  Eigen::MatrixXd curvature = q.hessian;
  if (q.constraints.rows() > 0) {
    curvature += rho * q.constraints.transpose() * q.constraints;
  }
  const double lipschitz = std::max(LargestEigenvalueBound(curvature), 1e-12);
  Eigen::VectorXd current = *x;
  Eigen::VectorXd momentum = current;
  double t = 1.0;
  int k = 0;
  for (; k < max_iterations; ++k) {
    Eigen::VectorXd grad = AugmentedGradient(q, momentum, y, rho);
    Eigen::VectorXd next =
        Clamp(momentum - grad / lipschitz, q.lower, q.upper);
    if ((momentum - next).dot(next - current) > 0.0) {
      t = 1.0;  // restart
    }
    double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    momentum = next + ((t - 1.0) / t_next) * (next - current);
    current = next;
    t = t_next;
    if (k % 5 == 4) {
      Eigen::VectorXd g = AugmentedGradient(q, current, y, rho);
      if (InfNorm(current - Clamp(current - g, q.lower, q.upper)) <=
          tolerance) {
        ++k;
        break;
      }
    }
  }
  *x = current;
  return k;
}

// Solves the equality-constrained KKT system on the active set implied by
// (x, y) and returns true if the result is optimal for `p`.
bool Polish(const BoxQp& p, double tolerance, Eigen::VectorXd* x,
            Eigen::VectorXd* y) {
  const Eigen::Index n = p.hessian.rows();
  const Eigen::Index m = p.constraints.rows();
  const Eigen::VectorXd grad =
      p.hessian * *x + p.linear + p.constraints.transpose() * *y;
  std::vector<int> free_vars;
  Eigen::VectorXd fixed = *x;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double width = std::max(1.0, p.upper[i] - p.lower[i]);
    const double eps = 1e-7 * width;
    if ((*x)[i] <= p.lower[i] + eps && grad[i] >= 0.0) {
      fixed[i] = p.lower[i];
    } else if ((*x)[i] >= p.upper[i] - eps && grad[i] <= 0.0) {
      fixed[i] = p.upper[i];
    } else {
      free_vars.push_back(static_cast<int>(i));
    }
  }
  std::vector<int> active;
  std::vector<double> target;
  const Eigen::VectorXd cx = p.constraints * *x;
  const double y_scale = std::max(1.0, InfNorm(*y));
  for (Eigen::Index j = 0; j < m; ++j) {
    const double band = 1e-8 * (1.0 + std::abs(p.constraint_upper[j]));
    if ((*y)[j] > 1e-10 * y_scale ||
        std::abs(cx[j] - p.constraint_upper[j]) <= band) {
      active.push_back(static_cast<int>(j));
      target.push_back(p.constraint_upper[j]);
    } else if ((*y)[j] < -1e-10 * y_scale ||
               std::abs(cx[j] - p.constraint_lower[j]) <= band) {
      active.push_back(static_cast<int>(j));
      target.push_back(p.constraint_lower[j]);
    }
  }
  const Eigen::Index nf = static_cast<Eigen::Index>(free_vars.size());
  const Eigen::Index na = static_cast<Eigen::Index>(active.size());
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(nf + na, nf + na);
  Eigen::VectorXd rhs(nf + na);
  Eigen::VectorXd base = fixed;
  for (int i : free_vars) base[i] = 0.0;
  const Eigen::VectorXd h_base = p.hessian * base;
  const Eigen::VectorXd c_base = p.constraints * base;
  for (Eigen::Index a = 0; a < nf; ++a) {
    for (Eigen::Index b = 0; b < nf; ++b) {
      kkt(a, b) = p.hessian(free_vars[a], free_vars[b]);
    }
    for (Eigen::Index c = 0; c < na; ++c) {
      kkt(a, nf + c) = p.constraints(active[c], free_vars[a]);
      kkt(nf + c, a) = p.constraints(active[c], free_vars[a]);
    }
    rhs[a] = -p.linear[free_vars[a]] - h_base[free_vars[a]];
  }
  for (Eigen::Index c = 0; c < na; ++c) {
    rhs[nf + c] = target[c] - c_base[active[c]];
  }
  Eigen::VectorXd solution;
  if (nf + na > 0) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (lu.isInvertible()) {
      solution = lu.solve(rhs);
    } else {
      solution = kkt.completeOrthogonalDecomposition().solve(rhs);
    }
    if ((kkt * solution - rhs).cwiseAbs().maxCoeff() >
        1e-9 * std::max(1.0, InfNorm(rhs))) {
      return false;
    }
  }
  Eigen::VectorXd x_new = fixed;
  Eigen::VectorXd y_new = Eigen::VectorXd::Zero(m);
  for (Eigen::Index a = 0; a < nf; ++a) x_new[free_vars[a]] = solution[a];
  for (Eigen::Index c = 0; c < na; ++c) y_new[active[c]] = solution[nf + c];

  // Sign of each active multiplier must match the side it binds.
  for (Eigen::Index c = 0; c < na; ++c) {
    const int j = active[c];
    const bool upper = target[c] == p.constraint_upper[j];
    const bool lower = target[c] == p.constraint_lower[j];
    if (upper && !lower && y_new[j] < -tolerance) return false;
    if (lower && !upper && y_new[j] > tolerance) return false;
  }
  const double feas = 1e-10;
  if (((x_new - p.lower).array() < -feas).any() ||
      ((x_new - p.upper).array() > feas).any()) {
    return false;
  }
  x_new = Clamp(x_new, p.lower, p.upper);
  if (m > 0 && Violation(p.constraints * x_new, p.constraint_lower,
                         p.constraint_upper) > feas) {
    return false;
  }
  if (ProjectedGradientResidual(p, x_new, y_new) > tolerance) return false;
  *x = x_new;
  *y = y_new;
  return true;
}

}  // namespace

double LargestEigenvalueBound(const Eigen::MatrixXd& matrix) {
  const Eigen::Index n = matrix.rows();
  if (n == 0) return 0.0;
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = 1.0 + 0.1 * static_cast<double>(i % 7);
  v.normalize();
  double estimate = 0.0;
  for (int k = 0; k < 200; ++k) {
    Eigen::VectorXd w = matrix * v;
    double norm = w.norm();
    if (norm == 0.0) return 0.0;
    double next = v.dot(w);
    v = w / norm;
    if (k > 10 && std::abs(next - estimate) <= 1e-10 * std::abs(next)) {
      estimate = next;
      break;
    }
    estimate = next;
  }
  // Power iteration approaches from below; the row-sum bound caps the slack.
  double gershgorin = matrix.cwiseAbs().rowwise().sum().maxCoeff();
  return std::min(1.05 * estimate + 1e-15, gershgorin);
}

double ProjectedGradientResidual(const BoxQp& p, const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& y) {
  if (x.size() == 0) return 0.0;
  Eigen::VectorXd grad = p.hessian * x + p.linear;
  if (p.constraints.rows() > 0) grad += p.constraints.transpose() * y;
  return InfNorm(x - Clamp(x - grad, p.lower, p.upper));
}

QpResult SolveBoxQp(const BoxQp& problem, const QpOptions& options) {
  const Eigen::Index n = problem.hessian.rows();
  const Eigen::Index m = problem.constraints.rows();
  Scaled s = Rescale(problem);
  const Eigen::Index k = s.qp.constraints.rows();

  QpResult result;
  Eigen::VectorXd x = Clamp(Eigen::VectorXd::Zero(n), s.qp.lower, s.qp.upper);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(k);
  double rho = 10.0;
  double last_violation = std::numeric_limits<double>::infinity();
  const double kkt_target = 1e-12;
  const double feas_target = 1e-12;
  double inner_tolerance = 1e-6;

  for (int outer = 0; outer < options.max_outer_iterations; ++outer) {
    result.iterations += MinimizeAugmented(
        s.qp, y, rho, inner_tolerance,
        options.max_inner_iterations, &x);
    if (k == 0) break;
    Eigen::VectorXd cx = s.qp.constraints * x;
    Eigen::VectorXd w = cx + y / rho;
    y = rho * (w - Clamp(w, s.qp.constraint_lower, s.qp.constraint_upper));
    const double violation =
        Violation(cx, s.qp.constraint_lower, s.qp.constraint_upper);
    const double kkt = ProjectedGradientResidual(s.qp, x, y);
    if (violation <= feas_target && kkt <= kkt_target) break;
    if (violation > 0.25 * last_violation) rho = std::min(rho * 10.0, 1e10);
    last_violation = violation;
    inner_tolerance = std::max(1e-14, std::min(inner_tolerance,
                                               0.1 * std::max(violation, kkt)));
  }

  // Back to the original scaling.
  Eigen::VectorXd multipliers = Eigen::VectorXd::Zero(m);
  for (Eigen::Index i = 0; i < k; ++i) {
    multipliers[s.rows[i]] = y[i] / (s.objective_scale * s.row_scale[i]);
  }
  if (options.polish && n > 0) {
    const double scale =
        std::max({1.0, InfNorm(problem.linear),
                  InfNorm(problem.hessian * x)});
    result.polished = Polish(problem, 1e-10 * scale, &x, &multipliers);
  }
  result.x = x;
  result.multipliers = multipliers;
  result.objective =
      0.5 * x.dot(problem.hessian * x) + problem.linear.dot(x);
  result.kkt_residual = ProjectedGradientResidual(problem, x, multipliers);
  result.max_violation =
      m > 0 ? Violation(problem.constraints * x, problem.constraint_lower,
                        problem.constraint_upper)
            : 0.0;
  result.converged = result.kkt_residual <= options.kkt_tolerance &&
                     result.max_violation <= options.feasibility_tolerance;
  return result;
}

}  // namespace ensdispatch
