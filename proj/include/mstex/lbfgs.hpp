#pragma once

// Limited-memory BFGS with a strong-Wolfe line search (two-loop recursion,
// bracket + zoom). The caller drives the outer loop one step at a time so
// that objectives which change between iterations (frozen triplet batches)
// see a deterministic function during each line search.

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <functional>
#include <limits>

#include "mstex/error.hpp"

namespace mstex {

struct LbfgsOptions {
  int history = 20;
  int max_evals_per_step = 20;
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  double grad_tolerance = 1e-12;
};

struct LbfgsStepResult {
  double loss = 0.0;       // accepted objective value after the step
  double step_size = 0.0;  // 0 when no acceptable point was found
  int evaluations = 0;
  bool converged = false;  // gradient/loss already at tolerance before moving
};

// Objective: fills grad (same size as x) and returns the loss.
using LbfgsObjective =
    std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

class LbfgsSolver {
 public:
  explicit LbfgsSolver(LbfgsOptions options = {}) : opt_(options) {}

  void reset() { pairs_.clear(); }

  LbfgsStepResult step(const LbfgsObjective& objective, Eigen::VectorXd& x) {
    LbfgsStepResult result;
    Eigen::VectorXd grad(x.size());
    const double f0 = objective(x, grad);
    ++result.evaluations;
    require(std::isfinite(f0), "objective returned a non-finite loss");
    require(grad.allFinite(), "objective returned a non-finite gradient");
    result.loss = f0;
    if (f0 == 0.0 || grad.lpNorm<Eigen::Infinity>() <= opt_.grad_tolerance) {
      result.converged = true;
      return result;
    }

    Eigen::VectorXd direction = two_loop(grad);
    double dg = direction.dot(grad);
    if (!(dg < 0.0)) {  // not a descent direction; fall back to steepest descent
      pairs_.clear();
      direction = -grad;
      dg = direction.dot(grad);
    }

    // Scale the very first step so the initial trial is sensible.
    double alpha0 = 1.0;
    if (pairs_.empty()) {
      const double gnorm = grad.norm();
      if (gnorm > 0.0) alpha0 = std::min(1.0, 1.0 / gnorm);
    }

    LineSearchOutcome ls =
        strong_wolfe(objective, x, f0, grad, direction, dg, alpha0,
                     opt_.max_evals_per_step - result.evaluations);
    result.evaluations += ls.evaluations;

    if (ls.alpha <= 0.0) {
      // Line search exhausted the budget without a Wolfe point and without
      // any improvement; stay put and drop stale curvature.
      pairs_.clear();
      result.loss = f0;
      result.step_size = 0.0;
      return result;
    }

    const Eigen::VectorXd s = ls.alpha * direction;
    const Eigen::VectorXd y = ls.grad - grad;
    x += s;
    result.loss = ls.f;
    result.step_size = ls.alpha;
    const double ys = y.dot(s);
    if (ys > 1e-10 * y.norm() * s.norm()) {
      pairs_.push_back({s, y, 1.0 / ys});
      while (int(pairs_.size()) > opt_.history) pairs_.pop_front();
    }
    return result;
  }

 private:
  struct CurvaturePair {
    Eigen::VectorXd s, y;
    double rho;
  };

  struct LineSearchOutcome {
    double alpha = 0.0;
    double f = 0.0;
    Eigen::VectorXd grad;
    int evaluations = 0;
  };

  Eigen::VectorXd two_loop(const Eigen::VectorXd& grad) const {
    Eigen::VectorXd q = -grad;
    if (pairs_.empty()) return q;
    std::vector<double> alpha(pairs_.size());
    for (int i = int(pairs_.size()) - 1; i >= 0; --i) {
      alpha[i] = pairs_[i].rho * pairs_[i].s.dot(q);
      q -= alpha[i] * pairs_[i].y;
    }
    const auto& last = pairs_.back();
    const double gamma = last.s.dot(last.y) / last.y.squaredNorm();
    q *= gamma;
    for (std::size_t i = 0; i < pairs_.size(); ++i) {
      const double beta = pairs_[i].rho * pairs_[i].y.dot(q);
      q += (alpha[i] - beta) * pairs_[i].s;
    }
    return q;
  }

  // Nocedal & Wright alg. 3.5/3.6. Returns alpha = 0 on failure.
  LineSearchOutcome strong_wolfe(const LbfgsObjective& objective,
                                 const Eigen::VectorXd& x0, double f0,
                                 const Eigen::VectorXd& g0,
                                 const Eigen::VectorXd& direction, double dg0,
                                 double alpha_init, int eval_budget) const {
    LineSearchOutcome best;  // best sufficient-decrease point seen
    LineSearchOutcome out;
    if (eval_budget <= 0) return out;

    Eigen::VectorXd xt(x0.size()), gt(x0.size());
    const auto eval = [&](double alpha, double& f, double& dg) {
      xt = x0 + alpha * direction;
      f = objective(xt, gt);
      ++out.evaluations;
      require(std::isfinite(f), "objective returned a non-finite loss");
      require(gt.allFinite(), "objective returned a non-finite gradient");
      dg = gt.dot(direction);
    };

    const double c1 = opt_.wolfe_c1, c2 = opt_.wolfe_c2;
    double alpha_prev = 0.0, f_prev = f0, dg_prev = dg0;
    double alpha = alpha_init;
    double alpha_max = 1e8;

    auto zoom = [&](double lo, double f_lo, double dg_lo, double hi, double f_hi) {
      for (int it = 0; it < 32 && out.evaluations < eval_budget; ++it) {
        // Bisection with a quadratic-fit candidate kept inside the bracket.
        double mid = 0.5 * (lo + hi);
        const double denom = 2.0 * (f_hi - f_lo - dg_lo * (hi - lo));
        if (std::abs(denom) > 1e-300) {
          const double quad = lo - dg_lo * (hi - lo) * (hi - lo) / denom;
          const double span = std::abs(hi - lo);
          if (quad > std::min(lo, hi) + 0.1 * span &&
              quad < std::max(lo, hi) - 0.1 * span)
            mid = quad;
        }
        double f_mid, dg_mid;
        eval(mid, f_mid, dg_mid);
        if (f_mid > f0 + c1 * mid * dg0 || f_mid >= f_lo) {
          hi = mid;
          f_hi = f_mid;
        } else {
          if (std::abs(dg_mid) <= -c2 * dg0) {
            out.alpha = mid;
            out.f = f_mid;
            out.grad = gt;
            return true;
          }
          if (f_mid < best.f || best.alpha == 0.0) {
            best.alpha = mid;
            best.f = f_mid;
            best.grad = gt;
          }
          if (dg_mid * (hi - lo) >= 0.0) {
            hi = lo;
            f_hi = f_lo;
          }
          lo = mid;
          f_lo = f_mid;
          dg_lo = dg_mid;
        }
        if (std::abs(hi - lo) < 1e-16 * std::max(1.0, std::abs(lo))) break;
      }
      return false;
    };

    best.f = f0;
    best.alpha = 0.0;
    for (int it = 0; it < 16 && out.evaluations < eval_budget; ++it) {
      double f, dg;
      eval(alpha, f, dg);
      if (f > f0 + c1 * alpha * dg0 || (it > 0 && f >= f_prev)) {
        if (zoom(alpha_prev, f_prev, dg_prev, alpha, f)) return out;
        break;
      }
      if (f < best.f) {
        best.alpha = alpha;
        best.f = f;
        best.grad = gt;
      }
      if (std::abs(dg) <= -c2 * dg0) {
        out.alpha = alpha;
        out.f = f;
        out.grad = gt;
        return out;
      }
      if (dg >= 0.0) {
        if (zoom(alpha, f, dg, alpha_prev, f_prev)) return out;
        break;
      }
      alpha_prev = alpha;
      f_prev = f;
      dg_prev = dg;
      alpha = std::min(2.0 * alpha, alpha_max);
    }

    // No Wolfe point within budget; accept the best improving point if any.
    if (best.alpha > 0.0 && best.f < f0) {
      out.alpha = best.alpha;
      out.f = best.f;
      out.grad = best.grad;
    }
    return out;
  }

  LbfgsOptions opt_;
  std::deque<CurvaturePair> pairs_;
};

}  // namespace mstex
