#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "symgpt/expr.hpp"

namespace symgpt {

// Normalized mean squared error: (1/n) * sum_i (y_i - yhat_i)^2 / ||y + eps||_2,
// with eps added elementwise inside the norm. Non-finite predictions score as
// +infinity (the failure sentinel). Throws on length mismatch.
double mse_n(std::span<const double> y, std::span<const double> y_hat, double eps = 1e-8);

enum class FitStatus { Converged, MaxIter, Failed };

struct FitResult {
  Expr::Ptr expr;                  // skeleton with fitted constants substituted
  std::vector<double> constants;   // one per placeholder, depth-first order
  double objective = 0.0;          // plain MSE of the fitted expression
  FitStatus status = FitStatus::Failed;
  int restarts_used = 0;
  int iterations = 0;
};

struct FitOptions {
  int restarts = 10;
  int max_iters = 100;
  double c_min = -2.1, c_max = 2.1;  // restart initialization range
  double grad_step = 1e-6;           // central-difference step scale
  double grad_tol = 1e-8;
  std::uint64_t seed = 0;
};

// Minimizes the MSE of evaluate(skeleton[c], X) against y over the constant
// vector c: BFGS with an Armijo-Wolfe line search and central-difference
// gradients, restarted from uniform draws in [c_min, c_max]. Skeletons without
// placeholders return immediately. Never throws on numeric trouble; status is
// Failed when every restart ends non-finite.
FitResult fit_constants(const Expr::Ptr& skeleton, std::span<const double> X,
                        std::span<const double> y, int d, const FitOptions& opts = {});

// Standalone BFGS, exposed for its own tests.
struct BfgsResult {
  std::vector<double> x;
  double f = 0.0;
  int iterations = 0;
  bool converged = false;
};

BfgsResult bfgs_minimize(const std::function<double(std::span<const double>)>& f,
                         std::vector<double> x0, int max_iters, double grad_step,
                         double grad_tol);

}  // namespace symgpt
