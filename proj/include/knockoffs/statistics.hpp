#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>

#include "knockoffs/core.hpp"

namespace knockoffs {

enum class StatKind { marginal_corr, ols_diff, debiased_lasso_diff, distance_corr };

const char* stat_kind_name(StatKind kind);

// Length-p vector of feature-vs-knockoff contrasts. Large positive entries point
// at signal features. meta carries solver diagnostics when a solver was involved.
struct WStats {
  VectorXd w;
  StatKind kind;
  std::map<std::string, double> meta;
};

// Result of one coordinate-descent lasso solve of
//   (2n)^{-1} ||y - Z b||^2 + lambda ||b||_1.
// kkt_residual is the largest violation of the subgradient conditions at beta.
// objective_trace holds the objective after each sweep; it never increases.
struct LassoFit {
  VectorXd beta;
  double lambda = 0.0;
  double objective = 0.0;
  double kkt_residual = 0.0;
  int sweeps = 0;
  bool converged = false;
  std::vector<double> objective_trace;
};

struct LassoOptions {
  double tol = 1e-7;        // max coefficient change per sweep
  double kkt_tol = 1e-6;    // final subgradient check
  int max_sweeps = 100000;
};

// Cyclic coordinate descent on the exact objective; no internal standardization,
// callers control column scaling. Returns a fit flagged non-converged when
// max_sweeps is exhausted before both the coefficient-change and KKT checks pass.
LassoFit lasso_cd(const MatrixXd& z, const VectorXd& y, double lambda,
                  const LassoOptions& opts = {});

// Same solve expressed through precomputed Gram quantities: g = Z^T Z, c = Z^T y,
// yty = y^T y, n the row count behind g. skip >= 0 pins that coordinate to zero,
// which is how the nodewise regressions reuse one Gram matrix.
LassoFit lasso_cd_gram(const MatrixXd& g, const VectorXd& c, double yty, double n_rows,
                       double lambda, Eigen::Index skip, const LassoOptions& opts = {});

// w_j = |x_j^T y| / ||y|| - |xhat_j^T y| / ||y||, raw columns.
WStats marginal_corr_stats(const DataMatrix& x, const DataMatrix& xhat, const ResponseVector& y);

// w_j = |b_j| - |b_{j+p}| with b = sqrt(n) (Z^T Z / n)^{-1} Z^T y / n for Z = [X, Xhat].
// Requires n > 2p and a Gram condition number below 1e12.
WStats ols_diff_stats(const DataMatrix& x, const DataMatrix& xhat, const ResponseVector& y);

struct DebiasedLassoOptions {
  // lambda0 < 0 means the default rate lambda_scale * sqrt(log(2p)/n).
  double lambda0 = -1.0;
  double lambda_scale = 1.0;
  // Empty means the per-column default sd(Z_j) * sqrt(log(2p)/n).
  VectorXd lambda_node;
  LassoOptions solver;
  int threads = 1;
};

// Initial lasso at lambda0, then one nodewise lasso per column of Z = [X, Xhat] to build
// score vectors z_j = Z_j - Z_{-j} gamma_j, then the coordinatewise correction
//   b_j_dl = b_j + <z_j, y - Z b> / <z_j, Z_j>,
// and finally w_j = sqrt(n) (|b_j_dl| - |b_{j+p}_dl|).
WStats debiased_lasso_stats(const DataMatrix& x, const DataMatrix& xhat, const ResponseVector& y,
                            const DebiasedLassoOptions& opts = {});

// w_j = dcor(x_j, y) - dcor(xhat_j, y) with the double-centered V-statistic;
// a column with zero distance variance contributes dcor = 0.
WStats distance_corr_stats(const DataMatrix& x, const DataMatrix& xhat, const ResponseVector& y);

// Distance correlation of two length-n samples, exposed for testing.
double distance_correlation(const VectorXd& a, const VectorXd& b);

WStats compute_stats(StatKind kind, const DataMatrix& x, const DataMatrix& xhat,
                     const ResponseVector& y, const DebiasedLassoOptions& dl_opts = {});

}  // namespace knockoffs
