#pragma once

#include <Eigen/Dense>
#include <vector>

#include "knockoffs/core.hpp"
#include "knockoffs/selection.hpp"

namespace knockoffs {

enum class TailMethod { quadrature, monte_carlo };

// Reference distribution for one null contrast: (G1, G2) ~ N(0, sigma2) and the
// quantity of interest is P(|G1| - |G2| >= t). quadrature resolves equal-diagonal
// matrices in closed form and diagonal ones by adaptive 1-D integration; matrices
// that are neither fall back to Monte Carlo with mc_samples draws.
struct BivariateTail {
  Eigen::Matrix2d sigma2;
  TailMethod method = TailMethod::quadrature;
  long mc_samples = 10000000;
  unsigned long long mc_seed = 0x9e3779b97f4a7c15ull;
};

// std_error is zero for closed-form and quadrature evaluations.
struct TailEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

// P(|G1| - |G2| >= t) for t >= 0.
TailEstimate half_abs_diff_tail(const BivariateTail& bt, double t);

// Arithmetic mean of half_abs_diff_tail over a nonempty list.
TailEstimate avg_tail(const std::vector<BivariateTail>& tails, double t);

// Largest t >= 0 with avg_tail(tails, t) >= x, for x in (0, 1/2]; bisection to
// bracket width 1e-8 on the continuous strictly decreasing average tail.
double tail_inverse(const std::vector<BivariateTail>& tails, double x);

// Reference tails for the marginal correlation contrast: per feature j the pair
// (x_j^T y, xhat_j^T y) / ||y|| has covariance [[s_jj, s_jj - r_j], [s_jj - r_j, s_jj]].
std::vector<BivariateTail> marginal_corr_tails(const MatrixXd& sigma, const VectorXd& r);

// Reference tails for regression coefficient contrasts: per feature j the 2x2
// block of sigma_noise2 * (Sigma_joint)^{-1} at indices (j, j+p), inflated by
// (1 - 2p/n)^{-1} when ols_inflation is set (finite-sample Gram overestimation).
std::vector<BivariateTail> regression_score_tails(const MatrixXd& sigma, const VectorXd& r,
                                                  double n_rows, double sigma_noise2,
                                                  bool ols_inflation);

struct DiagnosticsConfig {
  VectorXd t_grid;      // strictly increasing positive
  double q = 0.2;
  int a_n = 1;          // planted strong-signal count in alpha_n = Pinv(q a_n / (2p))
  int num_features = 1; // total feature count p
  int replications = 100;
  unsigned long long seed = 1;
};

void validate_diagnostics_config(const DiagnosticsConfig& cfg);

// Empirical version of the two-sided tail symmetry of null statistics: pooled
// frequencies of {w >= t} and {w <= -t} over an R x J sample matrix. A grid point
// is admissible when the denominator count is at least 10; sup_abs_dev is the
// largest |ratio - 1| over admissible points. std_error is a delta-method SE of
// the ratio treating pooled entries as independent.
struct SymmetryDiag {
  VectorXd t_grid;
  VectorXd num_freq;
  VectorXd den_freq;
  VectorXd ratio;
  VectorXd std_error;
  std::vector<char> admissible;
  double sup_abs_dev = 0.0;
  double sup_abs_dev_se = 0.0;
  bool any_admissible = false;
};

SymmetryDiag symmetry_ratio_diag(const MatrixXd& null_w_samples, const VectorXd& t_grid);

// Empirical version of the count-vs-probability approximation: with pooled
// frequency p_hat(t) of {w >= t}, each replication contributes
// sup over admissible t of |count_r(t) / (J * p_hat(t)) - 1|, and mean_sup
// averages those sups. Admissible means p_hat(t) >= freq_floor
// (default 10 / (R * J) when freq_floor < 0).
struct IndicatorDiag {
  VectorXd t_grid;
  VectorXd pooled_freq;
  std::vector<char> admissible;
  VectorXd per_rep_sup;
  double mean_sup = 0.0;
  bool any_admissible = false;
};

IndicatorDiag indicator_approx_diag(const MatrixXd& null_w_samples, const VectorXd& t_grid,
                                    double freq_floor = -1.0);

// Frequency of selection thresholds exceeding alpha_n = Pinv(q a_n / (2p)),
// +infinity thresholds counting as exceedances.
struct LocalizationDiag {
  double alpha_n = 0.0;
  double exceed_frequency = 0.0;
  int exceed_count = 0;
  int total = 0;
};

LocalizationDiag threshold_localization_diag(const std::vector<SelectionResult>& runs,
                                             const DiagnosticsConfig& cfg,
                                             const std::vector<BivariateTail>& tails);

}  // namespace knockoffs
