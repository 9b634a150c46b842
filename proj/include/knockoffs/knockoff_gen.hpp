#pragma once

#include <Eigen/Dense>

#include "knockoffs/core.hpp"
#include "knockoffs/rng.hpp"

namespace knockoffs {

// Method for picking the diagonal perturbation r.
// diagonal_identity requires a diagonal covariance and sets r_j to the j-th variance,
// which makes the knockoffs independent fresh draws.
// equicorrelated sets r = s * diag(Sigma) with s = min(1, 2*lambda_min(R)) * (1 - 1e-6),
// R the correlation matrix, and is always PSD-feasible.
enum class RMethod { equicorrelated, diagonal_identity };

VectorXd choose_r(const CovarianceSpec& cov, RMethod method);

// Everything needed to generate Gaussian knockoffs from first two moments.
// conditional_loading right-multiplies centered rows, so it stores
// I - Sigma^{-1} diag(r), the transpose of the per-row map I - diag(r) Sigma^{-1}.
// noise_sqrt is the symmetric square root of 2 diag(r) - diag(r) Sigma^{-1} diag(r).
struct KnockoffModel {
  CovarianceSpec cov;
  VectorXd r;
  MatrixXd sigma_inv;
  MatrixXd conditional_loading;
  MatrixXd noise_sqrt;

  Eigen::Index dim() const { return r.size(); }
};

// ridge > 0 adds ridge * I to sigma before inversion; off by default because it
// changes the statistical model. Throws PSDViolation when sigma is numerically
// singular (lambda_min < 1e-10 * ||sigma||_op) or the noise covariance fails PSD.
KnockoffModel build_knockoff_model(const CovarianceSpec& cov, const VectorXd& r,
                                   double ridge = 0.0);

KnockoffModel build_knockoff_model(const CovarianceSpec& cov, RMethod method,
                                   double ridge = 0.0);

// 2p x 2p covariance of the stacked vector (X, Xhat):
// [Sigma, Sigma - diag(r); Sigma - diag(r), Sigma].
// Diagonal blocks are bit-identical copies of Sigma, so permuting indices
// j and j+p leaves the matrix unchanged exactly.
struct JointCovariance {
  MatrixXd sigma2p;

  Eigen::Index pairs() const { return sigma2p.rows() / 2; }
};

JointCovariance joint_covariance(const CovarianceSpec& cov, const VectorXd& r);

// Xhat = mu + (X - mu)(I - Sigma^{-1} diag(r)) + Z * noise_sqrt, rows independent,
// Z standard Gaussian drawn column-major from rng.
DataMatrix gaussian_knockoffs(const DataMatrix& x, const KnockoffModel& model, RngStream& rng);

// Sample-moment variant: Xhat_in = mu + (X - mu)(I - omega_hat diag(r)) + Z * S_hat^{1/2}
// with S_hat = 2 diag(r) - diag(r) omega_hat diag(r). Shares the transform path with
// gaussian_knockoffs, so identical inputs and noise give identical output.
DataMatrix sample_moment_knockoffs(const DataMatrix& x, const VectorXd& mean,
                                   const MatrixXd& omega_hat, const VectorXd& r, RngStream& rng);

// max over columns j of n^{-1/2} ||a_col_j - b_col_j||_2.
double coupling_distance(const DataMatrix& a, const DataMatrix& b);

// Empirical check that second moments of [X, Xhat] are invariant to swapping a
// column with its knockoff. For every pair (j, b) with b not in {j, j+p} it forms
// the per-row products d_i = (x_ij - x_i,j+p) * x_ib on column-centered data, plus
// the diagonal contrast d_i = (x_ij - x_i,j+p)(x_ij + x_i,j+p), and reports the
// largest |sqrt(n) * mean(d) / sd(d)| over all pairs. Values within a few units
// are consistent with exchangeable second moments.
struct ExchangeabilityCheck {
  double max_abs_t;
  Eigen::Index worst_row_feature;  // j of the worst pair
  Eigen::Index worst_partner;      // b of the worst pair, or -1 for the diagonal contrast
  long comparisons;
};

ExchangeabilityCheck exchangeability_check(const MatrixXd& x_aug);

}  // namespace knockoffs
