#pragma once

#include <optional>
#include <string>
#include <vector>

#include "knockoffs/core.hpp"
#include "knockoffs/knockoff_gen.hpp"
#include "knockoffs/selection.hpp"
#include "knockoffs/statistics.hpp"

namespace knockoffs {

enum class CovariateLaw { binary_threshold, gaussian, rademacher, student_t };
enum class ResponseModel { linear, tanh_nonlinear, null_model };
enum class MomentMode { analytic, train };

const char* covariate_law_name(CovariateLaw law);
const char* response_model_name(ResponseModel model);

// One simulation cell. Defaults mirror the synthetic study design: 40 signals of
// magnitude 3 with random signs, q = 0.2, 100 replications, beta fixed across
// replications, estimated moments trained on 1e5 fresh rows when moments = train.
struct SimConfig {
  int n = 300;
  int p = 300;
  double rho = 0.0;
  CovariateLaw law = CovariateLaw::binary_threshold;
  int dof = 5;  // student_t only, must be >= 3
  ResponseModel response = ResponseModel::linear;
  StatKind statistic = StatKind::marginal_corr;
  double q = 0.2;
  int replications = 100;
  unsigned long long seed = 1;
  MomentMode moments = MomentMode::analytic;
  long train_size = 100000;
  int k = 40;            // nonzero beta count
  double magnitude = 3.0;
  bool beta_redraw = false;  // redraw beta every replication instead of once per cell
  bool knockoff_plus = false;
  double lambda_scale = 1.0;  // constant C in the initial lasso rate
};

void validate_sim_config(const SimConfig& cfg);

struct RepResult {
  double fdp = 0.0;
  double power = 0.0;
  double threshold = 0.0;
  int selected_count = 0;
};

struct CellResult {
  SimConfig config;
  double mean_fdr = 0.0;
  double mean_power = 0.0;
  std::vector<RepResult> per_rep;
  // Largest swap t-statistic of [X, Xhat] second moments on the first replication.
  double exchangeability_max_t = 0.0;
};

// Banded precision matrix omega_ij = rho^|i-j| * 1{|i-j| <= 5}; throws NotPD
// when the result is not positive definite.
MatrixXd gen_banded_precision(int p, double rho);

// X_j = 1{Z_j >= alpha_j} with Z ~ N(0, omega^{-1}) and cutoffs alpha_j evenly
// spaced on [-1, 1] (alpha_j = 0 when p = 1). For diagonal omega the moment spec
// is analytic (mean_j = P(Z_j >= alpha_j), diagonal covariance); otherwise it is
// estimated from train_size fresh rows drawn from the same law.
std::pair<DataMatrix, CovarianceSpec> gen_binary_covariates(int n, int p, const MatrixXd& omega,
                                                            RngStream& rng, RngStream& train_rng,
                                                            long train_size = 100000);

// Unit-variance i.i.d. columns; student_t variates are scaled by sqrt((dof-2)/dof).
// Moment spec is analytic: zero mean, identity covariance.
std::pair<DataMatrix, CovarianceSpec> gen_iid_covariates(int n, int p, CovariateLaw law, int dof,
                                                         RngStream& rng);

// k positions uniform without replacement, signs uniform, |beta_j| = magnitude.
GroundTruth gen_beta(int p, int k, double magnitude, RngStream& rng);

// linear: y = X beta + eps; tanh_nonlinear: y = 5 sqrt(|s|) tanh(s) + eps with
// s = X beta; null_model: y = eps. eps ~ N(0, 1).
ResponseVector gen_response(const DataMatrix& x, const GroundTruth& truth, ResponseModel model,
                            RngStream& rng);

// Runs the full pipeline for every replication r with independent streams derived
// from (seed, r): covariates, response, knockoffs per cfg.moments, statistic,
// selection at cfg.q. Fits and selections see column-centered copies of X, Xhat, y
// (centering by sample means; the generators produce raw data). threads > 1 splits
// replications across a worker pool without changing any result.
CellResult run_cell(const SimConfig& cfg, int threads = 1);

// Replications under the forced null response, keeping the per-replication
// statistic vectors for the diagnostics module. w_samples is replications x p;
// selections holds each replication's selection at cfg.q; sigma and r describe
// the knockoff model the cell used.
struct NullRunOutput {
  MatrixXd w_samples;
  std::vector<SelectionResult> selections;
  MatrixXd sigma;
  VectorXd r;
};

NullRunOutput run_null_reps(const SimConfig& cfg, int threads = 1);

}  // namespace knockoffs
