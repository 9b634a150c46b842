#include "knockoffs/simulation.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>
#include <vector>

namespace knockoffs {

const char* covariate_law_name(CovariateLaw law) {
  switch (law) {
    case CovariateLaw::binary_threshold: return "binary_threshold";
    case CovariateLaw::gaussian: return "gaussian";
    case CovariateLaw::rademacher: return "rademacher";
    case CovariateLaw::student_t: return "student_t";
  }
  return "unknown";
}

const char* response_model_name(ResponseModel model) {
  switch (model) {
    case ResponseModel::linear: return "linear";
    case ResponseModel::tanh_nonlinear: return "tanh_nonlinear";
    case ResponseModel::null_model: return "null";
  }
  return "unknown";
}

void validate_sim_config(const SimConfig& cfg) {
  if (cfg.n < 1 || cfg.p < 1) throw_config(Errc::bad_config, "n and p must be positive");
  if (!std::isfinite(cfg.rho) || cfg.rho < 0.0 || cfg.rho >= 1.0)
    throw_config(Errc::out_of_range, "rho must lie in [0, 1)");
  if (cfg.law == CovariateLaw::student_t && cfg.dof < 3)
    throw_config(Errc::bad_dof, "student_t needs dof >= 3");
  if (!std::isfinite(cfg.q) || cfg.q <= 0.0 || cfg.q >= 1.0)
    throw_config(Errc::invalid_q, "q must lie strictly inside (0, 1)");
  if (cfg.replications < 1) throw_config(Errc::bad_config, "replications must be at least 1");
  if (cfg.k < 0) throw_config(Errc::bad_config, "k must be nonnegative");
  if (cfg.k > cfg.p) throw_config(Errc::k_too_large, "k exceeds p");
  if (cfg.k > 0 && (!std::isfinite(cfg.magnitude) || cfg.magnitude <= 0.0))
    throw_config(Errc::bad_config, "magnitude must be strictly positive");
  if (cfg.train_size < 1) throw_config(Errc::bad_config, "train_size must be positive");
  if (!std::isfinite(cfg.lambda_scale) || cfg.lambda_scale <= 0.0)
    throw_config(Errc::bad_config, "lambda_scale must be strictly positive");
}

MatrixXd gen_banded_precision(int p, double rho) {
  if (p < 1) throw_config(Errc::bad_config, "p must be positive");
  if (!std::isfinite(rho) || rho < 0.0 || rho >= 1.0)
    throw_config(Errc::out_of_range, "rho must lie in [0, 1)");
  MatrixXd omega = MatrixXd::Identity(p, p);
  for (int d = 1; d <= 5; ++d) {
    double v = std::pow(rho, d);
    if (v == 0.0) break;
    for (int i = 0; i + d < p; ++i) {
      omega(i, i + d) = v;
      omega(i + d, i) = v;
    }
  }
  Eigen::LLT<MatrixXd> llt(omega);
  if (llt.info() != Eigen::Success)
    throw_numeric(Errc::not_positive_definite, "banded precision matrix is not positive definite");
  return omega;
}

namespace {

double normal_sf_local(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

VectorXd even_cutoffs(int p) {
  VectorXd a(p);
  if (p == 1) {
    a(0) = 0.0;
    return a;
  }
  for (int j = 0; j < p; ++j) a(j) = -1.0 + 2.0 * static_cast<double>(j) / (p - 1.0);
  return a;
}

// Upper Cholesky factor U of omega; rows of Zraw U^{-T} then have covariance omega^{-1}.
MatrixXd precision_factor(const MatrixXd& omega) {
  Eigen::LLT<MatrixXd> llt(omega);
  if (llt.info() != Eigen::Success)
    throw_numeric(Errc::not_positive_definite, "precision matrix is not positive definite");
  return llt.matrixU();
}

MatrixXd draw_binary_rows(int n, const MatrixXd& factor_u, const VectorXd& alphas,
                          RngStream& rng) {
  const Eigen::Index p = alphas.size();
  MatrixXd latent = standard_normal_matrix(n, p, rng).transpose();
  factor_u.triangularView<Eigen::Upper>().solveInPlace(latent);
  MatrixXd x(n, p);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = 0; i < n; ++i) x(i, j) = latent(j, i) >= alphas(j) ? 1.0 : 0.0;
  return x;
}

MatrixXd draw_iid_rows(int n, int p, CovariateLaw law, int dof, RngStream& rng) {
  MatrixXd x(n, p);
  switch (law) {
    case CovariateLaw::gaussian:
      fill_standard_normal(x, rng);
      break;
    case CovariateLaw::rademacher:
      for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index i = 0; i < n; ++i) x(i, j) = (rng() & 1ull) ? 1.0 : -1.0;
      break;
    case CovariateLaw::student_t: {
      std::student_t_distribution<double> tdist(static_cast<double>(dof));
      const double scale = std::sqrt((dof - 2.0) / static_cast<double>(dof));
      for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index i = 0; i < n; ++i) x(i, j) = scale * tdist(rng);
      break;
    }
    case CovariateLaw::binary_threshold:
      throw_config(Errc::bad_config, "binary_threshold needs a precision matrix");
  }
  return x;
}

template <typename DrawRows>
CovarianceSpec estimate_moments(Eigen::Index p, long train_size, RngStream& rng,
                                const DrawRows& draw) {
  VectorXd sum = VectorXd::Zero(p);
  MatrixXd cross = MatrixXd::Zero(p, p);
  long remaining = train_size;
  const long chunk = 8192;
  while (remaining > 0) {
    int take = static_cast<int>(std::min(chunk, remaining));
    MatrixXd x = draw(take, rng);
    sum += x.colwise().sum().transpose();
    cross.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
    remaining -= take;
  }
  const double n = static_cast<double>(train_size);
  VectorXd mean = sum / n;
  MatrixXd second = MatrixXd(cross.selfadjointView<Eigen::Lower>()) / n;
  MatrixXd sigma = second - mean * mean.transpose();
  return CovarianceSpec(std::move(mean), std::move(sigma), MomentSource::estimated, train_size);
}

bool omega_is_diagonal(const MatrixXd& omega) {
  double dmax = omega.diagonal().cwiseAbs().maxCoeff();
  for (Eigen::Index j = 0; j < omega.cols(); ++j)
    for (Eigen::Index i = 0; i < omega.rows(); ++i)
      if (i != j && std::abs(omega(i, j)) > 1e-14 * dmax) return false;
  return true;
}

CovarianceSpec analytic_binary_moments(const MatrixXd& omega, const VectorXd& alphas) {
  const Eigen::Index p = alphas.size();
  VectorXd mean(p);
  MatrixXd sigma = MatrixXd::Zero(p, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    double mu = normal_sf_local(alphas(j) * std::sqrt(omega(j, j)));
    mean(j) = mu;
    sigma(j, j) = mu * (1.0 - mu);
  }
  return CovarianceSpec(std::move(mean), std::move(sigma));
}

}  // namespace

std::pair<DataMatrix, CovarianceSpec> gen_binary_covariates(int n, int p, const MatrixXd& omega,
                                                            RngStream& rng, RngStream& train_rng,
                                                            long train_size) {
  if (n < 1 || p < 1) throw_config(Errc::bad_config, "n and p must be positive");
  if (omega.rows() != p || omega.cols() != p)
    throw_data(Errc::dimension_mismatch, "omega must be p x p");
  if (!omega.allFinite()) throw_data(Errc::non_finite_entry, "omega has a non-finite entry");
  if (train_size < 1) throw_config(Errc::bad_config, "train_size must be positive");

  MatrixXd factor = precision_factor(omega);
  VectorXd alphas = even_cutoffs(p);
  DataMatrix x(draw_binary_rows(n, factor, alphas, rng));

  if (omega_is_diagonal(omega)) return {std::move(x), analytic_binary_moments(omega, alphas)};
  auto draw = [&](int rows, RngStream& r) { return draw_binary_rows(rows, factor, alphas, r); };
  return {std::move(x), estimate_moments(p, train_size, train_rng, draw)};
}

std::pair<DataMatrix, CovarianceSpec> gen_iid_covariates(int n, int p, CovariateLaw law, int dof,
                                                         RngStream& rng) {
  if (n < 1 || p < 1) throw_config(Errc::bad_config, "n and p must be positive");
  if (law == CovariateLaw::binary_threshold)
    throw_config(Errc::bad_config, "binary_threshold needs gen_binary_covariates");
  if (law == CovariateLaw::student_t && dof < 3)
    throw_config(Errc::bad_dof, "student_t needs dof >= 3");
  DataMatrix x(draw_iid_rows(n, p, law, dof, rng));
  return {std::move(x), CovarianceSpec(VectorXd::Zero(p), MatrixXd::Identity(p, p))};
}

GroundTruth gen_beta(int p, int k, double magnitude, RngStream& rng) {
  if (p < 1) throw_config(Errc::bad_config, "p must be positive");
  if (k < 0) throw_config(Errc::bad_config, "k must be nonnegative");
  if (k > p) throw_config(Errc::k_too_large, "k exceeds p");
  if (k > 0 && (!std::isfinite(magnitude) || magnitude <= 0.0))
    throw_config(Errc::bad_config, "magnitude must be strictly positive");

  std::vector<int> pool(static_cast<std::size_t>(p));
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, p - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  std::vector<int> h1(pool.begin(), pool.begin() + k);
  std::sort(h1.begin(), h1.end());

  VectorXd beta = VectorXd::Zero(p);
  for (int j : h1) beta(j) = (rng() & 1ull) ? magnitude : -magnitude;
  return GroundTruth{std::move(h1), std::move(beta)};
}

ResponseVector gen_response(const DataMatrix& x, const GroundTruth& truth, ResponseModel model,
                            RngStream& rng) {
  const Eigen::Index n = x.rows();
  if (model == ResponseModel::null_model) return ResponseVector(standard_normal_vector(n, rng));
  if (!truth.beta.has_value()) throw_data(Errc::missing_beta, "response model needs coefficients");
  validate_truth(truth, x.cols());

  VectorXd s = x.values() * (*truth.beta);
  VectorXd eps = standard_normal_vector(n, rng);
  if (model == ResponseModel::linear) return ResponseVector(s + eps);

  VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i)
    y(i) = 5.0 * std::sqrt(std::abs(s(i))) * std::tanh(s(i)) + eps(i);
  return ResponseVector(std::move(y));
}

namespace {

struct CellContext {
  SimConfig cfg;
  VectorXd alphas;    // binary law cutoffs
  MatrixXd factor_u;  // binary law precision factor
  KnockoffModel model;
  GroundTruth truth;  // empty h1 under the null response or k = 0
};

CellContext make_cell_context(const SimConfig& cfg) {
  validate_sim_config(cfg);

  VectorXd alphas;
  MatrixXd factor;
  std::optional<CovarianceSpec> spec;

  if (cfg.law == CovariateLaw::binary_threshold) {
    MatrixXd omega = gen_banded_precision(cfg.p, cfg.rho);
    factor = precision_factor(omega);
    alphas = even_cutoffs(cfg.p);
    if (omega_is_diagonal(omega)) {
      spec = analytic_binary_moments(omega, alphas);
    } else {
      RngStream train_rng = make_stream(cfg.seed, kStreamTrain);
      auto draw = [&](int rows, RngStream& r) { return draw_binary_rows(rows, factor, alphas, r); };
      spec = estimate_moments(cfg.p, cfg.train_size, train_rng, draw);
    }
  } else if (cfg.moments == MomentMode::train) {
    RngStream train_rng = make_stream(cfg.seed, kStreamTrain);
    auto draw = [&](int rows, RngStream& r) {
      return draw_iid_rows(rows, cfg.p, cfg.law, cfg.dof, r);
    };
    spec = estimate_moments(cfg.p, cfg.train_size, train_rng, draw);
  } else {
    spec = CovarianceSpec(VectorXd::Zero(cfg.p), MatrixXd::Identity(cfg.p, cfg.p));
  }

  RMethod method = spec->is_diagonal() ? RMethod::diagonal_identity : RMethod::equicorrelated;
  KnockoffModel model = build_knockoff_model(*spec, method);

  GroundTruth truth;
  if (cfg.response != ResponseModel::null_model && !cfg.beta_redraw) {
    RngStream beta_rng = make_stream(cfg.seed, kStreamBeta);
    truth = gen_beta(cfg.p, cfg.k, cfg.magnitude, beta_rng);
  }
  return CellContext{cfg, std::move(alphas), std::move(factor), std::move(model),
                     std::move(truth)};
}

struct RepOutput {
  RepResult result;
  SelectionResult sel;
  VectorXd w;
  double exch_t = 0.0;
};

void run_one_rep(const CellContext& ctx, int rep, bool want_w, bool do_exch, RepOutput& out) {
  const SimConfig& cfg = ctx.cfg;
  RngStream rng = make_stream(cfg.seed, kStreamRep, static_cast<std::uint64_t>(rep));

  GroundTruth local_truth;
  const GroundTruth* truth = &ctx.truth;
  if (cfg.response != ResponseModel::null_model && cfg.beta_redraw) {
    local_truth = gen_beta(cfg.p, cfg.k, cfg.magnitude, rng);
    truth = &local_truth;
  }

  DataMatrix x(cfg.law == CovariateLaw::binary_threshold
                   ? draw_binary_rows(cfg.n, ctx.factor_u, ctx.alphas, rng)
                   : draw_iid_rows(cfg.n, cfg.p, cfg.law, cfg.dof, rng));
  ResponseVector y = gen_response(x, *truth, cfg.response, rng);
  DataMatrix xhat = gaussian_knockoffs(x, ctx.model, rng);

  if (do_exch) {
    MatrixXd aug(cfg.n, 2 * cfg.p);
    aug.leftCols(cfg.p) = x.values();
    aug.rightCols(cfg.p) = xhat.values();
    out.exch_t = exchangeability_check(aug).max_abs_t;
  }

  // Fits see column-centered copies; generators produce raw data.
  DataMatrix xc(x.values().rowwise() - x.values().colwise().mean());
  DataMatrix xhc(xhat.values().rowwise() - xhat.values().colwise().mean());
  ResponseVector yc(VectorXd(y.values().array() - y.values().mean()));

  DebiasedLassoOptions dlo;
  dlo.lambda_scale = cfg.lambda_scale;
  WStats w = compute_stats(cfg.statistic, xc, xhc, yc, dlo);

  const bool has_signal = !truth->h1.empty() && cfg.response != ResponseModel::null_model;
  SelectionResult sel = has_signal ? select(w, cfg.q, truth, cfg.knockoff_plus)
                                   : select(w, cfg.q, nullptr, cfg.knockoff_plus);

  out.result.threshold = sel.threshold;
  out.result.selected_count = static_cast<int>(sel.selected.size());
  if (has_signal) {
    out.result.fdp = *sel.fdp;
    out.result.power = *sel.power;
  } else {
    out.result.fdp = sel.selected.empty() ? 0.0 : 1.0;  // every selection is false
    out.result.power = std::numeric_limits<double>::quiet_NaN();
  }
  if (want_w) out.w = w.w;
  out.sel = std::move(sel);
}

void run_reps(const CellContext& ctx, bool want_w, bool do_exch, int threads,
              std::vector<RepOutput>& outs) {
  const int reps = ctx.cfg.replications;
  outs.resize(static_cast<std::size_t>(reps));
  threads = std::max(1, std::min(threads, reps));

  if (threads == 1) {
    for (int r = 0; r < reps; ++r)
      run_one_rep(ctx, r, want_w, do_exch && r == 0, outs[static_cast<std::size_t>(r)]);
    return;
  }

  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto worker = [&]() {
    for (;;) {
      int r = next.fetch_add(1);
      if (r >= reps) return;
      try {
        run_one_rep(ctx, r, want_w, do_exch && r == 0, outs[static_cast<std::size_t>(r)]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

CellResult run_cell(const SimConfig& cfg, int threads) {
  CellContext ctx = make_cell_context(cfg);
  std::vector<RepOutput> outs;
  run_reps(ctx, false, true, threads, outs);

  CellResult res{cfg, 0.0, 0.0, {}, outs[0].exch_t};
  res.per_rep.reserve(outs.size());
  double fdp_sum = 0.0, power_sum = 0.0;
  bool any_power = false;
  for (const auto& o : outs) {
    res.per_rep.push_back(o.result);
    fdp_sum += o.result.fdp;
    if (!std::isnan(o.result.power)) {
      power_sum += o.result.power;
      any_power = true;
    }
  }
  const double reps = static_cast<double>(outs.size());
  res.mean_fdr = fdp_sum / reps;
  res.mean_power = any_power ? power_sum / reps : std::numeric_limits<double>::quiet_NaN();
  return res;
}

NullRunOutput run_null_reps(const SimConfig& cfg_in, int threads) {
  SimConfig cfg = cfg_in;
  cfg.response = ResponseModel::null_model;
  CellContext ctx = make_cell_context(cfg);
  std::vector<RepOutput> outs;
  run_reps(ctx, true, false, threads, outs);

  NullRunOutput out;
  out.w_samples.resize(cfg.replications, cfg.p);
  out.selections.reserve(outs.size());
  for (std::size_t r = 0; r < outs.size(); ++r) {
    out.w_samples.row(static_cast<Eigen::Index>(r)) = outs[r].w.transpose();
    out.selections.push_back(std::move(outs[r].sel));
  }
  out.sigma = ctx.model.cov.sigma;
  out.r = ctx.model.r;
  return out;
}

}  // namespace knockoffs
