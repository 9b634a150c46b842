#include "knockoffs/knockoff_gen.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>

namespace knockoffs {

namespace {

// Relative floor below which a covariance is treated as numerically singular.
constexpr double kSingularRel = 1e-10;

void validate_r(const VectorXd& r, Eigen::Index p) {
  if (r.size() != p) throw_data(Errc::dimension_mismatch, "r length does not match dimension");
  if (!r.allFinite()) throw_data(Errc::non_finite_entry, "r contains a non-finite entry");
  for (Eigen::Index j = 0; j < p; ++j)
    if (r(j) <= 0.0) throw_data(Errc::bad_covariance, "r entries must be strictly positive");
}

VectorXd choose_r_raw(const CovarianceSpec& cov, RMethod method) {
  const Eigen::Index p = cov.dim();
  if (method == RMethod::diagonal_identity) {
    if (!cov.is_diagonal())
      throw_data(Errc::not_diagonal, "diagonal_identity needs a diagonal covariance");
    return cov.sigma.diagonal();
  }
  VectorXd d = cov.sigma.diagonal();
  VectorXd dinv_sqrt = d.cwiseSqrt().cwiseInverse();
  MatrixXd corr = dinv_sqrt.asDiagonal() * cov.sigma * dinv_sqrt.asDiagonal();
  corr = ((corr + corr.transpose()) / 2.0).eval();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(corr, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw_numeric(Errc::psd_violation, "eigendecomposition of the correlation matrix failed");
  double lmin = es.eigenvalues().minCoeff();
  double s = std::min(1.0, 2.0 * lmin) * (1.0 - 1e-6);
  if (s <= 0.0)
    throw_numeric(Errc::psd_violation, "correlation matrix is numerically singular; no feasible r");
  return s * d;
}

// One code path builds the noise square root for both the population and the
// sample-moment generator, so equal inputs give bit-equal factors.
MatrixXd noise_sqrt_from(const VectorXd& r, const MatrixXd& omega) {
  MatrixXd c = -(r.asDiagonal() * omega * r.asDiagonal());
  c.diagonal() += 2.0 * r;
  c = ((c + c.transpose()) / 2.0).eval();
  try {
    return matrix_sqrt_psd(c);
  } catch (const Error& e) {
    if (e.code() == Errc::not_psd)
      throw_numeric(Errc::psd_violation,
                    std::string("knockoff noise covariance is not PSD: ") + e.what());
    throw;
  }
}

}  // namespace

KnockoffModel build_knockoff_model(const CovarianceSpec& cov, const VectorXd& r, double ridge) {
  const Eigen::Index p = cov.dim();
  validate_r(r, p);
  if (ridge < 0.0) throw_config(Errc::bad_config, "ridge must be nonnegative");

  MatrixXd sigma = cov.sigma;
  if (ridge > 0.0) sigma.diagonal().array() += ridge;

  MatrixXd sigma_inv(p, p);
  MatrixXd loading(p, p);
  MatrixXd noise_sqrt(p, p);

  if (cov.is_diagonal() && ridge == 0.0) {
    VectorXd d = sigma.diagonal();
    if (d.minCoeff() < kSingularRel * d.maxCoeff())
      throw_numeric(Errc::psd_violation, "covariance is numerically singular");
    sigma_inv = d.cwiseInverse().asDiagonal();
    loading.setZero();
    // 1 - r_j / d_j is exactly zero when r_j and d_j are the same double.
    for (Eigen::Index j = 0; j < p; ++j) loading(j, j) = 1.0 - r(j) / d(j);
    VectorXd c = 2.0 * r - r.cwiseProduct(r).cwiseQuotient(d);
    double cmax = c.cwiseAbs().maxCoeff();
    noise_sqrt.setZero();
    for (Eigen::Index j = 0; j < p; ++j) {
      if (c(j) < -kSingularRel * std::max(cmax, 1.0))
        throw_numeric(Errc::psd_violation, "knockoff noise covariance is not PSD");
      noise_sqrt(j, j) = std::sqrt(std::max(c(j), 0.0));
    }
  } else {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(sigma);
    if (es.info() != Eigen::Success)
      throw_numeric(Errc::psd_violation, "eigendecomposition of the covariance failed");
    const VectorXd& ev = es.eigenvalues();
    double opnorm = std::max(std::abs(ev(0)), std::abs(ev(p - 1)));
    if (ev.minCoeff() < kSingularRel * opnorm)
      throw_numeric(Errc::psd_violation,
                    "covariance is numerically singular; pass a ridge to regularize");
    sigma_inv = es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    sigma_inv = ((sigma_inv + sigma_inv.transpose()) / 2.0).eval();
    loading = MatrixXd::Identity(p, p) - sigma_inv * r.asDiagonal();
    noise_sqrt = noise_sqrt_from(r, sigma_inv);
  }

  return KnockoffModel{cov, r, std::move(sigma_inv), std::move(loading), std::move(noise_sqrt)};
}

KnockoffModel build_knockoff_model(const CovarianceSpec& cov, RMethod method, double ridge) {
  return build_knockoff_model(cov, choose_r_raw(cov, method), ridge);
}

VectorXd choose_r(const CovarianceSpec& cov, RMethod method) {
  // Building the model runs the PSD feasibility check the contract requires.
  return build_knockoff_model(cov, method).r;
}

JointCovariance joint_covariance(const CovarianceSpec& cov, const VectorXd& r) {
  const Eigen::Index p = cov.dim();
  validate_r(r, p);
  MatrixXd off = cov.sigma;
  off.diagonal() -= r;
  MatrixXd g(2 * p, 2 * p);
  g.topLeftCorner(p, p) = cov.sigma;
  g.bottomRightCorner(p, p) = cov.sigma;
  g.topRightCorner(p, p) = off;
  g.bottomLeftCorner(p, p) = off;
  return JointCovariance{std::move(g)};
}

namespace {

MatrixXd knockoff_transform(const MatrixXd& x, const VectorXd& mean, const MatrixXd& loading,
                            const MatrixXd& noise_sqrt, RngStream& rng) {
  MatrixXd centered = x.rowwise() - mean.transpose();
  MatrixXd z = standard_normal_matrix(x.rows(), x.cols(), rng);
  MatrixXd out = centered * loading + z * noise_sqrt;
  out.rowwise() += mean.transpose();
  return out;
}

}  // namespace

DataMatrix gaussian_knockoffs(const DataMatrix& x, const KnockoffModel& model, RngStream& rng) {
  if (x.cols() != model.dim())
    throw_data(Errc::dimension_mismatch, "data and knockoff model dimensions disagree");
  MatrixXd out = knockoff_transform(x.values(), model.cov.mean, model.conditional_loading,
                                    model.noise_sqrt, rng);
  return DataMatrix(std::move(out), x.col_names());
}

DataMatrix sample_moment_knockoffs(const DataMatrix& x, const VectorXd& mean,
                                   const MatrixXd& omega_hat, const VectorXd& r, RngStream& rng) {
  const Eigen::Index p = x.cols();
  if (mean.size() != p || omega_hat.rows() != p || omega_hat.cols() != p)
    throw_data(Errc::dimension_mismatch, "mean/omega_hat dimensions disagree with the data");
  if (!mean.allFinite() || !omega_hat.allFinite())
    throw_data(Errc::non_finite_entry, "mean or omega_hat contains a non-finite entry");
  validate_r(r, p);

  MatrixXd omega = ((omega_hat + omega_hat.transpose()) / 2.0).eval();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(omega, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw_numeric(Errc::psd_violation, "eigendecomposition of omega_hat failed");
  double opnorm = es.eigenvalues().cwiseAbs().maxCoeff();
  if (es.eigenvalues().minCoeff() < -kSingularRel * std::max(opnorm, 1.0))
    throw_numeric(Errc::psd_violation, "omega_hat is not PSD; not a valid precision estimate");

  MatrixXd loading = MatrixXd::Identity(p, p) - omega * r.asDiagonal();
  MatrixXd noise_sqrt = noise_sqrt_from(r, omega);
  MatrixXd out = knockoff_transform(x.values(), mean, loading, noise_sqrt, rng);
  return DataMatrix(std::move(out), x.col_names());
}

double coupling_distance(const DataMatrix& a, const DataMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw_data(Errc::dimension_mismatch, "coupling_distance needs matrices of equal shape");
  double scale = 1.0 / std::sqrt(static_cast<double>(a.rows()));
  double best = 0.0;
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    best = std::max(best, scale * (a.values().col(j) - b.values().col(j)).norm());
  return best;
}

ExchangeabilityCheck exchangeability_check(const MatrixXd& x_aug) {
  const Eigen::Index n = x_aug.rows();
  const Eigen::Index m = x_aug.cols();
  if (m % 2 != 0 || m == 0)
    throw_data(Errc::dimension_mismatch, "augmented matrix needs an even column count");
  if (n < 3) throw_data(Errc::empty_data, "need at least 3 rows for the moment check");
  const Eigen::Index p = m / 2;

  MatrixXd xc = x_aug.rowwise() - x_aug.colwise().mean();
  MatrixXd u = xc.leftCols(p) - xc.rightCols(p);
  MatrixXd m1 = u.transpose() * xc;                                       // p x 2p sums of d
  MatrixXd m2 = u.array().square().matrix().transpose() *                 // p x 2p sums of d^2
                xc.array().square().matrix();

  ExchangeabilityCheck out{0.0, -1, -1, 0};
  const double nn = static_cast<double>(n);
  auto consider = [&](double s1, double s2, Eigen::Index j, Eigen::Index b) {
    double mean = s1 / nn;
    double var = (s2 - nn * mean * mean) / (nn - 1.0);
    ++out.comparisons;
    double t;
    if (var <= 0.0) {
      // A degenerate spread with a nonzero mean is an exact violation.
      if (std::abs(s1) <= 1e-12 * std::max(1.0, std::abs(s2))) return;
      t = std::numeric_limits<double>::infinity();
    } else {
      t = std::sqrt(nn) * mean / std::sqrt(var);
    }
    if (std::abs(t) > out.max_abs_t) {
      out.max_abs_t = std::abs(t);
      out.worst_row_feature = j;
      out.worst_partner = b;
    }
  };

  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index b = 0; b < m; ++b) {
      if (b == j || b == j + p) continue;
      consider(m1(j, b), m2(j, b), j, b);
    }
    // Diagonal contrast: second moments of column j vs its knockoff, via
    // d_i = (x_ij - x_i,j+p)(x_ij + x_i,j+p).
    VectorXd v = xc.col(j) + xc.col(j + p);
    VectorXd d = u.col(j).cwiseProduct(v);
    consider(d.sum(), d.squaredNorm(), j, -1);
  }
  return out;
}

}  // namespace knockoffs
