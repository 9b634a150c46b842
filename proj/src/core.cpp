#include "knockoffs/core.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

namespace knockoffs {

namespace {

bool all_finite(const MatrixXd& m) { return m.allFinite(); }

}  // namespace

DataMatrix::DataMatrix(MatrixXd values, std::vector<std::string> col_names)
    : values_(std::move(values)), col_names_(std::move(col_names)) {
  if (values_.rows() == 0 || values_.cols() == 0)
    throw_data(Errc::empty_data, "data matrix must have at least one row and one column");
  if (!all_finite(values_)) {
    for (Eigen::Index i = 0; i < values_.rows(); ++i)
      for (Eigen::Index j = 0; j < values_.cols(); ++j)
        if (!std::isfinite(values_(i, j)))
          throw_data(Errc::non_finite_entry, "non-finite entry at (" + std::to_string(i + 1) +
                                                 "," + std::to_string(j + 1) + ")");
  }
  if (!col_names_.empty() && static_cast<Eigen::Index>(col_names_.size()) != values_.cols())
    throw_data(Errc::dimension_mismatch, "column name count does not match column count");
}

std::string DataMatrix::name_of(Eigen::Index j) const {
  if (j < 0 || j >= cols()) throw_data(Errc::dimension_mismatch, "column index out of range");
  if (has_names()) return col_names_[static_cast<std::size_t>(j)];
  return "x" + std::to_string(j + 1);
}

ResponseVector::ResponseVector(VectorXd values) : values_(std::move(values)) {
  if (values_.size() == 0) throw_data(Errc::empty_data, "response must have at least one entry");
  if (!values_.allFinite())
    throw_data(Errc::non_finite_entry, "response contains a non-finite entry");
}

CovarianceSpec::CovarianceSpec(VectorXd mean_in, MatrixXd sigma_in, MomentSource source_in,
                               long train_size_in)
    : mean(std::move(mean_in)),
      sigma(std::move(sigma_in)),
      source(source_in),
      train_size(train_size_in) {
  if (mean.size() == 0) throw_data(Errc::empty_data, "covariance spec has empty mean");
  if (sigma.rows() != sigma.cols() || sigma.rows() != mean.size())
    throw_data(Errc::dimension_mismatch, "covariance/mean dimensions disagree");
  if (!mean.allFinite() || !sigma.allFinite())
    throw_data(Errc::non_finite_entry, "covariance spec contains a non-finite entry");
  double scale = sigma.cwiseAbs().maxCoeff();
  double asym = (sigma - sigma.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * std::max(scale, 1.0))
    throw_data(Errc::bad_covariance, "covariance matrix is not symmetric");
  sigma = ((sigma + sigma.transpose()) / 2.0).eval();
  Eigen::LLT<MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw_data(Errc::bad_covariance, "covariance matrix is not positive definite");
}

bool CovarianceSpec::is_diagonal() const {
  double scale = std::max(sigma.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  for (Eigen::Index j = 0; j < sigma.cols(); ++j)
    for (Eigen::Index i = 0; i < sigma.rows(); ++i)
      if (i != j && std::abs(sigma(i, j)) > 1e-14 * scale) return false;
  return true;
}

void validate_truth(const GroundTruth& truth, Eigen::Index p) {
  int prev = -1;
  for (int j : truth.h1) {
    if (j < 0 || j >= p) throw_data(Errc::dimension_mismatch, "h1 index out of range");
    if (j <= prev) throw_data(Errc::dimension_mismatch, "h1 indices must be strictly increasing");
    prev = j;
  }
  if (truth.beta) {
    if (truth.beta->size() != p)
      throw_data(Errc::dimension_mismatch, "beta length does not match feature count");
    if (!truth.beta->allFinite())
      throw_data(Errc::non_finite_entry, "beta contains a non-finite entry");
    std::size_t k = 0;
    for (Eigen::Index j = 0; j < p; ++j) {
      bool in_h1 = k < truth.h1.size() && truth.h1[k] == j;
      if (in_h1) ++k;
      if (in_h1 != ((*truth.beta)(j) != 0.0))
        throw_data(Errc::dimension_mismatch, "beta support does not equal h1");
    }
  }
}

void validate_dataset(const DataMatrix& x, const ResponseVector& y) {
  if (x.rows() != y.size())
    throw_data(Errc::dimension_mismatch, "x and y row counts differ");
}

MatrixXd matrix_sqrt_psd(const MatrixXd& a, double tol) {
  if (a.rows() != a.cols()) throw_numeric(Errc::not_psd, "matrix square root needs a square matrix");
  if (!a.allFinite()) throw_numeric(Errc::non_finite_entry, "matrix square root input not finite");
  double scale = a.cwiseAbs().maxCoeff();
  double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * std::max(scale, 1.0))
    throw_numeric(Errc::not_psd, "matrix square root input is not symmetric");

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(((a + a.transpose()) / 2.0).eval());
  if (es.info() != Eigen::Success)
    throw_numeric(Errc::not_psd, "eigendecomposition failed in matrix square root");
  VectorXd ev = es.eigenvalues();
  double opnorm = std::max(std::abs(ev(0)), std::abs(ev(ev.size() - 1)));
  if (tol < 0) tol = 1e-10 * opnorm;
  VectorXd root(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    double v = ev(i);
    if (v < -tol)
      throw_numeric(Errc::not_psd, "matrix has an eigenvalue below -tolerance: " + std::to_string(v));
    root(i) = std::sqrt(std::max(v, 0.0));
  }
  MatrixXd s = es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
  return ((s + s.transpose()) / 2.0).eval();
}

}  // namespace knockoffs
