#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "knockoffs/errors.hpp"

namespace knockoffs {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// n x p observation matrix (rows are observations, column-major storage).
// Entries are finite by construction; optional column names travel with the
// matrix through CSV loading and preprocessing.
class DataMatrix {
 public:
  explicit DataMatrix(MatrixXd values, std::vector<std::string> col_names = {});

  Eigen::Index rows() const { return values_.rows(); }
  Eigen::Index cols() const { return values_.cols(); }
  const MatrixXd& values() const { return values_; }
  const std::vector<std::string>& col_names() const { return col_names_; }
  bool has_names() const { return !col_names_.empty(); }
  // Falls back to 1-based "x<j+1>" when the matrix carries no names.
  std::string name_of(Eigen::Index j) const;

 private:
  MatrixXd values_;
  std::vector<std::string> col_names_;
};

// Length-n response with finite entries.
class ResponseVector {
 public:
  explicit ResponseVector(VectorXd values);

  Eigen::Index size() const { return values_.size(); }
  const VectorXd& values() const { return values_; }

 private:
  VectorXd values_;
};

enum class MomentSource { analytic, estimated };

// First two moments of the covariate law. sigma is symmetrized on
// construction and must be positive definite (Cholesky succeeds).
struct CovarianceSpec {
  VectorXd mean;
  MatrixXd sigma;
  MomentSource source = MomentSource::analytic;
  long train_size = 0;  // rows behind an estimated spec, 0 for analytic

  CovarianceSpec(VectorXd mean_in, MatrixXd sigma_in,
                 MomentSource source_in = MomentSource::analytic, long train_size_in = 0);

  Eigen::Index dim() const { return mean.size(); }
  bool is_diagonal() const;
};

// True signal set (0-based feature indices, strictly increasing) and the
// coefficient vector when the generating model has one. External interfaces
// (reports, CSV) present indices 1-based.
struct GroundTruth {
  std::vector<int> h1;
  std::optional<VectorXd> beta;
};

// Checks h1 indices against p, ordering, and the beta/h1 support agreement.
void validate_truth(const GroundTruth& truth, Eigen::Index p);

// Checks that x and y describe the same observations (row counts match).
void validate_dataset(const DataMatrix& x, const ResponseVector& y);

// Symmetric PSD square root via eigendecomposition. Eigenvalues in
// [-tol, 0] are clamped to zero; anything below -tol is an error.
// tol < 0 selects the default 1e-10 * ||a||_op.
MatrixXd matrix_sqrt_psd(const MatrixXd& a, double tol = -1.0);

}  // namespace knockoffs
