#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "doctest.h"
#include "knockoffs/core.hpp"
#include "knockoffs/knockoff_gen.hpp"
#include "knockoffs/rng.hpp"
#include "knockoffs/simulation.hpp"
#include "test_helpers.hpp"

using knockoffs::CovarianceSpec;
using knockoffs::DataMatrix;
using knockoffs::Errc;
using knockoffs::KnockoffModel;
using knockoffs::MatrixXd;
using knockoffs::RMethod;
using knockoffs::VectorXd;
using testutil::expect_error;

namespace {

MatrixXd banded_sigma(int p, double rho) {
  MatrixXd omega = knockoffs::gen_banded_precision(p, rho);
  return omega.llt().solve(MatrixXd::Identity(p, p));
}

MatrixXd sample_cov(const MatrixXd& m) {
  Eigen::RowVectorXd mean = m.colwise().mean();
  MatrixXd c = m.rowwise() - mean;
  return (c.transpose() * c) / static_cast<double>(m.rows());
}

}  // namespace

TEST_CASE("choose_r diagonal_identity returns the variances") {
  CovarianceSpec eye(VectorXd::Zero(3), MatrixXd::Identity(3, 3));
  VectorXd r = knockoffs::choose_r(eye, RMethod::diagonal_identity);
  CHECK((r - VectorXd::Ones(3)).cwiseAbs().maxCoeff() < 1e-15);

  MatrixXd d(2, 2);
  d << 4.0, 0.0, 0.0, 9.0;
  CovarianceSpec diag(VectorXd::Zero(2), d);
  VectorXd rd = knockoffs::choose_r(diag, RMethod::diagonal_identity);
  CHECK(rd(0) == doctest::Approx(4.0));
  CHECK(rd(1) == doctest::Approx(9.0));

  MatrixXd off(2, 2);
  off << 1.0, 0.3, 0.3, 1.0;
  CovarianceSpec corr(VectorXd::Zero(2), off);
  expect_error(Errc::not_diagonal,
               [&] { knockoffs::choose_r(corr, RMethod::diagonal_identity); });
}

TEST_CASE("choose_r equicorrelated uses the correlation spectrum") {
  MatrixXd s = MatrixXd::Constant(3, 3, 0.5);
  s.diagonal().setOnes();
  CovarianceSpec spec(VectorXd::Zero(3), s);
  VectorXd r = knockoffs::choose_r(spec, RMethod::equicorrelated);
  // lambda_min of the correlation matrix is 0.5, so s_factor = min(1, 1)*(1 - 1e-6).
  for (int j = 0; j < 3; ++j) CHECK(r(j) == doctest::Approx(1.0 - 1e-6).epsilon(1e-12));

  KnockoffModel model = knockoffs::build_knockoff_model(spec, RMethod::equicorrelated);
  MatrixXd dr = r.asDiagonal();
  MatrixXd noise_cov = 2.0 * dr - dr * s.llt().solve(MatrixXd::Identity(3, 3)) * dr;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(noise_cov);
  CHECK(es.eigenvalues()(0) >= -1e-10);
  CHECK((model.noise_sqrt * model.noise_sqrt - noise_cov).norm() <= 1e-8 * noise_cov.norm());
}

TEST_CASE("model invariants hold on random covariances") {
  knockoffs::RngStream rng = knockoffs::make_stream(11, knockoffs::kStreamRep, 0);
  for (int trial = 0; trial < 20; ++trial) {
    MatrixXd m = knockoffs::standard_normal_matrix(8, 8, rng);
    MatrixXd s = m * m.transpose() / 8.0 + 0.5 * MatrixXd::Identity(8, 8);
    CovarianceSpec spec(VectorXd::Zero(8), s);
    KnockoffModel model = knockoffs::build_knockoff_model(spec, RMethod::equicorrelated);
    MatrixXd dr = model.r.asDiagonal();
    MatrixXd noise_cov = 2.0 * dr - dr * model.sigma_inv * dr;
    CHECK((model.noise_sqrt * model.noise_sqrt - noise_cov).norm() <= 1e-8 * noise_cov.norm());
    MatrixXd loading_expected = MatrixXd::Identity(8, 8) - model.sigma_inv * dr;
    CHECK((model.conditional_loading - loading_expected).norm() < 1e-10);
  }
}

TEST_CASE("joint covariance has the exact block structure and swap invariance") {
  MatrixXd s = banded_sigma(6, 0.3);
  CovarianceSpec spec(VectorXd::Zero(6), s);
  KnockoffModel model = knockoffs::build_knockoff_model(spec, RMethod::equicorrelated);
  knockoffs::JointCovariance joint = knockoffs::joint_covariance(spec, model.r);
  const MatrixXd& s2p = joint.sigma2p;
  REQUIRE(s2p.rows() == 12);

  // Diagonal blocks are bit-identical copies of sigma.
  CHECK((s2p.topLeftCorner(6, 6).array() == spec.sigma.array()).all());
  CHECK((s2p.bottomRightCorner(6, 6).array() == spec.sigma.array()).all());
  MatrixXd off = spec.sigma;
  off.diagonal() -= model.r;
  CHECK((s2p.topRightCorner(6, 6).array() == off.array()).all());

  // Swapping any subset of (j, j+p) pairs is a matrix identity.
  std::vector<int> perm = {6, 1, 8, 3, 4, 11, 0, 7, 2, 9, 10, 5};  // swap j in {0, 2, 5}
  MatrixXd swapped(12, 12);
  for (int a = 0; a < 12; ++a)
    for (int b = 0; b < 12; ++b) swapped(a, b) = s2p(perm[a], perm[b]);
  CHECK((swapped.array() == s2p.array()).all());
}

TEST_CASE("diagonal covariance yields knockoffs independent of x") {
  MatrixXd d(3, 3);
  d.setZero();
  d.diagonal() << 1.0, 4.0, 0.25;
  CovarianceSpec spec(VectorXd::Zero(3), d);
  KnockoffModel model = knockoffs::build_knockoff_model(spec, RMethod::diagonal_identity);
  CHECK(model.conditional_loading.cwiseAbs().maxCoeff() == 0.0);

  knockoffs::RngStream rng_a = knockoffs::make_stream(5, knockoffs::kStreamRep, 1);
  knockoffs::RngStream rng_b = knockoffs::make_stream(5, knockoffs::kStreamRep, 1);
  DataMatrix xa(MatrixXd::Ones(10, 3));
  DataMatrix xb(MatrixXd::Constant(10, 3, -7.0));
  MatrixXd ka = knockoffs::gaussian_knockoffs(xa, model, rng_a).values();
  MatrixXd kb = knockoffs::gaussian_knockoffs(xb, model, rng_b).values();
  CHECK((ka.array() == kb.array()).all());
}

TEST_CASE("knockoff column means match the conditional mean") {
  MatrixXd s = banded_sigma(5, 0.3);
  CovarianceSpec spec(VectorXd::Zero(5), s);
  KnockoffModel model = knockoffs::build_knockoff_model(spec, RMethod::equicorrelated);

  const int n = 100000;
  Eigen::RowVectorXd x_row(5);
  x_row << 1.0, -0.5, 0.25, 2.0, -1.0;
  MatrixXd x = x_row.replicate(n, 1);
  knockoffs::RngStream rng = knockoffs::make_stream(31, knockoffs::kStreamRep, 0);
  MatrixXd xhat = knockoffs::gaussian_knockoffs(DataMatrix(x), model, rng).values();

  Eigen::RowVectorXd want = x_row * model.conditional_loading;
  MatrixXd noise_cov = model.noise_sqrt * model.noise_sqrt;
  for (int j = 0; j < 5; ++j) {
    double se = std::sqrt(noise_cov(j, j) / n);
    CHECK(std::abs(xhat.col(j).mean() - want(j)) <= 4.0 * se);
  }
}

TEST_CASE("pooled sample covariance of (x, xhat) matches the joint covariance") {
  MatrixXd s = banded_sigma(8, 0.3);
  CovarianceSpec spec(VectorXd::Zero(8), s);
  KnockoffModel model = knockoffs::build_knockoff_model(spec, RMethod::equicorrelated);
  knockoffs::JointCovariance joint = knockoffs::joint_covariance(spec, model.r);

  const int n = 100000;
  knockoffs::RngStream rng = knockoffs::make_stream(42, knockoffs::kStreamRep, 2);
  MatrixXd z = knockoffs::standard_normal_matrix(n, 8, rng);
  MatrixXd sqrt_s = knockoffs::matrix_sqrt_psd(s);
  MatrixXd x = z * sqrt_s;
  MatrixXd xhat = knockoffs::gaussian_knockoffs(DataMatrix(x), model, rng).values();

  MatrixXd aug(n, 16);
  aug << x, xhat;
  MatrixXd emp = sample_cov(aug);
  for (int a = 0; a < 16; ++a)
    for (int b = 0; b < 16; ++b) {
      double truth = joint.sigma2p(a, b);
      double se = std::sqrt((joint.sigma2p(a, a) * joint.sigma2p(b, b) + truth * truth) / n);
      CHECK(std::abs(emp(a, b) - truth) <= 4.0 * se);
    }
}

TEST_CASE("sample-moment knockoffs with exact precision reproduce gaussian knockoffs") {
  MatrixXd s = banded_sigma(6, 0.3);
  CovarianceSpec spec(VectorXd::Zero(6), s);
  KnockoffModel model = knockoffs::build_knockoff_model(spec, RMethod::equicorrelated);

  knockoffs::RngStream rng_a = knockoffs::make_stream(77, knockoffs::kStreamRep, 3);
  knockoffs::RngStream rng_b = knockoffs::make_stream(77, knockoffs::kStreamRep, 3);
  MatrixXd x = knockoffs::standard_normal_matrix(50, 6, rng_a) * knockoffs::matrix_sqrt_psd(s);
  knockoffs::RngStream rng_c = rng_a;
  MatrixXd a = knockoffs::gaussian_knockoffs(DataMatrix(x), model, rng_a).values();
  MatrixXd b = knockoffs::sample_moment_knockoffs(DataMatrix(x), VectorXd::Zero(6),
                                                  model.sigma_inv, model.r, rng_c)
                   .values();
  CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);
  (void)rng_b;

  expect_error(Errc::psd_violation, [&] {
    knockoffs::RngStream rng = knockoffs::make_stream(77, knockoffs::kStreamRep, 4);
    knockoffs::sample_moment_knockoffs(DataMatrix(x), VectorXd::Zero(6),
                                       -MatrixXd::Identity(6, 6), model.r, rng);
  });
}

TEST_CASE("coupling distance definition and oracle") {
  MatrixXd a = MatrixXd::Random(10, 3);
  CHECK(knockoffs::coupling_distance(DataMatrix(a), DataMatrix(a)) == doctest::Approx(0.0));

  MatrixXd b = a;
  b.col(0).array() += 2.5;
  CHECK(knockoffs::coupling_distance(DataMatrix(a), DataMatrix(b)) == doctest::Approx(2.5));

  MatrixXd c = MatrixXd::Random(10, 3);
  double want = 0.0;
  for (int j = 0; j < 3; ++j) {
    double ss = 0.0;
    for (int i = 0; i < 10; ++i) ss += (a(i, j) - c(i, j)) * (a(i, j) - c(i, j));
    want = std::max(want, std::sqrt(ss / 10.0));
  }
  CHECK(knockoffs::coupling_distance(DataMatrix(a), DataMatrix(c)) ==
        doctest::Approx(want).epsilon(1e-14));

  expect_error(Errc::dimension_mismatch, [&] {
    knockoffs::coupling_distance(DataMatrix(a), DataMatrix(MatrixXd::Random(9, 3)));
  });
}

TEST_CASE("coupling distance shrinks as the training size grows") {
  MatrixXd s = banded_sigma(5, 0.3);
  CovarianceSpec spec(VectorXd::Zero(5), s);
  KnockoffModel model = knockoffs::build_knockoff_model(spec, RMethod::equicorrelated);
  MatrixXd sqrt_s = knockoffs::matrix_sqrt_psd(s);

  knockoffs::RngStream xrng = knockoffs::make_stream(13, knockoffs::kStreamRep, 5);
  MatrixXd x = knockoffs::standard_normal_matrix(200, 5, xrng) * sqrt_s;

  std::vector<double> dist;
  for (long m : {1000L, 10000L, 100000L}) {
    knockoffs::RngStream train = knockoffs::make_stream(13, knockoffs::kStreamTrain, m);
    MatrixXd tr = knockoffs::standard_normal_matrix(m, 5, train) * sqrt_s;
    MatrixXd omega_hat = sample_cov(tr).llt().solve(MatrixXd::Identity(5, 5));
    knockoffs::RngStream za = knockoffs::make_stream(13, knockoffs::kStreamRep, 6);
    knockoffs::RngStream zb = knockoffs::make_stream(13, knockoffs::kStreamRep, 6);
    DataMatrix pop = knockoffs::gaussian_knockoffs(DataMatrix(x), model, za);
    DataMatrix est = knockoffs::sample_moment_knockoffs(DataMatrix(x), VectorXd::Zero(5),
                                                        omega_hat, model.r, zb);
    dist.push_back(knockoffs::coupling_distance(pop, est));
  }
  CHECK(dist[0] > dist[1]);
  CHECK(dist[1] > dist[2]);
}

TEST_CASE("coupling bound holds on at least 95 percent of random trials") {
  const int trials = 200;
  const int n = 60, p = 6;
  // A well-conditioned covariance with r pulled inside the PSD boundary keeps the
  // estimated noise covariance positive definite, which the bound presupposes.
  MatrixXd s = banded_sigma(p, 0.3);
  CovarianceSpec spec(VectorXd::Zero(p), s);
  VectorXd r = knockoffs::choose_r(spec, RMethod::equicorrelated) * 0.8;
  KnockoffModel model = knockoffs::build_knockoff_model(spec, r);
  MatrixXd sqrt_s = knockoffs::matrix_sqrt_psd(s);

  int ok = 0;
  for (int trial = 0; trial < trials; ++trial) {
    knockoffs::RngStream rng = knockoffs::make_stream(1000 + trial, knockoffs::kStreamRep, 0);
    MatrixXd x = knockoffs::standard_normal_matrix(n, p, rng) * sqrt_s;
    MatrixXd tr = knockoffs::standard_normal_matrix(2000, p, rng) * sqrt_s;
    MatrixXd omega_hat = sample_cov(tr).llt().solve(MatrixXd::Identity(p, p));

    MatrixXd dr = model.r.asDiagonal();
    MatrixXd sz = 2.0 * dr - dr * model.sigma_inv * dr;
    MatrixXd sz_hat = 2.0 * dr - dr * omega_hat * dr;
    Eigen::SelfAdjointEigenSolver<MatrixXd> e1(sz), e2(sz_hat);
    double c1 = std::min(e1.eigenvalues()(0), 1.0 / e1.eigenvalues()(p - 1));
    double c2 = std::min(e2.eigenvalues()(0), 1.0 / e2.eigenvalues()(p - 1));
    if (c1 <= 0.0 || c2 <= 0.0) continue;

    knockoffs::RngStream za = knockoffs::make_stream(2000 + trial, knockoffs::kStreamRep, 1);
    knockoffs::RngStream zb = knockoffs::make_stream(2000 + trial, knockoffs::kStreamRep, 1);
    DataMatrix pop = knockoffs::gaussian_knockoffs(DataMatrix(x), model, za);
    DataMatrix est =
        knockoffs::sample_moment_knockoffs(DataMatrix(x), VectorXd::Zero(p), omega_hat,
                                           model.r, zb);
    double lhs = knockoffs::coupling_distance(pop, est);

    MatrixXd delta = omega_hat - model.sigma_inv;
    MatrixXd xd = x * delta;
    double design_term = 0.0;
    for (int j = 0; j < p; ++j)
      design_term = std::max(design_term, xd.col(j).norm() / std::sqrt(double(n)));
    Eigen::SelfAdjointEigenSolver<MatrixXd> ed(delta);
    double opnorm = std::max(std::abs(ed.eigenvalues()(0)), std::abs(ed.eigenvalues()(p - 1)));
    double rmax = model.r.maxCoeff();
    double cpow = std::max(std::pow(c1, -1.5), std::pow(c2, -1.5));
    double rhs = rmax * design_term + 6.0 * cpow * rmax * rmax * opnorm;
    if (lhs <= rhs) ++ok;
  }
  CHECK(ok >= 190);
}

TEST_CASE("exchangeability check separates matched and broken augmented designs") {
  MatrixXd s = banded_sigma(4, 0.3);
  CovarianceSpec spec(VectorXd::Zero(4), s);
  KnockoffModel model = knockoffs::build_knockoff_model(spec, RMethod::equicorrelated);
  knockoffs::RngStream rng = knockoffs::make_stream(21, knockoffs::kStreamRep, 0);
  MatrixXd x = knockoffs::standard_normal_matrix(100000, 4, rng) * knockoffs::matrix_sqrt_psd(s);
  MatrixXd xhat = knockoffs::gaussian_knockoffs(DataMatrix(x), model, rng).values();

  MatrixXd aug(x.rows(), 8);
  aug << x, xhat;
  knockoffs::ExchangeabilityCheck good = knockoffs::exchangeability_check(aug);
  CHECK(good.comparisons > 0);
  CHECK(good.max_abs_t < 5.0);

  MatrixXd broken(x.rows(), 8);
  broken << x, (2.0 * x);
  knockoffs::ExchangeabilityCheck bad = knockoffs::exchangeability_check(broken);
  CHECK(bad.max_abs_t > 20.0);
}
