#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "doctest.h"
#include "knockoffs/core.hpp"
#include "knockoffs/knockoff_gen.hpp"
#include "knockoffs/rng.hpp"
#include "knockoffs/statistics.hpp"
#include "test_helpers.hpp"

using knockoffs::DataMatrix;
using knockoffs::DebiasedLassoOptions;
using knockoffs::Errc;
using knockoffs::LassoFit;
using knockoffs::LassoOptions;
using knockoffs::MatrixXd;
using knockoffs::ResponseVector;
using knockoffs::StatKind;
using knockoffs::VectorXd;
using knockoffs::WStats;
using testutil::expect_error;

namespace {

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

// Thin Q factor scaled so that z^T z = n * I.
MatrixXd orthonormal_design(int n, int m, knockoffs::RngStream& rng) {
  MatrixXd a = knockoffs::standard_normal_matrix(n, m, rng);
  Eigen::HouseholderQR<MatrixXd> qr(a);
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(n, m);
  return q * std::sqrt(static_cast<double>(n));
}

double dcor_naive(const VectorXd& a, const VectorXd& b) {
  const int n = static_cast<int>(a.size());
  MatrixXd da(n, n), db(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      da(i, j) = std::abs(a(i) - a(j));
      db(i, j) = std::abs(b(i) - b(j));
    }
  auto center = [n](MatrixXd& d) {
    VectorXd rowm = d.rowwise().mean();
    double allm = d.mean();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) d(i, j) = d(i, j) - rowm(i) - rowm(j) + allm;
  };
  center(da);
  center(db);
  double dcov2 = (da.array() * db.array()).mean();
  double va = (da.array() * da.array()).mean();
  double vb = (db.array() * db.array()).mean();
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  if (dcov2 <= 0.0) return 0.0;
  return std::min(1.0, std::sqrt(dcov2 / std::sqrt(va * vb)));
}

struct Instance {
  DataMatrix x;
  DataMatrix xhat;
  ResponseVector y;
};

Instance random_instance(int n, int p, unsigned long long seed) {
  knockoffs::RngStream rng = knockoffs::make_stream(seed, knockoffs::kStreamRep, 0);
  MatrixXd x = knockoffs::standard_normal_matrix(n, p, rng);
  MatrixXd xhat = knockoffs::standard_normal_matrix(n, p, rng);
  VectorXd y = knockoffs::standard_normal_vector(n, rng);
  return {DataMatrix(x), DataMatrix(xhat), ResponseVector(y)};
}

}  // namespace

TEST_CASE("marginal correlation: hand example, identity, scale invariance") {
  MatrixXd x(2, 1), xh(2, 1);
  x << 1.0, 0.0;
  xh << 0.0, 1.0;
  VectorXd y(2);
  y << 1.0, 0.0;
  WStats w = knockoffs::marginal_corr_stats(DataMatrix(x), DataMatrix(xh), ResponseVector(y));
  CHECK(w.w(0) == doctest::Approx(1.0));

  Instance inst = random_instance(20, 4, 3);
  WStats same = knockoffs::marginal_corr_stats(inst.x, inst.x, inst.y);
  CHECK(same.w.cwiseAbs().maxCoeff() == 0.0);

  WStats base = knockoffs::marginal_corr_stats(inst.x, inst.xhat, inst.y);
  for (double c : {-3.0, 0.5}) {
    ResponseVector yc(c * inst.y.values());
    WStats scaled = knockoffs::marginal_corr_stats(inst.x, inst.xhat, yc);
    CHECK((scaled.w - base.w).cwiseAbs().maxCoeff() < 1e-12);
  }

  expect_error(Errc::zero_response, [&] {
    knockoffs::marginal_corr_stats(inst.x, inst.xhat, ResponseVector(VectorXd::Zero(20)));
  });
}

TEST_CASE("ols difference: hand example and oracles") {
  MatrixXd x(4, 1), xh(4, 1);
  x << 1.0, 1.0, 1.0, 1.0;
  xh << 1.0, -1.0, 1.0, -1.0;
  WStats w = knockoffs::ols_diff_stats(DataMatrix(x), DataMatrix(xh),
                                       ResponseVector(x.col(0)));
  CHECK(w.w(0) == doctest::Approx(2.0).epsilon(1e-12));

  Instance inst = random_instance(50, 5, 11);
  WStats got = knockoffs::ols_diff_stats(inst.x, inst.xhat, inst.y);
  MatrixXd z(50, 10);
  z << inst.x.values(), inst.xhat.values();
  VectorXd beta =
      std::sqrt(50.0) * z.colPivHouseholderQr().solve(inst.y.values());
  for (int j = 0; j < 5; ++j)
    CHECK(got.w(j) == doctest::Approx(std::abs(beta(j)) - std::abs(beta(j + 5))).epsilon(1e-8));

  WStats zero = knockoffs::ols_diff_stats(inst.x, inst.xhat, ResponseVector(VectorXd::Zero(50)));
  CHECK(zero.w.cwiseAbs().maxCoeff() < 1e-14);

  expect_error(Errc::underdetermined, [&] {
    Instance small = random_instance(10, 5, 12);
    knockoffs::ols_diff_stats(small.x, small.xhat, small.y);
  });

  expect_error(Errc::singular_gram, [&] {
    Instance dup = random_instance(50, 5, 13);
    knockoffs::ols_diff_stats(dup.x, dup.x, dup.y);
  });
}

TEST_CASE("lasso coordinate descent: zero solution, soft threshold, ols limit") {
  knockoffs::RngStream rng = knockoffs::make_stream(21, knockoffs::kStreamRep, 0);
  MatrixXd z = knockoffs::standard_normal_matrix(50, 8, rng);
  VectorXd y = knockoffs::standard_normal_vector(50, rng);

  double lam_max = (z.transpose() * y).cwiseAbs().maxCoeff() / 50.0;
  LassoFit zero_fit = knockoffs::lasso_cd(z, y, lam_max * 1.000001);
  CHECK(zero_fit.beta.cwiseAbs().maxCoeff() == 0.0);
  CHECK(zero_fit.converged);

  MatrixXd q = orthonormal_design(50, 8, rng);
  double lam = 0.07;
  LassoFit ortho = knockoffs::lasso_cd(q, y, lam);
  VectorXd c = q.transpose() * y / 50.0;
  for (int j = 0; j < 8; ++j)
    CHECK(ortho.beta(j) == doctest::Approx(soft_threshold(c(j), lam)).epsilon(1e-10));

  LassoFit ols_fit = knockoffs::lasso_cd(z, y, 0.0);
  VectorXd ols = z.colPivHouseholderQr().solve(y);
  CHECK((ols_fit.beta - ols).cwiseAbs().maxCoeff() < 1e-8);

  expect_error(Errc::bad_config, [&] { knockoffs::lasso_cd(z, y, -0.1); });
}

TEST_CASE("lasso objective never increases and satisfies kkt at return") {
  for (int trial = 0; trial < 25; ++trial) {
    knockoffs::RngStream rng = knockoffs::make_stream(100 + trial, knockoffs::kStreamRep, 0);
    int n = (trial % 2 == 0) ? 50 : 200;
    int m = (trial % 2 == 0) ? 20 : 60;
    MatrixXd z = knockoffs::standard_normal_matrix(n, m, rng);
    VectorXd y = knockoffs::standard_normal_vector(n, rng);
    double lam = 0.02 + 0.01 * (trial % 5);
    LassoFit fit = knockoffs::lasso_cd(z, y, lam);
    CHECK(fit.converged);
    CHECK(fit.kkt_residual <= 1e-6);

    double obj_at_zero = y.squaredNorm() / (2.0 * n);
    CHECK(fit.objective <= obj_at_zero + 1e-12);
    for (std::size_t k = 1; k < fit.objective_trace.size(); ++k) {
      double prev = fit.objective_trace[k - 1];
      CHECK(fit.objective_trace[k] <= prev + 1e-10 * std::max(1.0, std::abs(prev)));
    }
  }
}

TEST_CASE("gram-form lasso matches the design-form solver") {
  knockoffs::RngStream rng = knockoffs::make_stream(77, knockoffs::kStreamRep, 0);
  MatrixXd z = knockoffs::standard_normal_matrix(60, 12, rng);
  VectorXd y = knockoffs::standard_normal_vector(60, rng);
  LassoFit direct = knockoffs::lasso_cd(z, y, 0.05);
  LassoFit gram = knockoffs::lasso_cd_gram(z.transpose() * z, z.transpose() * y,
                                           y.squaredNorm(), 60.0, 0.05, -1);
  CHECK((direct.beta - gram.beta).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(gram.objective == doctest::Approx(direct.objective).epsilon(1e-12));

  // Pinning a coordinate reproduces the solve with that column removed.
  LassoFit pinned = knockoffs::lasso_cd_gram(z.transpose() * z, z.transpose() * z.col(3),
                                             z.col(3).squaredNorm(), 60.0, 0.05, 3);
  CHECK(pinned.beta(3) == 0.0);
  MatrixXd zdrop(60, 11);
  zdrop << z.leftCols(3), z.rightCols(8);
  LassoFit dropped = knockoffs::lasso_cd(zdrop, z.col(3), 0.05);
  for (int j = 0; j < 11; ++j) {
    int full_idx = (j < 3) ? j : j + 1;
    CHECK(pinned.beta(full_idx) == doctest::Approx(dropped.beta(j)).epsilon(1e-10));
  }
}

TEST_CASE("debiased lasso: fully shrunk fits reduce to marginal regression") {
  Instance inst = random_instance(20, 3, 31);
  MatrixXd z(20, 6);
  z << inst.x.values(), inst.xhat.values();

  DebiasedLassoOptions opts;
  opts.lambda0 = 1e6;
  opts.lambda_node = VectorXd::Constant(6, 1e6);
  WStats w = knockoffs::debiased_lasso_stats(inst.x, inst.xhat, inst.y, opts);
  for (int j = 0; j < 3; ++j) {
    double mj = z.col(j).dot(inst.y.values()) / z.col(j).squaredNorm();
    double mk = z.col(j + 3).dot(inst.y.values()) / z.col(j + 3).squaredNorm();
    double want = std::sqrt(20.0) * (std::abs(mj) - std::abs(mk));
    CHECK(w.w(j) == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("debiased lasso: zero response and orthogonal debiasing") {
  Instance inst = random_instance(30, 3, 37);
  WStats zero = knockoffs::debiased_lasso_stats(inst.x, inst.xhat,
                                                ResponseVector(VectorXd::Zero(30)));
  CHECK(zero.w.cwiseAbs().maxCoeff() < 1e-14);

  // Orthogonal stacked design: debiasing exactly undoes the soft-threshold shrinkage.
  knockoffs::RngStream rng = knockoffs::make_stream(41, knockoffs::kStreamRep, 0);
  MatrixXd q = orthonormal_design(60, 8, rng);
  VectorXd y = knockoffs::standard_normal_vector(60, rng);
  DataMatrix qx(q.leftCols(4)), qh(q.rightCols(4));
  DebiasedLassoOptions opts;
  opts.lambda0 = 0.08;
  opts.lambda_node = VectorXd::Constant(8, 0.05);
  WStats w = knockoffs::debiased_lasso_stats(qx, qh, ResponseVector(y), opts);
  VectorXd ols = q.transpose() * y / 60.0;
  for (int j = 0; j < 4; ++j) {
    double want = std::sqrt(60.0) * (std::abs(ols(j)) - std::abs(ols(j + 4)));
    CHECK(w.w(j) == doctest::Approx(want).epsilon(1e-8));
  }
}

TEST_CASE("debiased lasso error paths") {
  Instance inst = random_instance(25, 3, 43);

  DebiasedLassoOptions dup_opts;
  dup_opts.lambda_node = VectorXd::Constant(6, 1e-14);
  expect_error(Errc::degenerate_score, [&] {
    knockoffs::debiased_lasso_stats(inst.x, inst.x, inst.y, dup_opts);
  });

  DebiasedLassoOptions tight;
  tight.solver.max_sweeps = 1;
  tight.solver.tol = 1e-14;
  expect_error(Errc::no_convergence, [&] {
    knockoffs::RngStream rng = knockoffs::make_stream(44, knockoffs::kStreamRep, 0);
    MatrixXd base = knockoffs::standard_normal_matrix(25, 3, rng);
    // Strongly correlated columns keep one-sweep descent far from the optimum.
    MatrixXd xx = base + 0.95 * base.col(0).replicate(1, 3);
    MatrixXd hh = base + 0.95 * base.col(1).replicate(1, 3);
    knockoffs::debiased_lasso_stats(DataMatrix(xx), DataMatrix(hh), inst.y, tight);
  });

  DebiasedLassoOptions badlen;
  badlen.lambda_node = VectorXd::Constant(5, 0.1);
  expect_error(Errc::dimension_mismatch, [&] {
    knockoffs::debiased_lasso_stats(inst.x, inst.xhat, inst.y, badlen);
  });
}

TEST_CASE("distance correlation: identity, constant column, naive oracle") {
  Instance inst = random_instance(15, 3, 53);
  WStats same = knockoffs::distance_corr_stats(inst.x, inst.x, inst.y);
  CHECK(same.w.cwiseAbs().maxCoeff() == 0.0);

  MatrixXd xc = inst.x.values();
  xc.col(1).setConstant(4.0);
  WStats w = knockoffs::distance_corr_stats(DataMatrix(xc), inst.xhat, inst.y);
  double rhs = knockoffs::distance_correlation(inst.xhat.values().col(1), inst.y.values());
  CHECK(w.w(1) == doctest::Approx(-rhs).epsilon(1e-12));

  for (int j = 0; j < 3; ++j) {
    double got = knockoffs::distance_correlation(inst.x.values().col(j), inst.y.values());
    CHECK(got == doctest::Approx(dcor_naive(inst.x.values().col(j), inst.y.values()))
                     .epsilon(1e-12));
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("flip-sign antisymmetry holds for all four statistics") {
  const int n = 30, p = 4;
  for (int trial = 0; trial < 100; ++trial) {
    Instance inst = random_instance(n, p, 600 + trial);
    int j = trial % p;
    MatrixXd xs = inst.x.values();
    MatrixXd hs = inst.xhat.values();
    xs.col(j).swap(hs.col(j));
    DataMatrix xswap(xs), hswap(hs);

    for (StatKind kind : {StatKind::marginal_corr, StatKind::ols_diff,
                          StatKind::debiased_lasso_diff, StatKind::distance_corr}) {
      WStats base = knockoffs::compute_stats(kind, inst.x, inst.xhat, inst.y);
      WStats swapped = knockoffs::compute_stats(kind, xswap, hswap, inst.y);
      CHECK(std::abs(swapped.w(j) + base.w(j)) <= 1e-10);
      if (kind == StatKind::marginal_corr || kind == StatKind::distance_corr) {
        for (int k = 0; k < p; ++k) {
          if (k == j) continue;
          CHECK(std::abs(swapped.w(k) - base.w(k)) <= 1e-12);
        }
      }
    }
  }
}

TEST_CASE("null statistics have symmetric signs coordinatewise") {
  const int n = 60, p = 100, reps = 2000;
  Eigen::VectorXi positive = Eigen::VectorXi::Zero(p);
  Eigen::VectorXi nonzero = Eigen::VectorXi::Zero(p);
  knockoffs::CovarianceSpec spec(VectorXd::Zero(p), MatrixXd::Identity(p, p));
  knockoffs::KnockoffModel model =
      knockoffs::build_knockoff_model(spec, knockoffs::RMethod::diagonal_identity);
  for (int r = 0; r < reps; ++r) {
    knockoffs::RngStream rng = knockoffs::make_stream(9000, knockoffs::kStreamRep, r);
    MatrixXd x = knockoffs::standard_normal_matrix(n, p, rng);
    DataMatrix xd(x);
    DataMatrix xhat = knockoffs::gaussian_knockoffs(xd, model, rng);
    VectorXd y = knockoffs::standard_normal_vector(n, rng);
    WStats w = knockoffs::marginal_corr_stats(xd, xhat, ResponseVector(y));
    for (int j = 0; j < p; ++j) {
      if (w.w(j) > 0.0) positive(j)++;
      if (w.w(j) != 0.0) nonzero(j)++;
    }
  }
  // Two-sided binomial test at level 0.001: |S - m/2| <= 3.29 sqrt(m/4).
  int pass = 0;
  for (int j = 0; j < p; ++j) {
    double m = nonzero(j);
    double dev = std::abs(positive(j) - m / 2.0);
    if (dev <= 3.2905 * std::sqrt(m / 4.0)) ++pass;
  }
  CHECK(pass >= 99);
}

TEST_CASE("compute_stats dispatches by kind and labels the result") {
  Instance inst = random_instance(40, 3, 71);
  for (StatKind kind : {StatKind::marginal_corr, StatKind::ols_diff,
                        StatKind::debiased_lasso_diff, StatKind::distance_corr}) {
    WStats w = knockoffs::compute_stats(kind, inst.x, inst.xhat, inst.y);
    CHECK(w.kind == kind);
    CHECK(w.w.size() == 3);
    CHECK(w.w.allFinite());
  }
  WStats dl = knockoffs::compute_stats(StatKind::debiased_lasso_diff, inst.x, inst.xhat, inst.y);
  CHECK(dl.meta.count("lambda0") == 1);
  CHECK(dl.meta.count("initial_kkt") == 1);
}
