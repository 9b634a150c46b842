#include "knockoffs/statistics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>
#include <vector>

namespace knockoffs {

const char* stat_kind_name(StatKind kind) {
  switch (kind) {
    case StatKind::marginal_corr: return "marginal_corr";
    case StatKind::ols_diff: return "ols_diff";
    case StatKind::debiased_lasso_diff: return "debiased_lasso_diff";
    case StatKind::distance_corr: return "distance_corr";
  }
  return "unknown";
}

namespace {

void check_pair(const DataMatrix& x, const DataMatrix& xhat, const ResponseVector& y) {
  if (x.rows() != xhat.rows() || x.cols() != xhat.cols())
    throw_data(Errc::dimension_mismatch, "x and xhat shapes differ");
  validate_dataset(x, y);
}

bool column_less(const Eigen::Ref<const VectorXd>& a, const Eigen::Ref<const VectorXd>& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a(i) < b(i)) return true;
    if (a(i) > b(i)) return false;
  }
  return false;
}

// Column-swapped designs must produce exactly negated statistics, including for
// path-dependent solvers. Each (x_j, xhat_j) pair is ordered canonically before
// the solve and the sign of w_j is restored afterwards, so a swapped input hits
// the identical solve and only the sign flips.
struct CanonicalStack {
  MatrixXd z;  // n x 2p
  std::vector<char> flipped;
};

CanonicalStack canonical_stack(const DataMatrix& x, const DataMatrix& xhat) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  CanonicalStack out;
  out.z.resize(n, 2 * p);
  out.flipped.resize(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) {
    bool fl = column_less(xhat.values().col(j), x.values().col(j));
    out.flipped[static_cast<std::size_t>(j)] = fl ? 1 : 0;
    if (fl) {
      out.z.col(j) = xhat.values().col(j);
      out.z.col(j + p) = x.values().col(j);
    } else {
      out.z.col(j) = x.values().col(j);
      out.z.col(j + p) = xhat.values().col(j);
    }
  }
  return out;
}

VectorXd apply_flips(const VectorXd& w_canonical, const std::vector<char>& flipped) {
  VectorXd w = w_canonical;
  for (Eigen::Index j = 0; j < w.size(); ++j)
    if (flipped[static_cast<std::size_t>(j)]) w(j) = -w(j);
  return w;
}

}  // namespace

WStats marginal_corr_stats(const DataMatrix& x, const DataMatrix& xhat, const ResponseVector& y) {
  check_pair(x, xhat, y);
  const double ynorm = y.values().norm();
  if (ynorm == 0.0) throw_data(Errc::zero_response, "response has zero norm");
  VectorXd a = (x.values().transpose() * y.values()).cwiseAbs() / ynorm;
  VectorXd b = (xhat.values().transpose() * y.values()).cwiseAbs() / ynorm;
  return WStats{a - b, StatKind::marginal_corr, {}};
}

WStats ols_diff_stats(const DataMatrix& x, const DataMatrix& xhat, const ResponseVector& y) {
  check_pair(x, xhat, y);
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (n <= 2 * p)
    throw_data(Errc::underdetermined, "ols_diff_stats needs n > 2p");

  CanonicalStack cs = canonical_stack(x, xhat);
  MatrixXd g = cs.z.transpose() * cs.z;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(g);
  if (es.info() != Eigen::Success)
    throw_numeric(Errc::singular_gram, "gram eigendecomposition failed");
  const VectorXd& ev = es.eigenvalues();
  double lmin = ev(0);
  double lmax = ev(ev.size() - 1);
  if (lmin <= 0.0 || lmax / lmin > 1e12)
    throw_numeric(Errc::singular_gram, "stacked design gram matrix is numerically singular");

  VectorXd beta = es.eigenvectors() *
                  (ev.cwiseInverse().asDiagonal() * (es.eigenvectors().transpose() *
                                                     (cs.z.transpose() * y.values())));
  beta *= std::sqrt(static_cast<double>(n));

  VectorXd w(p);
  for (Eigen::Index j = 0; j < p; ++j) w(j) = std::abs(beta(j)) - std::abs(beta(j + p));
  return WStats{apply_flips(w, cs.flipped), StatKind::ols_diff, {}};
}

LassoFit lasso_cd_gram(const MatrixXd& g, const VectorXd& c, double yty, double n_rows,
                       double lambda, Eigen::Index skip, const LassoOptions& opts) {
  const Eigen::Index m = g.cols();
  if (g.rows() != m) throw_data(Errc::dimension_mismatch, "gram matrix must be square");
  if (c.size() != m) throw_data(Errc::dimension_mismatch, "c length differs from gram dimension");
  if (n_rows <= 0.0) throw_data(Errc::empty_data, "row count must be positive");
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw_config(Errc::bad_config, "lambda must be a nonnegative finite value");

  const double n = n_rows;
  VectorXd b = VectorXd::Zero(m);
  VectorXd rho = c / n;  // (c - G b) / n, maintained incrementally
  double rss = yty;
  double l1 = 0.0;

  LassoFit fit;
  fit.lambda = lambda;

  std::vector<Eigen::Index> active;
  active.reserve(static_cast<std::size_t>(m));

  auto update_one = [&](Eigen::Index j, double& max_delta) {
    const double gjj = g(j, j);
    if (gjj <= 0.0) return;
    const double old = b(j);
    const double u = rho(j) + (gjj / n) * old;
    double shrunk = std::abs(u) - lambda;
    double neu = shrunk > 0.0 ? (u > 0.0 ? shrunk : -shrunk) * (n / gjj) : 0.0;
    const double delta = neu - old;
    if (delta != 0.0) {
      rss += delta * (delta * gjj - 2.0 * n * rho(j));
      rho.noalias() -= g.col(j) * (delta / n);
      l1 += std::abs(neu) - std::abs(old);
      b(j) = neu;
      max_delta = std::max(max_delta, std::abs(delta));
    }
  };

  auto record_objective = [&]() { fit.objective_trace.push_back(rss / (2.0 * n) + lambda * l1); };

  double last_kkt = std::numeric_limits<double>::infinity();
  int stalled = 0;
  VectorXd rho_exact;
  double kkt = std::numeric_limits<double>::infinity();

  while (fit.sweeps < opts.max_sweeps) {
    double md = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == skip) continue;
      update_one(j, md);
    }
    ++fit.sweeps;
    record_objective();

    if (md >= opts.tol) {
      active.clear();
      for (Eigen::Index j = 0; j < m; ++j)
        if (j != skip && b(j) != 0.0) active.push_back(j);
      while (fit.sweeps < opts.max_sweeps) {
        double mdi = 0.0;
        for (Eigen::Index j : active) update_one(j, mdi);
        ++fit.sweeps;
        record_objective();
        if (mdi < opts.tol) break;
      }
      continue;
    }

    // Coefficients settled; verify the subgradient conditions on exact residuals.
    rho_exact = (c - g * b) / n;
    kkt = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == skip || g(j, j) <= 0.0) continue;
      if (b(j) != 0.0)
        kkt = std::max(kkt, std::abs(rho_exact(j) - (b(j) > 0.0 ? lambda : -lambda)));
      else
        kkt = std::max(kkt, std::max(0.0, std::abs(rho_exact(j)) - lambda));
    }
    rho = rho_exact;  // kill incremental drift before any further sweeps
    if (kkt <= opts.kkt_tol) {
      fit.converged = true;
      break;
    }
    if (kkt >= 0.99 * last_kkt) {
      if (++stalled >= 3) break;  // no progress left at this precision
    } else {
      stalled = 0;
    }
    last_kkt = kkt;
  }

  if (rho_exact.size() == 0) {
    rho_exact = (c - g * b) / n;
    kkt = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == skip || g(j, j) <= 0.0) continue;
      if (b(j) != 0.0)
        kkt = std::max(kkt, std::abs(rho_exact(j) - (b(j) > 0.0 ? lambda : -lambda)));
      else
        kkt = std::max(kkt, std::max(0.0, std::abs(rho_exact(j)) - lambda));
    }
  }

  double rss_exact = yty - b.dot(c) - n * b.dot(rho_exact);
  fit.beta = std::move(b);
  fit.kkt_residual = kkt;
  fit.objective = rss_exact / (2.0 * n) + lambda * fit.beta.lpNorm<1>();
  return fit;
}

LassoFit lasso_cd(const MatrixXd& z, const VectorXd& y, double lambda, const LassoOptions& opts) {
  if (z.rows() != y.size())
    throw_data(Errc::dimension_mismatch, "design and response row counts differ");
  if (z.rows() == 0 || z.cols() == 0) throw_data(Errc::empty_data, "empty design matrix");
  if (!z.allFinite() || !y.allFinite())
    throw_data(Errc::non_finite_entry, "design or response contains a non-finite entry");
  MatrixXd g = z.transpose() * z;
  VectorXd c = z.transpose() * y;
  return lasso_cd_gram(g, c, y.squaredNorm(), static_cast<double>(z.rows()), lambda, -1, opts);
}

WStats debiased_lasso_stats(const DataMatrix& x, const DataMatrix& xhat, const ResponseVector& y,
                            const DebiasedLassoOptions& opts) {
  check_pair(x, xhat, y);
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  const Eigen::Index m = 2 * p;
  const double nn = static_cast<double>(n);

  if (opts.lambda_node.size() != 0 && opts.lambda_node.size() != m)
    throw_data(Errc::dimension_mismatch, "lambda_node must have one entry per stacked column");

  CanonicalStack cs = canonical_stack(x, xhat);
  VectorXd lam_node(m);
  const double rate = std::sqrt(std::log(2.0 * static_cast<double>(p)) / nn);

  MatrixXd g = cs.z.transpose() * cs.z;
  VectorXd c = cs.z.transpose() * y.values();
  const double yty = y.values().squaredNorm();

  if (opts.lambda_node.size() != 0) {
    // A caller-specified penalty follows its column when the pair is reordered.
    for (Eigen::Index j = 0; j < p; ++j) {
      bool fl = cs.flipped[static_cast<std::size_t>(j)] != 0;
      lam_node(j) = fl ? opts.lambda_node(j + p) : opts.lambda_node(j);
      lam_node(j + p) = fl ? opts.lambda_node(j) : opts.lambda_node(j + p);
    }
  } else {
    VectorXd mean = cs.z.colwise().mean();
    for (Eigen::Index j = 0; j < m; ++j) {
      double var = g(j, j) / nn - mean(j) * mean(j);
      lam_node(j) = std::sqrt(std::max(var, 0.0)) * rate;
    }
  }

  const double lambda0 = opts.lambda0 >= 0.0 ? opts.lambda0 : opts.lambda_scale * rate;

  LassoFit fit0 = lasso_cd_gram(g, c, yty, nn, lambda0, -1, opts.solver);
  if (!fit0.converged)
    throw_numeric(Errc::no_convergence, "initial lasso did not converge");

  VectorXd ze = c - g * fit0.beta;  // Z^T residual of the initial fit
  VectorXd bdl(m);

  std::atomic<long> node_sweeps_max{0};
  std::mutex err_mutex;
  std::string first_error;
  Errc first_code = Errc::no_convergence;
  double node_kkt_max = 0.0;
  std::mutex kkt_mutex;

  auto worker = [&](Eigen::Index lo, Eigen::Index hi) {
    double local_kkt = 0.0;
    try {
      for (Eigen::Index j = lo; j < hi; ++j) {
        LassoFit nf = lasso_cd_gram(g, g.col(j), g(j, j), nn, lam_node(j), j, opts.solver);
        if (!nf.converged)
          throw_numeric(Errc::no_convergence, "nodewise lasso did not converge at column " +
                                                  std::to_string(j + 1));
        double denom = g(j, j) - nf.beta.dot(g.col(j));
        if (!(std::abs(denom) > 1e-10 * g(j, j)))
          throw_numeric(Errc::degenerate_score,
                        "degenerate score vector at column " + std::to_string(j + 1));
        double num = ze(j) - nf.beta.dot(ze);
        bdl(j) = fit0.beta(j) + num / denom;
        long prev = node_sweeps_max.load();
        while (nf.sweeps > prev && !node_sweeps_max.compare_exchange_weak(prev, nf.sweeps)) {
        }
        local_kkt = std::max(local_kkt, nf.kkt_residual);
      }
    } catch (const Error& e) {
      std::lock_guard<std::mutex> lock(err_mutex);
      if (first_error.empty()) {
        first_error = e.what();
        first_code = e.code();
      }
      return;
    }
    std::lock_guard<std::mutex> lock(kkt_mutex);
    node_kkt_max = std::max(node_kkt_max, local_kkt);
  };

  int threads = std::max(1, opts.threads);
  if (threads == 1 || m < 4) {
    worker(0, m);
  } else {
    threads = std::min<int>(threads, static_cast<int>(m));
    std::vector<std::thread> pool;
    Eigen::Index chunk = (m + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      Eigen::Index lo = t * chunk;
      Eigen::Index hi = std::min<Eigen::Index>(m, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(worker, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  if (!first_error.empty()) throw_numeric(first_code, first_error);

  VectorXd w(p);
  const double root_n = std::sqrt(nn);
  for (Eigen::Index j = 0; j < p; ++j)
    w(j) = root_n * (std::abs(bdl(j)) - std::abs(bdl(j + p)));

  WStats out{apply_flips(w, cs.flipped), StatKind::debiased_lasso_diff, {}};
  out.meta["lambda0"] = lambda0;
  out.meta["initial_sweeps"] = static_cast<double>(fit0.sweeps);
  out.meta["initial_kkt"] = fit0.kkt_residual;
  out.meta["nodewise_max_sweeps"] = static_cast<double>(node_sweeps_max.load());
  out.meta["nodewise_max_kkt"] = node_kkt_max;
  return out;
}

namespace {

// Fills buf with the double-centered pairwise distance matrix of v and returns
// the mean of its squared entries (the distance variance V-statistic).
double center_distances(const VectorXd& v, MatrixXd& buf) {
  const Eigen::Index n = v.size();
  buf.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    buf(k, k) = 0.0;
    for (Eigen::Index i = k + 1; i < n; ++i) {
      double d = std::abs(v(i) - v(k));
      buf(i, k) = d;
      buf(k, i) = d;
    }
  }
  VectorXd row_mean = buf.rowwise().mean();
  double grand = row_mean.mean();
  double ss = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double e = buf(i, k) - row_mean(i) - row_mean(k) + grand;
      buf(i, k) = e;
      ss += e * e;
    }
  }
  return ss / (static_cast<double>(n) * static_cast<double>(n));
}

double dcor_from_centered(const MatrixXd& a, double dvar_a, const MatrixXd& b, double dvar_b) {
  if (dvar_a <= 0.0 || dvar_b <= 0.0) return 0.0;
  const Eigen::Index n = a.rows();
  double dcov2 = (a.array() * b.array()).sum() / (static_cast<double>(n) * static_cast<double>(n));
  if (dcov2 <= 0.0) return 0.0;
  double r2 = dcov2 / std::sqrt(dvar_a * dvar_b);
  return std::min(1.0, std::sqrt(r2));
}

}  // namespace

double distance_correlation(const VectorXd& a, const VectorXd& b) {
  if (a.size() != b.size()) throw_data(Errc::dimension_mismatch, "samples differ in length");
  if (a.size() < 2) throw_data(Errc::empty_data, "need at least 2 observations");
  if (!a.allFinite() || !b.allFinite())
    throw_data(Errc::non_finite_entry, "sample contains a non-finite entry");
  MatrixXd am, bm;
  double va = center_distances(a, am);
  double vb = center_distances(b, bm);
  return dcor_from_centered(am, va, bm, vb);
}

WStats distance_corr_stats(const DataMatrix& x, const DataMatrix& xhat, const ResponseVector& y) {
  check_pair(x, xhat, y);
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (n < 2) throw_data(Errc::empty_data, "need at least 2 observations");

  MatrixXd bm;
  double vy = center_distances(y.values(), bm);

  MatrixXd am;
  VectorXd w(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    double va = center_distances(x.values().col(j), am);
    double d1 = dcor_from_centered(am, va, bm, vy);
    double vh = center_distances(xhat.values().col(j), am);
    double d2 = dcor_from_centered(am, vh, bm, vy);
    w(j) = d1 - d2;
  }
  return WStats{std::move(w), StatKind::distance_corr, {}};
}

WStats compute_stats(StatKind kind, const DataMatrix& x, const DataMatrix& xhat,
                     const ResponseVector& y, const DebiasedLassoOptions& dl_opts) {
  switch (kind) {
    case StatKind::marginal_corr: return marginal_corr_stats(x, xhat, y);
    case StatKind::ols_diff: return ols_diff_stats(x, xhat, y);
    case StatKind::debiased_lasso_diff: return debiased_lasso_stats(x, xhat, y, dl_opts);
    case StatKind::distance_corr: return distance_corr_stats(x, xhat, y);
  }
  throw_config(Errc::bad_config, "unknown statistic kind");
}

}  // namespace knockoffs
