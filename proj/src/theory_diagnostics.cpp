#include "knockoffs/theory_diagnostics.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace knockoffs {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double normal_sf(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

double normal_pdf(double x) {
  static const double inv_sqrt_2pi = 0.3989422804014326779;
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

void validate_sigma2(const Eigen::Matrix2d& s) {
  if (!s.allFinite()) throw_data(Errc::bad_covariance, "sigma2 has a non-finite entry");
  double scale = std::max({std::abs(s(0, 0)), std::abs(s(1, 1)), 1.0});
  if (std::abs(s(0, 1) - s(1, 0)) > 1e-10 * scale)
    throw_data(Errc::bad_covariance, "sigma2 is not symmetric");
  if (s(0, 0) <= 0.0 || s(1, 1) <= 0.0)
    throw_data(Errc::bad_covariance, "sigma2 needs strictly positive diagonal entries");
  double off = 0.5 * (s(0, 1) + s(1, 0));
  if (s(0, 0) * s(1, 1) - off * off < -1e-12 * s(0, 0) * s(1, 1))
    throw_data(Errc::bad_covariance, "sigma2 is not positive semidefinite");
}

template <typename F>
double simpson_segment(const F& f, double a, double fa, double m, double fm, double b, double fb) {
  (void)m;
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

template <typename F>
double adaptive_simpson_rec(const F& f, double a, double fa, double b, double fb, double m,
                            double fm, double whole, double tol, int depth) {
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = simpson_segment(f, a, fa, lm, flm, m, fm);
  double right = simpson_segment(f, m, fm, rm, frm, b, fb);
  double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return adaptive_simpson_rec(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_rec(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1);
}

template <typename F>
double adaptive_simpson(const F& f, double a, double b, double tol) {
  double fa = f(a), fb = f(b), m = 0.5 * (a + b), fm = f(m);
  double whole = simpson_segment(f, a, fa, m, fm, b, fb);
  return adaptive_simpson_rec(f, a, fa, b, fb, m, fm, whole, tol, 40);
}

TailEstimate tail_monte_carlo(const BivariateTail& bt, double t) {
  const Eigen::Matrix2d& s = bt.sigma2;
  double l11 = std::sqrt(s(0, 0));
  double off = 0.5 * (s(0, 1) + s(1, 0));
  double l21 = off / l11;
  double l22 = std::sqrt(std::max(s(1, 1) - l21 * l21, 0.0));
  std::mt19937_64 rng(bt.mc_seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  long hits = 0;
  const long n = std::max<long>(bt.mc_samples, 1);
  for (long i = 0; i < n; ++i) {
    double z1 = nd(rng), z2 = nd(rng);
    double g1 = l11 * z1;
    double g2 = l21 * z1 + l22 * z2;
    if (std::abs(g1) - std::abs(g2) >= t) ++hits;
  }
  double p = static_cast<double>(hits) / static_cast<double>(n);
  return TailEstimate{p, std::sqrt(p * (1.0 - p) / static_cast<double>(n))};
}

}  // namespace

TailEstimate half_abs_diff_tail(const BivariateTail& bt, double t) {
  validate_sigma2(bt.sigma2);
  if (!std::isfinite(t) || t < 0.0)
    throw_config(Errc::out_of_range, "tail argument t must be a nonnegative finite value");

  const Eigen::Matrix2d& s = bt.sigma2;
  if (bt.method == TailMethod::monte_carlo) return tail_monte_carlo(bt, t);

  const double s11 = s(0, 0), s22 = s(1, 1);
  const double off = 0.5 * (s(0, 1) + s(1, 0));
  const double scale = std::max(s11, s22);

  if (std::abs(s11 - s22) <= 1e-12 * scale) {
    // Equal diagonals make U = G1+G2 and V = G1-G2 independent, and
    // {|G1|-|G2| >= t} = {U >= t, V >= t} or {U <= -t, V <= -t}.
    double var_u = std::max(s11 + s22 + 2.0 * off, 0.0);
    double var_v = std::max(s11 + s22 - 2.0 * off, 0.0);
    if (var_u <= 0.0 || var_v <= 0.0)
      return TailEstimate{t == 0.0 ? 1.0 : 0.0, 0.0};  // |G1| = |G2| almost surely
    double su = std::sqrt(var_u), sv = std::sqrt(var_v);
    return TailEstimate{2.0 * normal_sf(t / su) * normal_sf(t / sv), 0.0};
  }

  if (std::abs(off) <= 1e-12 * std::sqrt(s11 * s22)) {
    // Independent unequal components: integrate the half-normal density of |G2|.
    double s1 = std::sqrt(s11), s2 = std::sqrt(s22);
    auto f = [&](double y) {
      return 2.0 * normal_sf((t + y) / s1) * (2.0 / s2) * normal_pdf(y / s2);
    };
    double value = adaptive_simpson(f, 0.0, 9.5 * s2, 1e-10);
    return TailEstimate{std::min(std::max(value, 0.0), 1.0), 0.0};
  }

  return tail_monte_carlo(bt, t);
}

TailEstimate avg_tail(const std::vector<BivariateTail>& tails, double t) {
  if (tails.empty()) throw_data(Errc::empty_list, "avg_tail needs at least one tail");
  double sum = 0.0, var = 0.0;
  for (const auto& bt : tails) {
    TailEstimate e = half_abs_diff_tail(bt, t);
    sum += e.value;
    var += e.std_error * e.std_error;
  }
  const double k = static_cast<double>(tails.size());
  return TailEstimate{sum / k, std::sqrt(var) / k};
}

double tail_inverse(const std::vector<BivariateTail>& tails, double x) {
  if (!std::isfinite(x) || x <= 0.0 || x > 0.5)
    throw_config(Errc::out_of_range, "tail_inverse argument must lie in (0, 1/2]");
  if (avg_tail(tails, 0.0).value < x) return 0.0;

  double lo = 0.0, hi = 1.0;
  int guard = 0;
  while (avg_tail(tails, hi).value >= x) {
    lo = hi;
    hi *= 2.0;
    if (++guard > 400) break;  // average tail decays to zero, so this terminates
  }
  while (hi - lo > 1e-8) {
    double mid = 0.5 * (lo + hi);
    if (avg_tail(tails, mid).value >= x)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<BivariateTail> marginal_corr_tails(const MatrixXd& sigma, const VectorXd& r) {
  if (sigma.rows() != sigma.cols()) throw_data(Errc::dimension_mismatch, "sigma must be square");
  if (r.size() != sigma.rows())
    throw_data(Errc::dimension_mismatch, "r length differs from sigma dimension");
  if (!sigma.allFinite() || !r.allFinite())
    throw_data(Errc::non_finite_entry, "sigma or r has a non-finite entry");
  std::vector<BivariateTail> tails(static_cast<std::size_t>(r.size()));
  for (Eigen::Index j = 0; j < r.size(); ++j) {
    double d = sigma(j, j);
    double off = d - r(j);
    BivariateTail bt;
    bt.sigma2 << d, off, off, d;
    tails[static_cast<std::size_t>(j)] = bt;
  }
  return tails;
}

std::vector<BivariateTail> regression_score_tails(const MatrixXd& sigma, const VectorXd& r,
                                                  double n_rows, double sigma_noise2,
                                                  bool ols_inflation) {
  const Eigen::Index p = sigma.rows();
  if (sigma.cols() != p) throw_data(Errc::dimension_mismatch, "sigma must be square");
  if (r.size() != p) throw_data(Errc::dimension_mismatch, "r length differs from sigma dimension");
  if (!sigma.allFinite() || !r.allFinite())
    throw_data(Errc::non_finite_entry, "sigma or r has a non-finite entry");
  if (!(n_rows > 0.0)) throw_data(Errc::empty_data, "row count must be positive");
  if (!(sigma_noise2 > 0.0))
    throw_data(Errc::bad_covariance, "noise variance must be strictly positive");
  double inflation = 1.0;
  if (ols_inflation) {
    double ratio = 2.0 * static_cast<double>(p) / n_rows;
    if (ratio >= 1.0)
      throw_data(Errc::underdetermined, "inflation factor needs n > 2p");
    inflation = 1.0 / (1.0 - ratio);
  }

  MatrixXd joint(2 * p, 2 * p);
  MatrixXd off = sigma;
  off.diagonal() -= r;
  joint.topLeftCorner(p, p) = sigma;
  joint.topRightCorner(p, p) = off;
  joint.bottomLeftCorner(p, p) = off;
  joint.bottomRightCorner(p, p) = sigma;

  Eigen::LLT<MatrixXd> llt(joint);
  if (llt.info() != Eigen::Success)
    throw_numeric(Errc::psd_violation, "joint covariance is not positive definite");
  MatrixXd omega = llt.solve(MatrixXd::Identity(2 * p, 2 * p));

  std::vector<BivariateTail> tails(static_cast<std::size_t>(p));
  const double c = sigma_noise2 * inflation;
  for (Eigen::Index j = 0; j < p; ++j) {
    // The joint covariance is swap-invariant, so the two diagonal entries of
    // this block agree mathematically; averaging restores exact equality.
    double d = 0.5 * (omega(j, j) + omega(j + p, j + p)) * c;
    double o = 0.5 * (omega(j, j + p) + omega(j + p, j)) * c;
    BivariateTail bt;
    bt.sigma2 << d, o, o, d;
    tails[static_cast<std::size_t>(j)] = bt;
  }
  return tails;
}

void validate_diagnostics_config(const DiagnosticsConfig& cfg) {
  if (!std::isfinite(cfg.q) || cfg.q <= 0.0 || cfg.q >= 1.0)
    throw_config(Errc::invalid_q, "q must lie strictly inside (0, 1)");
  if (cfg.num_features < 1) throw_config(Errc::bad_config, "num_features must be at least 1");
  if (cfg.a_n < 1 || cfg.a_n > cfg.num_features)
    throw_config(Errc::out_of_range, "a_n must lie in [1, num_features]");
  if (cfg.replications < 1) throw_config(Errc::bad_config, "replications must be at least 1");
  if (cfg.t_grid.size() == 0) throw_config(Errc::bad_config, "t_grid must be nonempty");
  if (!cfg.t_grid.allFinite() || cfg.t_grid(0) <= 0.0)
    throw_config(Errc::bad_config, "t_grid entries must be positive finite values");
  for (Eigen::Index i = 1; i < cfg.t_grid.size(); ++i)
    if (cfg.t_grid(i) <= cfg.t_grid(i - 1))
      throw_config(Errc::bad_config, "t_grid must be strictly increasing");
}

namespace {

void validate_null_samples(const MatrixXd& samples, const VectorXd& t_grid) {
  if (samples.rows() < 100)
    throw_data(Errc::insufficient_replications, "need at least 100 replications");
  if (samples.cols() == 0) throw_data(Errc::empty_data, "no null statistics supplied");
  if (!samples.allFinite())
    throw_data(Errc::non_finite_entry, "null sample matrix has a non-finite entry");
  if (t_grid.size() == 0) throw_config(Errc::bad_config, "t_grid must be nonempty");
  if (!t_grid.allFinite() || t_grid(0) <= 0.0)
    throw_config(Errc::bad_config, "t_grid entries must be positive finite values");
  for (Eigen::Index i = 1; i < t_grid.size(); ++i)
    if (t_grid(i) <= t_grid(i - 1))
      throw_config(Errc::bad_config, "t_grid must be strictly increasing");
}

}  // namespace

SymmetryDiag symmetry_ratio_diag(const MatrixXd& null_w_samples, const VectorXd& t_grid) {
  validate_null_samples(null_w_samples, t_grid);
  const Eigen::Index nt = t_grid.size();
  const double total = static_cast<double>(null_w_samples.size());

  SymmetryDiag out;
  out.t_grid = t_grid;
  out.num_freq = VectorXd::Zero(nt);
  out.den_freq = VectorXd::Zero(nt);
  out.ratio = VectorXd::Constant(nt, std::numeric_limits<double>::quiet_NaN());
  out.std_error = VectorXd::Constant(nt, std::numeric_limits<double>::quiet_NaN());
  out.admissible.assign(static_cast<std::size_t>(nt), 0);

  const double* data = null_w_samples.data();
  const Eigen::Index count = null_w_samples.size();
  for (Eigen::Index k = 0; k < nt; ++k) {
    const double t = t_grid(k);
    long num = 0, den = 0;
    for (Eigen::Index i = 0; i < count; ++i) {
      double w = data[i];
      if (w >= t)
        ++num;
      else if (w <= -t)
        ++den;
    }
    out.num_freq(k) = static_cast<double>(num) / total;
    out.den_freq(k) = static_cast<double>(den) / total;
    if (den >= 10) {
      out.admissible[static_cast<std::size_t>(k)] = 1;
      double r = static_cast<double>(num) / static_cast<double>(den);
      out.ratio(k) = r;
      double pn = out.num_freq(k), pd = out.den_freq(k);
      double rel_var = 2.0 / total + (1.0 - pd) / (total * pd);
      if (pn > 0.0) rel_var += (1.0 - pn) / (total * pn);
      out.std_error(k) = r * std::sqrt(rel_var);
      double dev = std::abs(r - 1.0);
      if (!out.any_admissible || dev > out.sup_abs_dev) {
        out.sup_abs_dev = dev;
        out.sup_abs_dev_se = out.std_error(k);
      }
      out.any_admissible = true;
    }
  }
  return out;
}

IndicatorDiag indicator_approx_diag(const MatrixXd& null_w_samples, const VectorXd& t_grid,
                                    double freq_floor) {
  validate_null_samples(null_w_samples, t_grid);
  const Eigen::Index nr = null_w_samples.rows();
  const Eigen::Index nc = null_w_samples.cols();
  const Eigen::Index nt = t_grid.size();
  if (freq_floor < 0.0) freq_floor = 10.0 / static_cast<double>(null_w_samples.size());

  IndicatorDiag out;
  out.t_grid = t_grid;
  out.pooled_freq = VectorXd::Zero(nt);
  out.admissible.assign(static_cast<std::size_t>(nt), 0);
  out.per_rep_sup = VectorXd::Zero(nr);

  MatrixXd counts = MatrixXd::Zero(nr, nt);
  for (Eigen::Index r = 0; r < nr; ++r)
    for (Eigen::Index j = 0; j < nc; ++j) {
      double w = null_w_samples(r, j);
      for (Eigen::Index k = 0; k < nt; ++k) {
        if (w < t_grid(k)) break;  // grid is increasing
        counts(r, k) += 1.0;
      }
    }

  for (Eigen::Index k = 0; k < nt; ++k) {
    out.pooled_freq(k) = counts.col(k).sum() / static_cast<double>(null_w_samples.size());
    if (out.pooled_freq(k) >= freq_floor) {
      out.admissible[static_cast<std::size_t>(k)] = 1;
      out.any_admissible = true;
    }
  }

  if (out.any_admissible) {
    for (Eigen::Index r = 0; r < nr; ++r) {
      double sup = 0.0;
      for (Eigen::Index k = 0; k < nt; ++k) {
        if (!out.admissible[static_cast<std::size_t>(k)]) continue;
        double expected = static_cast<double>(nc) * out.pooled_freq(k);
        sup = std::max(sup, std::abs(counts(r, k) / expected - 1.0));
      }
      out.per_rep_sup(r) = sup;
    }
    out.mean_sup = out.per_rep_sup.mean();
  }
  return out;
}

LocalizationDiag threshold_localization_diag(const std::vector<SelectionResult>& runs,
                                             const DiagnosticsConfig& cfg,
                                             const std::vector<BivariateTail>& tails) {
  validate_diagnostics_config(cfg);
  const double x = cfg.q * static_cast<double>(cfg.a_n) / (2.0 * static_cast<double>(cfg.num_features));
  LocalizationDiag out;
  out.alpha_n = tail_inverse(tails, x);
  out.total = static_cast<int>(runs.size());
  for (const auto& run : runs)
    if (run.threshold > out.alpha_n || run.threshold == kInf) ++out.exceed_count;
  out.exceed_frequency = out.total > 0
                             ? static_cast<double>(out.exceed_count) / static_cast<double>(out.total)
                             : 0.0;
  return out;
}

}  // namespace knockoffs
