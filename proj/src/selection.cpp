#include "knockoffs/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace knockoffs {

double knockoff_threshold(const VectorXd& w, double q, bool plus_variant) {
  if (w.size() == 0) throw_data(Errc::empty_data, "empty statistic vector");
  if (!w.allFinite()) throw_data(Errc::non_finite_entry, "statistic vector has a non-finite entry");
  if (!std::isfinite(q) || q <= 0.0 || q >= 1.0)
    throw_config(Errc::invalid_q, "q must lie strictly inside (0, 1)");

  std::vector<double> sorted(w.data(), w.data() + w.size());
  std::sort(sorted.begin(), sorted.end());

  std::vector<double> candidates;
  candidates.reserve(sorted.size());
  for (double v : sorted)
    if (v != 0.0) candidates.push_back(std::abs(v));
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  const double offset = plus_variant ? 1.0 : 0.0;
  for (double t : candidates) {
    auto le = std::upper_bound(sorted.begin(), sorted.end(), -t);
    auto ge = std::lower_bound(sorted.begin(), sorted.end(), t);
    double num = static_cast<double>(le - sorted.begin()) + offset;
    double den = static_cast<double>(sorted.end() - ge);
    if (num / std::max(den, 1.0) <= q) return t;
  }
  return std::numeric_limits<double>::infinity();
}

SelectionResult select(const VectorXd& w, double q, const GroundTruth* truth, bool plus_variant) {
  SelectionResult out;
  out.threshold = knockoff_threshold(w, q, plus_variant);
  for (Eigen::Index j = 0; j < w.size(); ++j)
    if (w(j) >= out.threshold) out.selected.push_back(static_cast<int>(j));

  if (truth != nullptr) {
    validate_truth(*truth, w.size());
    if (truth->h1.empty())
      throw_data(Errc::empty_h1, "ground truth has no signal features; power is undefined");
    std::size_t tp = 0;
    for (int j : out.selected)
      if (std::binary_search(truth->h1.begin(), truth->h1.end(), j)) ++tp;
    const double nsel = static_cast<double>(out.selected.size());
    out.fdp = (nsel - static_cast<double>(tp)) / std::max(nsel, 1.0);
    out.power = static_cast<double>(tp) / static_cast<double>(truth->h1.size());
  }
  return out;
}

SelectionResult select(const WStats& w, double q, const GroundTruth* truth, bool plus_variant) {
  return select(w.w, q, truth, plus_variant);
}

}  // namespace knockoffs
