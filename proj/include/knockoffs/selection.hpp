#pragma once

#include <optional>
#include <vector>

#include "knockoffs/core.hpp"
#include "knockoffs/statistics.hpp"

namespace knockoffs {

// threshold is +infinity when no candidate satisfies the ratio bound, in which
// case selected is empty. fdp and power are present only when ground truth was
// supplied; indices in selected are 0-based and sorted.
struct SelectionResult {
  double threshold = 0.0;
  std::vector<int> selected;
  std::optional<double> fdp;
  std::optional<double> power;
};

// Smallest t among the distinct strictly positive |w_j| with
//   #{j : w_j <= -t} / max(#{j : w_j >= t}, 1) <= q,
// or +infinity when none qualifies. plus_variant adds 1 to the numerator count.
double knockoff_threshold(const VectorXd& w, double q, bool plus_variant = false);

// selected = { j : w_j >= threshold }. With truth present, fdp counts selections
// outside truth.h1 over max(|selected|, 1); power needs a nonempty truth.h1.
SelectionResult select(const WStats& w, double q, const GroundTruth* truth = nullptr,
                       bool plus_variant = false);

SelectionResult select(const VectorXd& w, double q, const GroundTruth* truth = nullptr,
                       bool plus_variant = false);

}  // namespace knockoffs
