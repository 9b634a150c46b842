#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "knockoffs/core.hpp"
#include "knockoffs/simulation.hpp"

namespace knockoffs {

// Token parsers shared by the config reader and the command-line tool. All of
// them accept the short CLI spelling and the full name and throw BadConfig on
// anything else.
StatKind parse_stat_kind(const std::string& token);           // mc | ols | dl | dc
CovariateLaw parse_covariate_law(const std::string& token);   // binary | gaussian | ...
MomentMode parse_moment_mode(const std::string& token);       // analytic | train
ResponseModel parse_response_model(const std::string& token); // linear | tanh_nonlinear | null
ResponseModel response_from_setting(int setting);             // 1 -> linear, 2 -> tanh

// Parsed CSV content. y_raw is present when the header has a column named "y"
// (case-insensitive); missing response entries (empty or NA) are NaN here and
// resolved by preprocessing. Covariate cells must parse as finite numbers.
struct CsvDataset {
  DataMatrix x;
  std::optional<VectorXd> y_raw;
};

CsvDataset load_csv(const std::string& path);

// Writes header + rows with 17-significant-digit floats so a round trip through
// load_csv reproduces every entry exactly. y, when given, is written as a final
// column named "y".
void write_csv(const DataMatrix& x, const VectorXd* y, const std::string& path);

// Mutation-panel rules: drop rows with missing y first, then drop binary columns
// whose post-drop sum is below min_count. Column names survive the filter.
std::pair<DataMatrix, ResponseVector> preprocess_mutation_panel(const DataMatrix& x,
                                                                const VectorXd& y_raw,
                                                                int min_count = 3);

// m rows uniform without replacement, kept in increasing row order.
std::pair<DataMatrix, ResponseVector> subsample(const DataMatrix& x, const ResponseVector& y,
                                                long m, RngStream& rng);

struct SimulateOptions {
  std::vector<SimConfig> cells;
  std::string output_dir = ".";
  int threads = 1;
};

// Config JSON: {"output_dir": "...", "cells": [{...SimConfig fields...}]}.
// Unknown keys are a ConfigError; omitted fields take SimConfig defaults.
SimulateOptions parse_simulate_config(const std::string& path);

struct ReportPaths {
  std::string csv_path;
  std::string json_path;
};

// Runs every cell, then writes <out>/report.csv (one row per cell) and
// <out>/report.json (full per-replication detail). Existing reports are never
// overwritten; later runs get numbered names (report-2.json, ...). Everything
// outside the JSON "timing" object is byte-deterministic for a given config.
ReportPaths run_simulate(const SimulateOptions& opts);

struct SelectOptions {
  std::string csv_path;
  StatKind statistic = StatKind::marginal_corr;
  double q = 0.2;
  bool preprocess = false;  // apply the mutation-panel rules before anything else
  int min_count = 3;
  long subsample_m = 0;  // 0 keeps all rows
  unsigned long long seed = 1;
  double ridge = 0.0;
  double lambda_scale = 1.0;
  bool knockoff_plus = false;
  std::string truth_path;  // optional: newline-separated true column names
  std::string output_dir = ".";
};

// Real-data pipeline: load, optional preprocessing, moment estimation from the
// full preprocessed sample, optional subsampling, Gaussian knockoffs, statistic,
// selection. Emits selected column names, threshold, and the w vector to JSON;
// fdp/power appear only when a truth file is given. Returns the JSON path.
std::string run_select(const SelectOptions& opts);

struct DiagnoseOptions {
  SimConfig cell;  // response is forced to the null model
  int a_n = 40;
  int t_grid_size = 50;
  std::string output_dir = ".";
  int threads = 1;
};

// Monte-Carlo diagnostics under the global null: collects null statistic vectors
// across replications, evaluates tail-symmetry and indicator-approximation
// diagnostics on an automatic t grid, and the threshold-localization frequency
// against the Gaussian reference tails (skipped for distance correlation, which
// has no bivariate normal reference here). Returns the JSON path.
std::string run_diagnose(const DiagnoseOptions& opts);

}  // namespace knockoffs
