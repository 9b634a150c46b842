#include "knockoffs/cli_io.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "knockoffs/selection.hpp"
#include "knockoffs/theory_diagnostics.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace knockoffs {

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool parse_double_token(const std::string& token, double& out) {
  const char* begin = token.data();
  const char* end = begin + token.size();
  auto res = std::from_chars(begin, end, out);
  return res.ec == std::errc() && res.ptr == end;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

StatKind parse_stat_kind(const std::string& token) {
  std::string t = lower(trim(token));
  if (t == "mc" || t == "marginal_corr") return StatKind::marginal_corr;
  if (t == "ols" || t == "ols_diff") return StatKind::ols_diff;
  if (t == "dl" || t == "debiased_lasso_diff") return StatKind::debiased_lasso_diff;
  if (t == "dc" || t == "distance_corr") return StatKind::distance_corr;
  throw_config(Errc::bad_config, "unknown statistic '" + token + "' (use mc, ols, dl, or dc)");
}

CovariateLaw parse_covariate_law(const std::string& token) {
  std::string t = lower(trim(token));
  if (t == "binary" || t == "binary_threshold") return CovariateLaw::binary_threshold;
  if (t == "gaussian") return CovariateLaw::gaussian;
  if (t == "rademacher") return CovariateLaw::rademacher;
  if (t == "student_t" || t == "t") return CovariateLaw::student_t;
  throw_config(Errc::bad_config, "unknown covariate law '" + token + "'");
}

MomentMode parse_moment_mode(const std::string& token) {
  std::string t = lower(trim(token));
  if (t == "analytic") return MomentMode::analytic;
  if (t == "train") return MomentMode::train;
  throw_config(Errc::bad_config, "unknown moment mode '" + token + "' (use analytic or train)");
}

ResponseModel parse_response_model(const std::string& token) {
  std::string t = lower(trim(token));
  if (t == "linear") return ResponseModel::linear;
  if (t == "tanh_nonlinear" || t == "tanh") return ResponseModel::tanh_nonlinear;
  if (t == "null" || t == "null_model") return ResponseModel::null_model;
  throw_config(Errc::bad_config, "unknown response model '" + token + "'");
}

ResponseModel response_from_setting(int setting) {
  if (setting == 1) return ResponseModel::linear;
  if (setting == 2) return ResponseModel::tanh_nonlinear;
  throw_config(Errc::bad_config, "setting must be 1 or 2");
}

CsvDataset load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data(Errc::io_failure, "cannot open " + path);

  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw_data(Errc::empty_data, "empty file " + path);
  if (lines[0].size() >= 3 && static_cast<unsigned char>(lines[0][0]) == 0xEF &&
      static_cast<unsigned char>(lines[0][1]) == 0xBB &&
      static_cast<unsigned char>(lines[0][2]) == 0xBF)
    lines[0].erase(0, 3);

  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
      std::size_t pos = s.find(',', start);
      if (pos == std::string::npos) {
        out.push_back(s.substr(start));
        return out;
      }
      out.push_back(s.substr(start, pos - start));
      start = pos + 1;
    }
  };

  std::vector<std::string> header = split(lines[0]);
  for (auto& h : header) h = trim(h);
  const std::size_t ncols = header.size();

  std::size_t y_col = ncols;  // one past the end means absent
  for (std::size_t j = 0; j < ncols; ++j)
    if (lower(header[j]) == "y") {
      y_col = j;
      break;
    }

  const bool has_y = y_col < ncols;
  const std::size_t ncov = ncols - (has_y ? 1 : 0);
  if (ncov == 0) throw_data(Errc::no_numeric_columns, "no covariate columns in " + path);

  const std::size_t nrows = lines.size() - 1;
  if (nrows == 0) throw_data(Errc::empty_data, "no data rows in " + path);

  MatrixXd x(static_cast<Eigen::Index>(nrows), static_cast<Eigen::Index>(ncov));
  VectorXd y(static_cast<Eigen::Index>(nrows));
  std::vector<std::string> names;
  names.reserve(ncov);
  for (std::size_t j = 0; j < ncols; ++j)
    if (j != y_col) names.push_back(header[j]);

  for (std::size_t r = 0; r < nrows; ++r) {
    std::vector<std::string> fields = split(lines[r + 1]);
    if (fields.size() != ncols)
      throw ParseError(static_cast<long>(r + 1), static_cast<long>(fields.size()),
                       "row has " + std::to_string(fields.size()) + " fields, expected " +
                           std::to_string(ncols));
    std::size_t cov = 0;
    for (std::size_t j = 0; j < ncols; ++j) {
      std::string tok = trim(fields[j]);
      if (j == y_col) {
        if (tok.empty() || lower(tok) == "na") {
          y(static_cast<Eigen::Index>(r)) = std::numeric_limits<double>::quiet_NaN();
          continue;
        }
        double v;
        if (!parse_double_token(tok, v))
          throw ParseError(static_cast<long>(r + 1), static_cast<long>(j + 1),
                           "cannot parse response value '" + fields[j] + "'");
        y(static_cast<Eigen::Index>(r)) = v;
      } else {
        double v;
        if (!parse_double_token(tok, v))
          throw ParseError(static_cast<long>(r + 1), static_cast<long>(j + 1),
                           "cannot parse numeric value '" + fields[j] + "'");
        x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(cov)) = v;
        ++cov;
      }
    }
  }

  CsvDataset out{DataMatrix(std::move(x), std::move(names)), std::nullopt};
  if (has_y) out.y_raw = std::move(y);
  return out;
}

void write_csv(const DataMatrix& x, const VectorXd* y, const std::string& path) {
  if (y != nullptr && y->size() != x.rows())
    throw_data(Errc::dimension_mismatch, "response length differs from row count");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data(Errc::io_failure, "cannot write " + path);

  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (j > 0) out << ',';
    out << x.name_of(j);
  }
  if (y != nullptr) {
    if (x.cols() > 0) out << ',';
    out << 'y';
  }
  out << '\n';

  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (j > 0) out << ',';
      out << format_double(x.values()(i, j));
    }
    if (y != nullptr) {
      if (x.cols() > 0) out << ',';
      out << format_double((*y)(i));
    }
    out << '\n';
  }
  if (!out) throw_data(Errc::io_failure, "failed writing " + path);
}

std::pair<DataMatrix, ResponseVector> preprocess_mutation_panel(const DataMatrix& x,
                                                                const VectorXd& y_raw,
                                                                int min_count) {
  if (min_count < 0) throw_config(Errc::bad_config, "min_count must be nonnegative");
  if (y_raw.size() != x.rows())
    throw_data(Errc::dimension_mismatch, "response length differs from row count");
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      double v = x.values()(i, j);
      if (v != 0.0 && v != 1.0)
        throw_data(Errc::not_binary, "column " + x.name_of(j) + " has non-binary value");
    }

  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < y_raw.size(); ++i)
    if (!std::isnan(y_raw(i))) rows.push_back(i);
  if (rows.empty()) throw_data(Errc::all_rows_dropped, "every row has a missing response");

  std::vector<Eigen::Index> cols;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double sum = 0.0;
    for (Eigen::Index i : rows) sum += x.values()(i, j);
    if (sum >= static_cast<double>(min_count)) cols.push_back(j);
  }

  MatrixXd xv(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  std::vector<std::string> names;
  names.reserve(cols.size());
  for (std::size_t cj = 0; cj < cols.size(); ++cj) {
    names.push_back(x.name_of(cols[cj]));
    for (std::size_t ri = 0; ri < rows.size(); ++ri)
      xv(static_cast<Eigen::Index>(ri), static_cast<Eigen::Index>(cj)) =
          x.values()(rows[ri], cols[cj]);
  }
  VectorXd yv(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t ri = 0; ri < rows.size(); ++ri) yv(static_cast<Eigen::Index>(ri)) = y_raw(rows[ri]);

  return {DataMatrix(std::move(xv), std::move(names)), ResponseVector(std::move(yv))};
}

std::pair<DataMatrix, ResponseVector> subsample(const DataMatrix& x, const ResponseVector& y,
                                                long m, RngStream& rng) {
  validate_dataset(x, y);
  const long n = static_cast<long>(x.rows());
  if (m < 1) throw_config(Errc::bad_config, "subsample size must be positive");
  if (m > n) throw_data(Errc::m_too_large, "subsample size exceeds row count");

  std::vector<long> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  for (long i = 0; i < m; ++i) {
    std::uniform_int_distribution<long> pick(i, n - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  std::vector<long> keep(pool.begin(), pool.begin() + m);
  std::sort(keep.begin(), keep.end());

  MatrixXd xv(static_cast<Eigen::Index>(m), x.cols());
  VectorXd yv(static_cast<Eigen::Index>(m));
  for (long i = 0; i < m; ++i) {
    xv.row(i) = x.values().row(keep[static_cast<std::size_t>(i)]);
    yv(i) = y.values()(keep[static_cast<std::size_t>(i)]);
  }
  return {DataMatrix(std::move(xv), x.col_names()), ResponseVector(std::move(yv))};
}

namespace {

long json_to_long(const ordered_json& v, const std::string& key) {
  if (!v.is_number_integer() && !v.is_number_unsigned())
    throw_config(Errc::bad_config, "config field '" + key + "' must be an integer");
  return v.get<long>();
}

double json_to_double(const ordered_json& v, const std::string& key) {
  if (!v.is_number())
    throw_config(Errc::bad_config, "config field '" + key + "' must be a number");
  return v.get<double>();
}

bool json_to_bool(const ordered_json& v, const std::string& key) {
  if (!v.is_boolean())
    throw_config(Errc::bad_config, "config field '" + key + "' must be a boolean");
  return v.get<bool>();
}

std::string json_to_string(const ordered_json& v, const std::string& key) {
  if (!v.is_string())
    throw_config(Errc::bad_config, "config field '" + key + "' must be a string");
  return v.get<std::string>();
}

SimConfig cell_from_json(const ordered_json& obj) {
  if (!obj.is_object()) throw_config(Errc::bad_config, "each cell must be a JSON object");
  SimConfig cfg;
  bool saw_setting = false, saw_response = false;
  for (const auto& item : obj.items()) {
    const std::string& key = item.key();
    const ordered_json& v = item.value();
    if (key == "n")
      cfg.n = static_cast<int>(json_to_long(v, key));
    else if (key == "p")
      cfg.p = static_cast<int>(json_to_long(v, key));
    else if (key == "rho")
      cfg.rho = json_to_double(v, key);
    else if (key == "law")
      cfg.law = parse_covariate_law(json_to_string(v, key));
    else if (key == "dof")
      cfg.dof = static_cast<int>(json_to_long(v, key));
    else if (key == "setting") {
      cfg.response = response_from_setting(static_cast<int>(json_to_long(v, key)));
      saw_setting = true;
    } else if (key == "response") {
      cfg.response = parse_response_model(json_to_string(v, key));
      saw_response = true;
    } else if (key == "stat" || key == "statistic")
      cfg.statistic = parse_stat_kind(json_to_string(v, key));
    else if (key == "q")
      cfg.q = json_to_double(v, key);
    else if (key == "reps" || key == "replications")
      cfg.replications = static_cast<int>(json_to_long(v, key));
    else if (key == "seed") {
      if (!v.is_number_integer() && !v.is_number_unsigned())
        throw_config(Errc::bad_config, "config field 'seed' must be an integer");
      cfg.seed = v.get<unsigned long long>();
    } else if (key == "moments")
      cfg.moments = parse_moment_mode(json_to_string(v, key));
    else if (key == "train_size")
      cfg.train_size = json_to_long(v, key);
    else if (key == "k")
      cfg.k = static_cast<int>(json_to_long(v, key));
    else if (key == "magnitude")
      cfg.magnitude = json_to_double(v, key);
    else if (key == "beta_redraw")
      cfg.beta_redraw = json_to_bool(v, key);
    else if (key == "knockoff_plus")
      cfg.knockoff_plus = json_to_bool(v, key);
    else if (key == "lambda_scale")
      cfg.lambda_scale = json_to_double(v, key);
    else
      throw_config(Errc::bad_config, "unknown config field '" + key + "'");
  }
  if (saw_setting && saw_response)
    throw_config(Errc::bad_config, "give either 'setting' or 'response', not both");
  validate_sim_config(cfg);
  return cfg;
}

ordered_json cell_to_json(const SimConfig& cfg) {
  ordered_json j;
  j["n"] = cfg.n;
  j["p"] = cfg.p;
  j["rho"] = cfg.rho;
  j["law"] = covariate_law_name(cfg.law);
  j["dof"] = cfg.dof;
  j["response"] = response_model_name(cfg.response);
  j["statistic"] = stat_kind_name(cfg.statistic);
  j["q"] = cfg.q;
  j["replications"] = cfg.replications;
  j["seed"] = cfg.seed;
  j["moments"] = cfg.moments == MomentMode::train ? "train" : "analytic";
  j["train_size"] = cfg.train_size;
  j["k"] = cfg.k;
  j["magnitude"] = cfg.magnitude;
  j["beta_redraw"] = cfg.beta_redraw;
  j["knockoff_plus"] = cfg.knockoff_plus;
  j["lambda_scale"] = cfg.lambda_scale;
  return j;
}

std::string setting_label(ResponseModel model) {
  switch (model) {
    case ResponseModel::linear: return "1";
    case ResponseModel::tanh_nonlinear: return "2";
    case ResponseModel::null_model: return "null";
  }
  return "?";
}

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string utc_now_string() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm_utc;
  gmtime_r(&t, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

// Reserves the first free numbered name for every extension at once, so the CSV
// and JSON of one run always share a counter. Existing reports are never touched.
std::vector<std::string> reserve_report_paths(const std::string& dir, const std::string& stem,
                                              const std::vector<std::string>& exts) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw_data(Errc::io_failure, "cannot create output directory " + dir);
  for (int k = 1; k < 1000000; ++k) {
    std::string base = k == 1 ? stem : stem + "-" + std::to_string(k);
    std::vector<std::string> paths;
    bool free = true;
    for (const auto& ext : exts) {
      fs::path p = fs::path(dir) / (base + ext);
      if (fs::exists(p)) free = false;
      paths.push_back(p.string());
    }
    if (free) return paths;
  }
  throw_data(Errc::io_failure, "no free report name in " + dir);
}

ordered_json json_finite(double v) {
  // nlohmann serializes NaN/inf as null already; make the intent explicit.
  if (std::isnan(v) || std::isinf(v)) return nullptr;
  return v;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data(Errc::io_failure, "cannot write " + path);
  out << content;
  if (!out) throw_data(Errc::io_failure, "failed writing " + path);
}

}  // namespace

SimulateOptions parse_simulate_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_config(Errc::bad_config, "cannot open config " + path);
  ordered_json doc;
  try {
    doc = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw_config(Errc::bad_config, std::string("config parse failure: ") + e.what());
  }
  if (!doc.is_object()) throw_config(Errc::bad_config, "config root must be a JSON object");

  SimulateOptions opts;
  bool saw_cells = false;
  for (const auto& item : doc.items()) {
    const std::string& key = item.key();
    const ordered_json& v = item.value();
    if (key == "cells") {
      if (!v.is_array() || v.empty())
        throw_config(Errc::bad_config, "'cells' must be a nonempty array");
      for (const auto& cell : v) opts.cells.push_back(cell_from_json(cell));
      saw_cells = true;
    } else if (key == "output_dir") {
      opts.output_dir = json_to_string(v, key);
    } else if (key == "threads") {
      opts.threads = static_cast<int>(json_to_long(v, key));
      if (opts.threads < 1) throw_config(Errc::bad_config, "threads must be positive");
    } else {
      throw_config(Errc::bad_config, "unknown config field '" + key + "'");
    }
  }
  if (!saw_cells) throw_config(Errc::bad_config, "config needs a 'cells' array");
  return opts;
}

ReportPaths run_simulate(const SimulateOptions& opts) {
  if (opts.cells.empty()) throw_config(Errc::bad_config, "no cells configured");
  if (opts.threads < 1) throw_config(Errc::bad_config, "threads must be positive");
  for (const auto& cfg : opts.cells) validate_sim_config(cfg);

  const std::string started = utc_now_string();
  auto t0 = std::chrono::steady_clock::now();

  std::vector<CellResult> results;
  std::vector<double> cell_seconds;
  results.reserve(opts.cells.size());
  for (const auto& cfg : opts.cells) {
    auto c0 = std::chrono::steady_clock::now();
    results.push_back(run_cell(cfg, opts.threads));
    cell_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - c0).count());
  }

  ordered_json cells_echo = ordered_json::array();
  for (const auto& cfg : opts.cells) cells_echo.push_back(cell_to_json(cfg));
  const std::string config_hash = fnv1a_hex(cells_echo.dump());

  std::vector<std::string> paths = reserve_report_paths(opts.output_dir, "report", {".csv", ".json"});
  ReportPaths rp{paths[0], paths[1]};

  std::ostringstream csv;
  csv << "n,p,rho,setting,statistic,mean_fdr,mean_power\n";
  for (const auto& res : results) {
    csv << res.config.n << ',' << res.config.p << ',' << format_double(res.config.rho) << ','
        << setting_label(res.config.response) << ',' << stat_kind_name(res.config.statistic) << ','
        << format_double(res.mean_fdr) << ',' << format_double(res.mean_power) << '\n';
  }
  write_text_file(rp.csv_path, csv.str());

  ordered_json report;
  report["schema_version"] = "1.0";
  report["provenance"] = {{"config_hash", config_hash}, {"generator", "mt19937_64"}};
  ordered_json cells = ordered_json::array();
  for (const auto& res : results) {
    ordered_json cell;
    cell["config"] = cell_to_json(res.config);
    cell["mean_fdr"] = json_finite(res.mean_fdr);
    cell["mean_power"] = json_finite(res.mean_power);
    cell["exchangeability_max_t"] = json_finite(res.exchangeability_max_t);
    ordered_json reps = ordered_json::array();
    for (const auto& rr : res.per_rep) {
      ordered_json rep;
      rep["fdp"] = json_finite(rr.fdp);
      rep["power"] = json_finite(rr.power);
      rep["threshold"] = json_finite(rr.threshold);
      rep["selected_count"] = rr.selected_count;
      reps.push_back(std::move(rep));
    }
    cell["per_rep"] = std::move(reps);
    cells.push_back(std::move(cell));
  }
  report["cells"] = std::move(cells);
  report["timing"] = {{"started_utc", started},
                      {"seconds_total",
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()},
                      {"per_cell_seconds", cell_seconds},
                      {"threads", opts.threads}};
  write_text_file(rp.json_path, report.dump(2) + "\n");
  return rp;
}

std::string run_select(const SelectOptions& opts) {
  if (!std::isfinite(opts.q) || opts.q <= 0.0 || opts.q >= 1.0)
    throw_config(Errc::invalid_q, "q must lie strictly inside (0, 1)");
  if (opts.min_count < 0) throw_config(Errc::bad_config, "min_count must be nonnegative");
  if (opts.subsample_m < 0) throw_config(Errc::bad_config, "subsample size must be nonnegative");
  if (!std::isfinite(opts.ridge) || opts.ridge < 0.0)
    throw_config(Errc::bad_config, "ridge must be nonnegative");
  if (!std::isfinite(opts.lambda_scale) || opts.lambda_scale <= 0.0)
    throw_config(Errc::bad_config, "lambda_scale must be strictly positive");

  const std::string started = utc_now_string();
  auto t0 = std::chrono::steady_clock::now();

  CsvDataset ds = load_csv(opts.csv_path);
  if (!ds.y_raw.has_value())
    throw_data(Errc::empty_data, "dataset has no response column named y");

  DataMatrix x = ds.x;
  std::optional<ResponseVector> y;
  if (opts.preprocess) {
    auto pair = preprocess_mutation_panel(ds.x, *ds.y_raw, opts.min_count);
    x = std::move(pair.first);
    y = std::move(pair.second);
  } else {
    for (Eigen::Index i = 0; i < ds.y_raw->size(); ++i)
      if (std::isnan((*ds.y_raw)(i)))
        throw_data(Errc::non_finite_entry,
                   "response has missing values; enable preprocessing to drop those rows");
    y = ResponseVector(*ds.y_raw);
  }
  if (x.cols() == 0) throw_data(Errc::no_numeric_columns, "no covariate columns survive preprocessing");

  const double nfull = static_cast<double>(x.rows());
  VectorXd mean = x.values().colwise().mean();
  MatrixXd sigma = x.values().transpose() * x.values() / nfull - mean * mean.transpose();

  std::vector<std::string> constant_cols;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    if (sigma(j, j) <= 0.0) constant_cols.push_back(x.name_of(j));
  if (!constant_cols.empty()) {
    std::string msg = "constant columns make the covariance singular:";
    for (const auto& nm : constant_cols) msg += " " + nm;
    throw_numeric(Errc::psd_violation, msg);
  }
  if (opts.ridge > 0.0) sigma.diagonal().array() += opts.ridge;

  std::optional<CovarianceSpec> spec;
  try {
    spec.emplace(std::move(mean), std::move(sigma), MomentSource::estimated,
                 static_cast<long>(x.rows()));
  } catch (const Error& e) {
    if (e.code() == Errc::bad_covariance)
      throw_numeric(Errc::psd_violation,
                    "sample covariance is not positive definite; pass a ridge (--ridge)");
    throw;
  }

  if (opts.subsample_m > 0) {
    RngStream sub_rng = make_stream(opts.seed, kStreamSubsample);
    auto pair = subsample(x, *y, opts.subsample_m, sub_rng);
    x = std::move(pair.first);
    y = std::move(pair.second);
  }

  RMethod method = spec->is_diagonal() ? RMethod::diagonal_identity : RMethod::equicorrelated;
  KnockoffModel model = build_knockoff_model(*spec, method);
  RngStream noise_rng = make_stream(opts.seed, kStreamSelect);
  DataMatrix xhat = gaussian_knockoffs(x, model, noise_rng);

  DataMatrix xc(x.values().rowwise() - x.values().colwise().mean(), x.col_names());
  DataMatrix xhc(xhat.values().rowwise() - xhat.values().colwise().mean());
  ResponseVector yc(VectorXd(y->values().array() - y->values().mean()));

  DebiasedLassoOptions dlo;
  dlo.lambda_scale = opts.lambda_scale;
  WStats w = compute_stats(opts.statistic, xc, xhc, yc, dlo);

  std::optional<GroundTruth> truth;
  long truth_missing = 0;
  if (!opts.truth_path.empty()) {
    std::ifstream tin(opts.truth_path, std::ios::binary);
    if (!tin) throw_data(Errc::io_failure, "cannot open " + opts.truth_path);
    std::set<std::string> wanted;
    std::string line;
    while (std::getline(tin, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::string t = trim(line);
      if (!t.empty()) wanted.insert(t);
    }
    GroundTruth gt;
    std::set<std::string> found;
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (wanted.count(x.name_of(j))) {
        gt.h1.push_back(static_cast<int>(j));
        found.insert(x.name_of(j));
      }
    truth_missing = static_cast<long>(wanted.size() - found.size());
    truth = std::move(gt);
  }

  SelectionResult sel = select(w, opts.q, truth ? &*truth : nullptr, opts.knockoff_plus);

  ordered_json report;
  report["schema_version"] = "1.0";
  ordered_json prov;
  prov["csv_path"] = opts.csv_path;
  prov["statistic"] = stat_kind_name(opts.statistic);
  prov["q"] = opts.q;
  prov["seed"] = opts.seed;
  prov["preprocess"] = opts.preprocess;
  prov["min_count"] = opts.min_count;
  prov["subsample_m"] = opts.subsample_m;
  prov["ridge"] = opts.ridge;
  prov["lambda_scale"] = opts.lambda_scale;
  prov["knockoff_plus"] = opts.knockoff_plus;
  prov["rows_used"] = static_cast<long>(x.rows());
  prov["features"] = static_cast<long>(x.cols());
  report["provenance"] = std::move(prov);
  report["threshold"] = json_finite(sel.threshold);
  ordered_json selected = ordered_json::array();
  for (int j : sel.selected) selected.push_back(x.name_of(j));
  report["selected"] = std::move(selected);
  ordered_json sel_idx = ordered_json::array();
  for (int j : sel.selected) sel_idx.push_back(j + 1);
  report["selected_indices"] = std::move(sel_idx);
  ordered_json columns = ordered_json::array();
  for (Eigen::Index j = 0; j < x.cols(); ++j) columns.push_back(x.name_of(j));
  report["columns"] = std::move(columns);
  ordered_json wvals = ordered_json::array();
  for (Eigen::Index j = 0; j < w.w.size(); ++j) wvals.push_back(json_finite(w.w(j)));
  report["w"] = std::move(wvals);
  if (truth) {
    report["fdp"] = sel.fdp ? json_finite(*sel.fdp) : ordered_json(nullptr);
    report["power"] = sel.power ? json_finite(*sel.power) : ordered_json(nullptr);
    report["truth_missing_count"] = truth_missing;
  }
  report["timing"] = {{"started_utc", started},
                      {"seconds_total",
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};

  std::vector<std::string> paths = reserve_report_paths(opts.output_dir, "selection", {".json"});
  write_text_file(paths[0], report.dump(2) + "\n");
  return paths[0];
}

std::string run_diagnose(const DiagnoseOptions& opts) {
  SimConfig cfg = opts.cell;
  cfg.response = ResponseModel::null_model;
  validate_sim_config(cfg);
  if (opts.t_grid_size < 2) throw_config(Errc::bad_config, "t_grid_size must be at least 2");

  const std::string started = utc_now_string();
  auto t0 = std::chrono::steady_clock::now();

  NullRunOutput nro = run_null_reps(cfg, opts.threads);

  std::vector<double> abs_w(nro.w_samples.data(), nro.w_samples.data() + nro.w_samples.size());
  for (double& v : abs_w) v = std::abs(v);
  std::sort(abs_w.begin(), abs_w.end());
  auto quantile = [&](double u) {
    double idx = u * static_cast<double>(abs_w.size() - 1);
    return abs_w[static_cast<std::size_t>(std::llround(idx))];
  };
  double lo = std::max(quantile(0.50), 1e-12);
  double hi = quantile(0.999);
  if (hi <= lo) hi = lo * (1.0 + 1e-6) + 1e-12;
  VectorXd grid(opts.t_grid_size);
  for (int i = 0; i < opts.t_grid_size; ++i)
    grid(i) = lo + (hi - lo) * static_cast<double>(i) / (opts.t_grid_size - 1.0);

  SymmetryDiag sym = symmetry_ratio_diag(nro.w_samples, grid);
  IndicatorDiag ind = indicator_approx_diag(nro.w_samples, grid);

  std::optional<LocalizationDiag> loc;
  if (cfg.statistic != StatKind::distance_corr) {
    std::vector<BivariateTail> tails;
    if (cfg.statistic == StatKind::marginal_corr)
      tails = marginal_corr_tails(nro.sigma, nro.r);
    else
      tails = regression_score_tails(nro.sigma, nro.r, static_cast<double>(cfg.n), 1.0,
                                     cfg.statistic == StatKind::ols_diff);
    DiagnosticsConfig dcfg;
    dcfg.t_grid = grid;
    dcfg.q = cfg.q;
    dcfg.a_n = opts.a_n;
    dcfg.num_features = cfg.p;
    dcfg.replications = cfg.replications;
    dcfg.seed = cfg.seed;
    loc = threshold_localization_diag(nro.selections, dcfg, tails);
  }

  double null_fdr = 0.0;
  for (const auto& s : nro.selections)
    if (!s.selected.empty()) null_fdr += 1.0;
  null_fdr /= static_cast<double>(nro.selections.size());

  ordered_json report;
  report["schema_version"] = "1.0";
  ordered_json cfg_echo = cell_to_json(cfg);
  cfg_echo["a_n"] = opts.a_n;
  cfg_echo["t_grid_size"] = opts.t_grid_size;
  report["config"] = std::move(cfg_echo);
  ordered_json tg = ordered_json::array();
  for (Eigen::Index i = 0; i < grid.size(); ++i) tg.push_back(grid(i));
  report["t_grid"] = std::move(tg);

  ordered_json sj;
  {
    ordered_json ratio = ordered_json::array(), se = ordered_json::array();
    ordered_json numf = ordered_json::array(), denf = ordered_json::array();
    ordered_json adm = ordered_json::array();
    for (Eigen::Index i = 0; i < grid.size(); ++i) {
      ratio.push_back(json_finite(sym.ratio(i)));
      se.push_back(json_finite(sym.std_error(i)));
      numf.push_back(sym.num_freq(i));
      denf.push_back(sym.den_freq(i));
      adm.push_back(static_cast<bool>(sym.admissible[static_cast<std::size_t>(i)]));
    }
    sj["ratio"] = std::move(ratio);
    sj["std_error"] = std::move(se);
    sj["num_freq"] = std::move(numf);
    sj["den_freq"] = std::move(denf);
    sj["admissible"] = std::move(adm);
    sj["sup_abs_dev"] = json_finite(sym.sup_abs_dev);
    sj["sup_abs_dev_se"] = json_finite(sym.sup_abs_dev_se);
    sj["any_admissible"] = sym.any_admissible;
  }
  report["symmetry"] = std::move(sj);

  ordered_json ij;
  {
    ordered_json pf = ordered_json::array(), adm = ordered_json::array();
    for (Eigen::Index i = 0; i < grid.size(); ++i) {
      pf.push_back(ind.pooled_freq(i));
      adm.push_back(static_cast<bool>(ind.admissible[static_cast<std::size_t>(i)]));
    }
    ordered_json prs = ordered_json::array();
    for (Eigen::Index r = 0; r < ind.per_rep_sup.size(); ++r)
      prs.push_back(json_finite(ind.per_rep_sup(r)));
    ij["pooled_freq"] = std::move(pf);
    ij["admissible"] = std::move(adm);
    ij["per_rep_sup"] = std::move(prs);
    ij["mean_sup"] = json_finite(ind.mean_sup);
    ij["any_admissible"] = ind.any_admissible;
  }
  report["indicator"] = std::move(ij);

  if (loc) {
    report["localization"] = {{"alpha_n", json_finite(loc->alpha_n)},
                              {"exceed_frequency", loc->exceed_frequency},
                              {"exceed_count", loc->exceed_count},
                              {"total", loc->total}};
  } else {
    report["localization"] = nullptr;
  }
  report["null_selection_frequency"] = null_fdr;
  report["timing"] = {{"started_utc", started},
                      {"seconds_total",
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};

  std::vector<std::string> paths = reserve_report_paths(opts.output_dir, "diagnostics", {".json"});
  write_text_file(paths[0], report.dump(2) + "\n");
  return paths[0];
}

}  // namespace knockoffs
