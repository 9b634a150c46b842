#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "knockoffs/cli_io.hpp"

namespace {

// Raw string forms of the enum-valued cell flags; resolved after parsing.
struct CellFlags {
  std::string stat = "mc";
  std::string law = "binary";
  std::string moments = "analytic";
  std::string response;
  int setting = 1;
  CLI::Option* response_opt = nullptr;
  std::vector<CLI::Option*> all;
};

CellFlags add_cell_flags(CLI::App* cmd, knockoffs::SimConfig& cell, bool with_response) {
  CellFlags f;
  auto track = [&](CLI::Option* o) {
    f.all.push_back(o);
    return o;
  };
  track(cmd->add_option("--n", cell.n, "observations per replication"));
  track(cmd->add_option("--p", cell.p, "feature count"));
  track(cmd->add_option("--rho", cell.rho, "banded precision correlation in [0,1)"));
  track(cmd->add_option("--stat", f.stat, "statistic: mc | ols | dl | dc"));
  track(cmd->add_option("--q", cell.q, "target FDR level in (0,1)"));
  track(cmd->add_option("--law", f.law, "covariate law: binary | gaussian | rademacher | student_t"));
  track(cmd->add_option("--dof", cell.dof, "degrees of freedom for student_t (>= 3)"));
  track(cmd->add_option("--reps", cell.replications, "replication count"));
  track(cmd->add_option("--seed", cell.seed, "64-bit random seed"));
  track(cmd->add_option("--moments", f.moments, "moment source for iid laws: analytic | train"));
  track(cmd->add_option("--train-size", cell.train_size, "training rows for estimated moments"));
  track(cmd->add_option("--k", cell.k, "nonzero coefficient count"));
  track(cmd->add_option("--magnitude", cell.magnitude, "nonzero coefficient magnitude"));
  track(cmd->add_option("--lambda-scale", cell.lambda_scale, "scale on the initial lasso rate"));
  track(cmd->add_flag("--knockoff-plus", cell.knockoff_plus, "use the +1 numerator threshold"));
  if (with_response) {
    track(cmd->add_option("--setting", f.setting, "response setting: 1 = linear, 2 = tanh"));
    f.response_opt = track(cmd->add_option("--response", f.response,
                                           "response model: linear | tanh_nonlinear | null"));
    track(cmd->add_flag("--beta-redraw", cell.beta_redraw,
                        "redraw coefficients every replication"));
  }
  return f;
}

void resolve_cell_flags(const CellFlags& f, knockoffs::SimConfig& cell, bool with_response) {
  cell.statistic = knockoffs::parse_stat_kind(f.stat);
  cell.law = knockoffs::parse_covariate_law(f.law);
  cell.moments = knockoffs::parse_moment_mode(f.moments);
  if (with_response) {
    if (f.response_opt != nullptr && f.response_opt->count() > 0)
      cell.response = knockoffs::parse_response_model(f.response);
    else
      cell.response = knockoffs::response_from_setting(f.setting);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Approximate Gaussian knockoffs: simulation, selection, and diagnostics"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run simulation cells and write FDR/power reports");
  std::string sim_config_path;
  knockoffs::SimConfig sim_cell;
  std::string sim_out = ".";
  int sim_threads = 1;
  auto* sim_cfg_opt = sim->add_option("--config", sim_config_path,
                                      "JSON config with a cells array (replaces cell flags)");
  CellFlags sim_flags = add_cell_flags(sim, sim_cell, true);
  for (CLI::Option* o : sim_flags.all) o->excludes(sim_cfg_opt);
  auto* sim_out_opt = sim->add_option("--out", sim_out, "output directory for reports");
  auto* sim_threads_opt = sim->add_option("--threads", sim_threads, "worker threads");

  // select
  auto* sel = app.add_subcommand("select", "Run the knockoff filter on a CSV dataset");
  knockoffs::SelectOptions sel_opts;
  std::string sel_stat = "mc";
  sel->add_option("--data", sel_opts.csv_path, "input CSV with a y column")->required();
  sel->add_option("--stat", sel_stat, "statistic: mc | ols | dl | dc");
  sel->add_option("--q", sel_opts.q, "target FDR level in (0,1)");
  sel->add_flag("--preprocess", sel_opts.preprocess,
                "drop rows with missing y, then rare binary columns");
  sel->add_option("--min-count", sel_opts.min_count, "minimum column sum kept by preprocessing");
  sel->add_option("--subsample", sel_opts.subsample_m, "rows to subsample (0 keeps all)");
  sel->add_option("--seed", sel_opts.seed, "64-bit random seed");
  sel->add_option("--ridge", sel_opts.ridge, "ridge added to the sample covariance diagonal");
  sel->add_option("--lambda-scale", sel_opts.lambda_scale, "scale on the initial lasso rate");
  sel->add_flag("--knockoff-plus", sel_opts.knockoff_plus, "use the +1 numerator threshold");
  sel->add_option("--truth", sel_opts.truth_path, "file of true column names, one per line");
  sel->add_option("--out", sel_opts.output_dir, "output directory for the report");

  // diagnose
  auto* diag = app.add_subcommand("diagnose",
                                  "Monte-Carlo null diagnostics for the asymptotic conditions");
  knockoffs::DiagnoseOptions diag_opts;
  CellFlags diag_flags = add_cell_flags(diag, diag_opts.cell, false);
  diag->add_option("--a-n", diag_opts.a_n, "planted strong-signal count in alpha_n");
  diag->add_option("--t-grid-size", diag_opts.t_grid_size, "number of diagnostic grid points");
  diag->add_option("--out", diag_opts.output_dir, "output directory for the report");
  diag->add_option("--threads", diag_opts.threads, "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (sim->parsed()) {
      knockoffs::SimulateOptions opts;
      if (sim_cfg_opt->count() > 0) {
        opts = knockoffs::parse_simulate_config(sim_config_path);
        if (sim_out_opt->count() > 0) opts.output_dir = sim_out;
        if (sim_threads_opt->count() > 0) opts.threads = sim_threads;
      } else {
        resolve_cell_flags(sim_flags, sim_cell, true);
        opts.cells.push_back(sim_cell);
        opts.output_dir = sim_out;
        opts.threads = sim_threads;
      }
      knockoffs::ReportPaths rp = knockoffs::run_simulate(opts);
      std::printf("%s\n%s\n", rp.csv_path.c_str(), rp.json_path.c_str());
    } else if (sel->parsed()) {
      sel_opts.statistic = knockoffs::parse_stat_kind(sel_stat);
      std::string path = knockoffs::run_select(sel_opts);
      std::printf("%s\n", path.c_str());
    } else if (diag->parsed()) {
      resolve_cell_flags(diag_flags, diag_opts.cell, false);
      std::string path = knockoffs::run_diagnose(diag_opts);
      std::printf("%s\n", path.c_str());
    }
  } catch (const knockoffs::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(e.domain());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 0;
}
