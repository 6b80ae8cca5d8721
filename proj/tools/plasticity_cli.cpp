// Command-line front end: run, sweep, gradcheck, inspect.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "plasticity/gradcheck.hpp"
#include "plasticity/plasticity.hpp"

namespace {

using namespace plasticity;

enum ExitCode { kOk = 0, kUsage = 1, kIo = 2, kNumerical = 3 };

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Registers one `--<key>` flag per config key; set values become overrides.
void add_override_flags(CLI::App* cmd, std::map<std::string, std::string>& values) {
  for (const auto& key : config_keys()) {
    if (key == "out_dir" || key == "seed" || key == "method") continue;
    cmd->add_option("--" + key, values[key], "override '" + key + "'");
  }
}

ConfigEntries collect_overrides(const CLI::App* cmd, const std::map<std::string, std::string>& values) {
  ConfigEntries out;
  for (const auto& [key, value] : values) {
    if (cmd->count("--" + key) > 0) out.emplace_back(key, value, 0);
  }
  return out;
}

void print_task_row(const TaskMetrics& t) {
  std::printf("task %4zu  acc %.4f  |theta| %.5f  srank %.2f\n", t.task_index, t.avg_online_task_accuracy,
              t.weight_magnitude, t.feature_srank);
  std::fflush(stdout);
}

int cmd_run(const std::string& config_path, const ConfigEntries& overrides, bool quiet) {
  const std::string text = config_path.empty() ? std::string() : read_text(config_path);
  const RunConfig cfg = parse_config(text, overrides);
  std::printf("problem %s  method %s  optimizer %s  alpha %g  seed %llu  K=%zu M=%zu\n",
              std::string(problem_name(cfg.problem)).c_str(), std::string(method_name(cfg.method.method)).c_str(),
              std::string(optimizer_name(cfg.optimizer)).c_str(), cfg.alpha,
              static_cast<unsigned long long>(cfg.seed), cfg.num_tasks, cfg.resolved_steps_per_task());
  const RunRecord rec = run_experiment(cfg, quiet ? TaskObserver{} : TaskObserver(print_task_row));
  write_outputs(rec, cfg.out_dir);
  std::printf("total average online accuracy %.6f  (%s)\n", rec.total_avg_online_accuracy,
              rec.complete ? "complete" : "INCOMPLETE");
  std::printf("wrote %s\n", (std::filesystem::path(cfg.out_dir) / "task_metrics.csv").string().c_str());
  if (!rec.complete) {
    std::fprintf(stderr, "run aborted: %s\n", rec.failure.c_str());
    return kNumerical;
  }
  return kOk;
}

int cmd_sweep(const std::string& config_path, const ConfigEntries& overrides, std::size_t seeds,
              std::size_t workers) {
  const std::string text = config_path.empty() ? std::string() : read_text(config_path);
  const RunConfig base = parse_config(text, overrides);
  SweepSpec spec = SweepSpec::standard_grid(base, seeds);
  spec.workers = workers;
  std::printf("sweeping %s: %zu cells x %zu seeds\n", std::string(method_name(base.method.method)).c_str(),
              spec.cells.size(), seeds);
  const SweepResult result = run_sweep(spec);
  write_outputs(result, base.out_dir);
  for (std::size_t c = 0; c < result.cells.size(); ++c) {
    const CellOutcome& cell = result.cells[c];
    std::printf("%s cell %2zu  alpha %-7g lambda %-7g shrink %-7g noise %-7g r %-7g  mean %s\n",
                result.winner && *result.winner == c ? "*" : " ", c, cell.cell.alpha, cell.cell.lambda,
                cell.cell.shrink, cell.cell.noise, cell.cell.replacement_rate,
                cell.failed ? ("failed: " + cell.error).c_str() : format_double(cell.mean_total).c_str());
  }
  std::printf("wrote %s\n", (std::filesystem::path(base.out_dir) / "sweep.csv").string().c_str());
  return result.winner ? kOk : kNumerical;
}

int cmd_gradcheck(std::size_t draws, std::uint64_t seed) {
  double worst = 0.0;
  for (const auto& row : run_gradcheck_suite(draws, seed)) {
    std::printf("%-8s  %8zu coordinates (%zu skipped at kinks)  max relative error %.3e\n", row.network.c_str(),
                row.checked, row.skipped_kinks, row.max_rel_error);
    worst = std::max(worst, row.max_rel_error);
  }
  std::printf("max relative error %.3e (%s)\n", worst, worst < 1e-4 ? "ok" : "FAILED");
  return worst < 1e-4 ? kOk : kNumerical;
}

int cmd_inspect(const std::string& path) {
  const nlohmann::json j = nlohmann::json::parse(read_text(path));
  std::cout << j.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual-learning plasticity experiments"};
  app.require_subcommand(1);

  std::map<std::string, std::string> run_values;
  std::string run_config, run_out, run_method;
  std::uint64_t run_seed = 0;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "run one experiment");
  run->add_option("--config", run_config, "flat key = value config file");
  run->add_option("--seed", run_seed, "run seed");
  run->add_option("--out", run_out, "output directory");
  run->add_option("--method", run_method, "plasticity method");
  run->add_flag("--quiet", quiet, "suppress per-task progress");
  add_override_flags(run, run_values);

  std::map<std::string, std::string> sweep_values;
  std::string sweep_config, sweep_out, sweep_method;
  std::size_t seeds = 3, workers = 1;
  std::uint64_t sweep_seed = 0;
  auto* sweep = app.add_subcommand("sweep", "hyper-parameter sweep for one method");
  sweep->add_option("--config", sweep_config, "flat key = value config file");
  sweep->add_option("--method", sweep_method, "plasticity method")->required();
  sweep->add_option("--seeds", seeds, "seeds per grid cell")->check(CLI::PositiveNumber);
  sweep->add_option("--seed", sweep_seed, "first seed");
  sweep->add_option("--workers", workers, "parallel runs")->check(CLI::PositiveNumber);
  sweep->add_option("--out", sweep_out, "output directory");
  add_override_flags(sweep, sweep_values);

  std::size_t draws = 20;
  std::uint64_t gc_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of backpropagation");
  gradcheck->add_option("--draws", draws, "random (params, batch) draws per network");
  gradcheck->add_option("--seed", gc_seed, "seed");

  std::string summary_path;
  auto* inspect = app.add_subcommand("inspect", "pretty-print a summary.json");
  inspect->add_option("--summary", summary_path, "summary.json path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*run) {
      ConfigEntries ov = collect_overrides(run, run_values);
      if (run->count("--method")) ov.emplace_back("method", run_method, 0);
      if (run->count("--seed")) ov.emplace_back("seed", std::to_string(run_seed), 0);
      if (run->count("--out")) ov.emplace_back("out_dir", run_out, 0);
      return cmd_run(run_config, ov, quiet);
    }
    if (*sweep) {
      ConfigEntries ov = collect_overrides(sweep, sweep_values);
      ov.emplace_back("method", sweep_method, 0);
      if (sweep->count("--seed")) ov.emplace_back("seed", std::to_string(sweep_seed), 0);
      if (sweep->count("--out")) ov.emplace_back("out_dir", sweep_out, 0);
      return cmd_sweep(sweep_config, ov, seeds, workers);
    }
    if (*gradcheck) return cmd_gradcheck(draws, gc_seed);
    if (*inspect) return cmd_inspect(summary_path);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kUsage;
  } catch (const ArgumentError& e) {
    std::cerr << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kIo;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  }
  return kUsage;
}
