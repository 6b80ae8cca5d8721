#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "plasticity/config.hpp"
#include "plasticity/metrics.hpp"
#include "plasticity/nn.hpp"
#include "plasticity/optim.hpp"
#include "plasticity/problems.hpp"
#include "plasticity/rng.hpp"

#ifndef PLASTICITY_VERSION
#define PLASTICITY_VERSION "0.1.0"
#endif

namespace plasticity {

/// Shortest round-trip decimal form; independent of the global locale.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["problem"] = problem_name(c.problem);
  j["method"] = method_name(c.method.method);
  j["optimizer"] = optimizer_name(c.optimizer);
  j["alpha"] = c.alpha;
  j["lambda"] = c.method.lambda;
  j["shrink"] = c.method.shrink;
  j["noise"] = c.method.noise;
  j["replacement_rate"] = c.method.replacement_rate;
  j["maturity"] = c.method.maturity;
  j["utility_decay"] = c.method.utility_decay;
  j["utility"] = utility_name(c.method.utility);
  j["seed"] = c.seed;
  j["dataset_size"] = c.dataset_size;
  j["num_tasks"] = c.num_tasks;
  j["epochs_per_task"] = c.epochs_per_task;
  j["steps_per_task"] = c.resolved_steps_per_task();
  j["batch_size"] = c.batch_size;
  j["hidden_widths"] = c.hidden_widths;
  j["probe_size"] = c.probe_size;
  j["input_dim"] = c.input_dim;
  j["synthetic_spread"] = c.synthetic_spread;
  j["synthetic_classes"] = c.synthetic_classes;
  j["mnist_images"] = c.mnist_images;
  j["mnist_labels"] = c.mnist_labels;
  j["cifar_files"] = c.cifar_files;
  return j;
}

inline std::uint64_t config_hash(const RunConfig& c) {
  const std::string text = config_to_json(c).dump();
  return fnv1a_digest(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

struct TaskMetrics {
  std::size_t task_index = 0;
  std::size_t start_step = 0;
  double avg_online_task_accuracy = 0.0;
  double weight_magnitude = 0.0;
  double feature_srank = 0.0;

  friend bool operator==(const TaskMetrics&, const TaskMetrics&) = default;
};

struct RunRecord {
  RunConfig config;
  std::vector<double> step_accuracy;  // a_t for every executed step
  std::vector<TaskMetrics> tasks;
  double total_avg_online_accuracy = 0.0;
  bool complete = false;
  std::string failure;
  double wall_seconds = 0.0;
  std::vector<std::pair<std::string, std::string>> dataset_digests;  // path, hex FNV-1a
};

/// Task stream for a config; reads dataset files (before any training).
inline TaskStream build_stream(const RunConfig& c, std::vector<std::pair<std::string, std::string>>* digests = nullptr) {
  auto note = [&](const std::string& path) {
    if (!digests) return;
    std::ostringstream hex;
    hex << std::hex << fnv1a_digest(read_file_bytes(path));
    digests->emplace_back(path, hex.str());
  };
  const RngStream root(c.seed);
  TaskStream s;
  s.transform = is_random_label(c.problem) ? TaskTransform::RandomLabels : TaskTransform::PermuteInputs;
  s.num_tasks = c.num_tasks;
  s.batch_size = c.batch_size;
  s.num_classes = c.num_classes();
  s.seed = c.seed;

  Dataset full;
  switch (c.problem) {
    case ProblemKind::PermutedMNIST:
    case ProblemKind::RandomLabelMNIST: {
      if (c.mnist_images.empty() || c.mnist_labels.empty()) {
        throw IoError("problem " + std::string(problem_name(c.problem)) + " needs mnist_images and mnist_labels");
      }
      full = load_mnist(c.mnist_images, c.mnist_labels);
      note(c.mnist_images);
      note(c.mnist_labels);
      full.images = full.images.reshaped({full.size(), full.sample_volume()});
      break;
    }
    case ProblemKind::RandomLabelCIFAR: {
      if (c.cifar_files.empty()) throw IoError("problem random_label_cifar needs cifar_files");
      std::vector<Dataset> parts;
      for (const auto& f : c.cifar_files) {
        parts.push_back(load_cifar10_bin(f));
        note(f);
      }
      full = concatenate(parts);
      break;
    }
    case ProblemKind::SyntheticPermuted:
    case ProblemKind::SyntheticRandomLabel:
      full = make_synthetic_dataset(c.input_dim, c.synthetic_classes, c.dataset_size, c.synthetic_spread, root.split("synthetic"));
      break;
  }
  if (is_synthetic(c.problem)) {
    s.base = std::make_shared<const Dataset>(std::move(full));
  } else {
    RngStream sub = root.split("subsample");
    s.base = std::make_shared<const Dataset>(subsample(full, c.dataset_size, sub));
  }
  s.steps_per_task = c.resolved_steps_per_task();
  return s;
}

/// Called after every completed task with the metrics row just recorded.
using TaskObserver = std::function<void(const TaskMetrics&)>;

/// Runs the full K·M-step protocol. Per step: fetch batch, forward, record
/// online accuracy, backprop, method update. Numerical failure stops the run
/// and returns a record flagged incomplete.
inline RunRecord run_experiment(const RunConfig& config, const TaskObserver& observer = {}) {
  const auto started = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.config = config;
  config.method.validate();
  const TaskStream stream = build_stream(config, &rec.dataset_digests);
  const NetworkSpec spec = config.network();

  const RngStream root(config.seed);
  RngStream init_rng = root.split("init");
  RngStream method_rng = root.split("method");
  const RngStream probe_root = root.split("probe");

  LearnerState learner;
  learner.params = init_params(spec, init_rng);
  learner.optimizer = config.optimizer == OptimizerKind::SGD ? OptimizerState::sgd(config.alpha)
                                                             : OptimizerState::adam(config.alpha, learner.params);
  if (config.method.method == Method::ContinualBackprop) learner.cbp = CbpState::for_network(spec);

  const std::size_t steps = stream.steps_per_task;
  rec.step_accuracy.reserve(stream.total_steps());
  std::size_t global_step = 0;
  try {
    for (std::size_t i = 0; i < stream.num_tasks; ++i) {
      const Task task = make_task(stream, i);
      BatchSampler sampler(task);
      for (std::size_t s = 0; s < steps; ++s, ++global_step) {
        const Batch batch = sampler.batch(s);
        const ForwardResult fr = forward(spec, learner.params, batch.images);
        rec.step_accuracy.push_back(batch_accuracy(fr.logits, batch.labels));
        const LossAndGrad lg = loss_and_grad(spec, learner.params, fr.cache, fr.logits, batch.labels);
        if (!std::isfinite(lg.loss)) throw NumericalError("non-finite training loss", global_step);
        apply_method_step(config.method, spec, learner, lg.grads, fr.cache, method_rng);
      }

      TaskMetrics row;
      row.task_index = i;
      row.start_step = task.start_step;
      row.avg_online_task_accuracy =
          avg_online_task_accuracy(rec.step_accuracy, task.start_step, steps);
      row.weight_magnitude = mean_param_magnitude(learner.params);
      if (!std::isfinite(row.weight_magnitude) || row.weight_magnitude > 1e6) {
        throw NumericalError("mean parameter magnitude diverged", global_step);
      }
      RngStream probe_rng = probe_root.split(i);
      std::vector<std::size_t> order = probe_rng.permutation(task.data.size());
      order.resize(std::min(config.probe_size, order.size()));
      const Dataset probe = select(task.data, order);
      const SrankProbe sr = feature_srank_probe(spec, learner.params, probe.images);
      if (sr.degenerate) std::clog << "warning: all-zero feature matrix at task " << i << ", srank recorded as 0\n";
      row.feature_srank = sr.mean;
      rec.tasks.push_back(row);
      if (observer) observer(row);
    }
    rec.complete = true;
  } catch (const NumericalError& e) {
    rec.failure = e.what();
  }
  if (!rec.step_accuracy.empty()) rec.total_avg_online_accuracy = total_avg_online_accuracy(rec.step_accuracy);
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return rec;
}

// ---------------------------------------------------------------------------
// Output

inline constexpr const char* kTaskMetricsHeader =
    "task_index,start_step,avg_online_task_accuracy,weight_magnitude,feature_srank";

inline std::string task_metrics_csv(const RunRecord& rec) {
  std::string out = std::string(kTaskMetricsHeader) + "\n";
  for (const TaskMetrics& t : rec.tasks) {
    out += std::to_string(t.task_index) + "," + std::to_string(t.start_step) + "," +
           format_double(t.avg_online_task_accuracy) + "," + format_double(t.weight_magnitude) + "," +
           format_double(t.feature_srank) + "\n";
  }
  return out;
}

/// Inverse of task_metrics_csv.
inline std::vector<TaskMetrics> parse_task_metrics_csv(std::string_view text) {
  std::vector<TaskMetrics> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kTaskMetricsHeader) throw FormatError("task_metrics.csv: bad header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f = detail::split_list(line);
    if (f.size() != 5) throw FormatError("task_metrics.csv: expected 5 fields in '" + line + "'");
    TaskMetrics t;
    t.task_index = detail::parse_number<std::size_t>("task_index", f[0], rows.size() + 2);
    t.start_step = detail::parse_number<std::size_t>("start_step", f[1], rows.size() + 2);
    t.avg_online_task_accuracy = detail::parse_number<double>("avg_online_task_accuracy", f[2], rows.size() + 2);
    t.weight_magnitude = detail::parse_number<double>("weight_magnitude", f[3], rows.size() + 2);
    t.feature_srank = detail::parse_number<double>("feature_srank", f[4], rows.size() + 2);
    rows.push_back(t);
  }
  return rows;
}

inline nlohmann::json summary_json(const RunRecord& rec) {
  nlohmann::json j;
  j["total_avg_online_accuracy"] = rec.total_avg_online_accuracy;
  j["complete"] = rec.complete;
  if (!rec.complete) j["failure"] = rec.failure;
  j["seed"] = rec.config.seed;
  j["config"] = config_to_json(rec.config);
  std::ostringstream hash;
  hash << std::hex << config_hash(rec.config);
  j["config_hash"] = hash.str();
  j["num_tasks_completed"] = rec.tasks.size();
  j["steps_executed"] = rec.step_accuracy.size();
  j["wall_clock_seconds"] = rec.wall_seconds;
  j["version"] = PLASTICITY_VERSION;
  nlohmann::json digests = nlohmann::json::object();
  for (const auto& [path, hex] : rec.dataset_digests) digests[path] = hex;
  j["dataset_digests"] = digests;
  return j;
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace detail

/// Writes task_metrics.csv and summary.json (and step_accuracy.csv when
/// log_steps is set) into `dir`.
inline void write_outputs(const RunRecord& rec, const std::filesystem::path& dir) {
  detail::ensure_dir(dir);
  detail::write_text(dir / "task_metrics.csv", task_metrics_csv(rec));
  detail::write_text(dir / "summary.json", summary_json(rec).dump(2) + "\n");
  if (rec.config.log_steps) {
    std::string steps = "step,accuracy\n";
    for (std::size_t t = 0; t < rec.step_accuracy.size(); ++t) {
      steps += std::to_string(t) + "," + format_double(rec.step_accuracy[t]) + "\n";
    }
    detail::write_text(dir / "step_accuracy.csv", steps);
  }
}

// ---------------------------------------------------------------------------
// Sweeps

/// One point of a hyper-parameter grid.
struct SweepCell {
  double alpha = 0.0;
  double lambda = 0.0;
  double shrink = 0.0;
  double noise = 0.0;
  double replacement_rate = 0.0;
};

struct SweepSpec {
  RunConfig base;
  std::vector<SweepCell> cells;
  std::size_t seeds = 3;
  std::size_t workers = 1;

  /// The standard grid for `base`'s method and optimizer: step sizes
  /// {1e-2, 1e-3} (SGD) or {1e-3, 1e-4} (Adam); λ, s, σ over {1e-2..1e-5};
  /// r over {1e-4, 1e-5, 1e-6}.
  static SweepSpec standard_grid(const RunConfig& base, std::size_t seeds = 3) {
    SweepSpec spec;
    spec.base = base;
    spec.seeds = seeds;
    const std::vector<double> alphas = base.optimizer == OptimizerKind::SGD ? std::vector<double>{1e-2, 1e-3}
                                                                            : std::vector<double>{1e-3, 1e-4};
    const std::vector<double> strengths{1e-2, 1e-3, 1e-4, 1e-5};
    const std::vector<double> rates{1e-4, 1e-5, 1e-6};
    for (double a : alphas) {
      switch (base.method.method) {
        case Method::L2Init:
        case Method::L2:
        case Method::L2InitResample:
          for (double l : strengths) spec.cells.push_back({a, l, 0, 0, 0});
          break;
        case Method::ShrinkPerturb:
          for (double s : strengths) {
            for (double n : strengths) spec.cells.push_back({a, 0, s, n, 0});
          }
          break;
        case Method::ContinualBackprop:
          for (double r : rates) spec.cells.push_back({a, 0, 0, 0, r});
          break;
        default:
          spec.cells.push_back({a, 0, 0, 0, 0});
      }
    }
    return spec;
  }

  RunConfig cell_config(std::size_t cell, std::size_t seed_index) const {
    RunConfig c = base;
    const SweepCell& h = cells.at(cell);
    c.alpha = h.alpha;
    c.method.lambda = h.lambda;
    c.method.shrink = h.shrink;
    c.method.noise = h.noise;
    c.method.replacement_rate = h.replacement_rate;
    c.seed = base.seed + seed_index;
    return c;
  }
};

struct CellOutcome {
  SweepCell cell;
  std::vector<std::uint64_t> seeds;
  std::vector<double> totals;  // per seed, NaN when that seed failed
  double mean_total = 0.0;
  bool failed = false;
  std::string error;
};

struct SweepResult {
  Method method = Method::Baseline;
  std::vector<CellOutcome> cells;
  std::optional<std::size_t> winner;
};

/// Index of the cell with the largest mean total accuracy among non-failed
/// cells; ties prefer smaller λ, s, σ, r, then smaller α.
inline std::optional<std::size_t> select_winner(const std::vector<CellOutcome>& cells) {
  std::optional<std::size_t> best;
  auto key = [](const SweepCell& c) {
    return std::make_tuple(c.lambda, c.shrink, c.noise, c.replacement_rate, c.alpha);
  };
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].failed || !std::isfinite(cells[i].mean_total)) continue;
    if (!best) {
      best = i;
      continue;
    }
    const CellOutcome& b = cells[*best];
    if (cells[i].mean_total > b.mean_total ||
        (cells[i].mean_total == b.mean_total && key(cells[i].cell) < key(b.cell))) {
      best = i;
    }
  }
  return best;
}

using RunFunction = std::function<RunRecord(const RunConfig&)>;

/// Runs every (cell, seed) pair, fanning out over `spec.workers` threads.
/// Each run is sequential; results land in fixed slots so output order does
/// not depend on scheduling.
inline SweepResult run_sweep(const SweepSpec& spec, const RunFunction& runner = {}) {
  const RunFunction run = runner ? runner : [](const RunConfig& c) { return run_experiment(c); };
  const std::size_t jobs = spec.cells.size() * spec.seeds;
  std::vector<std::optional<double>> totals(jobs);
  std::vector<std::string> errors(jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      const RunConfig c = spec.cell_config(j / spec.seeds, j % spec.seeds);
      try {
        const RunRecord r = run(c);
        if (r.complete) {
          totals[j] = r.total_avg_online_accuracy;
        } else {
          errors[j] = r.failure;
        }
      } catch (const std::exception& e) {
        errors[j] = e.what();
      }
    }
  };
  const std::size_t nthreads = std::max<std::size_t>(1, std::min(spec.workers, jobs));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
  }

  SweepResult result;
  result.method = spec.base.method.method;
  for (std::size_t cell = 0; cell < spec.cells.size(); ++cell) {
    CellOutcome out;
    out.cell = spec.cells[cell];
    double sum = 0.0;
    for (std::size_t s = 0; s < spec.seeds; ++s) {
      const std::size_t j = cell * spec.seeds + s;
      out.seeds.push_back(spec.base.seed + s);
      if (totals[j]) {
        out.totals.push_back(*totals[j]);
        sum += *totals[j];
      } else {
        out.totals.push_back(std::nan(""));
        out.failed = true;
        if (out.error.empty()) out.error = errors[j];
      }
    }
    out.mean_total = out.failed ? std::nan("") : sum / static_cast<double>(spec.seeds);
    result.cells.push_back(std::move(out));
  }
  result.winner = select_winner(result.cells);
  return result;
}

inline constexpr const char* kSweepHeader =
    "cell_index,method,alpha,lambda,shrink,noise,replacement_rate,seed,total_avg_online_accuracy,status";

inline std::string sweep_csv(const SweepResult& result) {
  std::string out = std::string(kSweepHeader) + "\n";
  for (std::size_t c = 0; c < result.cells.size(); ++c) {
    const CellOutcome& cell = result.cells[c];
    for (std::size_t s = 0; s < cell.seeds.size(); ++s) {
      const bool ok = std::isfinite(cell.totals[s]);
      out += std::to_string(c) + "," + std::string(method_name(result.method)) + "," + format_double(cell.cell.alpha) +
             "," + format_double(cell.cell.lambda) + "," + format_double(cell.cell.shrink) + "," +
             format_double(cell.cell.noise) + "," + format_double(cell.cell.replacement_rate) + "," +
             std::to_string(cell.seeds[s]) + "," + (ok ? format_double(cell.totals[s]) : std::string()) + "," +
             (ok ? "ok" : "failed") + "\n";
    }
  }
  return out;
}

inline nlohmann::json sweep_summary_json(const SweepResult& result) {
  nlohmann::json j;
  j["method"] = method_name(result.method);
  j["version"] = PLASTICITY_VERSION;
  nlohmann::json cells = nlohmann::json::array();
  for (const CellOutcome& c : result.cells) {
    nlohmann::json cj{{"alpha", c.cell.alpha},
                      {"lambda", c.cell.lambda},
                      {"shrink", c.cell.shrink},
                      {"noise", c.cell.noise},
                      {"replacement_rate", c.cell.replacement_rate},
                      {"failed", c.failed}};
    if (!c.failed) cj["mean_total_avg_online_accuracy"] = c.mean_total;
    if (!c.error.empty()) cj["error"] = c.error;
    cells.push_back(cj);
  }
  j["cells"] = cells;
  if (result.winner) {
    j["winner"] = *result.winner;
  } else {
    j["winner"] = nullptr;
  }
  return j;
}

inline void write_outputs(const SweepResult& result, const std::filesystem::path& dir) {
  detail::ensure_dir(dir);
  detail::write_text(dir / "sweep.csv", sweep_csv(result));
  detail::write_text(dir / "summary.json", sweep_summary_json(result).dump(2) + "\n");
}

}  // namespace plasticity
