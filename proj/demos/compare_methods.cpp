// Trains Baseline and L2 Init side by side on a short synthetic
// input-shift stream and prints per-task online accuracy.
//
//   compare_methods [num_tasks] [seed]

#include <cstdio>
#include <cstdlib>
#include <string>

#include "plasticity/plasticity.hpp"

int main(int argc, char** argv) {
  using namespace plasticity;
  const std::string tasks = argc > 1 ? argv[1] : "20";
  const std::string seed = argc > 2 ? argv[2] : "0";

  RunRecord runs[2];
  const char* methods[2] = {"baseline", "l2_init"};
  for (int i = 0; i < 2; ++i) {
    const RunConfig cfg = parse_config(std::string("problem = synthetic_permuted\nmethod = ") + methods[i] +
                                       "\nnum_tasks = " + tasks + "\nseed = " + seed);
    runs[i] = run_experiment(cfg);
    if (!runs[i].complete) {
      std::fprintf(stderr, "%s failed: %s\n", methods[i], runs[i].failure.c_str());
      return EXIT_FAILURE;
    }
  }

  std::printf("%5s  %10s  %10s  %8s  %8s\n", "task", "baseline", "l2_init", "srank_b", "srank_l");
  for (std::size_t t = 0; t < runs[0].tasks.size(); ++t) {
    const TaskMetrics &b = runs[0].tasks[t], &l = runs[1].tasks[t];
    std::printf("%5zu  %10.4f  %10.4f  %8.1f  %8.1f\n", t + 1, b.avg_online_task_accuracy,
                l.avg_online_task_accuracy, b.feature_srank, l.feature_srank);
  }
  std::printf("total  %10.4f  %10.4f\n", runs[0].total_avg_online_accuracy, runs[1].total_avg_online_accuracy);
}
