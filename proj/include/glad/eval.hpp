#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "glad/task.hpp"
#include "glad/train.hpp"

namespace glad {

// Maps a list of episodes to one decoded action sequence per episode.
using Policy = std::function<std::vector<std::vector<int>>(const std::vector<std::pair<Scene, Task>>&)>;

Policy model_policy(const GladModel<float>& model);
Policy oracle_policy();
// Uniform random action ids; deterministic for a seed and call order.
Policy random_policy(int codebook, int action_len, std::uint64_t seed);

struct EvalSpec {
  std::string suite = "all";
  std::uint64_t suite_seed = 1234;
  int n_tasks = 10;
  int episodes = 50;  // per task
  std::vector<Perturbation> perturbations{Perturbation::ori, Perturbation::obj, Perturbation::pos,
                                          Perturbation::sem, Perturbation::task};
  TaskDistribution distribution;  // appearance statistics of Ori scenes
};

struct EvalRow {
  std::string suite;
  Perturbation perturbation = Perturbation::ori;
  int n_tasks = 0;
  int episodes = 0;        // per task
  long long executed = 0;  // episodes actually scored
  long long successes = 0;
  double success_pct() const { return executed ? 100.0 * successes / executed : 0.0; }
};

struct EvalReport {
  std::string model_tag;
  std::uint64_t suite_seed = 0;
  std::vector<EvalRow> rows;
  const EvalRow& row(Perturbation p) const;
};

// Episode e of task t under a perturbation, as scored by run_eval.
std::pair<Scene, Task> eval_episode(const EvalSpec& spec, const InstructionSpec& task, int task_index,
                                    int episode, Perturbation kind);

EvalReport run_eval(const Policy& policy, const EvalSpec& spec, const std::string& model_tag = "");

std::string report_csv(const EvalReport& report);
EvalReport parse_report_csv(const std::string& text);

// Side-by-side comparison of a baseline and a distilled report.
std::string robustness_report(const EvalReport& baseline, const EvalReport& distilled);

struct AttentionDump {
  std::vector<double> weights;  // N_p, sums to 1
  int width = 0, height = 0;
  std::string pixmap;           // P6 bytes
  std::string csv;
};

// Last layer, head-averaged, queried from the first action position unless
// overridden (head < 0 averages heads; query < 0 uses the first action slot).
AttentionDump attention_dump(const GladModel<float>& model, const Scene& scene, const Task& task,
                             int layer, int head, int query);
void write_attention_dump(const AttentionDump& dump, const std::string& pixmap_path,
                          const std::string& csv_path);

}  // namespace glad
