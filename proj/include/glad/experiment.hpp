#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "glad/config.hpp"
#include "glad/eval.hpp"

namespace glad {

// Matched-pair robustness experiment: every seed is trained once per lambda
// (late fusion) and optionally once with early fusion, then evaluated on the
// Ori and Obj suites.
struct ExperimentConfig {
  RunConfig base;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<double> lambdas{0.0, 0.1};
  bool early_ablation = true;
  EvalSpec eval;
};

// Experiment files are run-config key/value text plus "experiment.*" keys:
// experiment.seeds, experiment.lambdas (comma lists), experiment.early_ablation,
// experiment.suite, experiment.suite_seed, experiment.n_tasks,
// experiment.episodes.
ExperimentConfig experiment_from_text(std::string_view text);
ExperimentConfig load_experiment_config(const std::string& path);

struct RunResult {
  std::uint64_t seed = 0;
  double lambda = 0;
  FusionMode fusion = FusionMode::late_hidden;
  double ori = 0;
  double obj = 0;
  double final_l_vla = 0;
};

RunConfig experiment_run_config(const ExperimentConfig& cfg, std::uint64_t seed, double lambda, FusionMode fusion);

RunResult run_single(const ExperimentConfig& cfg, std::uint64_t seed, double lambda, FusionMode fusion);

std::vector<RunResult> run_experiment(const ExperimentConfig& cfg,
                                      const std::function<void(const RunResult&)>& on_result = {});

std::string results_csv(const std::vector<RunResult>& results);

struct PairSummary {
  double lambda = 0;
  double mean_obj_delta = 0;  // distilled - baseline
  double mean_ori_delta = 0;
  int pairs_ahead = 0;        // seeds with distilled Obj > baseline Obj
  int pairs = 0;
};

// Compares each lambda > 0 with lambda == 0 (late fusion) over shared seeds.
std::vector<PairSummary> summarize_pairs(const std::vector<RunResult>& results);

}  // namespace glad
