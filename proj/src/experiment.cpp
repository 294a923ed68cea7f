#include "glad/experiment.hpp"

#include <sstream>

#include "binary_io.hpp"
#include "glad/error.hpp"

namespace glad {

namespace {

template <typename F>
auto parse_list(const std::string& key, const std::string& v, F convert) {
  std::vector<decltype(convert(std::string{}))> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      out.push_back(convert(item));
    } catch (const std::exception&) {
      throw ConfigError("experiment: bad element '" + item + "' in " + key);
    }
  }
  if (out.empty()) throw ConfigError("experiment: " + key + " is empty");
  return out;
}

}  // namespace

ExperimentConfig experiment_from_text(std::string_view text) {
  KeyValues all = parse_key_values(text), run, exp;
  for (auto& [k, v] : all) (k.starts_with("experiment.") ? exp : run)[k] = v;
  ExperimentConfig cfg;
  cfg.base = apply_key_values(RunConfig{}, run);
  cfg.eval.perturbations = {Perturbation::ori, Perturbation::obj};
  for (auto& [k, v] : exp) {
    try {
      if (k == "experiment.seeds") {
        cfg.seeds = parse_list(k, v, [](const std::string& s) { return static_cast<std::uint64_t>(std::stoull(s)); });
      } else if (k == "experiment.lambdas") {
        cfg.lambdas = parse_list(k, v, [](const std::string& s) { return std::stod(s); });
      } else if (k == "experiment.early_ablation") {
        cfg.early_ablation = v == "1" || v == "true";
      } else if (k == "experiment.suite") {
        cfg.eval.suite = v;
      } else if (k == "experiment.suite_seed") {
        cfg.eval.suite_seed = std::stoull(v);
      } else if (k == "experiment.n_tasks") {
        cfg.eval.n_tasks = std::stoi(v);
      } else if (k == "experiment.episodes") {
        cfg.eval.episodes = std::stoi(v);
      } else {
        throw ConfigError("experiment: unknown key '" + k + "'");
      }
    } catch (const std::invalid_argument&) {
      throw ConfigError("experiment: bad value for " + k);
    } catch (const std::out_of_range&) {
      throw ConfigError("experiment: value out of range for " + k);
    }
  }
  if (!is_suite(cfg.eval.suite)) throw ConfigError("experiment: unknown suite " + cfg.eval.suite);
  for (double l : cfg.lambdas)
    if (l < 0) throw ConfigError("experiment: lambdas must be >= 0");
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return experiment_from_text(binio::read_file(path));
}

RunConfig experiment_run_config(const ExperimentConfig& cfg, std::uint64_t seed, double lambda, FusionMode fusion) {
  RunConfig rc = cfg.base;
  rc.train.stage = Stage::pretrain;
  rc.train.seed = seed;
  rc.model.lambda = lambda;
  rc.model.fusion = fusion;
  return rc;
}

RunResult run_single(const ExperimentConfig& cfg, std::uint64_t seed, double lambda, FusionMode fusion) {
  const RunConfig rc = experiment_run_config(cfg, seed, lambda, fusion);
  Trainer<float> trainer(rc);
  RunResult res{seed, lambda, fusion, 0, 0, 0};
  trainer.run(rc.train.steps, [&](const StepMetrics& m) { res.final_l_vla = m.l_vla; });
  EvalSpec spec = cfg.eval;
  spec.distribution = training_distribution(rc);
  spec.perturbations = {Perturbation::ori, Perturbation::obj};
  const auto report = run_eval(model_policy(trainer.model()), spec);
  res.ori = report.row(Perturbation::ori).success_pct();
  res.obj = report.row(Perturbation::obj).success_pct();
  return res;
}

std::vector<RunResult> run_experiment(const ExperimentConfig& cfg,
                                      const std::function<void(const RunResult&)>& on_result) {
  std::vector<RunResult> out;
  for (auto seed : cfg.seeds) {
    for (double lambda : cfg.lambdas) {
      out.push_back(run_single(cfg, seed, lambda, FusionMode::late_hidden));
      if (on_result) on_result(out.back());
    }
    if (cfg.early_ablation) {
      out.push_back(run_single(cfg, seed, cfg.base.model.lambda, FusionMode::early_weighted));
      if (on_result) on_result(out.back());
    }
  }
  return out;
}

std::string results_csv(const std::vector<RunResult>& results) {
  std::ostringstream os;
  os << "seed,lambda,fusion,ori_pct,obj_pct,final_l_vla\n";
  for (const auto& r : results) {
    os << r.seed << ',' << format_double(r.lambda) << ',' << to_string(r.fusion) << ',' << format_double(r.ori) << ','
       << format_double(r.obj) << ',' << format_double(r.final_l_vla) << '\n';
  }
  return os.str();
}

std::vector<PairSummary> summarize_pairs(const std::vector<RunResult>& results) {
  std::vector<PairSummary> out;
  std::vector<double> lambdas;
  for (const auto& r : results) {
    if (r.fusion == FusionMode::late_hidden && r.lambda > 0 &&
        std::find(lambdas.begin(), lambdas.end(), r.lambda) == lambdas.end()) {
      lambdas.push_back(r.lambda);
    }
  }
  for (double lambda : lambdas) {
    PairSummary s;
    s.lambda = lambda;
    for (const auto& d : results) {
      if (d.fusion != FusionMode::late_hidden || d.lambda != lambda) continue;
      for (const auto& b : results) {
        if (b.fusion != FusionMode::late_hidden || b.lambda != 0.0 || b.seed != d.seed) continue;
        s.pairs += 1;
        s.mean_obj_delta += d.obj - b.obj;
        s.mean_ori_delta += d.ori - b.ori;
        s.pairs_ahead += d.obj > b.obj ? 1 : 0;
      }
    }
    if (s.pairs > 0) {
      s.mean_obj_delta /= s.pairs;
      s.mean_ori_delta /= s.pairs;
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace glad
