#include <doctest.h>

#include <cmath>

#include "glad/error.hpp"
#include "glad/eval.hpp"
#include "glad/experiment.hpp"

using namespace glad;

TEST_CASE("oracle policy solves every perturbation") {
  EvalSpec spec;
  spec.n_tasks = 6;
  spec.episodes = 20;
  const auto rep = run_eval(oracle_policy(), spec);
  REQUIRE(rep.rows.size() == 5);
  for (const auto& r : rep.rows) {
    CHECK(r.executed == 120);
    CHECK(r.success_pct() == 100.0);
  }
}

TEST_CASE("episodes are deterministic per suite seed") {
  EvalSpec spec;
  const auto tasks = suite_tasks(spec.suite, spec.suite_seed, 3);
  for (int k = 0; k < kNumPerturbations; ++k) {
    const auto p = static_cast<Perturbation>(k);
    auto a = eval_episode(spec, tasks[1], 1, 4, p);
    auto b = eval_episode(spec, tasks[1], 1, 4, p);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    CHECK(a.second.tag == p);
  }
  auto c = eval_episode(spec, tasks[1], 1, 5, Perturbation::ori);
  CHECK_FALSE(c.first == eval_episode(spec, tasks[1], 1, 4, Perturbation::ori).first);
}

TEST_CASE("random policy hits the chance rate on a small codebook") {
  // K = 2, N = 3: chance 1/8 over 4000 episodes, checked within 4 sigma.
  Rng rng(3);
  auto pol = random_policy(2, 3, 11);
  std::vector<std::pair<Scene, Task>> eps(4000);
  const auto out = pol(eps);
  long hits = 0;
  for (const auto& a : out) hits += a == std::vector<int>{1, 0, 1} ? 1 : 0;
  const double p = 1.0 / 8, n = 4000;
  CHECK(std::abs(hits - n * p) <= 4 * std::sqrt(n * p * (1 - p)));
}

TEST_CASE("report csv round-trips") {
  EvalReport rep;
  rep.rows.push_back({"all", Perturbation::ori, 10, 50, 500, 431});
  rep.rows.push_back({"all", Perturbation::obj, 10, 50, 500, 17});
  const auto text = report_csv(rep);
  CHECK(text == "suite,perturbation,n_tasks,episodes,success_pct\nall,ori,10,50,86.2\nall,obj,10,50,3.4\n");
  CHECK(report_csv(parse_report_csv(text)) == text);
  CHECK_THROWS_AS(parse_report_csv("bad\n"), FormatError);
  CHECK_THROWS_AS(parse_report_csv("suite,perturbation,n_tasks,episodes,success_pct\nall,ori,10\n"), FormatError);
}

TEST_CASE("robustness report compares matched rows") {
  EvalReport a, b;
  a.rows.push_back({"all", Perturbation::ori, 10, 50, 500, 400});
  a.rows.push_back({"all", Perturbation::obj, 10, 50, 500, 300});
  b.rows.push_back({"all", Perturbation::ori, 10, 50, 500, 405});
  b.rows.push_back({"all", Perturbation::obj, 10, 50, 500, 350});
  CHECK(robustness_report(a, b) ==
        "suite,perturbation,baseline_pct,distilled_pct,delta,distilled_ahead\n"
        "all,ori,80,81,1,1\n"
        "all,obj,60,70,10,1\n");
  b.rows[1].episodes = 20;
  CHECK_THROWS_AS(robustness_report(a, b), ContractError);
}

TEST_CASE("attention dump is a distribution with a matching pixmap") {
  ModelConfig cfg = gradcheck_config();
  GladModel<float> model(cfg, 2);
  auto [scene, task] = generate_scene(8);
  const auto d = attention_dump(model, scene, task, 0, -1, -1);
  REQUIRE(d.weights.size() == 4);
  double s = 0;
  for (double w : d.weights) s += w;
  CHECK(std::abs(s - 1.0) < 1e-6);
  const std::string header = "P6\n16 16\n255\n";
  CHECK(d.pixmap.substr(0, header.size()) == header);
  CHECK(d.pixmap.size() == header.size() + 16 * 16 * 3);
  CHECK(d.csv.rfind("patch,row,col,weight\n", 0) == 0);
}

TEST_CASE("experiment config parsing") {
  const auto cfg = experiment_from_text(
      "train.steps=40\nmodel.lambda=1\nexperiment.seeds=3,4\nexperiment.lambdas=0,0.01\nexperiment.early_ablation=0\n"
      "experiment.suite=depth\nexperiment.n_tasks=2\nexperiment.episodes=5\n");
  CHECK(cfg.base.train.steps == 40);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(cfg.lambdas == std::vector<double>{0, 0.01});
  CHECK_FALSE(cfg.early_ablation);
  CHECK(cfg.eval.suite == "depth");
  CHECK(experiment_run_config(cfg, 4, 0.01, FusionMode::early_weighted).train.seed == 4);
  CHECK_THROWS_AS(experiment_from_text("experiment.bogus=1\n"), ConfigError);
  CHECK_THROWS_AS(experiment_from_text("experiment.lambdas=0,-1\n"), ConfigError);
  CHECK_THROWS_AS(experiment_from_text("experiment.suite=colors\n"), ConfigError);
}

TEST_CASE("pair summaries pick matching seeds") {
  std::vector<RunResult> r{
      {0, 0.0, FusionMode::late_hidden, 90, 60, 0}, {0, 0.1, FusionMode::late_hidden, 91, 70, 0},
      {1, 0.0, FusionMode::late_hidden, 88, 65, 0}, {1, 0.1, FusionMode::late_hidden, 87, 64, 0},
      {1, 0.1, FusionMode::early_weighted, 80, 10, 0},
  };
  const auto s = summarize_pairs(r);
  REQUIRE(s.size() == 1);
  CHECK(s[0].pairs == 2);
  CHECK(s[0].pairs_ahead == 1);
  CHECK(s[0].mean_obj_delta == doctest::Approx(4.5));
  CHECK(s[0].mean_ori_delta == doctest::Approx(0.0));
  CHECK(results_csv(r).rfind("seed,lambda,fusion,ori_pct,obj_pct,final_l_vla\n0,0,late_hidden,90,60,0\n", 0) == 0);
}
