// Acceptance gate: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "glad/checkpoint.hpp"
#include "glad/eval.hpp"
#include "glad/experiment.hpp"
#include "glad/lora.hpp"
#include "glad/task.hpp"
#include "glad/teacher.hpp"
#include "glad/train.hpp"

namespace fs = std::filesystem;
using namespace glad;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

int sh(const std::string& cmd) {
  const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
  return rc;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::path(GLAD_ACCEPT_SCRATCH) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::map<std::string, std::vector<float>> snapshot(const NamedTensors<float>& params) {
  std::map<std::string, std::vector<float>> out;
  for (const auto& [name, t] : params) out[name] = {t.data().begin(), t.data().end()};
  return out;
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  double worst = 0;
  for (std::uint64_t seed : {0, 1}) worst = std::max(worst, gradcheck_objective(seed, 0.5));
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60,
          "max rel err " + fmt(worst) + " (< 1e-4), " + fmt(secs, 3) + " s (< 60 s)"};
}

Outcome lambda_zero_equivalence() {
  const auto t0 = Clock::now();
  const auto dir = scratch("c2");
  RunConfig cfg;
  cfg.model.lambda = 0.0;
  cfg.train.steps = 200;
  Trainer<float> trainer(cfg);
  trainer.run(200);
  std::ostringstream mine;
  for (const auto& [name, t] : trainer.model().named_parameters()) {
    mine << name << '\n';
    mine.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  const auto probe_out = dir / "nodistill.bin";
  const int rc = sh(std::string(GLAD_NODISTILL_PROBE) + " 200 " + probe_out.string());
  const bool same = rc == 0 && slurp(probe_out) == mine.str();
  const double secs = seconds_since(t0);
  return {same && secs < 120, std::string(same ? "bitwise identical" : "parameters differ") + " after 200 steps, " +
                                   fmt(secs, 3) + " s (< 120 s)"};
}

Outcome freeze_contracts() {
  RunConfig cfg;
  cfg.train.steps = 100;
  auto [scene, task] = generate_scene(11);
  const auto proj_before = teacher_projection(cfg.model.d_teacher, cfg.model.teacher_seed);
  const auto feat_before = teacher_features(scene, 1, cfg.model.teacher_tokens, cfg.model.d_teacher, cfg.model.teacher_seed);

  Trainer<float> pre(cfg);
  bool no_teacher_params = true;
  for (const auto& [name, t] : pre.model().named_parameters()) no_teacher_params = no_teacher_params && !name.starts_with("teacher");
  pre.run(100);
  const bool teacher_stage1 = teacher_projection(cfg.model.d_teacher, cfg.model.teacher_seed) == proj_before &&
                              teacher_features(scene, 1, cfg.model.teacher_tokens, cfg.model.d_teacher,
                                               cfg.model.teacher_seed) == feat_before;

  RunConfig post = cfg;
  post.train.stage = Stage::posttrain;
  Trainer<float> tr(post, pre.model());
  const auto before = snapshot(tr.model().named_parameters());
  tr.run(100);
  const auto after = snapshot(tr.model().named_parameters());
  int dense = 0, dense_changed = 0, trainable_changed = 0, trainable = 0;
  for (const auto& [name, v] : before) {
    if (posttrain_trainable(name)) {
      ++trainable;
      trainable_changed += after.at(name) != v;
    } else {
      ++dense;
      dense_changed += after.at(name) != v;
    }
  }
  const bool teacher_stage2 = teacher_projection(cfg.model.d_teacher, cfg.model.teacher_seed) == proj_before &&
                              teacher_features(scene, 1, cfg.model.teacher_tokens, cfg.model.d_teacher,
                                               cfg.model.teacher_seed) == feat_before;
  const bool ok = no_teacher_params && teacher_stage1 && teacher_stage2 && dense_changed == 0 && trainable_changed > 0;
  return {ok, "teacher unchanged in both stages: " + std::string(teacher_stage1 && teacher_stage2 ? "yes" : "no") +
                  "; stage-2 dense tensors changed " + std::to_string(dense_changed) + "/" + std::to_string(dense) +
                  ", trainable tensors updated " + std::to_string(trainable_changed) + "/" + std::to_string(trainable) +
                  " after 100 steps"};
}

Outcome pooling_oracle() {
  long cases = 0, mismatches = 0, identity_fail = 0;
  for (std::size_t L = 1; L <= 64; ++L) {
    GeometryFeatureMap m{2, L, 3, {}};
    Rng rng(L);
    for (std::size_t i = 0; i < 2 * L * 3; ++i) m.data.push_back(static_cast<float>(rng.normal()));
    for (std::size_t n = 1; n <= L; ++n) {
      const auto p = adaptive_pool(m, n);
      ++cases;
      for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t d = 0; d < 3; ++d) {
            double acc = 0;
            int count = 0;
            for (std::size_t i = 0; i < L; ++i) {
              if (i * n < (j + 1) * L && (i + 1) * n > j * L) {
                acc += m.at(t, i, d);
                ++count;
              }
            }
            if (p.at(t, j, d) != static_cast<float>(acc / count)) ++mismatches;
          }
    }
    if (!(adaptive_pool(m, L) == m)) ++identity_fail;
  }
  return {mismatches == 0 && identity_fail == 0,
          std::to_string(cases) + " (L, N_p) pairs, " + std::to_string(mismatches) + " mismatches, " +
              std::to_string(identity_fail) + " identity failures"};
}

Outcome loss_oracles() {
  Rng rng(5);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(16 * 32), b(16 * 32);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    double brute = 0;
    for (std::size_t i = 0; i < a.size(); ++i) brute += (a[i] - b[i]) * (a[i] - b[i]);
    brute /= static_cast<double>(a.size());
    const double got = distill_loss(Tensor<double>({16, 32}, a), Tensor<double>({16, 32}, b)).item();
    worst = std::max(worst, std::abs(got - brute) / brute);
  }
  const int target[] = {2};
  const double ce = cross_entropy(Tensor<double>({1, 4}, {0.7, 0.7, 0.7, 0.7}), target).item();
  const double ce_err = std::abs(ce - std::log(4.0));
  return {worst <= 1e-6 && ce_err <= 1e-9,
          "distill rel err " + fmt(worst) + " (<= 1e-6), |CE(uniform,4) - ln 4| = " + fmt(ce_err) + " (<= 1e-9)"};
}

Outcome lora_contracts() {
  const ModelConfig cfg;
  const TrainConfig tc;
  Backbone<double> model(cfg, 3);
  auto [scene, task] = generate_scene(4);
  const auto img = render(scene, cfg.image_size);
  TokenSequence<double> seq{model.encode_image(img), task.instruction,
                            {task.gold_actions.begin(), task.gold_actions.end() - 1}};
  const auto base = model.forward(seq).logits;
  model.install_lora(tc.lora_rank, tc.lora_alpha, 9);
  const auto wrapped = model.forward(seq).logits;
  const bool bitwise = std::equal(base.data().begin(), base.data().end(), wrapped.data().begin());

  bool counts = true;
  std::size_t layers = 0;
  for (auto& blk : model.blocks)
    for (Linear<double>* l : {&blk.wq, &blk.wk, &blk.wv, &blk.wo}) {
      ++layers;
      counts = counts && l->adapter &&
               l->adapter->trainable_count() ==
                   static_cast<std::size_t>(tc.lora_rank) * (l->in_features() + l->out_features());
      Rng rng(layers);
      for (auto& v : l->adapter->b.mutable_data()) v = 0.05 * rng.normal();
    }
  const auto adapted = model.forward(seq).logits;
  model.merge_lora();
  const auto merged = model.forward(seq).logits;
  double worst = 0;
  for (std::size_t i = 0; i < adapted.numel(); ++i)
    worst = std::max(worst, std::abs(adapted[i] - merged[i]) / std::max(1.0, std::abs(adapted[i])));

  const bool ok = bitwise && counts && worst < 1e-6;
  return {ok, std::string("zero-init forward ") + (bitwise ? "bitwise equal" : "differs") +
                  "; merged vs adapter max rel diff " + fmt(worst) + " (< 1e-6); r(d_in+d_out) count on " +
                  std::to_string(layers) + " wrapped layers: " + (counts ? "match" : "mismatch")};
}

Outcome trainability() {
  const auto t0 = Clock::now();
  RunConfig cfg;
  cfg.train.dataset_size = 64;
  cfg.train.steps = 2000;
  Trainer<float> tr(cfg);
  double first = -1, last = 0;
  std::uint64_t reached = 0;
  tr.run(2000, [&](const StepMetrics& m) {
    if (first < 0) first = m.l_vla;
    last = m.l_vla;
    if (!reached && m.l_vla < 0.1 * first) reached = m.step;
  });
  const double secs = seconds_since(t0);
  return {reached > 0 && last < 0.1 * first && secs < 900,
          "initial l_vla " + fmt(first) + ", final " + fmt(last) + " (< " + fmt(0.1 * first) + "), first below at step " +
              std::to_string(reached) + ", " + fmt(secs, 4) + " s (< 900 s)"};
}

std::vector<RunResult> g_experiment;
double g_lambda = 0;

Outcome robustness_effect() {
  const auto t0 = Clock::now();
  const ExperimentConfig cfg = load_experiment_config(GLAD_ROBUSTNESS_CONFIG);
  g_experiment = run_experiment(cfg, [](const RunResult& r) {
    std::cerr << "  seed " << r.seed << " lambda " << r.lambda << ' ' << to_string(r.fusion) << ": ori " << r.ori
              << " obj " << r.obj << '\n';
  });
  const double secs = seconds_since(t0);
  std::ofstream(fs::path(GLAD_ACCEPT_SCRATCH) / "robustness_results.csv") << results_csv(g_experiment);
  g_lambda = cfg.base.model.lambda;
  bool ok = false, found = false;
  std::string detail;
  for (const auto& s : summarize_pairs(g_experiment)) {
    const bool pass = s.pairs == 5 && s.mean_obj_delta >= 5 && s.pairs_ahead >= 4 && std::abs(s.mean_ori_delta) <= 3;
    if (s.lambda == g_lambda) {
      found = true;
      ok = pass;
    }
    detail += "lambda " + fmt(s.lambda) + (s.lambda == g_lambda ? " (default)" : "") + ": Obj delta " +
              fmt(s.mean_obj_delta) + ", ahead " + std::to_string(s.pairs_ahead) + "/" + std::to_string(s.pairs) +
              ", Ori delta " + fmt(s.mean_ori_delta) + (pass ? " passes" : " misses") + "; ";
  }
  if (!found) detail += "default lambda " + fmt(g_lambda) + " not in the sweep; ";
  ok = ok && secs <= 4 * 3600;
  return {ok, detail + "need Obj delta >= 5, ahead >= 4/5, |Ori delta| <= 3; " + fmt(secs / 60, 4) +
                  " min incl. ablation (<= 240)"};
}

Outcome ablation_direction() {
  if (g_experiment.empty()) return {false, "needs criterion 8 in the same run"};
  double late = 0, early = 0;
  int nl = 0, ne = 0;
  for (const auto& r : g_experiment) {
    if (r.lambda != g_lambda) continue;
    if (r.fusion == FusionMode::late_hidden) {
      late += r.obj;
      ++nl;
    } else {
      early += r.obj;
      ++ne;
    }
  }
  if (nl == 0 || ne == 0 || nl != ne) return {false, "missing late or early runs"};
  late /= nl;
  early /= ne;
  return {late >= early, "mean Obj late " + fmt(late) + " vs early " + fmt(early) + " over " + std::to_string(nl) +
                             " seeds at lambda " + fmt(g_lambda)};
}

Outcome determinism() {
  const auto dir = scratch("c10");
  const std::string glad = GLAD_CLI;
  const std::string flags = " --steps 100 --seed 4";
  bool ok = true;
  std::string detail;
  ok = ok && sh(glad + " pretrain" + flags + " --out " + (dir / "a").string()) == 0;
  ok = ok && sh(glad + " pretrain" + flags + " --out " + (dir / "b").string()) == 0;
  const bool same_metrics = ok && slurp(dir / "a/metrics.csv") == slurp(dir / "b/metrics.csv") &&
                            !slurp(dir / "a/metrics.csv").empty();
  ok = ok && sh(glad + " pretrain --steps 50 --seed 4 --out " + (dir / "half").string()) == 0;
  ok = ok && sh(glad + " pretrain --resume " + (dir / "half/checkpoint.bin").string() + " --steps 100 --out " +
                (dir / "half").string()) == 0;
  const bool resume = ok && slurp(dir / "half/checkpoint.bin") == slurp(dir / "a/checkpoint.bin") &&
                      slurp(dir / "half/metrics.csv") == slurp(dir / "a/metrics.csv");

  const std::string bytes = slurp(dir / "a/checkpoint.bin");
  const bool ckpt_rt = !bytes.empty() && encode_checkpoint(load_trainer((dir / "a/checkpoint.bin").string())) == bytes;

  auto [scene, task] = generate_scene(21);
  const auto fmap = teacher_features(scene, 3, 64, 32, 7);
  save_teacher_file(fmap, (dir / "t.bin").string());
  const auto back = load_teacher_file((dir / "t.bin").string());
  save_teacher_file(back, (dir / "t2.bin").string());
  const bool teacher_rt = back == fmap && slurp(dir / "t.bin") == slurp(dir / "t2.bin");

  return {same_metrics && resume && ckpt_rt && teacher_rt,
          std::string("metrics repeat: ") + (same_metrics ? "identical" : "DIFFER") + "; 50+50 vs 100: " +
              (resume ? "bitwise" : "DIFFER") + "; checkpoint round trip: " + (ckpt_rt ? "bitwise" : "DIFFER") +
              "; teacher file round trip: " + (teacher_rt ? "bitwise" : "DIFFER")};
}

Outcome eval_sanity() {
  EvalSpec spec;
  const auto oracle = run_eval(oracle_policy(), spec);
  bool oracle_ok = true;
  for (const auto& r : oracle.rows) oracle_ok = oracle_ok && r.successes == r.executed && r.executed == 500;

  EvalSpec rs;
  rs.n_tasks = 100;
  rs.episodes = 1000;
  rs.perturbations = {Perturbation::ori};
  const auto rnd = run_eval(random_policy(16, 4, 77), rs);
  const double n = static_cast<double>(rnd.rows[0].executed);
  const double p = std::pow(1.0 / 16, 4);
  const double sigma = std::sqrt(n * p * (1 - p));
  const double hits = static_cast<double>(rnd.rows[0].successes);
  const bool random_ok = n >= 1e5 && std::abs(hits - n * p) <= 3 * sigma;

  ModelConfig cfg;
  GladModel<float> model(cfg, 5);
  double worst = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto [scene, task] = generate_scene(s);
    const auto dump = attention_dump(model, scene, task, 0, -1, -1);
    std::istringstream is(dump.csv);
    std::string line;
    std::getline(is, line);
    double sum = 0;
    while (std::getline(is, line)) sum += std::stod(line.substr(line.rfind(',') + 1));
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  const bool attn_ok = worst <= 1e-6;
  return {oracle_ok && random_ok && attn_ok,
          std::string("oracle ") + (oracle_ok ? "100% on all 5 suites" : "below 100%") + "; random " +
              fmt(hits, 6) + " hits in " + fmt(n, 7) + " episodes vs expected " + fmt(n * p) + " +- 3 sigma " +
              fmt(3 * sigma) + "; attention CSV max |sum-1| " + fmt(worst)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient oracle", gradient_oracle},
      {"lambda=0 equivalence", lambda_zero_equivalence},
      {"frozen teacher and stage-2 freeze", freeze_contracts},
      {"adaptive pooling oracle", pooling_oracle},
      {"distill / cross-entropy oracles", loss_oracles},
      {"LoRA contracts", lora_contracts},
      {"trainability smoke", trainability},
      {"robustness effect", robustness_effect},
      {"ablation direction", ablation_direction},
      {"determinism and persistence", determinism},
      {"evaluation sanity", eval_sanity},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  if (wanted.count(9)) wanted.insert(8);

  fs::create_directories(GLAD_ACCEPT_SCRATCH);
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!wanted.empty() && !wanted.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
