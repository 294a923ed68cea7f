// Command-line front end for training, evaluation and diagnostics.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "glad/checkpoint.hpp"
#include "glad/error.hpp"
#include "glad/eval.hpp"
#include "glad/experiment.hpp"
#include "glad/train.hpp"

namespace fs = std::filesystem;
using namespace glad;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::optional<double> lambda;
  std::optional<int> align_layer;
  std::string fusion;
  std::string out = "out";
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "canonical key=value config file");
  cmd->add_option("--seed", o.seed, "seed (overrides GLAD_SEED and the config)");
  cmd->add_option("--steps", o.steps, "training steps");
  cmd->add_option("--lambda", o.lambda, "distillation weight");
  cmd->add_option("--align-layer", o.align_layer, "1-based layer aligned to the teacher");
  cmd->add_option("--fusion", o.fusion, "late or early")->check(CLI::IsMember({"late", "early"}));
  cmd->add_option("--out", o.out, "output directory");
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("GLAD_SEED");
  if (!s || !*s) return std::nullopt;
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError(std::string("GLAD_SEED is not an unsigned integer: ") + s);
  }
}

RunConfig resolve(const CommonOptions& o, RunConfig cfg) {
  if (!o.config.empty()) cfg = load_run_config(o.config, cfg);
  if (auto s = env_seed()) cfg.train.seed = *s;
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.steps) cfg.train.steps = *o.steps;
  if (o.lambda) cfg.model.lambda = *o.lambda;
  if (o.align_layer) cfg.model.align_layer = *o.align_layer;
  if (!o.fusion.empty()) cfg.model.fusion = parse_fusion(o.fusion);
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

int train_command(Trainer<float>& trainer, const fs::path& out) {
  ensure_dir(out);
  const auto& cfg = trainer.config();
  write_text(out / "config.txt", to_canonical_text(cfg));
  const bool resuming = trainer.steps_done() > 0;
  std::ofstream metrics(out / "metrics.csv", resuming ? std::ios::app : std::ios::trunc);
  if (!metrics) throw IoError("cannot write " + (out / "metrics.csv").string());
  if (!resuming) metrics << metrics_header() << '\n';
  const int every = cfg.train.checkpoint_every;
  trainer.run(static_cast<std::uint64_t>(cfg.train.steps), [&](const StepMetrics& m) {
    metrics << metrics_row(m) << '\n';
    if (m.step % 100 == 0) std::cerr << "step " << m.step << " l_vla " << m.l_vla << " l_distill " << m.l_distill << '\n';
    if (every > 0 && m.step % static_cast<std::uint64_t>(every) == 0) {
      save_checkpoint(trainer, (out / ("checkpoint_" + std::to_string(m.step) + ".bin")).string());
    }
  });
  metrics.flush();
  save_checkpoint(trainer, (out / "checkpoint.bin").string());
  std::cout << "wrote " << (out / "checkpoint.bin").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"glad: geometry-distilled toy vision-language-action policy"};
  app.require_subcommand(1);

  CommonOptions pre_opts, post_opts, exp_opts;
  std::string resume, init;
  auto* pretrain = app.add_subcommand("pretrain", "stage 1: full training with geometry distillation");
  add_common(pretrain, pre_opts);
  pretrain->add_option("--resume", resume, "continue from a checkpoint");

  auto* posttrain = app.add_subcommand("posttrain", "stage 2: LoRA adaptation from a stage-1 checkpoint");
  add_common(posttrain, post_opts);
  posttrain->add_option("--init", init, "stage-1 checkpoint")->required();

  std::string checkpoint, suite = "all", policy = "model";
  std::uint64_t suite_seed = 1234;
  int n_tasks = 10, episodes = 50;
  std::string out_eval = "out";
  auto* eval = app.add_subcommand("eval", "success rates on the perturbation suites");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file");
  eval->add_option("--suite", suite, "all, plain, depth or relational");
  eval->add_option("--suite-seed", suite_seed, "seed of the task list");
  eval->add_option("--n-tasks", n_tasks, "tasks per suite");
  eval->add_option("--episodes", episodes, "episodes per task");
  eval->add_option("--policy", policy, "model, oracle or random")->check(CLI::IsMember({"model", "oracle", "random"}));
  eval->add_option("--out", out_eval, "output directory");

  std::string baseline, distilled, out_cmp;
  auto* compare = app.add_subcommand("compare", "side-by-side robustness report of two eval reports");
  compare->add_option("--baseline", baseline, "report.csv of the baseline")->required();
  compare->add_option("--distilled", distilled, "report.csv of the distilled model")->required();
  compare->add_option("--out", out_cmp, "output CSV (stdout if omitted)");

  std::uint64_t scene_seed = 0;
  int layer = 0, head = -1, query = -1;
  std::string out_attn = "out";
  auto* attn = app.add_subcommand("attnmap", "attention heat map over the image patches");
  attn->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  attn->add_option("--scene-seed", scene_seed, "scene to render");
  attn->add_option("--layer", layer, "1-based layer (0 = last)");
  attn->add_option("--head", head, "head index (-1 = average)");
  attn->add_option("--query", query, "query position (-1 = first action slot)");
  attn->add_option("--out", out_attn, "output directory");

  std::uint64_t gc_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full objective");
  gradcheck->add_option("--seed", gc_seed, "seed of the toy model");

  std::uint64_t corpus_seed = 0;
  int corpus_count = 100;
  std::string corpus_out;
  auto* corpus = app.add_subcommand("gen-corpus", "dump generated scenes and tasks as text records");
  corpus->add_option("--seed", corpus_seed, "first scene seed");
  corpus->add_option("--count", corpus_count, "number of records");
  corpus->add_option("--out", corpus_out, "output file (stdout if omitted)");

  auto* experiment = app.add_subcommand("experiment", "matched-pair robustness experiment");
  add_common(experiment, exp_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*pretrain) {
      if (!resume.empty()) {
        Trainer<float> trainer = load_trainer(resume);
        if (pre_opts.steps) trainer.set_total_steps(*pre_opts.steps);
        return train_command(trainer, pre_opts.out);
      }
      RunConfig cfg = resolve(pre_opts, RunConfig{});
      cfg.train.stage = Stage::pretrain;
      Trainer<float> trainer(cfg);
      return train_command(trainer, pre_opts.out);
    }
    if (*posttrain) {
      RunConfig pre_cfg;
      GladModel<float> model = load_model(init, &pre_cfg);
      RunConfig cfg = pre_cfg;
      cfg.train.steps = TrainConfig{}.steps;
      cfg = resolve(post_opts, cfg);
      cfg.train.stage = Stage::posttrain;
      if (cfg.model.fusion != pre_cfg.model.fusion) throw ConfigError("posttrain: fusion mode must match the stage-1 model");
      Trainer<float> trainer(cfg, model);
      return train_command(trainer, post_opts.out);
    }
    if (*eval) {
      EvalSpec spec;
      spec.suite = suite;
      spec.suite_seed = suite_seed;
      spec.n_tasks = n_tasks;
      spec.episodes = episodes;
      Policy pol;
      std::optional<GladModel<float>> model;
      RunConfig cfg;
      std::string tag = policy;
      if (policy == "model") {
        if (checkpoint.empty()) throw ConfigError("eval: --checkpoint is required for the model policy");
        model.emplace(load_model(checkpoint, &cfg));
        pol = model_policy(*model);
        tag = checkpoint;
      } else if (policy == "oracle") {
        pol = oracle_policy();
      } else {
        pol = random_policy(cfg.model.action_codebook, cfg.model.action_len, suite_seed);
      }
      spec.distribution = training_distribution(cfg);
      const auto report = run_eval(pol, spec, tag);
      ensure_dir(out_eval);
      write_text(fs::path(out_eval) / "report.csv", report_csv(report));
      std::cout << report_csv(report);
      return 0;
    }
    if (*compare) {
      const auto a = parse_report_csv(read_text(baseline));
      const auto b = parse_report_csv(read_text(distilled));
      const auto text = robustness_report(a, b);
      if (out_cmp.empty()) std::cout << text;
      else write_text(out_cmp, text);
      return 0;
    }
    if (*attn) {
      RunConfig cfg;
      GladModel<float> model = load_model(checkpoint, &cfg);
      auto [scene, task] = generate_scene(scene_seed, training_distribution(cfg));
      const auto dump = attention_dump(model, scene, task, layer, head, query);
      ensure_dir(out_attn);
      write_attention_dump(dump, (fs::path(out_attn) / "attention.ppm").string(),
                           (fs::path(out_attn) / "attention.csv").string());
      std::cout << dump.csv;
      return 0;
    }
    if (*gradcheck) {
      const double err = gradcheck_objective(gc_seed);
      std::cout << "max relative error " << err << '\n';
      return err < 1e-4 ? 0 : 1;
    }
    if (*corpus) {
      std::string text;
      for (int i = 0; i < corpus_count; ++i) {
        auto [scene, task] = generate_scene(corpus_seed + static_cast<std::uint64_t>(i));
        text += dump_record(scene, task) + '\n';
      }
      if (corpus_out.empty()) std::cout << text;
      else write_text(corpus_out, text);
      return 0;
    }
    if (*experiment) {
      if (exp_opts.config.empty()) throw ConfigError("experiment: --config is required");
      ExperimentConfig cfg = load_experiment_config(exp_opts.config);
      if (exp_opts.steps) cfg.base.train.steps = *exp_opts.steps;
      if (exp_opts.align_layer) cfg.base.model.align_layer = *exp_opts.align_layer;
      if (exp_opts.lambda) cfg.base.model.lambda = *exp_opts.lambda;
      ensure_dir(exp_opts.out);
      const fs::path out = fs::path(exp_opts.out) / "results.csv";
      std::vector<RunResult> done;
      run_experiment(cfg, [&](const RunResult& r) {
        done.push_back(r);
        write_text(out, results_csv(done));
        std::cerr << "seed " << r.seed << " lambda " << r.lambda << ' ' << to_string(r.fusion) << " ori " << r.ori
                  << " obj " << r.obj << '\n';
      });
      std::cout << results_csv(done);
      for (const auto& s : summarize_pairs(done)) {
        std::cout << "lambda " << s.lambda << ": mean obj delta " << s.mean_obj_delta << ", mean ori delta "
                  << s.mean_ori_delta << ", ahead in " << s.pairs_ahead << "/" << s.pairs << " pairs\n";
      }
      return 0;
    }
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
