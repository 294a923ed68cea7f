#include "glad/eval.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "binary_io.hpp"
#include "glad/error.hpp"
#include "glad/rng.hpp"

namespace glad {

Policy model_policy(const GladModel<float>& model) {
  return [&model](const std::vector<std::pair<Scene, Task>>& eps) {
    const auto& cfg = model.config();
    const bool need_teacher = model.fusion.has_value();
    auto batch = make_batch<float>(eps, cfg, need_teacher);
    NoGradGuard guard;
    const auto tokens = model.image_tokens(batch.images, batch.size, batch.teacher);
    const auto flat = decode_actions(model.backbone, tokens, batch.instructions, batch.size);
    std::vector<std::vector<int>> out;
    const std::size_t N = cfg.action_len;
    for (std::size_t b = 0; b < batch.size; ++b) out.emplace_back(flat.begin() + b * N, flat.begin() + (b + 1) * N);
    return out;
  };
}

Policy oracle_policy() {
  return [](const std::vector<std::pair<Scene, Task>>& eps) {
    std::vector<std::vector<int>> out;
    for (const auto& [scene, task] : eps) out.push_back(gold_actions(scene, task.spec));
    return out;
  };
}

Policy random_policy(int codebook, int action_len, std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(Rng::derive(seed, "policy.random"));
  return [=](const std::vector<std::pair<Scene, Task>>& eps) {
    std::vector<std::vector<int>> out;
    for (std::size_t i = 0; i < eps.size(); ++i) {
      std::vector<int> a(action_len);
      for (auto& v : a) v = static_cast<int>(rng->below(codebook));
      out.push_back(std::move(a));
    }
    return out;
  };
}

const EvalRow& EvalReport::row(Perturbation p) const {
  for (const auto& r : rows)
    if (r.perturbation == p) return r;
  throw ContractError("report has no row for perturbation " + std::string(perturbation_name(p)));
}

std::pair<Scene, Task> eval_episode(const EvalSpec& spec, const InstructionSpec& task, int task_index,
                                    int episode, Perturbation kind) {
  const std::uint64_t index = static_cast<std::uint64_t>(task_index) * 1000003ULL + episode;
  const std::uint64_t seed = Rng::derive(spec.suite_seed, "eval.episode", index).next_u64();
  Scene scene = generate_scene_for(task, seed, spec.distribution);
  Task t = make_task(scene, task, spec.distribution.instr_len);
  return perturb(scene, t, kind, seed);
}

EvalReport run_eval(const Policy& policy, const EvalSpec& spec, const std::string& model_tag) {
  const auto tasks = suite_tasks(spec.suite, spec.suite_seed, spec.n_tasks);
  EvalReport report;
  report.model_tag = model_tag;
  report.suite_seed = spec.suite_seed;
  for (auto kind : spec.perturbations) {
    EvalRow row{spec.suite, kind, spec.n_tasks, spec.episodes, 0, 0};
    for (int t = 0; t < spec.n_tasks; ++t) {
      std::vector<std::pair<Scene, Task>> eps;
      for (int e = 0; e < spec.episodes; ++e) eps.push_back(eval_episode(spec, tasks[t], t, e, kind));
      const auto decoded = policy(eps);
      if (decoded.size() != eps.size()) throw ContractError("policy returned the wrong number of episodes");
      for (std::size_t i = 0; i < eps.size(); ++i) {
        row.executed += 1;
        row.successes += decoded[i] == eps[i].second.gold_actions ? 1 : 0;
      }
    }
    report.rows.push_back(row);
  }
  return report;
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "suite,perturbation,n_tasks,episodes,success_pct\n";
  for (const auto& r : report.rows) {
    os << r.suite << ',' << perturbation_name(r.perturbation) << ',' << r.n_tasks << ',' << r.episodes << ','
       << format_double(r.success_pct()) << '\n';
  }
  return os.str();
}

EvalReport parse_report_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "suite,perturbation,n_tasks,episodes,success_pct") {
    throw FormatError("eval report: missing or unexpected header at offset 0");
  }
  EvalReport rep;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 5) throw FormatError("eval report: malformed row '" + line + "'");
    EvalRow r;
    r.suite = f[0];
    try {
      r.perturbation = parse_perturbation(f[1]);
      r.n_tasks = std::stoi(f[2]);
      r.episodes = std::stoi(f[3]);
      const double pct = std::stod(f[4]);
      r.executed = static_cast<long long>(r.n_tasks) * r.episodes;
      r.successes = std::llround(pct * static_cast<double>(r.executed) / 100.0);
    } catch (const std::exception&) {
      throw FormatError("eval report: bad field in row '" + line + "'");
    }
    rep.rows.push_back(r);
  }
  return rep;
}

std::string robustness_report(const EvalReport& baseline, const EvalReport& distilled) {
  std::ostringstream os;
  os << "suite,perturbation,baseline_pct,distilled_pct,delta,distilled_ahead\n";
  for (int k = 0; k < kNumPerturbations; ++k) {
    const auto p = static_cast<Perturbation>(k);
    auto find = [&](const EvalReport& r) -> const EvalRow* {
      for (const auto& row : r.rows)
        if (row.perturbation == p) return &row;
      return nullptr;
    };
    const EvalRow* a = find(baseline);
    const EvalRow* b = find(distilled);
    if (!a && !b) continue;
    if (!a || !b || a->suite != b->suite || a->n_tasks != b->n_tasks || a->episodes != b->episodes) {
      throw ContractError("robustness_report: suites differ at perturbation " + std::string(perturbation_name(p)));
    }
    const double delta = b->success_pct() - a->success_pct();
    os << a->suite << ',' << perturbation_name(p) << ',' << format_double(a->success_pct()) << ','
       << format_double(b->success_pct()) << ',' << format_double(delta) << ',' << (delta > 0 ? 1 : 0) << '\n';
  }
  return os.str();
}

AttentionDump attention_dump(const GladModel<float>& model, const Scene& scene, const Task& task, int layer,
                             int head, int query) {
  const auto& cfg = model.config();
  if (layer == 0) layer = cfg.n_layers;
  const std::size_t q = query < 0 ? static_cast<std::size_t>(cfg.action_query_pos(0)) : static_cast<std::size_t>(query);
  auto batch = make_batch<float>({{scene, task}}, cfg, model.fusion.has_value());
  NoGradGuard guard;
  const auto tokens = model.image_tokens(batch.images, 1, batch.teacher);
  const auto map = attention_map(model.backbone, tokens, batch.instructions, layer, head, q);

  AttentionDump d;
  d.weights.assign(map.begin(), map.end());
  const int H = cfg.image_size, P = cfg.patch_size, G = H / P;
  d.width = d.height = H;
  const double peak = *std::max_element(d.weights.begin(), d.weights.end());
  std::ostringstream px;
  px << "P6\n" << H << ' ' << H << "\n255\n";
  std::string body(static_cast<std::size_t>(H) * H * 3, '\0');
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < H; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * H + x;
      const double w = d.weights[(y / P) * G + x / P];
      const double heat = peak > 0 ? w / peak : 0.0;
      const double lum = (batch.images[3 * p] + batch.images[3 * p + 1] + batch.images[3 * p + 2]) / 3.0;
      auto byte = [](double v) { return static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255))); };
      body[3 * p] = byte(heat);
      body[3 * p + 1] = byte(lum);
      body[3 * p + 2] = byte(lum);
    }
  }
  d.pixmap = px.str() + body;
  std::ostringstream csv;
  csv << "patch,row,col,weight\n";
  for (int i = 0; i < G * G; ++i) csv << i << ',' << i / G << ',' << i % G << ',' << format_double(d.weights[i]) << '\n';
  d.csv = csv.str();
  return d;
}

void write_attention_dump(const AttentionDump& dump, const std::string& pixmap_path, const std::string& csv_path) {
  binio::write_file(pixmap_path, dump.pixmap);
  binio::write_file(csv_path, dump.csv);
}

}  // namespace glad
