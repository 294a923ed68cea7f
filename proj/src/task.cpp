#include "glad/task.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "glad/config.hpp"
#include "glad/error.hpp"
#include "glad/rng.hpp"

namespace glad {

namespace {

constexpr double kMinDepth = 0.05;
constexpr double kMaxDepth = 0.95;
constexpr double kMinDepthGap = 0.08;
constexpr int kMaxRetries = 10000;

// Half-extents in cell units.
constexpr double kCubeHalf[2] = {0.25, 0.375};
constexpr double kSphereRadius[2] = {0.375, 0.46};
constexpr double kTrayHalfWidth[2] = {0.3125, 0.4375};
constexpr double kTrayHalfHeight = 0.125;
constexpr double kSphereBulge = 0.1;
constexpr double kTrayDrop = 0.05;

const Rgb kBackground{0.0, 0.0, 0.0};

int sz(SizeKind s) { return static_cast<int>(s); }

bool covers(const SceneObject& o, double u, double v) {
  const double dx = u - 0.5, dy = v - 0.5;
  switch (o.shape) {
    case ShapeKind::cube:
      return std::abs(dx) <= kCubeHalf[sz(o.size)] && std::abs(dy) <= kCubeHalf[sz(o.size)];
    case ShapeKind::sphere: {
      const double r = kSphereRadius[sz(o.size)];
      return dx * dx + dy * dy <= r * r;
    }
    case ShapeKind::tray:
      return std::abs(dx) <= kTrayHalfWidth[sz(o.size)] && std::abs(dy) <= kTrayHalfHeight;
  }
  return false;
}

std::vector<double> sample_depths(Rng& rng, std::size_t n) {
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    std::vector<double> d(n);
    for (auto& v : d) v = rng.uniform(kMinDepth, kMaxDepth);
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i)
      for (std::size_t j = i + 1; j < n && ok; ++j) ok = std::abs(d[i] - d[j]) >= kMinDepthGap;
    if (ok) return d;
  }
  throw ContractError("scene generation: could not separate depths");
}

std::vector<int> sample_cells(Rng& rng, std::size_t n) {
  std::vector<int> cells(kGridCells);
  std::iota(cells.begin(), cells.end(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + rng.below(kGridCells - i);
    std::swap(cells[i], cells[j]);
  }
  cells.resize(n);
  return cells;
}

void sample_appearance(Scene& s, Rng& rng) {
  for (auto& o : s.objects) {
    o.color = static_cast<int>(rng.below(kNumColors));
    o.size = static_cast<SizeKind>(rng.below(2));
  }
}

Scene sample_scene(Rng& rng, std::uint64_t seed) {
  Scene s;
  s.seed = seed;
  const std::size_t n = 2 + rng.below(3);
  const auto cells = sample_cells(rng, n);
  const auto depths = sample_depths(rng, n);
  for (std::size_t i = 0; i < n; ++i) {
    SceneObject o;
    o.shape = static_cast<ShapeKind>(rng.below(kNumShapes));
    o.cell = cells[i];
    o.depth = depths[i];
    s.objects.push_back(o);
  }
  sample_appearance(s, rng);
  return s;
}

Verb training_verb(Rng& rng, TemplateKind kind, ShapeKind shape) {
  if (kind == TemplateKind::relational) return Verb::place;
  constexpr Verb kChoices[] = {Verb::pick, Verb::push, Verb::lift};
  for (;;) {
    const Verb v = kChoices[rng.below(3)];
    if (!is_holdout_pair(v, shape)) return v;
  }
}

InstructionSpec sample_spec(Rng& rng, const TaskDistribution& dist) {
  double total = 0;
  for (double w : dist.template_weights) total += w;
  double u = rng.uniform() * total;
  int k = 0;
  while (k < kNumTemplates - 1 && u >= dist.template_weights[k]) u -= dist.template_weights[k++];
  InstructionSpec spec;
  spec.kind = static_cast<TemplateKind>(k);
  spec.shape = static_cast<ShapeKind>(rng.below(kNumShapes));
  if (spec.kind == TemplateKind::relational) {
    spec.anchor = static_cast<ShapeKind>((static_cast<int>(spec.shape) + 1 + rng.below(2)) % kNumShapes);
    spec.relation = static_cast<Relation>(rng.below(2));
  }
  spec.verb = training_verb(rng, spec.kind, spec.shape);
  return spec;
}

std::vector<std::size_t> objects_of(const Scene& s, ShapeKind shape) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < s.objects.size(); ++i)
    if (s.objects[i].shape == shape) idx.push_back(i);
  return idx;
}

}  // namespace

// ---------------------------------------------------------------------------

const std::array<Rgb, kNumColors>& palette() {
  static const std::array<Rgb, kNumColors> p{{
      {1.0, 0.15, 0.15},  // red
      {1.0, 0.55, 0.1},   // orange
      {1.0, 1.0, 0.15},   // yellow
      {0.15, 1.0, 0.15},  // green
      {0.15, 1.0, 1.0},   // cyan
      {0.2, 0.3, 1.0},    // blue
      {0.65, 0.2, 1.0},   // purple
      {1.0, 0.3, 0.75},   // pink
  }};
  return p;
}

std::string_view color_name(int color) {
  static constexpr std::string_view names[] = {"red", "orange", "yellow", "green",
                                               "cyan", "blue", "purple", "pink"};
  if (color < 0 || color >= kNumColors) throw IndexError("color index out of range");
  return names[color];
}

std::string_view shape_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::cube: return "cube";
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::tray: return "tray";
  }
  return "?";
}

Rgb background_color() { return kBackground; }

std::optional<double> surface_depth(const SceneObject& obj, double u, double v) {
  if (!covers(obj, u, v)) return std::nullopt;
  switch (obj.shape) {
    case ShapeKind::cube:
      return obj.depth;
    case ShapeKind::sphere: {
      const double r = kSphereRadius[sz(obj.size)];
      const double rho2 = ((u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5)) / (r * r);
      return obj.depth - kSphereBulge * std::sqrt(std::max(0.0, 1.0 - rho2));
    }
    case ShapeKind::tray:
      return obj.depth + kTrayDrop;
  }
  return std::nullopt;
}

namespace {

// Calls fn(object, pixel index, u, v) for every pixel of every object footprint.
template <typename Fn>
void for_each_covered(const Scene& scene, int image_size, Fn&& fn) {
  if (image_size % kGridSide != 0) throw ConfigError("image size must be a multiple of 4");
  const int cell_px = image_size / kGridSide;
  for (const auto& o : scene.objects) {
    const int x0 = o.cell_x() * cell_px, y0 = o.cell_y() * cell_px;
    for (int y = 0; y < cell_px; ++y) {
      const double v = (y + 0.5) / cell_px;
      for (int x = 0; x < cell_px; ++x) {
        const double u = (x + 0.5) / cell_px;
        if (covers(o, u, v)) fn(o, (y0 + y) * image_size + x0 + x, u, v);
      }
    }
  }
}

}  // namespace

std::vector<double> depth_map(const Scene& scene, int image_size) {
  std::vector<double> d(static_cast<std::size_t>(image_size) * image_size, kTableDepth);
  for_each_covered(scene, image_size, [&](const SceneObject& o, int p, double u, double v) {
    d[p] = *surface_depth(o, u, v);
  });
  return d;
}

std::vector<double> render(const Scene& scene, int image_size) {
  std::vector<double> img(static_cast<std::size_t>(image_size) * image_size * 3);
  for (std::size_t p = 0; p < img.size() / 3; ++p) {
    img[3 * p] = kBackground.r;
    img[3 * p + 1] = kBackground.g;
    img[3 * p + 2] = kBackground.b;
  }
  for_each_covered(scene, image_size, [&](const SceneObject& o, int p, double, double) {
    const double shade = 1.0 - kDepthShade * o.depth;
    const Rgb c = o.rgb();
    img[3 * p] = c.r * shade;
    img[3 * p + 1] = c.g * shade;
    img[3 * p + 2] = c.b * shade;
  });
  return img;
}

void check_scene(const Scene& scene) {
  const auto n = scene.objects.size();
  if (n < 2 || n > 4) throw ContractError("scene must hold 2-4 objects, got " + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = scene.objects[i];
    if (a.cell < 0 || a.cell >= kGridCells || a.color < 0 || a.color >= kNumColors ||
        !(a.depth > 0.0 && a.depth < 1.0)) {
      throw ContractError("scene object " + std::to_string(i) + " has invalid attributes");
    }
    for (std::size_t j = i + 1; j < n; ++j) {
      if (a.cell == scene.objects[j].cell) throw ContractError("scene objects share a cell");
      if (a.depth == scene.objects[j].depth) throw ContractError("scene depths are not distinct");
    }
  }
}

// ---------------------------------------------------------------------------

std::string_view template_name(TemplateKind k) {
  switch (k) {
    case TemplateKind::plain: return "plain";
    case TemplateKind::nearest: return "nearest";
    case TemplateKind::farthest: return "farthest";
    case TemplateKind::relational: return "relational";
  }
  return "?";
}

std::string_view perturbation_name(Perturbation p) {
  static constexpr std::string_view names[] = {"ori", "obj", "pos", "sem", "task"};
  return names[static_cast<int>(p)];
}

Perturbation parse_perturbation(std::string_view s) {
  for (int i = 0; i < kNumPerturbations; ++i) {
    const auto p = static_cast<Perturbation>(i);
    if (perturbation_name(p) == s) return p;
  }
  throw ConfigError("unknown perturbation '" + std::string(s) + "'");
}

namespace vocab {

std::string_view token_name(int id) {
  static constexpr std::string_view names[kUsed] = {
      "<pad>", "pick",    "place",    "push",    "lift",     "grab",     "put",     "shove",
      "raise", "cube",    "sphere",   "tray",    "block",    "ball",     "bin",     "nearest",
      "farthest", "closest", "furthest", "left-of", "right-of", "west-of", "east-of"};
  if (id < 0 || id >= kSize) throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
  return id < kUsed ? names[id] : "<reserved>";
}

int synonym(int id) {
  if (id < 0 || id >= kSize) throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
  if (id >= kVerbBase && id < kVerbSynBase) return id + 4;
  if (id >= kVerbSynBase && id < kShapeBase) return id - 4;
  if (id >= kShapeBase && id < kShapeSynBase) return id + 3;
  if (id >= kShapeSynBase && id < kNearest) return id - 3;
  if (id == kNearest || id == kFarthest) return id + 2;
  if (id == kClosest || id == kFurthest) return id - 2;
  if (id == kLeftOf || id == kRightOf) return id + 2;
  if (id == kLeftOfSyn || id == kRightOfSyn) return id - 2;
  return id;
}

}  // namespace vocab

std::vector<int> instruction_tokens(const InstructionSpec& spec, int length) {
  std::vector<int> t;
  t.push_back(vocab::kVerbBase + static_cast<int>(spec.verb));
  if (spec.kind == TemplateKind::nearest) t.push_back(vocab::kNearest);
  if (spec.kind == TemplateKind::farthest) t.push_back(vocab::kFarthest);
  t.push_back(vocab::kShapeBase + static_cast<int>(spec.shape));
  if (spec.kind == TemplateKind::relational) {
    t.push_back(spec.relation == Relation::left_of ? vocab::kLeftOf : vocab::kRightOf);
    t.push_back(vocab::kShapeBase + static_cast<int>(spec.anchor));
  }
  if (static_cast<int>(t.size()) > length) {
    throw ConfigError("instruction needs " + std::to_string(t.size()) + " tokens, length is " +
                      std::to_string(length));
  }
  t.resize(length, vocab::kPad);
  return t;
}

std::string instruction_text(const std::vector<int>& tokens) {
  std::string out;
  for (int id : tokens) {
    if (id == vocab::kPad) continue;
    if (!out.empty()) out += ' ';
    out += vocab::token_name(id);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::optional<std::size_t> find_referent(const Scene& scene, const InstructionSpec& spec) {
  const auto idx = objects_of(scene, spec.shape);
  switch (spec.kind) {
    case TemplateKind::plain:
    case TemplateKind::relational:
      if (idx.size() == 1) return idx[0];
      return std::nullopt;
    case TemplateKind::nearest:
    case TemplateKind::farthest: {
      if (idx.size() < 2) return std::nullopt;
      std::size_t best = idx[0];
      for (std::size_t i : idx) {
        const double d = scene.objects[i].depth, b = scene.objects[best].depth;
        if (spec.kind == TemplateKind::nearest ? d < b : d > b) best = i;
      }
      for (std::size_t i : idx) {
        if (i != best && scene.objects[i].depth == scene.objects[best].depth) return std::nullopt;
      }
      return best;
    }
  }
  return std::nullopt;
}

std::optional<int> find_destination(const Scene& scene, const InstructionSpec& spec) {
  if (spec.kind != TemplateKind::relational) return std::nullopt;
  const auto anchors = objects_of(scene, spec.anchor);
  const auto ref = find_referent(scene, spec);
  if (anchors.size() != 1 || !ref || spec.anchor == spec.shape) return std::nullopt;
  const auto& a = scene.objects[anchors[0]];
  const int x = a.cell_x() + (spec.relation == Relation::left_of ? -1 : 1);
  if (x < 0 || x >= kGridSide) return std::nullopt;
  const int cell = a.cell_y() * kGridSide + x;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (i != *ref && scene.objects[i].cell == cell) return std::nullopt;
  }
  return cell;
}

bool solvable(const Scene& scene, const InstructionSpec& spec) {
  if (!find_referent(scene, spec)) return false;
  if (spec.kind == TemplateKind::relational) return find_destination(scene, spec).has_value();
  return true;
}

std::vector<int> gold_actions(const Scene& scene, const InstructionSpec& spec) {
  const auto ref = find_referent(scene, spec);
  if (!ref) {
    throw ContractError("gold_actions: instruction '" + instruction_text(instruction_tokens(spec, 8)) +
                        "' has no unique referent");
  }
  const auto& o = scene.objects[*ref];
  int dest = o.cell;
  if (spec.kind == TemplateKind::relational) {
    const auto d = find_destination(scene, spec);
    if (!d) throw ContractError("gold_actions: relational destination is off the table or occupied");
    dest = *d;
  }
  return {static_cast<int>(spec.verb), o.cell_x(), o.cell_y(), dest};
}

// ---------------------------------------------------------------------------

const TaskDistribution& default_distribution() {
  static const TaskDistribution d{};
  return d;
}

Verb holdout_verb(ShapeKind s) {
  switch (s) {
    case ShapeKind::cube: return Verb::lift;
    case ShapeKind::sphere: return Verb::push;
    case ShapeKind::tray: return Verb::pick;
  }
  return Verb::pick;
}

bool is_holdout_pair(Verb v, ShapeKind s) { return v != Verb::place && v == holdout_verb(s); }

Task make_task(const Scene& scene, const InstructionSpec& spec, int instr_len, Perturbation tag) {
  Task t;
  t.spec = spec;
  t.instruction = instruction_tokens(spec, instr_len);
  t.gold_actions = gold_actions(scene, spec);
  t.tag = tag;
  return t;
}

Scene generate_scene_for(const InstructionSpec& spec, std::uint64_t seed, const TaskDistribution& dist) {
  Rng rng = Rng::derive(seed, "scene");
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    Scene s = sample_scene(rng, seed);
    if (!solvable(s, spec)) continue;
    if (dist.referent_color_bias > 0.0) {
      Rng marker = Rng::derive(seed, "scene.marker");
      if (marker.uniform() < dist.referent_color_bias) {
        const auto ref = *find_referent(s, spec);
        for (std::size_t i = 0; i < s.objects.size(); ++i)
          s.objects[i].color = i == ref ? 0 : 1 + static_cast<int>(marker.below(kNumColors - 1));
      }
    }
    return s;
  }
  throw ContractError("generate_scene_for: no solvable scene after bounded retries");
}

std::pair<Scene, Task> generate_scene(std::uint64_t seed, const TaskDistribution& dist) {
  Rng rng = Rng::derive(seed, "instruction");
  const InstructionSpec spec = sample_spec(rng, dist);
  Scene s = generate_scene_for(spec, seed, dist);
  return {s, make_task(s, spec, dist.instr_len)};
}

bool is_suite(std::string_view suite) {
  return suite == "all" || suite == "plain" || suite == "depth" || suite == "relational";
}

std::vector<InstructionSpec> suite_tasks(std::string_view suite, std::uint64_t suite_seed, int n_tasks) {
  if (!is_suite(suite)) throw ConfigError("unknown suite '" + std::string(suite) + "'");
  TaskDistribution d;
  if (suite == "plain") d.template_weights = {1, 0, 0, 0};
  if (suite == "depth") d.template_weights = {0, 1, 1, 0};
  if (suite == "relational") d.template_weights = {0, 0, 0, 1};
  Rng rng = Rng::derive(suite_seed, std::string("suite.") + std::string(suite));
  std::vector<InstructionSpec> out;
  for (int attempt = 0; static_cast<int>(out.size()) < n_tasks; ++attempt) {
    InstructionSpec s = sample_spec(rng, d);
    // Distinct tasks while the suite has enough of them.
    if (attempt < 1000 && std::find(out.begin(), out.end(), s) != out.end()) continue;
    out.push_back(s);
  }
  return out;
}

std::pair<Scene, Task> perturb(const Scene& scene, const Task& task, Perturbation kind, std::uint64_t seed) {
  const int len = static_cast<int>(task.instruction.size());
  Rng rng = Rng::derive(seed, "perturb", static_cast<std::uint64_t>(kind));
  switch (kind) {
    case Perturbation::ori:
      return {scene, task};
    case Perturbation::obj: {
      const auto ref = find_referent(scene, task.spec);
      for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
        Scene s = scene;
        for (auto& o : s.objects) {
          o.color = static_cast<int>(rng.below(kNumColors));
          o.size = static_cast<SizeKind>(rng.below(2));
        }
        if (solvable(s, task.spec) && find_referent(s, task.spec) == ref) {
          return {s, make_task(s, task.spec, len, kind)};
        }
      }
      break;
    }
    case Perturbation::pos: {
      for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
        Scene s = scene;
        const auto cells = sample_cells(rng, s.objects.size());
        const auto depths = sample_depths(rng, s.objects.size());
        for (std::size_t i = 0; i < s.objects.size(); ++i) {
          s.objects[i].cell = cells[i];
          s.objects[i].depth = depths[i];
        }
        if (solvable(s, task.spec)) return {s, make_task(s, task.spec, len, kind)};
      }
      break;
    }
    case Perturbation::sem: {
      Task t = task;
      for (auto& id : t.instruction) id = vocab::synonym(id);
      t.tag = kind;
      return {scene, t};
    }
    case Perturbation::task: {
      const auto ref = find_referent(scene, task.spec);
      if (!ref) break;
      InstructionSpec spec = task.spec;
      if (spec.kind == TemplateKind::relational) spec.kind = TemplateKind::plain;
      spec.verb = holdout_verb(spec.shape);
      if (solvable(scene, spec)) return {scene, make_task(scene, spec, len, kind)};
      break;
    }
  }
  throw ContractError("perturb(" + std::string(perturbation_name(kind)) + "): no valid variant after bounded retries");
}

// ---------------------------------------------------------------------------

std::string dump_record(const Scene& scene, const Task& task) {
  std::ostringstream os;
  os << "seed=" << scene.seed << " objects=";
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& o = scene.objects[i];
    if (i) os << ';';
    os << shape_name(o.shape) << ':' << color_name(o.color) << ':'
       << (o.size == SizeKind::large ? "large" : "small") << ':' << o.cell << ':' << format_double(o.depth);
  }
  os << " instr=";
  for (std::size_t i = 0; i < task.instruction.size(); ++i) os << (i ? "," : "") << task.instruction[i];
  os << " gold=";
  for (std::size_t i = 0; i < task.gold_actions.size(); ++i) os << (i ? "," : "") << task.gold_actions[i];
  os << " tag=" << perturbation_name(task.tag);
  return os.str();
}

}  // namespace glad
