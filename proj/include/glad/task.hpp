#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace glad {

// ---------------------------------------------------------------------------
// Scene

enum class ShapeKind : std::uint8_t { cube = 0, sphere = 1, tray = 2 };
enum class SizeKind : std::uint8_t { small = 0, large = 1 };

constexpr int kGridSide = 4;
constexpr int kGridCells = kGridSide * kGridSide;
constexpr int kNumShapes = 3;
constexpr int kNumColors = 8;
constexpr double kTableDepth = 1.0;

struct Rgb {
  double r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

// Nameable colors. Every entry has a channel at full intensity, so depth
// darkening is the only thing that lowers the brightest channel.
const std::array<Rgb, kNumColors>& palette();
std::string_view color_name(int color);
constexpr double kDepthShade = 0.6;
std::string_view shape_name(ShapeKind s);

struct SceneObject {
  ShapeKind shape = ShapeKind::cube;
  int color = 0;  // palette index
  SizeKind size = SizeKind::small;
  int cell = 0;   // row-major on the 4x4 table grid
  double depth = 0.5;

  int cell_x() const { return cell % kGridSide; }
  int cell_y() const { return cell / kGridSide; }
  Rgb rgb() const { return palette()[color]; }
  bool operator==(const SceneObject&) const = default;
};

struct Scene {
  std::vector<SceneObject> objects;
  std::uint64_t seed = 0;
  bool operator==(const Scene&) const = default;
};

// Surface depth of `obj` at cell-local coordinates (u, v) in [0, 1)^2, or
// nothing when the point lies outside its footprint. Cubes are flat, spheres
// bulge toward the camera, trays sit slightly lower than their nominal depth.
std::optional<double> surface_depth(const SceneObject& obj, double u, double v);

// Per-pixel depth at pixel centers, row-major image_size x image_size.
std::vector<double> depth_map(const Scene& scene, int image_size);

// Throws ContractError unless the scene has 2-4 objects in distinct cells
// with pairwise distinct depths and valid attributes.
void check_scene(const Scene& scene);

// ---------------------------------------------------------------------------
// Instructions and tasks

enum class Verb : std::uint8_t { pick = 0, place = 1, push = 2, lift = 3 };
constexpr int kNumVerbs = 4;

enum class TemplateKind : std::uint8_t {
  plain = 0,      // "<verb> <shape>"
  nearest = 1,    // "<verb> nearest <shape>"
  farthest = 2,   // "<verb> farthest <shape>"
  relational = 3, // "place <shape> left-of|right-of <anchor>"
};
constexpr int kNumTemplates = 4;
std::string_view template_name(TemplateKind k);

enum class Relation : std::uint8_t { left_of = 0, right_of = 1 };

// Semantic content of an instruction, independent of wording.
struct InstructionSpec {
  TemplateKind kind = TemplateKind::plain;
  Verb verb = Verb::pick;
  ShapeKind shape = ShapeKind::cube;
  ShapeKind anchor = ShapeKind::tray;        // relational template only
  Relation relation = Relation::left_of;     // relational template only
  bool operator==(const InstructionSpec&) const = default;
};

enum class Perturbation : std::uint8_t { ori = 0, obj = 1, pos = 2, sem = 3, task = 4 };
constexpr int kNumPerturbations = 5;
std::string_view perturbation_name(Perturbation p);
Perturbation parse_perturbation(std::string_view s);

struct Task {
  InstructionSpec spec;
  std::vector<int> instruction;  // token ids, padded to the instruction length
  std::vector<int> gold_actions; // length N
  Perturbation tag = Perturbation::ori;
  bool operator==(const Task&) const = default;
};

// ---------------------------------------------------------------------------
// Vocabulary (64 ids). 0 is padding.

namespace vocab {
constexpr int kSize = 64;
constexpr int kPad = 0;
constexpr int kVerbBase = 1;        // pick place push lift
constexpr int kVerbSynBase = 5;     // grab put shove raise
constexpr int kShapeBase = 9;       // cube sphere tray
constexpr int kShapeSynBase = 12;   // block ball bin
constexpr int kNearest = 15;
constexpr int kFarthest = 16;
constexpr int kClosest = 17;        // synonym of nearest
constexpr int kFurthest = 18;       // synonym of farthest
constexpr int kLeftOf = 19;
constexpr int kRightOf = 20;
constexpr int kLeftOfSyn = 21;      // "west-of"
constexpr int kRightOfSyn = 22;     // "east-of"
constexpr int kUsed = 23;           // ids >= kUsed are reserved
std::string_view token_name(int id);
// Fixed synonym pairing. Applying it twice gives the original id; padding
// and reserved ids map to themselves.
int synonym(int id);
}  // namespace vocab

// Canonical wording of an instruction, padded with kPad to `length`.
std::vector<int> instruction_tokens(const InstructionSpec& spec, int length);
std::string instruction_text(const std::vector<int>& tokens);

// ---------------------------------------------------------------------------
// Gold oracle

// Index of the unique object the instruction refers to; nullopt when none or
// several objects qualify.
std::optional<std::size_t> find_referent(const Scene& scene, const InstructionSpec& spec);
// Destination cell of a relational instruction, nullopt if off the table or
// occupied.
std::optional<int> find_destination(const Scene& scene, const InstructionSpec& spec);
// [verb, referent x, referent y, destination cell]. Non-place verbs use the
// referent's own cell as destination. Throws ContractError when ambiguous.
std::vector<int> gold_actions(const Scene& scene, const InstructionSpec& spec);
bool solvable(const Scene& scene, const InstructionSpec& spec);

// ---------------------------------------------------------------------------
// Generation

// Training-stream distribution. Holdout pairs are verb/shape pairings never
// generated outside the task perturbation.
struct TaskDistribution {
  std::array<double, kNumTemplates> template_weights{0.25, 0.25, 0.25, 0.25};
  // Probability that the referent is red and every other object is not.
  // Perturbed scenes drop the correlation.
  double referent_color_bias = 0.0;
  int instr_len = 6;
};

const TaskDistribution& default_distribution();

// (verb, shape) pairings withheld from training; the task perturbation uses them.
bool is_holdout_pair(Verb v, ShapeKind s);
Verb holdout_verb(ShapeKind s);

std::pair<Scene, Task> generate_scene(std::uint64_t seed,
                                      const TaskDistribution& dist = default_distribution());

Task make_task(const Scene& scene, const InstructionSpec& spec, int instr_len,
               Perturbation tag = Perturbation::ori);

// Random scene constrained so that `spec` has a unique referent, drawn from the
// training appearance distribution.
Scene generate_scene_for(const InstructionSpec& spec, std::uint64_t seed,
                         const TaskDistribution& dist);

// Suites: "all", "plain", "depth" (nearest/farthest), "relational".
bool is_suite(std::string_view suite);
// A deterministic evaluation task list for a suite.
std::vector<InstructionSpec> suite_tasks(std::string_view suite, std::uint64_t suite_seed,
                                         int n_tasks);

std::pair<Scene, Task> perturb(const Scene& scene, const Task& task, Perturbation kind,
                               std::uint64_t seed);

// ---------------------------------------------------------------------------
// Rendering and dumps

// image_size x image_size x 3, row-major, in [0, 1].
std::vector<double> render(const Scene& scene, int image_size = 32);
Rgb background_color();

// One canonical text record: seed, objects, instruction ids, gold ids, tag.
std::string dump_record(const Scene& scene, const Task& task);

}  // namespace glad
