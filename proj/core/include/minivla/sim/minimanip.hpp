#pragma once

#include <array>
#include <string>
#include <vector>

#include "minivla/codec/action_codec.hpp"
#include "minivla/core/rng.hpp"
#include "minivla/vla/observation.hpp"

namespace minivla::sim {

inline constexpr int kImagePx = 32;
inline constexpr int kImageChannels = 3;
inline constexpr int kNumBlocks = 3;  // red, blue, pink
inline constexpr int kTaskBudget = 64;

enum class TaskId : int {
  kLiftRedBlock = 0,
  kLiftBlueBlock,
  kLiftPinkBlock,
  kPushRedBlockLeft,
  kRotateBlueBlockRight,
  kOpenDrawer,
  kCloseDrawer,
  kMoveSliderLeft,
  kMoveSliderRight,
  kToggleLight,
  kToggleLed,
  kPlacePinkBlockInDrawer,
};
inline constexpr int kNumTasks = 12;

const std::string& task_name(TaskId id);
const std::string& task_instruction(TaskId id);
TaskId task_from_name(const std::string& name);
std::vector<std::string> all_instructions();

using Color = std::array<double, 3>;

struct Palette {
  Color background, drawer, drawer_handle, slider_track, slider_handle, button;
  Color red_block, blue_block, pink_block;
  Color light_on, light_off, led_on, led_off;
  Color gripper_open, gripper_closed;
};

struct SceneLayout {
  double drawer_x = 0.3;
  double drawer_y = 0.06;  // front face at rest
  double slider_lo = 0.18, slider_hi = 0.52, slider_y = 0.88;
  std::array<double, 2> light_button{0.045, 0.70};
  std::array<double, 2> led_button{0.955, 0.70};
  std::vector<double> grid_xs, grid_ys;  // block spawn cells
};

// One (split, embodiment) scene: the split fixes layout and palette, the
// embodiment fixes the action unit scaling and a palette family.
struct SceneConfig {
  std::string split;       // "A".."D"
  std::string embodiment;  // "A" or "B"
  SceneLayout layout;
  Palette palette;
  std::array<double, codec::kActionDims> action_scale{1, 1, 1, 1, 1, 1, 1};

  static SceneConfig load(const std::string& scenes_path, const std::string& split,
                          const std::string& embodiment = "A");
  static std::vector<std::string> split_names() { return {"A", "B", "C", "D"}; }
};

struct BlockState {
  double x = 0, y = 0, z = 0, yaw = 0;
  bool in_drawer = false;
};

// Full renderable world state; rendering is a pure function of this struct
// plus the scene config.
struct SimState {
  double x = 0.5, y = 0.75, z = 0.25, yaw = 0.0;
  bool closed = true;
  int held_block = -1;
  std::array<BlockState, kNumBlocks> blocks;
  double drawer = 0.0;  // 0 shut .. 1 open
  double slider = 0.0;  // absolute handle x
  bool light = false, led = false;
  bool prev_light_press = false, prev_led_press = false;
  // per-episode fixture jitter, baked at reset
  double drawer_dx = 0, slider_dx = 0, light_dy = 0, led_dy = 0;
  int64_t step_count = 0;
};

struct TaskChain {
  std::vector<TaskId> tasks;  // evaluation chains use 5, demos use 1
  int per_task_budget = kTaskBudget;
};

std::vector<double> render_scene(const SimState& st, const SceneConfig& scene);
// Gripper-centered zoomed crop.
std::vector<double> render_wrist(const SimState& st, const SceneConfig& scene);

// Full observation for a state: [side, wrist] images, proprio, instruction.
vla::Observation observe_state(const SimState& st, const SceneConfig& scene,
                               const std::string& instruction);

// Pure, deterministic success predicates over (current, task-start) states.
bool task_success(TaskId id, const SceneConfig& scene, const SimState& now,
                  const SimState& at_task_start);

// Deterministic scripted expert: one action toward completing the task, as a
// pure function of the current state. Actions are in physical units.
codec::RawAction expert_action(TaskId id, const SceneConfig& scene,
                               const SimState& now, const SimState& at_task_start);

// Embodiment-unit conversions (elementwise affine scale).
codec::RawAction to_embodiment_units(const codec::RawAction& physical,
                                     const SceneConfig& scene);
codec::RawAction to_physical_units(const codec::RawAction& emb,
                                   const SceneConfig& scene);

class MiniManip {
 public:
  explicit MiniManip(SceneConfig scene);

  // Deterministic (scene, chain, seed) -> initial observation. The first
  // chain task's instruction is active.
  vla::Observation reset(const TaskChain& chain, uint64_t seed);

  struct StepResult {
    vla::Observation obs;
    int chain_progress = 0;
    bool done = false;
  };
  // Action in the scene's embodiment units. Non-finite -> error.
  StepResult step(const codec::RawAction& action);

  vla::Observation observe() const;
  const SimState& state() const { return st_; }
  const SimState& task_start_state() const { return task_start_; }
  const SceneConfig& scene() const { return scene_; }
  TaskId current_task() const;
  int chain_progress() const { return progress_; }
  bool done() const { return done_; }
  int task_steps() const { return task_steps_; }
  const std::vector<int>& steps_per_completed_task() const { return steps_per_task_; }

  // Expert action for the current chain task, in embodiment units.
  codec::RawAction expert() const;

  // Samples 5 distinct tasks and keeps the first candidate set the scripted
  // expert can fully execute from reset(seed); deterministic in seed.
  static TaskChain sample_chain(const SceneConfig& scene, uint64_t seed);
  // Runs the expert through (chain, seed); true if every task succeeds.
  static bool chain_feasible(const SceneConfig& scene, const TaskChain& chain,
                             uint64_t seed);

  // Single-task reset for demonstration generation: the initial articulated
  // states are forced feasible for the task.
  vla::Observation reset_for_task(TaskId task, uint64_t seed);

 private:
  void init_state(uint64_t seed);
  void force_feasible(TaskId task, core::Rng& rng);

  SceneConfig scene_;
  SimState st_;
  TaskChain chain_;
  SimState task_start_;
  int progress_ = 0;
  bool done_ = false;
  int task_steps_ = 0;
  std::vector<int> steps_per_task_;
};

}  // namespace minivla::sim
