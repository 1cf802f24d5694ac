#include "minivla/sim/minimanip.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace minivla::sim {

namespace {

constexpr double kMaxXYZ = 0.08;
constexpr double kMaxYaw = 0.3;
constexpr double kMinXY = 0.03, kMaxXY = 0.97;
constexpr double kMaxZ = 0.4;
constexpr double kGraspRadius = 0.075, kGraspZ = 0.08;
constexpr double kPushRadius = 0.07, kPushZ = 0.05;
constexpr double kHandleRadius = 0.06, kHandleZ = 0.10;
constexpr double kPressRadius = 0.05, kPressZ = 0.04;
constexpr double kLiftZ = 0.22;
constexpr double kDrawerTravel = 0.15;
constexpr double kBlockHalf = 0.07;
constexpr double kPushDist = 0.12;
constexpr double kRotateAngle = 0.9;
constexpr double kSliderTol = 0.05;
constexpr double kHomeX = 0.5, kHomeY = 0.75, kHomeZ = 0.25;

const std::array<std::string, kNumTasks> kTaskNames = {
    "lift_red_block",     "lift_blue_block",      "lift_pink_block",
    "push_red_block_left", "rotate_blue_block_right", "open_drawer",
    "close_drawer",       "move_slider_left",     "move_slider_right",
    "toggle_light",       "toggle_led",           "place_pink_block_in_drawer"};

const std::array<std::string, kNumTasks> kInstructions = {
    "lift the red block",
    "lift the blue block",
    "lift the pink block",
    "push the red block left",
    "rotate the blue block right",
    "open the drawer",
    "close the drawer",
    "move the slider left",
    "move the slider right",
    "toggle the light",
    "toggle the led",
    "put the pink block in the drawer"};

double dist2d(double ax, double ay, double bx, double by) {
  return std::hypot(ax - bx, ay - by);
}

double drawer_front_y(const SceneConfig& scene, const SimState& st) {
  return scene.layout.drawer_y + kDrawerTravel * st.drawer;
}

double drawer_handle_x(const SceneConfig& scene, const SimState& st) {
  return scene.layout.drawer_x + st.drawer_dx;
}

bool in_drawer_region(const SceneConfig& scene, const SimState& st, double bx,
                      double by) {
  return std::fabs(bx - drawer_handle_x(scene, st)) <= 0.10 && by >= 0.02 &&
         by <= drawer_front_y(scene, st) - 0.02;
}

std::array<double, 2> light_button_pos(const SceneConfig& scene, const SimState& st) {
  return {scene.layout.light_button[0], scene.layout.light_button[1] + st.light_dy};
}

std::array<double, 2> led_button_pos(const SceneConfig& scene, const SimState& st) {
  return {scene.layout.led_button[0], scene.layout.led_button[1] + st.led_dy};
}

int block_for_task(TaskId id) {
  switch (id) {
    case TaskId::kLiftRedBlock:
    case TaskId::kPushRedBlockLeft: return 0;
    case TaskId::kLiftBlueBlock:
    case TaskId::kRotateBlueBlockRight: return 1;
    case TaskId::kLiftPinkBlock:
    case TaskId::kPlacePinkBlockInDrawer: return 2;
    default: return -1;
  }
}

}  // namespace

const std::string& task_name(TaskId id) {
  return kTaskNames[static_cast<size_t>(id)];
}

const std::string& task_instruction(TaskId id) {
  return kInstructions[static_cast<size_t>(id)];
}

TaskId task_from_name(const std::string& name) {
  for (int i = 0; i < kNumTasks; ++i)
    if (kTaskNames[static_cast<size_t>(i)] == name) return static_cast<TaskId>(i);
  throw Error("unknown task: " + name);
}

std::vector<std::string> all_instructions() {
  return std::vector<std::string>(kInstructions.begin(), kInstructions.end());
}

// ---- scene loading -------------------------------------------------------

namespace {

Color parse_color(const nlohmann::json& j) {
  check(j.is_array() && j.size() == 3, "scenes: color must be [r,g,b]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Palette parse_palette(const nlohmann::json& p, const nlohmann::json& shared) {
  Palette out;
  out.background = parse_color(p.at("background"));
  out.drawer = parse_color(p.at("drawer"));
  out.drawer_handle = parse_color(p.at("drawer_handle"));
  out.slider_track = parse_color(p.at("slider_track"));
  out.slider_handle = parse_color(p.at("slider_handle"));
  out.button = parse_color(p.at("button"));
  out.red_block = parse_color(p.at("red_block"));
  out.blue_block = parse_color(p.at("blue_block"));
  out.pink_block = parse_color(p.at("pink_block"));
  out.light_on = parse_color(shared.at("light_on"));
  out.light_off = parse_color(shared.at("light_off"));
  out.led_on = parse_color(shared.at("led_on"));
  out.led_off = parse_color(shared.at("led_off"));
  out.gripper_open = parse_color(shared.at("gripper_open"));
  out.gripper_closed = parse_color(shared.at("gripper_closed"));
  return out;
}

}  // namespace

SceneConfig SceneConfig::load(const std::string& scenes_path, const std::string& split,
                              const std::string& embodiment) {
  std::ifstream f(scenes_path);
  check(f.is_open(), "scenes: cannot open " + scenes_path);
  nlohmann::json j;
  f >> j;
  check(j.at("version").get<int>() == 1, "scenes: unsupported version");
  check(j.at("splits").contains(split), "scenes: unknown split " + split);
  check(embodiment == "A" || embodiment == "B", "scenes: unknown embodiment " + embodiment);

  SceneConfig sc;
  sc.split = split;
  sc.embodiment = embodiment;
  const auto& sp = j.at("splits").at(split);
  sc.layout.drawer_x = sp.at("drawer_x").get<double>();
  sc.layout.drawer_y = sp.at("drawer_y").get<double>();
  sc.layout.slider_lo = sp.at("slider_lo").get<double>();
  sc.layout.slider_hi = sp.at("slider_hi").get<double>();
  sc.layout.slider_y = sp.at("slider_y").get<double>();
  sc.layout.light_button = {sp.at("light_button").at(0).get<double>(),
                            sp.at("light_button").at(1).get<double>()};
  sc.layout.led_button = {sp.at("led_button").at(0).get<double>(),
                          sp.at("led_button").at(1).get<double>()};
  for (const auto& x : j.at("grid").at("xs")) sc.layout.grid_xs.push_back(x.get<double>());
  for (const auto& y : j.at("grid").at("ys")) sc.layout.grid_ys.push_back(y.get<double>());

  const auto& shared = j.at("shared_colors");
  if (embodiment == "A") {
    sc.palette = parse_palette(j.at("palettes").at(split), shared);
  } else {
    sc.palette = parse_palette(j.at("embodiment_b").at("palettes").at(split), shared);
    const auto& scale = j.at("embodiment_b").at("action_scale");
    for (size_t d = 0; d < codec::kActionDims; ++d)
      sc.action_scale[d] = scale.at(d).get<double>();
  }
  return sc;
}

codec::RawAction to_embodiment_units(const codec::RawAction& physical,
                                     const SceneConfig& scene) {
  codec::RawAction a;
  for (size_t d = 0; d < codec::kActionDims; ++d)
    a[d] = physical[d] * scene.action_scale[d];
  return a;
}

codec::RawAction to_physical_units(const codec::RawAction& emb,
                                   const SceneConfig& scene) {
  codec::RawAction a;
  for (size_t d = 0; d < codec::kActionDims; ++d) a[d] = emb[d] / scene.action_scale[d];
  return a;
}

// ---- rendering -----------------------------------------------------------

namespace {

struct Viewport {
  double x0 = 0, y0 = 0, span = 1;
};

void fill_rect(std::vector<double>& img, const Viewport& vp, double cx, double cy,
               double hw, double hh, const Color& col, bool outline = false) {
  const double n = static_cast<double>(kImagePx);
  auto to_px = [&](double wx) {
    return static_cast<int>(std::floor((wx - vp.x0) / vp.span * n));
  };
  auto to_py = [&](double wy) {
    return static_cast<int>(std::floor((vp.y0 + vp.span - wy) / vp.span * n));
  };
  int px0 = to_px(cx - hw), px1 = to_px(cx + hw);
  int py0 = to_py(cy + hh), py1 = to_py(cy - hh);
  if (px1 < px0) px1 = px0;
  if (py1 < py0) py1 = py0;
  const int ox0 = px0, ox1 = px1, oy0 = py0, oy1 = py1;
  px0 = std::clamp(px0, 0, kImagePx - 1);
  px1 = std::clamp(px1, 0, kImagePx - 1);
  py0 = std::clamp(py0, 0, kImagePx - 1);
  py1 = std::clamp(py1, 0, kImagePx - 1);
  if (cx + hw < vp.x0 || cx - hw > vp.x0 + vp.span || cy + hh < vp.y0 ||
      cy - hh > vp.y0 + vp.span)
    return;
  for (int py = py0; py <= py1; ++py)
    for (int px = px0; px <= px1; ++px) {
      // outline mode keeps the interior transparent (open fingers)
      if (outline && px != ox0 && px != ox1 && py != oy0 && py != oy1) continue;
      double* p = img.data() + (py * kImagePx + px) * kImageChannels;
      p[0] = col[0];
      p[1] = col[1];
      p[2] = col[2];
    }
}

Color scale_color(const Color& c, double f) {
  return {std::clamp(c[0] * f, 0.0, 1.0), std::clamp(c[1] * f, 0.0, 1.0),
          std::clamp(c[2] * f, 0.0, 1.0)};
}

std::vector<double> render_viewport(const SimState& st, const SceneConfig& scene,
                                    const Viewport& vp) {
  std::vector<double> img(static_cast<size_t>(kImagePx * kImagePx * kImageChannels));
  const Palette& pal = scene.palette;
  fill_rect(img, vp, vp.x0 + vp.span / 2, vp.y0 + vp.span / 2, vp.span, vp.span,
            pal.background);

  // drawer body + handle
  const double dxf = drawer_handle_x(scene, st);
  const double front = drawer_front_y(scene, st);
  fill_rect(img, vp, dxf, front / 2, 0.11, front / 2, pal.drawer);
  fill_rect(img, vp, dxf, front, 0.035, 0.018, pal.drawer_handle);

  // slider track + handle
  const double slo = scene.layout.slider_lo + st.slider_dx;
  const double shi = scene.layout.slider_hi + st.slider_dx;
  const double sy = scene.layout.slider_y;
  fill_rect(img, vp, (slo + shi) / 2, sy, (shi - slo) / 2 + 0.02, 0.012, pal.slider_track);
  fill_rect(img, vp, st.slider, sy, 0.032, 0.030, pal.slider_handle);

  // buttons and indicators
  const auto lb = light_button_pos(scene, st);
  const auto eb = led_button_pos(scene, st);
  fill_rect(img, vp, lb[0], lb[1], 0.028, 0.028, pal.button);
  fill_rect(img, vp, lb[0], lb[1] + 0.075, 0.030, 0.030,
            st.light ? pal.light_on : pal.light_off);
  fill_rect(img, vp, eb[0], eb[1], 0.028, 0.028, pal.button);
  fill_rect(img, vp, eb[0], eb[1] + 0.075, 0.030, 0.030,
            st.led ? pal.led_on : pal.led_off);

  // blocks; yaw shows as a brightness change
  const std::array<const Color*, 3> bcol = {&pal.red_block, &pal.blue_block,
                                            &pal.pink_block};
  for (int b = 0; b < kNumBlocks; ++b) {
    const auto& blk = st.blocks[static_cast<size_t>(b)];
    const double f = 0.7 + 0.3 * std::cos(blk.yaw);
    fill_rect(img, vp, blk.x, blk.y, kBlockHalf, kBlockHalf,
              scale_color(*bcol[static_cast<size_t>(b)], f));
  }

  // Gripper last. Open fingers render as an outline (the target stays
  // visible between them); a closed gripper is solid and occludes whatever
  // sits underneath.
  const double gh = 0.028 + 0.05 * st.z;
  fill_rect(img, vp, st.x, st.y, gh, gh,
            st.closed ? pal.gripper_closed : pal.gripper_open,
            /*outline=*/!st.closed);
  return img;
}

}  // namespace

std::vector<double> render_scene(const SimState& st, const SceneConfig& scene) {
  return render_viewport(st, scene, Viewport{0, 0, 1});
}

std::vector<double> render_wrist(const SimState& st, const SceneConfig& scene) {
  return render_viewport(st, scene, Viewport{st.x - 0.125, st.y - 0.125, 0.25});
}

vla::Observation observe_state(const SimState& st, const SceneConfig& scene,
                               const std::string& instruction) {
  vla::Observation obs;
  obs.images.push_back(render_scene(st, scene));
  obs.images.push_back(render_wrist(st, scene));
  obs.proprio = {st.x, st.y, st.z, 0.0, 0.0, st.yaw, st.closed ? 1.0 : -1.0};
  obs.instruction = instruction;
  return obs;
}

// ---- success predicates ----------------------------------------------------

bool task_success(TaskId id, const SceneConfig& scene, const SimState& now,
                  const SimState& start) {
  switch (id) {
    case TaskId::kLiftRedBlock:
      return now.held_block == 0 && now.blocks[0].z >= kLiftZ;
    case TaskId::kLiftBlueBlock:
      return now.held_block == 1 && now.blocks[1].z >= kLiftZ;
    case TaskId::kLiftPinkBlock:
      return now.held_block == 2 && now.blocks[2].z >= kLiftZ;
    case TaskId::kPushRedBlockLeft:
      return now.held_block != 0 && start.blocks[0].x - now.blocks[0].x >= kPushDist;
    case TaskId::kRotateBlueBlockRight:
      return start.blocks[1].yaw - now.blocks[1].yaw >= kRotateAngle;
    case TaskId::kOpenDrawer:
      return now.drawer >= 0.75;
    case TaskId::kCloseDrawer:
      return now.drawer <= 0.25;
    case TaskId::kMoveSliderLeft:
      return now.slider <= scene.layout.slider_lo + now.slider_dx + kSliderTol;
    case TaskId::kMoveSliderRight:
      return now.slider >= scene.layout.slider_hi + now.slider_dx - kSliderTol;
    case TaskId::kToggleLight:
      return now.light != start.light;
    case TaskId::kToggleLed:
      return now.led != start.led;
    case TaskId::kPlacePinkBlockInDrawer:
      return now.blocks[2].in_drawer && now.held_block != 2;
  }
  return false;
}

// ---- scripted expert -------------------------------------------------------

namespace {

codec::RawAction move_toward(const SimState& st, double tx, double ty, double tz,
                             double grip, double dyaw = 0.0) {
  codec::RawAction a{};
  a[0] = std::clamp(tx - st.x, -kMaxXYZ, kMaxXYZ);
  a[1] = std::clamp(ty - st.y, -kMaxXYZ, kMaxXYZ);
  a[2] = std::clamp(tz - st.z, -kMaxXYZ, kMaxXYZ);
  a[5] = std::clamp(dyaw, -kMaxYaw, kMaxYaw);
  a[6] = grip;
  return a;
}

bool at_xy(const SimState& st, double tx, double ty, double tol = 0.012) {
  return std::fabs(st.x - tx) <= tol && std::fabs(st.y - ty) <= tol;
}

// Approach from above with the gripper open, descend, close. Returns the next
// action; `grasped` phases are handled by the caller.
codec::RawAction grasp_block(const SimState& st, const BlockState& b) {
  if (!at_xy(st, b.x, b.y)) return move_toward(st, b.x, b.y, 0.18, -1.0);
  if (st.z > 0.050) return move_toward(st, b.x, b.y, 0.045, -1.0);
  return move_toward(st, b.x, b.y, st.z, +1.0);  // close; attaches this step
}

codec::RawAction release_and_retreat(const SimState& st) {
  return move_toward(st, st.x, st.y, 0.20, -1.0);
}

codec::RawAction drag_handle(const SimState& st, double hx, double hy, double ddx,
                             double ddy) {
  if (!at_xy(st, hx, hy)) return move_toward(st, hx, hy, 0.16, -1.0);
  if (st.z > 0.055) return move_toward(st, hx, hy, 0.05, -1.0);
  codec::RawAction a{};
  a[0] = std::clamp(ddx, -kMaxXYZ, kMaxXYZ);
  a[1] = std::clamp(ddy, -kMaxXYZ, kMaxXYZ);
  a[6] = +1.0;
  return a;
}

codec::RawAction open_drawer_expert(const SceneConfig& scene, const SimState& st) {
  const double hx = drawer_handle_x(scene, st);
  const double hy = drawer_front_y(scene, st);
  if (st.held_block >= 0) return release_and_retreat(st);
  return drag_handle(st, hx, hy, 0.0, +kMaxXYZ);
}

}  // namespace

codec::RawAction expert_action(TaskId id, const SceneConfig& scene,
                               const SimState& now, const SimState& start) {
  const int blk = block_for_task(id);
  switch (id) {
    case TaskId::kLiftRedBlock:
    case TaskId::kLiftBlueBlock:
    case TaskId::kLiftPinkBlock: {
      if (now.held_block == blk) return move_toward(now, now.x, now.y, 0.33, +1.0);
      if (now.held_block >= 0) return release_and_retreat(now);
      return grasp_block(now, now.blocks[static_cast<size_t>(blk)]);
    }
    case TaskId::kPushRedBlockLeft: {
      if (now.held_block >= 0) return release_and_retreat(now);
      const auto& b = now.blocks[0];
      const bool sweeping = now.z <= 0.045 && std::fabs(now.y - b.y) <= 0.03 &&
                            now.x <= b.x + 0.10;
      if (sweeping) {
        codec::RawAction a{};
        a[0] = -kMaxXYZ;
        a[6] = -1.0;
        return a;
      }
      const double ax = b.x + 0.085;
      if (!at_xy(now, ax, b.y)) return move_toward(now, ax, b.y, 0.18, -1.0);
      return move_toward(now, ax, b.y, 0.035, -1.0);
    }
    case TaskId::kRotateBlueBlockRight: {
      if (now.held_block == 1) {
        if (start.blocks[1].yaw - now.blocks[1].yaw < kRotateAngle + 0.05)
          return move_toward(now, now.x, now.y, now.z, +1.0, -kMaxYaw);
        return release_and_retreat(now);
      }
      if (now.held_block >= 0) return release_and_retreat(now);
      return grasp_block(now, now.blocks[1]);
    }
    case TaskId::kOpenDrawer:
      return open_drawer_expert(scene, now);
    case TaskId::kCloseDrawer: {
      if (now.held_block >= 0) return release_and_retreat(now);
      const double hx = drawer_handle_x(scene, now);
      const double hy = drawer_front_y(scene, now);
      return drag_handle(now, hx, hy, 0.0, -kMaxXYZ);
    }
    case TaskId::kMoveSliderLeft: {
      if (now.held_block >= 0) return release_and_retreat(now);
      return drag_handle(now, now.slider, scene.layout.slider_y, -kMaxXYZ, 0.0);
    }
    case TaskId::kMoveSliderRight: {
      if (now.held_block >= 0) return release_and_retreat(now);
      return drag_handle(now, now.slider, scene.layout.slider_y, +kMaxXYZ, 0.0);
    }
    case TaskId::kToggleLight:
    case TaskId::kToggleLed: {
      const bool is_light = id == TaskId::kToggleLight;
      const bool done = is_light ? now.light != start.light : now.led != start.led;
      if (done) return release_and_retreat(now);
      if (now.held_block >= 0) return release_and_retreat(now);
      const auto btn = is_light ? light_button_pos(scene, now) : led_button_pos(scene, now);
      if (!at_xy(now, btn[0], btn[1])) return move_toward(now, btn[0], btn[1], 0.15, -1.0);
      if (now.z > 0.035) return move_toward(now, btn[0], btn[1], 0.03, -1.0);
      return move_toward(now, btn[0], btn[1], now.z, +1.0);  // press
    }
    case TaskId::kPlacePinkBlockInDrawer: {
      const auto& pink = now.blocks[2];
      if (now.held_block == 2) {
        const double tx = drawer_handle_x(scene, now);
        const double ty = scene.layout.drawer_y + 0.055;
        if (now.z < 0.17 && !at_xy(now, tx, ty, 0.02))
          return move_toward(now, now.x, now.y, 0.20, +1.0);
        if (!at_xy(now, tx, ty, 0.02)) return move_toward(now, tx, ty, 0.20, +1.0);
        return move_toward(now, tx, ty, now.z, -1.0);  // release into the drawer
      }
      if (now.held_block >= 0) return release_and_retreat(now);
      if (now.drawer < 0.55) return open_drawer_expert(scene, now);
      return grasp_block(now, pink);
    }
  }
  return codec::RawAction{};
}

// ---- simulator ------------------------------------------------------------

MiniManip::MiniManip(SceneConfig scene) : scene_(std::move(scene)) {}

void MiniManip::init_state(uint64_t seed) {
  core::Rng rng(seed);
  st_ = SimState{};
  static const double kJx[3] = {-0.04, 0.0, 0.04};
  static const double kJy[3] = {-0.05, 0.0, 0.05};
  st_.drawer_dx = kJx[rng.uniform_int(3)];
  st_.slider_dx = kJx[rng.uniform_int(3)];
  st_.light_dy = kJy[rng.uniform_int(3)];
  st_.led_dy = kJy[rng.uniform_int(3)];

  std::vector<std::array<double, 2>> cells;
  for (double gx : scene_.layout.grid_xs)
    for (double gy : scene_.layout.grid_ys) cells.push_back({gx, gy});
  rng.shuffle(cells);
  static const double kYaw[3] = {-0.2, 0.0, 0.2};
  for (int b = 0; b < kNumBlocks; ++b) {
    st_.blocks[static_cast<size_t>(b)] = BlockState{};
    st_.blocks[static_cast<size_t>(b)].x = cells[static_cast<size_t>(b)][0];
    st_.blocks[static_cast<size_t>(b)].y = cells[static_cast<size_t>(b)][1];
    st_.blocks[static_cast<size_t>(b)].yaw = kYaw[rng.uniform_int(3)];
  }
  st_.drawer = rng.uniform_int(2) == 0 ? 0.0 : 1.0;
  const double lo = scene_.layout.slider_lo + st_.slider_dx;
  const double hi = scene_.layout.slider_hi + st_.slider_dx;
  st_.slider = rng.uniform_int(2) == 0 ? lo : hi;
  st_.light = rng.uniform_int(2) == 1;
  st_.led = rng.uniform_int(2) == 1;
  static const double kHomeXs[3] = {0.35, kHomeX, 0.65};
  static const double kHomeYs[2] = {0.68, kHomeY};
  static const double kHomeZs[3] = {0.20, kHomeZ, 0.30};
  st_.x = kHomeXs[rng.uniform_int(3)];
  st_.y = kHomeYs[rng.uniform_int(2)];
  st_.z = kHomeZs[rng.uniform_int(3)];
  st_.yaw = 0.0;
  st_.closed = true;
  st_.held_block = -1;
  st_.step_count = 0;
}

void MiniManip::force_feasible(TaskId task, core::Rng& rng) {
  (void)rng;
  const double lo = scene_.layout.slider_lo + st_.slider_dx;
  const double hi = scene_.layout.slider_hi + st_.slider_dx;
  switch (task) {
    case TaskId::kOpenDrawer: st_.drawer = 0.0; break;
    case TaskId::kCloseDrawer: st_.drawer = 1.0; break;
    case TaskId::kMoveSliderLeft: st_.slider = hi; break;
    case TaskId::kMoveSliderRight: st_.slider = lo; break;
    default: break;
  }
}

vla::Observation MiniManip::reset(const TaskChain& chain, uint64_t seed) {
  check(!chain.tasks.empty() && chain.tasks.size() <= 5,
        "reset: chain must hold 1..5 tasks");
  init_state(seed);
  chain_ = chain;
  task_start_ = st_;
  progress_ = 0;
  done_ = false;
  task_steps_ = 0;
  steps_per_task_.clear();
  return observe();
}

vla::Observation MiniManip::reset_for_task(TaskId task, uint64_t seed) {
  init_state(seed);
  core::Rng rng(seed ^ 0x5EEDull);
  force_feasible(task, rng);
  chain_ = TaskChain{{task}, kTaskBudget};
  task_start_ = st_;
  progress_ = 0;
  done_ = false;
  task_steps_ = 0;
  steps_per_task_.clear();
  return observe();
}

TaskId MiniManip::current_task() const {
  const size_t i = std::min(static_cast<size_t>(progress_), chain_.tasks.size() - 1);
  return chain_.tasks[i];
}

vla::Observation MiniManip::observe() const {
  return observe_state(st_, scene_, task_instruction(current_task()));
}

MiniManip::StepResult MiniManip::step(const codec::RawAction& action) {
  check(!done_, "step: episode already finished");
  check(action.finite(), "step: non-finite action");
  const codec::RawAction a = to_physical_units(action, scene_);

  const double dx = std::clamp(a[0], -kMaxXYZ, kMaxXYZ);
  const double dy = std::clamp(a[1], -kMaxXYZ, kMaxXYZ);
  const double dz = std::clamp(a[2], -kMaxXYZ, kMaxXYZ);
  const double dyaw = std::clamp(a[5], -kMaxYaw, kMaxYaw);
  st_.closed = a[6] >= 0.0;

  const double ox = st_.x, oy = st_.y, oz = st_.z;
  const double nx = std::clamp(st_.x + dx, kMinXY, kMaxXY);
  const double ny = std::clamp(st_.y + dy, kMinXY, kMaxXY);
  const double nz = std::clamp(st_.z + dz, 0.0, kMaxZ);
  const double adx = nx - st_.x;
  const double ady = ny - st_.y;
  st_.x = nx;
  st_.y = ny;
  st_.z = nz;
  st_.yaw += dyaw;

  // release
  if (!st_.closed && st_.held_block >= 0) {
    auto& b = st_.blocks[static_cast<size_t>(st_.held_block)];
    b.z = 0.0;
    b.in_drawer = in_drawer_region(scene_, st_, b.x, b.y) && st_.drawer >= 0.5;
    st_.held_block = -1;
  }

  // held block follows the gripper
  if (st_.held_block >= 0) {
    auto& b = st_.blocks[static_cast<size_t>(st_.held_block)];
    b.x = st_.x;
    b.y = st_.y;
    b.z = std::max(0.0, st_.z - 0.02);
    b.yaw += dyaw;
  }

  // grasp: closed gripper low over a block
  if (st_.closed && st_.held_block < 0 && st_.z <= kGraspZ) {
    int best = -1;
    double bestd = kGraspRadius;
    for (int b = 0; b < kNumBlocks; ++b) {
      const auto& blk = st_.blocks[static_cast<size_t>(b)];
      if (blk.in_drawer && st_.drawer < 0.5) continue;
      const double d = dist2d(st_.x, st_.y, blk.x, blk.y);
      if (d <= bestd) {
        bestd = d;
        best = b;
      }
    }
    if (best >= 0) {
      st_.held_block = best;
      auto& blk = st_.blocks[static_cast<size_t>(best)];
      blk.x = st_.x;
      blk.y = st_.y;
      blk.z = std::max(0.0, st_.z - 0.02);
      blk.in_drawer = false;
    }
  }

  // pushing: an empty gripper sweeping at table level drags nearby blocks
  if (st_.held_block < 0 && st_.z <= kPushZ && (adx != 0.0 || ady != 0.0)) {
    for (int b = 0; b < kNumBlocks; ++b) {
      auto& blk = st_.blocks[static_cast<size_t>(b)];
      if (blk.in_drawer) continue;
      if (dist2d(st_.x, st_.y, blk.x, blk.y) <= kPushRadius) {
        blk.x = std::clamp(blk.x + adx, kMinXY, kMaxXY);
        blk.y = std::clamp(blk.y + ady, kMinXY, kMaxXY);
      }
    }
  }

  // Drawer / slider dragging with a closed, empty gripper. Contact is judged
  // where the motion started: grab the handle, then pull.
  if (st_.closed && st_.held_block < 0 && oz <= kHandleZ && st_.z <= kHandleZ) {
    const double hx = drawer_handle_x(scene_, st_);
    const double hy = drawer_front_y(scene_, st_);
    if (dist2d(ox, oy, hx, hy) <= kHandleRadius)
      st_.drawer = std::clamp(st_.drawer + ady / kDrawerTravel, 0.0, 1.0);
    const double lo = scene_.layout.slider_lo + st_.slider_dx;
    const double hi = scene_.layout.slider_hi + st_.slider_dx;
    if (dist2d(ox, oy, st_.slider, scene_.layout.slider_y) <= kHandleRadius)
      st_.slider = std::clamp(st_.slider + adx, lo, hi);
  }

  // button edges
  const auto lb = light_button_pos(scene_, st_);
  const bool lcond = st_.closed && st_.z <= kPressZ &&
                     dist2d(st_.x, st_.y, lb[0], lb[1]) <= kPressRadius;
  if (lcond && !st_.prev_light_press) st_.light = !st_.light;
  st_.prev_light_press = lcond;
  const auto eb = led_button_pos(scene_, st_);
  const bool econd = st_.closed && st_.z <= kPressZ &&
                     dist2d(st_.x, st_.y, eb[0], eb[1]) <= kPressRadius;
  if (econd && !st_.prev_led_press) st_.led = !st_.led;
  st_.prev_led_press = econd;

  ++st_.step_count;
  ++task_steps_;

  if (task_success(current_task(), scene_, st_, task_start_)) {
    steps_per_task_.push_back(task_steps_);
    ++progress_;
    if (static_cast<size_t>(progress_) == chain_.tasks.size()) {
      done_ = true;
    } else {
      task_start_ = st_;
      task_steps_ = 0;
    }
  } else if (task_steps_ >= chain_.per_task_budget) {
    done_ = true;
  }
  return StepResult{observe(), progress_, done_};
}

codec::RawAction MiniManip::expert() const {
  return to_embodiment_units(expert_action(current_task(), scene_, st_, task_start_),
                             scene_);
}

bool MiniManip::chain_feasible(const SceneConfig& scene, const TaskChain& chain,
                               uint64_t seed) {
  MiniManip sim(scene);
  sim.reset(chain, seed);
  const int max_steps = chain.per_task_budget * static_cast<int>(chain.tasks.size());
  for (int s = 0; s < max_steps && !sim.done(); ++s) sim.step(sim.expert());
  return sim.done() &&
         static_cast<size_t>(sim.chain_progress()) == chain.tasks.size();
}

TaskChain MiniManip::sample_chain(const SceneConfig& scene, uint64_t seed) {
  core::Rng base(seed ^ 0xC1A1Full);
  for (int attempt = 0; attempt < 64; ++attempt) {
    core::Rng rng = base.fork(static_cast<uint64_t>(attempt));
    std::vector<int> ids(kNumTasks);
    for (int i = 0; i < kNumTasks; ++i) ids[static_cast<size_t>(i)] = i;
    rng.shuffle(ids);
    TaskChain chain;
    chain.per_task_budget = kTaskBudget;
    for (int i = 0; i < 5; ++i) chain.tasks.push_back(static_cast<TaskId>(ids[static_cast<size_t>(i)]));
    if (chain_feasible(scene, chain, seed)) return chain;
  }
  throw Error("sample_chain: no feasible 5-task chain found for seed " +
              std::to_string(seed));
}

}  // namespace minivla::sim
