#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "minivla/sim/minimanip.hpp"

using namespace minivla;
using namespace minivla::sim;

namespace {
const std::string kScenes = std::string(MINIVLA_REPO_DIR) + "/data/scenes.json";

bool states_equal(const SimState& a, const SimState& b) {
  if (a.x != b.x || a.y != b.y || a.z != b.z || a.yaw != b.yaw) return false;
  if (a.closed != b.closed || a.held_block != b.held_block) return false;
  for (int i = 0; i < kNumBlocks; ++i) {
    const auto& ba = a.blocks[static_cast<size_t>(i)];
    const auto& bb = b.blocks[static_cast<size_t>(i)];
    if (ba.x != bb.x || ba.y != bb.y || ba.z != bb.z || ba.yaw != bb.yaw ||
        ba.in_drawer != bb.in_drawer)
      return false;
  }
  return a.drawer == b.drawer && a.slider == b.slider && a.light == b.light &&
         a.led == b.led;
}
}  // namespace

TEST_CASE("reset is bitwise deterministic; instruction matches chain task 1") {
  auto scene = SceneConfig::load(kScenes, "A", "A");
  TaskChain chain{{TaskId::kLiftRedBlock, TaskId::kOpenDrawer, TaskId::kToggleLight,
                   TaskId::kMoveSliderLeft, TaskId::kLiftBlueBlock},
                  kTaskBudget};
  MiniManip s1(scene), s2(scene);
  auto o1 = s1.reset(chain, 42);
  auto o2 = s2.reset(chain, 42);
  CHECK(o1.images[0] == o2.images[0]);
  CHECK(o1.images[1] == o2.images[1]);
  CHECK(o1.proprio == o2.proprio);
  CHECK(o1.instruction == task_instruction(TaskId::kLiftRedBlock));
  CHECK(states_equal(s1.state(), s2.state()));
}

TEST_CASE("split D differs from split A in rendered palette") {
  auto sceneA = SceneConfig::load(kScenes, "A", "A");
  auto sceneD = SceneConfig::load(kScenes, "D", "A");
  MiniManip sa(sceneA), sd(sceneD);
  TaskChain chain{{TaskId::kToggleLight}, kTaskBudget};
  auto oa = sa.reset(chain, 7);
  auto od = sd.reset(chain, 7);
  double l1 = 0;
  for (size_t i = 0; i < oa.images[0].size(); ++i)
    l1 += std::fabs(oa.images[0][i] - od.images[0][i]);
  CHECK(l1 > 10.0);
}

TEST_CASE("zero action leaves the state unchanged except the step counter") {
  auto scene = SceneConfig::load(kScenes, "B", "A");
  MiniManip s(scene);
  s.reset(TaskChain{{TaskId::kLiftRedBlock}, kTaskBudget}, 5);
  const SimState before = s.state();
  codec::RawAction zero{};
  s.step(zero);
  const SimState after = s.state();
  CHECK(states_equal(before, after));
  CHECK(after.step_count == before.step_count + 1);
}

TEST_CASE("non-finite action is an error") {
  auto scene = SceneConfig::load(kScenes, "A", "A");
  MiniManip s(scene);
  s.reset(TaskChain{{TaskId::kLiftRedBlock}, kTaskBudget}, 5);
  codec::RawAction bad{};
  bad[2] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS((void)s.step(bad), Error);
}

TEST_CASE("expert gate: 100% success on every (split, task) pair within budget") {
  for (const auto& split : SceneConfig::split_names()) {
    auto scene = SceneConfig::load(kScenes, split, "A");
    for (int t = 0; t < kNumTasks; ++t) {
      for (uint64_t seed = 1; seed <= 5; ++seed) {
        MiniManip s(scene);
        s.reset_for_task(static_cast<TaskId>(t), seed);
        while (!s.done()) s.step(s.expert());
        CAPTURE(split);
        CAPTURE(task_name(static_cast<TaskId>(t)));
        CAPTURE(seed);
        CHECK(s.chain_progress() == 1);
        CHECK(s.steps_per_completed_task()[0] <= kTaskBudget);
      }
    }
  }
}

TEST_CASE("scripted expert completes lift-red within 64 steps; chain_progress = 1") {
  auto scene = SceneConfig::load(kScenes, "A", "A");
  MiniManip s(scene);
  s.reset_for_task(TaskId::kLiftRedBlock, 11);
  int steps = 0;
  MiniManip::StepResult r;
  while (!s.done()) {
    r = s.step(s.expert());
    ++steps;
  }
  CHECK(r.chain_progress == 1);
  CHECK(steps <= 64);
}

TEST_CASE("expert determinism: identical runs are bitwise equal") {
  auto scene = SceneConfig::load(kScenes, "C", "A");
  auto run = [&](uint64_t seed) {
    MiniManip s(scene);
    s.reset_for_task(TaskId::kPlacePinkBlockInDrawer, seed);
    std::vector<codec::RawAction> actions;
    while (!s.done()) {
      actions.push_back(s.expert());
      s.step(actions.back());
    }
    return actions;
  };
  auto a = run(9), b = run(9);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t d = 0; d < 7; ++d) CHECK(a[i][d] == b[i][d]);
}

TEST_CASE("task budget: 64 idle steps fail the task and finish the episode") {
  auto scene = SceneConfig::load(kScenes, "A", "A");
  MiniManip s(scene);
  s.reset_for_task(TaskId::kOpenDrawer, 3);
  codec::RawAction zero{};
  MiniManip::StepResult r;
  for (int i = 0; i < kTaskBudget; ++i) r = s.step(zero);
  CHECK(r.done);
  CHECK(r.chain_progress == 0);
  CHECK_THROWS_AS((void)s.step(zero), Error);  // stepping a finished episode
}

TEST_CASE("success predicates are pure: same state, same verdict") {
  auto scene = SceneConfig::load(kScenes, "A", "A");
  MiniManip s(scene);
  s.reset_for_task(TaskId::kToggleLight, 17);
  const SimState start = s.task_start_state();
  SimState toggled = start;
  toggled.light = !start.light;
  CHECK(task_success(TaskId::kToggleLight, scene, toggled, start));
  CHECK(task_success(TaskId::kToggleLight, scene, toggled, start));  // monotone re-eval
  CHECK(!task_success(TaskId::kToggleLight, scene, start, start));
}

TEST_CASE("chain semantics: completed count equals the index of the first failure") {
  auto scene = SceneConfig::load(kScenes, "A", "A");
  const auto chain = MiniManip::sample_chain(scene, 23);
  REQUIRE(chain.tasks.size() == 5);
  // all five tasks are distinct
  for (size_t i = 0; i < 5; ++i)
    for (size_t j = i + 1; j < 5; ++j) CHECK(chain.tasks[i] != chain.tasks[j]);

  // Run the expert for the first two tasks only, then idle out the budget.
  MiniManip s(scene);
  s.reset(chain, 23);
  while (!s.done() && s.chain_progress() < 2) s.step(s.expert());
  codec::RawAction zero{};
  while (!s.done()) s.step(zero);
  CHECK(s.chain_progress() == 2);
}

TEST_CASE("sample_chain is deterministic and expert-feasible") {
  auto scene = SceneConfig::load(kScenes, "D", "A");
  const auto c1 = MiniManip::sample_chain(scene, 77);
  const auto c2 = MiniManip::sample_chain(scene, 77);
  CHECK(c1.tasks == c2.tasks);
  CHECK(MiniManip::chain_feasible(scene, c1, 77));
}

TEST_CASE("embodiment B: recorded actions differ from physical by the affine map") {
  auto sceneB = SceneConfig::load(kScenes, "A", "B");
  MiniManip s(sceneB);
  s.reset_for_task(TaskId::kLiftBlueBlock, 31);
  const codec::RawAction emb = s.expert();
  const codec::RawAction phys = to_physical_units(emb, sceneB);
  for (size_t d = 0; d < 7; ++d)
    CHECK(emb[d] == doctest::Approx(phys[d] * sceneB.action_scale[d]).epsilon(1e-15));
  CHECK(sceneB.action_scale[0] == 2.0);
  CHECK(sceneB.action_scale[6] == 1.0);

  // Same seed, same split: the physical trajectory matches embodiment A's.
  auto sceneA = SceneConfig::load(kScenes, "A", "A");
  MiniManip sa(sceneA);
  sa.reset_for_task(TaskId::kLiftBlueBlock, 31);
  MiniManip sb(sceneB);
  sb.reset_for_task(TaskId::kLiftBlueBlock, 31);
  while (!sa.done() && !sb.done()) {
    sa.step(sa.expert());
    sb.step(sb.expert());
    CHECK(sa.state().x == sb.state().x);
    CHECK(sa.state().z == sb.state().z);
  }
  CHECK(sa.done() == sb.done());
}

TEST_CASE("instruction switches to the next task on mid-episode success") {
  auto scene = SceneConfig::load(kScenes, "A", "A");
  const auto chain = MiniManip::sample_chain(scene, 41);
  MiniManip s(scene);
  auto obs = s.reset(chain, 41);
  CHECK(obs.instruction == task_instruction(chain.tasks[0]));
  while (!s.done() && s.chain_progress() == 0) {
    auto r = s.step(s.expert());
    obs = r.obs;
  }
  REQUIRE(s.chain_progress() == 1);
  CHECK(obs.instruction == task_instruction(chain.tasks[1]));
}

TEST_CASE("executed raw action stays inside stats bounds after denormalize") {
  // denormalize clamps into [q01, q99] by construction; spot check via sim
  codec::NormStats st;
  for (size_t d = 0; d < 7; ++d) {
    st.q01[d] = -0.08;
    st.q99[d] = 0.08;
    st.degenerate[d] = false;
  }
  codec::NormalizedAction n;
  n.v = {2.0, -2.0, 0.5, 0, 0, -1, 1};  // out-of-range values get clipped first
  auto a = codec::denormalize(n, st);
  for (size_t d = 0; d < 7; ++d) {
    CHECK(a[d] >= st.q01[d]);
    CHECK(a[d] <= st.q99[d]);
  }
}
