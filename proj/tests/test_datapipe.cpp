#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "minivla/data/episode.hpp"
#include "minivla/data/schedule.hpp"
#include "minivla/vla/trainer.hpp"

using namespace minivla;
namespace fs = std::filesystem;

namespace {
const std::string kScenes = std::string(MINIVLA_REPO_DIR) + "/data/scenes.json";
const std::string kVocab = std::string(MINIVLA_REPO_DIR) + "/data/vocab.txt";

std::string tmp_path(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}
}  // namespace

TEST_CASE("episode shards: write-read round trip is lossless") {
  auto eps = data::generate_episodes(kScenes, {"A", "B"}, "A", 24, 3);
  const std::string path = tmp_path("mv_shard.traj");
  data::write_episodes(path, eps);
  auto back = data::read_episodes(path);
  REQUIRE(back.size() == eps.size());
  for (size_t i = 0; i < eps.size(); ++i) {
    CHECK(back[i].id == eps[i].id);
    CHECK(back[i].split == eps[i].split);
    CHECK(back[i].task == eps[i].task);
    CHECK(back[i].instruction == eps[i].instruction);
    REQUIRE(back[i].steps.size() == eps[i].steps.size());
    for (size_t s = 0; s < eps[i].steps.size(); ++s) {
      CHECK(back[i].steps[s].action.v == eps[i].steps[s].action.v);
      CHECK(back[i].steps[s].state.x == eps[i].steps[s].state.x);
      CHECK(back[i].steps[s].state.drawer == eps[i].steps[s].state.drawer);
    }
  }
  CHECK(fs::exists(path + ".idx"));
  fs::remove(path);
  fs::remove(path + ".idx");
}

TEST_CASE("episode shards: truncated file errors with the episode index") {
  auto eps = data::generate_episodes(kScenes, {"A"}, "A", 6, 4);
  const std::string path = tmp_path("mv_trunc.traj");
  data::write_episodes(path, eps);
  std::string bytes = file_bytes(path);
  // chop the last 40 bytes
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 40));
  f.close();
  try {
    (void)data::read_episodes(path);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("episode 5") != std::string::npos);
  }
  fs::remove(path);
  fs::remove(path + ".idx");
}

TEST_CASE("generated corpora are byte-identical given a seed") {
  const std::string p1 = tmp_path("mv_det1.traj");
  const std::string p2 = tmp_path("mv_det2.traj");
  data::write_episodes(p1, data::generate_episodes(kScenes, {"A", "C"}, "A", 30, 7));
  data::write_episodes(p2, data::generate_episodes(kScenes, {"A", "C"}, "A", 30, 7));
  CHECK(file_bytes(p1) == file_bytes(p2));
  for (const auto& p : {p1, p2}) {
    fs::remove(p);
    fs::remove(p + ".idx");
  }
}

TEST_CASE("fit_stats: embodiment B differs from A by the documented affine map") {
  auto a = data::generate_episodes(kScenes, {"A"}, "A", 36, 9);
  auto b = data::generate_episodes(kScenes, {"A"}, "B", 36, 9);
  auto merged = a;
  merged.insert(merged.end(), b.begin(), b.end());
  auto sa = data::fit_stats(merged, "A");
  auto sb = data::fit_stats(merged, "B");
  // scale = (2,2,2,1,1,2,1); same seeds, same physical trajectories
  CHECK(sb.q01[0] == doctest::Approx(2.0 * sa.q01[0]).epsilon(1e-12));
  CHECK(sb.q99[2] == doctest::Approx(2.0 * sa.q99[2]).epsilon(1e-12));
  CHECK(sb.q01[5] == doctest::Approx(2.0 * sa.q01[5]).epsilon(1e-12));
  CHECK(sb.q99[6] == doctest::Approx(sa.q99[6]).epsilon(1e-12));
  CHECK(sa.q01[6] == -1.0);
  CHECK(sa.q99[6] == 1.0);
  CHECK_THROWS_AS((void)data::fit_stats(a, "Z"), Error);
}

TEST_CASE("window sampler: padding, target masking and anchor coverage") {
  auto eps = data::generate_episodes(kScenes, {"A"}, "A", 12, 5);
  auto vocab = backbone::Vocabulary::load(kVocab);
  auto stats = data::fit_stats(eps, "A");
  data::WindowSampler::Source src;
  for (const auto& ep : eps) src.episodes.push_back(&ep);

  const int64_t H = 8, L = 10;
  data::WindowSampler sampler({src}, H, L, 99, vocab, kScenes, 1, stats);

  // anchor t=0: H-1 padded frames, identical to frame 0
  auto s0 = sampler.materialize({0, 0, 0});
  REQUIRE(s0.frames.size() == H);
  for (int64_t h = 0; h + 1 < H; ++h) {
    CHECK(s0.frames[static_cast<size_t>(h)].images[0] == s0.frames.back().images[0]);
    CHECK(s0.frames[static_cast<size_t>(h)].proprio == s0.frames.back().proprio);
  }

  // anchor near the end: valid targets then masked tail padded with the last
  const auto& ep0 = eps[0];
  const int64_t t_ep = static_cast<int64_t>(ep0.steps.size());
  const int64_t anchor = t_ep - 3;
  auto se = sampler.materialize({0, 0, anchor});
  REQUIRE(static_cast<int64_t>(se.target_valid.size()) == L);
  for (int64_t l = 0; l < L; ++l)
    CHECK(static_cast<bool>(se.target_valid[static_cast<size_t>(l)]) ==
          (anchor + l < t_ep));
  const auto last_norm = codec::normalize(ep0.steps.back().action, stats);
  for (int64_t l = 3; l < L; ++l)
    for (size_t d = 0; d < 7; ++d)
      CHECK(se.target_norm[static_cast<size_t>(l)][d] == last_norm[d]);

  // all targets normalized into [-1,1]
  for (int64_t l = 0; l < L; ++l)
    for (size_t d = 0; d < 7; ++d) {
      CHECK(se.target_norm[static_cast<size_t>(l)][d] <= 1.0);
      CHECK(se.target_norm[static_cast<size_t>(l)][d] >= -1.0);
    }

  // seed determinism of the anchor stream
  data::WindowSampler s1({src}, H, L, 123, vocab, kScenes, 1, stats);
  data::WindowSampler s2({src}, H, L, 123, vocab, kScenes, 1, stats);
  for (int i = 0; i < 50; ++i) {
    (void)s1.next();
    (void)s2.next();
    CHECK(s1.last_anchor().episode == s2.last_anchor().episode);
    CHECK(s1.last_anchor().t == s2.last_anchor().t);
  }

  // chi-square sanity: every anchor hit with plausible frequency
  const int64_t n_anchors = sampler.anchor_count(0);
  std::vector<int64_t> counts(static_cast<size_t>(n_anchors), 0);
  std::vector<int64_t> offsets;
  int64_t acc = 0;
  for (const auto& ep : eps) {
    offsets.push_back(acc);
    acc += static_cast<int64_t>(ep.steps.size());
  }
  const int64_t draws = 100000;
  for (int64_t i = 0; i < draws; ++i) {
    const auto a = sampler.next_anchor();
    ++counts[static_cast<size_t>(offsets[static_cast<size_t>(a.episode)] + a.t)];
  }
  const double expect = static_cast<double>(draws) / static_cast<double>(n_anchors);
  double chi2 = 0.0;
  for (int64_t c : counts) {
    CHECK(c > 0);  // positive probability everywhere
    const double d = static_cast<double>(c) - expect;
    chi2 += d * d / expect;
  }
  // dof = n_anchors - 1; mean dof, sd sqrt(2 dof): allow 5 sigma
  const double dof = static_cast<double>(n_anchors - 1);
  CHECK(chi2 < dof + 5.0 * std::sqrt(2.0 * dof));
}

TEST_CASE("masked chunk tail contributes zero gradient (train-step oracle)") {
  auto eps = data::generate_episodes(kScenes, {"A"}, "A", 4, 21);
  auto vocab = backbone::Vocabulary::load(kVocab);
  auto stats = data::fit_stats(eps, "A");
  data::WindowSampler::Source src;
  for (const auto& ep : eps) src.episodes.push_back(&ep);
  data::WindowSampler sampler({src}, 2, 6, 31, vocab, kScenes, 1, stats);

  // Find an anchor with a masked tail.
  const int64_t t_ep = static_cast<int64_t>(eps[0].steps.size());
  auto sample = sampler.materialize({0, 0, t_ep - 2});
  REQUIRE(sample.target_valid.back() == 0);

  backbone::BackboneConfig bcfg;
  bcfg.dim = 16;
  bcfg.depth = 1;
  bcfg.heads = 2;
  bcfg.ffn_mult = 2;
  bcfg.vocab_size = 512;
  bcfg.patch_size = 16;
  bcfg.image_px = 32;
  vla::FormulationConfig fcfg;
  fcfg.kind = vla::FormulationKind::kPolicyHeadContinuous;
  fcfg.window = 2;
  fcfg.chunk = 6;
  fcfg.head = vla::HeadKind::kMlp;

  auto train_once = [&](const vla::TrainSample& s) {
    vla::VlaModel model(bcfg, fcfg, 5);
    vla::TrainConfig tc;
    tc.batch_size = 1;
    tc.log_every = 0;
    vla::Trainer tr(model, tc);
    tr.run([&] { return s; }, 1);
    std::vector<double> flat;
    for (const auto& [n, t] : model.params().items())
      flat.insert(flat.end(), t.vec().begin(), t.vec().end());
    return flat;
  };

  auto garbled = sample;
  for (size_t l = 0; l < garbled.target_valid.size(); ++l)
    if (!garbled.target_valid[l]) garbled.target_norm[l].fill(0.77);
  CHECK(train_once(sample) == train_once(garbled));
}

TEST_CASE("mixture schedule: validation and canonical recipes") {
  data::MixtureSchedule bad;
  bad.stages.push_back({"s0", {{"a", 0.6}, {"b", 0.3}}, 10, "refit", 0, {}});
  CHECK_THROWS_AS(bad.validate(), Error);  // weights must sum to 1

  data::MixtureSchedule reuse_first;
  reuse_first.stages.push_back({"s0", {{"a", 1.0}}, 10, "reuse", 0, {}});
  CHECK_THROWS_AS(reuse_first.validate(), Error);

  data::MixtureSchedule ok;
  ok.stages.push_back({"finetune", {{"target", 1.0}}, 5, "refit", 0, {}});
  ok.validate();
}

TEST_CASE("run_schedule: post-train chains checkpoints; few-shot caps per task") {
  const std::string dir = tmp_path("mv_sched");
  fs::create_directories(dir);
  auto pre = data::generate_episodes(kScenes, {"A"}, "A", 24, 41);
  auto tgt = data::generate_episodes(kScenes, {"A"}, "B", 36, 43);
  data::write_episodes(dir + "/pre.traj", pre);
  data::write_episodes(dir + "/tgt.traj", tgt);

  backbone::BackboneConfig bcfg;
  bcfg.dim = 16;
  bcfg.depth = 1;
  bcfg.heads = 2;
  bcfg.ffn_mult = 2;
  bcfg.vocab_size = 512;
  bcfg.patch_size = 16;
  bcfg.image_px = 32;
  vla::FormulationConfig fcfg;
  fcfg.kind = vla::FormulationKind::kOneStepContinuous;
  fcfg.window = 1;
  fcfg.chunk = 2;
  fcfg.head = vla::HeadKind::kMlp;

  data::MixtureSchedule sched;
  sched.stages.push_back({"pretrain", {{"pre", 1.0}}, 3, "refit", 0, {}});
  sched.stages.push_back({"fewshot", {{"tgt", 1.0}}, 3, "refit", 1, {}});

  auto vocab = backbone::Vocabulary::load(kVocab);
  vla::VlaModel model(bcfg, fcfg, 61);
  vla::TrainConfig tc;
  tc.batch_size = 2;
  tc.log_every = 0;
  auto result = run_schedule(sched, model, tc,
                             {{"pre", dir + "/pre.traj"}, {"tgt", dir + "/tgt.traj"}},
                             kScenes, vocab, dir + "/out", 71);
  REQUIRE(result.stage_checkpoints.size() == 2);
  CHECK(fs::exists(result.stage_checkpoints[0]));
  CHECK(fs::exists(result.stage_checkpoints[1]));
  CHECK(fs::exists(result.stage_stats[1]));

  // Stage 2 initialized from stage 1: load stage-1 checkpoint, its params
  // must differ from stage-2's (training continued).
  vla::VlaModel m1(bcfg, fcfg, 1);
  m1.load(result.stage_checkpoints[0]);
  vla::VlaModel m2(bcfg, fcfg, 2);
  m2.load(result.stage_checkpoints[1]);
  bool differ = false;
  for (size_t i = 0; i < m1.params().items().size(); ++i)
    if (m1.params().items()[i].second.vec() != m2.params().items()[i].second.vec())
      differ = true;
  CHECK(differ);

  // missing dataset fails before training
  data::MixtureSchedule missing;
  missing.stages.push_back({"x", {{"nope", 1.0}}, 3, "refit", 0, {}});
  vla::VlaModel m3(bcfg, fcfg, 3);
  CHECK_THROWS_AS(run_schedule(missing, m3, tc, {{"pre", dir + "/pre.traj"}}, kScenes,
                               vocab, dir + "/out2", 5),
                  Error);
  fs::remove_all(dir);
}

TEST_CASE("few-shot selection takes exactly N episodes per task") {
  auto eps = data::generate_episodes(kScenes, {"A", "B"}, "A", 96, 13);
  const std::string dir = tmp_path("mv_fewshot");
  fs::create_directories(dir);
  data::write_episodes(dir + "/d.traj", eps);

  data::MixtureSchedule sched;
  sched.stages.push_back({"fs", {{"d", 1.0}}, 1, "refit", 2, {}});
  // exercise selection through the sampler source counting
  auto all = data::read_episodes(dir + "/d.traj");
  std::map<int, int> per_task;
  int selected = 0;
  {
    // replicate the stage selection rule: first N per task in file order
    std::map<int, int64_t> cap;
    for (const auto& ep : all) {
      if (cap[ep.task] >= 2) continue;
      ++cap[ep.task];
      ++per_task[ep.task];
      ++selected;
    }
  }
  for (const auto& [task, n] : per_task) CHECK(n == 2);
  CHECK(selected == 2 * static_cast<int>(per_task.size()));
  fs::remove_all(dir);
}
