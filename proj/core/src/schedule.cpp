#include "minivla/data/schedule.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "minivla/core/checkpoint.hpp"

namespace minivla::data {

MixtureSchedule MixtureSchedule::load(const std::string& path) {
  std::ifstream f(path);
  check(f.is_open(), "schedule: cannot open " + path);
  nlohmann::json j;
  f >> j;
  MixtureSchedule sched;
  for (const auto& js : j.at("stages")) {
    Stage st;
    st.name = js.at("name").get<std::string>();
    for (auto it = js.at("weights").begin(); it != js.at("weights").end(); ++it)
      st.weights.emplace_back(it.key(), it.value().get<double>());
    st.steps = js.at("steps").get<int64_t>();
    if (js.contains("stats")) st.stats = js.at("stats").get<std::string>();
    if (js.contains("per_task_limit"))
      st.per_task_limit = js.at("per_task_limit").get<int64_t>();
    if (js.contains("splits"))
      for (const auto& s : js.at("splits")) st.splits.push_back(s.get<std::string>());
    sched.stages.push_back(std::move(st));
  }
  sched.validate();
  return sched;
}

void MixtureSchedule::validate() const {
  check(!stages.empty(), "schedule: no stages");
  for (size_t i = 0; i < stages.size(); ++i) {
    const auto& st = stages[i];
    check(!st.weights.empty(), "schedule: stage " + st.name + " has no datasets");
    check(st.steps > 0, "schedule: stage " + st.name + " has non-positive budget");
    double sum = 0.0;
    for (const auto& [name, w] : st.weights) {
      check(w > 0.0, "schedule: non-positive weight in stage " + st.name);
      sum += w;
    }
    check(std::fabs(sum - 1.0) <= 1e-9,
          "schedule: stage " + st.name + " weights must sum to 1");
    if (i == 0)
      check(st.stats != "reuse", "schedule: first stage cannot reuse stats");
  }
}

namespace {

std::vector<const Episode*> select_episodes(const std::vector<Episode>& all,
                                            const Stage& st) {
  std::vector<const Episode*> out;
  std::map<int, int64_t> per_task;
  for (const auto& ep : all) {
    if (!st.splits.empty() &&
        std::find(st.splits.begin(), st.splits.end(), ep.split) == st.splits.end())
      continue;
    if (st.per_task_limit > 0 && per_task[ep.task] >= st.per_task_limit) continue;
    ++per_task[ep.task];
    out.push_back(&ep);
  }
  return out;
}

}  // namespace

ScheduleResult run_schedule(const MixtureSchedule& schedule, vla::VlaModel& model,
                            const vla::TrainConfig& base_train,
                            const std::map<std::string, std::string>& dataset_paths,
                            const std::string& scenes_path,
                            const backbone::Vocabulary& vocab,
                            const std::string& out_dir, uint64_t seed) {
  schedule.validate();
  // Resolve and load everything up front; a missing dataset must fail before
  // any training happens.
  std::map<std::string, std::vector<Episode>> loaded;
  for (const auto& st : schedule.stages)
    for (const auto& [name, w] : st.weights) {
      if (loaded.count(name)) continue;
      auto it = dataset_paths.find(name);
      check(it != dataset_paths.end(), "schedule: dataset '" + name + "' not configured");
      loaded[name] = read_episodes(it->second);
    }

  std::filesystem::create_directories(out_dir);
  ScheduleResult result;
  codec::NormStats stats{};
  bool have_stats = false;

  for (size_t si = 0; si < schedule.stages.size(); ++si) {
    const Stage& st = schedule.stages[si];
    std::vector<WindowSampler::Source> sources;
    std::vector<const Episode*> stage_union;
    for (const auto& [name, w] : st.weights) {
      WindowSampler::Source src;
      src.episodes = select_episodes(loaded[name], st);
      check(!src.episodes.empty(),
            "schedule: stage " + st.name + " selected no episodes from " + name);
      src.weight = w;
      stage_union.insert(stage_union.end(), src.episodes.begin(), src.episodes.end());
      sources.push_back(std::move(src));
    }

    if (st.stats == "refit") {
      std::vector<codec::RawAction> actions;
      for (const Episode* ep : stage_union)
        for (const auto& step : ep->steps) actions.push_back(step.action);
      stats = codec::compute_norm_stats(actions);
      have_stats = true;
    } else if (st.stats == "reuse") {
      check(have_stats, "schedule: no stats to reuse in stage " + st.name);
    } else {
      stats = codec::NormStats::load(st.stats);
      have_stats = true;
    }

    const std::string tag = "stage" + std::to_string(si) + "_" + st.name;
    const std::string stats_path = out_dir + "/" + tag + ".stats.json";
    stats.save(stats_path);

    WindowSampler sampler(std::move(sources), model.formulation().window,
                          model.formulation().chunk, seed + si, vocab, scenes_path,
                          model.backbone_config().n_cameras, stats);
    vla::TrainConfig tc = base_train;
    tc.steps = st.steps;
    vla::Trainer trainer(model, tc);
    std::cerr << "[schedule] stage " << si << " '" << st.name << "' (" << st.steps
              << " steps)\n";
    trainer.run([&sampler] { return sampler.next(); }, st.steps);

    const std::string ckpt_path = out_dir + "/" + tag + ".ckpt";
    model.save(ckpt_path, &trainer.optimizer());
    result.stage_checkpoints.push_back(ckpt_path);
    result.stage_stats.push_back(stats_path);
  }
  return result;
}

}  // namespace minivla::data
