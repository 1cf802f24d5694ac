#pragma once

#include <map>
#include <string>
#include <vector>

#include "minivla/data/episode.hpp"
#include "minivla/vla/trainer.hpp"

namespace minivla::data {

// One training stage: a weighted mixture of named datasets and a step budget.
// stats selects the normalization bounds: "refit" fits on this stage's
// episodes, "reuse" carries the previous stage's stats, anything else is a
// stats file path.
struct Stage {
  std::string name;
  std::vector<std::pair<std::string, double>> weights;
  int64_t steps = 0;
  std::string stats = "refit";
  int64_t per_task_limit = 0;          // 0 = no cap; N = first N episodes per task
  std::vector<std::string> splits;     // empty = all splits in the dataset
};

struct MixtureSchedule {
  std::vector<Stage> stages;

  static MixtureSchedule load(const std::string& path);
  void validate() const;
};

struct ScheduleResult {
  std::vector<std::string> stage_checkpoints;
  std::vector<std::string> stage_stats;
};

// Executes stages sequentially on one model, checkpointing at stage
// boundaries (each stage trains the weights the previous stage produced).
// Every referenced dataset is resolved and loaded before any training starts.
ScheduleResult run_schedule(const MixtureSchedule& schedule, vla::VlaModel& model,
                            const vla::TrainConfig& base_train,
                            const std::map<std::string, std::string>& dataset_paths,
                            const std::string& scenes_path,
                            const backbone::Vocabulary& vocab,
                            const std::string& out_dir, uint64_t seed);

}  // namespace minivla::data
