#pragma once

#include <array>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "minivla/data/episode.hpp"
#include "minivla/sim/minimanip.hpp"
#include "minivla/vla/formulation.hpp"

namespace minivla::bench {

// A policy driven through chained rollouts. act() may inspect the simulator
// (the scripted-expert oracle needs the privileged state); learned policies
// only read the observation.
class ChainPolicy {
 public:
  virtual ~ChainPolicy() = default;
  virtual void reset() = 0;
  virtual codec::RawAction act(const vla::Observation& obs,
                               const sim::MiniManip& sim) = 0;
};

class ModelChainPolicy : public ChainPolicy {
 public:
  ModelChainPolicy(vla::VlaModel& model, const codec::NormStats& stats,
                   const backbone::Vocabulary& vocab)
      : policy_(model, stats, vocab) {}
  void reset() override { policy_.reset(); }
  codec::RawAction act(const vla::Observation& obs, const sim::MiniManip&) override {
    return policy_.act(obs);
  }

 private:
  vla::RolloutPolicy policy_;
};

class ExpertChainPolicy : public ChainPolicy {
 public:
  void reset() override {}
  codec::RawAction act(const vla::Observation&, const sim::MiniManip& sim) override {
    return sim.expert();
  }
};

struct RolloutResult {
  std::vector<int> tasks;  // the 5 chain task ids
  int completed = 0;       // index of the first failure
  std::vector<int> steps_per_task;
  uint64_t seed = 0;
  std::string failure;  // non-empty when the rollout aborted on an error
};

// n independent 5-task chains; rollout i uses seed + i. A simulator or
// policy error marks that rollout failed and the run continues.
std::vector<RolloutResult> run_rollouts(ChainPolicy& policy,
                                        const sim::SceneConfig& scene, int n,
                                        uint64_t seed);

struct EvalReport {
  std::array<double, 5> sr{};  // SR_1..SR_5
  double avg_len = 0.0;
  int n_rollouts = 0;
  std::map<std::string, std::array<int, 2>> per_task;  // name -> {successes, attempts}
  uint64_t seed = 0;
  std::string split, embodiment;
  uint64_t config_fingerprint = 0;

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  // Text table in the usual benchmark layout (SR_1..SR_5, Avg. Len.).
  std::string to_text(const std::string& label) const;
};

// SR_k = fraction of rollouts with completed >= k; avg_len is the literal sum
// of the five SR values (identically the mean completed count).
EvalReport aggregate(const std::vector<RolloutResult>& results);

// ---- published-results transcription --------------------------------------
struct TableRow {
  std::string table, method, train;
  std::array<double, 5> sr{};
  double avg_len = 0.0;
};

struct RowCheck {
  TableRow row;
  double sum = 0.0;
  double delta = 0.0;  // |sum - avg_len|
  bool ok = false;
};

std::vector<TableRow> load_result_tables(const std::string& path);
// Checks avg_len == sum(SR) within tol on every transcribed row.
std::vector<RowCheck> verify_result_tables(const std::string& path,
                                           double tol = 0.005);

// ---- design-space sweep ----------------------------------------------------
struct SweepCell {
  std::string name;
  vla::FormulationConfig formulation;
  double data_fraction = 1.0;  // deterministic episode subsampling
};

struct SweepRun {
  std::string cell;
  uint64_t seed = 0;
  EvalReport report;
  std::string error;  // non-empty when the cell crashed
};

struct SweepTable {
  std::vector<SweepRun> runs;
  // Rendered comparison, cells ranked by mean avg_len (descending), with
  // per-seed spread.
  std::string to_text() const;
};

using TrainEvalFn = std::function<EvalReport(const SweepCell&, uint64_t seed)>;
SweepTable sweep(const std::vector<SweepCell>& cells,
                 const std::vector<uint64_t>& seeds, const TrainEvalFn& run_cell);

uint64_t fnv1a(const std::string& text);

}  // namespace minivla::bench
