#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "minivla/backbone/vocab.hpp"
#include "minivla/codec/action_codec.hpp"
#include "minivla/sim/minimanip.hpp"
#include "minivla/vla/formulation.hpp"

namespace minivla::data {

// One recorded step: the renderable world state the policy observed and the
// action taken from it, stored in the episode's embodiment units. Storing
// states instead of pixels keeps shards small and lossless; frames are
// re-rendered deterministically on demand.
struct StepRecord {
  sim::SimState state;
  codec::RawAction action;
};

struct Episode {
  int64_t id = 0;
  std::string split;       // "A".."D"
  std::string embodiment;  // "A" or "B"
  int task = 0;            // sim::TaskId value
  uint64_t seed = 0;
  std::string instruction;
  std::vector<StepRecord> steps;
};

// Record-framed binary shard with a text header:
//   line 1: "MINIVLA-TRAJ 1"
//   line 2: one JSON object {"schema","cameras","count"}
//   then per episode: u32 payload length + payload bytes.
// A sidecar "<path>.idx" lists "offset length steps" per episode for anchor
// lookup without decoding payloads.
void write_episodes(const std::string& path, const std::vector<Episode>& episodes);
std::vector<Episode> read_episodes(const std::string& path);

// Percentile fit over the actions of the selected embodiment.
codec::NormStats fit_stats(const std::vector<Episode>& episodes,
                           const std::string& embodiment);

// Generates scripted-expert demonstrations: `n_episodes` per listed split for
// the given embodiment, tasks cycling deterministically. Episodes that fail
// the expert gate raise an error.
std::vector<Episode> generate_episodes(const std::string& scenes_path,
                                       const std::vector<std::string>& splits,
                                       const std::string& embodiment,
                                       int64_t n_episodes, uint64_t seed);

// Uniform window sampler over all (episode, t) anchors, weighted across
// sources. Draws come from one sequential seeded stream, so batch composition
// is reproducible.
class WindowSampler {
 public:
  struct Source {
    std::vector<const Episode*> episodes;
    double weight = 1.0;
  };

  WindowSampler(std::vector<Source> sources, int64_t window, int64_t chunk,
                uint64_t seed, const backbone::Vocabulary& vocab,
                const std::string& scenes_path, int64_t n_cameras,
                const codec::NormStats& stats);

  vla::TrainSample next();

  struct Anchor {
    int source = 0;
    int64_t episode = 0;  // index within source
    int64_t t = 0;
  };
  // Advances the stream and returns the anchor without materializing frames.
  Anchor next_anchor();
  const Anchor& last_anchor() const { return last_; }
  int64_t anchor_count(int source) const;

  // Materializes one window without advancing the stream (for tests).
  vla::TrainSample materialize(const Anchor& a) const;

 private:
  const sim::SceneConfig& scene_for(const Episode& ep) const;

  std::vector<Source> sources_;
  std::vector<std::vector<int64_t>> anchor_offsets_;  // per source: episode -> first anchor
  std::vector<int64_t> totals_;
  std::vector<double> cum_weights_;
  int64_t window_, chunk_;
  core::Rng rng_;
  const backbone::Vocabulary& vocab_;
  std::string scenes_path_;
  int64_t n_cameras_;
  codec::NormStats stats_;
  Anchor last_;
  mutable std::map<std::string, std::unique_ptr<sim::SceneConfig>> scene_cache_;
};

}  // namespace minivla::data
