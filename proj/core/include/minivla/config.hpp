#pragma once

#include <map>
#include <string>
#include <vector>

#include "minivla/backbone/backbone.hpp"
#include "minivla/vla/formulation.hpp"
#include "minivla/vla/trainer.hpp"

namespace minivla {

struct DataConfig {
  std::string scenes = "data/scenes.json";
  std::string vocab = "data/vocab.txt";
  std::string dataset;                           // training shard
  std::map<std::string, std::string> datasets;   // named shards for schedules
  std::string stats = "fit";                     // "fit" or a stats file path
  std::vector<std::string> train_splits = {"A", "B", "C", "D"};
  std::string embodiment = "A";
};

struct EvalConfig {
  int64_t n_rollouts = 100;
  std::string split = "D";
  std::string embodiment = "A";
};

// The one config file the CLI consumes. Parsing is strict: any unknown key
// anywhere in the document is an error, so typos cannot silently fall back
// to defaults.
struct GlobalConfig {
  uint64_t seed = 1;
  backbone::BackboneConfig model;
  vla::FormulationConfig formulation;
  vla::TrainConfig train;
  DataConfig data;
  EvalConfig eval;

  static GlobalConfig load(const std::string& path);
  static GlobalConfig parse(const std::string& json_text, const std::string& origin);

  // Canonical, key-sorted rendering; two configs with equal canonical text
  // behave identically.
  std::string canonical() const;
  uint64_t fingerprint() const;
};

}  // namespace minivla
