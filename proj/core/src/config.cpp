#include "minivla/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "minivla/bench/evalharness.hpp"

namespace minivla {

namespace {

using nlohmann::json;

// Section reader that records consumed keys and rejects leftovers.
class Strict {
 public:
  Strict(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    check(j_.is_object(), "config: " + path_ + " must be an object");
  }

  template <typename T>
  void opt(const char* key, T& out) {
    seen_.insert(key);
    if (j_.contains(key)) out = j_.at(key).get<T>();
  }

  void opt_str(const char* key, std::string& out) { opt<std::string>(key, out); }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& at(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      check(seen_.count(it.key()) > 0,
            "config: unknown key '" + path_ + "." + it.key() + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

backbone::Arch arch_from_string(const std::string& s) {
  if (s == "decoder_only") return backbone::Arch::kDecoderOnly;
  if (s == "encoder_decoder") return backbone::Arch::kEncoderDecoder;
  throw Error("config: unknown architecture '" + s + "'");
}

std::string arch_to_string(backbone::Arch a) {
  return a == backbone::Arch::kDecoderOnly ? "decoder_only" : "encoder_decoder";
}

backbone::CrossRole role_from_string(const std::string& s) {
  if (s == "text_queries") return backbone::CrossRole::kTextQueries;
  if (s == "vision_queries") return backbone::CrossRole::kVisionQueries;
  throw Error("config: unknown cross_role '" + s + "'");
}

std::string role_to_string(backbone::CrossRole r) {
  return r == backbone::CrossRole::kTextQueries ? "text_queries" : "vision_queries";
}

}  // namespace

GlobalConfig GlobalConfig::parse(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw Error("config: cannot parse " + origin + ": " + e.what());
  }
  GlobalConfig c;
  Strict root(j, "");
  root.opt("seed", c.seed);

  if (root.has("model")) {
    Strict m(root.at("model"), "model");
    std::string arch = arch_to_string(c.model.architecture);
    m.opt_str("architecture", arch);
    c.model.architecture = arch_from_string(arch);
    m.opt("dim", c.model.dim);
    m.opt("depth", c.model.depth);
    m.opt("heads", c.model.heads);
    m.opt("ffn_mult", c.model.ffn_mult);
    m.opt("vocab_size", c.model.vocab_size);
    m.opt("action_offset", c.model.action_offset);
    m.opt("patch_size", c.model.patch_size);
    m.opt("image_px", c.model.image_px);
    m.opt("n_cameras", c.model.n_cameras);
    m.opt("resampler_latents", c.model.resampler_latents);
    m.opt("proprio_token", c.model.proprio_token);
    m.opt("max_text", c.model.max_text);
    m.opt("max_window", c.model.max_window);
    m.opt("max_action_tokens", c.model.max_action_tokens);
    std::string role = role_to_string(c.model.cross_role);
    m.opt_str("cross_role", role);
    c.model.cross_role = role_from_string(role);
    m.opt("init_gain", c.model.init_gain);
    m.finish();
  }

  if (root.has("formulation")) {
    Strict f(root.at("formulation"), "formulation");
    std::string kind = vla::to_string(c.formulation.kind);
    f.opt_str("kind", kind);
    c.formulation.kind = vla::formulation_kind_from_string(kind);
    f.opt("window", c.formulation.window);
    f.opt("chunk", c.formulation.chunk);
    std::string head = vla::to_string(c.formulation.head);
    f.opt_str("head", head);
    c.formulation.head = vla::head_kind_from_string(head);
    f.opt("head_hidden", c.formulation.head_hidden);
    f.opt("head_depth", c.formulation.head_depth);
    f.opt("lambda", c.formulation.lambda);
    f.opt("execute_k", c.formulation.execute_k);
    f.finish();
  }

  if (root.has("train")) {
    Strict t(root.at("train"), "train");
    t.opt("steps", c.train.steps);
    t.opt("batch_size", c.train.batch_size);
    t.opt("lr", c.train.lr);
    t.opt("warmup_steps", c.train.warmup_steps);
    t.opt("weight_decay", c.train.weight_decay);
    t.opt("beta1", c.train.beta1);
    t.opt("beta2", c.train.beta2);
    t.opt("eps", c.train.eps);
    t.opt("log_every", c.train.log_every);
    t.finish();
  }

  if (root.has("data")) {
    Strict d(root.at("data"), "data");
    d.opt_str("scenes", c.data.scenes);
    d.opt_str("vocab", c.data.vocab);
    d.opt_str("dataset", c.data.dataset);
    if (d.has("datasets")) {
      const json& ds = d.at("datasets");
      check(ds.is_object(), "config: data.datasets must be an object");
      for (auto it = ds.begin(); it != ds.end(); ++it)
        c.data.datasets[it.key()] = it.value().get<std::string>();
    }
    d.opt_str("stats", c.data.stats);
    d.opt("train_splits", c.data.train_splits);
    d.opt_str("embodiment", c.data.embodiment);
    d.finish();
  }

  if (root.has("eval")) {
    Strict e(root.at("eval"), "eval");
    e.opt("n_rollouts", c.eval.n_rollouts);
    e.opt_str("split", c.eval.split);
    e.opt_str("embodiment", c.eval.embodiment);
    e.finish();
  }
  root.finish();

  c.model.validate();
  c.formulation.validate(c.model);
  return c;
}

GlobalConfig GlobalConfig::load(const std::string& path) {
  std::ifstream f(path);
  check(f.is_open(), "config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path);
}

std::string GlobalConfig::canonical() const {
  json j;
  j["seed"] = seed;
  j["model"] = {{"architecture", arch_to_string(model.architecture)},
                {"dim", model.dim},
                {"depth", model.depth},
                {"heads", model.heads},
                {"ffn_mult", model.ffn_mult},
                {"vocab_size", model.vocab_size},
                {"action_offset", model.action_offset},
                {"patch_size", model.patch_size},
                {"image_px", model.image_px},
                {"n_cameras", model.n_cameras},
                {"resampler_latents", model.resampler_latents},
                {"proprio_token", model.proprio_token},
                {"max_text", model.max_text},
                {"max_window", model.max_window},
                {"max_action_tokens", model.max_action_tokens},
                {"cross_role", role_to_string(model.cross_role)},
                {"init_gain", model.init_gain}};
  j["formulation"] = {{"kind", vla::to_string(formulation.kind)},
                      {"window", formulation.window},
                      {"chunk", formulation.chunk},
                      {"head", vla::to_string(formulation.head)},
                      {"head_hidden", formulation.head_hidden},
                      {"head_depth", formulation.head_depth},
                      {"lambda", formulation.lambda},
                      {"execute_k", formulation.execute_k}};
  j["train"] = {{"steps", train.steps},
                {"batch_size", train.batch_size},
                {"lr", train.lr},
                {"warmup_steps", train.warmup_steps},
                {"weight_decay", train.weight_decay},
                {"beta1", train.beta1},
                {"beta2", train.beta2},
                {"eps", train.eps},
                {"log_every", train.log_every}};
  j["data"] = {{"scenes", data.scenes},
               {"vocab", data.vocab},
               {"dataset", data.dataset},
               {"datasets", data.datasets},
               {"stats", data.stats},
               {"train_splits", data.train_splits},
               {"embodiment", data.embodiment}};
  j["eval"] = {{"n_rollouts", eval.n_rollouts},
               {"split", eval.split},
               {"embodiment", eval.embodiment}};
  return j.dump();
}

uint64_t GlobalConfig::fingerprint() const { return bench::fnv1a(canonical()); }

}  // namespace minivla
