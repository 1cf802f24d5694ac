// Command-line surface: demonstration generation, stats fitting, training,
// chained-task evaluation, design-space sweeps, published-table verification
// and report rendering. Every command takes one config file and one seed; a
// given (config, seed) pair reproduces byte-identical outputs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "minivla/bench/evalharness.hpp"
#include "minivla/config.hpp"
#include "minivla/core/checkpoint.hpp"
#include "minivla/data/episode.hpp"
#include "minivla/data/schedule.hpp"
#include "minivla/sim/minimanip.hpp"
#include "minivla/vla/trainer.hpp"

namespace fs = std::filesystem;
using namespace minivla;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  check(f.is_open(), "cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  if (const fs::path p = fs::path(path).parent_path(); !p.empty())
    fs::create_directories(p);
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  check(f.is_open(), "cannot open for write " + path);
  f << text;
  check(static_cast<bool>(f), "write failure on " + path);
}

std::vector<data::Episode> load_training_episodes(const GlobalConfig& cfg) {
  check(!cfg.data.dataset.empty(), "config: data.dataset is required here");
  auto all = data::read_episodes(cfg.data.dataset);
  std::vector<data::Episode> out;
  for (auto& ep : all) {
    if (ep.embodiment != cfg.data.embodiment) continue;
    if (std::find(cfg.data.train_splits.begin(), cfg.data.train_splits.end(),
                  ep.split) == cfg.data.train_splits.end())
      continue;
    out.push_back(std::move(ep));
  }
  check(!out.empty(), "dataset has no episodes matching the configured splits");
  return out;
}

codec::NormStats resolve_stats(const GlobalConfig& cfg,
                               const std::vector<data::Episode>& eps,
                               const std::string& out_dir) {
  if (cfg.data.stats == "fit") {
    codec::NormStats st = data::fit_stats(eps, cfg.data.embodiment);
    if (!out_dir.empty()) st.save(out_dir + "/stats.json");
    return st;
  }
  return codec::NormStats::load(cfg.data.stats);
}

int cmd_gen_data(const GlobalConfig& cfg, uint64_t seed, const std::string& out,
                 int64_t episodes, int64_t episodes_b) {
  fs::create_directories(out);
  const auto splits = cfg.data.train_splits;
  auto a = data::generate_episodes(cfg.data.scenes, splits, "A", episodes, seed);
  data::write_episodes(out + "/embA.traj", a);
  std::cerr << "[gen-data] wrote " << a.size() << " embodiment-A episodes\n";
  if (episodes_b > 0) {
    auto b = data::generate_episodes(cfg.data.scenes, splits, "B", episodes_b,
                                     seed ^ 0xB0Dll);
    data::write_episodes(out + "/embB.traj", b);
    std::cerr << "[gen-data] wrote " << b.size() << " embodiment-B episodes\n";
  }
  return 0;
}

int cmd_fit_stats(const GlobalConfig& cfg, const std::string& out) {
  auto eps = load_training_episodes(cfg);
  codec::NormStats st = data::fit_stats(eps, cfg.data.embodiment);
  st.save(out);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_train(const GlobalConfig& cfg, uint64_t seed, const std::string& out,
              const std::string& resume, const std::string& stage_file) {
  fs::create_directories(out);
  backbone::Vocabulary vocab = backbone::Vocabulary::load(cfg.data.vocab);
  vla::VlaModel model(cfg.model, cfg.formulation, seed);

  if (!stage_file.empty()) {
    auto schedule = data::MixtureSchedule::load(stage_file);
    if (!resume.empty()) model.load(resume);
    auto result = run_schedule(schedule, model, cfg.train, cfg.data.datasets,
                               cfg.data.scenes, vocab, out, seed);
    model.save(out + "/final.ckpt");
    for (const auto& c : result.stage_checkpoints) std::cout << c << "\n";
    std::cout << out + "/final.ckpt" << "\n";
    return 0;
  }

  auto eps = load_training_episodes(cfg);
  codec::NormStats stats = resolve_stats(cfg, eps, out);
  stats.save(out + "/stats.json");

  data::WindowSampler::Source src;
  for (const auto& ep : eps) src.episodes.push_back(&ep);
  data::WindowSampler sampler({src}, cfg.formulation.window, cfg.formulation.chunk,
                              seed, vocab, cfg.data.scenes, cfg.model.n_cameras,
                              stats);
  vla::Trainer trainer(model, cfg.train);
  if (!resume.empty()) {
    core::load_checkpoint(resume, model.params(), &trainer.optimizer());
    std::cerr << "[train] resumed from " << resume << " at step "
              << trainer.optimizer().step_count() << "\n";
  }
  const int64_t remaining = cfg.train.steps - trainer.optimizer().step_count();
  check(remaining >= 0, "train: checkpoint already past the configured budget");
  trainer.run([&sampler] { return sampler.next(); }, remaining);
  model.save(out + "/final.ckpt", &trainer.optimizer());
  std::cout << out + "/final.ckpt" << "\n";
  return 0;
}

int cmd_eval(const GlobalConfig& cfg, uint64_t seed, const std::string& checkpoint,
             const std::string& stats_path, const std::string& out, bool expert) {
  backbone::Vocabulary vocab = backbone::Vocabulary::load(cfg.data.vocab);
  sim::SceneConfig scene =
      sim::SceneConfig::load(cfg.data.scenes, cfg.eval.split, cfg.eval.embodiment);

  std::vector<bench::RolloutResult> results;
  if (expert) {
    bench::ExpertChainPolicy policy;
    results = bench::run_rollouts(policy, scene, static_cast<int>(cfg.eval.n_rollouts),
                                  seed);
  } else {
    check(!checkpoint.empty(), "eval: --checkpoint required (or use --expert)");
    const std::string sp = stats_path.empty() ? cfg.data.stats : stats_path;
    check(sp != "fit" && !sp.empty(), "eval: provide --stats or a stats path in config");
    codec::NormStats stats = codec::NormStats::load(sp);
    vla::VlaModel model(cfg.model, cfg.formulation, seed);
    model.load(checkpoint);
    bench::ModelChainPolicy policy(model, stats, vocab);
    results = bench::run_rollouts(policy, scene, static_cast<int>(cfg.eval.n_rollouts),
                                  seed);
  }
  bench::EvalReport rep = bench::aggregate(results);
  rep.seed = seed;
  rep.split = cfg.eval.split;
  rep.embodiment = cfg.eval.embodiment;
  rep.config_fingerprint = cfg.fingerprint();
  if (!out.empty()) write_file(out, rep.to_json());
  std::cout << rep.to_text(expert ? "scripted-expert" : "policy");
  return 0;
}

int cmd_verify_tables(const std::string& tables, double tol) {
  const auto checks = bench::verify_result_tables(tables, tol);
  int failures = 0;
  for (const auto& c : checks) {
    std::ostringstream line;
    line << (c.ok ? "ok   " : "FAIL ") << c.row.table << " | " << c.row.method << " ("
         << c.row.train << "): sum=" << c.sum << " avg_len=" << c.row.avg_len
         << " delta=" << c.delta;
    std::cout << line.str() << "\n";
    if (!c.ok) ++failures;
  }
  std::cout << checks.size() - static_cast<size_t>(failures) << "/" << checks.size()
            << " rows within tolerance " << tol << "\n";
  return failures == 0 ? 0 : 1;
}

int cmd_report(const std::string& in) {
  bench::EvalReport rep = bench::EvalReport::from_json(slurp(in));
  std::cout << rep.to_text(in);
  return 0;
}

int cmd_sweep(const GlobalConfig& base_cfg, uint64_t seed, const std::string& sweep_file,
              const std::string& out) {
  fs::create_directories(out);
  nlohmann::json j = nlohmann::json::parse(slurp(sweep_file));
  std::vector<bench::SweepCell> cells;
  std::vector<std::pair<std::string, GlobalConfig>> cell_cfgs;
  for (const auto& jc : j.at("cells")) {
    bench::SweepCell cell;
    cell.name = jc.at("name").get<std::string>();
    GlobalConfig cfg = GlobalConfig::load(jc.at("config").get<std::string>());
    if (jc.contains("data_fraction"))
      cell.data_fraction = jc.at("data_fraction").get<double>();
    cell.formulation = cfg.formulation;
    cells.push_back(cell);
    cell_cfgs.emplace_back(cell.name, cfg);
  }
  std::vector<uint64_t> seeds;
  if (j.contains("seeds"))
    for (const auto& s : j.at("seeds")) seeds.push_back(s.get<uint64_t>());
  else
    seeds = {seed, seed + 1, seed + 2};

  backbone::Vocabulary vocab = backbone::Vocabulary::load(base_cfg.data.vocab);

  auto run_cell = [&](const bench::SweepCell& cell, uint64_t cell_seed) {
    GlobalConfig cfg = base_cfg;
    for (const auto& [name, c] : cell_cfgs)
      if (name == cell.name) cfg = c;
    cfg.seed = cell_seed;
    auto eps = load_training_episodes(cfg);
    if (cell.data_fraction < 1.0) {
      // Deterministic subsampling by episode id.
      const auto keep = static_cast<size_t>(
          std::max<double>(1.0, cell.data_fraction * static_cast<double>(eps.size())));
      eps.resize(keep);
    }
    codec::NormStats stats = data::fit_stats(eps, cfg.data.embodiment);
    stats.save(out + "/" + cell.name + "_s" + std::to_string(cell_seed) + ".stats.json");
    vla::VlaModel model(cfg.model, cfg.formulation, cell_seed);
    data::WindowSampler::Source src;
    for (const auto& ep : eps) src.episodes.push_back(&ep);
    data::WindowSampler sampler({src}, cfg.formulation.window, cfg.formulation.chunk,
                                cell_seed, vocab, cfg.data.scenes, cfg.model.n_cameras,
                                stats);
    vla::Trainer trainer(model, cfg.train);
    trainer.run([&sampler] { return sampler.next(); }, cfg.train.steps);
    model.save(out + "/" + cell.name + "_s" + std::to_string(cell_seed) + ".ckpt");

    sim::SceneConfig scene =
        sim::SceneConfig::load(cfg.data.scenes, cfg.eval.split, cfg.eval.embodiment);
    bench::ModelChainPolicy policy(model, stats, vocab);
    auto results = bench::run_rollouts(policy, scene,
                                       static_cast<int>(cfg.eval.n_rollouts), cell_seed);
    bench::EvalReport rep = bench::aggregate(results);
    rep.seed = cell_seed;
    rep.split = cfg.eval.split;
    rep.embodiment = cfg.eval.embodiment;
    rep.config_fingerprint = cfg.fingerprint();
    write_file(out + "/" + cell.name + "_s" + std::to_string(cell_seed) + ".report.json",
               rep.to_json());
    return rep;
  };

  bench::SweepTable table = bench::sweep(cells, seeds, run_cell);
  const std::string text = table.to_text();
  write_file(out + "/sweep.txt", text);
  std::cout << text;
  for (const auto& r : table.runs)
    if (!r.error.empty())
      std::cerr << "[sweep] cell " << r.cell << " seed " << r.seed
                << " failed: " << r.error << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"minivla: a desk-scale vision-language-action workbench"};
  app.require_subcommand(1);
  app.fallthrough();  // global --config/--seed may follow the subcommand

  std::string config_path;
  uint64_t seed = 0;
  bool seed_set = false;
  app.add_option("--config", config_path, "global config file (JSON)");
  app.add_option("--seed", seed, "master seed; overrides the config seed")
      ->each([&](const std::string&) { seed_set = true; });

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate scripted-expert demonstrations");
  gen->fallthrough();
  std::string gen_out = "dataset";
  int64_t gen_eps = 2000, gen_eps_b = 360;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--episodes", gen_eps, "embodiment-A episode count");
  gen->add_option("--episodes-b", gen_eps_b, "embodiment-B episode count (0 = skip)");

  // fit-stats
  auto* fit = app.add_subcommand("fit-stats", "fit action normalization bounds");
  fit->fallthrough();
  std::string fit_out = "stats.json";
  fit->add_option("--out", fit_out, "output stats file");

  // train
  auto* train = app.add_subcommand("train", "behavior-clone a model");
  train->fallthrough();
  std::string train_out = "run", train_resume, train_stage;
  train->add_option("--out", train_out, "output directory");
  train->add_option("--resume", train_resume, "checkpoint to continue from");
  train->add_option("--stage", train_stage, "mixture schedule file (staged recipes)");

  // eval
  auto* eval = app.add_subcommand("eval", "run chained-task rollouts");
  eval->fallthrough();
  std::string eval_ckpt, eval_stats, eval_out, eval_split, eval_emb;
  int64_t eval_n = -1;
  bool eval_expert = false;
  eval->add_option("--checkpoint", eval_ckpt, "model checkpoint");
  eval->add_option("--stats", eval_stats, "normalization stats file");
  eval->add_option("--out", eval_out, "report JSON path");
  eval->add_option("--split", eval_split, "scene split (A..D)");
  eval->add_option("--embodiment", eval_emb, "embodiment (A/B)");
  eval->add_option("--n-rollouts", eval_n, "rollout count");
  eval->add_flag("--expert", eval_expert, "evaluate the scripted expert");

  // sweep
  auto* sw = app.add_subcommand("sweep", "train/eval a design grid");
  sw->fallthrough();
  std::string sweep_file, sweep_out = "sweep";
  sw->add_option("--grid", sweep_file, "sweep grid file (JSON)")->required();
  sw->add_option("--out", sweep_out, "output directory");

  // verify-tables
  auto* vt = app.add_subcommand("verify-tables",
                                "check Avg. Len. = sum(SR) on transcribed results");
  std::string vt_file = "data/published_results.json";
  double vt_tol = 0.005;
  vt->fallthrough();
  vt->add_option("--tables", vt_file, "transcription file");
  vt->add_option("--tol", vt_tol, "tolerance");

  // report
  auto* rp = app.add_subcommand("report", "render a report JSON as text");
  rp->fallthrough();
  std::string rp_in;
  rp->add_option("--in", rp_in, "report JSON path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    GlobalConfig cfg;
    if (!config_path.empty()) cfg = GlobalConfig::load(config_path);
    if (seed_set) cfg.seed = seed;
    if (eval->count("--split")) cfg.eval.split = eval_split;
    if (eval->count("--embodiment")) cfg.eval.embodiment = eval_emb;
    if (eval_n >= 0) cfg.eval.n_rollouts = eval_n;

    if (gen->parsed()) return cmd_gen_data(cfg, cfg.seed, gen_out, gen_eps, gen_eps_b);
    if (fit->parsed()) return cmd_fit_stats(cfg, fit_out);
    if (train->parsed())
      return cmd_train(cfg, cfg.seed, train_out, train_resume, train_stage);
    if (eval->parsed())
      return cmd_eval(cfg, cfg.seed, eval_ckpt, eval_stats, eval_out, eval_expert);
    if (sw->parsed()) return cmd_sweep(cfg, cfg.seed, sweep_file, sweep_out);
    if (vt->parsed()) return cmd_verify_tables(vt_file, vt_tol);
    if (rp->parsed()) return cmd_report(rp_in);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
