#include "minivla/bench/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace minivla::bench {

uint64_t fnv1a(const std::string& text) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::vector<RolloutResult> run_rollouts(ChainPolicy& policy,
                                        const sim::SceneConfig& scene, int n,
                                        uint64_t seed) {
  std::vector<RolloutResult> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const uint64_t rollout_seed = seed + static_cast<uint64_t>(i);
    RolloutResult res;
    res.seed = rollout_seed;
    try {
      const sim::TaskChain chain = sim::MiniManip::sample_chain(scene, rollout_seed);
      for (sim::TaskId t : chain.tasks) res.tasks.push_back(static_cast<int>(t));
      sim::MiniManip simu(scene);
      vla::Observation obs = simu.reset(chain, rollout_seed);
      policy.reset();
      while (!simu.done()) {
        const codec::RawAction a = policy.act(obs, simu);
        auto r = simu.step(a);
        obs = std::move(r.obs);
      }
      res.completed = simu.chain_progress();
      res.steps_per_task = simu.steps_per_completed_task();
    } catch (const std::exception& e) {
      res.failure = e.what();
    }
    out.push_back(std::move(res));
  }
  return out;
}

EvalReport aggregate(const std::vector<RolloutResult>& results) {
  check(!results.empty(), "aggregate: no rollout results");
  EvalReport rep;
  rep.n_rollouts = static_cast<int>(results.size());
  std::array<int, 5> counts{};
  for (const auto& r : results) {
    for (int k = 0; k < 5; ++k)
      if (r.completed >= k + 1) ++counts[static_cast<size_t>(k)];
    for (size_t i = 0; i < r.tasks.size(); ++i) {
      const bool attempted = static_cast<int>(i) <= r.completed;
      if (!attempted) break;
      const std::string name = sim::task_name(static_cast<sim::TaskId>(r.tasks[i]));
      auto& pt = rep.per_task[name];
      if (static_cast<int>(i) < r.completed) {
        ++pt[0];
        ++pt[1];
      } else {
        ++pt[1];  // attempted, failed (or cut off by budget/error)
      }
    }
  }
  for (int k = 0; k < 5; ++k)
    rep.sr[static_cast<size_t>(k)] =
        static_cast<double>(counts[static_cast<size_t>(k)]) /
        static_cast<double>(results.size());
  // The identity avg_len == sum_k SR_k holds exactly by construction.
  rep.avg_len = rep.sr[0] + rep.sr[1] + rep.sr[2] + rep.sr[3] + rep.sr[4];
  return rep;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  j["sr"] = sr;
  j["avg_len"] = avg_len;
  j["n_rollouts"] = n_rollouts;
  j["seed"] = seed;
  j["split"] = split;
  j["embodiment"] = embodiment;
  j["config_fingerprint"] = config_fingerprint;
  nlohmann::json pt = nlohmann::json::object();
  for (const auto& [name, counts] : per_task)
    pt[name] = {{"successes", counts[0]}, {"attempts", counts[1]}};
  j["per_task"] = pt;
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  check(j.at("version").get<int>() == 1, "EvalReport: unsupported version");
  EvalReport rep;
  for (size_t k = 0; k < 5; ++k) rep.sr[k] = j.at("sr").at(k).get<double>();
  rep.avg_len = j.at("avg_len").get<double>();
  rep.n_rollouts = j.at("n_rollouts").get<int>();
  rep.seed = j.at("seed").get<uint64_t>();
  rep.split = j.at("split").get<std::string>();
  rep.embodiment = j.at("embodiment").get<std::string>();
  rep.config_fingerprint = j.at("config_fingerprint").get<uint64_t>();
  for (auto it = j.at("per_task").begin(); it != j.at("per_task").end(); ++it)
    rep.per_task[it.key()] = {it.value().at("successes").get<int>(),
                              it.value().at("attempts").get<int>()};
  return rep;
}

std::string EvalReport::to_text(const std::string& label) const {
  std::ostringstream os;
  os << std::left << std::setw(28) << "Method";
  for (int k = 1; k <= 5; ++k) os << std::right << std::setw(8) << k;
  os << std::right << std::setw(12) << "Avg. Len." << "\n";
  os << std::left << std::setw(28) << label << std::fixed << std::setprecision(3);
  for (double v : sr) os << std::right << std::setw(8) << v;
  os << std::right << std::setw(12) << std::setprecision(2) << avg_len << "\n";
  return os.str();
}

std::vector<TableRow> load_result_tables(const std::string& path) {
  std::ifstream f(path);
  check(f.is_open(), "result tables: cannot open " + path);
  nlohmann::json j;
  f >> j;
  check(j.at("version").get<int>() == 1, "result tables: unsupported version");
  std::vector<TableRow> rows;
  for (const auto& jt : j.at("tables")) {
    const std::string table = jt.at("name").get<std::string>();
    for (const auto& jr : jt.at("rows")) {
      TableRow row;
      row.table = table;
      row.method = jr.at("method").get<std::string>();
      row.train = jr.at("train").get<std::string>();
      for (size_t k = 0; k < 5; ++k) row.sr[k] = jr.at("sr").at(k).get<double>();
      row.avg_len = jr.at("avg_len").get<double>();
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::vector<RowCheck> verify_result_tables(const std::string& path, double tol) {
  std::vector<RowCheck> checks;
  for (const auto& row : load_result_tables(path)) {
    RowCheck c;
    c.row = row;
    c.sum = row.sr[0] + row.sr[1] + row.sr[2] + row.sr[3] + row.sr[4];
    c.delta = std::fabs(c.sum - row.avg_len);
    c.ok = c.delta <= tol;
    checks.push_back(std::move(c));
  }
  return checks;
}

SweepTable sweep(const std::vector<SweepCell>& cells,
                 const std::vector<uint64_t>& seeds, const TrainEvalFn& run_cell) {
  SweepTable table;
  for (const auto& cell : cells) {
    for (uint64_t seed : seeds) {
      SweepRun run;
      run.cell = cell.name;
      run.seed = seed;
      try {
        run.report = run_cell(cell, seed);
      } catch (const std::exception& e) {
        run.error = e.what();
      }
      table.runs.push_back(std::move(run));
    }
  }
  return table;
}

std::string SweepTable::to_text() const {
  struct CellAgg {
    std::string name;
    std::vector<double> avg_lens;
    std::vector<std::array<double, 5>> srs;
    int errors = 0;
  };
  std::vector<CellAgg> aggs;
  auto find = [&](const std::string& name) -> CellAgg& {
    for (auto& a : aggs)
      if (a.name == name) return a;
    aggs.push_back(CellAgg{name, {}, {}, 0});
    return aggs.back();
  };
  for (const auto& r : runs) {
    auto& a = find(r.cell);
    if (!r.error.empty()) {
      ++a.errors;
    } else {
      a.avg_lens.push_back(r.report.avg_len);
      a.srs.push_back(r.report.sr);
    }
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  std::sort(aggs.begin(), aggs.end(), [&](const CellAgg& a, const CellAgg& b) {
    return mean(a.avg_lens) > mean(b.avg_lens);
  });

  std::ostringstream os;
  os << std::left << std::setw(24) << "Cell";
  for (int k = 1; k <= 5; ++k) os << std::right << std::setw(8) << k;
  os << std::right << std::setw(12) << "Avg. Len." << std::setw(14) << "(min..max)"
     << std::setw(8) << "runs" << "\n";
  for (const auto& a : aggs) {
    std::array<double, 5> msr{};
    for (const auto& sr : a.srs)
      for (size_t k = 0; k < 5; ++k) msr[k] += sr[k];
    for (size_t k = 0; k < 5; ++k)
      if (!a.srs.empty()) msr[k] /= static_cast<double>(a.srs.size());
    double lo = 0, hi = 0;
    if (!a.avg_lens.empty()) {
      lo = *std::min_element(a.avg_lens.begin(), a.avg_lens.end());
      hi = *std::max_element(a.avg_lens.begin(), a.avg_lens.end());
    }
    os << std::left << std::setw(24) << a.name << std::fixed << std::setprecision(3);
    for (double v : msr) os << std::right << std::setw(8) << v;
    os << std::right << std::setw(12) << std::setprecision(2) << mean(a.avg_lens);
    std::ostringstream rng;
    rng << std::fixed << std::setprecision(2) << "(" << lo << ".." << hi << ")";
    os << std::setw(14) << rng.str();
    std::ostringstream cnt;
    cnt << a.avg_lens.size() << (a.errors ? "+" + std::to_string(a.errors) + "err" : "");
    os << std::setw(8) << cnt.str() << "\n";
  }
  return os.str();
}

}  // namespace minivla::bench
