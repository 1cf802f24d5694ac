#include "minivla/data/episode.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace minivla::data {

namespace {

template <typename T>
void put(std::string& buf, T v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(const char*& p, const char* end) {
  T v{};
  check(p + sizeof(T) <= end, "episode record truncated");
  std::memcpy(&v, p, sizeof(T));
  p += sizeof(T);
  return v;
}

void put_state(std::string& buf, const sim::SimState& s) {
  put(buf, s.x);
  put(buf, s.y);
  put(buf, s.z);
  put(buf, s.yaw);
  put<uint8_t>(buf, s.closed ? 1 : 0);
  put<int8_t>(buf, static_cast<int8_t>(s.held_block));
  for (const auto& b : s.blocks) {
    put(buf, b.x);
    put(buf, b.y);
    put(buf, b.z);
    put(buf, b.yaw);
    put<uint8_t>(buf, b.in_drawer ? 1 : 0);
  }
  put(buf, s.drawer);
  put(buf, s.slider);
  put<uint8_t>(buf, s.light ? 1 : 0);
  put<uint8_t>(buf, s.led ? 1 : 0);
  put<uint8_t>(buf, s.prev_light_press ? 1 : 0);
  put<uint8_t>(buf, s.prev_led_press ? 1 : 0);
  put(buf, s.drawer_dx);
  put(buf, s.slider_dx);
  put(buf, s.light_dy);
  put(buf, s.led_dy);
  put<int64_t>(buf, s.step_count);
}

sim::SimState take_state(const char*& p, const char* end) {
  sim::SimState s;
  s.x = take<double>(p, end);
  s.y = take<double>(p, end);
  s.z = take<double>(p, end);
  s.yaw = take<double>(p, end);
  s.closed = take<uint8_t>(p, end) != 0;
  s.held_block = take<int8_t>(p, end);
  for (auto& b : s.blocks) {
    b.x = take<double>(p, end);
    b.y = take<double>(p, end);
    b.z = take<double>(p, end);
    b.yaw = take<double>(p, end);
    b.in_drawer = take<uint8_t>(p, end) != 0;
  }
  s.drawer = take<double>(p, end);
  s.slider = take<double>(p, end);
  s.light = take<uint8_t>(p, end) != 0;
  s.led = take<uint8_t>(p, end) != 0;
  s.prev_light_press = take<uint8_t>(p, end) != 0;
  s.prev_led_press = take<uint8_t>(p, end) != 0;
  s.drawer_dx = take<double>(p, end);
  s.slider_dx = take<double>(p, end);
  s.light_dy = take<double>(p, end);
  s.led_dy = take<double>(p, end);
  s.step_count = take<int64_t>(p, end);
  return s;
}

std::string encode_episode(const Episode& ep) {
  std::string buf;
  put<int64_t>(buf, ep.id);
  check(ep.split.size() == 1 && ep.embodiment.size() == 1,
        "episode: split/embodiment must be single letters");
  put<uint8_t>(buf, static_cast<uint8_t>(ep.split[0]));
  put<uint8_t>(buf, static_cast<uint8_t>(ep.embodiment[0]));
  put<int32_t>(buf, ep.task);
  put<uint64_t>(buf, ep.seed);
  put<uint32_t>(buf, static_cast<uint32_t>(ep.instruction.size()));
  buf.append(ep.instruction);
  put<uint32_t>(buf, static_cast<uint32_t>(ep.steps.size()));
  for (const auto& st : ep.steps) {
    put_state(buf, st.state);
    for (double v : st.action.v) put(buf, v);
  }
  return buf;
}

Episode decode_episode(const std::string& buf) {
  const char* p = buf.data();
  const char* end = buf.data() + buf.size();
  Episode ep;
  ep.id = take<int64_t>(p, end);
  ep.split = std::string(1, static_cast<char>(take<uint8_t>(p, end)));
  ep.embodiment = std::string(1, static_cast<char>(take<uint8_t>(p, end)));
  ep.task = take<int32_t>(p, end);
  ep.seed = take<uint64_t>(p, end);
  const uint32_t ilen = take<uint32_t>(p, end);
  check(p + ilen <= end, "episode record truncated in instruction");
  ep.instruction.assign(p, ilen);
  p += ilen;
  const uint32_t n = take<uint32_t>(p, end);
  check(n >= 1 && n <= 64, "episode: step count out of range");
  ep.steps.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    ep.steps[i].state = take_state(p, end);
    for (size_t d = 0; d < codec::kActionDims; ++d)
      ep.steps[i].action[d] = take<double>(p, end);
  }
  check(p == end, "episode record has trailing bytes");
  return ep;
}

}  // namespace

void write_episodes(const std::string& path, const std::vector<Episode>& episodes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.is_open(), "write_episodes: cannot open " + path);
  nlohmann::json hdr;
  hdr["schema"] = "minimanip-episode.v1";
  hdr["cameras"] = {"side", "wrist"};
  hdr["count"] = episodes.size();
  f << "MINIVLA-TRAJ 1\n" << hdr.dump() << "\n";

  std::ofstream idx(path + ".idx", std::ios::trunc);
  check(idx.is_open(), "write_episodes: cannot open index " + path + ".idx");
  idx << "MINIVLA-IDX 1\n";

  for (const auto& ep : episodes) {
    const std::string buf = encode_episode(ep);
    const uint32_t len = static_cast<uint32_t>(buf.size());
    const auto off = f.tellp();
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    idx << off << " " << len << " " << ep.steps.size() << "\n";
  }
  check(static_cast<bool>(f), "write_episodes: write failure on " + path);
  check(static_cast<bool>(idx), "write_episodes: write failure on index");
}

std::vector<Episode> read_episodes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.is_open(), "read_episodes: cannot open " + path);
  std::string line;
  check(static_cast<bool>(std::getline(f, line)) && line == "MINIVLA-TRAJ 1",
        "read_episodes: bad magic in " + path);
  check(static_cast<bool>(std::getline(f, line)), "read_episodes: missing header");
  const nlohmann::json hdr = nlohmann::json::parse(line);
  check(hdr.at("schema").get<std::string>() == "minimanip-episode.v1",
        "read_episodes: unknown schema");
  const size_t count = hdr.at("count").get<size_t>();

  std::vector<Episode> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    uint32_t len = 0;
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    check(static_cast<bool>(f), "read_episodes: truncated at episode " + std::to_string(i));
    std::string buf(len, '\0');
    f.read(buf.data(), len);
    check(static_cast<bool>(f), "read_episodes: truncated at episode " + std::to_string(i));
    try {
      out.push_back(decode_episode(buf));
    } catch (const Error& e) {
      throw Error("read_episodes: episode " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

codec::NormStats fit_stats(const std::vector<Episode>& episodes,
                           const std::string& embodiment) {
  std::vector<codec::RawAction> actions;
  for (const auto& ep : episodes) {
    if (ep.embodiment != embodiment) continue;
    for (const auto& st : ep.steps) actions.push_back(st.action);
  }
  check(!actions.empty(), "fit_stats: no actions for embodiment " + embodiment);
  return codec::compute_norm_stats(actions);
}

std::vector<Episode> generate_episodes(const std::string& scenes_path,
                                       const std::vector<std::string>& splits,
                                       const std::string& embodiment,
                                       int64_t n_episodes, uint64_t seed) {
  check(!splits.empty(), "generate_episodes: no splits");
  std::vector<sim::SceneConfig> scenes;
  for (const auto& sp : splits)
    scenes.push_back(sim::SceneConfig::load(scenes_path, sp, embodiment));

  // Episodes are per-task slices of full 5-task expert chains, so later
  // tasks begin from whatever state the previous task left behind; this is
  // the state diversity chained evaluation sees.
  std::vector<Episode> out;
  out.reserve(static_cast<size_t>(n_episodes));
  uint64_t chain_idx = 0;
  while (static_cast<int64_t>(out.size()) < n_episodes) {
    const auto& scene = scenes[chain_idx % scenes.size()];
    const uint64_t chain_seed = core::Rng(seed).fork(chain_idx).next_u64();
    const sim::TaskChain chain = sim::MiniManip::sample_chain(scene, chain_seed);
    sim::MiniManip simu(scene);
    simu.reset(chain, chain_seed);

    Episode cur;
    auto begin_episode = [&](int progress) {
      cur = Episode{};
      cur.id = static_cast<int64_t>(out.size());
      cur.split = scene.split;
      cur.embodiment = embodiment;
      cur.task = static_cast<int>(chain.tasks[static_cast<size_t>(progress)]);
      cur.seed = chain_seed;
      cur.instruction = sim::task_instruction(chain.tasks[static_cast<size_t>(progress)]);
    };
    begin_episode(0);
    int prev_progress = 0;
    while (!simu.done() && static_cast<int64_t>(out.size()) < n_episodes) {
      StepRecord rec;
      rec.state = simu.state();
      rec.action = simu.expert();
      cur.steps.push_back(rec);
      simu.step(rec.action);
      check(static_cast<int64_t>(cur.steps.size()) <= sim::kTaskBudget,
            "generate_episodes: expert exceeded budget on " +
                sim::task_name(static_cast<sim::TaskId>(cur.task)));
      if (simu.chain_progress() > prev_progress) {
        out.push_back(std::move(cur));
        prev_progress = simu.chain_progress();
        if (prev_progress < static_cast<int>(chain.tasks.size()))
          begin_episode(prev_progress);
        else
          cur = Episode{};
      }
    }
    check(cur.steps.empty() || static_cast<int64_t>(out.size()) >= n_episodes,
          "generate_episodes: expert failed a validated chain");
    ++chain_idx;
  }
  return out;
}

WindowSampler::WindowSampler(std::vector<Source> sources, int64_t window,
                             int64_t chunk, uint64_t seed,
                             const backbone::Vocabulary& vocab,
                             const std::string& scenes_path, int64_t n_cameras,
                             const codec::NormStats& stats)
    : sources_(std::move(sources)),
      window_(window),
      chunk_(chunk),
      rng_(seed),
      vocab_(vocab),
      scenes_path_(scenes_path),
      n_cameras_(n_cameras),
      stats_(stats) {
  check(!sources_.empty(), "WindowSampler: no sources");
  check(window_ >= 1 && chunk_ >= 1, "WindowSampler: window and chunk must be >= 1");
  double wsum = 0.0;
  for (auto& s : sources_) {
    check(!s.episodes.empty(), "WindowSampler: empty source");
    check(s.weight > 0.0, "WindowSampler: non-positive source weight");
    wsum += s.weight;
    std::vector<int64_t> offs;
    int64_t total = 0;
    for (const Episode* ep : s.episodes) {
      offs.push_back(total);
      total += static_cast<int64_t>(ep->steps.size());
    }
    anchor_offsets_.push_back(std::move(offs));
    totals_.push_back(total);
  }
  double acc = 0.0;
  for (auto& s : sources_) {
    acc += s.weight / wsum;
    cum_weights_.push_back(acc);
  }
}

int64_t WindowSampler::anchor_count(int source) const {
  return totals_[static_cast<size_t>(source)];
}

const sim::SceneConfig& WindowSampler::scene_for(const Episode& ep) const {
  const std::string key = ep.split + "/" + ep.embodiment;
  auto it = scene_cache_.find(key);
  if (it == scene_cache_.end()) {
    auto sc = std::make_unique<sim::SceneConfig>(
        sim::SceneConfig::load(scenes_path_, ep.split, ep.embodiment));
    it = scene_cache_.emplace(key, std::move(sc)).first;
  }
  return *it->second;
}

vla::TrainSample WindowSampler::materialize(const Anchor& a) const {
  const Episode& ep = *sources_[static_cast<size_t>(a.source)]
                           .episodes[static_cast<size_t>(a.episode)];
  const sim::SceneConfig& scene = scene_for(ep);
  const int64_t t_ep = static_cast<int64_t>(ep.steps.size());
  vla::TrainSample s;
  for (int64_t h = a.t - window_ + 1; h <= a.t; ++h) {
    const int64_t idx = std::max<int64_t>(0, h);  // left-pad with the first frame
    const auto obs = sim::observe_state(ep.steps[static_cast<size_t>(idx)].state, scene,
                                        ep.instruction);
    backbone::FrameInput f;
    f.images.assign(obs.images.begin(), obs.images.begin() + n_cameras_);
    f.proprio = obs.proprio;
    f.text_ids = vocab_.encode(obs.instruction);
    s.frames.push_back(std::move(f));
  }
  for (int64_t l = 0; l < chunk_; ++l) {
    const int64_t idx = a.t + l;
    const bool valid = idx < t_ep;
    const auto& act = ep.steps[static_cast<size_t>(std::min(idx, t_ep - 1))].action;
    s.target_norm.push_back(codec::normalize(act, stats_).v);
    s.target_valid.push_back(valid ? 1 : 0);
  }
  return s;
}

WindowSampler::Anchor WindowSampler::next_anchor() {
  int src = 0;
  if (sources_.size() > 1) {
    const double u = rng_.uniform();
    while (src + 1 < static_cast<int>(sources_.size()) &&
           u > cum_weights_[static_cast<size_t>(src)])
      ++src;
  }
  const int64_t flat = rng_.uniform_int(totals_[static_cast<size_t>(src)]);
  const auto& offs = anchor_offsets_[static_cast<size_t>(src)];
  // binary search for the episode that owns this flat anchor
  int64_t lo = 0, hi = static_cast<int64_t>(offs.size()) - 1;
  while (lo < hi) {
    const int64_t mid = (lo + hi + 1) / 2;
    if (offs[static_cast<size_t>(mid)] <= flat)
      lo = mid;
    else
      hi = mid - 1;
  }
  last_ = Anchor{src, lo, flat - offs[static_cast<size_t>(lo)]};
  return last_;
}

vla::TrainSample WindowSampler::next() { return materialize(next_anchor()); }

}  // namespace minivla::data
