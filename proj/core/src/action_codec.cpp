#include "minivla/codec/action_codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

namespace minivla::codec {

bool RawAction::finite() const {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

namespace {

double percentile_linear(std::vector<double>& sorted, double p) {
  const size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double rank = p * static_cast<double>(n - 1);
  const size_t lo = static_cast<size_t>(rank);
  const double frac = rank - static_cast<double>(lo);
  if (lo + 1 >= n) return sorted[n - 1];
  return sorted[lo] + (sorted[lo + 1] - sorted[lo]) * frac;
}

}  // namespace

NormStats compute_norm_stats(const std::vector<RawAction>& actions) {
  check(!actions.empty(), "compute_norm_stats: empty action stream");
  if (actions.size() < 100)
    std::cerr << "[minivla] warning: fitting action stats on only "
              << actions.size() << " samples\n";
  NormStats s;
  std::vector<double> col(actions.size());
  for (int d = 0; d < kActionDims; ++d) {
    for (size_t i = 0; i < actions.size(); ++i) {
      const double x = actions[i][static_cast<size_t>(d)];
      check(std::isfinite(x), "compute_norm_stats: non-finite action value");
      col[i] = x;
    }
    std::sort(col.begin(), col.end());
    s.q01[static_cast<size_t>(d)] = percentile_linear(col, 0.01);
    s.q99[static_cast<size_t>(d)] = percentile_linear(col, 0.99);
    check(s.q01[static_cast<size_t>(d)] <= s.q99[static_cast<size_t>(d)],
          "compute_norm_stats: q01 > q99");
    s.degenerate[static_cast<size_t>(d)] =
        s.q01[static_cast<size_t>(d)] == s.q99[static_cast<size_t>(d)];
  }
  return s;
}

RawAction clamp_action(const RawAction& a, const NormStats& s) {
  RawAction out;
  for (size_t d = 0; d < kActionDims; ++d)
    out[d] = std::min(s.q99[d], std::max(s.q01[d], a[d]));
  return out;
}

NormalizedAction normalize(const RawAction& a, const NormStats& s) {
  const RawAction c = clamp_action(a, s);
  NormalizedAction n;
  for (size_t d = 0; d < kActionDims; ++d) {
    if (s.degenerate[d]) {
      n[d] = 0.0;
    } else {
      n[d] = 2.0 * (c[d] - s.q01[d]) / (s.q99[d] - s.q01[d]) - 1.0;
    }
  }
  return n;
}

RawAction denormalize(const NormalizedAction& n, const NormStats& s) {
  RawAction a;
  for (size_t d = 0; d < kActionDims; ++d) {
    if (s.degenerate[d]) {
      a[d] = s.q01[d];
    } else {
      const double v = std::clamp(n[d], -1.0, 1.0);
      a[d] = (v + 1.0) * 0.5 * (s.q99[d] - s.q01[d]) + s.q01[d];
    }
  }
  return a;
}

std::array<int, kActionDims> discretize(const NormalizedAction& n) {
  std::array<int, kActionDims> bins{};
  for (size_t d = 0; d < kActionDims; ++d) {
    const double v = std::clamp(n[d], -1.0, 1.0);
    int b = static_cast<int>(std::floor((v + 1.0) * 0.5 * kActionBins));
    bins[d] = std::clamp(b, 0, kActionBins - 1);
  }
  return bins;
}

int TokenLayout::bin_for_token(int64_t token) const {
  if (!in_range(token))
    throw Error("detokenize: token " + std::to_string(token) +
                " outside the reserved action range [" + std::to_string(first()) +
                ", " + std::to_string(last()) + "]");
  return static_cast<int>(token - first());
}

std::array<int64_t, kActionDims> tokenize(const std::array<int, kActionDims>& bins,
                                          const TokenLayout& layout) {
  std::array<int64_t, kActionDims> tokens{};
  for (size_t d = 0; d < kActionDims; ++d) {
    check(bins[d] >= 0 && bins[d] < kActionBins, "tokenize: bin out of range");
    tokens[d] = layout.token_for_bin(bins[d]);
  }
  return tokens;
}

double bin_center(int bin) {
  return -1.0 + (static_cast<double>(bin) + 0.5) * (2.0 / kActionBins);
}

NormalizedAction detokenize(const std::array<int64_t, kActionDims>& tokens,
                            const TokenLayout& layout) {
  NormalizedAction n;
  for (size_t d = 0; d < kActionDims; ++d)
    n[d] = bin_center(layout.bin_for_token(tokens[d]));
  return n;
}

std::string NormStats::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  j["method"] = "percentile-linear-interpolation";
  j["q01"] = q01;
  j["q99"] = q99;
  return j.dump(2) + "\n";
}

NormStats NormStats::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  check(j.at("version").get<int>() == 1, "NormStats: unsupported version");
  check(j.at("method").get<std::string>() == "percentile-linear-interpolation",
        "NormStats: unknown percentile method");
  NormStats s;
  for (size_t d = 0; d < kActionDims; ++d) {
    s.q01[d] = j.at("q01").at(d).get<double>();
    s.q99[d] = j.at("q99").at(d).get<double>();
    check(s.q01[d] <= s.q99[d], "NormStats: q01 > q99 in file");
    s.degenerate[d] = s.q01[d] == s.q99[d];
  }
  return s;
}

void NormStats::save(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  check(f.is_open(), "NormStats: cannot open for write: " + path);
  f << to_json();
  check(static_cast<bool>(f), "NormStats: write failure: " + path);
}

NormStats NormStats::load(const std::string& path) {
  std::ifstream f(path);
  check(f.is_open(), "NormStats: cannot open: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

}  // namespace minivla::codec
