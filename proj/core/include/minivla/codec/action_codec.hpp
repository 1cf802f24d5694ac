#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "minivla/common.hpp"

namespace minivla::codec {

inline constexpr int kActionDims = 7;   // 6D end-effector delta pose + gripper
inline constexpr int kActionBins = 256;

// Raw 7-DoF action: pose deltas (x, y, z, roll, pitch, yaw) plus a gripper
// signal that normalizes to {-1, +1} (>= 0 closes).
struct RawAction {
  std::array<double, kActionDims> v{};

  double& operator[](size_t i) { return v[i]; }
  double operator[](size_t i) const { return v[i]; }
  bool finite() const;
};

struct NormalizedAction {
  std::array<double, kActionDims> v{};

  double& operator[](size_t i) { return v[i]; }
  double operator[](size_t i) const { return v[i]; }
};

// Per-dimension 1st/99th percentile bounds fitted on training actions.
// Percentiles use linear interpolation between order statistics: for n sorted
// values the p-quantile sits at rank r = p*(n-1) and interpolates between
// floor(r) and floor(r)+1.
struct NormStats {
  std::array<double, kActionDims> q01{};
  std::array<double, kActionDims> q99{};
  std::array<bool, kActionDims> degenerate{};  // q01 == q99

  std::string to_json() const;
  static NormStats from_json(const std::string& text);
  void save(const std::string& path) const;
  static NormStats load(const std::string& path);
};

struct DiscreteActionTokens {
  std::array<int, kActionDims> bins{};
  std::array<int64_t, kActionDims> tokens{};
};

// Length-L action chunk in any representation; padded tail steps carry
// valid=false and must stay out of every loss.
template <typename A>
struct Chunk {
  std::vector<A> actions;
  std::vector<uint8_t> valid;
};
using RawChunk = Chunk<RawAction>;
using NormalizedChunk = Chunk<NormalizedAction>;

// Percentile fit over a stream of raw actions. Fewer than 100 samples emits a
// warning on stderr; an empty stream is an error.
NormStats compute_norm_stats(const std::vector<RawAction>& actions);

// a' = min(q99, max(q01, a)) per dimension.
RawAction clamp_action(const RawAction& a, const NormStats& s);

// 2*(a' - q01)/(q99 - q01) - 1, clamping first; degenerate dims map to 0.
NormalizedAction normalize(const RawAction& a, const NormStats& s);

// Inverse map; inputs are clipped to [-1, 1] first, degenerate dims return q01.
RawAction denormalize(const NormalizedAction& n, const NormStats& s);

// bin = floor((v+1)/2 * 256), clamped to [0, 255]; expects v in [-1, 1].
std::array<int, kActionDims> discretize(const NormalizedAction& n);

// Token layout inside a vocabulary of size V with reserved offset:
// token = V - offset - 256 + bin, i.e. bins occupy [V-offset-256, V-offset-1]
// and the final `offset` ids stay untouched. This is the wire convention.
struct TokenLayout {
  int64_t vocab_size = 1024;
  int64_t offset = 10;

  int64_t first() const { return vocab_size - offset - kActionBins; }
  int64_t last() const { return vocab_size - offset - 1; }
  bool in_range(int64_t token) const { return token >= first() && token <= last(); }
  int64_t token_for_bin(int bin) const { return first() + bin; }
  // Throws if the token falls outside the reserved range (a non-action token).
  int bin_for_token(int64_t token) const;
};

std::array<int64_t, kActionDims> tokenize(const std::array<int, kActionDims>& bins,
                                          const TokenLayout& layout);

// Maps tokens back to bin centers: v = -1 + (bin + 0.5) * (2/256).
NormalizedAction detokenize(const std::array<int64_t, kActionDims>& tokens,
                            const TokenLayout& layout);

double bin_center(int bin);

}  // namespace minivla::codec
