#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "minivla/common.hpp"

namespace minivla::backbone {

// Word-level instruction tokenizer over a committed id table. Ids are dense
// and small, far below the reserved action-token range at the top of the
// model vocabulary, so text can never collide with action tokens.
class Vocabulary {
 public:
  static constexpr int64_t kPad = 0;
  static constexpr int64_t kBos = 1;
  static constexpr int64_t kEos = 2;
  static constexpr int64_t kUnk = 3;

  Vocabulary();

  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  // Adds every whitespace word of every sentence, in order of first use.
  static Vocabulary build(const std::vector<std::string>& sentences);

  // Lowercase, whitespace split, unknown words -> UNK; always [BOS ... EOS].
  std::vector<int64_t> encode(const std::string& text) const;

  int64_t size() const { return static_cast<int64_t>(tokens_.size()); }
  const std::string& token(int64_t id) const;

 private:
  void add(const std::string& tok);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int64_t> ids_;
};

}  // namespace minivla::backbone
