#include "minivla/backbone/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace minivla::backbone {

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<bos>");
  add("<eos>");
  add("<unk>");
}

void Vocabulary::add(const std::string& tok) {
  if (ids_.count(tok)) return;
  ids_[tok] = static_cast<int64_t>(tokens_.size());
  tokens_.push_back(tok);
}

namespace {
std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) {
        words.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}
}  // namespace

Vocabulary Vocabulary::build(const std::vector<std::string>& sentences) {
  Vocabulary v;
  for (const auto& s : sentences)
    for (const auto& w : split_words(s)) v.add(w);
  return v;
}

std::vector<int64_t> Vocabulary::encode(const std::string& text) const {
  std::vector<int64_t> ids;
  ids.push_back(kBos);
  for (const auto& w : split_words(text)) {
    auto it = ids_.find(w);
    ids.push_back(it == ids_.end() ? kUnk : it->second);
  }
  ids.push_back(kEos);
  return ids;
}

const std::string& Vocabulary::token(int64_t id) const {
  check(id >= 0 && id < size(), "Vocabulary: id out of range");
  return tokens_[static_cast<size_t>(id)];
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  check(f.is_open(), "Vocabulary: cannot open for write: " + path);
  for (const auto& t : tokens_) f << t << "\n";
  check(static_cast<bool>(f), "Vocabulary: write failure");
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path);
  check(f.is_open(), "Vocabulary: cannot open: " + path);
  Vocabulary v;
  std::string line;
  int64_t id = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (id < 4) {
      check(line == v.tokens_[static_cast<size_t>(id)],
            "Vocabulary: special token mismatch at line " + std::to_string(id));
    } else {
      v.add(line);
    }
    ++id;
  }
  check(id >= 4, "Vocabulary: file too short: " + path);
  return v;
}

}  // namespace minivla::backbone
