#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "rgm/common.hpp"

namespace rgm {

/**
 * Character-level vocabulary with four reserved marker tokens.
 *
 * The markers are atomic single tokens: <think> / </think> bound the
 * reasoning region, <end> terminates an answer, and the step token's surface
 * form is ".\n\n" so that step boundaries are a property of the token stream
 * itself. Encoding is greedy longest-match over marker surfaces, then single
 * characters; decode(encode(s)) == s for any string over the character table.
 */
class Vocabulary {
 public:
  static constexpr int kThinkOpen = 0;
  static constexpr int kThinkClose = 1;
  static constexpr int kEnd = 2;
  static constexpr int kStep = 3;

  Vocabulary() {
    surfaces_.assign({"<think>", "</think>", "<end>", ".\n\n"});
    surfaces_.push_back("\n");
    for (char c = 32; c < 127; ++c) surfaces_.push_back(std::string(1, c));
    for (size_t id = 0; id < surfaces_.size(); ++id) {
      const std::string& s = surfaces_[id];
      if (s.size() == 1) char_ids_[static_cast<unsigned char>(s[0])] = static_cast<int>(id);
    }
  }

  int size() const { return static_cast<int>(surfaces_.size()); }

  const std::string& surface(int id) const {
    require(id >= 0 && id < size(), "vocab: token id out of range");
    return surfaces_[static_cast<size_t>(id)];
  }

  bool is_marker(int id) const { return id >= 0 && id <= kStep; }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> out;
    out.reserve(text.size());
    size_t i = 0;
    while (i < text.size()) {
      // Marker surfaces first, longest first.
      static constexpr std::array<int, 4> kMarkerOrder{kThinkClose, kThinkOpen, kEnd, kStep};
      bool matched = false;
      for (int id : kMarkerOrder) {
        const std::string& s = surfaces_[static_cast<size_t>(id)];
        if (text.substr(i, s.size()) == s) {
          out.push_back(id);
          i += s.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
      const unsigned char c = static_cast<unsigned char>(text[i]);
      const int id = char_ids_[c];
      if (id < 0) {
        throw ContractError("vocab: character " + std::to_string(static_cast<int>(c)) +
                            " is not encodable");
      }
      out.push_back(id);
      i += 1;
    }
    return out;
  }

  std::string decode(const std::vector<int>& tokens) const {
    std::string out;
    for (int id : tokens) out += surface(id);
    return out;
  }

 private:
  std::vector<std::string> surfaces_;
  std::array<int, 256> char_ids_{[] {
    std::array<int, 256> a{};
    a.fill(-1);
    return a;
  }()};
};

}  // namespace rgm
