#include "vldet/tokenizer.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "vldet/tensor.hpp"

namespace vldet {

namespace {

void check_word(const std::string& word) {
  for (char ch : word) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= '0' && ch <= '9');
    if (!ok) {
      throw std::invalid_argument(
          "tokenize: expected lowercase words, got '" + word + "'");
    }
  }
}

}  // namespace

TokenSequence tokenize(const std::string& text, TokenMode mode,
                       const Config& cfg) {
  std::istringstream in(text);
  std::string word;
  TokenSequence seq;
  while (in >> word) {
    check_word(word);
    const std::uint64_t h = fnv1a64(word.data(), word.size());
    seq.ids.push_back(1 + static_cast<std::size_t>(
                              h % (cfg.vocab_size - 1)));
    seq.mask.push_back(true);
  }
  if (seq.ids.empty()) {
    throw std::invalid_argument("tokenize: empty text");
  }
  if (mode == TokenMode::kCaption) {
    if (seq.ids.size() > cfg.max_caption_tokens) {
      seq.ids.resize(cfg.max_caption_tokens);
      seq.mask.resize(cfg.max_caption_tokens);
    }
    while (seq.ids.size() < cfg.max_caption_tokens) {
      seq.ids.push_back(0);
      seq.mask.push_back(false);
    }
  }
  return seq;
}

std::vector<TokenSequence> tokenize_class_names(
    const std::vector<std::string>& names, const Config& cfg) {
  std::vector<TokenSequence> out;
  out.reserve(names.size());
  std::size_t longest = 0;
  for (const auto& name : names) {
    out.push_back(tokenize(name, TokenMode::kClassName, cfg));
    longest = std::max(longest, out.back().ids.size());
  }
  for (auto& seq : out) {
    while (seq.ids.size() < longest) {
      seq.ids.push_back(0);
      seq.mask.push_back(false);
    }
  }
  return out;
}

}  // namespace vldet
