#pragma once

#include <string>
#include <vector>

#include "vldet/config.hpp"

namespace vldet {

enum class TokenMode { kClassName, kCaption };

struct TokenSequence {
  std::vector<std::size_t> ids;  // 0 is the pad id
  std::vector<bool> mask;        // true for real tokens
  std::size_t real_count() const {
    std::size_t n = 0;
    for (bool m : mask) n += m ? 1 : 0;
    return n;
  }
};

// Hashing tokenizer: each lowercase word maps to 1 + hash64(word) mod
// (vocab_size - 1). Captions are truncated or padded to exactly
// max_caption_tokens; class names keep their natural length (batch padding
// happens in tokenize_class_names).
TokenSequence tokenize(const std::string& text, TokenMode mode,
                       const Config& cfg);

// Tokenizes every name and pads all sequences to the longest one.
std::vector<TokenSequence> tokenize_class_names(
    const std::vector<std::string>& names, const Config& cfg);

}  // namespace vldet
