#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mama/caption.hpp"

namespace mama {

enum class TokenRole { Cls, Patch, Sep, Word, Pad };

inline constexpr int kPadId = 0;
inline constexpr int kClsId = 1;
inline constexpr int kSepId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kFirstWordId = 4;

struct TokenizedText {
  std::vector<int> ids;
  // Sentences that fit in the token budget; equals the number of SEP tokens.
  std::size_t sentence_count = 0;
};

// Lower-cased runs of [a-z0-9-'] (so "BI-RADS" stays one word); everything
// else separates words and sentence terminators are dropped.
std::vector<std::string> split_words(std::string_view sentence);

// FNV-1a hash bucket in [kFirstWordId, vocab_size).
int word_id(std::string_view word, std::size_t vocab_size);

// [CLS] w w w [SEP] w w [SEP] ... Whole sentences are kept while they fit in
// max_tokens; if not even the first fits, it is truncated and closed with SEP.
TokenizedText tokenize(const Caption& caption, std::size_t max_tokens, std::size_t vocab_size);

std::vector<int> pad_to(std::span<const int> ids, std::size_t length);
std::vector<TokenRole> text_roles(std::span<const int> ids);

}  // namespace mama
