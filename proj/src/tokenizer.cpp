#include "mama/tokenizer.hpp"

#include <cctype>
#include <cstdint>

#include "mama/errors.hpp"

namespace mama {

std::vector<std::string> split_words(std::string_view sentence) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : sentence) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isalnum(uc) || ch == '-' || ch == '\'') {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

int word_id(std::string_view word, std::size_t vocab_size) {
  if (vocab_size <= static_cast<std::size_t>(kFirstWordId))
    throw ConfigError("vocab_size must exceed the reserved token ids");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : word) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return kFirstWordId + static_cast<int>(h % (vocab_size - kFirstWordId));
}

TokenizedText tokenize(const Caption& caption, std::size_t max_tokens, std::size_t vocab_size) {
  if (max_tokens < 3) throw ConfigError("max_text_tokens must be at least 3");
  TokenizedText out;
  out.ids.push_back(kClsId);
  for (std::size_t s = 0; s < caption.sentence_count(); ++s) {
    const auto words = split_words(caption.sentence(s));
    if (out.ids.size() + words.size() + 1 > max_tokens) {
      if (s == 0) {
        for (std::size_t i = 0; out.ids.size() + 1 < max_tokens; ++i)
          out.ids.push_back(word_id(words[i], vocab_size));
        out.ids.push_back(kSepId);
        out.sentence_count = 1;
      }
      break;
    }
    for (const auto& w : words) out.ids.push_back(word_id(w, vocab_size));
    out.ids.push_back(kSepId);
    ++out.sentence_count;
  }
  return out;
}

std::vector<int> pad_to(std::span<const int> ids, std::size_t length) {
  std::vector<int> out(ids.begin(), ids.end());
  if (out.size() < length) out.resize(length, kPadId);
  return out;
}

std::vector<TokenRole> text_roles(std::span<const int> ids) {
  std::vector<TokenRole> roles;
  roles.reserve(ids.size());
  for (int id : ids) {
    switch (id) {
      case kPadId: roles.push_back(TokenRole::Pad); break;
      case kClsId: roles.push_back(TokenRole::Cls); break;
      case kSepId: roles.push_back(TokenRole::Sep); break;
      default: roles.push_back(TokenRole::Word);
    }
  }
  return roles;
}

}  // namespace mama
