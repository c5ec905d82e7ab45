#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "notescreen/corpus.hpp"

namespace notescreen::textproc {

using TokenId = std::uint32_t;
inline constexpr TokenId kUnknownToken = 0;

// Byte range [begin, end) into the source text.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const Span&) const = default;
};

struct Token {
  TokenId id = kUnknownToken;
  std::string surface;
  Span span;
};

struct TokenSeq {
  std::vector<Token> tokens;
  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
};

class Vocabulary {
 public:
  Vocabulary() = default;
  // Surfaces in id order starting at id 1.
  explicit Vocabulary(std::vector<std::string> surfaces);

  // Unknown surfaces map to 0.
  TokenId id(std::string_view surface) const;
  const std::string& surface(TokenId id) const;

  // Number of ids including the unknown id 0.
  std::size_t size() const { return surfaces_.size() + 1; }
  const std::vector<std::string>& surfaces() const { return surfaces_; }

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& doc);

  bool operator==(const Vocabulary& other) const { return surfaces_ == other.surfaces_; }

 private:
  std::vector<std::string> surfaces_;
  std::unordered_map<std::string, TokenId> ids_;
};

// Lowercased surface forms and their spans, with no vocabulary lookup.
std::vector<std::pair<std::string, Span>> split_tokens(std::string_view text);

// Ranks surfaces by (frequency desc, surface asc). max_size caps the number of non-unknown
// entries; 0 means unlimited.
Vocabulary build_vocab(const corpus::Cohort& cohort, std::size_t min_frequency = 1,
                       std::size_t max_size = 0);

TokenSeq tokenize(std::string_view text, const Vocabulary& vocab);

struct Sentence {
  std::size_t index = 0;
  Span chars;
  // Token range [first, last) after attach_tokens.
  std::size_t token_first = 0;
  std::size_t token_last = 0;
};

struct SentenceIndex {
  std::vector<Sentence> sentences;
  std::size_t size() const { return sentences.size(); }
};

SentenceIndex segment_sentences(std::string_view text);

// Fills token ranges. Tokens must come from the same text.
void attach_tokens(SentenceIndex& index, const TokenSeq& tokens);

inline constexpr std::size_t kDefaultWindowSize = 512;
inline constexpr std::size_t kDefaultMaxTokens = 4096;

struct WindowPlan {
  std::vector<Span> windows;  // token ranges
  std::size_t window_size = kDefaultWindowSize;
  std::size_t max_tokens = kDefaultMaxTokens;
  std::size_t overlap = 0;

  // Tokens beyond this index are ignored by the model.
  std::size_t covered() const { return windows.empty() ? 0 : windows.back().end; }
};

WindowPlan make_windows(std::size_t seq_len, std::size_t window_size = kDefaultWindowSize,
                        std::size_t max_tokens = kDefaultMaxTokens, std::size_t overlap = 0);

// Tokens, sentences, and windows for one note.
struct PreparedNote {
  TokenSeq tokens;
  SentenceIndex sentences;
  WindowPlan windows;
};

PreparedNote prepare(std::string_view text, const Vocabulary& vocab,
                     std::size_t window_size = kDefaultWindowSize,
                     std::size_t max_tokens = kDefaultMaxTokens);

}  // namespace notescreen::textproc
