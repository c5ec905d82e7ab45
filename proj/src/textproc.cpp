#include "notescreen/textproc.hpp"

#include <algorithm>
#include <array>
#include <map>

namespace notescreen::textproc {

namespace {

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Letters, digits, and any non-ASCII byte (UTF-8 continuation bytes stay inside words).
bool is_word(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}

char lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

bool is_upper_or_digit(unsigned char c) { return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9'); }

bool is_closer(unsigned char c) { return c == ')' || c == '"' || c == '\'' || c == ']'; }

constexpr std::array<std::string_view, 7> kAbbreviations = {"dr.", "mr.", "mrs.", "ms.",
                                                            "e.g.", "i.e.", "vs."};

bool is_guarded(std::string_view text, std::size_t terminator) {
  std::size_t start = terminator;
  while (start > 0 && !is_space(static_cast<unsigned char>(text[start - 1]))) --start;
  std::string word;
  for (std::size_t i = start; i <= terminator; ++i) word.push_back(lower(text[i]));
  while (!word.empty() && (word.front() == '(' || word.front() == '"')) word.erase(word.begin());
  return std::find(kAbbreviations.begin(), kAbbreviations.end(), word) != kAbbreviations.end();
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> surfaces) : surfaces_(std::move(surfaces)) {
  for (std::size_t i = 0; i < surfaces_.size(); ++i) {
    auto [it, inserted] = ids_.emplace(surfaces_[i], static_cast<TokenId>(i + 1));
    if (!inserted) throw DataError("duplicate vocabulary entry \"" + surfaces_[i] + "\"");
  }
}

TokenId Vocabulary::id(std::string_view surface) const {
  auto it = ids_.find(std::string(surface));
  return it == ids_.end() ? kUnknownToken : it->second;
}

const std::string& Vocabulary::surface(TokenId id) const {
  static const std::string kUnknown = "<unk>";
  if (id == kUnknownToken || id > surfaces_.size()) return kUnknown;
  return surfaces_[id - 1];
}

nlohmann::json Vocabulary::to_json() const { return surfaces_; }

Vocabulary Vocabulary::from_json(const nlohmann::json& doc) {
  if (!doc.is_array()) throw DataError("vocabulary must be a JSON array of strings");
  return Vocabulary(doc.get<std::vector<std::string>>());
}

std::vector<std::pair<std::string, Span>> split_tokens(std::string_view text) {
  std::vector<std::pair<std::string, Span>> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
    } else if (is_word(c)) {
      std::size_t j = i;
      std::string surface;
      while (j < text.size() && is_word(static_cast<unsigned char>(text[j]))) {
        surface.push_back(lower(text[j]));
        ++j;
      }
      out.emplace_back(std::move(surface), Span{i, j});
      i = j;
    } else {
      out.emplace_back(std::string(1, text[i]), Span{i, i + 1});
      ++i;
    }
  }
  return out;
}

Vocabulary build_vocab(const corpus::Cohort& cohort, std::size_t min_frequency,
                       std::size_t max_size) {
  std::map<std::string, std::size_t> freq;
  for (const auto& note : cohort.notes()) {
    for (auto& [surface, span] : split_tokens(note.text)) ++freq[surface];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [surface, count] : freq) {
    if (count >= min_frequency) ranked.emplace_back(surface, count);
  }
  // std::map iteration is already surface-ascending; a stable sort keeps that as tie-break.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (max_size > 0 && ranked.size() > max_size) ranked.resize(max_size);
  std::vector<std::string> surfaces;
  surfaces.reserve(ranked.size());
  for (auto& [surface, count] : ranked) surfaces.push_back(std::move(surface));
  return Vocabulary(std::move(surfaces));
}

TokenSeq tokenize(std::string_view text, const Vocabulary& vocab) {
  TokenSeq seq;
  for (auto& [surface, span] : split_tokens(text)) {
    const TokenId id = vocab.id(surface);
    seq.tokens.push_back({id, std::move(surface), span});
  }
  return seq;
}

SentenceIndex segment_sentences(std::string_view text) {
  SentenceIndex index;
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::size_t start = kNone;
  std::size_t last_non_space = kNone;

  auto close = [&](std::size_t end) {
    if (start != kNone && end > start) {
      index.sentences.push_back({index.sentences.size(), {start, end}, 0, 0});
    }
    start = kNone;
  };

  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      // Blank line: a whitespace run holding two or more newlines.
      std::size_t j = i;
      int newlines = 0;
      while (j < text.size() && is_space(static_cast<unsigned char>(text[j]))) {
        if (text[j] == '\n') ++newlines;
        ++j;
      }
      if (newlines >= 2 && last_non_space != kNone) close(last_non_space + 1);
      i = j;
      continue;
    }
    if (start == kNone) start = i;
    last_non_space = i;
    if (c == '.' || c == '!' || c == '?') {
      std::size_t j = i + 1;
      while (j < text.size() && is_closer(static_cast<unsigned char>(text[j]))) ++j;
      std::size_t k = j;
      while (k < text.size() && is_space(static_cast<unsigned char>(text[k]))) ++k;
      if (k > j && k < text.size() && is_upper_or_digit(static_cast<unsigned char>(text[k])) &&
          !(c == '.' && is_guarded(text, i))) {
        last_non_space = j - 1;
        close(j);
        i = j;
        continue;
      }
    }
    ++i;
  }
  if (last_non_space != kNone) close(last_non_space + 1);
  return index;
}

void attach_tokens(SentenceIndex& index, const TokenSeq& tokens) {
  std::size_t t = 0;
  for (auto& s : index.sentences) {
    while (t < tokens.size() && tokens.tokens[t].span.begin < s.chars.begin) ++t;
    s.token_first = t;
    while (t < tokens.size() && tokens.tokens[t].span.begin < s.chars.end) ++t;
    s.token_last = t;
  }
}

WindowPlan make_windows(std::size_t seq_len, std::size_t window_size, std::size_t max_tokens,
                        std::size_t overlap) {
  if (window_size == 0) throw std::invalid_argument("window size must be positive");
  if (overlap >= window_size) throw std::invalid_argument("window overlap must be < window size");
  WindowPlan plan;
  plan.window_size = window_size;
  plan.max_tokens = max_tokens;
  plan.overlap = overlap;
  const std::size_t limit = std::min(seq_len, max_tokens);
  const std::size_t stride = window_size - overlap;
  for (std::size_t begin = 0; begin < limit; begin += stride) {
    const std::size_t end = std::min(begin + window_size, limit);
    plan.windows.push_back({begin, end});
    if (end == limit) break;
  }
  return plan;
}

PreparedNote prepare(std::string_view text, const Vocabulary& vocab, std::size_t window_size,
                     std::size_t max_tokens) {
  PreparedNote note;
  note.tokens = tokenize(text, vocab);
  note.sentences = segment_sentences(text);
  attach_tokens(note.sentences, note.tokens);
  note.windows = make_windows(note.tokens.size(), window_size, max_tokens);
  return note;
}

}  // namespace notescreen::textproc
