#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "notescreen/model.hpp"
#include "notescreen/phenotype.hpp"
#include "notescreen/textproc.hpp"

namespace notescreen::explain {

// Sentence -> phenotype category. Implementations must be deterministic and thread-safe.
class Tagger {
 public:
  virtual ~Tagger() = default;
  virtual PhenotypeCategory tag(std::string_view sentence) const = 0;
};

// Phrase lexicon matched on token boundaries, case-insensitively. When phrases of several
// categories match, the earliest category in PhenotypeCategory order wins.
class LexiconTagger final : public Tagger {
 public:
  // JSON object: category name -> array of phrases.
  static LexiconTagger from_json(const nlohmann::json& doc);
  static LexiconTagger load(const std::filesystem::path& path);
  // The lexicon shipped in data/lexicon.json, compiled in.
  static const LexiconTagger& builtin();

  PhenotypeCategory tag(std::string_view sentence) const override;

  std::size_t phrase_count() const;

 private:
  // Per category, phrases as token sequences.
  std::array<std::vector<std::vector<std::string>>, kNumPhenotypes> phrases_;
};

nlohmann::json builtin_lexicon_json();

struct TokenAttributions {
  Vector per_token;  // summed over embedding dimensions
  double f_input = 0.0;
  double f_baseline = 0.0;
  std::size_t m_steps = 0;

  double total() const;
  // |sum(attributions) - (F(x) - F(baseline))|
  double completeness_residual() const;
};

inline constexpr std::size_t kDefaultSteps = 512;
inline constexpr std::size_t kDefaultTopK = 10;

// Midpoint-rule Integrated Gradients from an all-zero embedding baseline.
TokenAttributions integrated_gradients(const model::Scorer& scorer, const Matrix& inputs,
                                       const textproc::WindowPlan& plan,
                                       const model::Target& target,
                                       std::size_t m_steps = kDefaultSteps);

TokenAttributions integrated_gradients(const model::Scorer& scorer, const textproc::TokenSeq& seq,
                                       const textproc::WindowPlan& plan,
                                       const model::Target& target,
                                       std::size_t m_steps = kDefaultSteps);

// Sum of token attributions over each sentence's token range.
Vector sentence_attributions(std::span<const double> token_attributions,
                             const textproc::SentenceIndex& sentences);

struct SentenceScore {
  std::size_t index = 0;
  double raw = 0.0;
  double score = 0.0;  // max(raw, 0) / max over the note, in [0, 1]
  std::size_t rank = 0;  // 1-based
};

// Result is in sentence order; rank orders by (score desc, raw desc, index asc).
std::vector<SentenceScore> normalize_and_rank(std::span<const double> raw);

struct CategoryScore {
  PhenotypeCategory category = PhenotypeCategory::Unassigned;
  double value = 0.0;
  std::size_t k = kDefaultTopK;
};

// A_c = (1/k) * sum of scores of the top-k ranked sentences tagged c. One entry per
// category, Unassigned included. Notes with fewer than k sentences keep the divisor k.
// `categories` is indexed by sentence index.
std::vector<CategoryScore> accumulated_ig(std::span<const SentenceScore> sentences,
                                          std::span<const PhenotypeCategory> categories,
                                          std::size_t k = kDefaultTopK);

struct AttributionResult {
  std::string note_id;
  Label target_class = Label::Epilepsy;
  std::size_t m_steps = kDefaultSteps;
  double completeness_residual = 0.0;
  std::vector<textproc::Span> spans;  // per sentence
  std::vector<SentenceScore> sentences;
  std::vector<PhenotypeCategory> categories;  // per sentence
  std::vector<CategoryScore> category_scores;

  // Sentence indices ordered by rank.
  std::vector<std::size_t> ranked() const;
};

struct ExplainOptions {
  std::size_t m_steps = kDefaultSteps;
  std::size_t k = kDefaultTopK;
  Label target_class = Label::Epilepsy;
};

AttributionResult explain_note(const model::Scorer& scorer, const std::string& note_id,
                               std::string_view text, const textproc::PreparedNote& prepared,
                               const Tagger& tagger, const ExplainOptions& options);

nlohmann::json attribution_to_json(const AttributionResult& result);
AttributionResult attribution_from_json(const nlohmann::json& doc);

}  // namespace notescreen::explain
