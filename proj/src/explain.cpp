#include "notescreen/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace notescreen::explain {

using nlohmann::json;

extern const std::string_view kDefaultLexiconJson;

namespace {

std::vector<std::string> phrase_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (auto& [surface, span] : textproc::split_tokens(text)) out.push_back(std::move(surface));
  return out;
}

bool contains_run(const std::vector<std::string>& haystack, const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) !=
         haystack.end();
}

}  // namespace

// ---- tagging -------------------------------------------------------------------------

LexiconTagger LexiconTagger::from_json(const json& doc) {
  if (!doc.is_object()) throw DataError("lexicon must be a JSON object of category -> phrases");
  LexiconTagger tagger;
  for (const auto& [name, phrases] : doc.items()) {
    const auto category = parse_category(name);
    if (!category || *category == PhenotypeCategory::Unassigned) {
      throw DataError("lexicon names unknown category \"" + name + "\"");
    }
    if (!phrases.is_array()) throw DataError("lexicon entry \"" + name + "\" is not an array");
    auto& dest = tagger.phrases_[category_index(*category)];
    for (const auto& phrase : phrases) {
      auto tokens = phrase_tokens(phrase.get<std::string>());
      if (!tokens.empty()) dest.push_back(std::move(tokens));
    }
  }
  return tagger;
}

LexiconTagger LexiconTagger::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open lexicon " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw DataError("lexicon " + path.string() + ": " + e.what());
  }
}

json builtin_lexicon_json() { return json::parse(kDefaultLexiconJson); }

const LexiconTagger& LexiconTagger::builtin() {
  static const LexiconTagger kTagger = from_json(builtin_lexicon_json());
  return kTagger;
}

PhenotypeCategory LexiconTagger::tag(std::string_view sentence) const {
  const auto tokens = phrase_tokens(sentence);
  for (std::size_t c = 0; c < kNumPhenotypes; ++c) {
    for (const auto& phrase : phrases_[c]) {
      if (contains_run(tokens, phrase)) return static_cast<PhenotypeCategory>(c);
    }
  }
  return PhenotypeCategory::Unassigned;
}

std::size_t LexiconTagger::phrase_count() const {
  std::size_t n = 0;
  for (const auto& p : phrases_) n += p.size();
  return n;
}

// ---- integrated gradients ------------------------------------------------------------

double TokenAttributions::total() const {
  return std::accumulate(per_token.begin(), per_token.end(), 0.0);
}

double TokenAttributions::completeness_residual() const {
  return std::abs(total() - (f_input - f_baseline));
}

TokenAttributions integrated_gradients(const model::Scorer& scorer, const Matrix& inputs,
                                       const textproc::WindowPlan& plan,
                                       const model::Target& target, std::size_t m_steps) {
  if (m_steps == 0) throw std::invalid_argument("integrated_gradients: m_steps must be >= 1");
  TokenAttributions out;
  out.m_steps = m_steps;
  const Matrix baseline(inputs.rows, inputs.cols);
  out.f_baseline = model::target_value(scorer.logits(baseline, plan), target);
  out.f_input = model::target_value(scorer.logits(inputs, plan), target);

  Matrix grad_sum(inputs.rows, inputs.cols);
  Matrix point(inputs.rows, inputs.cols);
  for (std::size_t s = 1; s <= m_steps; ++s) {
    const double alpha = (static_cast<double>(s) - 0.5) / static_cast<double>(m_steps);
    for (std::size_t i = 0; i < inputs.data.size(); ++i) point.data[i] = alpha * inputs.data[i];
    const Matrix g = scorer.input_gradient(point, plan, target, nullptr);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      if (!std::isfinite(g.data[i])) {
        throw RuntimeFailure("integrated_gradients: non-finite gradient at step " +
                             std::to_string(s));
      }
      grad_sum.data[i] += g.data[i];
    }
  }
  const double inv_m = 1.0 / static_cast<double>(m_steps);
  out.per_token.assign(inputs.rows, 0.0);
  for (std::size_t r = 0; r < inputs.rows; ++r) {
    const auto x = inputs.row(r);
    const auto g = grad_sum.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < inputs.cols; ++c) acc += x[c] * (g[c] * inv_m);
    out.per_token[r] = acc;
  }
  return out;
}

TokenAttributions integrated_gradients(const model::Scorer& scorer, const textproc::TokenSeq& seq,
                                       const textproc::WindowPlan& plan,
                                       const model::Target& target, std::size_t m_steps) {
  return integrated_gradients(scorer, scorer.embed(seq), plan, target, m_steps);
}

Vector sentence_attributions(std::span<const double> token_attributions,
                             const textproc::SentenceIndex& sentences) {
  Vector out(sentences.size(), 0.0);
  for (const auto& s : sentences.sentences) {
    for (std::size_t t = s.token_first; t < s.token_last && t < token_attributions.size(); ++t) {
      out[s.index] += token_attributions[t];
    }
  }
  return out;
}

std::vector<SentenceScore> normalize_and_rank(std::span<const double> raw) {
  if (raw.empty()) throw std::invalid_argument("normalize_and_rank: no sentences");
  double top = 0.0;
  for (double r : raw) top = std::max(top, r);
  std::vector<SentenceScore> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i].index = i;
    out[i].raw = raw[i];
    out[i].score = top > 0.0 ? std::max(raw[i], 0.0) / top : 0.0;
  }
  std::vector<std::size_t> order(raw.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (out[a].score != out[b].score) return out[a].score > out[b].score;
    return out[a].raw > out[b].raw;
  });
  for (std::size_t r = 0; r < order.size(); ++r) out[order[r]].rank = r + 1;
  return out;
}

std::vector<CategoryScore> accumulated_ig(std::span<const SentenceScore> sentences,
                                          std::span<const PhenotypeCategory> categories,
                                          std::size_t k) {
  if (k == 0) throw std::invalid_argument("accumulated_ig: k must be positive");
  if (sentences.empty()) throw std::invalid_argument("accumulated_ig: no sentences");
  std::vector<const SentenceScore*> ranked;
  for (const auto& s : sentences) ranked.push_back(&s);
  std::sort(ranked.begin(), ranked.end(),
            [](const SentenceScore* a, const SentenceScore* b) { return a->rank < b->rank; });
  std::array<double, kNumCategories> sums{};
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
    const std::size_t idx = ranked[i]->index;
    if (idx >= categories.size()) throw std::invalid_argument("accumulated_ig: missing category");
    sums[category_index(categories[idx])] += ranked[i]->score;
  }
  std::vector<CategoryScore> out;
  for (auto c : kAllCategories) {
    out.push_back({c, sums[category_index(c)] / static_cast<double>(k), k});
  }
  return out;
}

std::vector<std::size_t> AttributionResult::ranked() const {
  std::vector<std::size_t> order(sentences.size());
  for (const auto& s : sentences) order[s.rank - 1] = s.index;
  return order;
}

AttributionResult explain_note(const model::Scorer& scorer, const std::string& note_id,
                               std::string_view text, const textproc::PreparedNote& prepared,
                               const Tagger& tagger, const ExplainOptions& options) {
  AttributionResult result;
  result.note_id = note_id;
  result.target_class = options.target_class;
  result.m_steps = options.m_steps;
  const auto attributions =
      integrated_gradients(scorer, prepared.tokens, prepared.windows,
                           model::Target::log_prob(options.target_class), options.m_steps);
  result.completeness_residual = attributions.completeness_residual();
  const Vector raw = sentence_attributions(attributions.per_token, prepared.sentences);
  for (const auto& s : prepared.sentences.sentences) {
    result.spans.push_back(s.chars);
    result.categories.push_back(tagger.tag(text.substr(s.chars.begin, s.chars.end - s.chars.begin)));
  }
  if (raw.empty()) return result;
  result.sentences = normalize_and_rank(raw);
  result.category_scores = accumulated_ig(result.sentences, result.categories, options.k);
  return result;
}

json attribution_to_json(const AttributionResult& r) {
  json sentences = json::array();
  for (std::size_t i = 0; i < r.sentences.size(); ++i) {
    const auto& s = r.sentences[i];
    sentences.push_back({{"index", s.index},
                         {"text_span", {r.spans[i].begin, r.spans[i].end}},
                         {"raw", s.raw},
                         {"score", s.score},
                         {"rank", s.rank},
                         {"category", category_name(r.categories[i])}});
  }
  json categories = json::array();
  for (const auto& c : r.category_scores) {
    categories.push_back({{"category", category_name(c.category)}, {"A_c", c.value}});
  }
  return json{{"note_id", r.note_id},
              {"target_class", label_name(r.target_class)},
              {"m_steps", r.m_steps},
              {"completeness_residual", r.completeness_residual},
              {"sentences", std::move(sentences)},
              {"category_scores", std::move(categories)}};
}

AttributionResult attribution_from_json(const json& doc) {
  try {
    AttributionResult r;
    r.note_id = doc.at("note_id").get<std::string>();
    r.target_class = parse_label(doc.at("target_class").get<std::string>());
    r.m_steps = doc.at("m_steps").get<std::size_t>();
    r.completeness_residual = doc.at("completeness_residual").get<double>();
    for (const auto& s : doc.at("sentences")) {
      SentenceScore score;
      score.index = s.at("index").get<std::size_t>();
      score.raw = s.at("raw").get<double>();
      score.score = s.at("score").get<double>();
      score.rank = s.at("rank").get<std::size_t>();
      r.sentences.push_back(score);
      const auto span = s.at("text_span");
      r.spans.push_back({span.at(0).get<std::size_t>(), span.at(1).get<std::size_t>()});
      const auto c = parse_category(s.at("category").get<std::string>());
      if (!c) throw DataError("unknown category in attribution report");
      r.categories.push_back(*c);
    }
    std::size_t k = kDefaultTopK;
    for (const auto& c : doc.at("category_scores")) {
      const auto cat = parse_category(c.at("category").get<std::string>());
      if (!cat) throw DataError("unknown category in attribution report");
      r.category_scores.push_back({*cat, c.at("A_c").get<double>(), k});
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed attribution report: ") + e.what());
  }
}

}  // namespace notescreen::explain
