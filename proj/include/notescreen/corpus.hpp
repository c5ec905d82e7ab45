#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "notescreen/common.hpp"
#include "notescreen/phenotype.hpp"

namespace notescreen::corpus {

struct Note {
  std::string id;
  std::string patient_id;
  std::string text;
  Label label = Label::Epilepsy;
  std::string site;
  std::size_t word_count = 0;
};

// Number of whitespace-separated tokens.
std::size_t count_words(std::string_view text);

// Builds a validated note (non-empty id and text, word_count derived).
Note make_note(std::string id, std::string patient_id, std::string text, Label label,
               std::string site);

using LabelCounts = std::array<std::size_t, kNumLabels>;

// Ordered collection of notes with unique ids.
class Cohort {
 public:
  Cohort() = default;
  explicit Cohort(std::vector<Note> notes);

  // Throws DataError on duplicate id or empty text.
  void add(Note note);

  const std::vector<Note>& notes() const { return notes_; }
  std::size_t size() const { return notes_.size(); }
  bool empty() const { return notes_.empty(); }
  const Note& operator[](std::size_t i) const { return notes_[i]; }

  const LabelCounts& label_counts() const { return counts_; }
  std::size_t count(Label label) const { return counts_[label_index(label)]; }

  const Note* find(std::string_view id) const;

  // Notes whose ids are listed, in the order given. Throws DataError on unknown ids.
  Cohort subset(std::span<const std::string> ids) const;

  std::vector<std::string> ids() const;

 private:
  std::vector<Note> notes_;
  std::unordered_map<std::string, std::size_t> index_;
  LabelCounts counts_{};
};

enum class Format { jsonl, csv };

Format parse_format(std::string_view name);

Cohort ingest(const std::filesystem::path& path, Format format);
Cohort read_jsonl(std::istream& in);
Cohort read_csv(std::istream& in);

void write_jsonl(const Cohort& cohort, std::ostream& out);
void save_jsonl(const Cohort& cohort, const std::filesystem::path& path);

nlohmann::json note_to_json(const Note& note);
Note note_from_json(const nlohmann::json& record);

// Drops every note of any patient that carries both labels.
Cohort exclude_dual_diagnosis(const Cohort& cohort);

inline const std::vector<std::string> kDefaultTruncationMarkers = {"Discharge Diagnosis",
                                                                   "Final Diagnosis"};

// Cuts each note at the first occurrence of any marker (case-insensitive). Notes that
// would become empty are dropped.
Cohort truncate_at_markers(const Cohort& cohort, std::span<const std::string> markers);

// ---- apportionment -------------------------------------------------------------------

// Hamilton / largest-remainder apportionment of `total` seats over non-negative weights.
// Remainder ties go to the lower index.
std::vector<std::size_t> largest_remainder(std::size_t total, std::span<const double> weights);

// Exact variant for integer weights (no floating point involved).
std::vector<std::size_t> largest_remainder(std::size_t total,
                                           std::span<const std::uint64_t> weights);

// Seats = ceil(sum(quotas)); floors of the quotas first, then remaining seats by
// descending fractional part (ties to the lower index).
std::vector<std::size_t> apportion_quotas(std::span<const double> quotas);

// ---- splitting and resampling --------------------------------------------------------

struct SplitSpec {
  std::array<double, 3> ratios{0.7, 0.1, 0.2};
  std::uint64_t seed = 0;
  bool stratify = true;

  void validate() const;
};

struct DataSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  SplitSpec spec;
};

nlohmann::json split_to_json(const DataSplit& split);
DataSplit split_from_json(const nlohmann::json& doc);

// Per-label shuffle then largest-remainder apportionment. All notes of a patient land in the
// same partition; with one note per patient the per-label counts are exact.
DataSplit stratified_split(const Cohort& cohort, const SplitSpec& spec);

// Exact positive rational num/den.
struct Ratio {
  std::uint64_t num = 1;
  std::uint64_t den = 1;
};

struct RebalanceTargets {
  std::size_t epilepsy = 0;
  std::size_t pnes = 0;
};

// Composition of 2t for ratio alpha: epilepsy = round-half-up(2t * alpha / (1 + alpha)).
RebalanceTargets rebalance_targets(std::size_t pnes_available, Ratio alpha);

// Resamples to exactly 2t notes (t = PNES count) with epilepsy:PNES close to alpha.
Cohort rebalance_training(const Cohort& train, Ratio alpha, std::uint64_t seed);

// Keeps ceil(fraction * n) notes, preserving the label mix by largest remainder.
Cohort subsample_training(const Cohort& train, double fraction, std::uint64_t seed);

// Draws n notes with per-label counts proportional to the cohort's label mix.
Cohort stratified_sample(const Cohort& cohort, std::size_t n, std::uint64_t seed);

// ---- synthetic cohorts ---------------------------------------------------------------

// Every phenotype except Demographics & Background.
std::vector<explain::PhenotypeCategory> default_signal_categories();

struct SyntheticOptions {
  std::size_t n = 2000;
  double epilepsy_fraction = 0.768;
  std::uint64_t seed = 0;
  // Probability that a signal-bearing category sentence carries a class cue.
  double signal_strength = 1.0;
  // Probability that a planted cue is taken from the opposite class's cue list.
  double cue_noise = 0.0;
  // Categories whose sentences may carry planted cues.
  std::vector<explain::PhenotypeCategory> signal_categories = default_signal_categories();
  std::size_t min_filler_sentences = 2;
  std::size_t max_filler_sentences = 4;
};

struct SyntheticSentence {
  // Unassigned marks filler sentences.
  explain::PhenotypeCategory category = explain::PhenotypeCategory::Unassigned;
  bool planted = false;
};

struct SyntheticCohort {
  Cohort cohort;
  // note id -> per-sentence ground truth, in text order.
  std::map<std::string, std::vector<SyntheticSentence>> truth;

  std::vector<std::size_t> planted_sentences(const std::string& note_id) const;
};

SyntheticCohort generate_synthetic(const SyntheticOptions& options);

// Weak, noisy cohort used for robustness sweeps.
SyntheticOptions hard_synthetic_options(std::size_t n, std::uint64_t seed);

nlohmann::json truth_to_json(const SyntheticCohort& synthetic);

}  // namespace notescreen::corpus
