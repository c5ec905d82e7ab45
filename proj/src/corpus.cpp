#include "notescreen/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "notescreen/random.hpp"

namespace notescreen::corpus {

using nlohmann::json;

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

// Split every note's text by patient and label in one pass.
struct PatientGroup {
  Label label;
  std::vector<std::size_t> notes;
};

std::vector<PatientGroup> group_by_patient(const Cohort& cohort) {
  std::vector<PatientGroup> groups;
  std::unordered_map<std::string, std::size_t> by_patient;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const Note& note = cohort[i];
    // Notes without a patient id are their own group.
    const std::string key = note.patient_id.empty() ? "\x01" + note.id : note.patient_id;
    auto [it, inserted] = by_patient.emplace(key, groups.size());
    if (inserted) groups.push_back({note.label, {}});
    groups[it->second].notes.push_back(i);
  }
  return groups;
}

// Keeps the first `count` shuffled positions of each label, emitted in cohort order.
Cohort draw_per_label(const Cohort& cohort, const LabelCounts& wanted, std::uint64_t seed) {
  std::vector<bool> keep(cohort.size(), false);
  for (std::size_t l = 0; l < kNumLabels; ++l) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      if (label_index(cohort[i].label) == l) members.push_back(i);
    }
    Rng rng(derive_seed(seed, l + 1));
    rng.shuffle(std::span<std::size_t>(members));
    for (std::size_t j = 0; j < wanted[l]; ++j) keep[members[j]] = true;
  }
  Cohort out;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    if (keep[i]) out.add(cohort[i]);
  }
  return out;
}

}  // namespace

std::size_t count_words(std::string_view text) {
  std::size_t words = 0;
  bool in_word = false;
  for (char c : text) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++words;
    }
  }
  return words;
}

Note make_note(std::string id, std::string patient_id, std::string text, Label label,
               std::string site) {
  if (id.empty()) throw DataError("note with empty id");
  if (count_words(text) == 0) throw DataError("note \"" + id + "\" has empty text");
  Note note{std::move(id), std::move(patient_id), std::move(text), label, std::move(site), 0};
  note.word_count = count_words(note.text);
  return note;
}

Cohort::Cohort(std::vector<Note> notes) {
  notes_.reserve(notes.size());
  for (auto& note : notes) add(std::move(note));
}

void Cohort::add(Note note) {
  if (note.id.empty()) throw DataError("note with empty id");
  if (count_words(note.text) == 0) throw DataError("note \"" + note.id + "\" has empty text");
  if (index_.contains(note.id)) throw DataError("duplicate note id \"" + note.id + "\"");
  note.word_count = count_words(note.text);
  index_.emplace(note.id, notes_.size());
  ++counts_[label_index(note.label)];
  notes_.push_back(std::move(note));
}

const Note* Cohort::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &notes_[it->second];
}

Cohort Cohort::subset(std::span<const std::string> ids) const {
  Cohort out;
  for (const auto& id : ids) {
    const Note* note = find(id);
    if (note == nullptr) throw DataError("unknown note id \"" + id + "\"");
    out.add(*note);
  }
  return out;
}

std::vector<std::string> Cohort::ids() const {
  std::vector<std::string> out;
  out.reserve(notes_.size());
  for (const auto& n : notes_) out.push_back(n.id);
  return out;
}

// ---- I/O -----------------------------------------------------------------------------

Format parse_format(std::string_view name) {
  if (name == "jsonl") return Format::jsonl;
  if (name == "csv") return Format::csv;
  throw DataError("unknown cohort format \"" + std::string(name) + "\"");
}

json note_to_json(const Note& note) {
  return json{{"id", note.id},
              {"patient_id", note.patient_id},
              {"text", note.text},
              {"label", label_name(note.label)},
              {"site", note.site}};
}

Note note_from_json(const json& record) {
  if (!record.is_object()) throw DataError("record is not a JSON object");
  auto field = [&](const char* name, bool required) -> std::string {
    auto it = record.find(name);
    if (it == record.end() || it->is_null()) {
      if (required) throw DataError(std::string("missing field \"") + name + "\"");
      return {};
    }
    if (!it->is_string()) throw DataError(std::string("field \"") + name + "\" is not a string");
    return it->get<std::string>();
  };
  std::string id = field("id", true);
  std::string patient = field("patient_id", true);
  std::string text = field("text", true);
  Label label = parse_label(field("label", true));
  std::string site = field("site", false);
  return make_note(std::move(id), std::move(patient), std::move(text), label, std::move(site));
}

Cohort read_jsonl(std::istream& in) {
  Cohort cohort;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (count_words(line) == 0) continue;
    try {
      cohort.add(note_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cohort;
}

namespace {

// RFC-4180 record reader. Returns false at end of input. `line_no` tracks the physical
// line on which the record starts.
bool read_csv_record(std::istream& in, std::vector<std::string>& fields, std::size_t& line_no,
                     std::size_t& start_line) {
  fields.clear();
  std::string field;
  bool quoted = false;
  bool after_quote = false;
  bool any = false;
  start_line = line_no + 1;
  int ch;
  while ((ch = in.get()) != std::char_traits<char>::eof()) {
    const char c = static_cast<char>(ch);
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get();
          field.push_back('"');
        } else {
          quoted = false;
          after_quote = true;
        }
      } else {
        if (c == '\n') ++line_no;
        field.push_back(c);
      }
      continue;
    }
    if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
      after_quote = false;
    } else if (c == '\r' && in.peek() == '\n') {
      continue;
    } else if (c == '\n') {
      ++line_no;
      fields.push_back(std::move(field));
      return true;
    } else if (c == '"') {
      if (!field.empty() || after_quote) {
        throw DataError("line " + std::to_string(line_no + 1) + ": stray quote in field");
      }
      quoted = true;
    } else {
      if (after_quote) {
        throw DataError("line " + std::to_string(line_no + 1) +
                        ": characters after closing quote");
      }
      field.push_back(c);
    }
  }
  if (quoted) throw DataError("line " + std::to_string(start_line) + ": unterminated quoted field");
  if (!any) return false;
  ++line_no;
  fields.push_back(std::move(field));
  return true;
}

}  // namespace

Cohort read_csv(std::istream& in) {
  std::vector<std::string> header;
  std::size_t line_no = 0;
  std::size_t start = 0;
  if (!read_csv_record(in, header, line_no, start)) throw DataError("CSV input is empty");
  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[header[i]] = i;
  for (const char* required : {"id", "patient_id", "text", "label"}) {
    if (!column.contains(required)) {
      throw DataError(std::string("line 1: header lacks column \"") + required + "\"");
    }
  }
  Cohort cohort;
  std::vector<std::string> fields;
  while (read_csv_record(in, fields, line_no, start)) {
    if (fields.size() == 1 && fields[0].empty()) continue;  // blank line
    if (fields.size() != header.size()) {
      throw DataError("line " + std::to_string(start) + ": expected " +
                      std::to_string(header.size()) + " fields, found " +
                      std::to_string(fields.size()));
    }
    json record = json::object();
    for (const auto& [name, idx] : column) record[name] = fields[idx];
    try {
      cohort.add(note_from_json(record));
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(start) + ": " + e.what());
    }
  }
  return cohort;
}

Cohort ingest(const std::filesystem::path& path, Format format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return format == Format::jsonl ? read_jsonl(in) : read_csv(in);
}

void write_jsonl(const Cohort& cohort, std::ostream& out) {
  for (const auto& note : cohort.notes()) out << note_to_json(note).dump() << '\n';
}

void save_jsonl(const Cohort& cohort, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  write_jsonl(cohort, out);
}

// ---- curation ------------------------------------------------------------------------

Cohort exclude_dual_diagnosis(const Cohort& cohort) {
  std::unordered_map<std::string, unsigned> seen;  // bit per label
  for (const auto& note : cohort.notes()) {
    seen[note.patient_id] |= 1u << label_index(note.label);
  }
  Cohort out;
  for (const auto& note : cohort.notes()) {
    if (seen[note.patient_id] != 0b11u) out.add(note);
  }
  return out;
}

Cohort truncate_at_markers(const Cohort& cohort, std::span<const std::string> markers) {
  std::vector<std::string> lowered;
  for (const auto& m : markers) {
    if (!m.empty()) lowered.push_back(to_lower_ascii(m));
  }
  Cohort out;
  for (Note note : cohort.notes()) {
    const std::string text = to_lower_ascii(note.text);
    std::size_t cut = std::string::npos;
    for (const auto& m : lowered) cut = std::min(cut, text.find(m));
    if (cut != std::string::npos) note.text.resize(cut);
    if (count_words(note.text) == 0) continue;
    out.add(std::move(note));
  }
  return out;
}

// ---- apportionment -------------------------------------------------------------------

namespace {

std::vector<std::size_t> distribute(std::size_t seats, std::vector<std::size_t> floors,
                                    const std::vector<double>& remainders) {
  std::size_t used = std::accumulate(floors.begin(), floors.end(), std::size_t{0});
  std::vector<std::size_t> order(floors.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Remainders equal up to rounding noise count as ties and fall back to index order.
  std::vector<long long> key(remainders.size());
  for (std::size_t i = 0; i < key.size(); ++i) key[i] = std::llround(remainders[i] * 1e9);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  for (std::size_t i = 0; used < seats; i = (i + 1) % order.size(), ++used) ++floors[order[i]];
  return floors;
}

constexpr double kQuotaSlack = 1e-9;

}  // namespace

std::vector<std::size_t> largest_remainder(std::size_t total, std::span<const double> weights) {
  if (weights.empty()) throw std::invalid_argument("largest_remainder: no weights");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("largest_remainder: bad weight");
    sum += w;
  }
  if (sum <= 0.0) throw std::invalid_argument("largest_remainder: weights sum to zero");
  std::vector<std::size_t> floors(weights.size());
  std::vector<double> rem(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double quota = static_cast<double>(total) * weights[i] / sum;
    const double f = std::floor(quota + kQuotaSlack);
    floors[i] = static_cast<std::size_t>(f);
    rem[i] = quota - f;
  }
  return distribute(total, std::move(floors), rem);
}

std::vector<std::size_t> largest_remainder(std::size_t total,
                                           std::span<const std::uint64_t> weights) {
  if (weights.empty()) throw std::invalid_argument("largest_remainder: no weights");
  unsigned __int128 sum = 0;
  for (auto w : weights) sum += w;
  if (sum == 0) throw std::invalid_argument("largest_remainder: weights sum to zero");
  std::vector<std::size_t> floors(weights.size());
  std::vector<unsigned __int128> rem(weights.size());
  std::size_t used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const unsigned __int128 scaled = static_cast<unsigned __int128>(total) * weights[i];
    floors[i] = static_cast<std::size_t>(scaled / sum);
    rem[i] = scaled % sum;
    used += floors[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; used < total; ++i, ++used) ++floors[order[i]];
  return floors;
}

std::vector<std::size_t> apportion_quotas(std::span<const double> quotas) {
  double sum = 0.0;
  std::vector<std::size_t> floors(quotas.size());
  std::vector<double> rem(quotas.size());
  for (std::size_t i = 0; i < quotas.size(); ++i) {
    if (!(quotas[i] >= 0.0)) throw std::invalid_argument("apportion_quotas: negative quota");
    sum += quotas[i];
    const double f = std::floor(quotas[i] + kQuotaSlack);
    floors[i] = static_cast<std::size_t>(f);
    rem[i] = quotas[i] - f;
  }
  const auto seats = static_cast<std::size_t>(std::ceil(sum - kQuotaSlack));
  return distribute(seats, std::move(floors), rem);
}

// ---- splitting -----------------------------------------------------------------------

void SplitSpec::validate() const {
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw DataError("split ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw DataError("split ratios must sum to 1");
}

json split_to_json(const DataSplit& split) {
  return json{{"train", split.train},
              {"val", split.val},
              {"test", split.test},
              {"spec",
               {{"ratios", split.spec.ratios},
                {"seed", split.spec.seed},
                {"stratify", split.spec.stratify}}}};
}

DataSplit split_from_json(const json& doc) {
  try {
    DataSplit s;
    s.train = doc.at("train").get<std::vector<std::string>>();
    s.val = doc.at("val").get<std::vector<std::string>>();
    s.test = doc.at("test").get<std::vector<std::string>>();
    if (doc.contains("spec")) {
      const auto& spec = doc.at("spec");
      s.spec.ratios = spec.at("ratios").get<std::array<double, 3>>();
      s.spec.seed = spec.at("seed").get<std::uint64_t>();
      s.spec.stratify = spec.at("stratify").get<bool>();
    }
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed split manifest: ") + e.what());
  }
}

DataSplit stratified_split(const Cohort& cohort, const SplitSpec& spec) {
  spec.validate();
  if (spec.stratify) {
    for (std::size_t l = 0; l < kNumLabels; ++l) {
      if (cohort.label_counts()[l] < 3) {
        throw DataError("label " + std::string(label_name(static_cast<Label>(l))) + " has " +
                        std::to_string(cohort.label_counts()[l]) +
                        " notes; stratified splitting needs at least 3");
      }
    }
  }
  const auto groups = group_by_patient(cohort);
  const std::size_t n_strata = spec.stratify ? kNumLabels : 1;
  std::vector<int> partition_of(cohort.size(), -1);
  for (std::size_t s = 0; s < n_strata; ++s) {
    std::vector<std::size_t> members;
    std::size_t notes = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (!spec.stratify || label_index(groups[g].label) == s) {
        members.push_back(g);
        notes += groups[g].notes.size();
      }
    }
    if (members.empty()) continue;
    const auto targets = largest_remainder(notes, std::span<const double>(spec.ratios));
    Rng rng(derive_seed(spec.seed, s + 1));
    rng.shuffle(std::span<std::size_t>(members));
    std::array<std::ptrdiff_t, 3> deficit{};
    for (std::size_t p = 0; p < 3; ++p) deficit[p] = static_cast<std::ptrdiff_t>(targets[p]);
    for (std::size_t g : members) {
      const auto p = static_cast<std::size_t>(
          std::max_element(deficit.begin(), deficit.end()) - deficit.begin());
      deficit[p] -= static_cast<std::ptrdiff_t>(groups[g].notes.size());
      for (std::size_t i : groups[g].notes) partition_of[i] = static_cast<int>(p);
    }
  }
  DataSplit split;
  split.spec = spec;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    auto& dest = partition_of[i] == 0 ? split.train : partition_of[i] == 1 ? split.val : split.test;
    dest.push_back(cohort[i].id);
  }
  return split;
}

// ---- resampling ----------------------------------------------------------------------

RebalanceTargets rebalance_targets(std::size_t pnes_available, Ratio alpha) {
  if (alpha.num == 0 || alpha.den == 0) throw DataError("imbalance ratio must be positive");
  const unsigned __int128 size = 2 * static_cast<unsigned __int128>(pnes_available);
  const unsigned __int128 denom = static_cast<unsigned __int128>(alpha.num) + alpha.den;
  // round-half-up(size * num / denom) = floor((2 * size * num + denom) / (2 * denom))
  const auto epi = static_cast<std::size_t>((2 * size * alpha.num + denom) / (2 * denom));
  return {epi, static_cast<std::size_t>(size) - epi};
}

Cohort rebalance_training(const Cohort& train, Ratio alpha, std::uint64_t seed) {
  const std::size_t t = train.count(Label::PNES);
  if (t == 0) throw DataError("rebalance: training set has no PNES notes");
  const auto want = rebalance_targets(t, alpha);
  const std::size_t epi_available = train.count(Label::Epilepsy);
  if (want.epilepsy > epi_available || want.pnes > t) {
    std::ostringstream msg;
    msg << "rebalance to ratio " << alpha.num << "/" << alpha.den << " needs " << want.epilepsy
        << " Epilepsy and " << want.pnes << " PNES notes; available " << epi_available
        << " Epilepsy and " << t << " PNES";
    throw DataError(msg.str());
  }
  LabelCounts counts{};
  counts[label_index(Label::Epilepsy)] = want.epilepsy;
  counts[label_index(Label::PNES)] = want.pnes;
  return draw_per_label(train, counts, seed);
}

Cohort subsample_training(const Cohort& train, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw DataError("subsample fraction must lie in (0, 1]");
  }
  std::array<double, kNumLabels> quotas{};
  for (std::size_t l = 0; l < kNumLabels; ++l) {
    quotas[l] = fraction * static_cast<double>(train.label_counts()[l]);
  }
  const auto seats = apportion_quotas(quotas);
  LabelCounts counts{};
  for (std::size_t l = 0; l < kNumLabels; ++l) {
    counts[l] = std::min(seats[l], train.label_counts()[l]);
  }
  return draw_per_label(train, counts, seed);
}

Cohort stratified_sample(const Cohort& cohort, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw DataError("stratified_sample: n must be positive");
  if (n > cohort.size()) {
    throw DataError("stratified_sample: requested " + std::to_string(n) + " notes from a cohort of " +
                    std::to_string(cohort.size()));
  }
  std::array<std::uint64_t, kNumLabels> weights{};
  for (std::size_t l = 0; l < kNumLabels; ++l) weights[l] = cohort.label_counts()[l];
  const auto seats = largest_remainder(n, std::span<const std::uint64_t>(weights));
  LabelCounts counts{};
  for (std::size_t l = 0; l < kNumLabels; ++l) counts[l] = seats[l];
  return draw_per_label(cohort, counts, seed);
}

}  // namespace notescreen::corpus
