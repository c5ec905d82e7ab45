#include <algorithm>
#include <cmath>
#include <cstdio>

#include "notescreen/corpus.hpp"
#include "notescreen/random.hpp"

namespace notescreen::corpus {

using explain::PhenotypeCategory;

namespace {

struct CategoryTemplates {
  PhenotypeCategory category;
  // Each frame has exactly one "{}" slot.
  std::vector<std::string_view> frames;
  std::vector<std::string_view> neutral;
  std::vector<std::string_view> epilepsy_cues;
  std::vector<std::string_view> pnes_cues;
};

const std::vector<CategoryTemplates>& templates() {
  static const std::vector<CategoryTemplates> kTemplates = {
      {PhenotypeCategory::DemographicsBackground,
       {"The patient is a {} year-old woman who lives with family.",
        "Social history is notable for {}.",
        "She grew up locally and {}."},
       {"a stable home life", "part time work in retail", "completed high school",
        "no tobacco use", "two older siblings"},
       {"a family history of epilepsy in a cousin", "a febrile illness in infancy"},
       {"a chaotic household in adolescence", "recent loss of employment"}},
      {PhenotypeCategory::PsychiatricPsychological,
       {"Psychiatric history is notable for {}.", "Mood screening documented {}.",
        "The psychological assessment described {}."},
       {"occasional situational worry", "no formal treatment", "limited prior records",
        "an unremarkable interview"},
       {"a euthymic presentation without prior treatment", "no psychiatric admissions or therapy",
        "appropriate affect and intact insight"},
       {"early trauma and abuse", "posttraumatic stress disorder with nightmares",
        "severe panic attacks", "a prior conversion disorder diagnosis"}},
      {PhenotypeCategory::NeurologicalMedicalComorbidity,
       {"Comorbidities include {}.", "Additional medical comorbidity includes {}."},
       {"seasonal allergies", "mild hyperlipidemia", "a remote appendectomy",
        "vitamin d deficiency"},
       {"a prior ischemic stroke", "cerebral palsy with hemiparesis", "remote bacterial meningitis",
        "developmental delay since birth"},
       {"fibromyalgia", "chronic pain syndrome with opioid use", "irritable bowel syndrome",
        "chronic fatigue with diffuse myalgias"}},
      {PhenotypeCategory::PreIctalSymptoms,
       {"Before the events she reports {}.", "The aura consists of {}."},
       {"feeling unwell", "vague discomfort", "nothing specific", "a brief pause"},
       {"a rising epigastric sensation", "deja vu with an unusual smell",
        "a brief metallic taste"},
       {"racing thoughts and hyperventilation", "a sense of dread with palpitations",
        "feeling overwhelmed and tearful"}},
      {PhenotypeCategory::IctalSemiology,
       {"Witnesses describe the ictal semiology as {}.", "Semiology consists of {}."},
       {"episodes of altered behavior", "spells lasting a few minutes",
        "episodes observed by relatives"},
       {"rhythmic jerking of the right arm with tongue biting",
        "tonic stiffening followed by clonic jerking",
        "behavioral arrest with lip smacking automatisms",
        "head version to the left with eyes open"},
       {"side to side head movements with eyes closed",
        "asynchronous thrashing with pelvic thrusting",
        "waxing and waning shaking with preserved awareness",
        "prolonged shaking lasting over thirty minutes"}},
      {PhenotypeCategory::PostIctalFeatures,
       {"After the events she is {}.", "The postictal course was {}."},
       {"tired for some time", "resting quietly", "seen by relatives"},
       {"confused and drowsy for several hours", "lethargic with a pounding headache",
        "sleepy with sore muscles and slurred speech"},
       {"immediately back to baseline", "tearful but fully oriented",
        "able to recall the event in detail"}},
      {PhenotypeCategory::LongitudinalTemporalPattern,
       {"Over the past year events occur {}.", "Event frequency is {}."},
       {"irregularly", "at variable intervals", "without a clear pattern"},
       {"mostly out of sleep in the early morning", "in brief nocturnal clusters",
        "at a stable rate over years"},
       {"daily and only while awake", "in long bursts during the daytime",
        "with escalating frequency in recent months"}},
      {PhenotypeCategory::ExternalTriggers,
       {"Reported triggers include {}.", "Events are often provoked by {}."},
       {"unclear factors", "nothing identified", "ordinary activities"},
       {"sleep deprivation", "missed doses of levetiracetam", "flashing lights",
        "alcohol withdrawal"},
       {"emotional arguments at home", "stressful conversations", "conflict at work",
        "upsetting memories"}},
      {PhenotypeCategory::InjuryConsequences,
       {"Injuries from the events include {}.", "Reported injury history includes {}."},
       {"minor bruising", "nothing serious", "a small scrape"},
       {"a lateral tongue laceration", "a posterior shoulder dislocation",
        "burns from a stove"},
       {"none despite many dramatic episodes", "only carpet abrasions on the knees",
        "no harm in hundreds of events"}},
      {PhenotypeCategory::ClinicalEvaluationDiagnostic,
       {"Video EEG monitoring showed {}.", "Examination and imaging revealed {}."},
       {"a technically limited study", "results pending review", "a short recording"},
       {"left temporal epileptiform discharges", "interictal sharp waves",
        "hippocampal sclerosis on mri", "elevated serum prolactin"},
       {"a typical event with normal background activity",
        "no electrographic correlate during the captured event",
        "normal ambulatory recording throughout"}},
      {PhenotypeCategory::HealthcareUtilization,
       {"Prior hospital admissions include {}.", "She was referred after {}."},
       {"none of note", "a brief observation stay", "a recent primary care visit"},
       {"a single admission for status epilepticus", "stable neurology follow up on levetiracetam",
        "one ambulance transport years earlier"},
       {"frequent emergency department visits", "multiple icu intubations",
        "repeated admissions without diagnosis"}},
  };
  return kTemplates;
}

const std::vector<std::string_view>& filler_sentences() {
  static const std::vector<std::string_view> kFillers = {
      "The patient was seen today with her sister.",
      "Medications were reviewed with the pharmacist.",
      "Vital signs were stable on arrival.",
      "She asks about driving restrictions.",
      "The plan was discussed with the patient at length.",
      "Follow up was arranged in three months.",
      "Questions were answered to her satisfaction.",
      "Consent for the study was obtained.",
      "Records from an outside provider were requested.",
      "She prefers morning appointments.",
      "The note was dictated and reviewed.",
      "Insurance paperwork was completed.",
  };
  return kFillers;
}

template <typename T>
const T& pick(const std::vector<T>& items, Rng& rng) {
  return items[static_cast<std::size_t>(rng.uniform_index(items.size()))];
}

std::string fill(std::string_view frame, std::string_view slot) {
  const auto pos = frame.find("{}");
  std::string out(frame.substr(0, pos));
  out += slot;
  out += frame.substr(pos + 2);
  return out;
}

}  // namespace

std::vector<PhenotypeCategory> default_signal_categories() {
  std::vector<PhenotypeCategory> out;
  for (std::size_t c = 1; c < explain::kNumPhenotypes; ++c) {
    out.push_back(static_cast<PhenotypeCategory>(c));
  }
  return out;
}

std::vector<std::size_t> SyntheticCohort::planted_sentences(const std::string& note_id) const {
  std::vector<std::size_t> out;
  auto it = truth.find(note_id);
  if (it == truth.end()) return out;
  for (std::size_t i = 0; i < it->second.size(); ++i) {
    if (it->second[i].planted) out.push_back(i);
  }
  return out;
}

SyntheticCohort generate_synthetic(const SyntheticOptions& options) {
  if (!(options.epilepsy_fraction > 0.0 && options.epilepsy_fraction < 1.0)) {
    throw DataError("epilepsy fraction must lie in (0, 1)");
  }
  if (options.signal_strength < 0.0 || options.signal_strength > 1.0) {
    throw DataError("signal strength must lie in [0, 1]");
  }
  if (options.min_filler_sentences > options.max_filler_sentences) {
    throw DataError("filler sentence range is empty");
  }
  Rng rng(derive_seed(options.seed, 0x5e17));

  // Exact class counts, randomly assigned to note positions.
  const std::array<double, 2> mix{options.epilepsy_fraction, 1.0 - options.epilepsy_fraction};
  const auto counts = largest_remainder(options.n, std::span<const double>(mix));
  std::vector<Label> labels(options.n, Label::PNES);
  std::fill_n(labels.begin(), counts[0], Label::Epilepsy);
  rng.shuffle(std::span<Label>(labels));

  std::array<bool, explain::kNumCategories> is_signal{};
  for (auto c : options.signal_categories) is_signal[explain::category_index(c)] = true;

  SyntheticCohort out;
  const auto& tpl = templates();
  for (std::size_t i = 0; i < options.n; ++i) {
    const Label label = labels[i];
    struct Piece {
      std::string text;
      SyntheticSentence truth;
    };
    std::vector<Piece> body;
    Piece lead;
    for (const auto& t : tpl) {
      const auto& frame = pick(t.frames, rng);
      Piece piece;
      piece.truth.category = t.category;
      const bool eligible = is_signal[explain::category_index(t.category)];
      if (eligible && options.signal_strength > 0.0 && rng.bernoulli(options.signal_strength)) {
        const bool flip = options.cue_noise > 0.0 && rng.bernoulli(options.cue_noise);
        const bool use_epilepsy = (label == Label::Epilepsy) != flip;
        piece.text = fill(frame, pick(use_epilepsy ? t.epilepsy_cues : t.pnes_cues, rng));
        piece.truth.planted = true;
      } else if (t.category == PhenotypeCategory::DemographicsBackground &&
                 frame.starts_with("The patient is a {}")) {
        piece.text = fill(frame, std::to_string(18 + rng.uniform_index(60)));
      } else {
        piece.text = fill(frame, pick(t.neutral, rng));
      }
      if (t.category == PhenotypeCategory::DemographicsBackground) {
        lead = std::move(piece);
      } else {
        body.push_back(std::move(piece));
      }
    }
    const std::size_t span = options.max_filler_sentences - options.min_filler_sentences + 1;
    const std::size_t fillers = options.min_filler_sentences + rng.uniform_index(span);
    for (std::size_t f = 0; f < fillers; ++f) {
      body.push_back({std::string(pick(filler_sentences(), rng)), {}});
    }
    rng.shuffle(std::span<Piece>(body));

    std::string text = lead.text;
    std::vector<SyntheticSentence> truth{lead.truth};
    for (auto& piece : body) {
      text += ' ';
      text += piece.text;
      truth.push_back(piece.truth);
    }
    char id[32];
    char patient[32];
    std::snprintf(id, sizeof id, "syn-%06zu", i + 1);
    std::snprintf(patient, sizeof patient, "p-%06zu", i + 1);
    out.cohort.add(make_note(id, patient, std::move(text), label, i % 2 == 0 ? "A" : "B"));
    out.truth.emplace(id, std::move(truth));
  }
  return out;
}

SyntheticOptions hard_synthetic_options(std::size_t n, std::uint64_t seed) {
  SyntheticOptions o;
  o.n = n;
  o.seed = seed;
  o.signal_strength = 0.3;
  o.cue_noise = 0.3;
  o.signal_categories = {PhenotypeCategory::PsychiatricPsychological,
                         PhenotypeCategory::IctalSemiology, PhenotypeCategory::PostIctalFeatures,
                         PhenotypeCategory::ExternalTriggers,
                         PhenotypeCategory::ClinicalEvaluationDiagnostic};
  return o;
}

nlohmann::json truth_to_json(const SyntheticCohort& synthetic) {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [id, sentences] : synthetic.truth) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& s : sentences) {
      rows.push_back({{"category", s.category == PhenotypeCategory::Unassigned
                                       ? std::string("filler")
                                       : std::string(explain::category_name(s.category))},
                      {"planted", s.planted}});
    }
    doc[id] = std::move(rows);
  }
  return doc;
}

}  // namespace notescreen::corpus
