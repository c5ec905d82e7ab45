#include "notescreen/phenotype.hpp"

#include <algorithm>
#include <string>
#include <utility>

namespace notescreen::explain {

namespace {

constexpr std::array<std::string_view, kNumCategories> kNames = {
    "Demographics & Background",
    "Psychiatric & Psychological Traits",
    "Neurological & Medical Comorbidity",
    "Pre-ictal Symptoms",
    "Ictal Semiology",
    "Post-ictal Features",
    "Longitudinal Temporal Pattern",
    "External Triggers",
    "Injury Consequences",
    "Clinical Evaluation & Diagnostic Findings",
    "Healthcare Utilization Pattern",
    "Unassigned",
};

// Labels used in published case tables and figure legends.
const std::pair<std::string_view, PhenotypeCategory> kAliases[] = {
    {"Psychiatric & Psychological Phenotype", PhenotypeCategory::PsychiatricPsychological},
    {"Medical Comorbidity Profile", PhenotypeCategory::NeurologicalMedicalComorbidity},
    {"Pre-Event Features", PhenotypeCategory::PreIctalSymptoms},
    {"Seizure Semiology", PhenotypeCategory::IctalSemiology},
    {"Post-Event Features", PhenotypeCategory::PostIctalFeatures},
    {"Event Temporal Pattern", PhenotypeCategory::LongitudinalTemporalPattern},
    {"Diagnostic Testing & Evaluation Phenotype", PhenotypeCategory::ClinicalEvaluationDiagnostic},
    {"Diagnostic Testing Profile", PhenotypeCategory::ClinicalEvaluationDiagnostic},
};

bool iequals(std::string_view a, std::string_view b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end(), [](char x, char y) {
    auto low = [](char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; };
    return low(x) == low(y);
  });
}

}  // namespace

std::string_view category_name(PhenotypeCategory c) { return kNames[category_index(c)]; }

std::optional<PhenotypeCategory> parse_category(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (iequals(name, kNames[i])) return static_cast<PhenotypeCategory>(i);
  }
  for (const auto& [alias, c] : kAliases) {
    if (iequals(name, alias)) return c;
  }
  return std::nullopt;
}

}  // namespace notescreen::explain
