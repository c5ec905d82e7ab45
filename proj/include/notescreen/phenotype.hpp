#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace notescreen::explain {

// Clinician-curated phenotype domains, in tagging precedence order.
enum class PhenotypeCategory : std::uint8_t {
  DemographicsBackground = 0,
  PsychiatricPsychological,
  NeurologicalMedicalComorbidity,
  PreIctalSymptoms,
  IctalSemiology,
  PostIctalFeatures,
  LongitudinalTemporalPattern,
  ExternalTriggers,
  InjuryConsequences,
  ClinicalEvaluationDiagnostic,
  HealthcareUtilization,
  Unassigned,
};

inline constexpr std::size_t kNumPhenotypes = 11;
inline constexpr std::size_t kNumCategories = 12;  // phenotypes + Unassigned

inline constexpr std::array<PhenotypeCategory, kNumCategories> kAllCategories = {
    PhenotypeCategory::DemographicsBackground,
    PhenotypeCategory::PsychiatricPsychological,
    PhenotypeCategory::NeurologicalMedicalComorbidity,
    PhenotypeCategory::PreIctalSymptoms,
    PhenotypeCategory::IctalSemiology,
    PhenotypeCategory::PostIctalFeatures,
    PhenotypeCategory::LongitudinalTemporalPattern,
    PhenotypeCategory::ExternalTriggers,
    PhenotypeCategory::InjuryConsequences,
    PhenotypeCategory::ClinicalEvaluationDiagnostic,
    PhenotypeCategory::HealthcareUtilization,
    PhenotypeCategory::Unassigned,
};

inline std::size_t category_index(PhenotypeCategory c) { return static_cast<std::size_t>(c); }

std::string_view category_name(PhenotypeCategory c);

// Canonical names plus the alternate labels used in published case tables
// (e.g. "Seizure Semiology", "Diagnostic Testing & Evaluation Phenotype").
std::optional<PhenotypeCategory> parse_category(std::string_view name);

}  // namespace notescreen::explain
