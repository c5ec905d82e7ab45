#pragma once

#include <cstdint>

#include "notescreen/corpus.hpp"
#include "notescreen/linalg.hpp"
#include "notescreen/model.hpp"
#include "notescreen/textproc.hpp"

namespace notescreen::model {

struct PretrainOptions {
  // Only the most frequent ids (by vocabulary order) get co-occurrence vectors; the rest keep
  // their random rows.
  std::size_t max_words = 2000;
  // Largest absolute entry of the pretrained rows after rescaling.
  double scale = 0.05;
};

// Label-free embedding pretraining: positive PMI of note-level word co-occurrence, factored
// by its leading eigenpairs. Row i of the result is word id i (row 0 stays zero).
Matrix cooccurrence_embeddings(const corpus::Cohort& cohort, const textproc::Vocabulary& vocab,
                               std::size_t dim, const PretrainOptions& options = {});

// Replaces the embedding rows covered by cooccurrence_embeddings.
void pretrain_embeddings(ModelParams& params, const corpus::Cohort& cohort,
                         const textproc::Vocabulary& vocab, const PretrainOptions& options = {});

}  // namespace notescreen::model
