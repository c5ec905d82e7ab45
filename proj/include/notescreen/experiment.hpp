#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "notescreen/adapt.hpp"
#include "notescreen/corpus.hpp"
#include "notescreen/eval.hpp"
#include "notescreen/model.hpp"
#include "notescreen/pretrain.hpp"
#include "notescreen/textproc.hpp"

namespace notescreen::experiment {

struct PipelineOptions {
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 128;
  adapt::TrainConfig train;
  std::size_t n_boot = eval::kDefaultBootstrapReplicates;
  std::size_t min_frequency = 1;
  // Label-free co-occurrence embeddings for the frozen backbone.
  bool pretrain = true;
  model::PretrainOptions pretrain_options;
};

struct PipelineResult {
  textproc::Vocabulary vocab;
  adapt::TrainResult trained;
  std::vector<double> test_scores;
  eval::MetricReport test_report;
};

// Vocabulary from the training notes, seeded init, optional embedding pretraining on the
// training text, adaptation, then test-set evaluation.
PipelineResult run_pipeline(const corpus::Cohort& train, const corpus::Cohort& val,
                            const corpus::Cohort& test, const PipelineOptions& options);

enum class SweepKind { imbalance, ratio, scale };

std::string_view sweep_name(SweepKind k);
SweepKind parse_sweep(std::string_view s);

// Imbalance values are epilepsy:PNES ratios, ratio values fractions of the training set,
// scale values embedding widths (hidden width is twice that).
std::vector<double> default_sweep_values(SweepKind k);

struct SweepPoint {
  double value = 0.0;
  bool ok = false;
  std::string error;
  std::size_t n_train = 0;
  std::size_t n_train_epilepsy = 0;
  eval::MetricReport report;
};

struct SweepOptions {
  SweepKind kind = SweepKind::imbalance;
  std::vector<double> values;
  PipelineOptions pipeline;
  std::uint64_t seed = 0;
  // Points run concurrently up to this many at a time; results keep sweep order.
  std::size_t jobs = 1;
};

// Validation and test partitions stay fixed; only the training side varies.
std::vector<SweepPoint> run_sweep(const corpus::Cohort& train, const corpus::Cohort& val,
                                  const corpus::Cohort& test, const SweepOptions& options);

// Long format: one row per sweep point.
void write_sweep_csv(SweepKind kind, const std::vector<SweepPoint>& points, std::ostream& out);

}  // namespace notescreen::experiment
