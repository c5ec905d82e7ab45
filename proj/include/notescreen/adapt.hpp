#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "notescreen/corpus.hpp"
#include "notescreen/model.hpp"
#include "notescreen/random.hpp"
#include "notescreen/textproc.hpp"

namespace notescreen::adapt {

enum class TrainMode { full, lora, qlora };
enum class CheckpointRule { final, best_val_auc };
enum class Optimizer { sgd, adam };

std::string_view mode_name(TrainMode m);
TrainMode parse_mode(std::string_view s);
std::string_view rule_name(CheckpointRule r);
CheckpointRule parse_rule(std::string_view s);
std::string_view optimizer_name(Optimizer o);
Optimizer parse_optimizer(std::string_view s);

struct TrainConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 1;
  double peak_lr = 5e-4;
  double warmup_ratio = 0.03;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::qlora;
  CheckpointRule checkpoint_rule = CheckpointRule::best_val_auc;
  Optimizer optimizer = Optimizer::adam;
  std::size_t lora_rank = 16;
  double lora_alpha = 32.0;
  double lora_dropout = 0.05;
  std::size_t quant_block_size = 64;

  void validate() const;
};

nlohmann::json config_to_json(const TrainConfig& c);
TrainConfig config_from_json(const nlohmann::json& doc);

// Linear warmup over the first ceil(warmup_ratio * total) steps, then half-cosine decay
// reaching 0 at `total_steps`. Steps are 1-based for updates; step 0 is the start.
double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& config);

// -log p(label)
double cross_entropy(const model::Logits& log_probs, Label label);

// ---- NF4 -----------------------------------------------------------------------------

// 4-bit NormalFloat levels: standard-normal quantiles rescaled to [-1, 1] with an exact zero.
inline constexpr std::array<double, 16> kNf4Codebook = {
    -1.0,
    -0.6961928009986877,
    -0.5250730514526367,
    -0.39491748809814453,
    -0.28444138169288635,
    -0.18477343022823334,
    -0.09105003625154495,
    0.0,
    0.07958029955625534,
    0.16093020141124725,
    0.24611230194568634,
    0.33791524171829224,
    0.44070982933044434,
    0.5626170039176941,
    0.7229568362236023,
    1.0,
};

inline constexpr std::size_t kNf4ZeroCode = 7;

// Index of the closest codebook level; ties go to the lower index.
std::uint8_t nearest_nf4_code(double normalized);

struct QuantizedMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t block_size = 64;
  std::vector<std::uint8_t> codes;  // one per element, row-major
  std::vector<double> scales;       // absmax per block of consecutive elements

  bool operator==(const QuantizedMatrix&) const = default;
};

QuantizedMatrix quantize_nf4(const Matrix& w, std::size_t block_size = 64);
Matrix dequantize(const QuantizedMatrix& q);

nlohmann::json quantized_to_json(const QuantizedMatrix& q);
QuantizedMatrix quantized_from_json(const nlohmann::json& doc);

// ---- LoRA ----------------------------------------------------------------------------

// Low-rank update for an m x n weight: W + (alpha / rank) * B A.
struct LoraAdapter {
  Matrix a;  // rank x n
  Matrix b;  // m x rank
  std::size_t rank = 16;
  double alpha = 32.0;
  double dropout = 0.05;

  double scaling() const { return alpha / static_cast<double>(rank); }
};

// A uniform in +-1/sqrt(n), B zero.
LoraAdapter init_lora(std::size_t m, std::size_t n, std::size_t rank, double alpha,
                      double dropout, Rng& rng);

// scaling * B A
Matrix lora_delta(const LoraAdapter& adapter);

// Inverted-dropout mask: each entry 0 with probability `rate`, else 1 / (1 - rate).
Vector dropout_mask(std::size_t n, double rate, Rng& rng);

// base_output + scaling * B (A (mask .* input)). An empty mask means evaluation mode.
Vector apply_lora(std::span<const double> base_output, const LoraAdapter& adapter,
                  std::span<const double> input, std::span<const double> mask = {});

// ---- trained model -------------------------------------------------------------------

struct AdaptedModel {
  TrainMode mode = TrainMode::full;
  // In qlora mode w1/w2 hold the dequantized frozen weights.
  model::ModelParams base;
  std::optional<QuantizedMatrix> q_w1;
  std::optional<QuantizedMatrix> q_w2;
  std::optional<LoraAdapter> lora_w1;
  std::optional<LoraAdapter> lora_w2;

  // Dropout-free parameters with adapters merged into W1 and W2.
  model::ModelParams effective() const;
};

// Sets up adapters and, for qlora, quantizes W1/W2 of `base` in place of the dense copies.
AdaptedModel prepare_model(model::ModelParams base, const TrainConfig& config);

struct AdapterGradients {
  Matrix a1, b1, a2, b2;
  double value = 0.0;
};

// Masks are applied to the adapter inputs (pooled vector and hidden layer); pass empty
// spans for evaluation mode.
model::Logits adapted_logits(const AdaptedModel& m, const Matrix& inputs,
                             const textproc::WindowPlan& plan, std::span<const double> mask1 = {},
                             std::span<const double> mask2 = {});
AdapterGradients adapter_backward(const AdaptedModel& m, const Matrix& inputs,
                                  const textproc::WindowPlan& plan, const model::Target& target,
                                  std::span<const double> mask1 = {},
                                  std::span<const double> mask2 = {});

// Plain gradient step on every dense parameter (full mode) for a single note.
void sgd_step(model::ModelParams& params, const textproc::TokenSeq& seq,
              const textproc::WindowPlan& plan, Label label, double lr);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_auc = 0.0;
  double val_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<double> lr_trace;  // one per update
  std::size_t selected_epoch = 0;

  bool operator==(const TrainHistory& o) const;
};

void write_history_csv(const TrainHistory& h, std::ostream& out);

struct TrainResult {
  AdaptedModel model;
  TrainHistory history;
};

TrainResult train(AdaptedModel model, const corpus::Cohort& train_set,
                  const corpus::Cohort& val_set, const textproc::Vocabulary& vocab,
                  const TrainConfig& config);

// p(Epilepsy) for every note, in cohort order.
std::vector<double> predict(const model::ModelParams& params, const corpus::Cohort& cohort,
                            const textproc::Vocabulary& vocab);

// ---- checkpoints ---------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

nlohmann::json checkpoint_to_json(const AdaptedModel& m, const TrainConfig& config);
AdaptedModel checkpoint_from_json(const nlohmann::json& doc, TrainConfig* config = nullptr);

void save_checkpoint(const std::filesystem::path& path, const AdaptedModel& m,
                     const TrainConfig& config);
AdaptedModel load_checkpoint(const std::filesystem::path& path, TrainConfig* config = nullptr);

}  // namespace notescreen::adapt
