#pragma once

#include <array>
#include <cstdint>

#include <nlohmann/json.hpp>

#include "notescreen/common.hpp"
#include "notescreen/linalg.hpp"
#include "notescreen/textproc.hpp"

namespace notescreen::model {

struct ModelShape {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 128;
};

// Mean-pooled window embeddings -> tanh hidden layer -> (z_epilepsy, z_pnes).
struct ModelParams {
  Matrix embedding;  // V x d, row 0 (unknown token) is zero at init
  Matrix w1;         // h x d
  Vector b1;         // h
  Matrix w2;         // 2 x h
  Vector b2;         // 2
  std::uint64_t seed = 0;

  ModelShape shape() const { return {embedding.rows, embedding.cols, w1.rows}; }
  bool all_finite() const;
  void check_shapes() const;
};

// Uniform [-0.05, 0.05] draws from the seed; unknown-token row zeroed.
ModelParams init_params(const ModelShape& shape, std::uint64_t seed);

using Logits = std::array<double, 2>;  // indexed by label_index

struct Prediction {
  Logits logits{};
  Logits log_probs{};
  double p_epilepsy = 0.5;
  Label predicted = Label::Epilepsy;
};

Logits log_softmax(const Logits& z);

// exp(z_e) / (exp(z_e) + exp(z_p)) via logsumexp. Throws on non-finite input.
double predict_proba(const Logits& z);

// Ties go to Epilepsy.
Prediction make_prediction(const Logits& z);

// Scalar function of the logits that gradients are taken of.
struct Target {
  enum class Kind { logit_diff, log_prob } kind = Kind::log_prob;
  Label cls = Label::Epilepsy;

  static Target logit_diff() { return {Kind::logit_diff, Label::Epilepsy}; }
  static Target log_prob(Label c) { return {Kind::log_prob, c}; }
};

double target_value(const Logits& z, const Target& target);
Logits target_gradient(const Logits& z, const Target& target);

// seq_len x d matrix of token embeddings. Throws DataError on ids >= V.
Matrix embed(const ModelParams& params, const textproc::TokenSeq& seq);

// Mean of window means; zeros when the plan has no windows.
Vector pool(const Matrix& inputs, const textproc::WindowPlan& plan);

// Spreads a gradient on the pooled vector back onto token rows (adds into `grad_inputs`).
void unpool(std::span<const double> grad_pooled, const textproc::WindowPlan& plan,
            Matrix& grad_inputs);

Logits head_forward(const ModelParams& params, std::span<const double> pooled);

Prediction forward(const ModelParams& params, const textproc::TokenSeq& seq,
                   const textproc::WindowPlan& plan);
Prediction forward_inputs(const ModelParams& params, const Matrix& inputs,
                          const textproc::WindowPlan& plan);

struct Gradients {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
  Matrix inputs;  // seq_len x d, d target / d token embedding
  double value = 0.0;  // target at the evaluated point
  Logits logits{};
};

Gradients backward(const ModelParams& params, const textproc::TokenSeq& seq,
                   const textproc::WindowPlan& plan, const Target& target);
Gradients backward_inputs(const ModelParams& params, const Matrix& inputs,
                          const textproc::WindowPlan& plan, const Target& target);

// Anything that maps token embeddings to a logit pair and exposes input gradients.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::size_t embedding_dim() const = 0;
  virtual Matrix embed(const textproc::TokenSeq& seq) const = 0;
  virtual Logits logits(const Matrix& inputs, const textproc::WindowPlan& plan) const = 0;
  // Gradient of the target w.r.t. every input row; `value` receives the target.
  virtual Matrix input_gradient(const Matrix& inputs, const textproc::WindowPlan& plan,
                                const Target& target, double* value) const = 0;
};

class ReferenceScorer final : public Scorer {
 public:
  explicit ReferenceScorer(ModelParams params) : params_(std::move(params)) {}

  std::size_t embedding_dim() const override { return params_.embedding.cols; }
  Matrix embed(const textproc::TokenSeq& seq) const override;
  Logits logits(const Matrix& inputs, const textproc::WindowPlan& plan) const override;
  Matrix input_gradient(const Matrix& inputs, const textproc::WindowPlan& plan,
                        const Target& target, double* value) const override;

  const ModelParams& params() const { return params_; }

 private:
  ModelParams params_;
};

// z_epilepsy = sum(weights .* inputs), z_pnes = 0. Inputs must match the weight shape;
// embed() returns rows of `table` by token id.
class LinearScorer final : public Scorer {
 public:
  LinearScorer(Matrix weights, Matrix table) : weights_(std::move(weights)), table_(std::move(table)) {}

  std::size_t embedding_dim() const override { return weights_.cols; }
  Matrix embed(const textproc::TokenSeq& seq) const override;
  Logits logits(const Matrix& inputs, const textproc::WindowPlan& plan) const override;
  Matrix input_gradient(const Matrix& inputs, const textproc::WindowPlan& plan,
                        const Target& target, double* value) const override;

 private:
  Matrix weights_;
  Matrix table_;
};

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& doc);

nlohmann::json params_to_json(const ModelParams& params);
ModelParams params_from_json(const nlohmann::json& doc);

}  // namespace notescreen::model
