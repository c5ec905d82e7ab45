#include "notescreen/model.hpp"

#include <cmath>

#include "notescreen/random.hpp"

namespace notescreen::model {

using nlohmann::json;

namespace {

constexpr double kInitRange = 0.05;

void fill_uniform(std::vector<double>& v, Rng& rng) {
  for (double& x : v) x = rng.uniform(-kInitRange, kInitRange);
}

bool finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

struct HeadTrace {
  Vector pooled;
  Vector hidden;
  Logits logits{};
};

HeadTrace run_head(const ModelParams& p, Vector pooled) {
  HeadTrace t;
  t.pooled = std::move(pooled);
  t.hidden.assign(p.w1.rows, 0.0);
  matvec(p.w1, t.pooled, t.hidden);
  for (std::size_t i = 0; i < t.hidden.size(); ++i) t.hidden[i] = std::tanh(t.hidden[i] + p.b1[i]);
  std::array<double, 2> z{};
  matvec(p.w2, t.hidden, z);
  t.logits = {z[0] + p.b2[0], z[1] + p.b2[1]};
  return t;
}

}  // namespace

bool ModelParams::all_finite() const {
  return finite(embedding.data) && finite(w1.data) && finite(b1) && finite(w2.data) && finite(b2);
}

void ModelParams::check_shapes() const {
  const std::size_t d = embedding.cols;
  const std::size_t h = w1.rows;
  if (w1.cols != d || b1.size() != h || w2.rows != 2 || w2.cols != h || b2.size() != 2) {
    throw DataError("model parameter shapes are inconsistent");
  }
}

ModelParams init_params(const ModelShape& shape, std::uint64_t seed) {
  if (shape.vocab_size == 0 || shape.embed_dim == 0 || shape.hidden_dim == 0) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  ModelParams p;
  p.seed = seed;
  p.embedding = Matrix(shape.vocab_size, shape.embed_dim);
  p.w1 = Matrix(shape.hidden_dim, shape.embed_dim);
  p.b1.assign(shape.hidden_dim, 0.0);
  p.w2 = Matrix(2, shape.hidden_dim);
  p.b2.assign(2, 0.0);
  Rng rng(derive_seed(seed, 0x30de1));
  fill_uniform(p.embedding.data, rng);
  fill_uniform(p.w1.data, rng);
  fill_uniform(p.b1, rng);
  fill_uniform(p.w2.data, rng);
  fill_uniform(p.b2, rng);
  for (double& x : p.embedding.row(0)) x = 0.0;
  return p;
}

Logits log_softmax(const Logits& z) {
  const double m = std::max(z[0], z[1]);
  const double lse = m + std::log(std::exp(z[0] - m) + std::exp(z[1] - m));
  return {z[0] - lse, z[1] - lse};
}

double predict_proba(const Logits& z) {
  if (!std::isfinite(z[0]) || !std::isfinite(z[1])) throw RuntimeFailure("non-finite logits");
  return std::exp(log_softmax(z)[0]);
}

Prediction make_prediction(const Logits& z) {
  Prediction p;
  p.logits = z;
  p.log_probs = log_softmax(z);
  p.p_epilepsy = predict_proba(z);
  p.predicted = z[0] >= z[1] ? Label::Epilepsy : Label::PNES;
  return p;
}

double target_value(const Logits& z, const Target& target) {
  if (target.kind == Target::Kind::logit_diff) return z[0] - z[1];
  return log_softmax(z)[label_index(target.cls)];
}

Logits target_gradient(const Logits& z, const Target& target) {
  if (target.kind == Target::Kind::logit_diff) return {1.0, -1.0};
  const Logits lp = log_softmax(z);
  Logits g{-std::exp(lp[0]), -std::exp(lp[1])};
  g[label_index(target.cls)] += 1.0;
  return g;
}

Matrix embed(const ModelParams& params, const textproc::TokenSeq& seq) {
  const std::size_t d = params.embedding.cols;
  Matrix out(seq.size(), d);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto id = seq.tokens[i].id;
    if (id >= params.embedding.rows) {
      throw DataError("token id " + std::to_string(id) + " out of range for vocabulary of " +
                      std::to_string(params.embedding.rows));
    }
    const auto src = params.embedding.row(id);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Vector pool(const Matrix& inputs, const textproc::WindowPlan& plan) {
  Vector pooled(inputs.cols, 0.0);
  if (plan.windows.empty()) return pooled;
  Vector window(inputs.cols);
  for (const auto& w : plan.windows) {
    if (w.end > inputs.rows) throw DataError("window extends past the token sequence");
    std::fill(window.begin(), window.end(), 0.0);
    for (std::size_t t = w.begin; t < w.end; ++t) {
      const auto row = inputs.row(t);
      for (std::size_t c = 0; c < inputs.cols; ++c) window[c] += row[c];
    }
    const double inv = 1.0 / static_cast<double>(w.end - w.begin);
    for (std::size_t c = 0; c < inputs.cols; ++c) pooled[c] += window[c] * inv;
  }
  const double inv_windows = 1.0 / static_cast<double>(plan.windows.size());
  for (double& x : pooled) x *= inv_windows;
  return pooled;
}

void unpool(std::span<const double> grad_pooled, const textproc::WindowPlan& plan,
            Matrix& grad_inputs) {
  if (plan.windows.empty()) return;
  const double inv_windows = 1.0 / static_cast<double>(plan.windows.size());
  for (const auto& w : plan.windows) {
    const double scale = inv_windows / static_cast<double>(w.end - w.begin);
    for (std::size_t t = w.begin; t < w.end; ++t) {
      auto row = grad_inputs.row(t);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += scale * grad_pooled[c];
    }
  }
}

Logits head_forward(const ModelParams& params, std::span<const double> pooled) {
  return run_head(params, Vector(pooled.begin(), pooled.end())).logits;
}

Prediction forward_inputs(const ModelParams& params, const Matrix& inputs,
                          const textproc::WindowPlan& plan) {
  return make_prediction(run_head(params, pool(inputs, plan)).logits);
}

Prediction forward(const ModelParams& params, const textproc::TokenSeq& seq,
                   const textproc::WindowPlan& plan) {
  return forward_inputs(params, embed(params, seq), plan);
}

Gradients backward_inputs(const ModelParams& params, const Matrix& inputs,
                          const textproc::WindowPlan& plan, const Target& target) {
  const HeadTrace t = run_head(params, pool(inputs, plan));
  const Logits gz = target_gradient(t.logits, target);
  Gradients g;
  g.logits = t.logits;
  g.value = target_value(t.logits, target);
  g.w2 = Matrix(2, params.w2.cols);
  add_outer(g.w2, gz, t.hidden);
  g.b2 = {gz[0], gz[1]};
  Vector g_pre(params.w1.rows);
  matvec_t(params.w2, gz, g_pre);
  for (std::size_t i = 0; i < g_pre.size(); ++i) g_pre[i] *= 1.0 - t.hidden[i] * t.hidden[i];
  g.w1 = Matrix(params.w1.rows, params.w1.cols);
  add_outer(g.w1, g_pre, t.pooled);
  g.b1 = g_pre;
  Vector g_pooled(params.w1.cols);
  matvec_t(params.w1, g_pre, g_pooled);
  g.inputs = Matrix(inputs.rows, inputs.cols);
  unpool(g_pooled, plan, g.inputs);
  return g;
}

Gradients backward(const ModelParams& params, const textproc::TokenSeq& seq,
                   const textproc::WindowPlan& plan, const Target& target) {
  return backward_inputs(params, embed(params, seq), plan, target);
}

// ---- scorers -------------------------------------------------------------------------

Matrix ReferenceScorer::embed(const textproc::TokenSeq& seq) const {
  return model::embed(params_, seq);
}

Logits ReferenceScorer::logits(const Matrix& inputs, const textproc::WindowPlan& plan) const {
  return run_head(params_, pool(inputs, plan)).logits;
}

Matrix ReferenceScorer::input_gradient(const Matrix& inputs, const textproc::WindowPlan& plan,
                                       const Target& target, double* value) const {
  // Only the pooled-vector path is needed; skip the parameter gradients.
  const HeadTrace t = run_head(params_, pool(inputs, plan));
  if (value != nullptr) *value = target_value(t.logits, target);
  const Logits gz = target_gradient(t.logits, target);
  Vector g_pre(params_.w1.rows);
  matvec_t(params_.w2, gz, g_pre);
  for (std::size_t i = 0; i < g_pre.size(); ++i) g_pre[i] *= 1.0 - t.hidden[i] * t.hidden[i];
  Vector g_pooled(params_.w1.cols);
  matvec_t(params_.w1, g_pre, g_pooled);
  Matrix grad(inputs.rows, inputs.cols);
  unpool(g_pooled, plan, grad);
  return grad;
}

Matrix LinearScorer::embed(const textproc::TokenSeq& seq) const {
  Matrix out(seq.size(), table_.cols);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto id = seq.tokens[i].id;
    if (id >= table_.rows) throw DataError("token id out of range");
    const auto src = table_.row(id);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Logits LinearScorer::logits(const Matrix& inputs, const textproc::WindowPlan&) const {
  if (!inputs.same_shape(weights_)) throw std::invalid_argument("linear scorer: shape mismatch");
  double z = 0.0;
  for (std::size_t i = 0; i < inputs.data.size(); ++i) z += weights_.data[i] * inputs.data[i];
  return {z, 0.0};
}

Matrix LinearScorer::input_gradient(const Matrix& inputs, const textproc::WindowPlan& plan,
                                    const Target& target, double* value) const {
  const Logits z = logits(inputs, plan);
  if (value != nullptr) *value = target_value(z, target);
  const double scale = target_gradient(z, target)[0];
  Matrix grad = weights_;
  if (scale != 1.0) {
    for (double& x : grad.data) x *= scale;
  }
  return grad;
}

// ---- serialization -------------------------------------------------------------------

json matrix_to_json(const Matrix& m) {
  return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

Matrix matrix_from_json(const json& doc) {
  Matrix m;
  m.rows = doc.at("rows").get<std::size_t>();
  m.cols = doc.at("cols").get<std::size_t>();
  m.data = doc.at("data").get<std::vector<double>>();
  if (m.data.size() != m.rows * m.cols) throw DataError("matrix data length does not match shape");
  return m;
}

json params_to_json(const ModelParams& p) {
  return json{{"seed", p.seed},
              {"embedding", matrix_to_json(p.embedding)},
              {"w1", matrix_to_json(p.w1)},
              {"b1", p.b1},
              {"w2", matrix_to_json(p.w2)},
              {"b2", p.b2}};
}

ModelParams params_from_json(const json& doc) {
  try {
    ModelParams p;
    p.seed = doc.at("seed").get<std::uint64_t>();
    p.embedding = matrix_from_json(doc.at("embedding"));
    p.w1 = matrix_from_json(doc.at("w1"));
    p.b1 = doc.at("b1").get<Vector>();
    p.w2 = matrix_from_json(doc.at("w2"));
    p.b2 = doc.at("b2").get<Vector>();
    p.check_shapes();
    return p;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed model parameters: ") + e.what());
  }
}

}  // namespace notescreen::model
