#include "notescreen/adapt.hpp"

#include "notescreen/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>

namespace notescreen::adapt {

using nlohmann::json;

// ---- enums and config ----------------------------------------------------------------

std::string_view mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::full: return "full";
    case TrainMode::lora: return "lora";
    case TrainMode::qlora: return "qlora";
  }
  return "?";
}

TrainMode parse_mode(std::string_view s) {
  if (s == "full") return TrainMode::full;
  if (s == "lora") return TrainMode::lora;
  if (s == "qlora") return TrainMode::qlora;
  throw DataError("unknown training mode \"" + std::string(s) + "\"");
}

std::string_view rule_name(CheckpointRule r) {
  return r == CheckpointRule::final ? "final" : "best_val_auc";
}

CheckpointRule parse_rule(std::string_view s) {
  if (s == "final") return CheckpointRule::final;
  if (s == "best_val_auc") return CheckpointRule::best_val_auc;
  throw DataError("unknown checkpoint rule \"" + std::string(s) + "\"");
}

std::string_view optimizer_name(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

Optimizer parse_optimizer(std::string_view s) {
  if (s == "sgd") return Optimizer::sgd;
  if (s == "adam") return Optimizer::adam;
  throw DataError("unknown optimizer \"" + std::string(s) + "\"");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw DataError("epochs must be positive");
  if (batch_size == 0) throw DataError("batch size must be positive");
  if (!(peak_lr > 0.0)) throw DataError("peak learning rate must be positive");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw DataError("warmup ratio must lie in [0, 1)");
  if (lora_rank == 0) throw DataError("LoRA rank must be positive");
  if (!(lora_dropout >= 0.0 && lora_dropout < 1.0)) throw DataError("LoRA dropout must lie in [0, 1)");
  if (quant_block_size == 0) throw DataError("quantization block size must be positive");
}

json config_to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"peak_lr", c.peak_lr},
              {"schedule", "cosine"},
              {"warmup_ratio", c.warmup_ratio},
              {"seed", c.seed},
              {"mode", mode_name(c.mode)},
              {"checkpoint_rule", rule_name(c.checkpoint_rule)},
              {"optimizer", optimizer_name(c.optimizer)},
              {"lora_rank", c.lora_rank},
              {"lora_alpha", c.lora_alpha},
              {"lora_dropout", c.lora_dropout},
              {"quant_block_size", c.quant_block_size}};
}

TrainConfig config_from_json(const json& doc) {
  TrainConfig c;
  c.epochs = doc.value("epochs", c.epochs);
  c.batch_size = doc.value("batch_size", c.batch_size);
  c.peak_lr = doc.value("peak_lr", c.peak_lr);
  c.warmup_ratio = doc.value("warmup_ratio", c.warmup_ratio);
  c.seed = doc.value("seed", c.seed);
  c.mode = parse_mode(doc.value("mode", std::string(mode_name(c.mode))));
  c.checkpoint_rule = parse_rule(doc.value("checkpoint_rule", std::string(rule_name(c.checkpoint_rule))));
  c.optimizer = parse_optimizer(doc.value("optimizer", std::string(optimizer_name(c.optimizer))));
  c.lora_rank = doc.value("lora_rank", c.lora_rank);
  c.lora_alpha = doc.value("lora_alpha", c.lora_alpha);
  c.lora_dropout = doc.value("lora_dropout", c.lora_dropout);
  c.quant_block_size = doc.value("quant_block_size", c.quant_block_size);
  return c;
}

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& config) {
  if (step > total_steps) {
    throw std::invalid_argument("lr_at: step " + std::to_string(step) + " exceeds total " +
                                std::to_string(total_steps));
  }
  const auto warmup = static_cast<std::size_t>(
      std::ceil(config.warmup_ratio * static_cast<double>(total_steps) - 1e-9));
  if (warmup > 0 && step <= warmup) {
    return config.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (total_steps == warmup) return config.peak_lr;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return 0.5 * config.peak_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

double cross_entropy(const model::Logits& log_probs, Label label) {
  return -log_probs[label_index(label)];
}

// ---- NF4 -----------------------------------------------------------------------------

std::uint8_t nearest_nf4_code(double x) {
  std::uint8_t best = 0;
  double best_dist = std::abs(x - kNf4Codebook[0]);
  for (std::uint8_t i = 1; i < kNf4Codebook.size(); ++i) {
    const double d = std::abs(x - kNf4Codebook[i]);
    if (d < best_dist) {
      best = i;
      best_dist = d;
    }
  }
  return best;
}

QuantizedMatrix quantize_nf4(const Matrix& w, std::size_t block_size) {
  if (block_size == 0) throw std::invalid_argument("quantize_nf4: block size must be positive");
  QuantizedMatrix q;
  q.rows = w.rows;
  q.cols = w.cols;
  q.block_size = block_size;
  q.codes.resize(w.data.size());
  const std::size_t n = w.data.size();
  for (std::size_t start = 0; start < n; start += block_size) {
    const std::size_t end = std::min(start + block_size, n);
    double absmax = 0.0;
    for (std::size_t i = start; i < end; ++i) absmax = std::max(absmax, std::abs(w.data[i]));
    q.scales.push_back(absmax);
    for (std::size_t i = start; i < end; ++i) {
      q.codes[i] = absmax == 0.0 ? static_cast<std::uint8_t>(kNf4ZeroCode)
                                 : nearest_nf4_code(w.data[i] / absmax);
    }
  }
  return q;
}

Matrix dequantize(const QuantizedMatrix& q) {
  Matrix w(q.rows, q.cols);
  for (std::size_t i = 0; i < q.codes.size(); ++i) {
    w.data[i] = q.scales[i / q.block_size] * kNf4Codebook[q.codes[i]];
  }
  return w;
}

json quantized_to_json(const QuantizedMatrix& q) {
  return json{{"rows", q.rows}, {"cols", q.cols}, {"block_size", q.block_size},
              {"codes", q.codes}, {"scales", q.scales}};
}

QuantizedMatrix quantized_from_json(const json& doc) {
  QuantizedMatrix q;
  q.rows = doc.at("rows").get<std::size_t>();
  q.cols = doc.at("cols").get<std::size_t>();
  q.block_size = doc.at("block_size").get<std::size_t>();
  q.codes = doc.at("codes").get<std::vector<std::uint8_t>>();
  q.scales = doc.at("scales").get<std::vector<double>>();
  const std::size_t n = q.rows * q.cols;
  if (q.block_size == 0 || q.codes.size() != n ||
      q.scales.size() != (n + q.block_size - 1) / q.block_size) {
    throw DataError("quantized matrix shape is inconsistent");
  }
  for (auto c : q.codes) {
    if (c >= kNf4Codebook.size()) throw DataError("quantized code out of range");
  }
  return q;
}

// ---- LoRA ----------------------------------------------------------------------------

LoraAdapter init_lora(std::size_t m, std::size_t n, std::size_t rank, double alpha,
                      double dropout, Rng& rng) {
  LoraAdapter ad;
  ad.rank = rank;
  ad.alpha = alpha;
  ad.dropout = dropout;
  ad.a = Matrix(rank, n);
  ad.b = Matrix(m, rank);
  const double bound = 1.0 / std::sqrt(static_cast<double>(n));
  for (double& x : ad.a.data) x = rng.uniform(-bound, bound);
  return ad;
}

Matrix lora_delta(const LoraAdapter& adapter) {
  Matrix d = matmul(adapter.b, adapter.a);
  const double s = adapter.scaling();
  for (double& x : d.data) x *= s;
  return d;
}

Vector dropout_mask(std::size_t n, double rate, Rng& rng) {
  Vector mask(n, 1.0);
  if (rate <= 0.0) return mask;
  const double keep = 1.0 / (1.0 - rate);
  for (double& x : mask) x = rng.bernoulli(rate) ? 0.0 : keep;
  return mask;
}

Vector apply_lora(std::span<const double> base_output, const LoraAdapter& adapter,
                  std::span<const double> input, std::span<const double> mask) {
  if (input.size() != adapter.a.cols || base_output.size() != adapter.b.rows) {
    throw std::invalid_argument("apply_lora: shape mismatch");
  }
  if (!mask.empty() && mask.size() != input.size()) {
    throw std::invalid_argument("apply_lora: dropout mask shape mismatch");
  }
  Vector x(input.begin(), input.end());
  if (!mask.empty()) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] *= mask[i];
  }
  Vector ax(adapter.rank);
  matvec(adapter.a, x, ax);
  Vector bax(adapter.b.rows);
  matvec(adapter.b, ax, bax);
  Vector out(base_output.begin(), base_output.end());
  const double s = adapter.scaling();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s * bax[i];
  return out;
}

// ---- adapted model -------------------------------------------------------------------

model::ModelParams AdaptedModel::effective() const {
  model::ModelParams p = base;
  auto merge = [](Matrix& w, const LoraAdapter& ad) {
    const Matrix d = lora_delta(ad);
    for (std::size_t i = 0; i < w.data.size(); ++i) w.data[i] += d.data[i];
  };
  if (lora_w1) merge(p.w1, *lora_w1);
  if (lora_w2) merge(p.w2, *lora_w2);
  return p;
}

AdaptedModel prepare_model(model::ModelParams base, const TrainConfig& config) {
  config.validate();
  base.check_shapes();
  AdaptedModel m;
  m.mode = config.mode;
  if (config.mode == TrainMode::qlora) {
    m.q_w1 = quantize_nf4(base.w1, config.quant_block_size);
    m.q_w2 = quantize_nf4(base.w2, config.quant_block_size);
    base.w1 = dequantize(*m.q_w1);
    base.w2 = dequantize(*m.q_w2);
  }
  if (config.mode != TrainMode::full) {
    Rng rng(derive_seed(config.seed, 0x10a));
    m.lora_w1 = init_lora(base.w1.rows, base.w1.cols, config.lora_rank, config.lora_alpha,
                          config.lora_dropout, rng);
    m.lora_w2 = init_lora(base.w2.rows, base.w2.cols, config.lora_rank, config.lora_alpha,
                          config.lora_dropout, rng);
  }
  m.base = std::move(base);
  return m;
}

namespace {

struct AdaptedTrace {
  Vector pooled;
  Vector hidden;
  model::Logits logits{};
};

// Dense layer with an optional adapter on top.
Vector adapted_layer(const Matrix& w, std::span<const double> bias,
                     const std::optional<LoraAdapter>& adapter, std::span<const double> x,
                     std::span<const double> mask) {
  Vector y(w.rows);
  matvec(w, x, y);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bias[i];
  if (adapter) return apply_lora(y, *adapter, x, mask);
  return y;
}

AdaptedTrace run_adapted(const AdaptedModel& m, Vector pooled, std::span<const double> mask1,
                         std::span<const double> mask2) {
  AdaptedTrace t;
  t.pooled = std::move(pooled);
  t.hidden = adapted_layer(m.base.w1, m.base.b1, m.lora_w1, t.pooled, mask1);
  for (double& x : t.hidden) x = std::tanh(x);
  const Vector z = adapted_layer(m.base.w2, m.base.b2, m.lora_w2, t.hidden, mask2);
  t.logits = {z[0], z[1]};
  return t;
}

// Gradients of one adapted layer given dL/dy; returns dL/dx.
Vector adapted_layer_backward(const Matrix& w, const LoraAdapter& ad, std::span<const double> x,
                              std::span<const double> mask, std::span<const double> gy,
                              Matrix& grad_a, Matrix& grad_b) {
  const double s = ad.scaling();
  Vector xm(x.begin(), x.end());
  if (!mask.empty()) {
    for (std::size_t i = 0; i < xm.size(); ++i) xm[i] *= mask[i];
  }
  Vector ax(ad.rank);
  matvec(ad.a, xm, ax);
  add_outer(grad_b, gy, ax, s);
  Vector btg(ad.rank);
  matvec_t(ad.b, gy, btg);
  add_outer(grad_a, btg, xm, s);
  Vector gx(w.cols);
  matvec_t(w, gy, gx);
  Vector via(ad.a.cols);
  matvec_t(ad.a, btg, via);
  for (std::size_t i = 0; i < gx.size(); ++i) {
    gx[i] += s * via[i] * (mask.empty() ? 1.0 : mask[i]);
  }
  return gx;
}

AdapterGradients adapter_backward_pooled(const AdaptedModel& m, Vector pooled,
                                         const model::Target& target,
                                         std::span<const double> mask1,
                                         std::span<const double> mask2) {
  if (!m.lora_w1 || !m.lora_w2) throw std::logic_error("adapter_backward: model has no adapters");
  const AdaptedTrace t = run_adapted(m, std::move(pooled), mask1, mask2);
  AdapterGradients g;
  g.value = model::target_value(t.logits, target);
  g.a1 = Matrix(m.lora_w1->a.rows, m.lora_w1->a.cols);
  g.b1 = Matrix(m.lora_w1->b.rows, m.lora_w1->b.cols);
  g.a2 = Matrix(m.lora_w2->a.rows, m.lora_w2->a.cols);
  g.b2 = Matrix(m.lora_w2->b.rows, m.lora_w2->b.cols);
  const model::Logits gz = model::target_gradient(t.logits, target);
  Vector gh = adapted_layer_backward(m.base.w2, *m.lora_w2, t.hidden, mask2, gz, g.a2, g.b2);
  for (std::size_t i = 0; i < gh.size(); ++i) gh[i] *= 1.0 - t.hidden[i] * t.hidden[i];
  adapted_layer_backward(m.base.w1, *m.lora_w1, t.pooled, mask1, gh, g.a1, g.b1);
  return g;
}

}  // namespace

model::Logits adapted_logits(const AdaptedModel& m, const Matrix& inputs,
                             const textproc::WindowPlan& plan, std::span<const double> mask1,
                             std::span<const double> mask2) {
  return run_adapted(m, model::pool(inputs, plan), mask1, mask2).logits;
}

AdapterGradients adapter_backward(const AdaptedModel& m, const Matrix& inputs,
                                  const textproc::WindowPlan& plan, const model::Target& target,
                                  std::span<const double> mask1, std::span<const double> mask2) {
  return adapter_backward_pooled(m, model::pool(inputs, plan), target, mask1, mask2);
}

void sgd_step(model::ModelParams& params, const textproc::TokenSeq& seq,
              const textproc::WindowPlan& plan, Label label, double lr) {
  const auto g = model::backward(params, seq, plan, model::Target::log_prob(label));
  // The gradient is of log p(label); descending the loss means ascending it.
  auto ascend = [lr](std::vector<double>& p, const std::vector<double>& grad) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += lr * grad[i];
  };
  ascend(params.w1.data, g.w1.data);
  ascend(params.b1, g.b1);
  ascend(params.w2.data, g.w2.data);
  ascend(params.b2, g.b2);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    auto row = params.embedding.row(seq.tokens[t].id);
    const auto grow = g.inputs.row(t);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += lr * grow[c];
  }
}

// ---- training ------------------------------------------------------------------------

bool TrainHistory::operator==(const TrainHistory& o) const {
  if (epochs.size() != o.epochs.size() || lr_trace != o.lr_trace ||
      selected_epoch != o.selected_epoch) {
    return false;
  }
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& a = epochs[i];
    const auto& b = o.epochs[i];
    auto same = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
    if (a.epoch != b.epoch || !same(a.train_loss, b.train_loss) || !same(a.val_auc, b.val_auc) ||
        !same(a.val_accuracy, b.val_accuracy)) {
      return false;
    }
  }
  return true;
}

void write_history_csv(const TrainHistory& h, std::ostream& out) {
  out << "epoch,loss,val_auc,val_acc\n";
  out.precision(17);
  for (const auto& e : h.epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.val_auc << ',' << e.val_accuracy << '\n';
  }
}

namespace {

class Updater {
 public:
  Updater(Optimizer kind) : kind_(kind) {}

  void begin_step() { ++t_; }

  // Gradient of the loss; parameters move against it.
  void apply(std::span<double> param, std::span<const double> grad, Vector& m, Vector& v,
             double lr) {
    if (kind_ == Optimizer::sgd) {
      for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
      return;
    }
    if (m.size() != param.size()) {
      m.assign(param.size(), 0.0);
      v.assign(param.size(), 0.0);
    }
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < param.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * grad[i];
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      param[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  Optimizer kind_;
  std::size_t t_ = 0;
};

struct Slot {
  Vector m, v;
};

struct PreparedSet {
  std::vector<textproc::TokenSeq> seqs;
  std::vector<textproc::WindowPlan> plans;
  std::vector<Label> labels;
  std::vector<std::string> ids;
};

PreparedSet prepare_set(const corpus::Cohort& cohort, const textproc::Vocabulary& vocab,
                        std::size_t vocab_rows) {
  PreparedSet s;
  for (const auto& note : cohort.notes()) {
    auto seq = textproc::tokenize(note.text, vocab);
    for (const auto& t : seq.tokens) {
      if (t.id >= vocab_rows) {
        throw DataError("note \"" + note.id + "\": token id exceeds the model vocabulary");
      }
    }
    s.plans.push_back(textproc::make_windows(seq.size()));
    s.seqs.push_back(std::move(seq));
    s.labels.push_back(note.label);
    s.ids.push_back(note.id);
  }
  return s;
}

void negate(std::vector<double>& v) {
  for (double& x : v) x = -x;
}

void add_into(std::vector<double>& acc, const std::vector<double>& g) {
  if (acc.size() != g.size()) acc.assign(g.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
}

}  // namespace

std::vector<double> predict(const model::ModelParams& params, const corpus::Cohort& cohort,
                            const textproc::Vocabulary& vocab) {
  std::vector<double> out;
  out.reserve(cohort.size());
  for (const auto& note : cohort.notes()) {
    const auto seq = textproc::tokenize(note.text, vocab);
    out.push_back(model::forward(params, seq, textproc::make_windows(seq.size())).p_epilepsy);
  }
  return out;
}

TrainResult train(AdaptedModel m, const corpus::Cohort& train_set, const corpus::Cohort& val_set,
                  const textproc::Vocabulary& vocab, const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  if (val_set.empty()) throw DataError("validation set is empty");
  const bool full = m.mode == TrainMode::full;
  if (!full && (!m.lora_w1 || !m.lora_w2)) throw DataError("adapter modes need adapters");
  if (m.base.embedding.rows != vocab.size()) {
    throw DataError("vocabulary has " + std::to_string(vocab.size()) + " ids but the model has " +
                    std::to_string(m.base.embedding.rows) + " embedding rows");
  }
  const PreparedSet data = prepare_set(train_set, vocab, m.base.embedding.rows);
  const std::size_t n = data.seqs.size();
  const std::size_t batches = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = config.epochs * batches;

  // Frozen embeddings: pooled vectors never change in adapter modes.
  std::vector<Vector> pooled;
  if (!full) {
    for (std::size_t i = 0; i < n; ++i) {
      pooled.push_back(model::pool(model::embed(m.base, data.seqs[i]), data.plans[i]));
    }
  }

  Updater updater(config.optimizer);
  std::array<Slot, 5> dense_slots;  // embedding, w1, b1, w2, b2
  std::array<Slot, 4> adapter_slots;  // a1, b1, a2, b2

  TrainResult result;
  std::optional<AdaptedModel> best;
  double best_auc = -1.0;
  std::size_t step = 0;
  const std::vector<Label> val_labels = [&] {
    std::vector<Label> l;
    for (const auto& note : val_set.notes()) l.push_back(note.label);
    return l;
  }();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng order_rng(derive_seed(config.seed, 1000 + epoch));
    order_rng.shuffle(std::span<std::size_t>(order));
    Rng dropout_rng(derive_seed(config.seed, 2000 + epoch));
    double loss_sum = 0.0;

    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(start + config.batch_size, n);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      ++step;
      const double lr = lr_at(step, total_steps, config);
      result.history.lr_trace.push_back(lr);
      updater.begin_step();

      if (full) {
        model::Gradients acc;
        Matrix emb_grad(m.base.embedding.rows, m.base.embedding.cols);
        for (std::size_t b = start; b < end; ++b) {
          const std::size_t i = order[b];
          auto g = model::backward(m.base, data.seqs[i], data.plans[i],
                                   model::Target::log_prob(data.labels[i]));
          const double loss = -g.value;
          if (!std::isfinite(loss)) {
            throw RuntimeFailure("non-finite loss at step " + std::to_string(step) + " (note " +
                                 data.ids[i] + ")");
          }
          loss_sum += loss;
          for (std::size_t t = 0; t < data.seqs[i].size(); ++t) {
            auto row = emb_grad.row(data.seqs[i].tokens[t].id);
            const auto gr = g.inputs.row(t);
            for (std::size_t c = 0; c < row.size(); ++c) row[c] += gr[c];
          }
          add_into(acc.w1.data, g.w1.data);
          add_into(acc.b1, g.b1);
          add_into(acc.w2.data, g.w2.data);
          add_into(acc.b2, g.b2);
        }
        // Loss gradient = -(gradient of log p), averaged over the batch.
        for (auto* v : {&emb_grad.data, &acc.w1.data, &acc.b1, &acc.w2.data, &acc.b2}) {
          negate(*v);
          for (double& x : *v) x *= inv_batch;
        }
        updater.apply(m.base.embedding.data, emb_grad.data, dense_slots[0].m, dense_slots[0].v, lr);
        updater.apply(m.base.w1.data, acc.w1.data, dense_slots[1].m, dense_slots[1].v, lr);
        updater.apply(m.base.b1, acc.b1, dense_slots[2].m, dense_slots[2].v, lr);
        updater.apply(m.base.w2.data, acc.w2.data, dense_slots[3].m, dense_slots[3].v, lr);
        updater.apply(m.base.b2, acc.b2, dense_slots[4].m, dense_slots[4].v, lr);
        // The unknown-token row stays at zero.
        for (double& x : m.base.embedding.row(0)) x = 0.0;
      } else {
        std::array<Vector, 4> acc;
        for (std::size_t b = start; b < end; ++b) {
          const std::size_t i = order[b];
          const Vector mask1 = dropout_mask(m.base.w1.cols, config.lora_dropout, dropout_rng);
          const Vector mask2 = dropout_mask(m.base.w2.cols, config.lora_dropout, dropout_rng);
          auto g = adapter_backward_pooled(m, pooled[i], model::Target::log_prob(data.labels[i]),
                                           mask1, mask2);
          const double loss = -g.value;
          if (!std::isfinite(loss)) {
            throw RuntimeFailure("non-finite loss at step " + std::to_string(step) + " (note " +
                                 data.ids[i] + ")");
          }
          loss_sum += loss;
          add_into(acc[0], g.a1.data);
          add_into(acc[1], g.b1.data);
          add_into(acc[2], g.a2.data);
          add_into(acc[3], g.b2.data);
        }
        for (auto& v : acc) {
          negate(v);
          for (double& x : v) x *= inv_batch;
        }
        updater.apply(m.lora_w1->a.data, acc[0], adapter_slots[0].m, adapter_slots[0].v, lr);
        updater.apply(m.lora_w1->b.data, acc[1], adapter_slots[1].m, adapter_slots[1].v, lr);
        updater.apply(m.lora_w2->a.data, acc[2], adapter_slots[2].m, adapter_slots[2].v, lr);
        updater.apply(m.lora_w2->b.data, acc[3], adapter_slots[3].m, adapter_slots[3].v, lr);
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    const auto scores = predict(m.effective(), val_set, vocab);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      correct += (scores[i] >= 0.5) == (val_labels[i] == Label::Epilepsy) ? 1 : 0;
    }
    rec.val_accuracy = static_cast<double>(correct) / static_cast<double>(scores.size());
    const bool both = val_set.count(Label::Epilepsy) > 0 && val_set.count(Label::PNES) > 0;
    rec.val_auc = both ? eval::auc(scores, val_labels) : std::nan("");
    result.history.epochs.push_back(rec);
    if (config.checkpoint_rule == CheckpointRule::best_val_auc && both && rec.val_auc > best_auc) {
      best_auc = rec.val_auc;
      best = m;
      result.history.selected_epoch = epoch;
    }
  }
  if (best) {
    result.model = std::move(*best);
  } else {
    result.model = std::move(m);
    result.history.selected_epoch = config.epochs;
  }
  return result;
}

// ---- checkpoints ---------------------------------------------------------------------

namespace {

json lora_to_json(const LoraAdapter& a) {
  return json{{"rank", a.rank}, {"alpha", a.alpha}, {"dropout", a.dropout},
              {"A", model::matrix_to_json(a.a)}, {"B", model::matrix_to_json(a.b)}};
}

LoraAdapter lora_from_json(const json& doc) {
  LoraAdapter a;
  a.rank = doc.at("rank").get<std::size_t>();
  a.alpha = doc.at("alpha").get<double>();
  a.dropout = doc.at("dropout").get<double>();
  a.a = model::matrix_from_json(doc.at("A"));
  a.b = model::matrix_from_json(doc.at("B"));
  if (a.a.rows != a.rank || a.b.cols != a.rank) throw DataError("LoRA factor shapes disagree with rank");
  return a;
}

}  // namespace

json checkpoint_to_json(const AdaptedModel& m, const TrainConfig& config) {
  json base = model::params_to_json(m.base);
  if (m.q_w1) {
    base.erase("w1");
    base["w1_nf4"] = quantized_to_json(*m.q_w1);
  }
  if (m.q_w2) {
    base.erase("w2");
    base["w2_nf4"] = quantized_to_json(*m.q_w2);
  }
  const auto shape = m.base.shape();
  json doc{{"format", "notescreen-checkpoint"},
           {"version", kCheckpointVersion},
           {"tool_version", kVersion},
           {"mode", mode_name(m.mode)},
           {"seed", m.base.seed},
           {"shape",
            {{"vocab_size", shape.vocab_size},
             {"embed_dim", shape.embed_dim},
             {"hidden_dim", shape.hidden_dim}}},
           {"config", config_to_json(config)},
           {"base", std::move(base)}};
  if (m.lora_w1) doc["lora"]["w1"] = lora_to_json(*m.lora_w1);
  if (m.lora_w2) doc["lora"]["w2"] = lora_to_json(*m.lora_w2);
  return doc;
}

AdaptedModel checkpoint_from_json(const json& doc, TrainConfig* config) {
  try {
    if (!doc.contains("version")) throw DataError("checkpoint lacks a version field");
    if (doc.at("version").get<int>() != kCheckpointVersion) {
      throw DataError("unsupported checkpoint version " + doc.at("version").dump());
    }
    AdaptedModel m;
    m.mode = parse_mode(doc.at("mode").get<std::string>());
    json base = doc.at("base");
    if (base.contains("w1_nf4")) {
      m.q_w1 = quantized_from_json(base.at("w1_nf4"));
      base["w1"] = model::matrix_to_json(dequantize(*m.q_w1));
    }
    if (base.contains("w2_nf4")) {
      m.q_w2 = quantized_from_json(base.at("w2_nf4"));
      base["w2"] = model::matrix_to_json(dequantize(*m.q_w2));
    }
    m.base = model::params_from_json(base);
    if (doc.contains("lora")) {
      const auto& lora = doc.at("lora");
      if (lora.contains("w1")) m.lora_w1 = lora_from_json(lora.at("w1"));
      if (lora.contains("w2")) m.lora_w2 = lora_from_json(lora.at("w2"));
    }
    if (config != nullptr) *config = config_from_json(doc.at("config"));
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const AdaptedModel& m,
                     const TrainConfig& config) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(m, config).dump() << '\n';
}

AdaptedModel load_checkpoint(const std::filesystem::path& path, TrainConfig* config) {
  std::ifstream in(path);
  if (!in) throw DataError("missing checkpoint " + path.string());
  try {
    return checkpoint_from_json(json::parse(in), config);
  } catch (const json::parse_error& e) {
    throw DataError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace notescreen::adapt
