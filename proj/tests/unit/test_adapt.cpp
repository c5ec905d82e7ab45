#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "notescreen/adapt.hpp"
#include "notescreen/random.hpp"

using namespace notescreen;
using namespace notescreen::adapt;

namespace {

// Standard normal quantile by Newton iteration on the erfc-based CDF.
double normal_quantile(double p) {
  double x = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double cdf = 0.5 * std::erfc(-x / std::sqrt(2.0));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    const double step = (cdf - p) / pdf;
    x -= step;
    if (std::abs(step) < 1e-15) break;
  }
  return x;
}

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> out;
  for (int i = 0; i < n; ++i) out.push_back(a + (b - a) * i / (n - 1));
  return out;
}

// 8 positive and 7 negative normal quantiles plus zero, scaled to [-1, 1].
std::vector<double> regenerate_nf4() {
  const double offset = 0.9677083;
  std::vector<double> v;
  auto pos = linspace(offset, 0.5, 9);
  for (int i = 0; i < 8; ++i) v.push_back(normal_quantile(pos[i]));
  auto neg = linspace(offset, 0.5, 8);
  for (int i = 0; i < 7; ++i) v.push_back(-normal_quantile(neg[i]));
  v.push_back(0.0);
  std::sort(v.begin(), v.end());
  const double mx = std::max(std::abs(v.front()), std::abs(v.back()));
  for (double& x : v) x /= mx;
  return v;
}

corpus::Cohort tiny_cohort(std::size_t n, std::uint64_t seed) {
  corpus::SyntheticOptions o;
  o.n = n;
  o.seed = seed;
  return corpus::generate_synthetic(o).cohort;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("NF4 codebook matches the normal-quantile construction") {
  const auto v = regenerate_nf4();
  REQUIRE(v.size() == 16);
  for (std::size_t i = 0; i < 16; ++i) CHECK(kNf4Codebook[i] == doctest::Approx(v[i]).epsilon(2e-6));
  CHECK(kNf4Codebook[kNf4ZeroCode] == 0.0);
}

TEST_CASE("nearest code agrees with brute force") {
  Rng rng(4);
  for (int i = 0; i < 5000; ++i) {
    const double x = rng.uniform(-1.0, 1.0);
    std::size_t best = 0;
    for (std::size_t k = 1; k < 16; ++k) {
      if (std::abs(x - kNf4Codebook[k]) < std::abs(x - kNf4Codebook[best])) best = k;
    }
    CHECK(nearest_nf4_code(x) == best);
  }
}

TEST_CASE("NF4 round trip is exact on codebook points") {
  Matrix w(2, 64);
  for (std::size_t i = 0; i < w.data.size(); ++i) {
    w.data[i] = (i < 64 ? 0.25 : 4.0) * kNf4Codebook[i % 16];
  }
  const auto q = quantize_nf4(w, 64);
  CHECK(dequantize(q) == w);
}

TEST_CASE("NF4 error is bounded by half the widest gap") {
  Rng rng(12);
  Matrix w(64, 64);
  for (double& x : w.data) {
    // Box-Muller from uniform draws.
    const double u1 = std::max(rng.uniform01(), 1e-300);
    x = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * rng.uniform01());
  }
  double gap = 0.0;
  for (std::size_t k = 1; k < 16; ++k) gap = std::max(gap, kNf4Codebook[k] - kNf4Codebook[k - 1]);
  const auto q = quantize_nf4(w, 64);
  const auto d = dequantize(q);
  for (std::size_t i = 0; i < w.data.size(); ++i) {
    CHECK(std::abs(w.data[i] - d.data[i]) <= q.scales[i / 64] * gap / 2 + 1e-15);
  }
  CHECK(quantize_nf4(d, 64) == q);
  CHECK(quantized_from_json(quantized_to_json(q)) == q);
}

TEST_CASE("ragged final block and zero blocks") {
  Matrix w(1, 70);
  for (std::size_t i = 64; i < 70; ++i) w.data[i] = static_cast<double>(i) - 66.5;
  const auto q = quantize_nf4(w, 64);
  CHECK(q.scales.size() == 2);
  CHECK(q.scales[0] == 0.0);
  for (std::size_t i = 0; i < 64; ++i) CHECK(q.codes[i] == kNf4ZeroCode);
  CHECK(dequantize(q).data[0] == 0.0);
}

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  c.peak_lr = 5e-4;
  c.warmup_ratio = 0.03;
  const std::size_t total = 4200;  // warmup = 126 steps
  CHECK(lr_at(0, total, c) == 0.0);
  CHECK(lr_at(63, total, c) == doctest::Approx(2.5e-4));
  CHECK(lr_at(126, total, c) == c.peak_lr);
  CHECK(lr_at(total, total, c) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lr_at(126 + (total - 126) / 2, total, c) == doctest::Approx(2.5e-4));
  double prev = c.peak_lr;
  for (std::size_t s = 127; s <= total; ++s) {
    const double lr = lr_at(s, total, c);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK_THROWS(lr_at(total + 1, total, c));
  c.warmup_ratio = 0.0;
  CHECK(lr_at(0, 10, c) == c.peak_lr);
}

TEST_CASE("LoRA with zero B reproduces the base model exactly") {
  Rng rng(6);
  const auto base = model::init_params({30, 8, 12}, 3);
  TrainConfig cfg;
  cfg.mode = TrainMode::lora;
  const auto m = prepare_model(base, cfg);
  REQUIRE(m.lora_w1);
  CHECK(m.effective().w1 == base.w1);
  CHECK(m.effective().w2 == base.w2);
  textproc::TokenSeq seq;
  for (int i = 0; i < 40; ++i) seq.tokens.push_back({static_cast<textproc::TokenId>(rng.uniform_index(30)), "", {}});
  const auto plan = textproc::make_windows(seq.size());
  const auto inputs = model::embed(base, seq);
  CHECK(adapted_logits(m, inputs, plan) == model::forward_inputs(base, inputs, plan).logits);
  const auto mask1 = dropout_mask(8, 0.05, rng);
  const auto mask2 = dropout_mask(12, 0.05, rng);
  CHECK(adapted_logits(m, inputs, plan, mask1, mask2) == model::forward_inputs(base, inputs, plan).logits);
}

TEST_CASE("dropout mask is inverted dropout") {
  Rng rng(7);
  const auto mask = dropout_mask(10000, 0.25, rng);
  std::size_t zeros = 0;
  for (double x : mask) {
    CHECK((x == 0.0 || x == doctest::Approx(1.0 / 0.75)));
    zeros += x == 0.0;
  }
  CHECK(zeros > 2300);
  CHECK(zeros < 2700);
  CHECK(dropout_mask(5, 0.0, rng) == Vector(5, 1.0));
}

TEST_CASE("adapter gradients match central differences") {
  Rng rng(8);
  auto base = model::init_params({25, 6, 10}, 2);
  for (double& x : base.embedding.data) x *= 20.0;
  for (double& x : base.w1.data) x *= 20.0;
  TrainConfig cfg;
  cfg.mode = TrainMode::qlora;
  cfg.lora_rank = 3;
  auto m = prepare_model(base, cfg);
  for (auto* ad : {&*m.lora_w1, &*m.lora_w2}) {
    for (double& x : ad->b.data) x = rng.uniform(-0.3, 0.3);
  }
  textproc::TokenSeq seq;
  for (int i = 0; i < 60; ++i) seq.tokens.push_back({static_cast<textproc::TokenId>(rng.uniform_index(25)), "", {}});
  const auto plan = textproc::make_windows(seq.size(), 16);
  const auto inputs = model::embed(m.base, seq);
  const auto mask1 = dropout_mask(6, 0.3, rng);
  const auto mask2 = dropout_mask(10, 0.3, rng);
  const auto target = model::Target::log_prob(Label::PNES);
  const auto g = adapter_backward(m, inputs, plan, target, mask1, mask2);
  auto f = [&] { return model::target_value(adapted_logits(m, inputs, plan, mask1, mask2), target); };
  double worst = 0.0;
  auto sweep = [&](std::vector<double>& x, const std::vector<double>& an) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double keep = x[i];
      x[i] = keep + 1e-5;
      const double up = f();
      x[i] = keep - 1e-5;
      const double down = f();
      x[i] = keep;
      const double fd = (up - down) / 2e-5;
      worst = std::max(worst, std::abs(fd - an[i]) / std::max(1.0, std::abs(fd) + std::abs(an[i])));
    }
  };
  sweep(m.lora_w1->a.data, g.a1.data);
  sweep(m.lora_w1->b.data, g.b1.data);
  sweep(m.lora_w2->a.data, g.a2.data);
  sweep(m.lora_w2->b.data, g.b2.data);
  CHECK(worst < 1e-7);
  CHECK(g.value == doctest::Approx(f()));
}

TEST_CASE("a small SGD step lowers the loss") {
  const auto base = model::init_params({40, 8, 12}, 5);
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = base;
    textproc::TokenSeq seq;
    for (int i = 0; i < 30; ++i) seq.tokens.push_back({static_cast<textproc::TokenId>(1 + rng.uniform_index(39)), "", {}});
    const auto plan = textproc::make_windows(seq.size());
    const Label l = trial % 2 ? Label::PNES : Label::Epilepsy;
    const double before = cross_entropy(model::forward(p, seq, plan).log_probs, l);
    sgd_step(p, seq, plan, l, 1e-2);
    const double after = cross_entropy(model::forward(p, seq, plan).log_probs, l);
    CHECK(after < before);
  }
}

TEST_CASE("training is deterministic and leaves frozen parts alone") {
  const auto c = tiny_cohort(160, 3);
  corpus::SplitSpec spec;
  spec.seed = 3;
  const auto split = corpus::stratified_split(c, spec);
  const auto train_set = c.subset(split.train);
  const auto val_set = c.subset(split.val);
  const auto vocab = textproc::build_vocab(train_set);
  const auto base = model::init_params({vocab.size(), 8, 16}, 3);
  TrainConfig cfg;
  cfg.seed = 3;
  cfg.epochs = 2;
  for (TrainMode mode : {TrainMode::full, TrainMode::lora, TrainMode::qlora}) {
    cfg.mode = mode;
    const auto prepared = prepare_model(base, cfg);
    const auto a = train(prepared, train_set, val_set, vocab, cfg);
    const auto b = train(prepared, train_set, val_set, vocab, cfg);
    CHECK(a.history == b.history);
    CHECK(a.model.effective().w1 == b.model.effective().w1);
    CHECK(a.history.lr_trace.size() == 2 * train_set.size());
    CHECK(a.history.epochs.size() == 2);
    if (mode != TrainMode::full) {
      CHECK(a.model.base.w1 == prepared.base.w1);
      CHECK(a.model.base.embedding == prepared.base.embedding);
      CHECK(!(a.model.lora_w1->b == prepared.lora_w1->b));
    } else {
      CHECK(!(a.model.base.w1 == prepared.base.w1));
    }
    if (mode == TrainMode::qlora) {
      CHECK(*a.model.q_w1 == *prepared.q_w1);
      CHECK(a.model.base.w1 == dequantize(*prepared.q_w1));
    }
  }
}

TEST_CASE("checkpoint round trip and version check") {
  const auto base = model::init_params({20, 4, 6}, 1);
  TrainConfig cfg;
  cfg.mode = TrainMode::qlora;
  cfg.lora_rank = 2;
  const auto m = prepare_model(base, cfg);
  const auto dir = std::filesystem::temp_directory_path() / "notescreen_ckpt_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "c.json", m, cfg);
  TrainConfig loaded_cfg;
  const auto back = load_checkpoint(dir / "c.json", &loaded_cfg);
  CHECK(back.effective().w1 == m.effective().w1);
  CHECK(back.effective().embedding == m.effective().embedding);
  CHECK(*back.q_w2 == *m.q_w2);
  CHECK(loaded_cfg.lora_rank == 2);
  CHECK(config_to_json(loaded_cfg) == config_to_json(cfg));
  auto doc = checkpoint_to_json(m, cfg);
  doc["version"] = 99;
  CHECK_THROWS_AS(checkpoint_from_json(doc), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("config validation and parsing") {
  TrainConfig c;
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), DataError);
  CHECK_THROWS_AS(parse_mode("int8"), DataError);
  CHECK(parse_mode("qlora") == TrainMode::qlora);
  std::ostringstream out;
  TrainHistory h;
  h.epochs.push_back({1, 0.5, 0.9, 0.8});
  write_history_csv(h, out);
  CHECK(out.str().rfind("epoch,loss,val_auc,val_acc\n1,0.5,0.90000000000000002,0.80000000000000004", 0) == 0);
}
