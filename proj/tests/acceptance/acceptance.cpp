// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "notescreen/adapt.hpp"
#include "notescreen/corpus.hpp"
#include "notescreen/eval.hpp"
#include "notescreen/experiment.hpp"
#include "notescreen/explain.hpp"
#include "notescreen/random.hpp"
#include "notescreen/review.hpp"

using namespace notescreen;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

textproc::TokenSeq random_seq(Rng& rng, std::size_t len, std::size_t vocab) {
  textproc::TokenSeq seq;
  for (std::size_t i = 0; i < len; ++i) seq.tokens.push_back({static_cast<textproc::TokenId>(rng.uniform_index(vocab)), "", {}});
  return seq;
}

// ---- 1 -------------------------------------------------------------------------------

Outcome category_accumulation() {
  using C = explain::PhenotypeCategory;
  const std::vector<double> scores{0.946, 0.932, 0.930, 0.894, 0.878, 0.851, 0.831, 0.818, 0.795, 0.783};
  const std::vector<const char*> names{"Seizure Semiology", "Seizure Semiology", "Pre-Event Features",
                                       "Event Temporal Pattern", "Diagnostic Testing & Evaluation Phenotype",
                                       "Medical Comorbidity Profile", "Diagnostic Testing & Evaluation Phenotype",
                                       "Medical Comorbidity Profile", "Seizure Semiology", "Demographics & Background"};
  std::vector<explain::SentenceScore> s;
  std::vector<C> cats;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    s.push_back({i, scores[i], scores[i], i + 1});
    const auto c = explain::parse_category(names[i]);
    if (!c) return {false, std::string("unparsed category ") + names[i]};
    cats.push_back(*c);
  }
  const auto a = explain::accumulated_ig(s, cats, 10);
  const double sem = a[explain::category_index(C::IctalSemiology)].value;
  const double diag = a[explain::category_index(C::ClinicalEvaluationDiagnostic)].value;
  const bool ok = std::round(sem * 1e4) == 2673 && std::round(diag * 1e4) == 1709 &&
                  std::abs(sem - 0.2673) < 1e-12 && std::abs(diag - 0.1709) < 1e-12;
  return {ok, "A(semiology)=" + fmt("%.6f", sem) + " A(diagnostic)=" + fmt("%.6f", diag)};
}

// ---- 2 -------------------------------------------------------------------------------

Outcome ig_completeness() {
  corpus::SyntheticOptions o;
  o.n = 100;
  o.seed = 21;
  const auto syn = corpus::generate_synthetic(o);
  const auto vocab = textproc::build_vocab(syn.cohort);
  const model::ReferenceScorer scorer(model::init_params({vocab.size(), 64, 128}, 21));
  const auto target = model::Target::log_prob(Label::Epilepsy);
  std::vector<double> r512, r32, scaled;
  for (const auto& note : syn.cohort.notes()) {
    const auto prep = textproc::prepare(note.text, vocab);
    const auto a = explain::integrated_gradients(scorer, prep.tokens, prep.windows, target, 512);
    const auto b = explain::integrated_gradients(scorer, prep.tokens, prep.windows, target, 32);
    r512.push_back(a.completeness_residual());
    r32.push_back(b.completeness_residual());
    scaled.push_back(a.completeness_residual() / std::max(1.0, std::abs(a.f_input - a.f_baseline)));
  }
  const double m512 = median(r512), m32 = median(r32), ms = median(scaled);
  return {ms <= 1e-3 && m512 < m32,
          "median residual m=512 " + fmt("%.3e", m512) + " (scaled " + fmt("%.3e", ms) + "), m=32 " + fmt("%.3e", m32)};
}

// ---- 3 -------------------------------------------------------------------------------

Outcome ig_linear() {
  Rng rng(31);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(50), d = 1 + rng.uniform_index(16);
    Matrix w(n, d), x(n, d);
    for (double& v : w.data) v = rng.uniform(-2.0, 2.0);
    for (double& v : x.data) v = rng.uniform(-2.0, 2.0);
    const model::LinearScorer scorer(w, Matrix(1, d));
    const auto plan = textproc::make_windows(n);
    for (std::size_t m : {1u, 7u, 512u}) {
      const auto ig = explain::integrated_gradients(scorer, x, plan, model::Target::logit_diff(), m);
      for (std::size_t t = 0; t < n; ++t) {
        double expect = 0.0;
        for (std::size_t j = 0; j < d; ++j) expect += w(t, j) * x(t, j);
        worst = std::max(worst, std::abs(ig.per_token[t] - expect));
      }
    }
  }
  return {worst <= 1e-12, "max |IG - w.x| " + fmt("%.3e", worst)};
}

// ---- 4 -------------------------------------------------------------------------------

Outcome gradients() {
  Rng rng(41);
  double worst = 0.0;
  std::size_t checked = 0;
  auto rel = [](double a, double b) {
    const double den = std::max(std::abs(a), std::abs(b));
    return den == 0.0 ? 0.0 : std::abs(a - b) / den;
  };
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t v = 20, d = 6, h = 8;
    auto p = model::init_params({v, d, h}, rng.next_u64());
    for (double& x : p.w1.data) x *= 20.0;
    for (double& x : p.w2.data) x *= 20.0;
    for (double& x : p.embedding.data) x *= 10.0;
    for (double& x : p.b1) x = rng.uniform(-0.5, 0.5);
    const auto seq = random_seq(rng, 5 + rng.uniform_index(60), v);
    const auto plan = textproc::make_windows(seq.size(), 16, 48);
    const auto target = trial % 2 ? model::Target::logit_diff() : model::Target::log_prob(Label::PNES);
    const auto g = model::backward(p, seq, plan, target);
    Matrix inputs = model::embed(p, seq);
    auto f = [&] { return model::target_value(model::forward_inputs(p, inputs, plan).logits, target); };
    auto sweep = [&](std::vector<double>& x, const std::vector<double>& an) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + 1e-5;
        const double up = f();
        x[i] = keep - 1e-5;
        const double down = f();
        x[i] = keep;
        // Coordinates with no influence give exactly zero on both sides.
        worst = std::max(worst, rel((up - down) / 2e-5, an[i]));
        ++checked;
      }
    };
    sweep(p.w1.data, g.w1.data);
    sweep(p.b1, g.b1);
    sweep(p.w2.data, g.w2.data);
    sweep(p.b2, g.b2);
    sweep(inputs.data, g.inputs.data);
  }
  return {worst < 1e-5, "max relative error " + fmt("%.3e", worst) + " over " + std::to_string(checked) + " coordinates"};
}

// ---- 5 -------------------------------------------------------------------------------

Outcome auc_oracle() {
  Rng rng(51);
  double worst = 0.0;
  bool invariant = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(49);
    std::vector<double> s(n);
    std::vector<Label> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = trial % 2 ? rng.uniform01() : static_cast<double>(rng.uniform_index(6));
      l[i] = rng.bernoulli(0.5) ? Label::Epilepsy : Label::PNES;
    }
    l[0] = Label::Epilepsy;
    l[1] = Label::PNES;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (l[i] != Label::Epilepsy || l[j] != Label::PNES) continue;
        den += 1.0;
        num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
    }
    const double a = eval::auc(s, l);
    worst = std::max(worst, std::abs(a - num / den));
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = 5.0 * s[i] * s[i] * s[i] + 2.0 * s[i] - 1.0;  // increasing
    invariant = invariant && eval::auc(t, l) == a;
  }
  return {worst <= 1e-12 && invariant, "max |AUC - oracle| " + fmt("%.3e", worst) + (invariant ? ", invariant" : ", NOT invariant")};
}

// ---- 6 -------------------------------------------------------------------------------

Outcome bootstrap() {
  const eval::Metric acc = [](std::span<const double> s, std::span<const Label> l) {
    return eval::accuracy(s, l).accuracy;
  };
  std::size_t covered = 0;
  bool deterministic = true;
  for (int t = 0; t < 200; ++t) {
    Rng rng(derive_seed(61, t));
    std::vector<double> s(300);
    std::vector<Label> l(300, Label::Epilepsy);
    for (double& x : s) x = rng.bernoulli(0.8) ? 1.0 : 0.0;
    eval::BootstrapOptions o;
    o.seed = static_cast<std::uint64_t>(t);
    const auto r = eval::bootstrap_ci(acc, s, l, o);
    if (t < 5) {
      const auto again = eval::bootstrap_ci(acc, s, l, o);
      deterministic = deterministic && again.ci.lo == r.ci.lo && again.ci.hi == r.ci.hi;
    }
    covered += r.ci.lo <= 0.8 && 0.8 <= r.ci.hi;
  }
  const double rate = covered / 200.0;
  const bool defaults = eval::BootstrapOptions{}.n_boot == 1000 && eval::kDefaultBootstrapReplicates == 1000;
  return {deterministic && defaults && rate >= 0.90 && rate <= 0.99,
          "coverage " + fmt("%.3f", rate) + (deterministic ? ", deterministic" : ", NOT deterministic") +
              ", default n_boot " + std::to_string(eval::BootstrapOptions{}.n_boot)};
}

// ---- 7 -------------------------------------------------------------------------------

Outcome mann_whitney() {
  const auto base = eval::mann_whitney_u(std::vector<double>{4, 5, 6}, std::vector<double>{1, 2, 3});
  bool ok = base.method == eval::UTestResult::Method::exact && std::abs(base.p - 0.1) < 1e-12;
  double worst = 0.0;
  for (std::size_t m = 1; m <= 6; ++m) {
    for (std::size_t n = 1; n <= 6; ++n) {
      // Every placement of the first sample's values among 0..m+n-1.
      const std::size_t total = m + n;
      std::vector<double> u_all;
      for (unsigned mask = 0; mask < (1u << total); ++mask) {
        if (static_cast<std::size_t>(__builtin_popcount(mask)) != m) continue;
        double u = 0.0;
        for (std::size_t i = 0; i < total; ++i) {
          if (!(mask >> i & 1u)) continue;
          for (std::size_t j = 0; j < i; ++j) u += !(mask >> j & 1u);
        }
        u_all.push_back(u);
      }
      for (unsigned mask = 0; mask < (1u << total); ++mask) {
        if (static_cast<std::size_t>(__builtin_popcount(mask)) != m) continue;
        std::vector<double> a, b;
        for (std::size_t i = 0; i < total; ++i) ((mask >> i & 1u) ? a : b).push_back(static_cast<double>(i));
        const auto r = eval::mann_whitney_u(a, b);
        double le = 0.0, ge = 0.0;
        for (double u : u_all) {
          le += u <= r.u;
          ge += u >= r.u;
        }
        const double p = std::min(1.0, 2.0 * std::min(le, ge) / static_cast<double>(u_all.size()));
        ok = ok && r.method == eval::UTestResult::Method::exact;
        worst = std::max(worst, std::abs(p - r.p));
      }
    }
  }
  const bool stars = eval::significance_stars(0.0009) == "***" && eval::significance_stars(0.001) == "**" &&
                     eval::significance_stars(0.0099) == "**" && eval::significance_stars(0.01) == "*" &&
                     eval::significance_stars(0.0499) == "*" && eval::significance_stars(0.05) == "n.s." &&
                     eval::significance_stars(0.5) == "n.s.";
  return {ok && stars && worst <= 1e-12,
          "p(4,5,6 vs 1,2,3)=" + fmt("%.6f", base.p) + ", max |p - enumeration| " + fmt("%.3e", worst) +
              (stars ? ", stars ok" : ", stars WRONG")};
}

// ---- 8 -------------------------------------------------------------------------------

std::vector<std::size_t> hamilton(std::uint64_t total, const std::vector<std::uint64_t>& w) {
  std::uint64_t sum = std::accumulate(w.begin(), w.end(), std::uint64_t{0});
  std::vector<std::size_t> seats(w.size());
  std::vector<std::pair<std::uint64_t, std::size_t>> rems;
  std::uint64_t used = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    seats[i] = total * w[i] / sum;
    used += seats[i];
    rems.push_back({total * w[i] % sum, i});
  }
  std::sort(rems.begin(), rems.end(), [](auto a, auto b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  for (std::size_t k = 0; used < total; ++k, ++used) ++seats[rems[k].second];
  return seats;
}

corpus::Cohort plain_cohort(std::size_t ne, std::size_t np) {
  corpus::Cohort c;
  for (std::size_t i = 0; i < ne + np; ++i) {
    c.add(corpus::make_note("n" + std::to_string(i), "p" + std::to_string(i), "note " + std::to_string(i) + ".",
                            i < ne ? Label::Epilepsy : Label::PNES, "A"));
  }
  return c;
}

Outcome sampling() {
  // 2t*a/(1+a) for t=60, rounded half up by hand.
  const std::map<std::uint64_t, std::size_t> expected{{1, 60}, {5, 100}, {10, 109}, {15, 113}, {20, 114}};
  const auto train = plain_cohort(300, 60);
  bool ok = true;
  std::string counts;
  for (const auto& [a, epi] : expected) {
    const auto out = corpus::rebalance_training(train, {a, 1}, a);
    ok = ok && out.size() == 120 && out.count(Label::Epilepsy) == epi;
    counts += (counts.empty() ? "" : ",") + std::to_string(out.count(Label::Epilepsy));
  }
  Rng rng(81);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t ne = 3 + rng.uniform_index(100), np = 3 + rng.uniform_index(50);
    const auto c = plain_cohort(ne, np);
    corpus::SplitSpec spec;
    spec.seed = static_cast<std::uint64_t>(trial);
    const auto s = corpus::stratified_split(c, spec);
    const auto oe = hamilton(ne, {7, 1, 2}), op = hamilton(np, {7, 1, 2});
    auto cnt = [&](const std::vector<std::string>& ids, bool epi) {
      return static_cast<std::size_t>(std::count_if(ids.begin(), ids.end(), [&](const std::string& id) {
        return (std::stoul(id.substr(1)) < ne) == epi;
      }));
    };
    if (cnt(s.train, true) != oe[0] || cnt(s.val, true) != oe[1] || cnt(s.test, true) != oe[2] ||
        cnt(s.train, false) != op[0] || cnt(s.val, false) != op[1] || cnt(s.test, false) != op[2]) {
      ++mismatches;
    }
    // Subsample at p/20: ceil of the total quota, seats by largest remainder.
    const std::uint64_t p = 1 + rng.uniform_index(20);
    const std::uint64_t seats = ((ne + np) * p + 19) / 20;
    std::vector<std::size_t> want{ne * p / 20, np * p / 20};
    std::vector<std::pair<std::uint64_t, std::size_t>> rem{{ne * p % 20, 0}, {np * p % 20, 1}};
    std::sort(rem.begin(), rem.end(), [](auto a, auto b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    for (std::size_t k = 0, used = want[0] + want[1]; used < seats; ++k, ++used) ++want[rem[k % 2].second];
    const auto sub = corpus::subsample_training(c, static_cast<double>(p) / 20.0, trial);
    if (sub.count(Label::Epilepsy) != want[0] || sub.count(Label::PNES) != want[1]) ++mismatches;
  }
  return {ok && mismatches == 0, "rebalance epilepsy counts {" + counts + "}, oracle mismatches " + std::to_string(mismatches)};
}

// ---- 9 -------------------------------------------------------------------------------

Outcome adaptation() {
  using namespace adapt;
  const auto base = model::init_params({40, 16, 32}, 91);
  TrainConfig cfg;
  cfg.mode = TrainMode::lora;
  const auto m = prepare_model(base, cfg);
  Rng rng(92);
  const auto seq = random_seq(rng, 300, 40);
  const auto plan = textproc::make_windows(seq.size(), 64);
  const auto inputs = model::embed(base, seq);
  const bool lora_exact = adapted_logits(m, inputs, plan) == model::forward_inputs(base, inputs, plan).logits;

  Matrix fixed(4, 64);
  for (std::size_t i = 0; i < fixed.data.size(); ++i) fixed.data[i] = std::ldexp(kNf4Codebook[i % 16], static_cast<int>(i / 64) - 1);
  const bool fixed_exact = dequantize(quantize_nf4(fixed, 64)) == fixed;

  Matrix w(64, 64);
  for (double& x : w.data) {
    const double u1 = std::max(rng.uniform01(), 1e-300);
    x = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * rng.uniform01());
  }
  double gap = 0.0;
  for (std::size_t k = 1; k < 16; ++k) gap = std::max(gap, kNf4Codebook[k] - kNf4Codebook[k - 1]);
  const auto q = quantize_nf4(w, 64);
  const auto d = dequantize(q);
  bool bounded = true, nearest = true;
  for (std::size_t i = 0; i < w.data.size(); ++i) {
    const double s = q.scales[i / 64];
    bounded = bounded && std::abs(w.data[i] - d.data[i]) <= s * gap / 2 + 1e-15;
    double best = std::abs(w.data[i] / s - kNf4Codebook[q.codes[i]]);
    for (double c : kNf4Codebook) nearest = nearest && std::abs(w.data[i] / s - c) >= best - 1e-15;
  }
  const bool idempotent = quantize_nf4(d, 64) == q;
  const bool ok = lora_exact && fixed_exact && bounded && nearest && idempotent;
  std::string detail = std::string("lora B=0 ") + (lora_exact ? "exact" : "DIFFERS") + ", fixed points " +
                       (fixed_exact ? "exact" : "INEXACT") + ", bound " + (bounded ? "ok" : "VIOLATED") +
                       ", nearest " + (nearest ? "ok" : "WRONG") + ", idempotent " + (idempotent ? "yes" : "NO");
  return {ok, detail};
}

// ---- 10 ------------------------------------------------------------------------------

Outcome end_to_end() {
  corpus::SyntheticOptions o;
  o.n = 2000;
  o.seed = 101;
  o.epilepsy_fraction = 2651.0 / 3451.0;
  const auto syn = corpus::generate_synthetic(o);
  corpus::SplitSpec spec;
  spec.seed = 101;
  const auto split = corpus::stratified_split(syn.cohort, spec);
  const auto train = syn.cohort.subset(split.train);
  const auto val = syn.cohort.subset(split.val);
  const auto test = syn.cohort.subset(split.test);

  experiment::PipelineOptions po;
  po.train.mode = adapt::TrainMode::qlora;
  po.train.epochs = 3;
  po.train.peak_lr = 5e-4;
  po.train.warmup_ratio = 0.03;
  po.train.seed = 101;
  const auto result = experiment::run_pipeline(train, val, test, po);

  const model::ReferenceScorer scorer(result.trained.model.effective());
  const auto& tagger = explain::LexiconTagger::builtin();
  explain::ExplainOptions eo;  // m=512, k=10, target Epilepsy
  double precision_sum = 0.0;
  std::size_t notes = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& note = test.notes()[i];
    const Label predicted = result.test_scores[i] >= 0.5 ? Label::Epilepsy : Label::PNES;
    if (predicted != note.label) continue;
    const auto prep = textproc::prepare(note.text, result.vocab);
    const auto r = explain::explain_note(scorer, note.id, note.text, prep, tagger, eo);
    const auto planted = syn.planted_sentences(note.id);
    const std::set<std::size_t> planted_set(planted.begin(), planted.end());
    const auto order = r.ranked();
    std::size_t hits = 0;
    for (std::size_t k = 0; k < std::min<std::size_t>(10, order.size()); ++k) hits += planted_set.count(order[k]);
    precision_sum += static_cast<double>(hits) / 10.0;
    ++notes;
  }
  const double precision = notes ? precision_sum / notes : 0.0;
  const double auc = result.test_report.auc;
  return {auc >= 0.95 && precision >= 0.8,
          "test AUC " + fmt("%.4f", auc) + ", top-10 planted precision " + fmt("%.4f", precision) + " over " +
              std::to_string(notes) + " correct notes"};
}

// ---- 11 ------------------------------------------------------------------------------

// Mean test AUC per sweep value over three cohort seeds.
std::map<double, double> sweep_means(experiment::SweepKind kind, const std::vector<double>& values, double* seconds) {
  const auto start = std::chrono::steady_clock::now();
  std::map<double, double> sums;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto c = corpus::generate_synthetic(corpus::hard_synthetic_options(2000, seed)).cohort;
    corpus::SplitSpec spec;
    spec.seed = seed;
    const auto s = corpus::stratified_split(c, spec);
    experiment::SweepOptions o;
    o.kind = kind;
    o.values = values;
    o.seed = seed;
    o.pipeline.train.seed = seed;
    o.pipeline.n_boot = 200;
    const auto pts = experiment::run_sweep(c.subset(s.train), c.subset(s.val), c.subset(s.test), o);
    for (const auto& p : pts) sums[p.value] += p.ok ? p.report.auc / 3.0 : NAN;
  }
  *seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return sums;
}

Outcome trends() {
  double t_imb = 0, t_ratio = 0, t_scale = 0;
  const auto imb = sweep_means(experiment::SweepKind::imbalance, {5, 20}, &t_imb);
  const auto ratio = sweep_means(experiment::SweepKind::ratio, {0.05, 1.0}, &t_ratio);
  const auto scale = sweep_means(experiment::SweepKind::scale, {8, 64}, &t_scale);
  const bool a = imb.at(20) <= imb.at(5);
  const bool b = ratio.at(0.05) < ratio.at(1.0);
  const bool c = scale.at(8) <= scale.at(64);
  const bool fast = t_imb < 900 && t_ratio < 900 && t_scale < 900;
  return {a && b && c && fast,
          "imbalance 20:1 " + fmt("%.4f", imb.at(20)) + " vs 5:1 " + fmt("%.4f", imb.at(5)) + "; data 5% " +
              fmt("%.4f", ratio.at(0.05)) + " vs 100% " + fmt("%.4f", ratio.at(1.0)) + "; d=8 " +
              fmt("%.4f", scale.at(8)) + " vs d=64 " + fmt("%.4f", scale.at(64)) + "; sweep times " +
              fmt("%.0f", t_imb) + "/" + fmt("%.0f", t_ratio) + "/" + fmt("%.0f", t_scale) + " s"};
}

// ---- 12 ------------------------------------------------------------------------------

Outcome review_service() {
  using review::ReviewStore;
  json notes = json::array(), attributions = json::array();
  for (std::size_t i = 0; i < 1000; ++i) {
    const Label label = i % 4 == 0 ? Label::PNES : Label::Epilepsy;
    const std::string id = "c" + std::to_string(i);
    const std::string text = "Visit " + std::to_string(i) + " reviewed. Events were described. EEG was normal.";
    notes.push_back(corpus::note_to_json(corpus::make_note(id, "p" + std::to_string(i), text, label, "A")));
    explain::AttributionResult r;
    r.note_id = id;
    for (const auto& s : textproc::segment_sentences(text).sentences) r.spans.push_back(s.chars);
    r.sentences = explain::normalize_and_rank(std::vector<double>{0.2, 0.9, 0.5});
    r.categories.assign(3, explain::PhenotypeCategory::Unassigned);
    r.category_scores = explain::accumulated_ig(r.sentences, r.categories);
    auto doc = explain::attribution_to_json(r);
    // Model right on 88% of the first 300 cases.
    const bool right = i >= 300 || i < 264;
    const Label pred = right ? label : (label == Label::Epilepsy ? Label::PNES : Label::Epilepsy);
    doc["predicted_label"] = std::string(label_name(pred));
    doc["p_epilepsy"] = pred == Label::Epilepsy ? 0.9 : 0.1;
    attributions.push_back(doc);
  }
  const auto dir = std::filesystem::temp_directory_path() / "notescreen_acceptance";
  std::filesystem::create_directories(dir);
  const auto log = dir / "events.jsonl";
  std::filesystem::remove(log);

  std::size_t leaks = 0;
  std::string sid;
  json live;
  {
    ReviewStore store(log);
    store.register_cohort({{"cohort_id", "all"}, {"notes", notes}, {"attributions", attributions}});
    const std::string blind = store.create_session({{"cohort_id", "all"}, {"condition", "unaided"}, {"seed", 1}}).at("session_id");
    for (;;) {
      const auto next = store.next_case(blind);
      if (next.at("done") == true) break;
      leaks += review::find_blinded_key(next).has_value();
      store.record_decision(blind, {{"case_id", next.at("case").at("case_id")}, {"label", "Epilepsy"}});
    }
    json first300 = json::array(), attr300 = json::array();
    for (std::size_t i = 0; i < 300; ++i) {
      first300.push_back(notes[i]);
      attr300.push_back(attributions[i]);
    }
    store.register_cohort({{"cohort_id", "scripted"}, {"notes", first300}, {"attributions", attr300}});
    sid = store.create_session({{"cohort_id", "scripted"}, {"condition", "ai_assisted"}, {"seed", 12}}).at("session_id");
    for (;;) {
      const auto next = store.next_case(sid);
      if (next.at("done") == true) break;
      const auto& c = next.at("case");
      store.record_decision(sid, {{"case_id", c.at("case_id")}, {"label", c.at("assist").at("predicted_label")}});
    }
    live = store.report(sid);
  }
  const auto replayed = ReviewStore::report_from_log(log, sid);
  const double acc = live.at("accuracy");
  const double lo = live.at("ci_accuracy").at("lower"), hi = live.at("ci_accuracy").at("upper");
  const bool ok = leaks == 0 && replayed.dump() == live.dump() && acc == 264.0 / 300.0 && lo <= acc && acc <= hi;
  return {ok, std::to_string(leaks) + " leaks in 1000 unaided views, replay " +
                  (replayed.dump() == live.dump() ? "identical" : "DIFFERS") + ", accuracy " + fmt("%.4f", acc) +
                  " CI [" + fmt("%.4f", lo) + ", " + fmt("%.4f", hi) + "]"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "category accumulation on the published case", 1, category_accumulation},
      {2, "IG completeness", 60, ig_completeness},
      {3, "IG linear exactness", 60, ig_linear},
      {4, "gradient correctness", 60, gradients},
      {5, "AUC oracle", 60, auc_oracle},
      {6, "bootstrap CI", 120, bootstrap},
      {7, "Mann-Whitney", 60, mann_whitney},
      {8, "sampling protocols", 60, sampling},
      {9, "adaptation", 60, adaptation},
      {10, "end-to-end synthetic benchmark", 300, end_to_end},
      {11, "trend reproduction", 2700, trends},
      {12, "review service", 120, review_service},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("[%s] %2d %s: %s (%.2f s%s)\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
