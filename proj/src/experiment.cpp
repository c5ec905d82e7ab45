#include "notescreen/experiment.hpp"

#include <cmath>
#include <future>
#include <numeric>
#include <ostream>

namespace notescreen::experiment {

PipelineResult run_pipeline(const corpus::Cohort& train, const corpus::Cohort& val,
                            const corpus::Cohort& test, const PipelineOptions& options) {
  if (test.empty()) throw DataError("test set is empty");
  PipelineResult r;
  r.vocab = textproc::build_vocab(train, options.min_frequency);
  const model::ModelShape shape{r.vocab.size(), options.embed_dim, options.hidden_dim};
  auto base = model::init_params(shape, options.train.seed);
  if (options.pretrain) model::pretrain_embeddings(base, train, r.vocab, options.pretrain_options);
  r.trained = adapt::train(adapt::prepare_model(std::move(base), options.train), train, val,
                           r.vocab, options.train);
  r.test_scores = adapt::predict(r.trained.model.effective(), test, r.vocab);
  std::vector<Label> labels;
  for (const auto& n : test.notes()) labels.push_back(n.label);
  r.test_report = eval::evaluate(r.test_scores, labels, options.n_boot, options.train.seed);
  return r;
}

std::string_view sweep_name(SweepKind k) {
  switch (k) {
    case SweepKind::imbalance: return "imbalance";
    case SweepKind::ratio: return "ratio";
    case SweepKind::scale: return "scale";
  }
  return "?";
}

SweepKind parse_sweep(std::string_view s) {
  if (s == "imbalance") return SweepKind::imbalance;
  if (s == "ratio") return SweepKind::ratio;
  if (s == "scale") return SweepKind::scale;
  throw DataError("unknown sweep kind \"" + std::string(s) + "\"");
}

std::vector<double> default_sweep_values(SweepKind k) {
  switch (k) {
    case SweepKind::imbalance: return {1, 5, 10, 15, 20};
    case SweepKind::ratio: return {0.05, 0.1, 0.25, 0.5, 1.0};
    case SweepKind::scale: return {8, 16, 32, 64};
  }
  return {};
}

namespace {

corpus::Ratio to_ratio(double alpha) {
  if (!(alpha > 0.0)) throw DataError("imbalance ratio must be positive");
  const double rounded = std::round(alpha);
  if (std::abs(alpha - rounded) < 1e-12) return {static_cast<std::uint64_t>(rounded), 1};
  const auto num = static_cast<std::uint64_t>(std::llround(alpha * 1000.0));
  const std::uint64_t g = std::gcd(num, std::uint64_t{1000});
  return {num / g, 1000 / g};
}

SweepPoint run_point(const corpus::Cohort& train, const corpus::Cohort& val,
                     const corpus::Cohort& test, const SweepOptions& options, std::size_t i) {
  SweepPoint p;
  p.value = options.values[i];
  try {
    PipelineOptions po = options.pipeline;
    corpus::Cohort resampled;
    const std::uint64_t point_seed = derive_seed(options.seed, i);
    switch (options.kind) {
      case SweepKind::imbalance:
        resampled = corpus::rebalance_training(train, to_ratio(p.value), point_seed);
        break;
      case SweepKind::ratio:
        resampled = corpus::subsample_training(train, p.value, point_seed);
        break;
      case SweepKind::scale:
        if (!(p.value >= 1.0) || p.value != std::floor(p.value)) {
          throw DataError("scale values must be positive integer widths");
        }
        po.embed_dim = static_cast<std::size_t>(p.value);
        po.hidden_dim = 2 * po.embed_dim;
        resampled = train;
        break;
    }
    p.n_train = resampled.size();
    p.n_train_epilepsy = resampled.count(Label::Epilepsy);
    p.report = run_pipeline(resampled, val, test, po).test_report;
    p.ok = true;
  } catch (const std::exception& e) {
    p.ok = false;
    p.error = e.what();
  }
  return p;
}

}  // namespace

std::vector<SweepPoint> run_sweep(const corpus::Cohort& train, const corpus::Cohort& val,
                                  const corpus::Cohort& test, const SweepOptions& options) {
  std::vector<SweepPoint> points(options.values.size());
  const std::size_t jobs = std::max<std::size_t>(1, options.jobs);
  for (std::size_t start = 0; start < points.size(); start += jobs) {
    const std::size_t end = std::min(points.size(), start + jobs);
    std::vector<std::future<SweepPoint>> running;
    for (std::size_t i = start; i < end; ++i) {
      running.push_back(std::async(std::launch::async, [&, i] {
        return run_point(train, val, test, options, i);
      }));
    }
    for (std::size_t i = start; i < end; ++i) points[i] = running[i - start].get();
  }
  return points;
}

void write_sweep_csv(SweepKind kind, const std::vector<SweepPoint>& points, std::ostream& out) {
  out << "sweep,value,status,n_train,n_train_epilepsy,auc,auc_lo,auc_hi,accuracy,accuracy_lo,"
         "accuracy_hi,error\n";
  out.precision(17);
  for (const auto& p : points) {
    out << sweep_name(kind) << ',' << p.value << ',' << (p.ok ? "ok" : "failed") << ','
        << p.n_train << ',' << p.n_train_epilepsy << ',';
    if (p.ok) {
      out << p.report.auc << ',' << p.report.ci_auc.lo << ',' << p.report.ci_auc.hi << ','
          << p.report.accuracy << ',' << p.report.ci_accuracy.lo << ',' << p.report.ci_accuracy.hi
          << ',';
    } else {
      out << ",,,,,,";
    }
    std::string err = p.error;
    for (char& c : err) {
      if (c == ',' || c == '\n' || c == '"') c = ' ';
    }
    out << err << '\n';
  }
}

}  // namespace notescreen::experiment
