#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "notescreen/common.hpp"

namespace notescreen::eval {

// Epilepsy is the positive class.
struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t n() const { return tp + fp + fn + tn; }
  double accuracy() const;
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(std::span<const Label> predicted, std::span<const Label> actual);

// Probability that a random positive outscores a random negative, ties counting half.
// Throws std::invalid_argument unless both classes are present.
double auc(std::span<const double> scores, std::span<const Label> labels);

struct AccuracyResult {
  double accuracy = 0.0;
  ConfusionMatrix confusion;
};

// Predicts Epilepsy when p >= threshold.
AccuracyResult accuracy(std::span<const double> scores, std::span<const Label> labels,
                        double threshold = 0.5);

using Metric = std::function<double(std::span<const double>, std::span<const Label>)>;

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

inline constexpr std::size_t kDefaultBootstrapReplicates = 1000;

struct BootstrapOptions {
  std::size_t n_boot = kDefaultBootstrapReplicates;
  std::uint64_t seed = 0;
  // Redraw resamples holding a single class (needed for AUC).
  bool need_both_classes = false;
  std::size_t max_retries = 100;
  double level = 0.95;
};

struct BootstrapResult {
  double point = 0.0;  // metric on the original sample
  double mean = 0.0;   // mean over replicates
  Interval ci;
};

// Percentile bootstrap. Replicate r draws from a generator seeded by (seed, r).
BootstrapResult bootstrap_ci(const Metric& metric, std::span<const double> scores,
                             std::span<const Label> labels, const BootstrapOptions& options = {});

// Linear interpolation between order statistics (q in [0, 1]); `sorted` must be ascending.
double quantile(std::span<const double> sorted, double q);

struct UTestResult {
  enum class Method { exact, normal_approx };
  double u = 0.0;  // pairs with a > b, ties counting half
  double p = 1.0;  // two-sided
  Method method = Method::normal_approx;
};

std::string_view method_name(UTestResult::Method m);

// Two-sided Mann-Whitney U. Exact null distribution when both samples have at most 12 values
// and there are no ties; otherwise the tie- and continuity-corrected normal approximation.
UTestResult mann_whitney_u(std::span<const double> a, std::span<const double> b);

// "***" p < 0.001, "**" p < 0.01, "*" p < 0.05, otherwise "n.s.".
std::string significance_stars(double p);

struct MetricReport {
  std::size_t n = 0;
  double auc = 0.0;
  double accuracy = 0.0;
  double auc_mean = 0.0;
  double accuracy_mean = 0.0;
  Interval ci_auc;
  Interval ci_accuracy;
  std::size_t n_boot = kDefaultBootstrapReplicates;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  ConfusionMatrix confusion;
};

MetricReport evaluate(std::span<const double> scores, std::span<const Label> labels,
                      std::size_t n_boot = kDefaultBootstrapReplicates, std::uint64_t seed = 0,
                      double threshold = 0.5);

nlohmann::json confusion_to_json(const ConfusionMatrix& c);
nlohmann::json report_to_json(const MetricReport& report);

// Rows are actual diagnoses, columns predicted.
void write_confusion_csv(const ConfusionMatrix& c, std::ostream& out);

}  // namespace notescreen::eval
