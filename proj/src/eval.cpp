#include "notescreen/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "notescreen/random.hpp"

namespace notescreen::eval {

using nlohmann::json;

double ConfusionMatrix::accuracy() const {
  return n() == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(n());
}

ConfusionMatrix confusion(std::span<const Label> predicted, std::span<const Label> actual) {
  if (predicted.size() != actual.size()) throw std::invalid_argument("confusion: size mismatch");
  ConfusionMatrix c;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const bool pos_pred = predicted[i] == Label::Epilepsy;
    const bool pos_true = actual[i] == Label::Epilepsy;
    if (pos_pred && pos_true) ++c.tp;
    else if (pos_pred) ++c.fp;
    else if (pos_true) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double auc(std::span<const double> scores, std::span<const Label> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: size mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of midranks of the positives.
  double rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == Label::Epilepsy) {
        rank_sum += midrank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) {
    throw std::invalid_argument("auc: needs at least one Epilepsy and one PNES case");
  }
  const double np = static_cast<double>(positives);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(negatives));
}

AccuracyResult accuracy(std::span<const double> scores, std::span<const Label> labels,
                        double threshold) {
  if (scores.size() != labels.size()) throw std::invalid_argument("accuracy: size mismatch");
  if (scores.empty()) throw std::invalid_argument("accuracy: empty input");
  std::vector<Label> predicted(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    predicted[i] = scores[i] >= threshold ? Label::Epilepsy : Label::PNES;
  }
  AccuracyResult r;
  r.confusion = confusion(predicted, labels);
  r.accuracy = r.confusion.accuracy();
  return r;
}

double quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile: empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0) return sorted[lo];
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

BootstrapResult bootstrap_ci(const Metric& metric, std::span<const double> scores,
                             std::span<const Label> labels, const BootstrapOptions& options) {
  if (scores.size() != labels.size()) throw std::invalid_argument("bootstrap: size mismatch");
  if (scores.empty()) throw std::invalid_argument("bootstrap: empty input");
  if (options.n_boot == 0) throw std::invalid_argument("bootstrap: n_boot must be positive");
  BootstrapResult result;
  result.point = metric(scores, labels);
  const std::size_t n = scores.size();
  std::vector<double> replicates(options.n_boot);
  std::vector<double> s(n);
  std::vector<Label> l(n);
  for (std::size_t r = 0; r < options.n_boot; ++r) {
    Rng rng(derive_seed(options.seed, r));
    for (std::size_t attempt = 0;; ++attempt) {
      std::size_t positives = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto j = static_cast<std::size_t>(rng.uniform_index(n));
        s[i] = scores[j];
        l[i] = labels[j];
        positives += l[i] == Label::Epilepsy ? 1 : 0;
      }
      if (!options.need_both_classes || (positives > 0 && positives < n)) break;
      if (attempt + 1 >= options.max_retries) {
        throw RuntimeFailure("bootstrap replicate " + std::to_string(r) +
                             " held a single class after " + std::to_string(options.max_retries) +
                             " draws");
      }
    }
    replicates[r] = metric(s, l);
  }
  result.mean = std::accumulate(replicates.begin(), replicates.end(), 0.0) /
                static_cast<double>(options.n_boot);
  std::sort(replicates.begin(), replicates.end());
  const double tail = (1.0 - options.level) / 2.0;
  result.ci = {quantile(replicates, tail), quantile(replicates, 1.0 - tail)};
  return result;
}

// ---- Mann-Whitney U ------------------------------------------------------------------

std::string_view method_name(UTestResult::Method m) {
  return m == UTestResult::Method::exact ? "exact" : "normal_approx";
}

namespace {

constexpr std::size_t kExactLimit = 12;

// counts[u] = number of orderings of m a-values and n b-values with U = u.
std::vector<double> u_distribution(std::size_t m, std::size_t n) {
  // table[i][j] is the distribution for (i, j); built up with
  // N(u; i, j) = N(u - j; i - 1, j) + N(u; i, j - 1).
  std::vector<std::vector<std::vector<double>>> table(
      m + 1, std::vector<std::vector<double>>(n + 1));
  for (std::size_t i = 0; i <= m; ++i) {
    for (std::size_t j = 0; j <= n; ++j) {
      auto& cur = table[i][j];
      cur.assign(i * j + 1, 0.0);
      if (i == 0 || j == 0) {
        cur[0] = 1.0;
        continue;
      }
      const auto& a = table[i - 1][j];
      const auto& b = table[i][j - 1];
      for (std::size_t u = 0; u < cur.size(); ++u) {
        if (u >= j && u - j < a.size()) cur[u] += a[u - j];
        if (u < b.size()) cur[u] += b[u];
      }
    }
  }
  return table[m][n];
}

}  // namespace

UTestResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("mann_whitney_u: empty sample");
  UTestResult r;
  for (double x : a) {
    for (double y : b) r.u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  }
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::sort(pooled.begin(), pooled.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j] == pooled[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const std::size_t m = a.size();
  const std::size_t n = b.size();
  if (m <= kExactLimit && n <= kExactLimit && tie_term == 0.0) {
    r.method = UTestResult::Method::exact;
    const auto dist = u_distribution(m, n);
    const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
    const auto u = static_cast<std::size_t>(r.u);
    double lower = 0.0;
    double upper = 0.0;
    for (std::size_t k = 0; k < dist.size(); ++k) {
      if (k <= u) lower += dist[k];
      if (k >= u) upper += dist[k];
    }
    r.p = std::min(1.0, 2.0 * std::min(lower, upper) / total);
    return r;
  }
  r.method = UTestResult::Method::normal_approx;
  const double mm = static_cast<double>(m);
  const double nn = static_cast<double>(n);
  const double big_n = mm + nn;
  const double mean = mm * nn / 2.0;
  const double var = mm * nn / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
  if (!(var > 0.0)) {
    r.p = 1.0;
    return r;
  }
  const double z = std::max(0.0, std::abs(r.u - mean) - 0.5) / std::sqrt(var);
  r.p = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return r;
}

std::string significance_stars(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("significance_stars: p outside [0, 1]");
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "n.s.";
}

// ---- reports -------------------------------------------------------------------------

MetricReport evaluate(std::span<const double> scores, std::span<const Label> labels,
                      std::size_t n_boot, std::uint64_t seed, double threshold) {
  MetricReport report;
  report.n = scores.size();
  report.n_boot = n_boot;
  report.seed = seed;
  report.threshold = threshold;
  const auto acc = accuracy(scores, labels, threshold);
  report.confusion = acc.confusion;

  BootstrapOptions opts;
  opts.n_boot = n_boot;
  opts.seed = seed;
  const auto acc_boot = bootstrap_ci(
      [threshold](std::span<const double> s, std::span<const Label> l) {
        return accuracy(s, l, threshold).accuracy;
      },
      scores, labels, opts);
  report.accuracy = acc_boot.point;
  report.accuracy_mean = acc_boot.mean;
  report.ci_accuracy = acc_boot.ci;

  opts.need_both_classes = true;
  const auto auc_boot = bootstrap_ci(
      [](std::span<const double> s, std::span<const Label> l) { return auc(s, l); }, scores,
      labels, opts);
  report.auc = auc_boot.point;
  report.auc_mean = auc_boot.mean;
  report.ci_auc = auc_boot.ci;
  return report;
}

json confusion_to_json(const ConfusionMatrix& c) {
  return json{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

json report_to_json(const MetricReport& r) {
  return json{{"n", r.n},
              {"auc", r.auc},
              {"auc_mean", r.auc_mean},
              {"ci_auc", {r.ci_auc.lo, r.ci_auc.hi}},
              {"accuracy", r.accuracy},
              {"accuracy_mean", r.accuracy_mean},
              {"ci_accuracy", {r.ci_accuracy.lo, r.ci_accuracy.hi}},
              {"n_boot", r.n_boot},
              {"seed", r.seed},
              {"threshold", r.threshold},
              {"confusion", confusion_to_json(r.confusion)}};
}

void write_confusion_csv(const ConfusionMatrix& c, std::ostream& out) {
  out << "actual,predicted_Epilepsy,predicted_PNES\n";
  out << "Epilepsy," << c.tp << ',' << c.fn << '\n';
  out << "PNES," << c.fp << ',' << c.tn << '\n';
}

}  // namespace notescreen::eval
