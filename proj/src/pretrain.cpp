#include "notescreen/pretrain.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace notescreen::model {

Matrix cooccurrence_embeddings(const corpus::Cohort& cohort, const textproc::Vocabulary& vocab,
                               std::size_t dim, const PretrainOptions& options) {
  if (dim == 0) throw std::invalid_argument("embedding dimension must be positive");
  // Ids are frequency-ranked, so the first `n` ids are the most frequent words.
  const std::size_t n = std::min(vocab.size(), options.max_words + 1);
  Matrix out(vocab.size(), dim);
  if (cohort.empty() || n < 2) return out;

  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  std::vector<double> df(n, 0.0);
  std::vector<char> present(n);
  std::vector<std::size_t> ids;
  for (const auto& note : cohort.notes()) {
    std::fill(present.begin(), present.end(), 0);
    ids.clear();
    for (const auto& t : textproc::tokenize(note.text, vocab).tokens) {
      if (t.id == textproc::kUnknownToken || t.id >= n || present[t.id]) continue;
      present[t.id] = 1;
      ids.push_back(t.id);
    }
    for (auto a : ids) {
      df[a] += 1.0;
      for (auto b : ids) {
        if (a != b) counts(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += 1.0;
      }
    }
  }
  const double docs = static_cast<double>(cohort.size());
  Eigen::MatrixXd ppmi = Eigen::MatrixXd::Zero(counts.rows(), counts.cols());
  for (Eigen::Index a = 1; a < counts.rows(); ++a) {
    for (Eigen::Index b = 1; b < counts.cols(); ++b) {
      const double c = counts(a, b);
      if (c > 0.0) ppmi(a, b) = std::max(0.0, std::log(c * docs / (df[a] * df[b])));
    }
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(ppmi);
  if (solver.info() != Eigen::Success) throw RuntimeFailure("co-occurrence eigensolver failed");

  // Eigenvalues come ascending; take the largest first.
  const std::size_t k = std::min(dim, n);
  for (std::size_t j = 0; j < k; ++j) {
    const Eigen::Index col = static_cast<Eigen::Index>(n - 1 - j);
    const double weight = std::sqrt(std::max(0.0, solver.eigenvalues()(col)));
    auto v = solver.eigenvectors().col(col);
    // Fix the sign so the largest-magnitude entry is positive.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    const double sign = v(arg) < 0.0 ? -1.0 : 1.0;
    for (std::size_t w = 1; w < n; ++w) out(w, j) = sign * weight * v(static_cast<Eigen::Index>(w));
  }
  double largest = 0.0;
  for (double x : out.data) largest = std::max(largest, std::abs(x));
  if (largest > 0.0) {
    for (double& x : out.data) x *= options.scale / largest;
  }
  return out;
}

void pretrain_embeddings(ModelParams& params, const corpus::Cohort& cohort,
                         const textproc::Vocabulary& vocab, const PretrainOptions& options) {
  if (params.embedding.rows != vocab.size()) {
    throw DataError("vocabulary size does not match the embedding table");
  }
  const Matrix pre = cooccurrence_embeddings(cohort, vocab, params.embedding.cols, options);
  const std::size_t n = std::min(vocab.size(), options.max_words + 1);
  for (std::size_t w = 1; w < n; ++w) {
    auto dst = params.embedding.row(w);
    const auto src = pre.row(w);
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace notescreen::model
