#pragma once

/// @file scoring.hpp
/// @brief Class scores, predictions, accuracy, the confidence term and the
/// combined fitness of a candidate, plus per-class incremental caching.
///
/// The score of class c for image x is the mean cosine between x and every
/// text in D(c). Fitness is
///
///     F = accuracy + alpha * mean_i log softmax_c(tau * s(x_i, c))[y_i]
///
/// so higher fitness means more confident correct predictions.

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "json.hpp"
#include "proapo/candidate.hpp"
#include "proapo/embedding_store.hpp"
#include "proapo/error.hpp"
#include "proapo/prompt_library.hpp"

namespace proapo {

/// D(c) for every class, as text ids into a text store.
using ClassTexts = std::vector<std::vector<TextId>>;

struct ScoringParams {
  double alpha = 1e3;
  double tau = 100.0;
  // Synonym instances of the chosen templates join D(c) during the template
  // phase too; otherwise they are description-phase elements only.
  bool synonyms_with_templates = false;
};

struct ScoreBreakdown {
  double accuracy = 0.0;
  double mean_true_logprob = 0.0;
  double fitness = 0.0;
  std::size_t n_samples = 0;

  friend bool operator==(const ScoreBreakdown&, const ScoreBreakdown&) = default;
};

inline nlohmann::json to_json(const ScoreBreakdown& s) {
  return {{"accuracy", s.accuracy},
          {"mean_true_logprob", s.mean_true_logprob},
          {"fitness", s.fitness},
          {"n_samples", s.n_samples}};
}

inline ScoreBreakdown score_from_json(const nlohmann::json& j) {
  return {j.at("accuracy").get<double>(), j.at("mean_true_logprob").get<double>(),
          j.at("fitness").get<double>(), j.at("n_samples").get<std::size_t>()};
}

/// Dense row-major n_img x n_classes matrix.
class ScoreMatrix {
 public:
  ScoreMatrix() = default;
  ScoreMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), v_(rows * cols, 0.0) {}

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  double& operator()(std::size_t i, std::size_t c) noexcept { return v_[i * cols_ + c]; }
  double operator()(std::size_t i, std::size_t c) const noexcept { return v_[i * cols_ + c]; }
  [[nodiscard]] std::span<const double> row(std::size_t i) const noexcept {
    return {v_.data() + i * cols_, cols_};
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> v_;
};

/// Argmax per row; ties go to the lowest class index.
inline std::vector<ClassId> predict(const ScoreMatrix& scores) {
  std::vector<ClassId> out(scores.rows(), 0);
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const auto r = scores.row(i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < r.size(); ++c) {
      if (r[c] > r[best]) best = c;
    }
    out[i] = static_cast<ClassId>(best);
  }
  return out;
}

namespace detail {

inline void check_class_texts(const EmbeddingStore& texts, const ClassTexts& d, std::size_t n_classes) {
  if (d.size() != n_classes) throw Error(ErrorCode::UnboundId, "D(c) must be given for every class");
  for (std::size_t c = 0; c < d.size(); ++c) {
    if (d[c].empty()) throw Error(ErrorCode::UnboundId, "D(" + std::to_string(c) + ") is empty");
    for (TextId t : d[c]) {
      if (t >= texts.n_rows()) throw Error(ErrorCode::UnboundId, "text id " + std::to_string(t) + " out of range");
    }
  }
}

// Accuracy and mean log-probability of the true class over `rows`.
template <typename ScoreFn>
ScoreBreakdown summarize(ScoreFn&& score, std::size_t n_classes, std::span<const ClassId> labels,
                         std::span<const std::size_t> rows, double alpha, double tau) {
  ScoreBreakdown out;
  out.n_samples = rows.size();
  if (rows.empty()) throw Error(ErrorCode::CountMismatch, "fitness needs at least one image");
  std::size_t correct = 0;
  double lp_sum = 0.0;
  std::vector<double> s(n_classes);
  for (std::size_t i : rows) {
    std::size_t best = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
      s[c] = score(i, c);
      if (s[c] > s[best]) best = c;
    }
    const auto y = labels[i];
    if (best == y) ++correct;
    const double m = tau * s[best];
    double z = 0.0;
    for (std::size_t c = 0; c < n_classes; ++c) z += std::exp(tau * s[c] - m);
    lp_sum += tau * s[y] - (m + std::log(z));
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());
  out.mean_true_logprob = std::min(0.0, lp_sum / static_cast<double>(rows.size()));
  out.fitness = out.accuracy + alpha * out.mean_true_logprob;
  return out;
}

inline std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = i;
  return r;
}

}  // namespace detail

/// Direct computation of s(x_i, c) for explicit D(c) lists (no caching).
inline ScoreMatrix class_scores(const EmbeddingStore& images, const EmbeddingStore& texts,
                                const ClassTexts& d) {
  detail::check_class_texts(texts, d, d.size());
  ScoreMatrix out(images.n_rows(), d.size());
  for (std::size_t i = 0; i < images.n_rows(); ++i) {
    const auto x = images.row(i);
    for (std::size_t c = 0; c < d.size(); ++c) {
      double sum = 0.0;
      for (TextId t : d[c]) sum += EmbeddingStore::dot(x, texts.row(t));
      out(i, c) = sum / static_cast<double>(d[c].size());
    }
  }
  return out;
}

inline ScoreBreakdown fitness_from_scores(const ScoreMatrix& scores, std::span<const ClassId> labels,
                                          double alpha, double tau) {
  const auto rows = detail::all_rows(scores.rows());
  return detail::summarize([&](std::size_t i, std::size_t c) { return scores(i, c); }, scores.cols(),
                           labels, rows, alpha, tau);
}

/// Lazily computed cosine columns: column(t)[i] = cos(image i, text t).
/// Safe for concurrent readers.
class SimilarityTable {
 public:
  SimilarityTable(const EmbeddingStore& images, const EmbeddingStore& texts)
      : images_(&images), texts_(&texts), columns_(texts.n_rows()), once_(texts.n_rows()) {
    if (images.dim() != texts.dim()) {
      throw Error(ErrorCode::CountMismatch, "image and text dimensions differ");
    }
  }

  [[nodiscard]] std::span<const double> column(TextId t) const {
    if (t >= columns_.size()) throw Error(ErrorCode::UnboundId, "text id " + std::to_string(t) + " out of range");
    std::call_once(once_[t], [&] {
      std::vector<double> col(images_->n_rows());
      const auto tr = texts_->row(t);
      for (std::size_t i = 0; i < col.size(); ++i) col[i] = EmbeddingStore::dot(images_->row(i), tr);
      columns_[t] = std::move(col);
    });
    return columns_[t];
  }

  [[nodiscard]] const EmbeddingStore& images() const noexcept { return *images_; }
  [[nodiscard]] const EmbeddingStore& texts() const noexcept { return *texts_; }

 private:
  const EmbeddingStore* images_;
  const EmbeddingStore* texts_;
  mutable std::vector<std::vector<double>> columns_;
  mutable std::vector<std::once_flag> once_;
};

/// Per-class similarity sums for one candidate. sum(i, c) is the sum of
/// cos(image i, t) over t in D(c); scores are sum / |D(c)|.
class ScoreCache {
 public:
  ScoreCache(const SimilarityTable& table, const ClassTexts& d)
      : table_(&table), n_img_(table.images().n_rows()), sums_(n_img_ * d.size(), 0.0), members_(d.size()) {
    detail::check_class_texts(table.texts(), d, d.size());
    for (std::size_t c = 0; c < d.size(); ++c) {
      members_[c].insert(d[c].begin(), d[c].end());
      recompute(c);
    }
  }

  [[nodiscard]] std::size_t n_images() const noexcept { return n_img_; }
  [[nodiscard]] std::size_t n_classes() const noexcept { return members_.size(); }
  [[nodiscard]] double sum(std::size_t i, std::size_t c) const noexcept { return sums_[i * n_classes() + c]; }
  [[nodiscard]] std::size_t count(std::size_t c) const noexcept { return members_[c].size(); }
  [[nodiscard]] const std::multiset<TextId>& members(std::size_t c) const noexcept { return members_[c]; }

  [[nodiscard]] double score(std::size_t i, std::size_t c) const noexcept {
    return sum(i, c) / static_cast<double>(members_[c].size());
  }

  [[nodiscard]] ScoreMatrix scores() const {
    ScoreMatrix m(n_img_, n_classes());
    for (std::size_t i = 0; i < n_img_; ++i)
      for (std::size_t c = 0; c < n_classes(); ++c) m(i, c) = score(i, c);
    return m;
  }

  /// Edits D(c) and recomputes that class's column from its members.
  void apply_delta(ClassId c, std::span<const TextId> add, std::span<const TextId> remove) {
    if (c >= n_classes()) throw Error(ErrorCode::UnboundId, "class out of range");
    auto next = members_[c];
    for (TextId t : remove) {
      const auto it = next.find(t);
      if (it == next.end()) {
        throw Error(ErrorCode::RemoveAbsent, "text " + std::to_string(t) + " is not in D(" + std::to_string(c) + ")");
      }
      next.erase(it);
    }
    for (TextId t : add) {
      if (t >= table_->texts().n_rows()) throw Error(ErrorCode::UnboundId, "text id out of range");
      next.insert(t);
    }
    if (next.empty()) throw Error(ErrorCode::UnboundId, "D(" + std::to_string(c) + ") would be empty");
    if (add.empty() && remove.empty()) return;
    members_[c] = std::move(next);
    recompute(c);
  }

  ScoreBreakdown breakdown(std::span<const ClassId> labels, std::span<const std::size_t> rows, double alpha,
                           double tau) const {
    return detail::summarize([this](std::size_t i, std::size_t c) { return score(i, c); }, n_classes(), labels,
                             rows, alpha, tau);
  }

 private:
  void recompute(std::size_t c) {
    const std::size_t k = n_classes();
    for (std::size_t i = 0; i < n_img_; ++i) sums_[i * k + c] = 0.0;
    for (TextId t : members_[c]) {
      const auto col = table_->column(t);
      for (std::size_t i = 0; i < n_img_; ++i) sums_[i * k + c] += col[i];
    }
  }

  const SimilarityTable* table_;
  std::size_t n_img_;
  std::vector<double> sums_;
  std::vector<std::multiset<TextId>> members_;
};

inline ScoreCache make_cache(const SimilarityTable& table, const ClassTexts& d) { return ScoreCache(table, d); }

inline ScoreCache apply_delta(ScoreCache cache, ClassId c, std::span<const TextId> add,
                              std::span<const TextId> remove) {
  cache.apply_delta(c, add, remove);
  return cache;
}

/// D(c) of a candidate: the class-name instance of every chosen template
/// (plus synonym instances when enabled) followed by the class's descriptions.
inline ClassTexts resolve(const PromptLibrary& lib, const EmbeddingStore& texts, const CandidatePrompt& p,
                          const ScoringParams& params) {
  if (p.template_ids.empty()) throw Error(ErrorCode::UnboundId, "candidate has no templates");
  if (p.desc_ids.size() != lib.n_classes()) {
    throw Error(ErrorCode::UnboundId, "candidate class count differs from library");
  }
  ClassTexts d(lib.n_classes());
  for (ClassId c = 0; c < lib.n_classes(); ++c) {
    for (auto t : p.template_ids) {
      d[c].push_back(lib.template_text(t, c));
      if (params.synonyms_with_templates) {
        const auto& syn = lib.synonym_texts(t, c);
        d[c].insert(d[c].end(), syn.begin(), syn.end());
      }
    }
    for (TextId id : p.desc_ids[c]) {
      if (id >= texts.n_rows() || texts.meta()[id].class_id != c ||
          texts.meta()[id].kind == TextKind::TemplateInstance) {
        throw Error(ErrorCode::UnboundId, "text " + std::to_string(id) + " is not a description of class " +
                                              std::to_string(c));
      }
      d[c].push_back(id);
    }
  }
  return d;
}

/// Scores candidates against one image store. Owns the similarity table;
/// evaluate() is const and safe to call concurrently.
class Evaluator {
 public:
  Evaluator(const EmbeddingStore& images, const EmbeddingStore& texts, const PromptLibrary& lib,
            ScoringParams params)
      : images_(&images), texts_(&texts), lib_(&lib), params_(params),
        table_(std::make_unique<SimilarityTable>(images, texts)), rows_(detail::all_rows(images.n_rows())) {
    if (images.kind() != BundleKind::Image) throw Error(ErrorCode::CountMismatch, "expected an image bundle");
    if (images.n_classes() != lib.n_classes()) {
      throw Error(ErrorCode::CountMismatch, "image bundle and library disagree on class count");
    }
  }

  [[nodiscard]] const EmbeddingStore& images() const noexcept { return *images_; }
  [[nodiscard]] const EmbeddingStore& texts() const noexcept { return *texts_; }
  [[nodiscard]] const PromptLibrary& library() const noexcept { return *lib_; }
  [[nodiscard]] const ScoringParams& params() const noexcept { return params_; }
  [[nodiscard]] const SimilarityTable& table() const noexcept { return *table_; }
  [[nodiscard]] std::span<const std::size_t> rows() const noexcept { return rows_; }

  /// Restricts evaluate() to a subset of images (all images when nullopt).
  void restrict_rows(std::optional<std::vector<std::size_t>> rows) {
    rows_ = rows ? std::move(*rows) : detail::all_rows(images_->n_rows());
  }

  [[nodiscard]] ClassTexts resolve(const CandidatePrompt& p) const { return proapo::resolve(*lib_, *texts_, p, params_); }
  [[nodiscard]] ScoreCache cache(const CandidatePrompt& p) const { return ScoreCache(*table_, resolve(p)); }

  [[nodiscard]] ScoreBreakdown evaluate(const CandidatePrompt& p) const { return evaluate(p, rows_); }

  [[nodiscard]] ScoreBreakdown evaluate(const CandidatePrompt& p, std::span<const std::size_t> rows) const {
    return cache(p).breakdown(images_->labels(), rows, params_.alpha, params_.tau);
  }

 private:
  const EmbeddingStore* images_;
  const EmbeddingStore* texts_;
  const PromptLibrary* lib_;
  ScoringParams params_;
  std::unique_ptr<SimilarityTable> table_;
  std::vector<std::size_t> rows_;
};

inline ScoreMatrix class_scores(const EmbeddingStore& images, const EmbeddingStore& texts, const PromptLibrary& lib,
                                const CandidatePrompt& p, const ScoringParams& params = {}) {
  return class_scores(images, texts, resolve(lib, texts, p, params));
}

inline ScoreBreakdown fitness(const EmbeddingStore& images, const EmbeddingStore& texts, const PromptLibrary& lib,
                              const CandidatePrompt& p, double alpha = 1e3, double tau = 100.0,
                              bool synonyms_with_templates = false) {
  return fitness_from_scores(class_scores(images, texts, lib, p, {alpha, tau, synonyms_with_templates}),
                             images.labels(), alpha, tau);
}

/// Pearson correlation coefficient.
inline double pcc(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error(ErrorCode::CountMismatch, "pcc inputs differ in length");
  if (xs.size() < 2) throw Error(ErrorCode::DegenerateVariance, "pcc needs at least two points");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) throw Error(ErrorCode::DegenerateVariance, "a pcc input has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace proapo
