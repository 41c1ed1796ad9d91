#pragma once

// Shared test helpers and independent reference implementations. The
// oracles below deliberately avoid the library's scoring code paths: plain
// nested loops, long double accumulation, direct softmax without max
// subtraction.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "proapo/proapo.hpp"

namespace testing_support {

namespace fs = std::filesystem;
using proapo::ClassId;
using proapo::TextId;

inline fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("proapo_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// Rows as plain nested vectors, normalized by an independent routine.
using Matrix = std::vector<std::vector<long double>>;

inline Matrix rows_of(const proapo::EmbeddingStore& s) {
  Matrix m(s.n_rows(), std::vector<long double>(s.dim()));
  for (std::size_t i = 0; i < s.n_rows(); ++i) {
    const auto r = s.row(i);
    for (std::size_t k = 0; k < s.dim(); ++k) m[i][k] = r[k];
  }
  return m;
}

inline long double dot(const std::vector<long double>& a, const std::vector<long double>& b) {
  long double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

/// s(i, c) = mean over d in D(c) of <x_i, t_d>.
inline Matrix oracle_scores(const Matrix& images, const Matrix& texts, const std::vector<std::vector<TextId>>& d) {
  Matrix out(images.size(), std::vector<long double>(d.size()));
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t c = 0; c < d.size(); ++c) {
      long double sum = 0;
      for (TextId t : d[c]) sum += dot(images[i], texts[t]);
      out[i][c] = sum / static_cast<long double>(d[c].size());
    }
  }
  return out;
}

inline std::vector<ClassId> oracle_predict(const Matrix& s) {
  std::vector<ClassId> out;
  for (const auto& row : s) {
    ClassId best = 0;
    for (ClassId c = 1; c < row.size(); ++c) {
      if (row[c] > row[best]) best = c;
    }
    out.push_back(best);
  }
  return out;
}

struct OracleScore {
  long double accuracy;
  long double mean_true_logprob;
  long double fitness;
};

inline OracleScore oracle_fitness(const Matrix& s, const std::vector<ClassId>& labels, long double alpha,
                                  long double tau) {
  const auto pred = oracle_predict(s);
  long double correct = 0, lp = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (pred[i] == labels[i]) correct += 1;
    long double z = 0;
    for (long double v : s[i]) z += std::exp(tau * v);
    lp += std::log(std::exp(tau * s[i][labels[i]]) / z);
  }
  OracleScore o;
  o.accuracy = correct / static_cast<long double>(s.size());
  o.mean_true_logprob = lp / static_cast<long double>(s.size());
  o.fitness = o.accuracy + alpha * o.mean_true_logprob;
  return o;
}

inline long double oracle_pcc(const std::vector<double>& x, const std::vector<double>& y) {
  const long double n = static_cast<long double>(x.size());
  long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += static_cast<long double>(x[i]) * x[i];
    syy += static_cast<long double>(y[i]) * y[i];
    sxy += static_cast<long double>(x[i]) * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

/// Random unit-norm float rows.
inline std::vector<float> random_rows(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
  std::normal_distribution<double> g;
  std::vector<float> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(dim);
    double norm = 0;
    for (auto& x : v) {
      x = g(rng);
      norm += x * x;
    }
    for (auto x : v) out.push_back(static_cast<float>(x / std::sqrt(norm)));
  }
  return out;
}

inline proapo::EmbeddingStore text_store(std::uint32_t dim, std::uint32_t n_classes, std::vector<float> rows,
                                         std::vector<ClassId> classes) {
  std::vector<proapo::TextMeta> meta;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    meta.push_back({proapo::TextKind::Description, classes[i], std::nullopt, "text " + std::to_string(i)});
  }
  return proapo::EmbeddingStore::texts(dim, n_classes, std::move(rows), std::move(meta), "test");
}

/// Library whose only template is the base one and whose class names are
/// c0, c1, ...; `descs[c]` descriptions per class.
inline proapo::PromptLibrary simple_library(std::uint32_t n_classes, std::vector<std::uint32_t> descs,
                                            std::vector<std::string> templates = {"a photo of a {}."}) {
  std::vector<proapo::ClassEntry> classes(n_classes);
  std::vector<std::vector<std::string>> d(n_classes);
  for (std::uint32_t c = 0; c < n_classes; ++c) {
    classes[c].name = "c" + std::to_string(c);
    for (std::uint32_t k = 0; k < descs.at(c); ++k) d[c].push_back("c" + std::to_string(c) + " detail " + std::to_string(k));
  }
  return proapo::PromptLibrary(std::move(templates), {}, std::move(classes), std::move(d));
}

/// Writes a synthetic benchmark to `dir` the way `proapo synth` does and
/// returns a pre-integrated run config pointing at it. Two-phase configs
/// should point text_bundle at text_templates.bin instead.
inline proapo::RunConfig write_synth(const proapo::SynthBenchmark& b, const fs::path& dir) {
  fs::create_directories(dir);
  proapo::save_bundle(b.train, dir / "train.bin");
  proapo::save_bundle(b.test, dir / "test.bin");
  proapo::save_bundle(b.texts, dir / "text.bin");
  proapo::save_bundle(proapo::synth_template_texts(b), dir / "text_templates.bin");
  proapo::detail::write_file(dir / "library.json",
                             proapo::library_files_json(b.templates, {}, b.classes, b.descriptions).dump());
  proapo::RunConfig cfg;
  cfg.train_bundle = dir / "train.bin";
  cfg.text_bundle = dir / "text.bin";
  cfg.library.combined = dir / "library.json";
  cfg.output_dir = dir / "run";
  return cfg;
}

}  // namespace testing_support
