#pragma once

/// @file synth.hpp
/// @brief Planted synthetic benchmarks with a known optimal description set.
///
/// Geometry (dimensions [0, n_classes) are the class directions e_c; the rest
/// hold noise):
///   - images of class c are e_c + N(0, sigma^2 I), renormalized;
///   - planted descriptions of c have cosine in [0.9, 1) with e_c, the rest
///     of their length along the mean of the other class directions;
///   - other descriptions of c point at the midpoint of two other classes;
///   - template instances are the dataset mean direction plus a weak e_c
///     component and an equally strong isotropic noise vector. The e_c
///     weight grows with the template index, so the last template is the
///     most discriminative. Templates alone leave classes confusable, which
///     is what gives descriptions something to fix.
///
/// Every text row is a pure function of (seed, manifest entry identity), so
/// synth_encode() can stand in for a real encoder on any manifest built from
/// the synthetic library.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "proapo/candidate.hpp"
#include "proapo/detail/digest.hpp"
#include "proapo/embedding_store.hpp"
#include "proapo/error.hpp"
#include "proapo/prompt_library.hpp"

namespace proapo {

struct SynthSpec {
  std::uint32_t n_classes = 10;
  std::uint32_t n_img_train = 200;
  std::uint32_t n_img_test = 200;
  std::uint32_t dim = 64;
  std::uint32_t n_templates = 4;
  std::uint32_t n_desc_per_class = 20;
  std::uint32_t n_planted_per_class = 4;
  double noise_sigma = 0.3;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_classes == 0 || n_img_train == 0 || n_img_test == 0 || dim == 0 || n_templates == 0) {
      throw Error(ErrorCode::SpecInvalid, "counts and dimension must be positive");
    }
    if (n_planted_per_class > n_desc_per_class) {
      throw Error(ErrorCode::SpecInvalid, "more planted descriptions than descriptions");
    }
    if (dim < n_classes) throw Error(ErrorCode::SpecInvalid, "dim must be >= n_classes");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
      throw Error(ErrorCode::SpecInvalid, "noise_sigma must be a finite nonnegative number");
    }
  }
};

inline nlohmann::json to_json(const SynthSpec& s) {
  return {{"n_classes", s.n_classes},     {"n_img_train", s.n_img_train}, {"n_img_test", s.n_img_test},
          {"dim", s.dim},                 {"n_templates", s.n_templates}, {"n_desc_per_class", s.n_desc_per_class},
          {"n_planted_per_class", s.n_planted_per_class}, {"noise_sigma", s.noise_sigma}, {"seed", s.seed}};
}

struct SynthBenchmark {
  SynthSpec spec;
  EmbeddingStore train;
  EmbeddingStore test;
  EmbeddingStore texts;
  PromptLibrary library;  // bound against `texts`
  EncodeManifest manifest;
  std::vector<std::string> templates;  // library inputs, for writing library.json
  std::vector<ClassEntry> classes;
  std::vector<std::vector<std::string>> descriptions;
  std::vector<std::vector<std::uint32_t>> planted_descriptions;  // description ids per class
  std::vector<std::vector<TextId>> answer_key;                   // planted text ids per class
};

namespace synth_detail {

using Rng64 = std::mt19937_64;

enum Stream : std::uint64_t { kTemplate = 1, kSynonym, kDescription, kPlanted, kTrain, kTest };

inline const std::array<const char*, 8> kTemplateStems = {
    "a photo of a {}.",          "a blurry photo of a {}.",   "a close-up photo of a {}.",
    "a bright photo of a {}.",   "itap of a {}.",             "a photo of the large {}.",
    "a cropped photo of a {}.",  "a good photo of the {}."};

inline std::string template_text(std::uint32_t t) {
  if (t < kTemplateStems.size()) return kTemplateStems[t];
  return "a photo of a {}, style " + std::to_string(t) + ".";
}

inline std::string class_name(std::uint32_t c) {
  std::string digits = std::to_string(c);
  if (digits.size() < 2) digits.insert(0, 2 - digits.size(), '0');
  return "class_" + digits;
}

class Geometry {
 public:
  explicit Geometry(const SynthSpec& spec) : spec_(spec) {}

  [[nodiscard]] std::vector<double> basis(std::uint32_t c) const {
    std::vector<double> v(spec_.dim, 0.0);
    v[c] = 1.0;
    return v;
  }

  [[nodiscard]] std::vector<double> mean_direction() const {
    std::vector<double> v(spec_.dim, 0.0);
    for (std::uint32_t c = 0; c < spec_.n_classes; ++c) v[c] = 1.0;
    return normalized(v);
  }

  // Unit vector in the noise dimensions (all dimensions orthogonal to e_c
  // when there are none).
  [[nodiscard]] std::vector<double> noise_direction(Rng64& rng, std::uint32_t c) const {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(spec_.dim, 0.0);
    const std::uint32_t lo = spec_.dim > spec_.n_classes ? spec_.n_classes : 0;
    for (std::uint32_t k = lo; k < spec_.dim; ++k) v[k] = g(rng);
    if (lo == 0) v[c] = 0.0;
    double n = 0.0;
    for (double x : v) n += x * x;
    if (n == 0.0) return v;
    for (double& x : v) x /= std::sqrt(n);
    return v;
  }

  [[nodiscard]] std::vector<double> isotropic_direction(Rng64& rng) const {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(spec_.dim);
    for (double& x : v) x = g(rng);
    return normalized(v);
  }

  // Mean direction with its e_c component removed; e_c itself when that
  // leaves nothing (a single class).
  [[nodiscard]] std::vector<double> residual_direction(std::uint32_t c) const {
    auto v = mean_direction();
    v[c] = 0.0;
    if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) return basis(c);
    return normalized(v);
  }

  [[nodiscard]] std::vector<std::uint32_t> planted(std::uint32_t c) const {
    std::vector<std::uint32_t> ids(spec_.n_desc_per_class);
    for (std::uint32_t d = 0; d < ids.size(); ++d) ids[d] = d;
    Rng64 rng(detail::seed_of(spec_.seed, kPlanted, c));
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(spec_.n_planted_per_class);
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  [[nodiscard]] double template_weight(std::uint32_t t) const {
    if (spec_.n_templates <= 1) return 0.5;
    return 0.05 + 0.15 * static_cast<double>(t) / static_cast<double>(spec_.n_templates - 1);
  }

  [[nodiscard]] std::vector<double> template_instance(std::uint32_t t, std::uint32_t c, std::uint32_t variant) const {
    Rng64 rng(detail::seed_of(spec_.seed, variant == 0 ? kTemplate : kSynonym, t, c, variant));
    auto v = axpy(0.6, mean_direction(), scaled(template_weight(t), basis(c)));
    v = axpy(1.0, isotropic_direction(rng), v);
    return normalized(v);
  }

  [[nodiscard]] std::vector<double> description(std::uint32_t c, std::uint32_t d, bool is_planted) const {
    Rng64 rng(detail::seed_of(spec_.seed, kDescription, c, d));
    if (is_planted) {
      const double cos = 0.9 + 0.1 * std::uniform_real_distribution<double>(0, 1)(rng);
      return axpy(std::sqrt(1.0 - cos * cos), residual_direction(c), scaled(cos, basis(c)));
    }
    std::vector<std::uint32_t> others;
    for (std::uint32_t k = 0; k < spec_.n_classes; ++k) {
      if (k != c) others.push_back(k);
    }
    std::vector<double> v(spec_.dim, 0.0);
    if (others.empty()) {
      v = noise_direction(rng, c);
      if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) v = basis(c);
      return v;
    }
    std::shuffle(others.begin(), others.end(), rng);
    const auto a = others[0];
    const auto b = others.size() > 1 ? others[1] : others[0];
    v[a] += 0.5;
    v[b] += 0.5;
    v = normalized(v);
    return normalized(axpy(0.15, noise_direction(rng, c), v));
  }

  [[nodiscard]] EmbeddingStore images(std::uint32_t n, Stream stream) const {
    Rng64 rng(detail::seed_of(spec_.seed, stream));
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<float> rows;
    rows.reserve(static_cast<std::size_t>(n) * spec_.dim);
    std::vector<ClassId> labels(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::uint32_t c = i % spec_.n_classes;
      labels[i] = c;
      auto x = basis(c);
      if (spec_.noise_sigma > 0.0) {
        for (double& v : x) v += spec_.noise_sigma * g(rng);
      }
      append(rows, normalized(x));
    }
    return EmbeddingStore::images(spec_.dim, spec_.n_classes, std::move(rows), std::move(labels));
  }

  static void append(std::vector<float>& rows, const std::vector<double>& v) {
    for (double x : v) rows.push_back(static_cast<float>(x));
  }

  static std::vector<double> normalized(std::vector<double> v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n > 0.0)
      for (double& x : v) x /= n;
    return v;
  }

  static std::vector<double> scaled(double a, std::vector<double> v) {
    for (double& x : v) x *= a;
    return v;
  }

  static std::vector<double> axpy(double a, const std::vector<double>& x, std::vector<double> y) {
    for (std::size_t k = 0; k < y.size(); ++k) y[k] += a * x[k];
    return y;
  }

 private:
  const SynthSpec& spec_;
};

}  // namespace synth_detail

/// Library inputs of the synthetic world (no domains, no synonyms).
inline PromptLibrary synth_library(const SynthSpec& spec, std::vector<std::string>* templates_out = nullptr,
                                   std::vector<ClassEntry>* classes_out = nullptr,
                                   std::vector<std::vector<std::string>>* descriptions_out = nullptr) {
  spec.validate();
  std::vector<std::string> templates;
  for (std::uint32_t t = 0; t < spec.n_templates; ++t) templates.push_back(synth_detail::template_text(t));
  std::vector<ClassEntry> classes(spec.n_classes);
  std::vector<std::vector<std::string>> descriptions(spec.n_classes);
  for (std::uint32_t c = 0; c < spec.n_classes; ++c) {
    classes[c].name = synth_detail::class_name(c);
    for (std::uint32_t d = 0; d < spec.n_desc_per_class; ++d) {
      descriptions[c].push_back(classes[c].name + " with visual attribute " + std::to_string(d) + ".");
    }
  }
  if (templates_out) *templates_out = templates;
  if (classes_out) *classes_out = classes;
  if (descriptions_out) *descriptions_out = descriptions;
  return PromptLibrary(std::move(templates), {}, std::move(classes), std::move(descriptions));
}

/// Deterministic pseudo-encoder for manifests built from synth_library(spec).
/// Integrated descriptions blend in a little of their template's direction.
inline EmbeddingStore synth_encode(const SynthSpec& spec, const EncodeManifest& manifest) {
  spec.validate();
  const synth_detail::Geometry geo(spec);
  std::vector<std::set<std::uint32_t>> planted(spec.n_classes);
  for (std::uint32_t c = 0; c < spec.n_classes; ++c) {
    const auto p = geo.planted(c);
    planted[c] = {p.begin(), p.end()};
  }
  std::vector<float> rows;
  std::vector<TextMeta> meta;
  for (const auto& e : manifest.entries) {
    std::vector<double> v;
    switch (e.kind) {
      case TextKind::TemplateInstance:
        v = geo.template_instance(*e.template_id, e.class_id, 0);
        break;
      case TextKind::SynonymInstance:
        v = geo.template_instance(*e.template_id, e.class_id, *e.description_id + 1);
        break;
      case TextKind::Description:
        v = geo.description(e.class_id, *e.description_id, planted[e.class_id].contains(*e.description_id));
        if (e.template_id) {
          v = synth_detail::Geometry::normalized(
              synth_detail::Geometry::axpy(0.1, geo.template_instance(*e.template_id, e.class_id, 0), v));
        }
        break;
    }
    synth_detail::Geometry::append(rows, v);
    meta.push_back({e.kind, e.class_id, e.template_id, e.full_text});
  }
  return EmbeddingStore::texts(spec.dim, spec.n_classes, std::move(rows), std::move(meta), manifest.fingerprint);
}

/// Train/test images, a library with standalone descriptions, its bound text
/// store and the planted answer key.
inline SynthBenchmark synth_benchmark(const SynthSpec& spec) {
  spec.validate();
  const synth_detail::Geometry geo(spec);
  SynthBenchmark b;
  b.spec = spec;
  const auto lib = synth_library(spec, &b.templates, &b.classes, &b.descriptions);
  b.manifest = instantiate_manifest(lib, {std::nullopt});
  b.texts = synth_encode(spec, b.manifest);
  b.library = bind_embeddings(lib, b.manifest, b.texts);
  b.train = geo.images(spec.n_img_train, synth_detail::kTrain);
  b.test = geo.images(spec.n_img_test, synth_detail::kTest);
  b.planted_descriptions.resize(spec.n_classes);
  b.answer_key.resize(spec.n_classes);
  for (std::uint32_t c = 0; c < spec.n_classes; ++c) b.planted_descriptions[c] = geo.planted(c);
  for (const auto& e : b.manifest.entries) {
    if (e.kind != TextKind::Description) continue;
    const auto& p = b.planted_descriptions[e.class_id];
    if (std::binary_search(p.begin(), p.end(), *e.description_id)) b.answer_key[e.class_id].push_back(e.manifest_id);
  }
  return b;
}

/// Template instances only: the phase-1 text bundle of a two-phase run.
inline EmbeddingStore synth_template_texts(const SynthBenchmark& b) {
  return synth_encode(b.spec, instantiate_manifest(b.library, {}));
}

/// Candidate with `templates` and exactly the planted descriptions.
inline CandidatePrompt planted_candidate(const SynthBenchmark& b, std::set<std::uint32_t> templates) {
  CandidatePrompt p(std::move(templates), b.answer_key.size());
  for (std::size_t c = 0; c < b.answer_key.size(); ++c) p.desc_ids[c] = {b.answer_key[c].begin(), b.answer_key[c].end()};
  return p;
}

/// Mean over classes with planted descriptions of |selected ∩ planted| / |planted|.
inline double planted_recall(const CandidatePrompt& p, const std::vector<std::vector<TextId>>& answer_key) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < answer_key.size(); ++c) {
    if (answer_key[c].empty()) continue;
    std::size_t hit = 0;
    for (TextId t : answer_key[c]) hit += p.desc_ids.at(c).contains(t) ? 1 : 0;
    sum += static_cast<double>(hit) / static_cast<double>(answer_key[c].size());
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

inline nlohmann::json answer_key_json(const SynthBenchmark& b) {
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < b.answer_key.size(); ++c) {
    classes.push_back(
        {{"class_id", c}, {"description_ids", b.planted_descriptions[c]}, {"text_ids", b.answer_key[c]}});
  }
  return {{"classes", std::move(classes)}};
}

}  // namespace proapo
