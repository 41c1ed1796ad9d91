#pragma once

/// @file sampling.hpp
/// @brief Description-phase starting point (random description assignments,
/// best one kept) and selection of the class groups worth optimizing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "proapo/candidate.hpp"
#include "proapo/error.hpp"
#include "proapo/scoring.hpp"
#include "proapo/search.hpp"

namespace proapo {

/// VD(c): the description-phase element pool of every class.
using DescriptionPools = std::vector<std::vector<TextId>>;

struct SamplingConfig {
  std::size_t samples = 32;        // T_sample
  std::size_t max_per_class = 5;   // K_max
  std::optional<std::size_t> n_worst;
  std::optional<std::size_t> n_salient;

  void validate() const {
    if (max_per_class < 1) throw Error(ErrorCode::ConfigInvalid, "max_per_class must be >= 1");
  }
};

/// max(2, ceil(log10(|C|))).
inline std::size_t default_group_count(std::size_t n_classes) {
  if (n_classes <= 1) return 2;
  return std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(std::log10(static_cast<double>(n_classes)))));
}

/// Description pools for a template set: every bound description of the
/// class, plus its synonym instances under those templates unless synonyms
/// already join D(c) with the templates.
inline DescriptionPools description_pools(const PromptLibrary& lib, const std::set<std::uint32_t>& templates,
                                          bool synonyms_with_templates) {
  DescriptionPools vd(lib.n_classes());
  for (ClassId c = 0; c < lib.n_classes(); ++c) {
    vd[c] = lib.description_texts(c);
    if (!synonyms_with_templates) {
      for (auto t : templates) {
        const auto& syn = lib.synonym_texts(t, c);
        vd[c].insert(vd[c].end(), syn.begin(), syn.end());
      }
    }
    std::sort(vd[c].begin(), vd[c].end());
    vd[c].erase(std::unique(vd[c].begin(), vd[c].end()), vd[c].end());
  }
  return vd;
}

/// Pool of (class, text) elements restricted to `classes`.
inline ElementPool group_pool(const DescriptionPools& vd, const std::vector<ClassId>& classes) {
  ElementPool pool;
  for (ClassId c : classes) {
    for (TextId t : vd.at(c)) pool.push_back({c, t});
  }
  return pool;
}

/// Best of the seed plus `samples` random description assignments. Every
/// class with descriptions gets a uniform subset whose size is uniform in
/// [1, min(K_max, |VD(c)|)]. Ties go to the earliest candidate.
inline Member prompt_sample_init(const Evaluator& eval, const CandidatePrompt& seed, const DescriptionPools& vd,
                                 const SamplingConfig& cfg, Rng& rng, TagSource& tags,
                                 const EvaluationObserver& observer = {}, std::size_t workers = 1) {
  cfg.validate();
  const auto& lib = eval.library();
  if (vd.size() != lib.n_classes()) throw Error(ErrorCode::UnboundDescriptions, "pools do not cover every class");
  for (ClassId c = 0; c < lib.n_classes(); ++c) {
    if (!lib.descriptions()[c].empty() && vd[c].empty()) {
      throw Error(ErrorCode::UnboundDescriptions, "class " + std::to_string(c) + " has no bound descriptions");
    }
  }
  std::vector<CandidatePrompt> pool{seed};
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    CandidatePrompt p = seed;
    for (ClassId c = 0; c < vd.size(); ++c) {
      p.desc_ids[c].clear();
      if (vd[c].empty()) continue;
      const std::size_t hi = std::min(cfg.max_per_class, vd[c].size());
      const std::size_t size = 1 + draw_index(rng, hi);
      const auto picked = draw_subset(vd[c], size, rng);
      p.desc_ids[c] = {picked.begin(), picked.end()};
    }
    p.generation_tag = tags.next();
    pool.push_back(std::move(p));
  }
  const auto scores = evaluate_all(eval, pool, workers);
  std::size_t best = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (observer && i != 0) observer(pool[i], scores[i]);
    if (scores[i].fitness > scores[best].fitness) best = i;
  }
  return {pool[best], scores[best]};
}

enum class GroupProvenance { Worst, Salient };

struct ClassGroup {
  std::vector<ClassId> classes;  // ascending; contains the anchor
  GroupProvenance provenance = GroupProvenance::Worst;
  ClassId anchor = 0;

  friend bool operator==(const ClassGroup&, const ClassGroup&) = default;
};

struct GroupPlan {
  std::vector<ClassGroup> groups;
  std::size_t n_worst = 0;
  std::size_t n_salient = 0;
  std::vector<std::set<ClassId>> misclass;  // predicted labels of misclassified images, per true class
  std::vector<double> class_accuracy;
  std::vector<double> class_gain;

  friend bool operator==(const GroupPlan&, const GroupPlan&) = default;
};

inline nlohmann::json to_json(const GroupPlan& plan) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : plan.groups) {
    groups.push_back({{"classes", g.classes},
                      {"provenance", g.provenance == GroupProvenance::Worst ? "worst" : "salient"},
                      {"anchor_class", g.anchor}});
  }
  return {{"groups", std::move(groups)}, {"n_wst", plan.n_worst},        {"n_sln", plan.n_salient},
          {"misclass", plan.misclass},   {"class_accuracy", plan.class_accuracy}, {"class_gain", plan.class_gain}};
}

inline GroupPlan group_plan_from_json(const nlohmann::json& j) {
  GroupPlan plan;
  for (const auto& g : j.at("groups")) {
    plan.groups.push_back({g.at("classes").get<std::vector<ClassId>>(),
                           g.at("provenance").get<std::string>() == "worst" ? GroupProvenance::Worst
                                                                             : GroupProvenance::Salient,
                           g.at("anchor_class").get<ClassId>()});
  }
  plan.n_worst = j.at("n_wst").get<std::size_t>();
  plan.n_salient = j.at("n_sln").get<std::size_t>();
  plan.misclass = j.at("misclass").get<std::vector<std::set<ClassId>>>();
  plan.class_accuracy = j.at("class_accuracy").get<std::vector<double>>();
  plan.class_gain = j.at("class_gain").get<std::vector<double>>();
  return plan;
}

/// Anchors are the n_wst classes with the lowest accuracy under `seed` and
/// the n_sln classes whose fitness (on their own images) rises most when all
/// of VD(c) is added. Each group is the anchor plus the classes its images
/// are mistaken for. Ties go to the lower class id. Classes without images
/// are never anchors.
inline GroupPlan group_sample(const Evaluator& eval, const CandidatePrompt& seed, const DescriptionPools& vd,
                              const SamplingConfig& cfg) {
  const auto& images = eval.images();
  const std::size_t n_classes = eval.library().n_classes();
  GroupPlan plan;
  plan.n_worst = std::min(cfg.n_worst.value_or(default_group_count(n_classes)), n_classes);
  plan.n_salient = std::min(cfg.n_salient.value_or(default_group_count(n_classes)), n_classes);
  plan.misclass.assign(n_classes, {});
  plan.class_accuracy.assign(n_classes, 0.0);
  plan.class_gain.assign(n_classes, 0.0);

  const auto base = eval.cache(seed);
  const auto pred = predict(base.scores());
  std::vector<std::vector<std::size_t>> rows(n_classes);
  for (std::size_t i = 0; i < images.n_rows(); ++i) {
    const ClassId y = images.labels()[i];
    rows[y].push_back(i);
    if (pred[i] != y) plan.misclass[y].insert(pred[i]);
  }

  std::vector<ClassId> candidates;
  const double alpha = eval.params().alpha, tau = eval.params().tau;
  for (ClassId c = 0; c < n_classes; ++c) {
    if (rows[c].empty()) continue;
    candidates.push_back(c);
    std::size_t correct = 0;
    for (auto i : rows[c]) correct += pred[i] == c ? 1 : 0;
    plan.class_accuracy[c] = static_cast<double>(correct) / static_cast<double>(rows[c].size());
    std::vector<TextId> add;
    for (TextId t : vd.at(c)) {
      if (!base.members(c).contains(t)) add.push_back(t);
    }
    if (add.empty()) continue;
    const auto before = base.breakdown(images.labels(), rows[c], alpha, tau);
    const auto after = apply_delta(base, c, add, {}).breakdown(images.labels(), rows[c], alpha, tau);
    plan.class_gain[c] = after.fitness - before.fitness;
  }

  auto worst = candidates;
  std::stable_sort(worst.begin(), worst.end(),
                   [&](ClassId a, ClassId b) { return plan.class_accuracy[a] < plan.class_accuracy[b]; });
  worst.resize(std::min(worst.size(), plan.n_worst));
  auto salient = candidates;
  std::stable_sort(salient.begin(), salient.end(),
                   [&](ClassId a, ClassId b) { return plan.class_gain[a] > plan.class_gain[b]; });
  salient.resize(std::min(salient.size(), plan.n_salient));

  auto add_group = [&](ClassId anchor, GroupProvenance prov) {
    std::set<ClassId> members = plan.misclass[anchor];
    members.insert(anchor);
    ClassGroup g{{members.begin(), members.end()}, prov, anchor};
    const bool dup = std::any_of(plan.groups.begin(), plan.groups.end(),
                                 [&](const ClassGroup& h) { return h.classes == g.classes; });
    if (!dup) plan.groups.push_back(std::move(g));
  };
  for (ClassId c : worst) add_group(c, GroupProvenance::Worst);
  for (ClassId c : salient) add_group(c, GroupProvenance::Salient);
  return plan;
}

}  // namespace proapo
