#pragma once

/// @file search.hpp
/// @brief Edit- and evolution-based candidate generation and the iterative
/// generate / score / keep-top-k loop.
///
/// Elements are template ids during the template phase and (class, text id)
/// pairs during the description phase. A SearchScope names the phase and, for
/// descriptions, the classes of the group being optimized; operators never
/// touch anything outside the scope.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "proapo/candidate.hpp"
#include "proapo/error.hpp"
#include "proapo/scoring.hpp"

namespace proapo {

enum class Phase { Template, Description };

inline std::string_view to_string(Phase p) noexcept {
  return p == Phase::Template ? "template" : "description";
}

struct Element {
  ClassId class_id = 0;  // unused in the template phase
  std::uint32_t id = 0;  // template id or text id

  friend auto operator<=>(const Element&, const Element&) = default;
};

using ElementPool = std::vector<Element>;

struct SearchScope {
  Phase phase = Phase::Template;
  std::vector<ClassId> classes;  // description phase only

  [[nodiscard]] bool covers(ClassId c) const {
    return std::find(classes.begin(), classes.end(), c) != classes.end();
  }
};

struct SearchConfig {
  std::size_t iterations = 4;       // T
  std::size_t edit_steps = 8;       // M
  std::size_t evolution_steps = 8;  // N
  std::size_t population_size = 4;  // k
  std::uint64_t seed = 1;
  std::size_t workers = 1;

  void validate() const {
    if (iterations < 1) throw Error(ErrorCode::ConfigInvalid, "iterations must be >= 1");
    if (population_size < 1) throw Error(ErrorCode::ConfigInvalid, "population size must be >= 1");
  }
};

using Rng = std::mt19937_64;

/// Uniform index in [0, n).
inline std::size_t draw_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

/// `count` distinct items drawn uniformly from `items` (partial Fisher-Yates);
/// output keeps draw order.
template <typename T>
std::vector<T> draw_subset(std::vector<T> items, std::size_t count, Rng& rng) {
  count = std::min(count, items.size());
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(items[i], items[i + draw_index(rng, items.size() - i)]);
  }
  items.resize(count);
  return items;
}

/// Monotone generation tags for one run.
class TagSource {
 public:
  explicit TagSource(std::uint64_t next = 1) : next_(next) {}
  std::uint64_t next() noexcept { return next_++; }
  [[nodiscard]] std::uint64_t peek() const noexcept { return next_; }

 private:
  std::uint64_t next_;
};

// ---------------------------------------------------------------------------
// Element helpers

inline bool contains(const CandidatePrompt& p, const Element& e, Phase phase) {
  return phase == Phase::Template ? p.template_ids.contains(e.id) : p.desc_ids.at(e.class_id).contains(e.id);
}

inline CandidatePrompt with_added(CandidatePrompt p, const Element& e, Phase phase) {
  if (phase == Phase::Template) {
    p.template_ids.insert(e.id);
  } else {
    p.desc_ids.at(e.class_id).insert(e.id);
  }
  return p;
}

inline CandidatePrompt with_removed(CandidatePrompt p, const Element& e, Phase phase) {
  if (phase == Phase::Template) {
    p.template_ids.erase(e.id);
  } else {
    p.desc_ids.at(e.class_id).erase(e.id);
  }
  return p;
}

/// Elements of `p` that the scope may edit.
inline std::vector<Element> scoped_elements(const CandidatePrompt& p, const SearchScope& scope) {
  std::vector<Element> out;
  if (scope.phase == Phase::Template) {
    for (auto t : p.template_ids) out.push_back({0, t});
  } else {
    for (ClassId c : scope.classes) {
      for (auto id : p.desc_ids.at(c)) out.push_back({c, id});
    }
  }
  return out;
}

/// Pool elements usable in `scope` that `p` does not already contain.
inline std::vector<Element> fresh_elements(const CandidatePrompt& p, const ElementPool& pool,
                                           const SearchScope& scope) {
  std::vector<Element> out;
  for (const auto& e : pool) {
    if (scope.phase == Phase::Description && !scope.covers(e.class_id)) continue;
    if (!contains(p, e, scope.phase)) out.push_back(e);
  }
  return out;
}

namespace detail {

class Emitter {
 public:
  Emitter(TagSource& tags, std::span<const CandidatePrompt> existing) : tags_(tags) {
    for (const auto& p : existing) seen_.insert(p);
  }

  void emit(CandidatePrompt p) {
    if (!seen_.insert(p).second) return;
    p.generation_tag = tags_.next();
    out_.push_back(std::move(p));
  }

  std::vector<CandidatePrompt> take() { return std::move(out_); }

 private:
  TagSource& tags_;
  std::set<CandidatePrompt, CandidateValueLess> seen_;
  std::vector<CandidatePrompt> out_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Operators

/// M rounds of add / delete / replace around `parent`. Added elements come
/// from the pool minus the parent; the template phase never deletes the last
/// template. Outputs differ from the parent by exactly one edit and are
/// de-duplicated.
inline std::vector<CandidatePrompt> edit_generate(const CandidatePrompt& parent, const ElementPool& pool,
                                                  std::size_t steps, const SearchScope& scope, Rng& rng,
                                                  TagSource& tags) {
  const auto fresh = fresh_elements(parent, pool, scope);
  const auto own = scoped_elements(parent, scope);
  const bool can_delete = !own.empty() && (scope.phase == Phase::Description || parent.template_ids.size() > 1);
  detail::Emitter out(tags, std::span(&parent, 1));
  for (std::size_t m = 0; m < steps; ++m) {
    if (!fresh.empty()) out.emit(with_added(parent, fresh[draw_index(rng, fresh.size())], scope.phase));
    if (can_delete) out.emit(with_removed(parent, own[draw_index(rng, own.size())], scope.phase));
    if (!fresh.empty() && !own.empty()) {
      // A swap stays inside one class so it touches a single D(c).
      const auto& gone = own[draw_index(rng, own.size())];
      std::vector<const Element*> same;
      for (const auto& e : fresh) {
        if (e.class_id == gone.class_id) same.push_back(&e);
      }
      if (!same.empty()) {
        const auto& in = *same[draw_index(rng, same.size())];
        out.emit(with_removed(with_added(parent, in, scope.phase), gone, scope.phase));
      }
    }
  }
  return out.take();
}

/// Union of the in-scope parts of `a` and `b`. Everything outside the scope
/// comes from the parent that is smaller by value, which keeps the operator
/// commutative while never inventing out-of-scope content.
inline CandidatePrompt crossover(const CandidatePrompt& a, const CandidatePrompt& b, const SearchScope& scope) {
  const bool a_first = !CandidateValueLess{}(b, a);
  CandidatePrompt out = a_first ? a : b;
  const CandidatePrompt& other = a_first ? b : a;
  if (scope.phase == Phase::Template) {
    out.template_ids.insert(other.template_ids.begin(), other.template_ids.end());
  } else {
    for (ClassId c : scope.classes) {
      out.desc_ids.at(c).insert(other.desc_ids.at(c).begin(), other.desc_ids.at(c).end());
    }
  }
  out.generation_tag = 0;
  return out;
}

/// Size-preserving resample of every in-scope set from pool ∪ current set.
inline CandidatePrompt mutate(const CandidatePrompt& p, const ElementPool& pool, const SearchScope& scope, Rng& rng) {
  CandidatePrompt out = p;
  if (scope.phase == Phase::Template) {
    std::set<std::uint32_t> universe = p.template_ids;
    for (const auto& e : pool) universe.insert(e.id);
    const auto picked = draw_subset(std::vector<std::uint32_t>(universe.begin(), universe.end()),
                                    p.template_ids.size(), rng);
    out.template_ids = {picked.begin(), picked.end()};
  } else {
    for (ClassId c : scope.classes) {
      std::set<TextId> universe = p.desc_ids.at(c);
      for (const auto& e : pool) {
        if (e.class_id == c) universe.insert(e.id);
      }
      const auto picked = draw_subset(std::vector<TextId>(universe.begin(), universe.end()), p.desc_ids[c].size(), rng);
      out.desc_ids[c] = {picked.begin(), picked.end()};
    }
  }
  return out;
}

struct Member {
  CandidatePrompt candidate;
  ScoreBreakdown score;
};

/// Candidates ordered by fitness (descending) then generation tag
/// (ascending), at most `capacity` of them, no value duplicates.
class Population {
 public:
  explicit Population(std::size_t capacity = 4) : capacity_(capacity) {}

  [[nodiscard]] std::size_t capacity() const noexcept { return capacity_; }
  [[nodiscard]] std::size_t size() const noexcept { return members_.size(); }
  [[nodiscard]] bool empty() const noexcept { return members_.empty(); }
  [[nodiscard]] const Member& best() const { return members_.at(0); }
  [[nodiscard]] const std::vector<Member>& members() const noexcept { return members_; }
  [[nodiscard]] auto begin() const noexcept { return members_.begin(); }
  [[nodiscard]] auto end() const noexcept { return members_.end(); }

  [[nodiscard]] std::vector<CandidatePrompt> candidates() const {
    std::vector<CandidatePrompt> out;
    out.reserve(members_.size());
    for (const auto& m : members_) out.push_back(m.candidate);
    return out;
  }

  [[nodiscard]] bool contains(const CandidatePrompt& p) const {
    return std::any_of(members_.begin(), members_.end(), [&](const Member& m) { return m.candidate == p; });
  }

  /// Adds members (later duplicates of a value are dropped), re-sorts and
  /// keeps the top `capacity`.
  void merge(std::vector<Member> incoming) {
    for (auto& m : incoming) {
      if (!contains(m.candidate)) members_.push_back(std::move(m));
    }
    std::stable_sort(members_.begin(), members_.end(), [](const Member& a, const Member& b) {
      if (a.score.fitness != b.score.fitness) return a.score.fitness > b.score.fitness;
      return a.candidate.generation_tag < b.candidate.generation_tag;
    });
    if (members_.size() > capacity_) members_.resize(capacity_);
  }

  void set_capacity(std::size_t k) {
    capacity_ = k;
    if (members_.size() > capacity_) members_.resize(capacity_);
  }

 private:
  std::size_t capacity_;
  std::vector<Member> members_;
};

/// N rounds of crossover + mutation over population members.
inline std::vector<CandidatePrompt> evolve_generate(const Population& population, const ElementPool& pool,
                                                    std::size_t steps, const SearchScope& scope, Rng& rng,
                                                    TagSource& tags) {
  if (population.empty()) throw Error(ErrorCode::EmptyPopulation, "evolution needs a non-empty population");
  const auto existing = population.candidates();
  detail::Emitter out(tags, existing);
  for (std::size_t n = 0; n < steps; ++n) {
    const auto i1 = draw_index(rng, existing.size());
    const auto i2 = draw_index(rng, existing.size());
    auto child = crossover(existing[i1], existing[i2], scope);
    auto mutant = mutate(child, pool, scope, rng);
    out.emit(std::move(child));
    out.emit(std::move(mutant));
  }
  return out.take();
}

/// Scores candidates, optionally on several threads. Output order matches
/// input order.
inline std::vector<ScoreBreakdown> evaluate_all(const Evaluator& eval, std::span<const CandidatePrompt> candidates,
                                                std::size_t workers = 1) {
  std::vector<ScoreBreakdown> out(candidates.size());
  if (workers <= 1 || candidates.size() < 2) {
    for (std::size_t i = 0; i < candidates.size(); ++i) out[i] = eval.evaluate(candidates[i]);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(workers, candidates.size()); ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < candidates.size(); i = next++) {
          try {
            out[i] = eval.evaluate(candidates[i]);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

struct IterationRecord {
  std::size_t iteration = 0;  // 1-based
  std::string step;           // "edit" or "evolve"
  double best_fitness = 0.0;
  std::size_t population = 0;
  std::size_t evaluations = 0;
};

/// Called once per scored candidate, in generation order.
using EvaluationObserver = std::function<void(const CandidatePrompt&, const ScoreBreakdown&)>;

struct ApoContext {
  Rng& rng;
  TagSource& tags;
  std::vector<IterationRecord>* trace = nullptr;
  EvaluationObserver observer;
};

inline std::vector<Member> score_members(const Evaluator& eval, std::vector<CandidatePrompt> candidates,
                                         std::size_t workers, const EvaluationObserver& observer) {
  const auto scores = evaluate_all(eval, candidates, workers);
  std::vector<Member> out;
  out.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (observer) observer(candidates[i], scores[i]);
    out.push_back({std::move(candidates[i]), scores[i]});
  }
  return out;
}

/// T rounds of: edit-generate from every member, score, keep top-k; then
/// evolve from the updated population, score, keep top-k.
inline Population apo_loop(const Evaluator& eval, Population population, const ElementPool& pool,
                           const SearchConfig& cfg, const SearchScope& scope, ApoContext& ctx) {
  cfg.validate();
  population.set_capacity(cfg.population_size);
  for (std::size_t t = 1; t <= cfg.iterations; ++t) {
    const auto parents = population.candidates();
    std::vector<CandidatePrompt> generated;
    {
      std::set<CandidatePrompt, CandidateValueLess> seen(parents.begin(), parents.end());
      for (const auto& parent : parents) {
        for (auto& child : edit_generate(parent, pool, cfg.edit_steps, scope, ctx.rng, ctx.tags)) {
          if (seen.insert(child).second) generated.push_back(std::move(child));
        }
      }
    }
    const std::size_t edit_evals = generated.size();
    population.merge(score_members(eval, std::move(generated), cfg.workers, ctx.observer));
    if (ctx.trace) ctx.trace->push_back({t, "edit", population.best().score.fitness, population.size(), edit_evals});

    auto evolved = evolve_generate(population, pool, cfg.evolution_steps, scope, ctx.rng, ctx.tags);
    const std::size_t evo_evals = evolved.size();
    population.merge(score_members(eval, std::move(evolved), cfg.workers, ctx.observer));
    if (ctx.trace) ctx.trace->push_back({t, "evolve", population.best().score.fitness, population.size(), evo_evals});
  }
  return population;
}

}  // namespace proapo
