#pragma once

/// @file driver.hpp
/// @brief End-to-end orchestration: template phase, prompt-sampling
/// initialization, group sampling and the group-wise description phase.
///
/// Two encode modes are supported. In pre-integrated mode one text bundle
/// holds template instances and descriptions. In two-phase mode the first
/// text bundle holds template instances only; once the best template set is
/// known the run writes a description manifest (integrated with those
/// templates) and stops with RunStatus::ManifestPending. Re-running with the
/// encoded description bundle resumes from the checkpoint.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "proapo/candidate.hpp"
#include "proapo/detail/digest.hpp"
#include "proapo/embedding_store.hpp"
#include "proapo/error.hpp"
#include "proapo/prompt_library.hpp"
#include "proapo/sampling.hpp"
#include "proapo/scoring.hpp"
#include "proapo/search.hpp"

namespace proapo {

namespace fs = std::filesystem;

enum class EncodeMode { PreIntegrated, TwoPhase };
enum class EvalScope { Full, Group };

struct LibrarySource {
  std::optional<fs::path> combined;  // single library.json
  std::optional<fs::path> templates;
  std::optional<fs::path> domains;
  std::optional<fs::path> classes;
  std::optional<fs::path> descriptions;
};

struct RunConfig {
  fs::path train_bundle;
  fs::path text_bundle;
  std::optional<fs::path> description_bundle;  // two-phase only
  LibrarySource library;
  EncodeMode mode = EncodeMode::PreIntegrated;
  EvalScope scope = EvalScope::Full;
  std::vector<IntegrationSlot> integration{std::nullopt};  // pre-integrated only
  SearchConfig search;
  SamplingConfig sampling;
  ScoringParams scoring;
  fs::path output_dir = "run";
  bool log_candidates = false;
};

namespace detail {

inline fs::path resolve_path(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

inline void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                       std::string_view where) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw Error(ErrorCode::ConfigInvalid, "unknown key '" + key + "' in " + std::string(where));
  }
}

}  // namespace detail

/// Parses a run config. Relative paths are resolved against `base_dir`.
inline RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  try {
    if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, "run config must be a JSON object");
    detail::check_keys(j,
                       {"train_bundle", "text_bundle", "description_bundle", "library", "templates", "domains",
                        "classes", "descriptions", "mode", "scope", "integration", "search", "sampling", "scoring",
                        "output_dir", "log_candidates"},
                       "run config");
    RunConfig cfg;
    auto path = [&](const char* key) { return detail::resolve_path(base_dir, j.at(key).get<std::string>()); };
    auto opt_path = [&](const char* key) -> std::optional<fs::path> {
      if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
      return path(key);
    };
    cfg.train_bundle = path("train_bundle");
    cfg.text_bundle = path("text_bundle");
    cfg.description_bundle = opt_path("description_bundle");
    cfg.library.combined = opt_path("library");
    cfg.library.templates = opt_path("templates");
    cfg.library.domains = opt_path("domains");
    cfg.library.classes = opt_path("classes");
    cfg.library.descriptions = opt_path("descriptions");
    if (!cfg.library.combined && (!cfg.library.templates || !cfg.library.classes)) {
      throw Error(ErrorCode::ConfigInvalid, "config needs 'library' or both 'templates' and 'classes'");
    }
    const auto mode = j.value("mode", std::string("pre_integrated"));
    if (mode == "pre_integrated") {
      cfg.mode = EncodeMode::PreIntegrated;
    } else if (mode == "two_phase") {
      cfg.mode = EncodeMode::TwoPhase;
    } else {
      throw Error(ErrorCode::ConfigInvalid, "mode must be pre_integrated or two_phase");
    }
    const auto scope = j.value("scope", std::string("full_scope"));
    if (scope == "full_scope") {
      cfg.scope = EvalScope::Full;
    } else if (scope == "group_scope") {
      cfg.scope = EvalScope::Group;
    } else {
      throw Error(ErrorCode::ConfigInvalid, "scope must be full_scope or group_scope");
    }
    if (j.contains("integration")) {
      cfg.integration.clear();
      for (const auto& s : j.at("integration")) {
        if (s.is_string() && s.get<std::string>() == "standalone") {
          cfg.integration.emplace_back(std::nullopt);
        } else {
          cfg.integration.emplace_back(s.get<std::uint32_t>());
        }
      }
    }
    if (j.contains("search")) {
      const auto& s = j.at("search");
      detail::check_keys(s, {"T", "M", "N", "k", "seed", "workers"}, "search");
      cfg.search.iterations = s.value("T", cfg.search.iterations);
      cfg.search.edit_steps = s.value("M", cfg.search.edit_steps);
      cfg.search.evolution_steps = s.value("N", cfg.search.evolution_steps);
      cfg.search.population_size = s.value("k", cfg.search.population_size);
      cfg.search.seed = s.value("seed", cfg.search.seed);
      cfg.search.workers = s.value("workers", cfg.search.workers);
    }
    if (j.contains("sampling")) {
      const auto& s = j.at("sampling");
      detail::check_keys(s, {"T_sample", "K_max", "n_wst", "n_sln"}, "sampling");
      cfg.sampling.samples = s.value("T_sample", cfg.sampling.samples);
      cfg.sampling.max_per_class = s.value("K_max", cfg.sampling.max_per_class);
      if (s.contains("n_wst") && !s.at("n_wst").is_null()) cfg.sampling.n_worst = s.at("n_wst").get<std::size_t>();
      if (s.contains("n_sln") && !s.at("n_sln").is_null()) cfg.sampling.n_salient = s.at("n_sln").get<std::size_t>();
    }
    if (j.contains("scoring")) {
      const auto& s = j.at("scoring");
      detail::check_keys(s, {"alpha", "tau", "synonyms_with_templates"}, "scoring");
      cfg.scoring.alpha = s.value("alpha", cfg.scoring.alpha);
      cfg.scoring.tau = s.value("tau", cfg.scoring.tau);
      cfg.scoring.synonyms_with_templates = s.value("synonyms_with_templates", false);
    }
    cfg.output_dir = detail::resolve_path(base_dir, j.value("output_dir", std::string("run")));
    cfg.log_candidates = j.value("log_candidates", false);
    cfg.search.validate();
    cfg.sampling.validate();
    if (!(cfg.scoring.alpha >= 0.0) || !(cfg.scoring.tau > 0.0)) {
      throw Error(ErrorCode::ConfigInvalid, "alpha must be >= 0 and tau > 0");
    }
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("run config: ") + e.what());
  }
}

inline RunConfig load_run_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigInvalid, e.what());
  }
  return run_config_from_json(j, fs::absolute(path).parent_path());
}

/// Fully resolved config (absolute paths, every default filled in).
inline nlohmann::json to_json(const RunConfig& cfg) {
  auto opt = [](const std::optional<fs::path>& p) { return p ? nlohmann::json(p->string()) : nlohmann::json(nullptr); };
  nlohmann::json integration = nlohmann::json::array();
  for (const auto& s : cfg.integration) integration.push_back(s ? nlohmann::json(*s) : nlohmann::json("standalone"));
  nlohmann::json j = {
      {"train_bundle", cfg.train_bundle.string()},
      {"text_bundle", cfg.text_bundle.string()},
      {"description_bundle", opt(cfg.description_bundle)},
      {"mode", cfg.mode == EncodeMode::PreIntegrated ? "pre_integrated" : "two_phase"},
      {"scope", cfg.scope == EvalScope::Full ? "full_scope" : "group_scope"},
      {"integration", integration},
      {"search",
       {{"T", cfg.search.iterations},
        {"M", cfg.search.edit_steps},
        {"N", cfg.search.evolution_steps},
        {"k", cfg.search.population_size},
        {"seed", cfg.search.seed},
        {"workers", cfg.search.workers}}},
      {"sampling",
       {{"T_sample", cfg.sampling.samples},
        {"K_max", cfg.sampling.max_per_class},
        {"n_wst", cfg.sampling.n_worst ? nlohmann::json(*cfg.sampling.n_worst) : nlohmann::json(nullptr)},
        {"n_sln", cfg.sampling.n_salient ? nlohmann::json(*cfg.sampling.n_salient) : nlohmann::json(nullptr)}}},
      {"scoring",
       {{"alpha", cfg.scoring.alpha},
        {"tau", cfg.scoring.tau},
        {"synonyms_with_templates", cfg.scoring.synonyms_with_templates}}},
      {"output_dir", cfg.output_dir.string()},
      {"log_candidates", cfg.log_candidates},
  };
  if (cfg.library.combined) j["library"] = cfg.library.combined->string();
  if (cfg.library.templates) j["templates"] = cfg.library.templates->string();
  if (cfg.library.domains) j["domains"] = cfg.library.domains->string();
  if (cfg.library.classes) j["classes"] = cfg.library.classes->string();
  if (cfg.library.descriptions) j["descriptions"] = cfg.library.descriptions->string();
  return j;
}

inline PromptLibrary load_library(const LibrarySource& src) {
  if (src.combined) return load_library(*src.combined);
  return load_library(*src.templates, src.domains, *src.classes, src.descriptions);
}

struct TraceRow {
  Phase phase = Phase::Template;
  int group = -1;  // -1 during the template phase
  IterationRecord record;

  friend bool operator==(const TraceRow& a, const TraceRow& b) {
    return a.phase == b.phase && a.group == b.group && a.record.iteration == b.record.iteration &&
           a.record.step == b.record.step && a.record.best_fitness == b.record.best_fitness &&
           a.record.population == b.record.population && a.record.evaluations == b.record.evaluations;
  }
};

enum class RunStatus { Completed, ManifestPending };

struct RunResult {
  CandidatePrompt best_candidate;
  ScoreBreakdown best_score;
  ScoreBreakdown base_score;      // the single base template
  CandidatePrompt template_candidate;
  ScoreBreakdown template_score;  // best of the template phase
  std::optional<Member> init;     // description-phase starting point
  std::vector<TraceRow> trace;
  GroupPlan group_plan;
  nlohmann::json config_snapshot;
  Phase phase_completed = Phase::Template;
  std::string template_fingerprint;
  std::string description_fingerprint;
};

inline nlohmann::json to_json(const RunResult& r) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& t : r.trace) {
    trace.push_back({{"phase", to_string(t.phase)},
                     {"group", t.group},
                     {"iteration", t.record.iteration},
                     {"step", t.record.step},
                     {"best_fitness", t.record.best_fitness},
                     {"population", t.record.population},
                     {"evals", t.record.evaluations}});
  }
  nlohmann::json j = {{"phase_completed", to_string(r.phase_completed)},
                      {"best_candidate", to_json(r.best_candidate)},
                      {"best_score", to_json(r.best_score)},
                      {"base_score", to_json(r.base_score)},
                      {"template_candidate", to_json(r.template_candidate)},
                      {"template_score", to_json(r.template_score)},
                      {"init_candidate", r.init ? to_json(r.init->candidate) : nlohmann::json(nullptr)},
                      {"init_score", r.init ? to_json(r.init->score) : nlohmann::json(nullptr)},
                      {"trace", std::move(trace)},
                      {"group_plan", to_json(r.group_plan)},
                      {"template_fingerprint", r.template_fingerprint},
                      {"description_fingerprint", r.description_fingerprint},
                      {"config_snapshot", r.config_snapshot}};
  return j;
}

inline RunResult run_result_from_json(const nlohmann::json& j) {
  try {
    RunResult r;
    r.phase_completed = j.at("phase_completed").get<std::string>() == "template" ? Phase::Template : Phase::Description;
    r.best_candidate = candidate_from_json(j.at("best_candidate"));
    r.best_score = score_from_json(j.at("best_score"));
    r.base_score = score_from_json(j.at("base_score"));
    r.template_candidate = candidate_from_json(j.at("template_candidate"));
    r.template_score = score_from_json(j.at("template_score"));
    if (!j.at("init_candidate").is_null()) {
      r.init = Member{candidate_from_json(j.at("init_candidate")), score_from_json(j.at("init_score"))};
    }
    for (const auto& t : j.at("trace")) {
      TraceRow row;
      row.phase = t.at("phase").get<std::string>() == "template" ? Phase::Template : Phase::Description;
      row.group = t.at("group").get<int>();
      row.record = {t.at("iteration").get<std::size_t>(), t.at("step").get<std::string>(),
                    t.at("best_fitness").get<double>(), t.at("population").get<std::size_t>(),
                    t.at("evals").get<std::size_t>()};
      r.trace.push_back(std::move(row));
    }
    r.group_plan = group_plan_from_json(j.at("group_plan"));
    r.template_fingerprint = j.at("template_fingerprint").get<std::string>();
    r.description_fingerprint = j.at("description_fingerprint").get<std::string>();
    r.config_snapshot = j.at("config_snapshot");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("result.json: ") + e.what());
  }
}

inline std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream out;
  out.precision(17);
  out << "phase,group,iteration,step,best_fitness,population,evals\n";
  for (const auto& t : trace) {
    out << to_string(t.phase) << ',' << t.group << ',' << t.record.iteration << ',' << t.record.step << ','
        << t.record.best_fitness << ',' << t.record.population << ',' << t.record.evaluations << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Phases

struct PhaseOutcome {
  Member best;
  Population population;
  std::vector<IterationRecord> trace;
};

/// Template phase: seed with the base template alone and search over every
/// library template.
inline PhaseOutcome optimize_templates(const Evaluator& eval, const SearchConfig& cfg, Rng& rng, TagSource& tags,
                                       const EvaluationObserver& observer = {}) {
  const auto& lib = eval.library();
  if (lib.n_templates() == 0) throw Error(ErrorCode::NoTemplates, "library has no templates");
  CandidatePrompt seed({lib.base_template()}, lib.n_classes());
  seed.generation_tag = tags.next();
  Population population(cfg.population_size);
  population.merge({{seed, eval.evaluate(seed)}});
  ElementPool pool;
  for (std::uint32_t t = 0; t < lib.n_templates(); ++t) pool.push_back({0, t});
  PhaseOutcome out{population.best(), population, {}};
  ApoContext ctx{rng, tags, &out.trace, observer};
  out.population = apo_loop(eval, std::move(population), pool, cfg, {Phase::Template, {}}, ctx);
  out.best = out.population.best();
  return out;
}

struct DescriptionOutcome {
  Member best;
  Member init;
  std::vector<TraceRow> trace;
};

/// Description phase: prompt-sampled start, then one APO call per group with
/// the population carried across groups. With EvalScope::Group each group is
/// scored on the images of its own classes and the final population is
/// re-scored on every image.
inline DescriptionOutcome optimize_descriptions(Evaluator& eval, const CandidatePrompt& template_best,
                                                const DescriptionPools& vd, const GroupPlan& plan,
                                                const SearchConfig& search, const SamplingConfig& sampling,
                                                EvalScope scope, Rng& sample_rng, Rng& search_rng, TagSource& tags,
                                                const EvaluationObserver& observer = {}, int* group_cursor = nullptr) {
  eval.restrict_rows(std::nullopt);
  DescriptionOutcome out;
  out.init = prompt_sample_init(eval, template_best, vd, sampling, sample_rng, tags, observer, search.workers);
  Population population(search.population_size);
  population.merge({out.init});
  for (std::size_t g = 0; g < plan.groups.size(); ++g) {
    const auto& group = plan.groups[g];
    if (group_cursor) *group_cursor = static_cast<int>(g);
    if (scope == EvalScope::Group) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < eval.images().n_rows(); ++i) {
        if (std::binary_search(group.classes.begin(), group.classes.end(), eval.images().labels()[i])) rows.push_back(i);
      }
      eval.restrict_rows(std::move(rows));
      Population rescored(search.population_size);
      rescored.merge(score_members(eval, population.candidates(), search.workers, {}));
      population = std::move(rescored);
    }
    std::vector<IterationRecord> records;
    ApoContext ctx{search_rng, tags, &records, observer};
    population = apo_loop(eval, std::move(population), group_pool(vd, group.classes), search,
                          {Phase::Description, group.classes}, ctx);
    for (auto& r : records) out.trace.push_back({Phase::Description, static_cast<int>(g), std::move(r)});
  }
  if (group_cursor) *group_cursor = -1;
  if (scope == EvalScope::Group) {
    eval.restrict_rows(std::nullopt);
    Population rescored(search.population_size);
    rescored.merge(score_members(eval, population.candidates(), search.workers, {}));
    population = std::move(rescored);
  }
  out.best = population.best();
  return out;
}

// ---------------------------------------------------------------------------
// Loading

/// Library, images and text store of a run, bound and ready for scoring.
struct Workspace {
  PromptLibrary library;  // bound
  EmbeddingStore train;
  EmbeddingStore texts;
  EncodeManifest template_manifest;  // first (or only) text bundle's manifest
};

inline EmbeddingStore load_required(const fs::path& p, std::string_view what) {
  if (!fs::exists(p)) throw Error(ErrorCode::MissingInput, std::string(what) + " " + p.string() + " not found");
  return load_bundle(p);
}

/// Loads the library, the training bundle and the first text bundle. In
/// two-phase mode only template instances are bound.
inline Workspace load_workspace(const RunConfig& cfg) {
  Workspace ws;
  auto lib = load_library(cfg.library);
  ws.train = load_required(cfg.train_bundle, "train bundle");
  if (ws.train.kind() != BundleKind::Image) throw Error(ErrorCode::CountMismatch, "train bundle is not an image bundle");
  if (ws.train.n_classes() != lib.n_classes()) {
    throw Error(ErrorCode::CountMismatch, "train bundle and library disagree on class count");
  }
  ws.texts = load_required(cfg.text_bundle, "text bundle");
  ws.template_manifest =
      instantiate_manifest(lib, cfg.mode == EncodeMode::TwoPhase ? std::vector<IntegrationSlot>{} : cfg.integration);
  ws.library = bind_embeddings(lib, ws.template_manifest, ws.texts);
  return ws;
}

/// Integration slots requested for the description bundle in two-phase mode.
inline std::vector<IntegrationSlot> integration_for(const CandidatePrompt& template_best) {
  std::vector<IntegrationSlot> out;
  for (auto t : template_best.template_ids) out.emplace_back(t);
  return out;
}

/// Adds the description bundle (two-phase) to a workspace.
inline void attach_descriptions(Workspace& ws, const EncodeManifest& manifest, const EmbeddingStore& encoded) {
  const auto offset = static_cast<TextId>(ws.texts.n_rows());
  ws.library = bind_embeddings(ws.library, manifest, encoded, offset);
  ws.texts = concat_texts(ws.texts, encoded);
}

// ---------------------------------------------------------------------------
// Outputs

inline nlohmann::json prompt_json(const RunConfig& cfg, const Workspace& ws, const CandidatePrompt& p,
                                  const ScoringParams& params) {
  nlohmann::json bundles = nlohmann::json::array({cfg.text_bundle.string()});
  if (cfg.mode == EncodeMode::TwoPhase && cfg.description_bundle) bundles.push_back(cfg.description_bundle->string());
  const auto d = resolve(ws.library, ws.texts, p, params);
  nlohmann::json classes = nlohmann::json::array();
  for (ClassId c = 0; c < ws.library.n_classes(); ++c) {
    nlohmann::json templates = nlohmann::json::array();
    for (auto t : p.template_ids) templates.push_back(ws.library.templates()[t]);
    nlohmann::json texts = nlohmann::json::array();
    for (TextId id : d[c]) {
      const auto& m = ws.texts.meta()[id];
      texts.push_back({{"text_id", id}, {"kind", to_string(m.kind)}, {"source_text", m.source_text}});
    }
    classes.push_back({{"class_id", c},
                       {"name", ws.library.classes()[c].name},
                       {"templates", std::move(templates)},
                       {"texts", std::move(texts)}});
  }
  return {{"text_bundles", std::move(bundles)}, {"classes", std::move(classes)}};
}

/// Appends one JSON line per evaluated candidate.
class CandidateLog {
 public:
  CandidateLog(const fs::path& path, bool append) : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  }

  void write(Phase phase, int group, const CandidatePrompt& p, const ScoreBreakdown& s) {
    nlohmann::json j = {{"phase", to_string(phase)},     {"group", group},
                        {"digest", digest(p)},           {"fitness", s.fitness},
                        {"accuracy", s.accuracy},        {"template_ids", p.template_ids},
                        {"desc_ids", p.desc_ids}};
    out_ << j.dump() << '\n';
  }

 private:
  std::ofstream out_;
};

struct RunOutcome {
  RunStatus status = RunStatus::Completed;
  RunResult result;
};

inline void write_text(const fs::path& path, const std::string& text) { detail::write_file(path, text); }

namespace detail {

// Config fields a resumed run may legitimately change.
inline nlohmann::json checkpoint_key(nlohmann::json snapshot) {
  snapshot.erase("description_bundle");
  snapshot.erase("log_candidates");
  if (snapshot.contains("search")) snapshot["search"].erase("workers");
  return snapshot;
}

}  // namespace detail

/// Full pipeline for one config. Writes result.json, trace.csv and (when
/// completed) prompt.json into the output directory; in two-phase mode
/// without description embeddings writes manifest.json and a template-phase
/// checkpoint instead.
inline RunOutcome run_proapo(const RunConfig& cfg) {
  cfg.search.validate();
  cfg.sampling.validate();
  Workspace ws = load_workspace(cfg);
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + cfg.output_dir.string());

  RunResult result;
  result.config_snapshot = to_json(cfg);
  result.template_fingerprint = ws.template_manifest.fingerprint;

  const fs::path result_path = cfg.output_dir / "result.json";
  std::optional<RunResult> checkpoint;
  if (cfg.mode == EncodeMode::TwoPhase && fs::exists(result_path)) {
    auto prev = run_result_from_json(read_json(result_path));
    if (prev.phase_completed == Phase::Template && prev.template_fingerprint == ws.template_manifest.fingerprint &&
        detail::checkpoint_key(prev.config_snapshot) == detail::checkpoint_key(result.config_snapshot)) {
      checkpoint = std::move(prev);
    }
  }

  std::optional<CandidateLog> log;
  if (cfg.log_candidates) log.emplace(cfg.output_dir / "candidates.jsonl", checkpoint.has_value());
  Phase log_phase = Phase::Template;
  int log_group = -1;
  EvaluationObserver observer;
  if (log) {
    observer = [&](const CandidatePrompt& p, const ScoreBreakdown& s) { log->write(log_phase, log_group, p, s); };
  }

  Rng template_rng(detail::seed_of(cfg.search.seed, 1));
  Rng sample_rng(detail::seed_of(cfg.search.seed, 2));
  Rng search_rng(detail::seed_of(cfg.search.seed, 3));
  TagSource template_tags(1);
  TagSource description_tags(std::uint64_t{1} << 40);

  {
    Evaluator eval(ws.train, ws.texts, ws.library, cfg.scoring);
    if (checkpoint) {
      result.template_candidate = checkpoint->template_candidate;
      result.template_score = eval.evaluate(result.template_candidate);
      if (std::abs(result.template_score.fitness - checkpoint->template_score.fitness) > 1e-9) {
        throw Error(ErrorCode::FingerprintMismatch, "checkpoint does not re-score to its recorded fitness");
      }
      result.template_score = checkpoint->template_score;
      result.base_score = checkpoint->base_score;
      result.trace = checkpoint->trace;
    } else {
      CandidatePrompt base({ws.library.base_template()}, ws.library.n_classes());
      result.base_score = eval.evaluate(base);
      auto outcome = optimize_templates(eval, cfg.search, template_rng, template_tags, observer);
      result.template_candidate = outcome.best.candidate;
      result.template_score = outcome.best.score;
      for (auto& r : outcome.trace) result.trace.push_back({Phase::Template, -1, std::move(r)});
    }
  }
  result.template_candidate.generation_tag = 0;
  result.best_candidate = result.template_candidate;
  result.best_score = result.template_score;

  const bool has_descriptions = std::any_of(ws.library.descriptions().begin(), ws.library.descriptions().end(),
                                            [](const auto& d) { return !d.empty(); });
  if (cfg.mode == EncodeMode::TwoPhase && has_descriptions) {
    const auto manifest = description_manifest(ws.library, integration_for(result.template_candidate));
    result.description_fingerprint = manifest.fingerprint;
    if (!cfg.description_bundle || !fs::exists(*cfg.description_bundle)) {
      write_text(cfg.output_dir / "manifest.json", manifest_to_json(manifest).dump(1));
      result.phase_completed = Phase::Template;
      write_text(result_path, to_json(result).dump(1));
      write_text(cfg.output_dir / "trace.csv", trace_csv(result.trace));
      return {RunStatus::ManifestPending, std::move(result)};
    }
    attach_descriptions(ws, manifest, load_bundle(*cfg.description_bundle));
  }

  Evaluator eval(ws.train, ws.texts, ws.library, cfg.scoring);
  const auto vd = description_pools(ws.library, result.template_candidate.template_ids,
                                    cfg.scoring.synonyms_with_templates);
  result.group_plan = group_sample(eval, result.template_candidate, vd, cfg.sampling);
  log_phase = Phase::Description;
  auto outcome = optimize_descriptions(eval, result.template_candidate, vd, result.group_plan, cfg.search,
                                       cfg.sampling, cfg.scope, sample_rng, search_rng, description_tags, observer,
                                       &log_group);
  result.init = outcome.init;
  for (auto& r : outcome.trace) result.trace.push_back(std::move(r));
  result.best_candidate = outcome.best.candidate;
  result.best_candidate.generation_tag = 0;
  eval.restrict_rows(std::nullopt);
  result.best_score = eval.evaluate(result.best_candidate);
  result.phase_completed = Phase::Description;

  write_text(result_path, to_json(result).dump(1));
  write_text(cfg.output_dir / "trace.csv", trace_csv(result.trace));
  write_text(cfg.output_dir / "prompt.json", prompt_json(cfg, ws, result.best_candidate, cfg.scoring).dump(1));
  return {RunStatus::Completed, std::move(result)};
}

}  // namespace proapo
