#pragma once

/// @file report.hpp
/// @brief Post-run diagnostics over a run directory.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "proapo/driver.hpp"

namespace proapo {

/// Parses trace.csv back into rows.
inline std::vector<TraceRow> read_trace_csv(const fs::path& path) {
  std::istringstream in(detail::read_file(path));
  std::string line;
  std::vector<TraceRow> rows;
  if (!std::getline(in, line) || line.rfind("phase,", 0) != 0) {
    throw Error(ErrorCode::ParseError, path.string() + ": missing trace header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream cells(line);
    for (std::string cell; std::getline(cells, cell, ',');) f.push_back(cell);
    if (f.size() != 7) throw Error(ErrorCode::ParseError, path.string() + ": malformed row '" + line + "'");
    try {
      TraceRow r;
      r.phase = f[0] == "template" ? Phase::Template : Phase::Description;
      r.group = std::stoi(f[1]);
      r.record = {std::stoul(f[2]), f[3], std::stod(f[4]), std::stoul(f[5]), std::stoul(f[6])};
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::ParseError, path.string() + ": malformed row '" + line + "'");
    }
  }
  return rows;
}

struct LoggedCandidate {
  Phase phase = Phase::Template;
  int group = -1;
  CandidatePrompt candidate;
  double fitness = 0.0;
  double accuracy = 0.0;
};

inline std::vector<LoggedCandidate> read_candidate_log(const fs::path& path) {
  std::istringstream in(detail::read_file(path));
  std::vector<LoggedCandidate> out;
  std::string line;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      LoggedCandidate c;
      c.phase = j.at("phase").get<std::string>() == "template" ? Phase::Template : Phase::Description;
      c.group = j.at("group").get<int>();
      c.candidate = candidate_from_json(j);
      c.fitness = j.at("fitness").get<double>();
      c.accuracy = j.at("accuracy").get<double>();
      out.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return out;
}

struct PccReport {
  std::size_t n_candidates = 0;
  double pcc = 0.0;
  std::vector<double> train_fitness;
  std::vector<double> test_accuracy;
};

/// PCC between logged training fitness and test accuracy, one point per
/// distinct logged candidate (first occurrence kept). The run's library and
/// text bundles are re-bound from the config snapshot in result.json.
inline PccReport fitness_test_pcc(const fs::path& run_dir, const fs::path& test_bundle) {
  const auto result = run_result_from_json(read_json(run_dir / "result.json"));
  const auto cfg = run_config_from_json(result.config_snapshot, run_dir);
  Workspace ws = load_workspace(cfg);
  if (cfg.mode == EncodeMode::TwoPhase && result.phase_completed == Phase::Description) {
    const auto manifest = description_manifest(ws.library, integration_for(result.template_candidate));
    attach_descriptions(ws, manifest, load_required(*cfg.description_bundle, "description bundle"));
  }
  const auto test = load_required(test_bundle, "test bundle");
  Evaluator eval(test, ws.texts, ws.library, cfg.scoring);

  PccReport r;
  std::set<CandidatePrompt, CandidateValueLess> seen;
  for (const auto& c : read_candidate_log(run_dir / "candidates.jsonl")) {
    if (!seen.insert(c.candidate).second) continue;
    r.train_fitness.push_back(c.fitness);
    r.test_accuracy.push_back(eval.evaluate(c.candidate).accuracy);
  }
  r.n_candidates = r.train_fitness.size();
  r.pcc = pcc(r.train_fitness, r.test_accuracy);
  return r;
}

/// Text stores and per-class text lists named by a prompt.json file.
struct PromptFile {
  EmbeddingStore texts;
  ClassTexts class_texts;
};

/// Loads the text bundles a prompt file references (concatenated in order)
/// and resolves every text_id, checking its source_text.
inline PromptFile load_prompt_file(const fs::path& path) {
  const auto j = read_json(path);
  const auto base = fs::absolute(path).parent_path();
  try {
    PromptFile out;
    bool first = true;
    for (const auto& b : j.at("text_bundles")) {
      auto store = load_required(detail::resolve_path(base, b.get<std::string>()), "text bundle");
      out.texts = first ? std::move(store) : concat_texts(out.texts, store);
      first = false;
    }
    if (first) throw Error(ErrorCode::UnboundId, path.string() + ": no text bundles listed");
    const auto& classes = j.at("classes");
    out.class_texts.assign(classes.size(), {});
    for (const auto& c : classes) {
      const auto cid = c.at("class_id").get<std::size_t>();
      if (cid >= classes.size()) throw Error(ErrorCode::UnboundId, "prompt class ids must be dense");
      for (const auto& t : c.at("texts")) {
        const auto id = t.at("text_id").get<TextId>();
        if (id >= out.texts.n_rows() || out.texts.meta()[id].source_text != t.at("source_text").get<std::string>()) {
          throw Error(ErrorCode::UnboundId, "text " + std::to_string(id) + " does not resolve in the bundles");
        }
        out.class_texts[cid].push_back(id);
      }
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

/// Scores a prompt file against an image bundle.
inline ScoreBreakdown score_prompt(const PromptFile& prompt, const EmbeddingStore& images, double alpha,
                                   double tau) {
  if (images.kind() != BundleKind::Image) throw Error(ErrorCode::CountMismatch, "expected an image bundle");
  if (prompt.class_texts.size() != images.n_classes()) {
    throw Error(ErrorCode::CountMismatch, "prompt and image bundle disagree on class count");
  }
  return fitness_from_scores(class_scores(images, prompt.texts, prompt.class_texts), images.labels(), alpha, tau);
}

}  // namespace proapo
