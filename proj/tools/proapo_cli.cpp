// proapo command-line tool.
//
// Exit statuses: 0 ok, 2 usage or config error, 3 data error,
// 10 two-phase run stopped for description embeddings.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "proapo/proapo.hpp"

namespace {

namespace fs = std::filesystem;
using namespace proapo;

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kData = 3;
constexpr int kManifestPending = 10;

int exit_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::ConfigInvalid:
    case ErrorCode::SpecInvalid:
      return kUsage;
    default:
      return kData;
  }
}

int cmd_synth(const SynthSpec& spec, const fs::path& out) {
  spec.validate();
  const auto b = synth_benchmark(spec);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + out.string());
  save_bundle(b.train, out / "train.bin");
  save_bundle(b.test, out / "test.bin");
  save_bundle(b.texts, out / "text.bin");
  save_bundle(synth_template_texts(b), out / "text_templates.bin");
  detail::write_file(out / "library.json", library_files_json(b.templates, {}, b.classes, b.descriptions).dump(1));
  auto key = answer_key_json(b);
  key["spec"] = to_json(spec);
  detail::write_file(out / "answer_key.json", key.dump(1));
  std::cout << "wrote " << out.string() << " (" << b.train.n_rows() << " train, " << b.test.n_rows() << " test, "
            << b.texts.n_rows() << " texts)\n";
  return kOk;
}

int cmd_optimize(const fs::path& config, bool log_candidates) {
  auto cfg = load_run_config(config);
  if (log_candidates) cfg.log_candidates = true;
  const auto outcome = run_proapo(cfg);
  const auto& r = outcome.result;
  std::printf("base      fitness %.6f  accuracy %.4f\n", r.base_score.fitness, r.base_score.accuracy);
  std::printf("templates fitness %.6f  accuracy %.4f  (%zu templates)\n", r.template_score.fitness,
              r.template_score.accuracy, r.template_candidate.template_ids.size());
  if (outcome.status == RunStatus::ManifestPending) {
    std::cout << "description embeddings needed: encode " << (cfg.output_dir / "manifest.json").string()
              << " and set description_bundle\n";
    return kManifestPending;
  }
  std::printf("best      fitness %.6f  accuracy %.4f\n", r.best_score.fitness, r.best_score.accuracy);
  std::cout << "wrote " << (cfg.output_dir / "result.json").string() << '\n';
  return kOk;
}

int cmd_score(const fs::path& prompt_path, const fs::path& bundle, double alpha, double tau,
              const std::string& out) {
  const auto prompt = load_prompt_file(prompt_path);
  const auto images = load_required(bundle, "image bundle");
  const auto s = score_prompt(prompt, images, alpha, tau);
  std::printf("accuracy %.6f\nmean_true_logprob %.9f\nfitness %.9f\n", s.accuracy, s.mean_true_logprob,
              s.fitness);
  if (!out.empty()) {
    nlohmann::json j = to_json(s);
    j["alpha"] = alpha;
    j["tau"] = tau;
    j["prompt"] = fs::absolute(prompt_path).string();
    j["bundle"] = fs::absolute(bundle).string();
    detail::write_file(out, j.dump(1));
  }
  return kOk;
}

int cmd_manifest(const fs::path& config, const std::string& out) {
  const auto cfg = load_run_config(config);
  const auto lib = load_library(cfg.library);
  const auto manifest = instantiate_manifest(
      lib, cfg.mode == EncodeMode::TwoPhase ? std::vector<IntegrationSlot>{} : cfg.integration);
  const fs::path path = out.empty() ? cfg.output_dir / "manifest.json" : fs::path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  detail::write_file(path, manifest_to_json(manifest).dump(1));
  std::cout << manifest.size() << " entries, fingerprint " << manifest.fingerprint << "\nwrote " << path.string()
            << '\n';
  return kOk;
}

int cmd_report(const fs::path& run, const std::string& test_bundle) {
  for (const char* f : {"result.json", "trace.csv"}) {
    if (!fs::exists(run / f)) throw Error(ErrorCode::MissingInput, (run / f).string() + " not found");
  }
  const auto result = run_result_from_json(read_json(run / "result.json"));
  std::printf("phase_completed %s\n", std::string(to_string(result.phase_completed)).c_str());
  std::printf("%-12s %6s %9s %7s %18s %10s %6s\n", "phase", "group", "iteration", "step", "best_fitness",
              "population", "evals");
  for (const auto& t : read_trace_csv(run / "trace.csv")) {
    std::printf("%-12s %6d %9zu %7s %18.9f %10zu %6zu\n", std::string(to_string(t.phase)).c_str(), t.group,
                t.record.iteration, t.record.step.c_str(), t.record.best_fitness, t.record.population,
                t.record.evaluations);
  }
  std::printf("best fitness %.9f accuracy %.6f\n", result.best_score.fitness, result.best_score.accuracy);
  if (!test_bundle.empty()) {
    if (!fs::exists(run / "candidates.jsonl")) {
      throw Error(ErrorCode::MissingInput, "candidates.jsonl not found; rerun optimize with --log-candidates");
    }
    const auto r = fitness_test_pcc(run, test_bundle);
    std::printf("train-fitness vs test-accuracy PCC %.6f over %zu candidates\n", r.pcc, r.n_candidates);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-ensemble optimization over precomputed embeddings"};
  app.require_subcommand(1);

  SynthSpec spec;
  std::string synth_out = "synth";
  auto* synth = app.add_subcommand("synth", "Write a planted synthetic benchmark (exit 2 on invalid spec)");
  synth->add_option("--out", synth_out, "Output directory")->capture_default_str();
  synth->add_option("--classes", spec.n_classes, "Number of classes")->capture_default_str();
  synth->add_option("--dim", spec.dim, "Embedding dimension")->capture_default_str();
  synth->add_option("--train", spec.n_img_train, "Training images")->capture_default_str();
  synth->add_option("--test", spec.n_img_test, "Test images")->capture_default_str();
  synth->add_option("--templates", spec.n_templates, "Templates in the library")->capture_default_str();
  synth->add_option("--descs", spec.n_desc_per_class, "Descriptions per class")->capture_default_str();
  synth->add_option("--planted", spec.n_planted_per_class, "Planted descriptions per class")->capture_default_str();
  synth->add_option("--sigma", spec.noise_sigma, "Image noise standard deviation")->capture_default_str();
  synth->add_option("--seed", spec.seed, "Seed")->capture_default_str();

  std::string config;
  bool log_candidates = false;
  auto* optimize = app.add_subcommand(
      "optimize", "Run the optimizer (exit 0 done, 2 config error, 3 data error, 10 manifest pending)");
  optimize->add_option("--config", config, "Run config JSON")->required();
  optimize->add_flag("--log-candidates", log_candidates, "Write every evaluated candidate to candidates.jsonl");

  std::string prompt, bundle, score_out;
  double alpha = ScoringParams{}.alpha, tau = ScoringParams{}.tau;
  auto* score = app.add_subcommand("score", "Score a prompt file on an image bundle (exit 3 on unresolvable texts)");
  score->add_option("--prompt", prompt, "prompt.json written by optimize")->required();
  score->add_option("--bundle", bundle, "Image bundle")->required();
  score->add_option("--alpha", alpha, "Confidence weight")->capture_default_str();
  score->add_option("--tau", tau, "Softmax temperature")->capture_default_str();
  score->add_option("--out", score_out, "Write the report as JSON here");

  std::string manifest_config, manifest_out;
  auto* manifest = app.add_subcommand("manifest", "Write the encode manifest for a config without optimizing");
  manifest->add_option("--config", manifest_config, "Run config JSON")->required();
  manifest->add_option("--out", manifest_out, "Output path (default <output_dir>/manifest.json)");

  std::string run_dir, test_bundle;
  auto* report = app.add_subcommand("report", "Summarize a run directory (exit 3 on missing artifacts)");
  report->add_option("--run", run_dir, "Run output directory")->required();
  report->add_option("--test-bundle", test_bundle, "Image bundle for the fitness/test-accuracy PCC");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(spec, synth_out);
    if (*optimize) return cmd_optimize(config, log_candidates);
    if (*score) return cmd_score(prompt, bundle, alpha, tau, score_out);
    if (*manifest) return cmd_manifest(manifest_config, manifest_out);
    if (*report) return cmd_report(run_dir, test_bundle);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return exit_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
