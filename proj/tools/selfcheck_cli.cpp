// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver: run, evaluate, curate, caption, check.
//
// Exit codes: 0 success, 1 internal error, 2 usage/config error,
// 3 transport error, 4 data error (bad manifest, missing fixture entry, ...).

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "selfcheck/selfcheck.hpp"

namespace {

using namespace selfcheck;

constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitTransport = 3;
constexpr int kExitData = 4;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::precondition: return kExitConfig;
    case ErrorKind::transport: return kExitTransport;
    case ErrorKind::data:
    case ErrorKind::fixture_incomplete: return kExitData;
  }
  return kExitInternal;
}

struct CommonFlags {
  std::string config;
  std::string manifest;
  std::string captioner;
  std::string checker;
  std::string out;
  int samples = 0;
  double sentence_threshold = -1.0;
  double caption_threshold = -1.0;
  long long seed = -1;
  int concurrency = 0;
};

void add_run_flags(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "flat key=value config file");
  app->add_option("--manifest", f.manifest, "ground-truth manifest (JSON lines)");
  app->add_option("--captioner", f.captioner, "replay:<model>=<fixture> | openai:<model>[@url] | ollama:<model>[@url]");
  app->add_option("--checker", f.checker, "same syntax as --captioner");
  app->add_option("--samples", f.samples, "samples per image (n+1, default 5)");
  app->add_option("--sentence-threshold", f.sentence_threshold, "sentence consistency threshold");
  app->add_option("--caption-threshold", f.caption_threshold, "caption consistency threshold");
  app->add_option("--seed", f.seed, "request seed (0 = unset)");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--concurrency", f.concurrency, "images processed in parallel");
}

/// Config file first, then flags on top.
RunConfig resolve_run_config(const CommonFlags& f) {
  RunConfig cfg;
  if (!f.config.empty()) cfg = load_run_config(f.config);
  if (!f.manifest.empty()) cfg.manifest = f.manifest;
  if (!f.captioner.empty()) cfg.captioner = parse_backend_spec(f.captioner, cfg.captioner);
  if (!f.checker.empty()) cfg.checker = parse_backend_spec(f.checker, cfg.checker);
  if (f.samples != 0) cfg.samples = f.samples;
  if (f.sentence_threshold >= 0.0) cfg.engine.sentence_threshold = f.sentence_threshold;
  if (f.caption_threshold >= 0.0) cfg.engine.caption_threshold = f.caption_threshold;
  if (f.seed >= 0) cfg.seed = static_cast<std::uint64_t>(f.seed);
  if (!f.out.empty()) cfg.out = f.out;
  if (f.concurrency != 0) cfg.concurrency = f.concurrency;
  return cfg;
}

int do_run(const CommonFlags& f) {
  const RunConfig cfg = resolve_run_config(f);
  const auto result = cmd_run(cfg);
  std::cout << "run directory: " << result.dir.string() << "\n"
            << "records: " << result.summary["records"] << " (" << result.summary["ok"] << " ok / "
            << result.summary["failed"] << " failed)\n";
  for (const auto& failure : result.summary["failures"]) {
    std::cout << "  failed " << failure["image_id"].get<std::string>() << " at "
              << failure["stage"].get<std::string>() << ": " << failure["error"].get<std::string>() << "\n";
  }
  return 0;
}

struct EvaluateFlags {
  std::vector<std::string> runs;
  std::string manifest;
  std::string config;
  std::vector<std::string> modes;
  std::vector<std::string> group_by;
  std::string out;
};

int do_evaluate(const EvaluateFlags& f) {
  std::vector<RunData> runs;
  for (const auto& dir : f.runs) runs.push_back(load_run(dir));

  RunConfig cfg;
  if (!f.config.empty()) cfg = load_run_config(f.config);
  std::string manifest_path = f.manifest;
  if (manifest_path.empty() && !f.config.empty()) manifest_path = cfg.manifest;
  if (manifest_path.empty()) {
    auto it = runs.front().config.find("manifest");
    if (it != runs.front().config.end()) manifest_path = it->second;
  }
  if (manifest_path.empty()) throw ConfigError("no manifest: pass --manifest");
  const Manifest manifest = Manifest::load(manifest_path);

  EvaluateOptions options;
  if (!f.modes.empty()) {
    options.modes.clear();
    for (const auto& m : f.modes) {
      const auto mode = parse_correctness_mode(m);
      if (!mode) throw ConfigError("unknown mode: " + m);
      options.modes.push_back(*mode);
    }
  }
  for (const auto& g : f.group_by) {
    if (g == "none" || g == "permutation") continue;
    const auto key = parse_group_key(g);
    if (!key) throw ConfigError("unknown group key: " + g);
    options.group_by.push_back(*key);
  }
  options.eval.extraction = cfg.engine.extraction;
  options.eval.caption_threshold = cfg.engine.caption_threshold;
  if (f.config.empty()) {
    // Reuse the thresholds the first run was made with.
    if (!runs.front().config.empty()) {
      RunConfig snap;
      KeyValues kv = runs.front().config;
      for (auto it = kv.begin(); it != kv.end();) {
        it = (it->first.starts_with("captioner.") || it->first.starts_with("checker.")) ? kv.erase(it) : ++it;
      }
      apply_key_values(snap, kv);
      cfg = snap;
      options.eval.extraction = snap.engine.extraction;
      options.eval.caption_threshold = snap.engine.caption_threshold;
    }
  }

  const auto result = build_reports(runs, manifest, cfg.synonym_table(), options);
  const std::filesystem::path out = f.out.empty() ? std::filesystem::path(f.runs.front()) / "report" : std::filesystem::path(f.out);
  write_report_files(out, result.files);
  if (!result.missing.empty()) {
    std::cerr << "warning: " << result.missing.size() << " manifest image(s) have no record:";
    for (const auto& id : result.missing) std::cerr << ' ' << id;
    std::cerr << '\n';
  }
  if (result.evaluated == 0) std::cout << "no evaluated records (zero-count run)\n";
  std::cout << "reports written to " << out.string() << "\n";
  return 0;
}

struct CurateFlags {
  std::string manifest;
  std::string config;
  std::vector<std::string> targets;
  long long seed = -1;
  std::string out;
};

int do_curate(const CurateFlags& f) {
  KeyValues kv;
  if (!f.config.empty()) kv = parse_key_values(text::read_file(f.config), f.config);
  for (const auto& t : f.targets) {
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("--target expects CATEGORY=N, got " + t);
    kv["target." + t.substr(0, eq)] = t.substr(eq + 1);
  }
  if (f.seed >= 0) kv["seed"] = std::to_string(f.seed);
  const CurationSpec spec = curation_spec_from(kv);
  const Manifest subset = curate(Manifest::load(f.manifest), spec);
  subset.save(f.out);
  std::cout << "curated " << subset.size() << " image(s) into " << f.out << "\n";
  return 0;
}

struct DebugFlags {
  CommonFlags common;
  std::string image_id;
  std::string image;
};

ImageInput resolve_image(const DebugFlags& f, const RunConfig& cfg) {
  if (!f.image.empty()) {
    return ImageInput{f.image_id.empty() ? std::filesystem::path(f.image).filename().string() : f.image_id, f.image};
  }
  if (f.image_id.empty()) throw ConfigError("pass --image-id (with a manifest) or --image");
  if (cfg.manifest.empty()) throw ConfigError("--image-id needs --manifest");
  const Manifest manifest = Manifest::load(cfg.manifest);
  const auto* gt = manifest.find(f.image_id);
  if (gt == nullptr) throw DataError("image_id not in manifest: " + f.image_id);
  return ImageInput{gt->image_id, gt->image_uri};
}

std::shared_ptr<ResponseCache> open_cache(const RunConfig& cfg) {
  const auto parent = std::filesystem::path(cfg.cache_path()).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  return ResponseCache::open(cfg.cache_path(), false);
}

void print_samples(const SampleSet& samples) {
  for (const auto& r : samples.responses) {
    std::cout << "R" << r.sample_index << " (" << text::format_fixed(r.latency, 3) << " s, " << r.model_id
              << "): " << r.text << "\n";
  }
}

int do_caption(const DebugFlags& f) {
  const RunConfig cfg = resolve_run_config(f.common);
  cfg.captioner.validate();
  const ImageInput image = resolve_image(f, cfg);
  std::shared_ptr<ResponseCache> cache;
  if (cfg.captioner.kind != BackendKind::replay_fixture) cache = open_cache(cfg);
  auto captioner = make_backend(cfg.captioner, cache);
  SampleSet samples;
  try {
    samples = generate_samples(*captioner, image, cfg.samples);
  } catch (const Error& e) {
    throw Error(e.kind(), "[stage=sample] " + std::string(e.what()));
  }
  const auto synonyms = cfg.synonym_table();
  std::cout << "image: " << image.image_id << "\n";
  print_samples(samples);
  std::cout << "sentences of R1:\n";
  for (const auto& s : segment_sentences(samples.first().text)) {
    std::cout << "  [" << s.index << "] " << s.text << "  agents "
              << extract_sentence_agents(s, synonyms, cfg.engine.extraction).to_string() << "\n";
  }
  return 0;
}

int do_check(const DebugFlags& f) {
  const RunConfig cfg = resolve_run_config(f.common);
  cfg.validate();
  const ImageInput image = resolve_image(f, cfg);
  std::shared_ptr<ResponseCache> cache;
  if (cfg.captioner.kind != BackendKind::replay_fixture || cfg.checker.kind != BackendKind::replay_fixture) {
    cache = open_cache(cfg);
  }
  auto captioner = make_backend(cfg.captioner, cache);
  auto checker = make_backend(cfg.checker, cache);
  const auto rec = run_selfcheck(image, *captioner, *checker, cfg.engine, cfg.samples, cfg.synonym_table());
  std::cout << "image: " << rec.image_id << "  captioner: " << rec.captioner << "  checker: " << rec.checker << "\n";
  print_samples(rec.samples);
  if (!rec.ok()) {
    std::cerr << "error [stage=" << rec.failed_stage << "]: " << rec.error << "\n";
    return exit_code_for(rec.error_kind);
  }
  auto print_score = [](const SentenceScore& s) {
    std::cout << "  [" << s.sentence.index << "] " << text::format_fixed(s.consistency, 2) << " (" << s.yes_count
              << "/" << s.total_checks << ") " << s.sentence.text << "\n";
  };
  std::cout << "retained:\n";
  for (const auto& s : rec.refined.retained) print_score(s);
  std::cout << "removed:\n";
  for (const auto& s : rec.refined.removed) print_score(s);
  std::cout << "R1 agents: " << rec.r1_agents.to_string() << "  R1' agents: " << rec.refined_agents.to_string()
            << "\n"
            << "caption consistency: " << text::format_fixed(rec.refined.caption_consistency, 4)
            << "  verdict: " << to_string(*rec.refined.verdict) << "\n"
            << "original consistency: " << text::format_fixed(rec.original_consistency, 4)
            << "  verdict: " << to_string(rec.original_verdict) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-consistency hallucination checks for traffic-scene captions"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  auto* run = app.add_subcommand("run", "sample, check and filter every manifest image");
  add_run_flags(run, run_flags);

  EvaluateFlags eval_flags;
  auto* evaluate = app.add_subcommand("evaluate", "metric reports from one or more run directories");
  evaluate->add_option("runs", eval_flags.runs, "run directories")->required();
  evaluate->add_option("--manifest", eval_flags.manifest, "manifest (default: from the run snapshot)");
  evaluate->add_option("--config", eval_flags.config, "config for synonyms/extraction/thresholds");
  evaluate->add_option("--mode", eval_flags.modes, "no_hallucinated_agents | no_overlooked_agents (repeatable)");
  evaluate->add_option("--group-by", eval_flags.group_by, "dataset | time_of_day | captioner | checker (repeatable)");
  evaluate->add_option("--out", eval_flags.out, "report directory (default <run>/report)");

  CurateFlags curate_flags;
  auto* curate_cmd = app.add_subcommand("curate", "seeded per-combination subset of a manifest");
  curate_cmd->add_option("--manifest", curate_flags.manifest, "input manifest")->required();
  curate_cmd->add_option("--config", curate_flags.config, "file with target.<combination>=N and seed=N");
  curate_cmd->add_option("--target", curate_flags.targets, "COMBINATION=N, e.g. vehicle-only=619 (repeatable)");
  curate_cmd->add_option("--seed", curate_flags.seed, "sampling seed");
  curate_cmd->add_option("--out", curate_flags.out, "output manifest")->required();

  DebugFlags caption_flags;
  auto* caption = app.add_subcommand("caption", "sample one image and print R1..R(n+1)");
  add_run_flags(caption, caption_flags.common);
  caption->add_option("--image-id", caption_flags.image_id, "image id from the manifest");
  caption->add_option("--image", caption_flags.image, "image file path");

  DebugFlags check_flags;
  auto* check = app.add_subcommand("check", "run the full pipeline on one image and print scores");
  add_run_flags(check, check_flags.common);
  check->add_option("--image-id", check_flags.image_id, "image id from the manifest");
  check->add_option("--image", check_flags.image, "image file path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return do_run(run_flags);
    if (*evaluate) return do_evaluate(eval_flags);
    if (*curate_cmd) return do_curate(curate_flags);
    if (*caption) return do_caption(caption_flags);
    if (*check) return do_check(check_flags);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}
