// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "selfcheck/config.hpp"
#include "selfcheck/engine.hpp"
#include "selfcheck/eval.hpp"
#include "selfcheck/gateway.hpp"

namespace selfcheck {

inline constexpr std::string_view kRecordsFile = "records.jsonl";
inline constexpr std::string_view kSummaryFile = "summary.json";
inline constexpr std::string_view kConfigSnapshotFile = "config.snapshot";

/// Runs the pipeline for every manifest image on a bounded worker pool.
/// Results come back in manifest order whatever the completion order.
inline std::vector<PipelineRecord> run_pipeline(const Manifest& manifest, Backend& captioner, Backend& checker,
                                                const EngineConfig& engine, int samples,
                                                const SynonymTable& synonyms, int concurrency) {
  const auto& images = manifest.records();
  std::vector<PipelineRecord> out(images.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < images.size(); i = next++) {
      const ImageInput input{images[i].image_id, images[i].image_uri};
      out[i] = run_selfcheck(input, captioner, checker, engine, samples, synonyms);
    }
  };
  const auto n_workers = static_cast<std::size_t>(std::max(1, concurrency));
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < std::min(n_workers, images.size()); ++w) pool.emplace_back(worker);
    worker();
  }
  return out;
}

inline json summarize_run(const std::vector<PipelineRecord>& records) {
  std::size_t ok = 0;
  std::size_t checks = 0;
  std::size_t unparseable = 0;
  double captioner_latency = 0.0;
  std::size_t captioner_samples = 0;
  json failures = json::array();
  for (const auto& r : records) {
    for (const auto& s : r.samples.responses) {
      captioner_latency += s.latency;
      ++captioner_samples;
    }
    if (r.ok()) {
      ++ok;
      for (const auto& s : r.scores) {
        checks += static_cast<std::size_t>(s.total_checks);
        unparseable += static_cast<std::size_t>(s.unparseable_count);
      }
    } else {
      failures.push_back(json{{"image_id", r.image_id}, {"stage", r.failed_stage}, {"error", r.error}});
    }
  }
  json j;
  j["records"] = records.size();
  j["ok"] = ok;
  j["failed"] = records.size() - ok;
  j["failures"] = std::move(failures);
  j["checker_verdicts"] = checks;
  j["unparseable_verdicts"] = unparseable;
  j["captioner_samples"] = captioner_samples;
  j["mean_captioner_latency_seconds"] =
      captioner_samples == 0 ? 0.0 : captioner_latency / static_cast<double>(captioner_samples);
  return j;
}

inline void write_records(const std::string& path, const std::vector<PipelineRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

inline std::vector<PipelineRecord> read_records(const std::string& path) {
  std::vector<PipelineRecord> out;
  std::size_t line_no = 0;
  for (const auto& line : text::read_lines(path)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

struct RunResult {
  std::filesystem::path dir;
  std::vector<PipelineRecord> records;
  json summary;
};

/// Batch run with backends built from the config. Writes records, summary
/// and the effective config into cfg.out.
inline RunResult cmd_run(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.manifest.empty()) throw ConfigError("no manifest given");
  const Manifest manifest = Manifest::load(cfg.manifest);
  const SynonymTable synonyms = cfg.synonym_table();

  std::filesystem::create_directories(cfg.out);
  std::shared_ptr<ResponseCache> cache;
  if (cfg.captioner.kind != BackendKind::replay_fixture || cfg.checker.kind != BackendKind::replay_fixture) {
    const auto cache_dir = std::filesystem::path(cfg.cache_path()).parent_path();
    if (!cache_dir.empty()) std::filesystem::create_directories(cache_dir);
    cache = ResponseCache::open(cfg.cache_path(), false);
  }
  BackendConfig cap_cfg = cfg.captioner;
  cap_cfg.seed = cfg.seed;
  auto captioner = make_backend(cap_cfg, cache);
  auto checker = make_backend(cfg.checker, cache);

  RunResult result;
  result.dir = cfg.out;
  result.records = run_pipeline(manifest, *captioner, *checker, cfg.engine, cfg.samples, synonyms, cfg.concurrency);
  result.summary = summarize_run(result.records);

  write_records((result.dir / kRecordsFile).string(), result.records);
  {
    std::ofstream out(result.dir / kSummaryFile, std::ios::trunc);
    out << result.summary.dump(2) << '\n';
  }
  {
    RunConfig snapshot = cfg;
    snapshot.manifest = std::filesystem::absolute(cfg.manifest).lexically_normal().string();
    std::ofstream out(result.dir / kConfigSnapshotFile, std::ios::trunc);
    out << render_run_config(snapshot);
  }
  return result;
}

}  // namespace selfcheck
