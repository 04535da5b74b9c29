// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <sys/wait.h>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "selfcheck/selfcheck.hpp"

namespace selfcheck::testing {

inline std::string fixture_path(const std::string& rel) {
  return (std::filesystem::path(SELFCHECK_FIXTURE_DIR) / rel).string();
}

/// Backend whose replies come from a callback; counts calls.
class ScriptedBackend final : public Backend {
 public:
  using Script = std::function<std::string(const CompletionRequest&)>;

  ScriptedBackend(std::string model, Script script, int max_retries = 0)
      : script_(std::move(script)) {
    cfg_.model = std::move(model);
    cfg_.max_retries = max_retries;
  }

  LlmResponse complete(const CompletionRequest& request) override {
    ++calls_;
    {
      std::lock_guard lock(mutex_);
      prompts_.push_back(request.prompt);
    }
    return LlmResponse{script_(request), 0.0, cfg_.model, request.sample_index};
  }

  const BackendConfig& config() const override { return cfg_; }

  int calls() const { return calls_.load(); }
  std::vector<std::string> prompts() const {
    std::lock_guard lock(mutex_);
    return prompts_;
  }

 private:
  BackendConfig cfg_;
  Script script_;
  std::atomic<int> calls_{0};
  mutable std::mutex mutex_;
  std::vector<std::string> prompts_;
};

/// Splits a rendered checker prompt back into (context, sentence).
inline std::pair<std::string, std::string> split_checker_prompt(const std::string& prompt) {
  const std::string head = "Context: ";
  const std::string mid = "  Sentence: ";
  const std::string tail = "\nIs the sentence supported by the context above? Answer Yes or No:";
  const auto m = prompt.find(mid);
  const auto t = prompt.rfind(tail);
  return {prompt.substr(head.size(), m - head.size()), prompt.substr(m + mid.size(), t - m - mid.size())};
}

/// Temporary directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("selfcheck_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

/// Reads a CSV without quoting; '#' lines are comments. First row is the header.
inline std::vector<std::map<std::string, std::string>> read_csv(const std::string& path) {
  std::vector<std::map<std::string, std::string>> rows;
  std::vector<std::string> header;
  for (const auto& line : text::read_lines(path)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (header.empty()) {
      header = cells;
      continue;
    }
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Replay backend config over a synthetic fixture file.
inline BackendConfig replay_config(const std::string& model, const std::string& fixture_file) {
  BackendConfig cfg;
  cfg.kind = BackendKind::replay_fixture;
  cfg.model = model;
  cfg.fixture_path = fixture_path("synthetic/" + fixture_file);
  return cfg;
}

/// Runs the synthetic manifest through llava and the given checker.
inline std::vector<PipelineRecord> synthetic_run(const std::string& checker, int concurrency = 4) {
  const auto manifest = Manifest::load(fixture_path("synthetic/manifest.jsonl"));
  auto cap = make_backend(replay_config("llava", "captioner_llava.jsonl"));
  auto chk = make_backend(replay_config(checker, "checker_" + checker + ".jsonl"));
  return run_pipeline(manifest, *cap, *chk, EngineConfig{}, 5, default_synonym_table(), concurrency);
}

/// Splits text on '\n'; no trailing empty element for a final newline.
inline std::vector<std::string> lines_of(const std::string& content) {
  std::vector<std::string> out;
  std::istringstream in(content);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

struct CliResult {
  int exit_code = -1;
  std::string output;
};

/// Runs the CLI with `args` (shell-quoted by the caller); captures stdout and stderr.
inline CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(SELFCHECK_CLI_PATH) + " " + args + " 2>&1";
  CliResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
}

}  // namespace selfcheck::testing
