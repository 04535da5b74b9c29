// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "selfcheck/caption_parser.hpp"
#include "selfcheck/engine.hpp"
#include "selfcheck/errors.hpp"
#include "selfcheck/eval.hpp"
#include "selfcheck/gateway.hpp"
#include "selfcheck/text.hpp"

namespace selfcheck {

/// Flat `key = value` file. `#` starts a comment; later keys override earlier ones.
using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(std::string_view content, std::string_view origin = "<memory>") {
  KeyValues out;
  std::istringstream in{std::string(content)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto trimmed = text::trim(line);
    if (trimmed.empty()) continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": expected key=value");
    }
    out[std::string(text::trim(trimmed.substr(0, eq)))] = std::string(text::trim(trimmed.substr(eq + 1)));
  }
  return out;
}

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": not a number: '" + v + "'");
  }
}

inline long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError(key + ": not an integer: '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  const auto l = text::to_lower(v);
  if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
  if (l == "false" || l == "0" || l == "no" || l == "off") return false;
  throw ConfigError(key + ": not a boolean: '" + v + "'");
}

inline std::string resolve_path(const std::string& base_dir, const std::string& p) {
  if (p.empty() || base_dir.empty() || std::filesystem::path(p).is_absolute()) return p;
  return (std::filesystem::path(base_dir) / p).lexically_normal().string();
}

inline std::string render_double(double d) {
  std::ostringstream ss;
  ss << d;
  return ss.str();
}

}  // namespace detail

/// Shorthand used by --captioner/--checker:
///   replay:<model>=<fixture.jsonl>
///   openai:<model>[@<endpoint>]
///   ollama:<model>[@<endpoint>]
inline BackendConfig parse_backend_spec(std::string_view spec, BackendConfig base) {
  const auto colon = spec.find(':');
  if (colon == std::string_view::npos) throw ConfigError("backend spec needs kind:...: " + std::string(spec));
  const auto kind = parse_backend_kind(spec.substr(0, colon));
  if (!kind) throw ConfigError("unknown backend kind in: " + std::string(spec));
  base.kind = *kind;
  std::string rest(spec.substr(colon + 1));
  if (*kind == BackendKind::replay_fixture) {
    const auto eq = rest.find('=');
    if (eq == std::string::npos) throw ConfigError("replay spec must be replay:<model>=<fixture>");
    base.model = rest.substr(0, eq);
    base.fixture_path = rest.substr(eq + 1);
  } else {
    const auto at = rest.find('@');
    base.model = rest.substr(0, at);
    if (at != std::string::npos) base.endpoint = rest.substr(at + 1);
  }
  return base;
}

inline BackendConfig default_captioner_config() {
  BackendConfig c;
  c.temperature = 1.0;
  return c;
}

inline BackendConfig default_checker_config() {
  BackendConfig c;
  c.temperature = 0.0;
  return c;
}

struct RunConfig {
  std::string manifest;
  BackendConfig captioner = default_captioner_config();
  BackendConfig checker = default_checker_config();
  EngineConfig engine;
  int samples = 5;
  std::string out = "run";
  int concurrency = 4;
  std::uint64_t seed = 0;
  /// Response cache for live backends; empty means <out>/cache.jsonl.
  std::string cache;
  /// Synonym table file; empty means the built-in table.
  std::string synonyms;
  bool bare_bicycle_is_cyclist = true;

  std::string cache_path() const {
    return cache.empty() ? (std::filesystem::path(out) / "cache.jsonl").string() : cache;
  }

  SynonymTable synonym_table() const {
    if (synonyms.empty()) return default_synonym_table({bare_bicycle_is_cyclist});
    SynonymTable t = SynonymTable::load(synonyms);
    if (!bare_bicycle_is_cyclist) {
      for (const char* term : {"bicycle", "bicycles", "bike", "bikes"}) t.remove(term);
    }
    return t;
  }

  void validate() const {
    if (samples < 2) throw ConfigError("samples must be >= 2");
    if (concurrency < 1) throw ConfigError("concurrency must be >= 1");
    engine.validate();
    captioner.validate();
    checker.validate();
  }
};

namespace detail {

inline void apply_backend_key(BackendConfig& b, const std::string& full_key, const std::string& field,
                              const std::string& v, const std::string& base_dir) {
  if (field == "kind") {
    const auto k = parse_backend_kind(v);
    if (!k) throw ConfigError(full_key + ": unknown backend kind '" + v + "'");
    b.kind = *k;
  } else if (field == "endpoint") {
    b.endpoint = v;
  } else if (field == "model") {
    b.model = v;
  } else if (field == "api_key_env") {
    b.api_key_env = v;
  } else if (field == "timeout") {
    b.timeout_seconds = parse_double(full_key, v);
  } else if (field == "max_retries") {
    b.max_retries = static_cast<int>(parse_int(full_key, v));
  } else if (field == "temperature") {
    b.temperature = parse_double(full_key, v);
  } else if (field == "fixture") {
    b.fixture_path = resolve_path(base_dir, v);
  } else if (field == "label") {
    b.label = v;
  } else if (field == "max_in_flight") {
    b.max_in_flight = static_cast<int>(parse_int(full_key, v));
  } else {
    throw ConfigError("unknown config key: " + full_key);
  }
}

}  // namespace detail

/// Applies key/values onto `cfg`. Relative paths resolve against `base_dir`.
inline void apply_key_values(RunConfig& cfg, const KeyValues& kv, const std::string& base_dir = "") {
  using namespace detail;
  for (const auto& [key, v] : kv) {
    if (key.starts_with("captioner.")) {
      apply_backend_key(cfg.captioner, key, key.substr(10), v, base_dir);
    } else if (key.starts_with("checker.")) {
      apply_backend_key(cfg.checker, key, key.substr(8), v, base_dir);
    } else if (key == "manifest") {
      cfg.manifest = resolve_path(base_dir, v);
    } else if (key == "out") {
      cfg.out = resolve_path(base_dir, v);
    } else if (key == "cache") {
      cfg.cache = resolve_path(base_dir, v);
    } else if (key == "synonyms") {
      cfg.synonyms = resolve_path(base_dir, v);
    } else if (key == "samples") {
      cfg.samples = static_cast<int>(parse_int(key, v));
    } else if (key == "concurrency") {
      cfg.concurrency = static_cast<int>(parse_int(key, v));
    } else if (key == "seed") {
      cfg.seed = static_cast<std::uint64_t>(parse_int(key, v));
    } else if (key == "sentence_threshold") {
      cfg.engine.sentence_threshold = parse_double(key, v);
    } else if (key == "caption_threshold") {
      cfg.engine.caption_threshold = parse_double(key, v);
    } else if (key == "extraction_mode") {
      const auto m = parse_extraction_mode(v);
      if (!m) throw ConfigError(key + ": expected first_noun or all_mentions");
      cfg.engine.extraction.mode = *m;
    } else if (key == "negation_filter") {
      cfg.engine.extraction.negation_filter = parse_bool(key, v);
    } else if (key == "check_topology") {
      const auto t = parse_check_topology(v);
      if (!t) throw ConfigError(key + ": expected all_pairs or aligned");
      cfg.engine.topology = *t;
    } else if (key == "bare_bicycle_is_cyclist") {
      cfg.bare_bicycle_is_cyclist = parse_bool(key, v);
    } else {
      throw ConfigError("unknown config key: " + key);
    }
  }
}

inline RunConfig load_run_config(const std::string& path) {
  RunConfig cfg;
  const auto base = std::filesystem::path(path).parent_path().string();
  apply_key_values(cfg, parse_key_values(text::read_file(path), path), base);
  return cfg;
}

/// Effective configuration in the same flat format, keys sorted. Secrets
/// are never included; only the name of the key variable.
inline std::string render_run_config(const RunConfig& cfg) {
  KeyValues kv;
  auto backend = [&](const std::string& prefix, const BackendConfig& b) {
    kv[prefix + "kind"] = std::string(to_string(b.kind));
    kv[prefix + "model"] = b.model;
    kv[prefix + "label"] = b.display_name();
    kv[prefix + "temperature"] = detail::render_double(b.temperature);
    kv[prefix + "max_retries"] = std::to_string(b.max_retries);
    kv[prefix + "max_in_flight"] = std::to_string(b.max_in_flight);
    kv[prefix + "timeout"] = detail::render_double(b.timeout_seconds);
    if (b.kind == BackendKind::replay_fixture) {
      kv[prefix + "fixture"] = b.fixture_path;
    } else {
      kv[prefix + "endpoint"] = b.effective_endpoint();
      if (!b.api_key_env.empty()) kv[prefix + "api_key_env"] = b.api_key_env;
    }
  };
  backend("captioner.", cfg.captioner);
  backend("checker.", cfg.checker);
  kv["manifest"] = cfg.manifest;
  kv["out"] = cfg.out;
  kv["samples"] = std::to_string(cfg.samples);
  kv["concurrency"] = std::to_string(cfg.concurrency);
  kv["seed"] = std::to_string(cfg.seed);
  kv["sentence_threshold"] = detail::render_double(cfg.engine.sentence_threshold);
  kv["caption_threshold"] = detail::render_double(cfg.engine.caption_threshold);
  kv["extraction_mode"] = std::string(to_string(cfg.engine.extraction.mode));
  kv["negation_filter"] = cfg.engine.extraction.negation_filter ? "true" : "false";
  kv["check_topology"] = std::string(to_string(cfg.engine.topology));
  kv["bare_bicycle_is_cyclist"] = cfg.bare_bicycle_is_cyclist ? "true" : "false";
  if (!cfg.synonyms.empty()) kv["synonyms"] = cfg.synonyms;
  if (!cfg.cache.empty()) kv["cache"] = cfg.cache;
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

/// Reads `target.<combination> = N` and `seed = N` keys.
inline CurationSpec curation_spec_from(const KeyValues& kv) {
  CurationSpec spec;
  for (const auto& [key, v] : kv) {
    if (key == "seed") {
      spec.seed = static_cast<std::uint64_t>(detail::parse_int(key, v));
    } else if (key.starts_with("target.")) {
      const auto cat = parse_agent_combination(key.substr(7));
      if (!cat) throw ConfigError("unknown agent combination: " + key.substr(7));
      const auto n = detail::parse_int(key, v);
      if (n < 0) throw ConfigError(key + ": target must be >= 0");
      spec.targets[*cat] = static_cast<std::size_t>(n);
    }
  }
  return spec;
}

}  // namespace selfcheck
