// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "selfcheck/errors.hpp"
#include "selfcheck/log.hpp"
#include "selfcheck/prompts.hpp"
#include "selfcheck/text.hpp"

namespace selfcheck {

using json = nlohmann::json;

enum class BackendKind { openai_compatible, local_http, replay_fixture };

inline std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::openai_compatible: return "openai_compatible";
    case BackendKind::local_http: return "local_http";
    case BackendKind::replay_fixture: return "replay_fixture";
  }
  return "replay_fixture";
}

inline std::optional<BackendKind> parse_backend_kind(std::string_view s) {
  if (s == "openai_compatible" || s == "openai") return BackendKind::openai_compatible;
  if (s == "local_http" || s == "ollama") return BackendKind::local_http;
  if (s == "replay_fixture" || s == "replay") return BackendKind::replay_fixture;
  return std::nullopt;
}

inline constexpr std::string_view kDefaultOpenAiEndpoint = "https://api.openai.com/v1/chat/completions";
inline constexpr std::string_view kDefaultLocalEndpoint = "http://localhost:11434/api/chat";

struct BackendConfig {
  BackendKind kind = BackendKind::replay_fixture;
  std::string endpoint;
  std::string model;
  /// Name of the environment variable holding the API key; the key itself
  /// never appears in configuration.
  std::string api_key_env;
  double timeout_seconds = 120.0;
  int max_retries = 3;
  double temperature = 1.0;
  std::string fixture_path;
  /// Display name in reports; falls back to the model name.
  std::string label;
  int max_in_flight = 4;
  /// Non-zero: forwarded as the request seed, offset by the sample index.
  std::uint64_t seed = 0;

  std::string display_name() const { return label.empty() ? model : label; }

  std::string effective_endpoint() const {
    if (!endpoint.empty()) return endpoint;
    if (kind == BackendKind::openai_compatible) return std::string(kDefaultOpenAiEndpoint);
    if (kind == BackendKind::local_http) return std::string(kDefaultLocalEndpoint);
    return {};
  }

  void validate() const {
    if (kind == BackendKind::replay_fixture && fixture_path.empty()) {
      throw ConfigError("replay_fixture backend requires a fixture path");
    }
    if (model.empty()) throw ConfigError("backend model name is empty");
    if (!(temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
    if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
    if (max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
    if (!(timeout_seconds > 0.0)) throw ConfigError("timeout must be > 0");
  }
};

struct LlmResponse {
  std::string text;
  double latency = 0.0;
  std::string model_id;
  int sample_index = 1;

  friend bool operator==(const LlmResponse&, const LlmResponse&) = default;
};

/// R1..R(n+1) for one image, R1 first.
struct SampleSet {
  std::string image_id;
  std::vector<LlmResponse> responses;

  const LlmResponse& first() const { return responses.front(); }
  std::size_t complementary_count() const { return responses.empty() ? 0 : responses.size() - 1; }

  void validate() const {
    if (responses.size() < 2) throw PreconditionError("sample set needs at least 2 responses");
    for (std::size_t i = 0; i < responses.size(); ++i) {
      if (responses[i].sample_index != static_cast<int>(i + 1)) {
        throw PreconditionError("sample indices must run 1..n+1 without gaps");
      }
    }
  }
};

enum class Verdict { yes, no, unparseable };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::yes: return "yes";
    case Verdict::no: return "no";
    case Verdict::unparseable: return "unparseable";
  }
  return "unparseable";
}

struct YesNoVerdict {
  Verdict value = Verdict::unparseable;
  std::string raw_text;
};

/// Reads the leading word of a checker reply: "Yes"/"No" in any case,
/// after leading whitespace and punctuation. "Not sure" or "Nope" are not
/// a "no".
inline YesNoVerdict parse_verdict(std::string_view raw) {
  const std::string lowered = text::to_lower(text::trim(raw));
  std::size_t i = 0;
  while (i < lowered.size() && !std::isalnum(static_cast<unsigned char>(lowered[i]))) ++i;
  std::size_t j = i;
  while (j < lowered.size() && std::isalpha(static_cast<unsigned char>(lowered[j]))) ++j;
  const std::string_view word = std::string_view(lowered).substr(i, j - i);
  Verdict v = Verdict::unparseable;
  if (word == "yes") v = Verdict::yes;
  else if (word == "no") v = Verdict::no;
  return YesNoVerdict{v, std::string(raw)};
}

struct CacheKey {
  std::string model;
  std::string prompt_hash;
  std::string image_hash;
  int sample_index = 1;

  friend auto operator<=>(const CacheKey&, const CacheKey&) = default;
  friend bool operator==(const CacheKey&, const CacheKey&) = default;

  std::string to_string() const {
    return model + "/" + prompt_hash + "/" + (image_hash.empty() ? "-" : image_hash) + "/" +
           std::to_string(sample_index);
  }
};

namespace detail {
inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}
}  // namespace detail

/// Append-only response store, one JSON object per line:
/// {model, prompt_hash, image_hash, sample_index, text, latency, model_id, timestamp}.
/// A read-only cache is a replay fixture.
class ResponseCache {
 public:
  /// In-memory only.
  ResponseCache() = default;

  static std::shared_ptr<ResponseCache> open(const std::string& path, bool read_only) {
    auto cache = std::make_shared<ResponseCache>();
    cache->path_ = path;
    cache->read_only_ = read_only;
    if (std::filesystem::exists(path)) {
      cache->load(path);
    } else if (read_only) {
      throw ConfigError("fixture file not found: " + path);
    }
    return cache;
  }

  std::optional<LlmResponse> get(const CacheKey& key) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  /// First write wins; later puts for the same key are ignored with a warning.
  bool put(const CacheKey& key, const LlmResponse& response) {
    std::lock_guard lock(mutex_);
    if (entries_.contains(key)) {
      log::warn("cache: duplicate key ignored: " + key.to_string());
      return false;
    }
    entries_.emplace(key, response);
    if (!path_.empty() && !read_only_) {
      std::ofstream out(path_, std::ios::app);
      if (!out) throw DataError("cannot append to cache file: " + path_);
      out << to_line(key, response, detail::utc_timestamp()) << '\n';
    }
    return true;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

  bool read_only() const { return read_only_; }
  const std::string& path() const { return path_; }

  static std::string to_line(const CacheKey& key, const LlmResponse& r, const std::string& timestamp) {
    json j;
    j["model"] = key.model;
    j["prompt_hash"] = key.prompt_hash;
    j["image_hash"] = key.image_hash;
    j["sample_index"] = key.sample_index;
    j["text"] = r.text;
    j["latency"] = r.latency;
    j["model_id"] = r.model_id;
    j["timestamp"] = timestamp;
    return j.dump();
  }

 private:
  void load(const std::string& path) {
    std::size_t line_no = 0;
    for (const auto& line : text::read_lines(path)) {
      ++line_no;
      if (text::trim(line).empty()) continue;
      try {
        const json j = json::parse(line);
        CacheKey key{j.at("model").get<std::string>(), j.at("prompt_hash").get<std::string>(),
                     j.at("image_hash").get<std::string>(), j.at("sample_index").get<int>()};
        LlmResponse r{j.at("text").get<std::string>(), j.value("latency", 0.0),
                      j.value("model_id", key.model), key.sample_index};
        if (r.latency < 0.0) throw std::runtime_error("negative latency");
        if (!entries_.emplace(std::move(key), std::move(r)).second) {
          log::warn(path + ":" + std::to_string(line_no) + ": duplicate key, keeping first");
        }
      } catch (const std::exception& e) {
        log::warn(path + ":" + std::to_string(line_no) + ": skipping corrupt cache line (" +
                  e.what() + ")");
      }
    }
  }

  mutable std::mutex mutex_;
  std::map<CacheKey, LlmResponse> entries_;
  std::string path_;
  bool read_only_ = false;
};

struct CompletionRequest {
  std::string prompt;
  /// Raw image bytes; empty for text-only requests.
  std::string image_bytes;
  std::string image_mime = "image/jpeg";
  std::string image_hash;
  int sample_index = 1;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual LlmResponse complete(const CompletionRequest& request) = 0;
  virtual const BackendConfig& config() const = 0;
  /// Replay backends cannot produce new answers on retry.
  virtual bool is_replay() const { return false; }
};

inline CacheKey cache_key_for(const BackendConfig& cfg, const CompletionRequest& req) {
  return CacheKey{cfg.model, text::fnv1a_hex(req.prompt), req.image_hash, req.sample_index};
}

class ReplayBackend final : public Backend {
 public:
  ReplayBackend(BackendConfig cfg, std::shared_ptr<const ResponseCache> fixture)
      : cfg_(std::move(cfg)), fixture_(std::move(fixture)) {}

  LlmResponse complete(const CompletionRequest& request) override {
    const CacheKey key = cache_key_for(cfg_, request);
    auto hit = fixture_->get(key);
    if (!hit) throw FixtureIncompleteError("fixture has no entry for " + key.to_string());
    hit->sample_index = request.sample_index;
    return *hit;
  }
  const BackendConfig& config() const override { return cfg_; }
  bool is_replay() const override { return true; }

 private:
  BackendConfig cfg_;
  std::shared_ptr<const ResponseCache> fixture_;
};

namespace detail {

struct SplitUrl {
  std::string scheme_host_port;
  std::string path;
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint must include a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

inline json build_openai_body(const BackendConfig& cfg, const CompletionRequest& req) {
  json message{{"role", "user"}};
  if (req.image_bytes.empty()) {
    message["content"] = req.prompt;
  } else {
    message["content"] = json::array(
        {json{{"type", "text"}, {"text", req.prompt}},
         json{{"type", "image_url"},
              {"image_url",
               {{"url", "data:" + req.image_mime + ";base64," + text::base64_encode(req.image_bytes)}}}}});
  }
  json body{{"model", cfg.model}, {"temperature", cfg.temperature}, {"messages", json::array({message})}};
  if (cfg.seed != 0) body["seed"] = cfg.seed + static_cast<std::uint64_t>(req.sample_index);
  return body;
}

inline json build_local_body(const BackendConfig& cfg, const CompletionRequest& req) {
  json message{{"role", "user"}, {"content", req.prompt}};
  if (!req.image_bytes.empty()) message["images"] = json::array({text::base64_encode(req.image_bytes)});
  json body{{"model", cfg.model},
            {"stream", false},
            {"options", {{"temperature", cfg.temperature}}},
            {"messages", json::array({message})}};
  if (cfg.seed != 0) body["options"]["seed"] = cfg.seed + static_cast<std::uint64_t>(req.sample_index);
  return body;
}

/// Returns (text, model_id) from a chat-completion reply body.
inline std::pair<std::string, std::string> parse_reply_body(BackendKind kind, const std::string& body,
                                                            const std::string& fallback_model) {
  const json j = json::parse(body);
  const std::string model_id = j.contains("model") && j["model"].is_string()
                                   ? j["model"].get<std::string>()
                                   : fallback_model;
  if (kind == BackendKind::openai_compatible) {
    const auto& content = j.at("choices").at(0).at("message").at("content");
    return {content.is_null() ? std::string() : content.get<std::string>(), model_id};
  }
  return {j.at("message").at("content").get<std::string>(), model_id};
}

inline std::string image_mime_for(const std::string& uri) {
  const std::string lower = text::to_lower(uri);
  if (lower.ends_with(".png")) return "image/png";
  if (lower.ends_with(".webp")) return "image/webp";
  if (lower.ends_with(".gif")) return "image/gif";
  return "image/jpeg";
}

}  // namespace detail

/// Chat-completion client for OpenAI-compatible and local (Ollama-style)
/// servers. Consults the response cache before touching the network.
class HttpBackend final : public Backend {
 public:
  HttpBackend(BackendConfig cfg, std::shared_ptr<ResponseCache> cache)
      : cfg_(std::move(cfg)), cache_(std::move(cache)), in_flight_(cfg_.max_in_flight) {
    const std::string url = cfg_.effective_endpoint();
    split_ = detail::split_url(url);
    if (!cfg_.api_key_env.empty()) {
      const char* key = std::getenv(cfg_.api_key_env.c_str());
      if (key == nullptr || *key == '\0') {
        throw ConfigError("environment variable " + cfg_.api_key_env + " is not set");
      }
      api_key_ = key;
    }
  }

  LlmResponse complete(const CompletionRequest& request) override {
    const CacheKey key = cache_key_for(cfg_, request);
    if (cache_) {
      if (auto hit = cache_->get(key)) {
        hit->sample_index = request.sample_index;
        return *hit;
      }
    }
    LlmResponse response = call_with_retries(request);
    response.sample_index = request.sample_index;
    if (cache_) cache_->put(key, response);
    return response;
  }

  const BackendConfig& config() const override { return cfg_; }

  /// Base delay of the exponential backoff; tests shorten it.
  void set_backoff_base(std::chrono::milliseconds base) { backoff_base_ = base; }

 private:
  struct Attempt {
    bool ok = false;
    bool retryable = false;
    std::string error;
    LlmResponse response;
  };

  LlmResponse call_with_retries(const CompletionRequest& request) {
    const std::string body = (cfg_.kind == BackendKind::openai_compatible
                                  ? detail::build_openai_body(cfg_, request)
                                  : detail::build_local_body(cfg_, request))
                                 .dump();
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(backoff_base_ * (1 << (attempt - 1)));
      Attempt a = attempt_once(body);
      if (a.ok) return a.response;
      last_error = a.error;
      if (!a.retryable) break;
    }
    throw TransportError(cfg_.display_name() + ": " + last_error);
  }

  Attempt attempt_once(const std::string& body) {
    in_flight_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{in_flight_};

    httplib::Client client(split_.scheme_host_port);
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(cfg_.timeout_seconds));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(split_.path, headers, body, "application/json");
    const double latency = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    Attempt a;
    if (!res) {
      a.retryable = true;
      a.error = "request failed: " + httplib::to_string(res.error());
      return a;
    }
    if (res->status == 429 || res->status >= 500) {
      a.retryable = true;
      a.error = "HTTP " + std::to_string(res->status);
      return a;
    }
    if (res->status < 200 || res->status >= 300) {
      a.error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
      return a;
    }
    try {
      auto [reply, model_id] = detail::parse_reply_body(cfg_.kind, res->body, cfg_.model);
      a.ok = true;
      a.response = LlmResponse{std::move(reply), latency, std::move(model_id), 1};
    } catch (const std::exception& e) {
      a.error = std::string("malformed reply body: ") + e.what();
    }
    return a;
  }

  BackendConfig cfg_;
  std::shared_ptr<ResponseCache> cache_;
  std::counting_semaphore<> in_flight_;
  detail::SplitUrl split_;
  std::string api_key_;
  std::chrono::milliseconds backoff_base_{500};
};

/// Builds the backend for a config. Live backends share `cache` (may be null).
inline std::shared_ptr<Backend> make_backend(const BackendConfig& cfg,
                                             std::shared_ptr<ResponseCache> cache = nullptr) {
  cfg.validate();
  if (cfg.kind == BackendKind::replay_fixture) {
    return std::make_shared<ReplayBackend>(cfg, ResponseCache::open(cfg.fixture_path, true));
  }
  return std::make_shared<HttpBackend>(cfg, std::move(cache));
}

/// An image as the pipeline sees it: id plus where to read the bytes.
struct ImageInput {
  std::string image_id;
  std::string uri;
};

/// Samples the captioner `count` times with the caption prompt and the image.
inline SampleSet generate_samples(Backend& backend, const ImageInput& image, int count) {
  if (count < 2) throw PreconditionError("sample count must be >= 2, got " + std::to_string(count));
  CompletionRequest req;
  req.prompt = std::string(kCaptionPrompt);
  req.image_bytes = text::read_file(image.uri);
  req.image_mime = detail::image_mime_for(image.uri);
  req.image_hash = text::fnv1a_hex(req.image_bytes);
  if (backend.is_replay()) req.image_bytes.clear();

  SampleSet set{image.image_id, {}};
  set.responses.reserve(static_cast<std::size_t>(count));
  for (int i = 1; i <= count; ++i) {
    req.sample_index = i;
    try {
      LlmResponse r = backend.complete(req);
      r.sample_index = i;
      set.responses.push_back(std::move(r));
    } catch (const FixtureIncompleteError& e) {
      throw FixtureIncompleteError("sample " + std::to_string(i) + ": " + e.what());
    } catch (const TransportError& e) {
      throw TransportError("sample " + std::to_string(i) + ": " + e.what());
    }
  }
  return set;
}

/// Asks the checker whether `sentence` is supported by `context`.
/// Unparseable replies are retried up to max_retries times; a replay
/// fixture without a retry entry ends the retries.
inline YesNoVerdict check_support(Backend& checker, std::string_view context, std::string_view sentence) {
  if (text::trim(sentence).empty()) throw PreconditionError("checker sentence is empty");
  CompletionRequest req;
  req.prompt = render_checker_prompt(context, sentence);
  YesNoVerdict verdict;
  const int attempts = 1 + std::max(0, checker.config().max_retries);
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    req.sample_index = attempt;
    LlmResponse r;
    try {
      r = checker.complete(req);
    } catch (const FixtureIncompleteError&) {
      if (attempt == 1) throw;
      break;
    }
    verdict = parse_verdict(r.text);
    if (verdict.value != Verdict::unparseable) break;
  }
  return verdict;
}

}  // namespace selfcheck
