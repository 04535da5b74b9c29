// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "selfcheck/caption_parser.hpp"
#include "selfcheck/domain.hpp"
#include "selfcheck/errors.hpp"
#include "selfcheck/gateway.hpp"
#include "selfcheck/prompts.hpp"

namespace selfcheck {

/// How sentences of R1 are paired with complementary responses.
///  all_pairs: every sentence against every one of R2..R(n+1).
///  aligned:   sentence i against R(i+2) only; surplus sentences reuse the last response.
enum class CheckTopology { all_pairs, aligned };

inline std::string_view to_string(CheckTopology t) {
  return t == CheckTopology::all_pairs ? "all_pairs" : "aligned";
}

inline std::optional<CheckTopology> parse_check_topology(std::string_view s) {
  if (s == "all_pairs") return CheckTopology::all_pairs;
  if (s == "aligned") return CheckTopology::aligned;
  return std::nullopt;
}

struct EngineConfig {
  double sentence_threshold = 0.5;
  double caption_threshold = 0.5;
  ExtractionOptions extraction;
  CheckTopology topology = CheckTopology::all_pairs;

  void validate() const {
    if (!(sentence_threshold >= 0.0 && sentence_threshold <= 1.0)) {
      throw ConfigError("sentence_threshold must lie in [0,1]");
    }
    if (!(caption_threshold >= 0.0 && caption_threshold <= 1.0)) {
      throw ConfigError("caption_threshold must lie in [0,1]");
    }
  }
};

struct SentenceScore {
  Sentence sentence;
  int yes_count = 0;
  int total_checks = 1;
  /// Included in total_checks, never in yes_count.
  int unparseable_count = 0;
  double consistency = 0.0;
};

/// Yes-fraction over a non-empty verdict list. Unparseable replies count as
/// checks without support.
inline SentenceScore sentence_consistency(std::span<const Verdict> verdicts) {
  if (verdicts.empty()) throw PreconditionError("sentence_consistency needs at least one verdict");
  SentenceScore s;
  s.total_checks = static_cast<int>(verdicts.size());
  for (Verdict v : verdicts) {
    if (v == Verdict::yes) ++s.yes_count;
    if (v == Verdict::unparseable) ++s.unparseable_count;
  }
  s.consistency = static_cast<double>(s.yes_count) / static_cast<double>(s.total_checks);
  return s;
}

/// Indices (into SampleSet::responses) that sentence `sentence_index` is checked against.
inline std::vector<std::size_t> contexts_for(std::size_t sentence_index, std::size_t response_count,
                                             CheckTopology topology) {
  std::vector<std::size_t> out;
  if (response_count < 2) return out;
  if (topology == CheckTopology::all_pairs) {
    for (std::size_t j = 1; j < response_count; ++j) out.push_back(j);
  } else {
    out.push_back(std::min(sentence_index + 1, response_count - 1));
  }
  return out;
}

/// Scores every sentence of R1 against the complementary responses.
inline std::vector<SentenceScore> score_caption(const SampleSet& samples, Backend& checker,
                                                const EngineConfig& cfg) {
  samples.validate();
  const auto sentences = segment_sentences(samples.first().text);
  std::vector<SentenceScore> scores;
  scores.reserve(sentences.size());
  for (const auto& sentence : sentences) {
    std::vector<Verdict> verdicts;
    for (std::size_t j : contexts_for(sentence.index, samples.responses.size(), cfg.topology)) {
      try {
        verdicts.push_back(check_support(checker, samples.responses[j].text, sentence.text).value);
      } catch (const Error& e) {
        throw Error(e.kind(), "sentence " + std::to_string(sentence.index + 1) + " vs R" +
                                  std::to_string(j + 1) + ": " + e.what());
      }
    }
    SentenceScore score = sentence_consistency(verdicts);
    score.sentence = sentence;
    scores.push_back(std::move(score));
  }
  return scores;
}

enum class CaptionVerdict { clean, hallucinated };

inline std::string_view to_string(CaptionVerdict v) {
  return v == CaptionVerdict::clean ? "clean" : "hallucinated";
}

inline std::optional<CaptionVerdict> parse_caption_verdict(std::string_view s) {
  if (s == "clean") return CaptionVerdict::clean;
  if (s == "hallucinated") return CaptionVerdict::hallucinated;
  return std::nullopt;
}

/// Boundary is inclusive: consistency == threshold is clean.
inline CaptionVerdict caption_verdict(double caption_consistency, double caption_threshold) {
  return caption_consistency >= caption_threshold ? CaptionVerdict::clean : CaptionVerdict::hallucinated;
}

/// Arithmetic mean of the consistencies; 0 for an empty list.
inline double mean_consistency(std::span<const SentenceScore> scores) {
  if (scores.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : scores) sum += s.consistency;
  return sum / static_cast<double>(scores.size());
}

/// The refined caption R'1.
struct RefinedCaption {
  std::vector<SentenceScore> retained;
  std::vector<SentenceScore> removed;
  double caption_consistency = 0.0;
  std::optional<CaptionVerdict> verdict;

  std::vector<Sentence> retained_sentences() const {
    std::vector<Sentence> out;
    for (const auto& s : retained) out.push_back(s.sentence);
    return out;
  }
};

/// Keeps sentences with consistency >= threshold, order preserved.
inline RefinedCaption filter_sentences(std::span<const SentenceScore> scores, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw PreconditionError("threshold must lie in [0,1]");
  RefinedCaption out;
  for (const auto& s : scores) {
    (s.consistency >= threshold ? out.retained : out.removed).push_back(s);
  }
  out.caption_consistency = mean_consistency(out.retained);
  return out;
}

enum class RecordStatus { ok, failed };

/// Everything the pipeline produced for one image.
struct PipelineRecord {
  std::string image_id;
  RecordStatus status = RecordStatus::ok;
  std::string failed_stage;
  std::string error;
  ErrorKind error_kind = ErrorKind::data;
  std::string captioner;
  std::string checker;
  std::string captioner_model;
  std::string checker_model;
  std::string caption_prompt_hash;
  std::string checker_prompt_hash;
  SampleSet samples;
  std::vector<SentenceScore> scores;
  RefinedCaption refined;
  /// Mean over all of R1's sentences, and the verdict that mean earns.
  double original_consistency = 0.0;
  CaptionVerdict original_verdict = CaptionVerdict::hallucinated;
  AgentSet r1_agents;
  AgentSet refined_agents;

  bool ok() const { return status == RecordStatus::ok; }
  bool has_samples() const { return !samples.responses.empty(); }
  std::vector<Sentence> r1_sentences() const {
    return has_samples() ? segment_sentences(samples.first().text) : std::vector<Sentence>{};
  }
};

/// Runs sampling, segmentation, scoring, filtering and both verdicts for one
/// image. Errors are captured in the record instead of propagating.
inline PipelineRecord run_selfcheck(const ImageInput& image, Backend& captioner, Backend& checker,
                                    const EngineConfig& cfg, int sample_count, const SynonymTable& synonyms) {
  PipelineRecord rec;
  rec.image_id = image.image_id;
  rec.captioner = captioner.config().display_name();
  rec.checker = checker.config().display_name();
  rec.captioner_model = captioner.config().model;
  rec.checker_model = checker.config().model;
  rec.caption_prompt_hash = text::fnv1a_hex(kCaptionPrompt);
  rec.checker_prompt_hash = text::fnv1a_hex(kCheckerPrompt);

  auto fail = [&](std::string stage, const std::exception& e) {
    rec.status = RecordStatus::failed;
    rec.failed_stage = std::move(stage);
    rec.error = e.what();
    if (const auto* err = dynamic_cast<const Error*>(&e)) rec.error_kind = err->kind();
    return rec;
  };

  try {
    rec.samples = generate_samples(captioner, image, sample_count);
  } catch (const std::exception& e) {
    return fail("sample", e);
  }
  try {
    rec.scores = score_caption(rec.samples, checker, cfg);
  } catch (const std::exception& e) {
    return fail("check", e);
  }
  rec.refined = filter_sentences(rec.scores, cfg.sentence_threshold);
  rec.refined.verdict = caption_verdict(rec.refined.caption_consistency, cfg.caption_threshold);
  rec.original_consistency = mean_consistency(rec.scores);
  rec.original_verdict = caption_verdict(rec.original_consistency, cfg.caption_threshold);
  rec.r1_agents = caption_agents(rec.r1_sentences(), synonyms, cfg.extraction);
  rec.refined_agents = caption_agents(rec.refined.retained_sentences(), synonyms, cfg.extraction);
  return rec;
}

// JSON persistence ----------------------------------------------------------

inline json agents_to_json(AgentSet s) { return json(s.names()); }

inline AgentSet agents_from_json(const json& j) {
  AgentSet s;
  for (const auto& item : j) {
    const auto name = item.get<std::string>();
    const auto cls = parse_agent_class(name);
    if (!cls) throw DataError("unknown agent class '" + name + "'");
    s.insert(*cls);
  }
  return s;
}

inline json score_to_json(const SentenceScore& s) {
  return json{{"index", s.sentence.index},          {"text", s.sentence.text},
              {"yes_count", s.yes_count},           {"total_checks", s.total_checks},
              {"unparseable_count", s.unparseable_count}, {"consistency", s.consistency}};
}

inline SentenceScore score_from_json(const json& j) {
  SentenceScore s;
  s.sentence = Sentence{j.at("text").get<std::string>(), j.at("index").get<std::size_t>()};
  s.yes_count = j.at("yes_count").get<int>();
  s.total_checks = j.at("total_checks").get<int>();
  s.unparseable_count = j.value("unparseable_count", 0);
  s.consistency = j.at("consistency").get<double>();
  return s;
}

inline json record_to_json(const PipelineRecord& r) {
  json j;
  j["image_id"] = r.image_id;
  j["status"] = r.ok() ? "ok" : "failed";
  if (!r.ok()) {
    j["failed_stage"] = r.failed_stage;
    j["error"] = r.error;
  }
  j["captioner"] = r.captioner;
  j["checker"] = r.checker;
  j["captioner_model"] = r.captioner_model;
  j["checker_model"] = r.checker_model;
  j["caption_prompt_hash"] = r.caption_prompt_hash;
  j["checker_prompt_hash"] = r.checker_prompt_hash;
  json samples = json::array();
  for (const auto& s : r.samples.responses) {
    samples.push_back(json{{"sample_index", s.sample_index}, {"text", s.text},
                           {"latency", s.latency}, {"model_id", s.model_id}});
  }
  j["samples"] = std::move(samples);
  if (r.ok()) {
    json scores = json::array();
    for (const auto& s : r.scores) scores.push_back(score_to_json(s));
    j["scores"] = std::move(scores);
    json retained = json::array();
    for (const auto& s : r.refined.retained) retained.push_back(s.sentence.index);
    json removed = json::array();
    for (const auto& s : r.refined.removed) removed.push_back(s.sentence.index);
    j["retained"] = std::move(retained);
    j["removed"] = std::move(removed);
    j["caption_consistency"] = r.refined.caption_consistency;
    j["verdict"] = to_string(r.refined.verdict.value_or(CaptionVerdict::hallucinated));
    j["original_consistency"] = r.original_consistency;
    j["original_verdict"] = to_string(r.original_verdict);
    j["r1_agents"] = agents_to_json(r.r1_agents);
    j["refined_agents"] = agents_to_json(r.refined_agents);
  }
  return j;
}

inline PipelineRecord record_from_json(const json& j) {
  PipelineRecord r;
  r.image_id = j.at("image_id").get<std::string>();
  r.status = j.at("status").get<std::string>() == "ok" ? RecordStatus::ok : RecordStatus::failed;
  r.failed_stage = j.value("failed_stage", "");
  r.error = j.value("error", "");
  r.captioner = j.value("captioner", "");
  r.checker = j.value("checker", "");
  r.captioner_model = j.value("captioner_model", "");
  r.checker_model = j.value("checker_model", "");
  r.caption_prompt_hash = j.value("caption_prompt_hash", "");
  r.checker_prompt_hash = j.value("checker_prompt_hash", "");
  r.samples.image_id = r.image_id;
  for (const auto& s : j.value("samples", json::array())) {
    r.samples.responses.push_back(LlmResponse{s.at("text").get<std::string>(), s.value("latency", 0.0),
                                              s.value("model_id", ""), s.at("sample_index").get<int>()});
  }
  if (!r.ok()) return r;
  for (const auto& s : j.at("scores")) r.scores.push_back(score_from_json(s));
  auto by_index = [&](const json& indices) {
    std::vector<SentenceScore> out;
    for (const auto& idx : indices) {
      const auto i = idx.get<std::size_t>();
      if (i >= r.scores.size()) throw DataError(r.image_id + ": sentence index out of range");
      out.push_back(r.scores[i]);
    }
    return out;
  };
  r.refined.retained = by_index(j.at("retained"));
  r.refined.removed = by_index(j.at("removed"));
  r.refined.caption_consistency = j.at("caption_consistency").get<double>();
  const auto verdict = parse_caption_verdict(j.at("verdict").get<std::string>());
  const auto original = parse_caption_verdict(j.at("original_verdict").get<std::string>());
  if (!verdict || !original) throw DataError(r.image_id + ": bad verdict value");
  r.refined.verdict = verdict;
  r.original_consistency = j.at("original_consistency").get<double>();
  r.original_verdict = *original;
  r.r1_agents = agents_from_json(j.at("r1_agents"));
  r.refined_agents = agents_from_json(j.at("refined_agents"));
  return r;
}

}  // namespace selfcheck
