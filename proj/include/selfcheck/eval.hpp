// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "selfcheck/caption_parser.hpp"
#include "selfcheck/domain.hpp"
#include "selfcheck/engine.hpp"
#include "selfcheck/errors.hpp"
#include "selfcheck/text.hpp"

namespace selfcheck {

// Manifest ------------------------------------------------------------------

/// Ground-truth manifest: one JSON object per line,
/// {image_id, image_uri, agents: [...], dataset, time_of_day}.
class Manifest {
 public:
  Manifest() = default;
  explicit Manifest(std::vector<GroundTruthRecord> records) {
    for (auto& r : records) add(std::move(r));
  }

  void add(GroundTruthRecord r) {
    if (index_.contains(r.image_id)) throw DataError("duplicate image_id in manifest: " + r.image_id);
    index_.emplace(r.image_id, records_.size());
    records_.push_back(std::move(r));
  }

  const GroundTruthRecord* find(const std::string& image_id) const {
    auto it = index_.find(image_id);
    return it == index_.end() ? nullptr : &records_[it->second];
  }

  const std::vector<GroundTruthRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  /// Relative image URIs resolve against `base_dir`.
  static Manifest parse(std::string_view content, const std::string& origin = "<memory>",
                        const std::string& base_dir = "") {
    Manifest m;
    std::size_t line_no = 0;
    std::istringstream in{std::string(content)};
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      if (text::trim(line).empty()) continue;
      const std::string where = origin + ":" + std::to_string(line_no);
      json j;
      try {
        j = json::parse(line);
      } catch (const std::exception& e) {
        throw DataError(where + ": invalid JSON (" + e.what() + ")");
      }
      GroundTruthRecord r;
      try {
        r.image_id = j.at("image_id").get<std::string>();
        r.image_uri = j.value("image_uri", "");
        r.dataset = j.value("dataset", "");
        r.agents = agents_from_json(j.value("agents", json::array()));
        const std::string tod = j.value("time_of_day", "unknown");
        const auto parsed = parse_time_of_day(tod);
        if (!parsed) throw DataError("unknown time_of_day '" + tod + "'");
        r.time_of_day = *parsed;
      } catch (const DataError& e) {
        throw DataError(where + ": " + e.what());
      } catch (const std::exception& e) {
        throw DataError(where + ": " + e.what());
      }
      if (r.image_id.empty()) throw DataError(where + ": empty image_id");
      if (!base_dir.empty() && !r.image_uri.empty() && !r.image_uri.starts_with('/') &&
          r.image_uri.find("://") == std::string::npos) {
        r.image_uri = (std::filesystem::path(base_dir) / r.image_uri).string();
      }
      try {
        m.add(std::move(r));
      } catch (const DataError& e) {
        throw DataError(where + ": " + e.what());
      }
    }
    return m;
  }

  static Manifest load(const std::string& path) {
    const auto dir = std::filesystem::path(path).parent_path().string();
    return parse(text::read_file(path), path, dir);
  }

  static json to_json(const GroundTruthRecord& r) {
    return json{{"image_id", r.image_id},
                {"image_uri", r.image_uri},
                {"agents", agents_to_json(r.agents)},
                {"dataset", r.dataset},
                {"time_of_day", to_string(r.time_of_day)}};
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest: " + path);
    for (const auto& r : records_) out << to_json(r).dump() << '\n';
  }

 private:
  std::vector<GroundTruthRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Correctness and outcome classification --------------------------------------

enum class CorrectnessMode { no_hallucinated_agents, no_overlooked_agents };

inline constexpr std::array<CorrectnessMode, 2> kAllCorrectnessModes = {
    CorrectnessMode::no_hallucinated_agents, CorrectnessMode::no_overlooked_agents};

inline std::string_view to_string(CorrectnessMode m) {
  return m == CorrectnessMode::no_hallucinated_agents ? "no_hallucinated_agents" : "no_overlooked_agents";
}

inline std::optional<CorrectnessMode> parse_correctness_mode(std::string_view s) {
  if (s == "no_hallucinated_agents" || s == "no_hallucinated") return CorrectnessMode::no_hallucinated_agents;
  if (s == "no_overlooked_agents" || s == "no_overlooked") return CorrectnessMode::no_overlooked_agents;
  return std::nullopt;
}

/// no_hallucinated_agents: caption names nothing beyond the labels.
/// no_overlooked_agents:   caption names every labelled class.
inline bool correctness(AgentSet caption, AgentSet ground_truth, CorrectnessMode mode) {
  return mode == CorrectnessMode::no_hallucinated_agents ? caption.is_subset_of(ground_truth)
                                                         : ground_truth.is_subset_of(caption);
}

enum class Outcome { tp, tn, fp, fn };

inline std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::tp: return "TP";
    case Outcome::tn: return "TN";
    case Outcome::fp: return "FP";
    case Outcome::fn: return "FN";
  }
  return "TP";
}

/// Positive class is "correct caption"; a flag predicts "incorrect".
inline Outcome classify_outcome(bool correct, bool flagged_hallucinated) {
  if (correct) return flagged_hallucinated ? Outcome::fn : Outcome::tp;
  return flagged_hallucinated ? Outcome::tn : Outcome::fp;
}

inline ConfusionMatrix& tally(ConfusionMatrix& cm, Outcome o) {
  switch (o) {
    case Outcome::tp: ++cm.tp; break;
    case Outcome::tn: ++cm.tn; break;
    case Outcome::fp: ++cm.fp; break;
    case Outcome::fn: ++cm.fn; break;
  }
  return cm;
}

enum class CaptionVariant { original_r1, fixed_r1_prime };

inline std::string_view to_string(CaptionVariant v) {
  return v == CaptionVariant::original_r1 ? "original_R1" : "fixed_R1_prime";
}

inline std::optional<CaptionVariant> parse_caption_variant(std::string_view s) {
  if (s == "original_R1") return CaptionVariant::original_r1;
  if (s == "fixed_R1_prime") return CaptionVariant::fixed_r1_prime;
  return std::nullopt;
}

struct EvalRecord {
  std::string image_id;
  CorrectnessMode mode = CorrectnessMode::no_hallucinated_agents;
  CaptionVariant variant = CaptionVariant::fixed_r1_prime;
  AgentSet caption_agents;
  AgentSet ground_truth;
  bool correct = false;
  bool flagged_hallucinated = false;
  Outcome outcome = Outcome::tp;
  std::string dataset;
  TimeOfDay time_of_day = TimeOfDay::unknown;
  std::string captioner;
  std::string checker;
};

inline json eval_record_to_json(const EvalRecord& r) {
  return json{{"image_id", r.image_id},
              {"mode", to_string(r.mode)},
              {"caption_variant", to_string(r.variant)},
              {"caption_agents", agents_to_json(r.caption_agents)},
              {"ground_truth", agents_to_json(r.ground_truth)},
              {"correct", r.correct},
              {"flagged_hallucinated", r.flagged_hallucinated},
              {"outcome", to_string(r.outcome)},
              {"dataset", r.dataset},
              {"time_of_day", to_string(r.time_of_day)},
              {"captioner", r.captioner},
              {"checker", r.checker}};
}

struct EvalIssue {
  std::string image_id;
  std::string message;
};

struct EvalBatch {
  std::vector<EvalRecord> records;
  /// Records whose image_id is not in the manifest.
  std::vector<EvalIssue> errors;
  /// Failed pipeline records, excluded from every matrix.
  std::vector<EvalIssue> skipped;
};

struct EvalOptions {
  ExtractionOptions extraction;
  double caption_threshold = 0.5;
};

/// Pairs each pipeline record's caption agents (from the chosen variant's
/// sentences) with its ground truth and flag. For original_R1 the flag is the
/// caption verdict applied to the mean over all of R1's sentences.
inline EvalBatch evaluate_batch(const std::vector<PipelineRecord>& pipeline, const Manifest& manifest,
                                CorrectnessMode mode, CaptionVariant variant, const SynonymTable& synonyms,
                                const EvalOptions& options = {}) {
  EvalBatch batch;
  for (const auto& rec : pipeline) {
    const GroundTruthRecord* gt = manifest.find(rec.image_id);
    if (gt == nullptr) {
      batch.errors.push_back({rec.image_id, "image_id not present in manifest"});
      continue;
    }
    if (!rec.ok()) {
      batch.skipped.push_back({rec.image_id, rec.failed_stage + ": " + rec.error});
      continue;
    }
    EvalRecord e;
    e.image_id = rec.image_id;
    e.mode = mode;
    e.variant = variant;
    if (variant == CaptionVariant::original_r1) {
      e.caption_agents = caption_agents(rec.r1_sentences(), synonyms, options.extraction);
      e.flagged_hallucinated = caption_verdict(mean_consistency(rec.scores), options.caption_threshold) ==
                               CaptionVerdict::hallucinated;
    } else {
      e.caption_agents = caption_agents(rec.refined.retained_sentences(), synonyms, options.extraction);
      e.flagged_hallucinated = caption_verdict(rec.refined.caption_consistency, options.caption_threshold) ==
                               CaptionVerdict::hallucinated;
    }
    e.ground_truth = gt->agents;
    e.correct = correctness(e.caption_agents, e.ground_truth, mode);
    e.outcome = classify_outcome(e.correct, e.flagged_hallucinated);
    e.dataset = gt->dataset;
    e.time_of_day = gt->time_of_day;
    e.captioner = rec.captioner;
    e.checker = rec.checker;
    batch.records.push_back(std::move(e));
  }
  return batch;
}

// Aggregation ---------------------------------------------------------------

enum class GroupKey { dataset, time_of_day, captioner, checker };

inline std::optional<GroupKey> parse_group_key(std::string_view s) {
  if (s == "dataset") return GroupKey::dataset;
  if (s == "time_of_day") return GroupKey::time_of_day;
  if (s == "captioner") return GroupKey::captioner;
  if (s == "checker") return GroupKey::checker;
  return std::nullopt;
}

inline std::string_view to_string(GroupKey k) {
  switch (k) {
    case GroupKey::dataset: return "dataset";
    case GroupKey::time_of_day: return "time_of_day";
    case GroupKey::captioner: return "captioner";
    case GroupKey::checker: return "checker";
  }
  return "dataset";
}

inline std::string group_value(const EvalRecord& r, GroupKey k) {
  switch (k) {
    case GroupKey::dataset: return r.dataset;
    case GroupKey::time_of_day: return std::string(to_string(r.time_of_day));
    case GroupKey::captioner: return r.captioner;
    case GroupKey::checker: return r.checker;
  }
  return {};
}

struct GroupResult {
  ConfusionMatrix matrix;
  MetricReport metrics;
};

using GroupLabel = std::vector<std::string>;

/// Confusion counts and metrics per distinct combination of `keys`. With no
/// keys, all records form one group labelled {}.
inline std::map<GroupLabel, GroupResult> aggregate(const std::vector<EvalRecord>& records,
                                                   const std::vector<GroupKey>& keys) {
  std::map<GroupLabel, GroupResult> out;
  for (const auto& r : records) {
    GroupLabel label;
    for (GroupKey k : keys) label.push_back(group_value(r, k));
    tally(out[label].matrix, r.outcome);
  }
  for (auto& [label, result] : out) result.metrics = compute_metrics(result.matrix);
  return out;
}

struct BaselineRate {
  std::size_t correct = 0;
  std::size_t counted = 0;
  std::size_t skipped = 0;
  /// Percentage in [0,100]; undefined when nothing was counted.
  Metric percentage;
};

/// Share of captions that are correct under `mode`. Manifest entries without
/// a caption are skipped.
inline BaselineRate baseline_correct_rate(const Manifest& manifest, const std::map<std::string, AgentSet>& captions,
                                          CorrectnessMode mode) {
  BaselineRate out;
  for (const auto& gt : manifest.records()) {
    auto it = captions.find(gt.image_id);
    if (it == captions.end()) {
      ++out.skipped;
      continue;
    }
    ++out.counted;
    if (correctness(it->second, gt.agents, mode)) ++out.correct;
  }
  if (out.counted > 0) {
    out.percentage = 100.0 * static_cast<double>(out.correct) / static_cast<double>(out.counted);
  }
  return out;
}

// Curation ------------------------------------------------------------------

enum class AgentCombination {
  vehicle_only,
  pedestrian_only,
  cyclist_only,
  vehicle_pedestrian,
  vehicle_cyclist,
  pedestrian_cyclist,
  all_three
};

inline constexpr std::array<AgentCombination, 7> kAllCombinations = {
    AgentCombination::vehicle_only,       AgentCombination::pedestrian_only, AgentCombination::cyclist_only,
    AgentCombination::vehicle_pedestrian, AgentCombination::vehicle_cyclist, AgentCombination::pedestrian_cyclist,
    AgentCombination::all_three};

inline std::string_view to_string(AgentCombination c) {
  switch (c) {
    case AgentCombination::vehicle_only: return "vehicle-only";
    case AgentCombination::pedestrian_only: return "pedestrian-only";
    case AgentCombination::cyclist_only: return "cyclist-only";
    case AgentCombination::vehicle_pedestrian: return "vehicle-pedestrian";
    case AgentCombination::vehicle_cyclist: return "vehicle-cyclist";
    case AgentCombination::pedestrian_cyclist: return "pedestrian-cyclist";
    case AgentCombination::all_three: return "vehicle-pedestrian-cyclist";
  }
  return "vehicle-only";
}

/// Accepts hyphen or underscore spellings, plus "all-three".
inline std::optional<AgentCombination> parse_agent_combination(std::string_view s) {
  std::string norm(s);
  std::replace(norm.begin(), norm.end(), '_', '-');
  if (norm == "all-three") return AgentCombination::all_three;
  for (AgentCombination c : kAllCombinations) {
    if (to_string(c) == norm) return c;
  }
  return std::nullopt;
}

inline AgentSet agents_of(AgentCombination c) {
  using A = AgentClass;
  switch (c) {
    case AgentCombination::vehicle_only: return {A::vehicle};
    case AgentCombination::pedestrian_only: return {A::pedestrian};
    case AgentCombination::cyclist_only: return {A::cyclist};
    case AgentCombination::vehicle_pedestrian: return {A::vehicle, A::pedestrian};
    case AgentCombination::vehicle_cyclist: return {A::vehicle, A::cyclist};
    case AgentCombination::pedestrian_cyclist: return {A::pedestrian, A::cyclist};
    case AgentCombination::all_three: return {A::vehicle, A::pedestrian, A::cyclist};
  }
  return {};
}

/// Empty label sets belong to no category.
inline std::optional<AgentCombination> combination_of(AgentSet s) {
  for (AgentCombination c : kAllCombinations) {
    if (agents_of(c) == s) return c;
  }
  return std::nullopt;
}

struct CurationSpec {
  std::map<AgentCombination, std::size_t> targets;
  std::uint64_t seed = 0;
};

namespace detail {
/// Unbiased draw in [0, bound) from a 64-bit engine, portable across
/// standard libraries (unlike uniform_int_distribution).
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}
}  // namespace detail

/// Seeded sampling without replacement inside each agent combination. The
/// subset keeps manifest order.
inline Manifest curate(const Manifest& manifest, const CurationSpec& spec) {
  std::map<AgentCombination, std::vector<std::size_t>> pools;
  for (std::size_t i = 0; i < manifest.records().size(); ++i) {
    if (auto c = combination_of(manifest.records()[i].agents)) pools[*c].push_back(i);
  }
  for (const auto& [cat, want] : spec.targets) {
    const std::size_t have = pools[cat].size();
    if (want > have) {
      throw DataError(std::string(to_string(cat)) + ": need " + std::to_string(want) + ", have " +
                      std::to_string(have));
    }
  }
  std::mt19937_64 rng(spec.seed);
  std::set<std::size_t> chosen;
  for (AgentCombination cat : kAllCombinations) {
    auto it = spec.targets.find(cat);
    if (it == spec.targets.end() || it->second == 0) continue;
    auto pool = pools[cat];
    for (std::size_t k = 0; k < it->second; ++k) {
      const auto j = k + static_cast<std::size_t>(detail::uniform_below(rng, pool.size() - k));
      std::swap(pool[k], pool[j]);
      chosen.insert(pool[k]);
    }
  }
  Manifest out;
  for (std::size_t i : chosen) out.add(manifest.records()[i]);
  return out;
}

}  // namespace selfcheck
