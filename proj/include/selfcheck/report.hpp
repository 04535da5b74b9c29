// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "selfcheck/config.hpp"
#include "selfcheck/domain.hpp"
#include "selfcheck/eval.hpp"
#include "selfcheck/runner.hpp"
#include "selfcheck/text.hpp"

namespace selfcheck {

/// Row labels of every metric table, in order.
inline constexpr std::array<std::string_view, 5> kMetricRows = {"Precision", "Recall", "Specificity", "F1",
                                                                "MCC"};

/// Percent with two decimals for the ratio metrics, four decimals for MCC,
/// empty when undefined.
inline std::string format_metric_cell(std::size_t row, const Metric& value) {
  if (!value) return {};
  return row == 4 ? text::format_fixed(*value, 4) : text::format_fixed(*value * 100.0, 2);
}

inline Metric metric_at(const MetricReport& m, std::size_t row) {
  switch (row) {
    case 0: return m.precision;
    case 1: return m.recall;
    case 2: return m.specificity;
    case 3: return m.f1;
    default: return m.mcc;
  }
}

struct Permutation {
  std::string captioner;
  std::string checker;
  friend auto operator<=>(const Permutation&, const Permutation&) = default;
  std::string label() const { return captioner + "/" + checker; }
};

struct EvaluateOptions {
  std::vector<CorrectnessMode> modes{kAllCorrectnessModes.begin(), kAllCorrectnessModes.end()};
  std::vector<GroupKey> group_by;
  EvalOptions eval;
};

/// File name -> content.
using ReportFiles = std::map<std::string, std::string>;

namespace detail {

inline int time_of_day_rank(const std::string& s) {
  const auto t = parse_time_of_day(s);
  return t ? static_cast<int>(*t) : 99;
}

/// Orders group labels; time-of-day values follow day, dawn_dusk, night, unknown.
inline bool group_less(const std::vector<GroupKey>& keys, const GroupLabel& a, const GroupLabel& b) {
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (a[i] == b[i]) continue;
    if (keys[i] == GroupKey::time_of_day) return time_of_day_rank(a[i]) < time_of_day_rank(b[i]);
    return a[i] < b[i];
  }
  return false;
}

inline std::string section_name(const std::vector<GroupKey>& keys, const GroupLabel& label) {
  if (keys.empty()) return "all";
  std::string out;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (i) out += ";";
    out += std::string(to_string(keys[i])) + "=" + label[i];
  }
  return out;
}

inline std::string section_title(const std::vector<GroupKey>& keys, const GroupLabel& label) {
  if (keys.empty()) return "All images";
  std::string out;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (i) out += ", ";
    out += std::string(to_string(keys[i])) + ": " + label[i];
  }
  return out;
}

inline std::string mode_description(CorrectnessMode m) {
  return m == CorrectnessMode::no_hallucinated_agents
             ? "a caption is correct when it names no traffic agent absent from the labels"
             : "a caption is correct when it names every labelled traffic agent";
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string variant_heading(CaptionVariant v) { return v == CaptionVariant::fixed_r1_prime ? "R1'" : "R1"; }

}  // namespace detail

/// One run's records as loaded from its directory.
struct RunData {
  std::string dir;
  KeyValues config;
  std::vector<PipelineRecord> records;
};

inline RunData load_run(const std::string& dir) {
  RunData run;
  run.dir = dir;
  const auto root = std::filesystem::path(dir);
  const auto records = root / kRecordsFile;
  if (!std::filesystem::exists(records)) throw DataError("no " + std::string(kRecordsFile) + " in " + dir);
  run.records = read_records(records.string());
  const auto snap = root / kConfigSnapshotFile;
  if (std::filesystem::exists(snap)) run.config = parse_key_values(text::read_file(snap.string()), snap.string());
  return run;
}

struct EvaluationResult {
  ReportFiles files;
  /// Manifest image ids that some run has no record for.
  std::vector<std::string> missing;
  /// Records that entered the matrices, counted once across modes.
  std::size_t evaluated = 0;
};

/// Builds every report file from run records; touches neither network nor disk.
inline EvaluationResult build_reports(const std::vector<RunData>& runs, const Manifest& manifest,
                                      const SynonymTable& synonyms, const EvaluateOptions& options) {
  EvaluationResult result;
  std::vector<PipelineRecord> all;
  std::vector<Permutation> perms;
  for (const auto& run : runs) {
    std::set<std::string> seen;
    for (const auto& r : run.records) {
      seen.insert(r.image_id);
      Permutation p{r.captioner, r.checker};
      if (std::find(perms.begin(), perms.end(), p) == perms.end()) perms.push_back(p);
      all.push_back(r);
    }
    for (const auto& gt : manifest.records()) {
      if (!seen.contains(gt.image_id)) result.missing.push_back(gt.image_id);
    }
  }

  const std::array<CaptionVariant, 2> variants = {CaptionVariant::fixed_r1_prime, CaptionVariant::original_r1};
  std::vector<GroupKey> keys = options.group_by;

  // Baselines: one per captioner, from R1 of every record that has samples.
  std::string baseline_csv = "captioner,mode,correct,counted,skipped,rate\n";
  std::map<std::string, std::map<std::string, AgentSet>> captions_by_captioner;
  std::vector<std::string> captioners;
  for (const auto& r : all) {
    if (!r.has_samples()) continue;
    if (!captions_by_captioner.contains(r.captioner)) captioners.push_back(r.captioner);
    captions_by_captioner[r.captioner].emplace(
        r.image_id, caption_agents(r.r1_sentences(), synonyms, options.eval.extraction));
  }
  std::map<std::pair<std::string, CorrectnessMode>, BaselineRate> baselines;
  for (const auto& cap : captioners) {
    for (CorrectnessMode mode : options.modes) {
      const auto b = baseline_correct_rate(manifest, captions_by_captioner[cap], mode);
      baselines[{cap, mode}] = b;
      baseline_csv += detail::csv_escape(cap) + "," + std::string(to_string(mode)) + "," +
                      std::to_string(b.correct) + "," + std::to_string(b.counted) + "," +
                      std::to_string(b.skipped) + "," +
                      (b.percentage ? text::format_fixed(*b.percentage, 2) : std::string()) + "\n";
    }
  }
  result.files["baseline.csv"] = baseline_csv;

  std::string eval_jsonl;
  for (CorrectnessMode mode : options.modes) {
    // (perm, variant) -> per-group results
    std::map<std::pair<Permutation, CaptionVariant>, std::map<GroupLabel, GroupResult>> tables;
    std::map<std::pair<Permutation, CaptionVariant>, EvalBatch> batches;
    std::vector<GroupLabel> labels;
    for (const auto& perm : perms) {
      std::vector<PipelineRecord> subset;
      for (const auto& r : all) {
        if (r.captioner == perm.captioner && r.checker == perm.checker) subset.push_back(r);
      }
      for (CaptionVariant v : variants) {
        auto batch = evaluate_batch(subset, manifest, mode, v, synonyms, options.eval);
        for (const auto& e : batch.records) eval_jsonl += eval_record_to_json(e).dump() + "\n";
        auto groups = aggregate(batch.records, keys);
        for (const auto& [label, _] : groups) {
          if (std::find(labels.begin(), labels.end(), label) == labels.end()) labels.push_back(label);
        }
        if (v == CaptionVariant::fixed_r1_prime && mode == options.modes.front()) {
          result.evaluated += batch.records.size();
        }
        tables[{perm, v}] = std::move(groups);
        batches[{perm, v}] = std::move(batch);
      }
    }
    std::sort(labels.begin(), labels.end(),
              [&](const GroupLabel& a, const GroupLabel& b) { return detail::group_less(keys, a, b); });

    const std::string mode_name(to_string(mode));
    std::string csv = "section,metric";
    for (const auto& perm : perms) {
      for (CaptionVariant v : variants) {
        csv += "," + detail::csv_escape(perm.label() + " " + std::string(to_string(v)));
      }
    }
    csv += "\n";
    std::string counts_csv = "section,captioner,checker,variant,tp,tn,fp,fn,total\n";

    std::string md = "# Hallucination detection: " + mode_name + "\n\n";
    md += "Correctness: " + detail::mode_description(mode) + ". Positive class: correct caption; "
          "a hallucination flag predicts an incorrect caption.\n\n";

    if (labels.empty()) md += "No evaluated records (zero-count run).\n\n";

    for (const auto& label : labels) {
      const std::string section = detail::section_name(keys, label);
      md += "## " + detail::section_title(keys, label) + "\n\n| Metric |";
      std::string rule = "| --- |";
      for (const auto& perm : perms) {
        for (CaptionVariant v : variants) {
          md += " " + perm.captioner + " / " + perm.checker + " " + detail::variant_heading(v) + " |";
          rule += " ---: |";
        }
      }
      md += "\n" + rule + "\n";
      for (std::size_t row = 0; row < kMetricRows.size(); ++row) {
        csv += detail::csv_escape(section) + "," + std::string(kMetricRows[row]);
        md += "| " + std::string(kMetricRows[row]) + " |";
        for (const auto& perm : perms) {
          for (CaptionVariant v : variants) {
            const auto& groups = tables[{perm, v}];
            auto it = groups.find(label);
            const ConfusionMatrix cm = it == groups.end() ? ConfusionMatrix{} : it->second.matrix;
            const auto cell = format_metric_cell(row, metric_at(compute_metrics(cm), row));
            csv += "," + cell;
            std::string shown = cell.empty() ? "—" : cell;
            if (!cell.empty() && row < 4) shown += "%";
            md += " " + shown + " |";
          }
        }
        csv += "\n";
        md += "\n";
      }
      md += "\nCounts (TP/TN/FP/FN):";
      bool first = true;
      for (const auto& perm : perms) {
        for (CaptionVariant v : variants) {
          const auto& groups = tables[{perm, v}];
          auto it = groups.find(label);
          const ConfusionMatrix cm = it == groups.end() ? ConfusionMatrix{} : it->second.matrix;
          md += std::string(first ? " " : "; ") + perm.label() + " " + detail::variant_heading(v) + " " +
                std::to_string(cm.tp) + "/" + std::to_string(cm.tn) + "/" + std::to_string(cm.fp) + "/" +
                std::to_string(cm.fn);
          first = false;
          counts_csv += detail::csv_escape(section) + "," + detail::csv_escape(perm.captioner) + "," +
                        detail::csv_escape(perm.checker) + "," + std::string(to_string(v)) + "," +
                        std::to_string(cm.tp) + "," + std::to_string(cm.tn) + "," + std::to_string(cm.fp) + "," +
                        std::to_string(cm.fn) + "," + std::to_string(cm.total()) + "\n";
        }
      }
      md += ".\n\n";
    }

    std::string excluded;
    for (const auto& perm : perms) {
      const auto& batch = batches[{perm, CaptionVariant::fixed_r1_prime}];
      for (const auto& s : batch.skipped) excluded += "- " + perm.label() + ": " + s.image_id + " (" + s.message + ")\n";
      for (const auto& s : batch.errors) excluded += "- " + perm.label() + ": " + s.image_id + " (" + s.message + ")\n";
    }
    if (!excluded.empty()) md += "Excluded records:\n\n" + excluded + "\n";

    md += "Baseline correct rate (R1 against labels):";
    bool first = true;
    for (const auto& cap : captioners) {
      const auto& b = baselines[{cap, mode}];
      md += std::string(first ? " " : "; ") + cap + " " +
            (b.percentage ? text::format_fixed(*b.percentage, 2) + "%" : std::string("—")) + " (" +
            std::to_string(b.correct) + "/" + std::to_string(b.counted) + ")";
      first = false;
    }
    if (captioners.empty()) md += " —";
    md += ".\n";

    result.files["report_" + mode_name + ".csv"] = csv;
    result.files["report_" + mode_name + ".md"] = md;
    result.files["confusion_" + mode_name + ".csv"] = counts_csv;
  }
  result.files["eval_records.jsonl"] = eval_jsonl;
  return result;
}

inline void write_report_files(const std::filesystem::path& dir, const ReportFiles& files) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, content] : files) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + (dir / name).string());
    out << content;
  }
}

}  // namespace selfcheck
