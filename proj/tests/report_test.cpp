// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "test_support.hpp"

namespace selfcheck {
namespace {

using testing::fixture_path;
using testing::read_csv;
using testing::synthetic_run;

TEST(MetricCell, Formatting) {
  EXPECT_EQ(format_metric_cell(0, 0.5), "50.00");
  EXPECT_EQ(format_metric_cell(1, 14.0 / 18.0), "77.78");
  EXPECT_EQ(format_metric_cell(2, 0.0), "0.00");
  EXPECT_EQ(format_metric_cell(3, 1.0), "100.00");
  EXPECT_EQ(format_metric_cell(4, -0.121716), "-0.1217");
  EXPECT_EQ(format_metric_cell(4, -0.00001), "0.0000");
  EXPECT_EQ(format_metric_cell(0, std::nullopt), "");
  EXPECT_EQ(format_metric_cell(4, std::nullopt), "");
}

std::vector<RunData> synthetic_runs(std::initializer_list<std::string> checkers) {
  std::vector<RunData> runs;
  for (const auto& c : checkers) runs.push_back(RunData{"run_" + c, {}, synthetic_run(c)});
  return runs;
}

void expect_matches_golden(const ReportFiles& files, const std::string& golden_dir) {
  std::size_t compared = 0;
  for (const auto& entry : std::filesystem::directory_iterator(fixture_path(golden_dir))) {
    const auto name = entry.path().filename().string();
    ASSERT_TRUE(files.contains(name)) << name;
    EXPECT_EQ(files.at(name), text::read_file(entry.path().string())) << name;
    ++compared;
  }
  EXPECT_EQ(compared, files.size());
}

TEST(BuildReports, CombinedRunsMatchGolden) {
  const auto manifest = Manifest::load(fixture_path("synthetic/manifest.jsonl"));
  const auto result = build_reports(synthetic_runs({"gpt4o", "llama3"}), manifest, default_synonym_table(), {});
  EXPECT_TRUE(result.missing.empty());
  EXPECT_EQ(result.evaluated, 39u);
  expect_matches_golden(result.files, "synthetic/golden/combined");
}

TEST(BuildReports, TimeOfDayGroupingMatchesGolden) {
  const auto manifest = Manifest::load(fixture_path("synthetic/manifest.jsonl"));
  EvaluateOptions options;
  options.modes = {CorrectnessMode::no_overlooked_agents};
  options.group_by = {GroupKey::time_of_day};
  const auto result = build_reports(synthetic_runs({"gpt4o"}), manifest, default_synonym_table(), options);
  expect_matches_golden(result.files, "synthetic/golden/time_of_day");

  std::set<std::string> sections;
  for (const auto& row : read_csv(fixture_path("synthetic/golden/time_of_day/report_no_overlooked_agents.csv"))) {
    sections.insert(row.at("section"));
  }
  EXPECT_EQ(sections, (std::set<std::string>{"time_of_day=day", "time_of_day=dawn_dusk", "time_of_day=night"}));
}

TEST(BuildReports, TableShape) {
  const auto manifest = Manifest::load(fixture_path("synthetic/manifest.jsonl"));
  const auto result = build_reports(synthetic_runs({"gpt4o", "llama3"}), manifest, default_synonym_table(), {});
  const auto& csv = result.files.at("report_no_hallucinated_agents.csv");
  const auto lines = testing::lines_of(csv);
  ASSERT_EQ(lines.size(), 6u);
  EXPECT_EQ(lines[0],
            "section,metric,llava/gpt4o fixed_R1_prime,llava/gpt4o original_R1,"
            "llava/llama3 fixed_R1_prime,llava/llama3 original_R1");
  for (std::size_t i = 0; i < kMetricRows.size(); ++i) {
    EXPECT_TRUE(lines[i + 1].starts_with("all," + std::string(kMetricRows[i]) + ",")) << lines[i + 1];
  }
}

// Every metric cell equals the formatted metric of the matching confusion row.
TEST(BuildReports, CellsAgreeWithConfusionCounts) {
  const auto manifest = Manifest::load(fixture_path("synthetic/manifest.jsonl"));
  for (const auto& keys : std::vector<std::vector<GroupKey>>{{}, {GroupKey::dataset}, {GroupKey::time_of_day}}) {
    EvaluateOptions options;
    options.group_by = keys;
    const auto result = build_reports(synthetic_runs({"gpt4o", "llama3"}), manifest, default_synonym_table(), options);
    testing::TempDir dir;
    write_report_files(dir.path(), result.files);
    for (CorrectnessMode mode : kAllCorrectnessModes) {
      const std::string m(to_string(mode));
      const auto report = read_csv(dir.file("report_" + m + ".csv"));
      const auto counts = read_csv(dir.file("confusion_" + m + ".csv"));
      std::size_t checked = 0;
      for (const auto& c : counts) {
        const ConfusionMatrix cm{std::stoull(c.at("tp")), std::stoull(c.at("tn")), std::stoull(c.at("fp")),
                                 std::stoull(c.at("fn"))};
        const auto metrics = compute_metrics(cm);
        const std::string column = c.at("captioner") + "/" + c.at("checker") + " " + c.at("variant");
        for (const auto& row : report) {
          if (row.at("section") != c.at("section")) continue;
          const auto idx = static_cast<std::size_t>(
              std::find(kMetricRows.begin(), kMetricRows.end(), row.at("metric")) - kMetricRows.begin());
          ASSERT_LT(idx, kMetricRows.size());
          EXPECT_EQ(row.at(column), format_metric_cell(idx, metric_at(metrics, idx))) << column;
          ++checked;
        }
      }
      EXPECT_EQ(checked, counts.size() * kMetricRows.size());
    }
  }
}

TEST(BuildReports, BaselineCountsFailedCheckRecords) {
  const auto manifest = Manifest::load(fixture_path("synthetic/manifest.jsonl"));
  const auto result = build_reports(synthetic_runs({"gpt4o"}), manifest, default_synonym_table(), {});
  const auto rows = read_csv(fixture_path("synthetic/oracle_baseline.csv"));
  const auto baseline = testing::lines_of(result.files.at("baseline.csv"));
  ASSERT_EQ(baseline.size(), 3u);
  for (const auto& row : rows) {
    const std::string expected = row.at("captioner") + "," + row.at("mode") + "," + row.at("correct") + "," +
                                 row.at("counted") + ",0," + row.at("rate");
    EXPECT_NE(std::find(baseline.begin(), baseline.end(), expected), baseline.end()) << expected;
  }
}

TEST(BuildReports, EmptyRunIsZeroCount) {
  const auto manifest = Manifest::load(fixture_path("synthetic/manifest.jsonl"));
  const auto result = build_reports({RunData{"empty", {}, {}}}, manifest, default_synonym_table(), {});
  EXPECT_EQ(result.evaluated, 0u);
  EXPECT_EQ(result.missing.size(), 20u);
  EXPECT_EQ(result.files.at("report_no_hallucinated_agents.csv"), "section,metric\n");
  EXPECT_NE(result.files.at("report_no_hallucinated_agents.md").find("No evaluated records"), std::string::npos);
  EXPECT_EQ(result.files.at("baseline.csv"), "captioner,mode,correct,counted,skipped,rate\n");
  EXPECT_EQ(result.files.at("eval_records.jsonl"), "");
}

TEST(BuildReports, MarkdownMarksUndefinedCells) {
  const auto manifest = Manifest::load(fixture_path("synthetic/manifest.jsonl"));
  EvaluateOptions options;
  options.modes = {CorrectnessMode::no_overlooked_agents};
  options.group_by = {GroupKey::time_of_day};
  const auto result = build_reports(synthetic_runs({"gpt4o"}), manifest, default_synonym_table(), options);
  const auto& md = result.files.at("report_no_overlooked_agents.md");
  EXPECT_NE(md.find("| Specificity | — | — |"), std::string::npos);
  EXPECT_NE(md.find("## time_of_day: night"), std::string::npos);
  EXPECT_NE(md.find("| MCC | 0.4082 | 0.0000 |"), std::string::npos);
}

TEST(Runs, WriteReadRoundTrip) {
  testing::TempDir dir;
  const auto records = synthetic_run("gpt4o");
  write_records(dir.file("records.jsonl"), records);
  const auto back = read_records(dir.file("records.jsonl"));
  ASSERT_EQ(back.size(), records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(record_to_json(back[i]), record_to_json(records[i]));
  }
  testing::write_file(dir.file("bad.jsonl"), "{\"image_id\": 1}\n");
  EXPECT_THROW(read_records(dir.file("bad.jsonl")), DataError);
  EXPECT_THROW(load_run(dir.file("nope")), DataError);
}

TEST(Runs, Summary) {
  const auto summary = summarize_run(synthetic_run("gpt4o"));
  EXPECT_EQ(summary["records"], 20);
  EXPECT_EQ(summary["ok"], 19);
  EXPECT_EQ(summary["failed"], 1);
  EXPECT_EQ(summary["failures"][0]["image_id"], "img_020");
  EXPECT_EQ(summary["failures"][0]["stage"], "check");
  EXPECT_EQ(summary["unparseable_verdicts"], 1);
  EXPECT_EQ(summary["captioner_samples"], 100);
}

}  // namespace
}  // namespace selfcheck
