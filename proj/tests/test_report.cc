#include <algorithm>
#include <cmath>
#include <limits>
#include <filesystem>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "kfdaseg/error.h"
#include "kfdaseg/partition.h"
#include "kfdaseg/phantom.h"
#include "kfdaseg/pipeline.h"
#include "kfdaseg/report.h"
#include "kfdaseg/volume_io.h"

using namespace kfdaseg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

RunReport sample_report() {
  RunReport r;
  r.seed = 7;
  for (int i = 0; i < 3; ++i) {
    DomainRow d;
    d.domain = i;
    d.core = Box{{i * 4, 0, 0}, {i * 4 + 3, 7, 7}};
    d.padded = Box{{std::max(0, i * 4 - 1), 0, 0}, {std::min(11, i * 4 + 4), 7, 7}};
    d.voxels = 256;
    d.mssim_initial = 0.5 + 0.1 * i;
    d.mssim_kfda = 0.55 + 0.1 * i;
    if (i != 1) d.csf_lambda = 0.01 * (i + 1);
    d.tissue_lambda = 0.0;
    r.domains.push_back(d);
  }
  r.domains_improved = 3;
  r.curves.push_back({0, 1, 0.0, 3.5, 1.0});
  r.curves.push_back({1, 2, 0.25, 4.0, 1.5});
  LevelStats last{2, 3, 0.5, 0.0, 0.0};
  last.snr = std::numeric_limits<double>::infinity();
  last.snr_normalized = std::numeric_limits<double>::infinity();
  r.curves.push_back(last);
  r.intercept = 1.25;
  r.selected_count = 3;
  r.counts_initial = {10, 20, 30};
  r.counts_final = {12, 19, 29};
  r.dice_initial = std::array<double, 3>{0.8, 0.7, 0.9};
  r.dice_final = std::array<double, 3>{0.9, 0.85, 0.95};
  r.warnings = {"domain_001: csf: a class has fewer than 2 initial voxels"};
  return r;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(MssimTable, EmptyReportIsHeaderOnly) {
  EXPECT_EQ(mssim_table_csv(RunReport{}), "domain,initial,kfda\n");
}

TEST(MssimTable, RowsThenMean) {
  const std::vector<std::string> l = lines(mssim_table_csv(sample_report()));
  ASSERT_EQ(l.size(), 5u);
  EXPECT_EQ(l[1], "0,0.500000000000,0.550000000000");
  EXPECT_EQ(l[4], "mean,0.600000000000,0.650000000000");
}

TEST(Curves, CsvColumnsAndInfinity) {
  const std::vector<std::string> l = lines(curves_csv(sample_report().curves));
  ASSERT_EQ(l.size(), 4u);
  EXPECT_EQ(l[0], "level,count,mir,snr_normalized");
  EXPECT_EQ(l[2], "1,2,0.250000000000,1.500000000000");
  EXPECT_EQ(l[3], "2,3,0.500000000000,inf");
}

TEST(ReportJson, RoundTrip) {
  const RunReport r = sample_report();
  const std::string text = report_to_json(r);
  EXPECT_NO_THROW(validate_report_json(text));
  const RunReport back = report_from_json(text);
  EXPECT_EQ(report_to_json(back), text);
  ASSERT_EQ(back.domains.size(), 3u);
  EXPECT_FALSE(back.domains[1].csf_lambda.has_value());
  EXPECT_DOUBLE_EQ(*back.domains[2].csf_lambda, 0.03);
  EXPECT_TRUE(std::isinf(back.curves[2].snr_normalized));
  EXPECT_EQ(back.counts_final, r.counts_final);
  EXPECT_EQ(back.warnings, r.warnings);
}

TEST(ReportJson, NullDiceRoundTrips) {
  RunReport r = sample_report();
  r.dice_initial.reset();
  r.dice_final.reset();
  const RunReport back = report_from_json(report_to_json(r));
  EXPECT_FALSE(back.dice_final.has_value());
}

TEST(ReportJson, MissingOrMistypedFieldsAreRejected) {
  const json good = json::parse(report_to_json(sample_report()));
  for (const char* key : {"seed", "domains", "curves", "intercept", "counts", "dice", "warnings"}) {
    json j = good;
    j.erase(key);
    EXPECT_THROW(validate_report_json(j.dump()), ValidationError) << key;
  }
  json j = good;
  j["domains"][0].erase("mssim_kfda");
  try {
    validate_report_json(j.dump());
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("domains[0].mssim_kfda"), std::string::npos) << e.what();
  }
  j = good;
  j["counts"]["GM"]["final"] = "many";
  EXPECT_THROW(validate_report_json(j.dump()), ValidationError);
  j = good;
  j["domains_improved"] = 9;
  EXPECT_THROW(validate_report_json(j.dump()), ValidationError);
  EXPECT_THROW(validate_report_json("{not json"), ValidationError);
}

TEST(EmitReport, WritesThreeFiles) {
  const fs::path dir = fs::temp_directory_path() / "kfdaseg_emit_report";
  fs::remove_all(dir);
  emit_report(sample_report(), dir);
  for (const char* f : {"report.json", "mssim_table.csv", "curves.csv"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_NO_THROW(validate_report_json(read_text(dir / "report.json")));
  fs::remove_all(dir);
}

// The MSSIM values in a report are reproducible from the saved label files.
TEST(EmitReport, MssimRecomputableFromSavedLabels) {
  PipelineConfig cfg;
  cfg.phantom.dims = Dims{24, 24, 24};
  cfg.partition.max_depth = 2;
  cfg.classify.max_training = 200;
  const fs::path dir = fs::temp_directory_path() / "kfdaseg_report_recompute";
  fs::remove_all(dir);
  cfg.output = dir;
  const RunResult res = run_pipeline(cfg);

  const RunReport saved = report_from_json(read_text(dir / "report.json"));
  const MultiChannelVolume vol = load_input(cfg).volume;
  const LabelVolume init = load_labels(dir / "init");
  const LabelVolume labels = load_labels(dir / "labels");
  EXPECT_EQ(labels, res.labels);
  const PartitionTree tree = partition_from_json(read_text(dir / "partition.json"));
  ASSERT_EQ(saved.domains.size(), tree.leaves.size());
  for (std::size_t i = 0; i < tree.leaves.size(); ++i) {
    EXPECT_NEAR(saved.domains[i].mssim_initial, domain_mssim(vol, init, tree.leaves[i].padded, cfg.classify), 1e-9);
    EXPECT_NEAR(saved.domains[i].mssim_kfda, domain_mssim(vol, labels, tree.leaves[i].padded, cfg.classify), 1e-9);
  }
  fs::remove_all(dir);
}
