#ifndef KFDASEG_REPORT_H_
#define KFDASEG_REPORT_H_

#include <filesystem>
#include <string>
#include <vector>

#include "kfdaseg/pipeline.h"

namespace kfdaseg {

std::string report_to_json(const RunReport& report);
RunReport report_from_json(const std::string& text);

// Throws ValidationError naming the first missing or mistyped field.
void validate_report_json(const std::string& text);

// Columns domain,initial,kfda; a final "mean" row unless the table is empty.
std::string mssim_table_csv(const RunReport& report);
// Columns level,count,mir,snr_normalized.
std::string curves_csv(const std::vector<LevelStats>& levels);

std::string timing_to_json(const RunTiming& timing);

// Writes report.json, mssim_table.csv and curves.csv into `outdir`.
void emit_report(const RunReport& report, const std::filesystem::path& outdir);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace kfdaseg

#endif  // KFDASEG_REPORT_H_
