#include "kfdaseg/report.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kfdaseg/error.h"

namespace kfdaseg {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json box_json(const Box& b) { return {{"lo", b.lo}, {"hi", b.hi}}; }

Box box_from(const json& j) {
  Box b;
  b.lo = j.at("lo").get<std::array<int, 3>>();
  b.hi = j.at("hi").get<std::array<int, 3>>();
  return b;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double number_or_inf(const json& j) { return j.is_null() ? HUGE_VAL : j.get<double>(); }

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> optional_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12f", v);
  return buf;
}

const char* kClassNames[3] = {"CSF", "GM", "WM"};

void require(const json& j, const char* key, json::value_t type, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ValidationError("report: missing field " + where + key);
  const json& v = j.at(key);
  const bool ok = type == json::value_t::number_float ? v.is_number()
                  : type == json::value_t::number_unsigned ? v.is_number_unsigned() || v.is_number_integer()
                                                           : v.type() == type;
  if (!ok) throw ValidationError("report: field " + where + key + " has the wrong type");
}

void require_nullable_number(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ValidationError("report: missing field " + where + key);
  if (!j.at(key).is_null() && !j.at(key).is_number()) {
    throw ValidationError("report: field " + where + key + " must be a number or null");
  }
}

}  // namespace

std::string report_to_json(const RunReport& r) {
  json j;
  j["seed"] = r.seed;
  j["domains"] = json::array();
  for (const DomainRow& d : r.domains) {
    j["domains"].push_back({{"domain", d.domain},
                            {"core", box_json(d.core)},
                            {"padded", box_json(d.padded)},
                            {"voxels", d.voxels},
                            {"mssim_initial", d.mssim_initial},
                            {"mssim_kfda", d.mssim_kfda},
                            {"csf_lambda", optional_json(d.csf_lambda)},
                            {"tissue_lambda", optional_json(d.tissue_lambda)}});
  }
  j["domains_improved"] = r.domains_improved;
  j["curves"] = json::array();
  for (const LevelStats& s : r.curves) {
    j["curves"].push_back({{"level", s.level},
                           {"count", s.count},
                           {"mir", s.mir},
                           {"snr", finite_or_null(s.snr)},
                           {"snr_normalized", finite_or_null(s.snr_normalized)}});
  }
  j["intercept"] = r.intercept;
  j["selected_count"] = r.selected_count;
  json counts = json::object();
  for (int c = 0; c < 3; ++c) {
    counts[kClassNames[c]] = {{"initial", r.counts_initial[c]}, {"final", r.counts_final[c]}};
  }
  j["counts"] = counts;
  if (r.dice_initial && r.dice_final) {
    json d = json::object();
    for (int c = 0; c < 3; ++c) d[kClassNames[c]] = {{"initial", (*r.dice_initial)[c]}, {"final", (*r.dice_final)[c]}};
    j["dice"] = d;
  } else {
    j["dice"] = nullptr;
  }
  j["warnings"] = r.warnings;
  return j.dump(2) + "\n";
}

void validate_report_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("report: not JSON: ") + e.what());
  }
  require(j, "seed", json::value_t::number_unsigned, "");
  require(j, "domains", json::value_t::array, "");
  for (std::size_t i = 0; i < j["domains"].size(); ++i) {
    const json& d = j["domains"][i];
    const std::string where = "domains[" + std::to_string(i) + "].";
    require(d, "domain", json::value_t::number_unsigned, where);
    require(d, "core", json::value_t::object, where);
    require(d, "padded", json::value_t::object, where);
    require(d, "voxels", json::value_t::number_unsigned, where);
    require(d, "mssim_initial", json::value_t::number_float, where);
    require(d, "mssim_kfda", json::value_t::number_float, where);
    require_nullable_number(d, "csf_lambda", where);
    require_nullable_number(d, "tissue_lambda", where);
    for (const char* b : {"core", "padded"}) {
      for (const char* e : {"lo", "hi"}) {
        const json& v = d[b].contains(e) ? d[b][e] : json();
        if (!v.is_array() || v.size() != 3) throw ValidationError("report: " + where + b + "." + e + " must be [i,j,k]");
      }
    }
  }
  require(j, "domains_improved", json::value_t::number_unsigned, "");
  require(j, "curves", json::value_t::array, "");
  for (std::size_t i = 0; i < j["curves"].size(); ++i) {
    const json& c = j["curves"][i];
    const std::string where = "curves[" + std::to_string(i) + "].";
    require(c, "level", json::value_t::number_unsigned, where);
    require(c, "count", json::value_t::number_unsigned, where);
    require(c, "mir", json::value_t::number_float, where);
    require_nullable_number(c, "snr", where);
    require_nullable_number(c, "snr_normalized", where);
  }
  require(j, "intercept", json::value_t::number_float, "");
  require(j, "selected_count", json::value_t::number_unsigned, "");
  require(j, "counts", json::value_t::object, "");
  for (const char* name : kClassNames) {
    require(j["counts"], name, json::value_t::object, "counts.");
    require(j["counts"][name], "initial", json::value_t::number_unsigned, std::string("counts.") + name + ".");
    require(j["counts"][name], "final", json::value_t::number_unsigned, std::string("counts.") + name + ".");
  }
  if (!j.contains("dice")) throw ValidationError("report: missing field dice");
  if (!j["dice"].is_null()) {
    for (const char* name : kClassNames) {
      require(j["dice"], name, json::value_t::object, "dice.");
      require(j["dice"][name], "initial", json::value_t::number_float, std::string("dice.") + name + ".");
      require(j["dice"][name], "final", json::value_t::number_float, std::string("dice.") + name + ".");
    }
  }
  require(j, "warnings", json::value_t::array, "");
  if (j["domains_improved"].get<std::size_t>() > j["domains"].size()) {
    throw ValidationError("report: domains_improved exceeds the number of domains");
  }
}

RunReport report_from_json(const std::string& text) {
  validate_report_json(text);
  const json j = json::parse(text);
  RunReport r;
  r.seed = j["seed"].get<std::uint64_t>();
  for (const json& d : j["domains"]) {
    DomainRow row;
    row.domain = d["domain"].get<int>();
    row.core = box_from(d["core"]);
    row.padded = box_from(d["padded"]);
    row.voxels = d["voxels"].get<std::size_t>();
    row.mssim_initial = d["mssim_initial"].get<double>();
    row.mssim_kfda = d["mssim_kfda"].get<double>();
    row.csf_lambda = optional_from(d["csf_lambda"]);
    row.tissue_lambda = optional_from(d["tissue_lambda"]);
    r.domains.push_back(row);
  }
  r.domains_improved = j["domains_improved"].get<std::size_t>();
  for (const json& c : j["curves"]) {
    LevelStats s;
    s.level = c["level"].get<int>();
    s.count = c["count"].get<std::size_t>();
    s.mir = c["mir"].get<double>();
    s.snr = number_or_inf(c["snr"]);
    s.snr_normalized = number_or_inf(c["snr_normalized"]);
    r.curves.push_back(s);
  }
  r.intercept = j["intercept"].get<double>();
  r.selected_count = j["selected_count"].get<std::size_t>();
  for (int c = 0; c < 3; ++c) {
    r.counts_initial[c] = j["counts"][kClassNames[c]]["initial"].get<std::size_t>();
    r.counts_final[c] = j["counts"][kClassNames[c]]["final"].get<std::size_t>();
  }
  if (!j["dice"].is_null()) {
    std::array<double, 3> di{}, df{};
    for (int c = 0; c < 3; ++c) {
      di[c] = j["dice"][kClassNames[c]]["initial"].get<double>();
      df[c] = j["dice"][kClassNames[c]]["final"].get<double>();
    }
    r.dice_initial = di;
    r.dice_final = df;
  }
  r.warnings = j["warnings"].get<std::vector<std::string>>();
  return r;
}

std::string mssim_table_csv(const RunReport& r) {
  std::ostringstream os;
  os << "domain,initial,kfda\n";
  if (r.domains.empty()) return os.str();
  double si = 0.0, sk = 0.0;
  for (const DomainRow& d : r.domains) {
    os << d.domain << ',' << fmt(d.mssim_initial) << ',' << fmt(d.mssim_kfda) << '\n';
    si += d.mssim_initial;
    sk += d.mssim_kfda;
  }
  const double n = static_cast<double>(r.domains.size());
  os << "mean," << fmt(si / n) << ',' << fmt(sk / n) << '\n';
  return os.str();
}

std::string curves_csv(const std::vector<LevelStats>& levels) {
  std::ostringstream os;
  os << "level,count,mir,snr_normalized\n";
  for (const LevelStats& s : levels) {
    os << s.level << ',' << s.count << ',' << fmt(s.mir) << ',' << fmt(s.snr_normalized) << '\n';
  }
  return os.str();
}

std::string timing_to_json(const RunTiming& t) {
  json j = {{"partition_s", t.partition_s},
            {"classify_s", t.classify_s},
            {"stitch_s", t.stitch_s},
            {"report_s", t.report_s},
            {"total_s", t.partition_s + t.classify_s + t.stitch_s + t.report_s}};
  return j.dump(2) + "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValidationError("cannot write " + path.string());
  f << text;
  if (!f) throw ValidationError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot read " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void emit_report(const RunReport& report, const fs::path& outdir) {
  std::error_code ec;
  fs::create_directories(outdir, ec);
  if (ec) throw ValidationError("cannot create " + outdir.string() + ": " + ec.message());
  write_text(outdir / "report.json", report_to_json(report));
  write_text(outdir / "mssim_table.csv", mssim_table_csv(report));
  write_text(outdir / "curves.csv", curves_csv(report.curves));
}

}  // namespace kfdaseg
