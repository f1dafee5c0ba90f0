#include <charconv>
#include <cmath>
#include <fstream>

#include "hsdiff/error.hpp"
#include "hsdiff/harness.hpp"
#include "harness_detail.hpp"
#include "json.hpp"

namespace hsdiff {

using ojson = nlohmann::ordered_json;

std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

void Table::add(std::vector<std::string> row) {
  require(row.size() == columns.size(), "row width does not match the table " + name);
  rows.push_back(std::move(row));
}

bool RunManifest::invariants_ok() const {
  for (const auto& r : replicas) {
    if (!r.ok) return false;
  }
  for (const auto& c : checks) {
    if (c.kind == "invariant" && !c.pass) return false;
  }
  return true;
}

bool RunManifest::all_checks_pass() const {
  for (const auto& c : checks) {
    if (!c.pass) return false;
  }
  return true;
}

double RunManifest::metric(const std::string& key) const {
  for (const auto& [k, v] : summary) {
    if (k == key) return v;
  }
  throw Error("no summary metric " + key);
}

namespace {

ojson number_or_string(const std::string& s) {
  double x = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
  if (r.ec == std::errc() && r.ptr == s.data() + s.size() && std::isfinite(x)) return x;
  return s;
}

ojson finite_or_null(double x) { return std::isfinite(x) ? ojson(x) : ojson(nullptr); }

}  // namespace

std::string RunManifest::to_json() const {
  ojson j;
  j["experiment"] = experiment;
  j["version"] = version;
  j["status"] = status;
  if (!failure.empty()) j["failure"] = failure;
  j["base_seed"] = base_seed;
  j["config"] = config;
  ojson reps = ojson::array();
  for (const auto& r : replicas) {
    ojson o;
    o["index"] = r.index;
    o["seed"] = r.seed;
    o["events"] = r.events;
    o["collisions"] = r.collisions;
    o["ok"] = r.ok;
    if (!r.error.empty()) o["error"] = r.error;
    if (!r.dump.empty()) o["state_dump"] = r.dump;
    reps.push_back(o);
  }
  j["replicas"] = reps;
  ojson checks_j = ojson::array();
  for (const auto& c : checks) {
    ojson o;
    o["name"] = c.name;
    o["kind"] = c.kind;
    o["pass"] = c.pass;
    o["value"] = finite_or_null(c.value);
    o["threshold"] = finite_or_null(c.threshold);
    if (!c.detail.empty()) o["detail"] = c.detail;
    checks_j.push_back(o);
  }
  j["checks"] = checks_j;
  ojson summary_j = ojson::object();
  for (const auto& [k, v] : summary) summary_j[k] = finite_or_null(v);
  j["summary"] = summary_j;
  j["outputs"] = outputs;
  return j.dump(2) + "\n";
}

void write_table(const Table& t, const std::filesystem::path& dir, const std::string& format,
                 std::vector<std::string>& inventory) {
  const std::string file = t.name + (format == "json" ? ".json" : ".csv");
  std::ofstream os(dir / file, std::ios::binary);
  if (!os) throw Error("cannot write " + (dir / file).string());
  if (format == "json") {
    ojson arr = ojson::array();
    for (const auto& row : t.rows) {
      ojson o;
      for (std::size_t k = 0; k < row.size(); ++k) o[t.columns[k]] = number_or_string(row[k]);
      arr.push_back(o);
    }
    os << arr.dump(2) << '\n';
  } else {
    auto cell = [](const std::string& s) {
      if (s.find_first_of(",\"\n") == std::string::npos) return s;
      std::string q = "\"";
      for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      return q + "\"";
    };
    for (std::size_t k = 0; k < t.columns.size(); ++k) os << (k ? "," : "") << cell(t.columns[k]);
    os << '\n';
    for (const auto& row : t.rows) {
      for (std::size_t k = 0; k < row.size(); ++k) os << (k ? "," : "") << cell(row[k]);
      os << '\n';
    }
  }
  inventory.push_back(file);
}

void write_timings(const std::vector<std::pair<std::string, double>>& timings,
                   const std::filesystem::path& dir) {
  ojson j = ojson::object();
  for (const auto& [k, v] : timings) j[k] = v;
  std::ofstream os(dir / "timings.json");
  os << j.dump(2) << '\n';
}

}  // namespace hsdiff
