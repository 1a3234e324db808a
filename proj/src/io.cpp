#include "stagewalk/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

namespace stagewalk {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void parse_fail(const std::string& message) { throw Error(ErrorCode::ParseError, message); }

const Json& field(const Json& doc, const char* name) {
  if (!doc.is_object() || !doc.contains(name)) parse_fail(std::string("missing field '") + name + "'");
  return doc.at(name);
}

template <typename T>
T get(const Json& doc, const char* name) {
  try {
    return field(doc, name).get<T>();
  } catch (const nlohmann::json::exception&) {
    parse_fail(std::string("field '") + name + "' has the wrong type");
  }
}

void check_header(const Json& doc, std::string_view kind) {
  if (!doc.is_object()) parse_fail("document must be a JSON object");
  const auto version = get<std::string>(doc, "schema_version");
  if (version != kSchemaVersion) parse_fail("unsupported schema_version '" + version + "'");
  if (doc.contains("kind") && doc.at("kind") != kind) {
    parse_fail("expected a '" + std::string(kind) + "' document");
  }
}

Json header(std::string_view kind, Convention convention) {
  Json doc = Json::object();
  doc["schema_version"] = kSchemaVersion;
  doc["kind"] = kind;
  doc["convention"] = to_string(convention);
  return doc;
}

Json number_or_null(double x) { return std::isnan(x) ? Json(nullptr) : Json(x); }

double number_from(const Json& j) {
  if (j.is_null()) return kNaN;
  if (!j.is_number()) parse_fail("expected a number or null");
  return j.get<double>();
}

Json doubles_to_json(const std::vector<double>& xs) {
  Json out = Json::array();
  for (double x : xs) out.push_back(number_or_null(x));
  return out;
}

std::vector<double> doubles_from(const Json& j) {
  if (!j.is_array()) parse_fail("expected an array of numbers");
  std::vector<double> out;
  for (const auto& x : j) out.push_back(number_from(x));
  return out;
}

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index u = 0; u < m.rows(); ++u) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(number_or_null(m(u, j)));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from(const Json& j) {
  if (!j.is_array() || j.empty() || !j.front().is_array()) parse_fail("expected a non-empty matrix");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  Matrix m(rows, cols);
  for (Eigen::Index u = 0; u < rows; ++u) {
    const Json& row = j.at(static_cast<std::size_t>(u));
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) parse_fail("matrix rows differ in length");
    for (Eigen::Index c = 0; c < cols; ++c) m(u, c) = number_from(row.at(static_cast<std::size_t>(c)));
  }
  return m;
}

Json counts_to_json(const CountMatrix& m) {
  Json rows = Json::array();
  for (Eigen::Index u = 0; u < m.rows(); ++u) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(u, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

CountMatrix counts_from(const Json& j, Eigen::Index rows, Eigen::Index cols) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) parse_fail("move count matrix has the wrong shape");
  CountMatrix m(rows, cols);
  for (Eigen::Index u = 0; u < rows; ++u) {
    const Json& row = j.at(static_cast<std::size_t>(u));
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) parse_fail("move count matrix has the wrong shape");
    for (Eigen::Index c = 0; c < cols; ++c) {
      const Json& x = row.at(static_cast<std::size_t>(c));
      if (!x.is_number_integer()) parse_fail("counts must be integers");
      m(u, c) = x.get<std::int64_t>();
    }
  }
  return m;
}

Json diagnostics_to_json(const RateDiagnostics& d) {
  return Json{{"iterations", d.iterations},
              {"bracket", Json::array({d.bracket_lower, d.bracket_upper})},
              {"gradient_norm", d.gradient_norm},
              {"starts", d.starts},
              {"converged", d.converged},
              {"note", d.note}};
}

RateDiagnostics diagnostics_from(const Json& j) {
  RateDiagnostics d;
  d.iterations = get<int>(j, "iterations");
  const auto bracket = doubles_from(field(j, "bracket"));
  if (bracket.size() != 2) parse_fail("bracket must have two entries");
  d.bracket_lower = bracket[0];
  d.bracket_upper = bracket[1];
  d.gradient_norm = number_from(field(j, "gradient_norm"));
  d.starts = get<int>(j, "starts");
  d.converged = get<bool>(j, "converged");
  d.note = get<std::string>(j, "note");
  return d;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto end = line.find(sep, pos);
    out.push_back(line.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  return out;
}

std::int64_t parse_int(std::string_view token, std::size_t line, const char* column) {
  std::int64_t value = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (token.empty() || ec != std::errc() || ptr != token.data() + token.size()) {
    parse_fail("line " + std::to_string(line) + ": column " + column + " is not an integer");
  }
  return value;
}

}  // namespace

std::string_view to_string(Convention convention) noexcept {
  return convention == Convention::Corrected ? "corrected" : "paper-literal";
}

Convention parse_convention(std::string_view name) {
  if (name == "corrected") return Convention::Corrected;
  if (name == "paper-literal") return Convention::PaperLiteral;
  throw Error(ErrorCode::InvalidArgument, "unknown convention '" + std::string(name) + "'");
}

std::string_view to_string(RateMode mode) noexcept {
  return mode == RateMode::EqualRate ? "equal-rate" : "per-stage";
}

RateMode parse_rate_mode(std::string_view name) {
  if (name == "equal-rate") return RateMode::EqualRate;
  if (name == "per-stage") return RateMode::PerStage;
  throw Error(ErrorCode::InvalidArgument, "unknown rate mode '" + std::string(name) + "'");
}

Json design_to_json(const StudyDesign& design, Convention convention) {
  Json doc = header("design", convention);
  doc["states"] = design.states;
  doc["record_interval"] = design.record_interval;
  doc["removal_threshold"] = design.removal_threshold;
  doc["groups"] = design.groups;
  return doc;
}

StudyDesign design_from_json(const Json& doc) {
  check_header(doc, "design");
  StudyDesign design;
  design.states = get<std::vector<int>>(doc, "states");
  design.record_interval = get<double>(doc, "record_interval");
  design.removal_threshold = get<int>(doc, "removal_threshold");
  design.groups = get<int>(doc, "groups");
  return design;
}

Json params_to_json(const GroupParams& params, Convention convention) {
  Json doc = header("params", convention);
  doc["rate_mode"] = to_string(params.rate_mode);
  Json groups = Json::array();
  for (int k = 0; k < params.groups(); ++k) {
    Json g = Json::object();
    g["rates"] = doubles_to_json(params.rates[static_cast<std::size_t>(k)]);
    Json mats = Json::array();
    if (k < static_cast<int>(params.transitions.size())) {
      for (const auto& m : params.transitions[static_cast<std::size_t>(k)]) mats.push_back(matrix_to_json(m));
    }
    g["transitions"] = std::move(mats);
    if (k < static_cast<int>(params.initial.size()) && !params.initial[static_cast<std::size_t>(k)].empty()) {
      g["initial"] = doubles_to_json(params.initial[static_cast<std::size_t>(k)]);
    }
    groups.push_back(std::move(g));
  }
  doc["groups"] = std::move(groups);
  return doc;
}

GroupParams params_from_json(const Json& doc) {
  check_header(doc, "params");
  GroupParams params;
  params.rate_mode = parse_rate_mode(get<std::string>(doc, "rate_mode"));
  const Json& groups = field(doc, "groups");
  if (!groups.is_array()) parse_fail("'groups' must be an array");
  bool any_initial = false;
  for (const auto& g : groups) any_initial = any_initial || g.contains("initial");
  for (const auto& g : groups) {
    params.rates.push_back(doubles_from(field(g, "rates")));
    std::vector<Matrix> mats;
    const Json& ts = field(g, "transitions");
    if (!ts.is_array()) parse_fail("'transitions' must be an array of matrices");
    for (const auto& t : ts) mats.push_back(matrix_from(t));
    params.transitions.push_back(std::move(mats));
    if (any_initial) params.initial.push_back(g.contains("initial") ? doubles_from(g.at("initial")) : std::vector<double>{});
  }
  return params;
}

Json stats_to_json(const SufficientStats& stats) {
  Json doc = Json::object();
  doc["states"] = stats.states;
  Json groups = Json::array();
  for (const auto& g : stats.groups) {
    Json moves = Json::array();
    for (const auto& m : g.moves) moves.push_back(counts_to_json(m));
    groups.push_back(Json{{"paths", g.paths},
                          {"idle", g.idle},
                          {"arrivals", g.arrivals},
                          {"final_states", g.final_states},
                          {"moves", std::move(moves)}});
  }
  doc["groups"] = std::move(groups);
  return doc;
}

SufficientStats stats_from_json(const Json& doc) {
  SufficientStats stats;
  stats.states = get<std::vector<int>>(doc, "states");
  if (stats.states.size() < 2) parse_fail("statistics need at least two stages");
  const Json& groups = field(doc, "groups");
  if (!groups.is_array()) parse_fail("'groups' must be an array");
  const std::size_t m = stats.states.size();
  for (const auto& g : groups) {
    GroupStats gs = empty_group_stats(stats.states);
    gs.paths = get<std::int64_t>(g, "paths");
    gs.idle = get<std::vector<std::int64_t>>(g, "idle");
    gs.arrivals = get<std::vector<std::int64_t>>(g, "arrivals");
    gs.final_states = get<std::vector<std::int64_t>>(g, "final_states");
    if (gs.idle.size() != m - 1 || gs.arrivals.size() != m ||
        gs.final_states.size() != static_cast<std::size_t>(stats.states.back())) {
      parse_fail("statistics vectors do not match the stage layout");
    }
    const Json& moves = field(g, "moves");
    if (!moves.is_array() || moves.size() != m - 1) parse_fail("one move matrix per stage move is required");
    for (std::size_t i = 1; i < m; ++i) {
      gs.moves[i - 1] = counts_from(moves.at(i - 1), stats.states[i - 1], stats.states[i]);
    }
    stats.groups.push_back(std::move(gs));
  }
  return stats;
}

Json fit_to_json(const FitResult& fit) {
  Json doc = header("fit", fit.convention);
  doc["rate_mode"] = to_string(fit.rate_mode);
  doc["design"] = design_to_json(fit.design, fit.convention);
  doc["log_likelihood"] = number_or_null(fit.log_likelihood());
  Json groups = Json::array();
  for (const auto& g : fit.groups) {
    Json mats = Json::array();
    for (const auto& m : g.transitions.probabilities) mats.push_back(matrix_to_json(m));
    groups.push_back(Json{{"paths", g.paths},
                          {"rates", doubles_to_json(g.rates)},
                          {"information", doubles_to_json(g.information)},
                          {"standard_errors", doubles_to_json(g.standard_errors)},
                          {"transitions", std::move(mats)},
                          {"undefined_rows", g.transitions.undefined_rows},
                          {"rate_log_likelihood", number_or_null(g.rate_log_likelihood)},
                          {"transition_log_likelihood", number_or_null(g.transition_log_likelihood)},
                          {"diagnostics", diagnostics_to_json(g.diagnostics)}});
  }
  doc["groups"] = std::move(groups);
  doc["stats"] = stats_to_json(fit.stats);
  return doc;
}

FitResult fit_from_json(const Json& doc) {
  check_header(doc, "fit");
  FitResult fit;
  fit.convention = parse_convention(get<std::string>(doc, "convention"));
  fit.rate_mode = parse_rate_mode(get<std::string>(doc, "rate_mode"));
  fit.design = design_from_json(field(doc, "design"));
  fit.stats = stats_from_json(field(doc, "stats"));
  const Json& groups = field(doc, "groups");
  if (!groups.is_array()) parse_fail("'groups' must be an array");
  for (const auto& g : groups) {
    GroupFit gf;
    gf.paths = get<std::int64_t>(g, "paths");
    gf.rates = doubles_from(field(g, "rates"));
    gf.information = doubles_from(field(g, "information"));
    gf.standard_errors = doubles_from(field(g, "standard_errors"));
    for (const auto& t : field(g, "transitions")) gf.transitions.probabilities.push_back(matrix_from(t));
    gf.transitions.undefined_rows = get<std::vector<std::vector<bool>>>(g, "undefined_rows");
    gf.rate_log_likelihood = number_from(field(g, "rate_log_likelihood"));
    gf.transition_log_likelihood = number_from(field(g, "transition_log_likelihood"));
    gf.diagnostics = diagnostics_from(field(g, "diagnostics"));
    fit.groups.push_back(std::move(gf));
  }
  if (static_cast<int>(fit.groups.size()) != fit.design.groups || fit.stats.states != fit.design.states ||
      fit.stats.groups.size() != fit.groups.size()) {
    parse_fail("fit groups, statistics and design disagree");
  }
  return fit;
}

std::string write_dataset_csv(const Dataset& data) {
  std::string out = "path_id,group,stage,state,records,terminal\n";
  for (std::size_t p = 0; p < data.paths.size(); ++p) {
    const auto& path = data.paths[p];
    for (std::size_t v = 0; v < path.visits.size(); ++v) {
      const auto& visit = path.visits[v];
      const bool last = v + 1 == path.visits.size();
      const char* terminal = !last ? "mid" : (path.terminal == Terminal::ReachedFinal ? "final" : "removed");
      out += std::to_string(p) + ',' + std::to_string(path.group) + ',' + std::to_string(visit.stage) + ',' +
             std::to_string(visit.state) + ',' + std::to_string(visit.records) + ',' + terminal + '\n';
    }
  }
  return out;
}

Dataset read_dataset_csv(std::string_view text, const StudyDesign& design) {
  require_valid(validate(design));
  Dataset data;
  data.design = design;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header_seen = false;
  bool open = false;  // current path still expects rows
  std::int64_t current_id = -1;
  std::size_t path_start_line = 0;
  std::vector<std::int64_t> seen_ids;

  const auto finish = [&](std::size_t line) {
    try {
      check_path(design, data.paths.back());
    } catch (const Error& e) {
      throw Error(e.code(), "path starting at line " + std::to_string(path_start_line) + " (ending line " +
                                std::to_string(line) + "): " + e.what());
    }
  };

  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != "path_id,group,stage,state,records,terminal") {
        parse_fail("line " + std::to_string(line_no) + ": expected header path_id,group,stage,state,records,terminal");
      }
      header_seen = true;
      continue;
    }
    const auto cols = split(line, ',');
    if (cols.size() != 6) parse_fail("line " + std::to_string(line_no) + ": expected 6 columns");
    const auto id = parse_int(cols[0], line_no, "path_id");
    const auto group = parse_int(cols[1], line_no, "group");
    const auto stage = parse_int(cols[2], line_no, "stage");
    const auto state = parse_int(cols[3], line_no, "state");
    const auto records = parse_int(cols[4], line_no, "records");
    const std::string_view terminal = cols[5];
    if (terminal != "mid" && terminal != "final" && terminal != "removed") {
      parse_fail("line " + std::to_string(line_no) + ": terminal must be mid, final or removed");
    }
    if (group < 0 || group >= design.groups) {
      parse_fail("line " + std::to_string(line_no) + ": group " + std::to_string(group) + " out of range");
    }
    if (!open) {
      if (std::find(seen_ids.begin(), seen_ids.end(), id) != seen_ids.end()) {
        parse_fail("line " + std::to_string(line_no) + ": rows of path " + std::to_string(id) + " are not contiguous");
      }
      if (stage != 0) parse_fail("line " + std::to_string(line_no) + ": a path must start at stage 0");
      seen_ids.push_back(id);
      current_id = id;
      path_start_line = line_no;
      data.paths.push_back(PathObservation{static_cast<int>(group), {}, Terminal::Removed});
      open = true;
    } else {
      if (id != current_id) {
        parse_fail("line " + std::to_string(line_no) + ": path " + std::to_string(current_id) +
                   " ended without a final or removed row");
      }
      if (group != data.paths.back().group) {
        parse_fail("line " + std::to_string(line_no) + ": group changes within path " + std::to_string(id));
      }
      if (stage != data.paths.back().visits.back().stage + 1) {
        parse_fail("line " + std::to_string(line_no) + ": stages must ascend contiguously");
      }
    }
    data.paths.back().visits.push_back(
        Visit{static_cast<int>(stage), static_cast<int>(state), static_cast<int>(records), true});
    if (terminal != "mid") {
      data.paths.back().terminal = terminal == "final" ? Terminal::ReachedFinal : Terminal::Removed;
      open = false;
      finish(line_no);
    }
  }
  if (!header_seen) parse_fail("line 1: missing header");
  if (open) parse_fail("line " + std::to_string(line_no) + ": last path has no final or removed row");
  return data;
}

std::string canonical_hash(const Json& doc) {
  const std::string text = doc.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ParseError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

Json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

std::string dump_json(const Json& doc) { return doc.dump(2) + "\n"; }

}  // namespace stagewalk
