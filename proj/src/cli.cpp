#include "stagewalk/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stagewalk/derived.hpp"
#include "stagewalk/estimation.hpp"
#include "stagewalk/inference.hpp"
#include "stagewalk/likelihood.hpp"
#include "stagewalk/io.hpp"
#include "stagewalk/simulator.hpp"

namespace stagewalk {

namespace {

struct SimulateArgs {
  std::string design, params, counts, out, report;
  std::uint64_t seed = 0;
  bool strict = false;
  bool farthest = false;
  unsigned threads = 1;
};

struct FitArgs {
  std::string design, data, mode = "equal-rate", convention = "corrected", out;
};

struct DeriveArgs {
  std::string fit, design, quantity, out;
  int stage = 0;
  int state = -1;
  double level = 0.95;
};

struct TestArgs {
  std::string fit, order, estimator = "mle", cdf = "normal", out;
  int group = 0;
  double alpha = 0.05;
  double k_exponent = 0.25;
  int equal_at = -1;
  bool suggest = false;
};

struct CompareArgs {
  std::string fit, method, estimator = "mle", out;
  double alpha = 0.05;
};

struct OracleArgs {
  std::string design, params, quantity, policy = "farthest", out;
  int group = 0;
  int stage = 1;
  int state = 0;
  int value = 0;
  double samples = 1e6;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

std::string fmt(double x, int digits = 6) {
  if (std::isnan(x)) return "nan";
  std::ostringstream ss;
  ss.imbue(std::locale::classic());
  ss << std::setprecision(digits) << x;
  return ss.str();
}

Json nullable(double x) { return std::isnan(x) ? Json(nullptr) : Json(x); }

std::string design_hash(const StudyDesign& design) {
  Json doc = design_to_json(design);
  doc.erase("convention");
  return canonical_hash(doc);
}

Json report_header(std::string_view command, const StudyDesign& design, Convention convention) {
  Json doc = Json::object();
  doc["schema_version"] = kSchemaVersion;
  doc["kind"] = "report";
  doc["command"] = command;
  doc["convention"] = to_string(convention);
  doc["design_hash"] = design_hash(design);
  doc["seed"] = nullptr;
  return doc;
}

void emit(const Json& doc, const std::string& path) {
  if (!path.empty()) write_text_file(path, dump_json(doc));
}

std::vector<std::int64_t> parse_group_counts(const std::string& text, int groups) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(groups), -1);
  std::stringstream ss(text);
  std::string item;
  int position = 0;
  while (std::getline(ss, item, ',')) {
    int group = position;
    std::string value = item;
    if (const auto eq = item.find('='); eq != std::string::npos) {
      std::string key = item.substr(0, eq);
      if (!key.empty() && key.front() == 'k') key.erase(0, 1);
      try {
        group = std::stoi(key);
      } catch (const std::exception&) {
        throw Error(ErrorCode::ParseError, "malformed group key '" + item + "'");
      }
      value = item.substr(eq + 1);
    }
    if (group < 0 || group >= groups) {
      throw Error(ErrorCode::InvalidArgument, "--n names group " + std::to_string(group) + " outside the design");
    }
    std::size_t used = 0;
    long long n = -1;
    try {
      n = std::stoll(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != value.size() || n < 0) throw Error(ErrorCode::ParseError, "malformed path count '" + item + "'");
    counts[static_cast<std::size_t>(group)] = n;
    ++position;
  }
  for (int k = 0; k < groups; ++k) {
    if (counts[static_cast<std::size_t>(k)] < 0) {
      throw Error(ErrorCode::InvalidArgument, "--n gives no path count for group " + std::to_string(k));
    }
  }
  return counts;
}

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  if (a.strict && a.farthest) throw Error(ErrorCode::InvalidArgument, "--strict and --farthest are exclusive");
  const StudyDesign design = design_from_json(read_json_file(a.design));
  const Json params_doc = read_json_file(a.params);
  const GroupParams params = params_from_json(params_doc);
  require_valid(validate(design, params));
  SimConfig config;
  config.seed = a.seed;
  config.paths_per_group = parse_group_counts(a.counts, design.groups);
  config.policy = a.farthest ? IntervalPolicy::Farthest : IntervalPolicy::Strict;
  config.threads = a.threads;
  const Dataset data = simulate_dataset(design, params, config);
  const std::string csv = write_dataset_csv(data);
  write_text_file(a.out, csv);

  std::vector<std::int64_t> reached(static_cast<std::size_t>(design.groups), 0);
  std::vector<std::int64_t> removed(static_cast<std::size_t>(design.groups), 0);
  for (const auto& p : data.paths) {
    (p.terminal == Terminal::ReachedFinal ? reached : removed)[static_cast<std::size_t>(p.group)] += 1;
  }
  const auto unrecorded = count_unrecorded_visits(data);
  out << "policy: " << (a.farthest ? "farthest" : "strict") << "\n";
  out << "group  paths  reached_final  removed\n";
  Json groups = Json::array();
  for (int k = 0; k < design.groups; ++k) {
    const auto idx = static_cast<std::size_t>(k);
    out << std::setw(5) << k << "  " << std::setw(5) << config.paths_per_group[idx] << "  " << std::setw(13)
        << reached[idx] << "  " << std::setw(7) << removed[idx] << "\n";
    groups.push_back(Json{{"group", k},
                          {"paths", config.paths_per_group[idx]},
                          {"reached_final", reached[idx]},
                          {"removed", removed[idx]}});
  }
  if (a.farthest) {
    out << "visits passed through between ticks (written with records=1): " << unrecorded << "\n";
  }
  Json report = report_header("simulate", design, Convention::Corrected);
  report["params_hash"] = canonical_hash(params_doc);
  report["seed"] = a.seed;
  report["policy"] = a.farthest ? "farthest" : "strict";
  report["data_hash"] = canonical_hash(Json(csv));
  report["groups"] = std::move(groups);
  report["unrecorded_visits"] = unrecorded;
  emit(report, a.report);
  return kExitOk;
}

int cmd_fit(const FitArgs& a, std::ostream& out) {
  const StudyDesign design = design_from_json(read_json_file(a.design));
  const std::string csv = read_text_file(a.data);
  const Dataset data = read_dataset_csv(csv, design);
  const RateMode mode = parse_rate_mode(a.mode);
  const Convention convention = parse_convention(a.convention);
  const FitResult result = fit(data, mode, convention);

  Json doc = fit_to_json(result);
  doc["provenance"] = Json{{"design_hash", design_hash(design)}, {"data_hash", canonical_hash(Json(csv))}};
  write_text_file(a.out, dump_json(doc));

  out << "mode: " << to_string(mode) << "  convention: " << to_string(convention) << "\n";
  out << "group  paths  rate(s)  se(s)  converged\n";
  for (std::size_t k = 0; k < result.groups.size(); ++k) {
    const GroupFit& g = result.groups[k];
    out << std::setw(5) << k << "  " << std::setw(5) << g.paths << "  ";
    for (double r : g.rates) out << fmt(r) << ' ';
    out << " ";
    for (double s : g.standard_errors) out << fmt(s) << ' ';
    out << " " << (g.diagnostics.converged ? "yes" : "no") << "\n";
    if (!g.diagnostics.note.empty()) out << "  note: " << g.diagnostics.note << "\n";
    if (g.transitions.has_undefined()) out << "  warning: some transition rows have no observed moves\n";
  }
  out << "log-likelihood: " << fmt(result.log_likelihood(), 12) << "\n";
  return kExitOk;
}

struct LoadedFit {
  FitResult fit;
  std::string hash;
};

LoadedFit load_fit(const std::string& path) {
  const Json doc = read_json_file(path);
  return {fit_from_json(doc), canonical_hash(doc)};
}

int cmd_derive(const DeriveArgs& a, std::ostream& out) {
  const LoadedFit loaded = load_fit(a.fit);
  const FitResult& f = loaded.fit;
  const StudyDesign& design = f.design;
  if (!a.design.empty() && design_from_json(read_json_file(a.design)) != design) {
    throw Error(ErrorCode::InvalidArgument, "--design does not match the design stored in the fit");
  }
  if (f.rate_mode != RateMode::EqualRate) {
    throw Error(ErrorCode::MethodUnavailable, "derived quantities are defined for equal-rate fits only");
  }
  const double b = design.record_interval;
  const int n = design.removal_threshold;
  const int m = design.stages();
  const Convention conv = f.convention;

  Json report = report_header("derive", design, conv);
  report["fit_hash"] = loaded.hash;
  report["quantity"] = a.quantity;
  report["stage"] = a.stage;
  Json groups = Json::array();
  out << "quantity: " << a.quantity << "  stage: " << a.stage << "  convention: " << to_string(conv) << "\n";
  for (std::size_t k = 0; k < f.groups.size(); ++k) {
    const GroupFit& g = f.groups[k];
    const double rate = g.rates.at(0);
    const double info = g.information.at(0);
    Json row{{"group", k}, {"rate", rate}};
    const auto add_interval = [&](const std::function<double(double)>& fn) {
      if (info > 0.0 && g.paths > 0) {
        const Interval ci = delta_method_ci(rate, info, g.paths, fn, a.level, true);
        row["interval"] = Json{{"level", a.level},
                               {"standard_error", ci.standard_error},
                               {"lower", ci.lower},
                               {"upper", ci.upper},
                               {"clipped", ci.clipped}};
      } else {
        row["interval"] = nullptr;
      }
    };
    if (a.quantity == "reach-prob") {
      const auto fn = [&](double x) { return reach_probability(x, b, n, a.stage, m, conv); };
      row["value"] = fn(rate);
      add_interval(fn);
      out << "group " << k << ": " << fmt(row["value"].get<double>(), 10) << "\n";
    } else if (a.quantity == "final-reach") {
      const auto fn = [&](double x) { return final_reach_probability(x, b, n, m, a.stage, conv); };
      row["value"] = fn(rate);
      add_interval(fn);
      out << "group " << k << ": " << fmt(row["value"].get<double>(), 10) << "\n";
    } else if (a.quantity == "stay-pmf") {
      if (a.stage > m - 2) throw Error(ErrorCode::StageOutOfRange, "stay counts exist for stages 0..m-2");
      const StayPmf pmf = stay_pmf(rate, b, n, a.stage, conv);
      Json table = Json::array();
      out << "group " << k << ":";
      for (int v = -1; v <= n; ++v) {
        table.push_back(Json{{"w", v}, {"p", pmf.at(v)}});
        out << " P(" << v << ")=" << fmt(pmf.at(v));
      }
      out << "  sum=" << fmt(pmf.sum(), 15) << "\n";
      row["pmf"] = std::move(table);
      row["sum"] = pmf.sum();
      row["proper"] = pmf.proper;
    } else if (a.quantity == "moments") {
      const Moments um = uncond_moments(rate, b, n, a.stage, conv);
      row["conditional"] = Json{{"mean", cond_mean_records(rate, b, n)},
                                {"second_moment", cond_second_moment(rate, b, n)},
                                {"variance", cond_var_records(rate, b, n)}};
      row["unconditional"] = Json{{"mean", um.mean}, {"second_moment", um.second}, {"variance", um.variance}};
      out << "group " << k << ": E(N|reach)=" << fmt(cond_mean_records(rate, b, n))
          << " var(N|reach)=" << fmt(cond_var_records(rate, b, n)) << " E(N)=" << fmt(um.mean)
          << " var(N)=" << fmt(um.variance) << "\n";
    } else if (a.quantity == "final-state-prob") {
      if (a.state < 0) throw Error(ErrorCode::InvalidArgument, "final-state-prob needs --state");
      if (g.transitions.has_undefined() &&
          [&] {
            for (bool u : g.transitions.undefined_rows.back()) {
              if (u) return true;
            }
            return false;
          }()) {
        throw Error(ErrorCode::UndefinedTransitionRow,
                    "group " + std::to_string(k) + ": a final-stage transition row has no observed moves");
      }
      const Matrix& last = g.transitions.probabilities.back();
      const auto fn = [&](double x) { return final_state_probability(x, b, n, m, a.stage, last, a.state, conv); };
      row["state"] = a.state;
      row["value"] = fn(rate);
      add_interval(fn);
      out << "group " << k << ": " << fmt(row["value"].get<double>(), 10) << "\n";
    } else {
      throw Error(ErrorCode::InvalidArgument, "unknown quantity '" + a.quantity + "'");
    }
    groups.push_back(std::move(row));
  }
  report["groups"] = std::move(groups);
  emit(report, a.out);
  return kExitOk;
}

int cmd_test_order(const TestArgs& a, std::ostream& out, std::ostream& err) {
  const LoadedFit loaded = load_fit(a.fit);
  const FitResult& f = loaded.fit;
  if (a.group < 0 || a.group >= static_cast<int>(f.groups.size())) {
    throw Error(ErrorCode::InvalidArgument, "--group out of range");
  }
  const KScoreEstimator estimator = parse_k_score_estimator(a.estimator);
  const KScores scores = k_scores(f.stats.groups[static_cast<std::size_t>(a.group)], estimator, a.group);
  std::vector<int> order;
  if (!a.order.empty()) {
    order = parse_order(a.order, static_cast<int>(scores.values.size()));
  } else if (a.suggest) {
    order = suggest_order(scores);
    err << "warning: the order was suggested from the same data it is tested on; Q is optimistic\n";
  } else {
    throw Error(ErrorCode::InvalidArgument, "an explicit --order is required (or --suggest-order)");
  }
  QTestConfig config;
  config.alpha = a.alpha;
  config.k_exponent = a.k_exponent;
  if (a.cdf == "normal") {
    config.cdf = SmoothingCdf::Normal;
  } else if (a.cdf == "logistic") {
    config.cdf = SmoothingCdf::Logistic;
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown smoothing cdf '" + a.cdf + "'");
  }
  const OrderContrasts c = order_contrasts(scores, order);
  const Hypothesis hyp = a.equal_at >= 0 ? Hypothesis::EqualityAt : Hypothesis::AllNonnegative;
  const QTestReport q = chen_szroeter_test(c.mu, c.v, c.n, config, hyp, a.equal_at);

  Json report = report_header("test-order", f.design, f.convention);
  report["fit_hash"] = loaded.hash;
  report["group"] = a.group;
  report["estimator"] = to_string(estimator);
  report["order"] = format_order(order);
  report["order_suggested"] = a.order.empty();
  report["k_scores"] = std::vector<double>(scores.values.data(), scores.values.data() + scores.values.size());
  report["mu"] = std::vector<double>(q.mu.data(), q.mu.data() + q.mu.size());
  Json v = Json::array();
  for (Eigen::Index i = 0; i < q.v.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < q.v.cols(); ++j) row.push_back(q.v(i, j));
    v.push_back(std::move(row));
  }
  report["v"] = std::move(v);
  report["n"] = q.n;
  report["theta"] = q.theta;
  report["psi"] = q.psi;
  report["lambda"] = q.lambda;
  report["q1"] = q.q1;
  report["q2"] = q.q2;
  report["q"] = q.q;
  report["alpha"] = q.alpha;
  report["smoothing_cdf"] = a.cdf;
  report["k_exponent"] = a.k_exponent;
  report["hypothesis"] = hyp == Hypothesis::EqualityAt ? "H0'" : "H0";
  report["equal_at"] = hyp == Hypothesis::EqualityAt ? Json(a.equal_at) : Json(nullptr);
  report["reject"] = q.reject ? Json(*q.reject) : Json(nullptr);
  emit(report, a.out);

  out << "order: " << format_order(order) << "  n: " << q.n << "\n";
  out << "Q1=" << fmt(q.q1) << " Q2=" << fmt(q.q2) << " Q=" << fmt(q.q) << "\n";
  if (q.reject) {
    out << "H0' (mu_" << a.equal_at << " = 0): " << (*q.reject ? "rejected" : "not rejected") << " at alpha="
        << fmt(a.alpha) << "\n";
  } else {
    out << "H0: Q near 1 is consistent with the declared order\n";
  }
  return kExitOk;
}

Json path_json(const PathScore& p) {
  return Json{{"states", p.states},
              {"move_product", p.move_product},
              {"stay_factor", p.stay_factor},
              {"probability", p.probability}};
}

int cmd_compare(const CompareArgs& a, std::ostream& out) {
  const LoadedFit loaded = load_fit(a.fit);
  const FitResult& f = loaded.fit;
  CompareOptions options;
  options.alpha = a.alpha;
  options.estimator = parse_k_score_estimator(a.estimator);
  const CompareMethod method = parse_compare_method(a.method);
  const CompareReport cmp = compare_groups(f, method, options);

  Json report = report_header("compare", f.design, f.convention);
  report["fit_hash"] = loaded.hash;
  report["method"] = to_string(method);
  report["alpha"] = a.alpha;
  Json groups = Json::array();
  out << "method: " << to_string(method) << "\n";
  for (std::size_t k = 0; k < cmp.groups.size(); ++k) {
    const GroupSummary& g = cmp.groups[k];
    Json row{{"group", k}};
    out << "group " << k << ":";
    if (g.path) {
      row["most_probable_path"] = path_json(*g.path);
      row["paper_path_score"] = Json{{"move_product", g.paper_path->move_product},
                                     {"probability", g.paper_path->probability},
                                     {"feasible", g.paper_path->feasible}};
      out << " path";
      for (int s : g.path->states) out << ' ' << s;
      out << "  p=" << fmt(g.path->probability) << "  paper=" << fmt(g.paper_path->probability)
          << (g.paper_path->feasible ? "" : " (not attained by a path)");
    }
    if (g.reach) {
      row["final_reach"] = Json{{"estimate", g.reach->estimate},
                                {"standard_error", g.reach->standard_error},
                                {"lower", g.reach->lower},
                                {"upper", g.reach->upper}};
      out << " p_final=" << fmt(g.reach->estimate) << " se=" << fmt(g.reach->standard_error);
    }
    if (!g.order.empty()) {
      row["order"] = format_order(g.order);
      row["q"] = nullable(g.q.value_or(std::nan("")));
      out << " order " << format_order(g.order) << " Q=" << fmt(g.q.value_or(std::nan("")));
    }
    out << "\n";
    groups.push_back(std::move(row));
  }
  Json pairs = Json::array();
  for (const auto& p : cmp.pairs) {
    pairs.push_back(Json{{"groups", Json::array({p.first, p.second})},
                         {"similar", p.similar},
                         {"statistic", p.statistic ? Json(*p.statistic) : Json(nullptr)},
                         {"p_value", p.p_value ? Json(*p.p_value) : Json(nullptr)}});
    out << "groups " << p.first << " vs " << p.second << ": " << (p.similar ? "similar" : "different");
    if (p.statistic) out << "  z=" << fmt(*p.statistic) << " p=" << fmt(*p.p_value);
    out << "\n";
  }
  report["groups"] = std::move(groups);
  report["pairs"] = std::move(pairs);
  report["all_similar"] = cmp.all_similar;
  emit(report, a.out);
  return kExitOk;
}

int cmd_oracle(const OracleArgs& a, std::ostream& out) {
  const StudyDesign design = design_from_json(read_json_file(a.design));
  const Json params_doc = read_json_file(a.params);
  const GroupParams params = params_from_json(params_doc);
  require_valid(validate(design, params));
  IntervalPolicy policy;
  if (a.policy == "farthest") {
    policy = IntervalPolicy::Farthest;
  } else if (a.policy == "strict") {
    policy = IntervalPolicy::Strict;
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown policy '" + a.policy + "'");
  }
  Event event;
  event.kind = parse_event_kind(a.quantity);
  event.stage = event.kind == EventKind::ReachFinal ? design.final_stage() : a.stage;
  event.state = a.state;
  event.value = a.value;
  if (!(a.samples >= 1.0) || a.samples != std::floor(a.samples)) {
    throw Error(ErrorCode::InvalidArgument, "--samples must be a positive integer");
  }
  const auto samples = static_cast<std::int64_t>(a.samples);
  const McEstimate mc = mc_event_probability(design, params, a.group, event, samples, a.seed, policy, a.threads);
  const std::optional<double> exact = exact_event_probability(design, params, a.group, event, policy);

  // Closed forms as printed (equal-rate only).
  std::vector<std::pair<std::string, double>> closed;
  const double b = design.record_interval;
  const int n = design.removal_threshold;
  const int m = design.stages();
  if (event.kind == EventKind::MoveAndSurviveInterval) {
    const double from = params.rate(a.group, event.stage);
    const double to = params.rate(a.group, std::min(event.stage + 1, m - 1));
    closed.emplace_back("corrected", move_contribution(from, to, b, Convention::Corrected));
    closed.emplace_back("paper-literal", move_contribution(from, to, b, Convention::PaperLiteral));
  } else if (params.rate_mode == RateMode::EqualRate) {
    const double rate = params.rate(a.group, 1);
    for (Convention conv : {Convention::Corrected, Convention::PaperLiteral}) {
      double value = 0.0;
      switch (event.kind) {
        case EventKind::ReachStage:
          value = event.stage <= m - 2 ? reach_probability(rate, b, n, event.stage, m, conv)
                                       : final_reach_probability(rate, b, n, m, 0, conv);
          break;
        case EventKind::ReachFinal:
          value = final_reach_probability(rate, b, n, m, 0, conv);
          break;
        case EventKind::ReachFinalState:
          value = final_state_probability(rate, b, n, m, 0, params.transition(a.group, m - 1), event.state, conv);
          break;
        case EventKind::StayCount: {
          const StayPmf pmf = stay_pmf(rate, b, n, event.stage, conv);
          value = event.value >= -1 && event.value <= n ? pmf.at(event.value) : 0.0;
          break;
        }
        case EventKind::MoveAndSurviveInterval:
          break;
      }
      closed.emplace_back(conv == Convention::Corrected ? "paper-definition" : "paper-definition-literal", value);
    }
  }
  if (exact) closed.emplace_back("process-exact", *exact);

  Json report = report_header("oracle", design, Convention::Corrected);
  report["params_hash"] = canonical_hash(params_doc);
  report["seed"] = a.seed;
  report["policy"] = a.policy;
  report["event"] = Json{{"kind", to_string(event.kind)},
                         {"group", a.group},
                         {"stage", event.stage},
                         {"state", event.state},
                         {"value", event.value}};
  report["monte_carlo"] = Json{{"estimate", mc.estimate},
                               {"standard_error", mc.standard_error},
                               {"hits", mc.hits},
                               {"samples", mc.samples}};
  Json forms = Json::array();
  out << "event: " << to_string(event.kind) << "  policy: " << a.policy << "  samples: " << samples << "\n";
  out << "monte carlo: " << fmt(mc.estimate, 8) << " +- " << fmt(mc.standard_error, 3) << "\n";
  for (const auto& [name, value] : closed) {
    const double z = mc.standard_error > 0.0 ? (mc.estimate - value) / mc.standard_error : std::nan("");
    forms.push_back(Json{{"name", name}, {"value", value}, {"z", nullable(z)}});
    out << std::left << std::setw(26) << name << std::right << fmt(value, 8) << "  z=" << fmt(z, 3) << "\n";
  }
  report["closed_forms"] = std::move(forms);
  emit(report, a.out);
  return kExitOk;
}

int fail(std::ostream& err, ErrorCode code, const std::string& message) {
  const int exit = exit_code_for(code);
  err << Json{{"error", to_string(code)}, {"message", message}, {"exit_code", exit}}.dump() << "\n";
  return exit;
}

}  // namespace

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DegenerateData:
    case ErrorCode::NoInteriorMax:
    case ErrorCode::NonConvergence:
    case ErrorCode::NonPositiveInformation:
    case ErrorCode::EmptyStage:
    case ErrorCode::SingularCovariance:
      return kExitDegenerate;
    case ErrorCode::UndefinedTransitionRow:
    case ErrorCode::MethodUnavailable:
      return kExitUndefined;
    default:
      return kExitInput;
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Simulation and likelihood inference for staged movement processes observed at record intervals",
               "stagewalk"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Simulate paths and write the dataset CSV");
  s->add_option("--design", sim.design, "Design JSON")->required();
  s->add_option("--params", sim.params, "Parameter JSON")->required();
  s->add_option("--n", sim.counts, "Paths per group, \"k0=100,k1=200\" or \"100,200\"")->required();
  s->add_option("--seed", sim.seed, "Master seed (unsigned 64-bit)")->required();
  s->add_flag("--strict", sim.strict, "At most one move per interval (default)");
  s->add_flag("--farthest", sim.farthest, "Continuous clocks; record the farthest stage reached at each tick");
  s->add_option("--threads", sim.threads, "Worker threads (output does not depend on this)")->check(CLI::PositiveNumber);
  s->add_option("--report", sim.report, "Optional JSON summary with hashes and seed");
  s->add_option("--out", sim.out, "Output CSV")->required();

  FitArgs fa;
  auto* f = app.add_subcommand("fit", "Maximum-likelihood fit of rates and transition probabilities");
  f->add_option("--design", fa.design, "Design JSON")->required();
  f->add_option("--data", fa.data, "Dataset CSV")->required();
  f->add_option("--mode", fa.mode, "equal-rate | per-stage");
  f->add_option("--convention", fa.convention, "corrected | paper-literal");
  f->add_option("--out", fa.out, "Output fit JSON")->required();

  DeriveArgs da;
  auto* d = app.add_subcommand("derive", "Closed-form probabilities and moments at the fitted rates");
  d->add_option("--fit", da.fit, "Fit JSON")->required();
  d->add_option("--design", da.design, "Design JSON (checked against the fit)");
  d->add_option("--quantity", da.quantity, "reach-prob | final-reach | stay-pmf | moments | final-state-prob")
      ->required();
  d->add_option("--stage", da.stage, "Stage index (0-based)")->required();
  d->add_option("--state", da.state, "Final state (final-state-prob)");
  d->add_option("--level", da.level, "Delta-method interval level");
  d->add_option("--out", da.out, "Output report JSON")->required();

  TestArgs ta;
  auto* t = app.add_subcommand("test-order", "Smoothed inequality test of a declared K-score order");
  t->add_option("--fit", ta.fit, "Fit JSON")->required();
  t->add_option("--group", ta.group, "Group index (0-based)");
  t->add_option("--order", ta.order, "Ascending order of final states, e.g. \"u0<u2<u1\"");
  t->add_flag("--suggest-order", ta.suggest, "Use the order of the estimated K-scores (data-suggested)");
  t->add_option("--alpha", ta.alpha, "Level for H0'");
  t->add_option("--estimator", ta.estimator, "mle | substitute");
  t->add_option("--equal-at", ta.equal_at, "Contrast index t (0-based) for H0': mu_t = 0");
  t->add_option("--cdf", ta.cdf, "Smoothing CDF: normal | logistic");
  t->add_option("--k-exponent", ta.k_exponent, "K(n) = n^e");
  t->add_option("--out", ta.out, "Output report JSON")->required();

  CompareArgs ca;
  auto* c = app.add_subcommand("compare", "Compare groups from a fit");
  c->add_option("--fit", ca.fit, "Fit JSON")->required();
  c->add_option("--method", ca.method, "most-probable-path | reach-prob | k-scores")->required();
  c->add_option("--alpha", ca.alpha, "Test level");
  c->add_option("--estimator", ca.estimator, "K-score estimator: mle | substitute");
  c->add_option("--out", ca.out, "Output report JSON")->required();

  OracleArgs oa;
  auto* o = app.add_subcommand("oracle", "Monte Carlo estimate of an event against its closed forms");
  o->add_option("--design", oa.design, "Design JSON")->required();
  o->add_option("--params", oa.params, "Parameter JSON")->required();
  o->add_option("--quantity", oa.quantity,
                "move-and-survive-interval | reach-stage | reach-final | reach-final-state | stay-count")
      ->required();
  o->add_option("--group", oa.group, "Group index");
  o->add_option("--stage", oa.stage, "Stage index");
  o->add_option("--state", oa.state, "Final state (reach-final-state)");
  o->add_option("--value", oa.value, "Stay count (stay-count; -1 = stage never recorded)");
  o->add_option("--samples", oa.samples, "Number of samples");
  o->add_option("--seed", oa.seed, "Seed");
  o->add_option("--policy", oa.policy, "farthest | strict");
  o->add_option("--threads", oa.threads, "Worker threads")->check(CLI::PositiveNumber);
  o->add_option("--out", oa.out, "Optional report JSON");

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& arg : args) argv.push_back(arg.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    return fail(err, ErrorCode::InvalidArgument, e.what());
  }

  try {
    if (*s) return cmd_simulate(sim, out);
    if (*f) return cmd_fit(fa, out);
    if (*d) return cmd_derive(da, out);
    if (*t) return cmd_test_order(ta, out, err);
    if (*c) return cmd_compare(ca, out);
    if (*o) return cmd_oracle(oa, out);
  } catch (const Error& e) {
    return fail(err, e.code(), e.what());
  } catch (const std::exception& e) {
    return fail(err, ErrorCode::InvalidArgument, e.what());
  }
  return kExitInput;
}

}  // namespace stagewalk
