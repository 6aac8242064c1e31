#pragma once

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "specsim/attacker.hpp"
#include "specsim/common.hpp"
#include "specsim/fusion.hpp"
#include "specsim/influence.hpp"
#include "specsim/trace.hpp"

namespace specsim {

inline constexpr int kConfigSchemaVersion = 1;

struct TraceSpec {
  enum class Source { Generate, Csv };
  Source source = Source::Generate;
  std::string csv_path;
  double p_stay = 0.95;
  double mu_free_dbm = -95.0;
  double mu_busy_dbm = -70.0;
  ProfileSynthOptions synth;
};

struct PolicySpec {
  bool enabled = false;
  PolicyParams params;
};

struct ScenarioConfig {
  std::uint64_t seed = 1;
  int n = 20;
  int m = 8;                     // the first m nodes are controlled
  DefenseKind defense = DefenseKind::Trust;
  FusionRuleKind rule = FusionRuleKind::LinearSvm;
  long train_len = 600;
  long eval_len = 3000;
  TraceSpec trace;
  double alpha = 0.85;
  double epsilon = 0.01;
  std::optional<double> d_margin;
  PolicySpec policy;
  FusionConfig fusion_tuning;    // window length etc.; defense/rule mirrored in

  void validate() const {
    if (n < 1) throw ParameterError("n must be >= 1");
    if (m < 0 || m >= n) throw ParameterError("m must satisfy 0 <= m < n");
    if (train_len < 1 || eval_len < 1) throw ParameterError("train_len and eval_len must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0, 1)");
    if (!(epsilon > 0.0)) throw ParameterError("epsilon must be positive");
    if (policy.enabled) policy.params.validate(n);
  }
};

struct TimeslotRecord {
  long slot = 0;                 // evaluation-slot index, starting at 0
  int truth = kChannelBusy;
  int decision = kChannelBusy;
  int decision_truthful = kChannelBusy;  // counterfactual on truthful inputs
  bool attempted = false;
  int selected_model = -1;
  double selected_accuracy = 0.0;
  double delta_l2 = 0.0;
  bool surrogate_flip_ok = false;
  bool policy_capped = false;
  std::vector<double> weights;
  std::vector<double> truthful;
  std::vector<double> submitted;
};

struct MetricsSummary {
  double attack_success_ratio = 0.0;
  double overall_disruption_ratio = 0.0;
  long attempts = 0;
  long successes = 0;
  long elapsed = 0;
  double no_attack_error_rate = 0.0;     // wrong decisions on non-attempted slots
  double counterfactual_flip_rate = 0.0; // decision differs from truthful-input decision
};

struct PolicyAuditRow {
  long slot = 0;
  SubsetAudit audit;
};

struct ScenarioResult {
  std::vector<TimeslotRecord> records;
  MetricsSummary metrics;
  std::vector<PolicyAuditRow> policy_audit;
};

// --- metrics ----------------------------------------------------------------

inline MetricsSummary compute_metrics(const std::vector<TimeslotRecord>& records) {
  if (records.empty()) throw ParameterError("no records");
  MetricsSummary m;
  m.elapsed = static_cast<long>(records.size());
  long quiet = 0, quiet_wrong = 0, cf_flips = 0;
  for (const auto& r : records) {
    if (r.attempted) {
      ++m.attempts;
      if (r.decision != r.truth) ++m.successes;
    } else {
      ++quiet;
      if (r.decision != r.truth) ++quiet_wrong;
    }
    if (r.decision != r.decision_truthful) ++cf_flips;
  }
  m.attack_success_ratio =
      m.attempts > 0 ? static_cast<double>(m.successes) / static_cast<double>(m.attempts) : 0.0;
  m.overall_disruption_ratio = static_cast<double>(m.successes) / static_cast<double>(m.elapsed);
  m.no_attack_error_rate =
      quiet > 0 ? static_cast<double>(quiet_wrong) / static_cast<double>(quiet) : 0.0;
  m.counterfactual_flip_rate = static_cast<double>(cf_flips) / static_cast<double>(m.elapsed);
  return m;
}

// --- scenario ----------------------------------------------------------------

inline TraceDataset build_trace(const ScenarioConfig& cfg) {
  if (cfg.trace.source == TraceSpec::Source::Csv) {
    TraceDataset ds = load_trace_csv(cfg.trace.csv_path);
    if (ds.n_nodes != cfg.n)
      throw ParameterError("trace file has " + std::to_string(ds.n_nodes) + " nodes, config expects " +
                           std::to_string(cfg.n));
    if (ds.length() < cfg.train_len + cfg.eval_len)
      throw ParameterError("trace file shorter than train_len + eval_len");
    ds.train_len = cfg.train_len;
    return ds;
  }
  const long total = cfg.train_len + cfg.eval_len;
  auto schedule = generate_schedule(total, cfg.trace.p_stay, derive_seed(cfg.seed, fnv1a64("truth")));
  auto profiles = synth_profiles(cfg.n, total, cfg.train_len, derive_seed(cfg.seed, fnv1a64("nodes")),
                                 cfg.trace.synth);
  TraceDataset ds = generate_trace(schedule, profiles, cfg.trace.mu_free_dbm, cfg.trace.mu_busy_dbm,
                                   derive_seed(cfg.seed, fnv1a64("signal")));
  ds.train_len = cfg.train_len;
  return ds;
}

// Per-timeslot duel: the attacker observes its truthful readings and picks a
// submission, the fusion center decides, the attacker learns from the
// announced decision, and the policy layer refreshes on its cadence.
inline ScenarioResult run_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  TraceDataset ds = build_trace(cfg);

  FusionConfig fus_cfg = cfg.fusion_tuning;
  fus_cfg.defense = cfg.defense;
  fus_cfg.rule = cfg.rule;
  FusionState fusion = calibrate(fus_cfg, ds);

  std::optional<SurrogateEnsemble> ensemble;
  AttackerConfig atk_cfg;
  if (cfg.m > 0) {
    atk_cfg = AttackerConfig::with_global_bounds(cfg.m, cfg.alpha, cfg.epsilon);
    atk_cfg.d_margin = cfg.d_margin;
    ensemble.emplace(SurrogateEnsemble::make_default(cfg.m, derive_seed(cfg.seed, fnv1a64("attacker"))));
  }

  std::optional<InfluencePolicy> policy;
  if (cfg.policy.enabled)
    policy.emplace(cfg.policy.params, cfg.n, fusion.train_sorted);

  ScenarioResult out;
  out.records.reserve(cfg.eval_len);
  const long start = ds.train_len;
  for (long i = 0; i < cfg.eval_len; ++i) {
    const ReportVector& truthful = ds.reports[start + i];
    TimeslotRecord rec;
    rec.slot = i;
    rec.truth = truthful.truth;
    rec.truthful = truthful.values;
    rec.submitted = truthful.values;

    AttackOutcome outcome;
    if (ensemble) {
      std::vector<double> a_true(truthful.values.begin(), truthful.values.begin() + cfg.m);
      outcome = step(*ensemble, a_true, atk_cfg);
      for (int j = 0; j < cfg.m; ++j) rec.submitted[j] = outcome.submitted[j];
    }

    ReportVector submitted_report{truthful.timeslot, rec.submitted, truthful.truth};
    DecideResult decision = decide(fusion, submitted_report);
    rec.decision = decision.decision;
    rec.weights = decision.weights;
    rec.policy_capped = fusion.any_cap_active();
    rec.decision_truthful =
        rec.submitted == truthful.values ? rec.decision : decide_counterfactual(fusion, truthful.values);

    if (ensemble) {
      std::vector<double> a_submitted(rec.submitted.begin(), rec.submitted.begin() + cfg.m);
      ensemble->learn(a_submitted, rec.decision);
      rec.attempted = outcome.attempted;
      rec.selected_model = outcome.selected_model;
      rec.selected_accuracy = outcome.selected_accuracy;
      rec.surrogate_flip_ok = outcome.surrogate_flip_ok;
      if (outcome.attempted) rec.delta_l2 = l2_norm(outcome.perturbation);
    }

    if (policy) {
      policy->observe(rec.submitted);
      if (policy->due()) {
        policy->refresh_ks();
        EnforceResult res = policy->enforce_caps(fusion);
        fusion.caps = res.caps.caps;
        for (auto& audit : res.audits) out.policy_audit.push_back(PolicyAuditRow{i, std::move(audit)});
      }
    }
    out.records.push_back(std::move(rec));
  }
  out.metrics = compute_metrics(out.records);
  return out;
}

// --- sweeps -------------------------------------------------------------------

enum class SweepAxis { Alpha, M, C1, C2, Eta };

inline const char* axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::Alpha: return "alpha";
    case SweepAxis::M: return "m";
    case SweepAxis::C1: return "c1";
    case SweepAxis::C2: return "c2";
    case SweepAxis::Eta: return "eta";
  }
  return "?";
}

inline SweepAxis parse_axis(const std::string& s) {
  for (SweepAxis a : {SweepAxis::Alpha, SweepAxis::M, SweepAxis::C1, SweepAxis::C2, SweepAxis::Eta})
    if (s == axis_name(a)) return a;
  throw ParameterError("unknown sweep axis: " + s);
}

inline std::uint64_t sweep_seed(std::uint64_t base, SweepAxis axis, double value, int repeat) {
  std::uint64_t v;
  static_assert(sizeof(v) == sizeof(value));
  std::memcpy(&v, &value, sizeof(v));
  return derive_seed(derive_seed(base, fnv1a64(axis_name(axis)), v), static_cast<std::uint64_t>(repeat));
}

inline ScenarioConfig apply_axis(ScenarioConfig cfg, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::Alpha:
      if (!(value > 0.0 && value < 1.0)) throw ParameterError("axis alpha: value outside (0, 1)");
      cfg.alpha = value;
      break;
    case SweepAxis::M: {
      double rounded = std::round(value);
      if (rounded != value || value < 0 || value >= cfg.n)
        throw ParameterError("axis m: value must be an integer in [0, n)");
      cfg.m = static_cast<int>(rounded);
      break;
    }
    case SweepAxis::C1:
      if (!(value > 0.0)) throw ParameterError("axis c1: value must be positive");
      cfg.policy.params.c1 = value;
      break;
    case SweepAxis::C2:
      if (value < 0.0) throw ParameterError("axis c2: value must be >= 0");
      cfg.policy.params.c2 = value;
      break;
    case SweepAxis::Eta: {
      double rounded = std::round(value);
      if (rounded != value || value < 1 || value > cfg.n)
        throw ParameterError("axis eta: value must be an integer in [1, n]");
      cfg.policy.params.eta = static_cast<int>(rounded);
      break;
    }
  }
  return cfg;
}

struct SweepRow {
  double value = 0.0;
  int repeats = 0;
  double mean_asr = 0.0, std_asr = 0.0;
  double mean_odr = 0.0, std_odr = 0.0;
  double mean_attempts = 0.0;
  double mean_error_rate = 0.0;
};

// Run every (value, repeat) scenario; points are independent, so they run on
// a small worker pool. Results keep the caller's ordering.
inline std::vector<MetricsSummary> run_batch(const std::vector<ScenarioConfig>& configs,
                                             int jobs = 0) {
  std::vector<MetricsSummary> results(configs.size());
  if (jobs <= 0) {
    unsigned hw = std::thread::hardware_concurrency();
    if (const char* env = std::getenv("SPECSIM_JOBS")) hw = static_cast<unsigned>(std::atoi(env));
    jobs = std::max(1u, hw);
  }
  jobs = std::min<std::size_t>(jobs, configs.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < configs.size(); ++i)
      results[i] = run_scenario(configs[i]).metrics;
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(jobs);
  for (int t = 0; t < jobs; ++t)
    workers.emplace_back([&, t] {
      try {
        for (std::size_t i = next.fetch_add(1); i < configs.size(); i = next.fetch_add(1))
          results[i] = run_scenario(configs[i]).metrics;
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

inline std::vector<SweepRow> sweep(const ScenarioConfig& base, SweepAxis axis,
                                   const std::vector<double>& values, int repeats = 10) {
  if (values.empty()) throw ParameterError("sweep needs at least one value");
  if (repeats < 1) throw ParameterError("repeats must be >= 1");
  std::vector<ScenarioConfig> configs;
  configs.reserve(values.size() * repeats);
  for (double v : values) {
    ScenarioConfig cfg = apply_axis(base, axis, v);
    for (int r = 0; r < repeats; ++r) {
      cfg.seed = sweep_seed(base.seed, axis, v, r);
      configs.push_back(cfg);
    }
  }
  std::vector<MetricsSummary> metrics = run_batch(configs);
  std::vector<SweepRow> rows;
  rows.reserve(values.size());
  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    SweepRow row;
    row.value = values[vi];
    row.repeats = repeats;
    std::vector<double> asr(repeats), odr(repeats);
    for (int r = 0; r < repeats; ++r) {
      const MetricsSummary& m = metrics[vi * repeats + r];
      asr[r] = m.attack_success_ratio;
      odr[r] = m.overall_disruption_ratio;
      row.mean_attempts += static_cast<double>(m.attempts);
      row.mean_error_rate += m.no_attack_error_rate;
    }
    auto mean_std = [&](const std::vector<double>& xs, double& mean, double& sd) {
      mean = 0.0;
      for (double x : xs) mean += x;
      mean /= static_cast<double>(xs.size());
      sd = 0.0;
      for (double x : xs) sd += (x - mean) * (x - mean);
      sd = std::sqrt(sd / static_cast<double>(xs.size()));
    };
    mean_std(asr, row.mean_asr, row.std_asr);
    mean_std(odr, row.mean_odr, row.std_odr);
    row.mean_attempts /= static_cast<double>(repeats);
    row.mean_error_rate /= static_cast<double>(repeats);
    rows.push_back(row);
  }
  return rows;
}

// --- config (de)serialization --------------------------------------------------

inline nlohmann::json config_to_json(const ScenarioConfig& cfg) {
  nlohmann::json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["seed"] = cfg.seed;
  j["n"] = cfg.n;
  j["m"] = cfg.m;
  j["defense"] = defense_name(cfg.defense);
  j["rule"] = rule_name(cfg.rule);
  j["train_len"] = cfg.train_len;
  j["eval_len"] = cfg.eval_len;
  j["trace"] = {{"source", cfg.trace.source == TraceSpec::Source::Csv ? "csv" : "generate"},
                {"csv_path", cfg.trace.csv_path},
                {"p_stay", cfg.trace.p_stay},
                {"mu_free_dbm", cfg.trace.mu_free_dbm},
                {"mu_busy_dbm", cfg.trace.mu_busy_dbm}};
  j["attacker"] = {{"alpha", cfg.alpha}, {"epsilon", cfg.epsilon}};
  if (cfg.d_margin)
    j["attacker"]["d_margin"] = *cfg.d_margin;
  else
    j["attacker"]["d_margin"] = nullptr;
  j["policy"] = {{"enabled", cfg.policy.enabled},
                 {"c1", cfg.policy.params.c1},
                 {"c2", cfg.policy.params.c2},
                 {"eta", cfg.policy.params.eta},
                 {"window", cfg.policy.params.window},
                 {"cadence", cfg.policy.params.cadence}};
  j["fusion"] = {{"window_len", cfg.fusion_tuning.window_len},
                 {"training_passes", cfg.fusion_tuning.training_passes}};
  return j;
}

inline ScenarioConfig config_from_json(const nlohmann::json& j) {
  if (!j.contains("schema_version") || j.at("schema_version").get<int>() != kConfigSchemaVersion)
    throw ParameterError("config: missing or unsupported schema_version");
  ScenarioConfig cfg;
  cfg.seed = j.value("seed", cfg.seed);
  cfg.n = j.value("n", cfg.n);
  cfg.m = j.value("m", cfg.m);
  if (j.contains("defense")) cfg.defense = parse_defense(j.at("defense").get<std::string>());
  if (j.contains("rule")) cfg.rule = parse_rule(j.at("rule").get<std::string>());
  cfg.train_len = j.value("train_len", cfg.train_len);
  cfg.eval_len = j.value("eval_len", cfg.eval_len);
  if (j.contains("trace")) {
    const auto& t = j.at("trace");
    std::string source = t.value("source", std::string("generate"));
    if (source == "csv")
      cfg.trace.source = TraceSpec::Source::Csv;
    else if (source == "generate")
      cfg.trace.source = TraceSpec::Source::Generate;
    else
      throw ParameterError("config: trace.source must be 'generate' or 'csv'");
    cfg.trace.csv_path = t.value("csv_path", std::string());
    cfg.trace.p_stay = t.value("p_stay", cfg.trace.p_stay);
    cfg.trace.mu_free_dbm = t.value("mu_free_dbm", cfg.trace.mu_free_dbm);
    cfg.trace.mu_busy_dbm = t.value("mu_busy_dbm", cfg.trace.mu_busy_dbm);
  }
  if (j.contains("attacker")) {
    const auto& a = j.at("attacker");
    cfg.alpha = a.value("alpha", cfg.alpha);
    cfg.epsilon = a.value("epsilon", cfg.epsilon);
    if (a.contains("d_margin") && !a.at("d_margin").is_null())
      cfg.d_margin = a.at("d_margin").get<double>();
  }
  if (j.contains("policy")) {
    const auto& p = j.at("policy");
    cfg.policy.enabled = p.value("enabled", false);
    cfg.policy.params.c1 = p.value("c1", cfg.policy.params.c1);
    cfg.policy.params.c2 = p.value("c2", cfg.policy.params.c2);
    cfg.policy.params.eta = p.value("eta", cfg.policy.params.eta);
    cfg.policy.params.window = p.value("window", cfg.policy.params.window);
    cfg.policy.params.cadence = p.value("cadence", cfg.policy.params.cadence);
  }
  if (j.contains("fusion")) {
    const auto& f = j.at("fusion");
    cfg.fusion_tuning.window_len = f.value("window_len", cfg.fusion_tuning.window_len);
    cfg.fusion_tuning.training_passes = f.value("training_passes", cfg.fusion_tuning.training_passes);
  }
  cfg.validate();
  return cfg;
}

// --- output files ---------------------------------------------------------------

namespace harness_detail {

inline void append_fixed(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  out += buf;
}

}  // namespace harness_detail

inline void write_records_csv(const std::vector<TimeslotRecord>& records, int n, std::ostream& os) {
  std::string header = "slot,truth,decision,decision_truthful,attempted,selected_model,"
                       "selected_accuracy,delta_l2,surrogate_flip_ok,policy_capped";
  for (int j = 0; j < n; ++j) header += ",w_" + std::to_string(j);
  for (int j = 0; j < n; ++j) header += ",x_" + std::to_string(j);
  for (int j = 0; j < n; ++j) header += ",a_" + std::to_string(j);
  os << header << "\n";
  std::string line;
  for (const auto& r : records) {
    line.clear();
    line += std::to_string(r.slot);
    line += ',';
    line += std::to_string(r.truth);
    line += ',';
    line += std::to_string(r.decision);
    line += ',';
    line += std::to_string(r.decision_truthful);
    line += ',';
    line += r.attempted ? '1' : '0';
    line += ',';
    line += std::to_string(r.selected_model);
    line += ',';
    harness_detail::append_fixed(line, r.selected_accuracy);
    line += ',';
    harness_detail::append_fixed(line, r.delta_l2);
    line += ',';
    line += r.surrogate_flip_ok ? '1' : '0';
    line += ',';
    line += r.policy_capped ? '1' : '0';
    for (double w : r.weights) {
      line += ',';
      harness_detail::append_fixed(line, w);
    }
    for (double x : r.truthful) {
      line += ',';
      harness_detail::append_fixed(line, x);
    }
    for (double a : r.submitted) {
      line += ',';
      harness_detail::append_fixed(line, a);
    }
    os << line << "\n";
  }
}

inline nlohmann::json summary_to_json(const MetricsSummary& m, const ScenarioConfig& cfg) {
  return {{"attack_success_ratio", m.attack_success_ratio},
          {"overall_disruption_ratio", m.overall_disruption_ratio},
          {"attempts", m.attempts},
          {"successes", m.successes},
          {"elapsed", m.elapsed},
          {"no_attack_error_rate", m.no_attack_error_rate},
          {"counterfactual_flip_rate", m.counterfactual_flip_rate},
          {"seed", cfg.seed},
          {"config", config_to_json(cfg)}};
}

inline void write_sweep_csv(SweepAxis axis, const std::vector<SweepRow>& rows, std::ostream& os) {
  os << "axis,value,repeats,mean_asr,std_asr,mean_odr,std_odr,mean_attempts,mean_error_rate\n";
  std::string line;
  for (const auto& r : rows) {
    line.clear();
    line += axis_name(axis);
    line += ',';
    harness_detail::append_fixed(line, r.value);
    line += ',';
    line += std::to_string(r.repeats);
    for (double v : {r.mean_asr, r.std_asr, r.mean_odr, r.std_odr, r.mean_attempts, r.mean_error_rate}) {
      line += ',';
      harness_detail::append_fixed(line, v);
    }
    os << line << "\n";
  }
}

inline void write_policy_audit_csv(const std::vector<PolicyAuditRow>& rows, std::ostream& os) {
  os << "slot,subset,influence,delta,capped,scale\n";
  std::string line;
  for (const auto& r : rows) {
    line.clear();
    line += std::to_string(r.slot);
    line += ',';
    for (std::size_t i = 0; i < r.audit.subset.size(); ++i) {
      if (i) line += '-';
      line += std::to_string(r.audit.subset[i]);
    }
    line += ',';
    harness_detail::append_fixed(line, r.audit.influence);
    line += ',';
    harness_detail::append_fixed(line, r.audit.delta);
    line += ',';
    line += r.audit.capped ? '1' : '0';
    line += ',';
    harness_detail::append_fixed(line, r.audit.scale);
    os << line << "\n";
  }
}

inline std::string render_report(const nlohmann::json& summary) {
  std::ostringstream os;
  auto line = [&](const std::string& k, const std::string& v) {
    os << "  " << k;
    for (std::size_t i = k.size(); i < 28; ++i) os << ' ';
    os << v << "\n";
  };
  os << "scenario summary\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", summary.at("attack_success_ratio").get<double>());
  line("attack success ratio", buf);
  std::snprintf(buf, sizeof(buf), "%.4f", summary.at("overall_disruption_ratio").get<double>());
  line("overall disruption ratio", buf);
  line("attempts", std::to_string(summary.at("attempts").get<long>()));
  line("successes", std::to_string(summary.at("successes").get<long>()));
  line("elapsed slots", std::to_string(summary.at("elapsed").get<long>()));
  std::snprintf(buf, sizeof(buf), "%.4f", summary.at("no_attack_error_rate").get<double>());
  line("no-attack error rate", buf);
  std::snprintf(buf, sizeof(buf), "%.4f", summary.at("counterfactual_flip_rate").get<double>());
  line("counterfactual flip rate", buf);
  if (summary.contains("config")) {
    const auto& cfg = summary.at("config");
    line("defense", cfg.at("defense").get<std::string>());
    line("rule", cfg.at("rule").get<std::string>());
    line("n / m", std::to_string(cfg.at("n").get<int>()) + " / " + std::to_string(cfg.at("m").get<int>()));
    line("seed", std::to_string(summary.at("seed").get<std::uint64_t>()));
  }
  return os.str();
}

}  // namespace specsim
