#include <gtest/gtest.h>

#include <sstream>

#include "specsim/harness.hpp"

using namespace specsim;

namespace {

ScenarioConfig small_config(std::uint64_t seed = 1) {
  ScenarioConfig cfg;
  cfg.seed = seed;
  cfg.n = 8;
  cfg.m = 3;
  cfg.defense = DefenseKind::Outlier;
  cfg.rule = FusionRuleKind::LinearSvm;
  cfg.train_len = 120;
  cfg.eval_len = 200;
  return cfg;
}

}  // namespace

TEST(Metrics, ArithmeticDefinitions) {
  std::vector<TimeslotRecord> records(100);
  for (long i = 0; i < 100; ++i) {
    records[i].slot = i;
    records[i].truth = +1;
    records[i].decision = +1;
    records[i].decision_truthful = +1;
  }
  for (int i = 0; i < 10; ++i) records[i].attempted = true;
  for (int i = 0; i < 7; ++i) records[i].decision = -1;  // successful corruptions
  auto m = compute_metrics(records);
  EXPECT_DOUBLE_EQ(m.attack_success_ratio, 0.7);
  EXPECT_DOUBLE_EQ(m.overall_disruption_ratio, 0.07);
  EXPECT_EQ(m.attempts, 10);
  EXPECT_EQ(m.successes, 7);
  EXPECT_EQ(m.elapsed, 100);
}

TEST(Metrics, PaperScaleRatio) {
  std::vector<TimeslotRecord> records(250);
  for (long i = 0; i < 250; ++i) {
    records[i].slot = i;
    records[i].truth = +1;
    records[i].decision = +1;
    records[i].decision_truthful = +1;
  }
  for (int i = 0; i < 200; ++i) records[i].attempted = true;
  for (int i = 0; i < 164; ++i) records[i].decision = -1;
  auto m = compute_metrics(records);
  EXPECT_DOUBLE_EQ(m.attack_success_ratio, 0.82);
}

TEST(Metrics, ZeroAttemptsGiveZeroRatios) {
  std::vector<TimeslotRecord> records(50);
  for (long i = 0; i < 50; ++i) {
    records[i].slot = i;
    records[i].truth = +1;
    records[i].decision = +1;
    records[i].decision_truthful = +1;
  }
  auto m = compute_metrics(records);
  EXPECT_DOUBLE_EQ(m.attack_success_ratio, 0.0);
  EXPECT_DOUBLE_EQ(m.overall_disruption_ratio, 0.0);
  EXPECT_THROW(compute_metrics({}), ParameterError);
}

TEST(Scenario, NoAttackerNoiseFreeMajorityIsPerfect) {
  ScenarioConfig cfg;
  cfg.seed = 3;
  cfg.n = 5;
  cfg.m = 0;
  cfg.defense = DefenseKind::None;
  cfg.rule = FusionRuleKind::Majority;
  cfg.train_len = 60;
  cfg.eval_len = 120;
  cfg.trace.synth = ProfileSynthOptions{0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0};
  auto result = run_scenario(cfg);
  EXPECT_DOUBLE_EQ(result.metrics.overall_disruption_ratio, 0.0);
  EXPECT_DOUBLE_EQ(result.metrics.no_attack_error_rate, 0.0);
  for (const auto& r : result.records) EXPECT_EQ(r.decision, r.truth);
}

TEST(Scenario, DeterministicOutputBytes) {
  ScenarioConfig cfg = small_config(17);
  auto a = run_scenario(cfg);
  auto b = run_scenario(cfg);
  std::ostringstream csv_a, csv_b;
  write_records_csv(a.records, cfg.n, csv_a);
  write_records_csv(b.records, cfg.n, csv_b);
  EXPECT_EQ(csv_a.str(), csv_b.str());
  EXPECT_EQ(summary_to_json(a.metrics, cfg).dump(), summary_to_json(b.metrics, cfg).dump());
}

TEST(Scenario, InvariantsHoldOnEveryRecord) {
  ScenarioConfig cfg = small_config(23);
  auto result = run_scenario(cfg);
  const auto& m = result.metrics;
  EXPECT_LE(m.successes, m.attempts);
  EXPECT_LE(m.attempts, m.elapsed);
  for (const auto& r : result.records) {
    EXPECT_TRUE(is_label(r.truth));
    EXPECT_TRUE(is_label(r.decision));
    EXPECT_TRUE(is_label(r.decision_truthful));
    if (!r.attempted) {
      // quiet slots submit the truthful data and the counterfactual agrees
      EXPECT_EQ(r.submitted, r.truthful);
      EXPECT_EQ(r.decision_truthful, r.decision);
    } else {
      EXPECT_GT(r.selected_accuracy, cfg.alpha);  // gate soundness
      EXPECT_GE(r.selected_model, 0);
    }
  }
}

TEST(Scenario, CsvTraceSourceRoundTrip) {
  ScenarioConfig gen_cfg = small_config(29);
  auto ds = build_trace(gen_cfg);
  std::string path = testing::TempDir() + "harness_trace.csv";
  save_trace_csv(ds, path);

  ScenarioConfig cfg = small_config(29);
  cfg.trace.source = TraceSpec::Source::Csv;
  cfg.trace.csv_path = path;
  auto from_csv = run_scenario(cfg);
  auto from_gen = run_scenario(gen_cfg);
  EXPECT_EQ(from_csv.metrics.successes, from_gen.metrics.successes);
  EXPECT_EQ(from_csv.metrics.attempts, from_gen.metrics.attempts);
}

TEST(Sweep, RowsAndSeedsAreStable) {
  ScenarioConfig cfg = small_config(31);
  cfg.eval_len = 120;
  auto rows = sweep(cfg, SweepAxis::Alpha, {0.5, 0.85, 0.95}, 2);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.repeats, 2);
    EXPECT_GE(r.mean_asr, 0.0);
    EXPECT_LE(r.mean_asr, 1.0);
  }
  auto again = sweep(cfg, SweepAxis::Alpha, {0.5, 0.85, 0.95}, 2);
  std::ostringstream a, b;
  write_sweep_csv(SweepAxis::Alpha, rows, a);
  write_sweep_csv(SweepAxis::Alpha, again, b);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Sweep, OutOfDomainValueNamesTheAxis) {
  ScenarioConfig cfg = small_config();
  try {
    sweep(cfg, SweepAxis::Alpha, {1.5}, 1);
    FAIL() << "expected ParameterError";
  } catch (const ParameterError& e) {
    EXPECT_NE(std::string(e.what()).find("alpha"), std::string::npos);
  }
  EXPECT_THROW(sweep(cfg, SweepAxis::M, {2.5}, 1), ParameterError);
  EXPECT_THROW(sweep(cfg, SweepAxis::Eta, {0.0}, 1), ParameterError);
  EXPECT_THROW(sweep(cfg, SweepAxis::Alpha, {}, 1), ParameterError);
}

TEST(Config, JsonRoundTrip) {
  ScenarioConfig cfg = small_config(47);
  cfg.policy.enabled = true;
  cfg.policy.params.eta = 3;
  cfg.d_margin = 12.5;
  nlohmann::json j = config_to_json(cfg);
  ScenarioConfig back = config_from_json(j);
  EXPECT_EQ(back.seed, cfg.seed);
  EXPECT_EQ(back.n, cfg.n);
  EXPECT_EQ(back.m, cfg.m);
  EXPECT_EQ(back.defense, cfg.defense);
  EXPECT_EQ(back.rule, cfg.rule);
  EXPECT_EQ(back.policy.enabled, true);
  EXPECT_EQ(back.policy.params.eta, 3);
  ASSERT_TRUE(back.d_margin);
  EXPECT_DOUBLE_EQ(*back.d_margin, 12.5);
  EXPECT_EQ(config_to_json(back).dump(), j.dump());
}

TEST(Config, SchemaVersionIsRequired) {
  nlohmann::json j{{"n", 5}};
  EXPECT_THROW(config_from_json(j), ParameterError);
  j["schema_version"] = 999;
  EXPECT_THROW(config_from_json(j), ParameterError);
}

TEST(Config, ValidationRejectsBadShapes) {
  ScenarioConfig cfg = small_config();
  cfg.m = cfg.n;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = small_config();
  cfg.alpha = 0.0;
  EXPECT_THROW(cfg.validate(), ParameterError);
}

TEST(Policy, AuditRowsAppearWhenPolicyRuns) {
  ScenarioConfig cfg = small_config(53);
  cfg.policy.enabled = true;
  cfg.policy.params.eta = 2;
  cfg.policy.params.cadence = 8;
  cfg.policy.params.window = 32;
  auto result = run_scenario(cfg);
  std::ostringstream os;
  write_policy_audit_csv(result.policy_audit, os);
  EXPECT_NE(os.str().find("slot,subset,influence,delta,capped,scale"), std::string::npos);
}

TEST(Report, RendersSummaryFields) {
  ScenarioConfig cfg = small_config(59);
  cfg.eval_len = 80;
  auto result = run_scenario(cfg);
  std::string text = render_report(summary_to_json(result.metrics, cfg));
  EXPECT_NE(text.find("attack success ratio"), std::string::npos);
  EXPECT_NE(text.find("overall disruption ratio"), std::string::npos);
  EXPECT_NE(text.find("outlier"), std::string::npos);
}
