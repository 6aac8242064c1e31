#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "specsim/influence.hpp"
#include "specsim/trace.hpp"

using namespace specsim;

TEST(Schedule, SingleSlotIsValidLabel) {
  auto s = generate_schedule(1, 0.9, 7);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_TRUE(is_label(s[0]));
  EXPECT_EQ(s, generate_schedule(1, 0.9, 7));
}

TEST(Schedule, RejectsBadStayProbability) {
  EXPECT_THROW(generate_schedule(10, 0.0, 1), ParameterError);
  EXPECT_THROW(generate_schedule(10, 1.0, 1), ParameterError);
  EXPECT_THROW(generate_schedule(0, 0.5, 1), ParameterError);
}

// Mean transition count over many seeds must sit within 3 sigma of the
// binomial expectation (length-1) * (1 - p_stay).
TEST(Schedule, TransitionRateMatchesBinomialExpectation) {
  const long length = 100;
  const double p_stay = 0.999;
  const int seeds = 10000;
  double total = 0.0;
  for (int seed = 0; seed < seeds; ++seed) {
    auto s = generate_schedule(length, p_stay, seed);
    for (long i = 1; i < length; ++i)
      if (s[i] != s[i - 1]) total += 1.0;
  }
  double mean = total / seeds;
  double expected = (length - 1) * (1.0 - p_stay);
  double sigma_mean = std::sqrt((length - 1) * (1.0 - p_stay) * p_stay / seeds);
  EXPECT_NEAR(mean, expected, 3.0 * sigma_mean);
}

TEST(Schedule, DeterministicAcrossCalls) {
  for (int seed = 0; seed < 50; ++seed)
    EXPECT_EQ(generate_schedule(200, 0.95, seed), generate_schedule(200, 0.95, seed));
}

static std::vector<NodeProfile> flat_profiles(int n, double sigma) {
  std::vector<NodeProfile> ps(n);
  for (int j = 0; j < n; ++j) {
    ps[j].node_id = j;
    ps[j].noise_sigma_dbm = sigma;
  }
  return ps;
}

TEST(Trace, NoiseFreeBusySlotReportsClassMean) {
  std::vector<int> schedule{kChannelBusy, kChannelFree, kChannelBusy};
  auto ds = generate_trace(schedule, flat_profiles(3, 0.0), -95.0, -70.0, 42);
  for (int j = 0; j < 3; ++j) {
    EXPECT_DOUBLE_EQ(ds.reports[0].values[j], -70.0);
    EXPECT_DOUBLE_EQ(ds.reports[1].values[j], -95.0);
  }
}

TEST(Trace, DriftSegmentShiftsTheMean) {
  std::vector<int> schedule(100, kChannelBusy);
  auto profiles = flat_profiles(1, 1.0);
  profiles[0].drift_segments = {DriftSegment{0, 0.0, 1.0}, DriftSegment{50, 5.0, 1.0}};
  auto ds = generate_trace(schedule, profiles, -95.0, -70.0, 3);
  double pre = 0.0, post = 0.0;
  for (long i = 0; i < 50; ++i) pre += ds.reports[i].values[0];
  for (long i = 50; i < 100; ++i) post += ds.reports[i].values[0];
  pre /= 50.0;
  post /= 50.0;
  EXPECT_NEAR(post - pre, 5.0, 3.0 * 1.0 / std::sqrt(50.0) * 2.0);
}

TEST(Trace, SeedSensitivity) {
  std::vector<int> schedule(20, kChannelBusy);
  auto a = generate_trace(schedule, flat_profiles(2, 2.0), -95.0, -70.0, 1);
  auto b = generate_trace(schedule, flat_profiles(2, 2.0), -95.0, -70.0, 2);
  bool differs = false;
  for (long i = 0; i < 20 && !differs; ++i)
    differs = a.reports[i].values != b.reports[i].values;
  EXPECT_TRUE(differs);
}

TEST(Trace, ValuesStayInsideFeasibleRange) {
  std::vector<int> schedule(500, kChannelBusy);
  auto profiles = flat_profiles(4, 30.0);  // huge noise to force clamping
  auto ds = generate_trace(schedule, profiles, -95.0, -70.0, 9);
  for (const auto& r : ds.reports)
    for (double v : r.values) {
      EXPECT_GE(v, kGlobalMinDbm);
      EXPECT_LE(v, kGlobalMaxDbm);
    }
}

TEST(Trace, RejectsEmptyProfilesAndBadLevels) {
  std::vector<int> schedule(5, kChannelBusy);
  EXPECT_THROW(generate_trace(schedule, {}, -95.0, -70.0, 1), ParameterError);
  EXPECT_THROW(generate_trace(schedule, flat_profiles(2, 1.0), -70.0, -95.0, 1), ParameterError);
}

// Drift realism: K-S between pre- and post-shift halves must dominate the
// statistic between two same-regime halves for nearly every seed.
TEST(Trace, DriftSeparatesDistributions) {
  const int seeds = 200;
  int hits = 0;
  std::vector<int> schedule(256, kChannelBusy);
  for (int seed = 0; seed < seeds; ++seed) {
    auto profiles = flat_profiles(1, 2.0);
    profiles[0].drift_segments = {DriftSegment{0, 0.0, 1.0}, DriftSegment{128, 5.0, 1.0}};
    auto ds = generate_trace(schedule, profiles, -95.0, -70.0, seed);
    auto col = [&](long lo, long hi) {
      std::vector<double> v;
      for (long i = lo; i < hi; ++i) v.push_back(ds.reports[i].values[0]);
      return v;
    };
    auto pre = col(0, 128);
    std::sort(pre.begin(), pre.end());
    double cross = ks_statistic(pre, col(128, 256));
    auto first_half = col(0, 64);
    std::sort(first_half.begin(), first_half.end());
    double within = ks_statistic(first_half, col(64, 128));
    if (cross > within) ++hits;
  }
  EXPECT_GE(hits, static_cast<int>(0.95 * seeds));
}

TEST(TraceCsv, RoundTripsWellFormedFile) {
  std::string body =
      "timeslot,truth,node_0,node_1\n"
      "0,-1,-95.000000,-94.500000\n"
      "1,1,-70.250000,-69.750000\n"
      "2,1,-70.000000,-70.000000\n";
  std::istringstream in(body);
  TraceDataset ds = load_trace_csv(in);
  EXPECT_EQ(ds.n_nodes, 2);
  EXPECT_EQ(ds.length(), 3);
  EXPECT_EQ(ds.reports[0].truth, kChannelFree);
  std::ostringstream out;
  save_trace_csv(ds, out);
  EXPECT_EQ(out.str(), body);
}

TEST(TraceCsv, ReportsColumnMismatchWithLineNumber) {
  std::istringstream in(
      "timeslot,truth,node_0,node_1\n"
      "0,1,-70.0,-70.0\n"
      "1,1,-70.0,-70.0,-70.0\n");
  try {
    load_trace_csv(in);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(TraceCsv, ReportsNonNumericCell) {
  std::istringstream in(
      "timeslot,truth,node_0\n"
      "0,1,oops\n");
  EXPECT_THROW(load_trace_csv(in), FormatError);
}

// Generated traces survive a save/load/save cycle byte-identically.
TEST(TraceCsv, SaveLoadSaveIsByteStable) {
  for (int seed = 0; seed < 20; ++seed) {
    auto schedule = generate_schedule(50, 0.9, seed);
    auto profiles = synth_profiles(3, 50, 10, seed);
    auto ds = generate_trace(schedule, profiles, -95.0, -70.0, seed);
    std::ostringstream first;
    save_trace_csv(ds, first);
    std::istringstream in(first.str());
    TraceDataset reloaded = load_trace_csv(in);
    std::ostringstream second;
    save_trace_csv(reloaded, second);
    EXPECT_EQ(first.str(), second.str());
  }
}

TEST(Profiles, SynthesisIsDeterministicAndValid) {
  auto a = synth_profiles(20, 3600, 600, 7);
  auto b = synth_profiles(20, 3600, 600, 7);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t j = 0; j < a.size(); ++j) {
    a[j].validate();
    EXPECT_EQ(a[j].location_bias_dbm, b[j].location_bias_dbm);
    EXPECT_EQ(a[j].drift_segments.size(), b[j].drift_segments.size());
    for (const auto& seg : a[j].drift_segments)
      if (seg.start_slot > 0) EXPECT_GE(seg.start_slot, 600);
  }
}
