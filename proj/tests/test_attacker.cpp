#include <gtest/gtest.h>

#include <cmath>

#include "specsim/attacker.hpp"
#include "specsim/rng.hpp"

using namespace specsim;

namespace {

// Test-only classifier with a scripted prediction stream; fit_one is a no-op.
class ScriptedClassifier final : public OnlineClassifier {
 public:
  ScriptedClassifier(int dim, std::vector<int> script) : dim_(dim), script_(std::move(script)) {}
  const char* name() const override { return "scripted"; }
  int dim() const override { return dim_; }
  long updates_seen() const override { return updates_; }
  int predict(const std::vector<double>&) const override {
    int v = script_[pos_ % script_.size()];
    ++pos_;
    return v;
  }
  void fit_one(const Sample&) override { ++updates_; }
  nlohmann::json snapshot() const override { return nlohmann::json::object(); }
  std::unique_ptr<OnlineClassifier> clone() const override {
    return std::make_unique<ScriptedClassifier>(*this);
  }

 private:
  int dim_;
  std::vector<int> script_;
  mutable std::size_t pos_ = 0;
  long updates_ = 0;
};

std::unique_ptr<OnlineClassifier> linear_model(std::vector<double> w, double b) {
  nlohmann::json j{{"format_version", 1}, {"kind", "pa1"}, {"dim", static_cast<int>(w.size())},
                   {"weights", w}, {"bias", b}, {"updates_seen", 0}, {"aggressiveness", 1.0}};
  return restore_classifier(j);
}

// Ensemble whose internal accuracies are forced to the given values by
// scripting agreement with a constant +1 decision stream over 10 slots.
SurrogateEnsemble scripted_ensemble(const std::vector<double>& accuracies) {
  std::vector<std::unique_ptr<OnlineClassifier>> models;
  for (double acc : accuracies) {
    int agree = static_cast<int>(std::lround(acc * 10));
    std::vector<int> script;
    for (int i = 0; i < 10; ++i) script.push_back(i < agree ? +1 : -1);
    models.push_back(std::make_unique<ScriptedClassifier>(1, script));
  }
  SurrogateEnsemble e(1, std::move(models));
  for (int i = 0; i < 10; ++i) e.learn({0.0}, +1);
  return e;
}

// Independent minimality oracle: scan the step magnitude on an epsilon/10
// grid and return the smallest flipping step, with the same projection rule.
double grid_min_flip(const std::vector<double>& a, const OnlineClassifier& model,
                     int original_label, const Hyperplane& pilot, const AttackerConfig& cfg,
                     double d_margin) {
  double margin = pilot.bias;
  for (std::size_t j = 0; j < a.size(); ++j) margin += pilot.weights[j] * a[j];
  double sgn = -sign_pm(margin);
  double step = cfg.epsilon / 10.0;
  for (double t = 0.0; t <= d_margin; t += step) {
    std::vector<double> p(a.size());
    for (std::size_t j = 0; j < a.size(); ++j) {
      p[j] = a[j] + sgn * t * pilot.weights[j];
      p[j] = std::min(std::max(p[j], cfg.bound_min[j]), cfg.bound_max[j]);
    }
    if (model.predict(p) != original_label) return t;
  }
  return -1.0;
}

}  // namespace

TEST(Evaluate, SelectsArgmaxAboveThreshold) {
  auto e = scripted_ensemble({0.9, 0.8});
  auto pick = evaluate(e, {0.0}, 0.85);
  ASSERT_TRUE(pick);
  EXPECT_EQ(*pick, 0u);
}

TEST(Evaluate, DeclinesWhenBelowThreshold) {
  auto e = scripted_ensemble({0.8, 0.8});
  EXPECT_FALSE(evaluate(e, {0.0}, 0.85));
}

TEST(Evaluate, TieBreaksTowardLowestIndex) {
  auto e = scripted_ensemble({0.9, 0.9});
  auto pick = evaluate(e, {0.0}, 0.85);
  ASSERT_TRUE(pick);
  EXPECT_EQ(*pick, 0u);
}

TEST(Generate, OneDimensionalMinimalFlip) {
  auto model = linear_model({1.0}, -5.0);  // sign(x - 5)
  AttackerConfig cfg = AttackerConfig::with_global_bounds(1);
  cfg.bound_min = {-100.0};
  cfg.bound_max = {100.0};
  cfg.d_margin = 10.0;
  cfg.epsilon = 0.01;
  Hyperplane pilot{{1.0}, -5.0};
  std::vector<double> a{3.0};
  auto gen = generate_adversarial(a, *model, model->predict(a), pilot, cfg);
  ASSERT_TRUE(gen.feasible);
  EXPECT_GT(gen.magnitude, 2.0);
  EXPECT_LE(gen.magnitude, 2.0 + cfg.epsilon);
  EXPECT_EQ(model->predict({a[0] + gen.perturbation[0]}), +1);
  double oracle = grid_min_flip(a, *model, -1, pilot, cfg, 10.0);
  EXPECT_NEAR(gen.magnitude, oracle, cfg.epsilon);
}

TEST(Generate, ConstantModelIsInfeasible) {
  ScriptedClassifier constant(1, {+1});
  AttackerConfig cfg = AttackerConfig::with_global_bounds(1);
  cfg.d_margin = 10.0;
  Hyperplane pilot{{1.0}, 0.0};
  auto gen = generate_adversarial({-75.0}, constant, +1, pilot, cfg);
  EXPECT_FALSE(gen.feasible);
  EXPECT_NE(gen.reason.find("no flip"), std::string::npos);
}

TEST(Generate, ZeroPilotWeightsAreInfeasible) {
  auto model = linear_model({1.0}, 0.0);
  AttackerConfig cfg = AttackerConfig::with_global_bounds(1);
  Hyperplane pilot{{0.0}, 0.0};
  auto gen = generate_adversarial({-75.0}, *model, -1, pilot, cfg);
  EXPECT_FALSE(gen.feasible);
}

// Random linear sub-models: the returned step is within epsilon of the grid
// oracle, the flip always verifies, the submitted point stays in the box and
// the evaluation budget respects the bisection bound.
TEST(Property, MinimalityFeasibilityAndBudget) {
  Rng rng(2718);
  int minimality_checked = 0;
  for (int trial = 0; trial < 400; ++trial) {
    int m = 2 + static_cast<int>(rng.below(4));
    AttackerConfig cfg = AttackerConfig::with_global_bounds(m);
    cfg.epsilon = 0.01;
    cfg.d_margin = 16.0;
    std::vector<double> w(m), a(m);
    for (int j = 0; j < m; ++j) {
      w[j] = rng.uniform(-1.0, 1.0);
      a[j] = rng.uniform(-100.0, -50.0);
    }
    double wa = 0.0;
    for (int j = 0; j < m; ++j) wa += w[j] * a[j];
    double b = -wa + rng.uniform(-4.0, 4.0);  // boundary within reach of the probe
    auto model = linear_model(w, b);
    Hyperplane pilot{w, b};
    int orig = model->predict(a);
    auto gen = generate_adversarial(a, *model, orig, pilot, cfg);
    if (!gen.feasible) continue;

    for (std::size_t j = 0; j < a.size(); ++j) {
      double v = a[j] + gen.perturbation[j];
      EXPECT_GE(v, cfg.bound_min[j]);
      EXPECT_LE(v, cfg.bound_max[j]);
    }
    std::vector<double> flipped(m);
    for (int j = 0; j < m; ++j) flipped[j] = a[j] + gen.perturbation[j];
    EXPECT_NE(model->predict(flipped), orig);

    long bound = static_cast<long>(std::ceil(std::log2(16.0 / cfg.epsilon))) + 2;
    EXPECT_LE(gen.model_evaluations, bound);

    double oracle = grid_min_flip(a, *model, orig, pilot, cfg, 16.0);
    ASSERT_GE(oracle, 0.0);
    EXPECT_NEAR(gen.magnitude, oracle, cfg.epsilon);
    ++minimality_checked;
  }
  EXPECT_GT(minimality_checked, 200);
}

TEST(Step, GateClosedSubmitsTruthfulData) {
  SurrogateEnsemble e = SurrogateEnsemble::make_default(3, 1);
  AttackerConfig cfg = AttackerConfig::with_global_bounds(3);
  std::vector<double> a{-80.0, -85.0, -90.0};
  auto outcome = step(e, a, cfg);  // fresh ensemble: accuracies are zero
  EXPECT_FALSE(outcome.attempted);
  EXPECT_EQ(outcome.submitted, a);
  EXPECT_FALSE(outcome.skip_reason.empty());
}

TEST(Step, AttacksWhenConfidentAndFlipsSurrogate) {
  SurrogateEnsemble e = SurrogateEnsemble::make_default(2, 9);
  AttackerConfig cfg = AttackerConfig::with_global_bounds(2, 0.6);
  Rng rng(4);
  // teach the ensemble a simple rule: busy when node values exceed -82.5
  for (int i = 0; i < 200; ++i) {
    double base = rng.uniform01() < 0.5 ? -70.0 : -95.0;
    std::vector<double> x{base + rng.uniform(-1, 1), base + rng.uniform(-1, 1)};
    e.learn(x, base > -82.5 ? +1 : -1);
  }
  std::vector<double> a{-70.0, -70.0};
  auto outcome = step(e, a, cfg);
  ASSERT_TRUE(outcome.attempted);
  EXPECT_TRUE(outcome.surrogate_flip_ok);
  EXPECT_GE(outcome.selected_model, 0);
  EXPECT_GT(outcome.selected_accuracy, 0.6);
  for (std::size_t j = 0; j < a.size(); ++j) {
    EXPECT_GE(outcome.submitted[j], kGlobalMinDbm);
    EXPECT_LE(outcome.submitted[j], kGlobalMaxDbm);
  }
  const auto& surrogate = e.model(static_cast<std::size_t>(outcome.selected_model));
  EXPECT_NE(surrogate.predict(outcome.submitted), surrogate.predict(a));
}

TEST(Learn, RunningAccuracyMatchesAgreementCounts) {
  std::vector<std::unique_ptr<OnlineClassifier>> models;
  std::vector<int> script;
  for (int i = 0; i < 10; ++i) script.push_back(i == 0 ? -1 : +1);  // 9 of 10 agree
  models.push_back(std::make_unique<ScriptedClassifier>(1, script));
  SurrogateEnsemble e(1, std::move(models));
  for (int i = 0; i < 10; ++i) e.learn({0.0}, +1);
  EXPECT_DOUBLE_EQ(e.internal_accuracy(0), 0.9);
}

TEST(Learn, ColdStartLinearModelsAgreeWithBusy) {
  SurrogateEnsemble e = SurrogateEnsemble::make_default(2, 77);
  e.learn({-80.0, -80.0}, +1);
  // sign(0) = +1 cold-start rule: NB and every linear kind agree on slot one
  for (std::size_t l = 0; l < 5; ++l) EXPECT_DOUBLE_EQ(e.internal_accuracy(l), 1.0) << l;
}

TEST(Learn, IdenticalStreamsGiveIdenticalAccuracies) {
  SurrogateEnsemble a = SurrogateEnsemble::make_default(2, 123);
  SurrogateEnsemble b = SurrogateEnsemble::make_default(2, 123);
  Rng rng(6);
  for (int i = 0; i < 300; ++i) {
    std::vector<double> x{rng.uniform(-110, -40), rng.uniform(-110, -40)};
    int y = rng.uniform01() < 0.5 ? -1 : +1;
    a.learn(x, y);
    b.learn(x, y);
  }
  EXPECT_EQ(a.internal_accuracies(), b.internal_accuracies());
}

TEST(Learn, AccuracyUsesPreUpdatePredictions) {
  // A perceptron that flips to agreement after training on the slot must not
  // count that slot as an agreement.
  std::vector<std::unique_ptr<OnlineClassifier>> models;
  models.push_back(std::make_unique<PerceptronClassifier>(1));
  SurrogateEnsemble e(1, std::move(models));
  e.learn({5.0}, -1);  // cold perceptron predicts +1: disagreement, then learns
  EXPECT_DOUBLE_EQ(e.internal_accuracy(0), 0.0);
  EXPECT_EQ(e.model(0).predict({5.0}), -1);  // post-update it would agree
}

TEST(Pilot, FallsBackToDedicatedLinearPilot) {
  std::vector<std::unique_ptr<OnlineClassifier>> models;
  models.push_back(std::make_unique<ScriptedClassifier>(1, std::vector<int>{+1}));
  SurrogateEnsemble e(1, std::move(models));
  for (int i = 0; i < 5; ++i) e.learn({-70.0}, +1);
  auto pilot = e.pilot_hyperplane();
  ASSERT_TRUE(pilot);
  EXPECT_GT(std::fabs(pilot->weights[0]) + std::fabs(pilot->bias), 0.0);
}

TEST(Config, ValidationCatchesBadParameters) {
  AttackerConfig cfg = AttackerConfig::with_global_bounds(2);
  cfg.alpha = 1.5;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = AttackerConfig::with_global_bounds(2);
  cfg.epsilon = 0.0;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = AttackerConfig::with_global_bounds(2);
  cfg.bound_min = {0.0, 0.0};
  cfg.bound_max = {0.0, 1.0};
  EXPECT_THROW(cfg.validate(), ParameterError);
}
