#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "specsim/common.hpp"
#include "specsim/learners.hpp"

namespace specsim {

struct AttackerConfig {
  int m = 0;                          // controlled nodes
  double alpha = 0.85;                // internal-accuracy gate
  double epsilon = 0.01;              // binary-search termination
  std::optional<double> d_margin;     // initial search magnitude; auto when unset
  std::vector<double> bound_min;      // feasible box, element-wise
  std::vector<double> bound_max;

  void validate() const {
    if (m < 1) throw ParameterError("attacker needs at least one node");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0, 1)");
    if (!(epsilon > 0.0)) throw ParameterError("epsilon must be positive");
    if (d_margin && !(*d_margin > 0.0)) throw ParameterError("d_margin must be positive");
    if (static_cast<int>(bound_min.size()) != m || static_cast<int>(bound_max.size()) != m)
      throw ParameterError("bounds must have one entry per controlled node");
    for (int j = 0; j < m; ++j)
      if (!(bound_min[j] < bound_max[j])) throw ParameterError("bound_min must be below bound_max");
  }

  static AttackerConfig with_global_bounds(int m, double alpha = 0.85, double epsilon = 0.01) {
    AttackerConfig cfg;
    cfg.m = m;
    cfg.alpha = alpha;
    cfg.epsilon = epsilon;
    cfg.bound_min.assign(m, kGlobalMinDbm);
    cfg.bound_max.assign(m, kGlobalMaxDbm);
    return cfg;
  }
};

struct AttackOutcome {
  bool attempted = false;
  int selected_model = -1;            // index into the ensemble, -1 = none
  double selected_accuracy = 0.0;
  std::vector<double> perturbation;   // empty when no attack
  std::vector<double> submitted;
  bool surrogate_flip_ok = false;
  std::string skip_reason;            // set when evaluation or generation declined
};

// Sub-model pool with prequential internal-accuracy tracking: each learn()
// first scores the prediction made before the update, then trains.
class SurrogateEnsemble {
 public:
  SurrogateEnsemble(int dim, std::vector<std::unique_ptr<OnlineClassifier>> models)
      : dim_(dim), models_(std::move(models)), agreements_(models_.size(), 0) {
    if (models_.empty()) throw ParameterError("ensemble needs at least one sub-model");
    bool any_hyperplane = false;
    for (const auto& m : models_) any_hyperplane |= m->hyperplane().has_value();
    if (!any_hyperplane) {
      // No hyperplane-capable member: train a dedicated linear pilot on the
      // same stream instead.
      dedicated_pilot_ = std::make_unique<PassiveAggressiveClassifier>(dim, false);
    }
  }

  static SurrogateEnsemble make_default(int dim, std::uint64_t seed) {
    std::vector<std::unique_ptr<OnlineClassifier>> models;
    models.push_back(make_classifier(ClassifierKind::MultinomialNB, dim));
    models.push_back(make_classifier(ClassifierKind::Perceptron, dim));
    models.push_back(make_classifier(ClassifierKind::SgdHinge, dim));
    models.push_back(make_classifier(ClassifierKind::PassiveAggressiveI, dim));
    models.push_back(make_classifier(ClassifierKind::PassiveAggressiveII, dim));
    models.push_back(make_classifier(ClassifierKind::Mlp, dim, seed));
    return SurrogateEnsemble(dim, std::move(models));
  }

  int dim() const { return dim_; }
  std::size_t size() const { return models_.size(); }
  long slots_learned() const { return slots_; }
  const OnlineClassifier& model(std::size_t l) const { return *models_[l]; }

  double internal_accuracy(std::size_t l) const {
    return static_cast<double>(agreements_[l]) / static_cast<double>(std::max<long>(1, slots_));
  }

  std::vector<double> internal_accuracies() const {
    std::vector<double> a(models_.size());
    for (std::size_t l = 0; l < models_.size(); ++l) a[l] = internal_accuracy(l);
    return a;
  }

  // Record agreement of the pre-update predictions with the announced
  // decision, then feed the pair to every sub-model.
  void learn(const std::vector<double>& submitted, int decision) {
    if (!is_label(decision)) throw ParameterError("decision must be -1 or +1");
    Sample s{submitted, decision};
    for (std::size_t l = 0; l < models_.size(); ++l) {
      if (models_[l]->predict(submitted) == decision) ++agreements_[l];
      models_[l]->fit_one(s);
    }
    if (dedicated_pilot_) dedicated_pilot_->fit_one(s);
    ++slots_;
  }

  // Hyperplane-capable member with the highest internal accuracy (ties to the
  // lowest index); falls back to the dedicated pilot.
  std::optional<Hyperplane> pilot_hyperplane() const {
    int best = -1;
    double best_acc = -1.0;
    for (std::size_t l = 0; l < models_.size(); ++l) {
      if (!models_[l]->hyperplane()) continue;
      double a = internal_accuracy(l);
      if (a > best_acc) {
        best_acc = a;
        best = static_cast<int>(l);
      }
    }
    if (best >= 0) return models_[best]->hyperplane();
    if (dedicated_pilot_) return dedicated_pilot_->hyperplane();
    return std::nullopt;
  }

 private:
  int dim_;
  std::vector<std::unique_ptr<OnlineClassifier>> models_;
  std::vector<long> agreements_;
  std::unique_ptr<OnlineClassifier> dedicated_pilot_;
  long slots_ = 0;
};

// Accuracy gate: best sub-model index when its internal accuracy exceeds
// alpha, none otherwise. Ties break toward the lowest index.
inline std::optional<std::size_t> evaluate(const SurrogateEnsemble& ensemble,
                                           const std::vector<double>& a, double alpha) {
  if (static_cast<int>(a.size()) != ensemble.dim())
    throw ParameterError("report dimension mismatch");
  std::size_t best = 0;
  double best_acc = -1.0;
  for (std::size_t l = 0; l < ensemble.size(); ++l) {
    double acc = ensemble.internal_accuracy(l);
    if (acc > best_acc) {
      best_acc = acc;
      best = l;
    }
  }
  if (best_acc > alpha) return best;
  return std::nullopt;
}

namespace attack_detail {

inline std::vector<double> project_into(const std::vector<double>& p,
                                        const AttackerConfig& cfg) {
  std::vector<double> q(p.size());
  for (std::size_t j = 0; j < p.size(); ++j)
    q[j] = std::min(std::max(p[j], cfg.bound_min[j]), cfg.bound_max[j]);
  return q;
}

inline std::vector<double> step_along(const std::vector<double>& a, double step,
                                      const std::vector<double>& w) {
  std::vector<double> p(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) p[j] = a[j] + step * w[j];
  return p;
}

inline double default_margin(const Hyperplane& pilot, const AttackerConfig& cfg) {
  double range = 0.0, w_inf = 0.0;
  for (std::size_t j = 0; j < pilot.weights.size(); ++j) {
    range = std::max(range, cfg.bound_max[j] - cfg.bound_min[j]);
    w_inf = std::max(w_inf, std::fabs(pilot.weights[j]));
  }
  return 2.0 * range / w_inf;  // the initial probe can always reach the far face
}

}  // namespace attack_detail

struct GenerationResult {
  bool feasible = false;
  std::vector<double> perturbation;
  double magnitude = 0.0;             // scalar step along the pilot direction
  long model_evaluations = 0;         // predict() calls against the sub-model
  std::string reason;
};

// Minimal flipping perturbation along the pilot direction: probe at the far
// magnitude, bisect the step until the bracket closes below epsilon, then
// project into the feasible box and confirm the flip survives projection.
// original_label is the sub-model's current prediction for a, which the
// caller already holds from its accuracy bookkeeping.
inline GenerationResult generate_adversarial(const std::vector<double>& a,
                                             const OnlineClassifier& model,
                                             int original_label,
                                             const Hyperplane& pilot,
                                             const AttackerConfig& cfg) {
  cfg.validate();
  GenerationResult out;
  if (static_cast<int>(a.size()) != cfg.m || model.dim() != cfg.m ||
      static_cast<int>(pilot.weights.size()) != cfg.m)
    throw ParameterError("generation dimension mismatch");

  double w_norm_sq = 0.0;
  for (double w : pilot.weights) w_norm_sq += w * w;
  if (w_norm_sq <= 0.0) {
    out.reason = "pilot hyperplane has zero weights";
    return out;
  }

  double margin = pilot.bias;
  for (std::size_t j = 0; j < a.size(); ++j) margin += pilot.weights[j] * a[j];
  const double sgn = -sign_pm(margin);
  const double d_margin = cfg.d_margin ? *cfg.d_margin
                                       : attack_detail::default_margin(pilot, cfg);

  using attack_detail::step_along;
  auto flips = [&](const std::vector<double>& p) {
    ++out.model_evaluations;
    return model.predict(p) != original_label;
  };

  if (!flips(step_along(a, sgn * d_margin, pilot.weights))) {
    out.reason = "no flip within the search magnitude";
    return out;
  }

  double lo = 0.0, hi = d_margin;
  while (hi - lo > cfg.epsilon) {
    double mid = lo + (hi - lo) / 2.0;
    if (flips(step_along(a, sgn * mid, pilot.weights)))
      hi = mid;
    else
      lo = mid;
  }

  // hi always rests on a flipping magnitude; only the box projection can
  // break the flip, so re-verify on the projected point.
  std::vector<double> candidate =
      attack_detail::project_into(step_along(a, sgn * hi, pilot.weights), cfg);
  if (!flips(candidate)) {
    out.reason = "projection into the feasible box broke the flip";
    return out;
  }
  out.feasible = true;
  out.magnitude = hi;
  out.perturbation.resize(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) out.perturbation[j] = candidate[j] - a[j];
  return out;
}

// One attacker turn: gate on internal accuracy, pick the pilot, craft the
// perturbation against the selected sub-model, and fall back to the truthful
// report whenever any stage declines.
inline AttackOutcome step(const SurrogateEnsemble& ensemble, const std::vector<double>& a_true,
                          const AttackerConfig& cfg) {
  AttackOutcome out;
  out.submitted = a_true;
  auto selected = evaluate(ensemble, a_true, cfg.alpha);
  if (!selected) {
    out.skip_reason = "no sub-model above the accuracy gate";
    return out;
  }
  auto pilot = ensemble.pilot_hyperplane();
  if (!pilot) {
    out.skip_reason = "no hyperplane-capable pilot";
    return out;
  }
  const OnlineClassifier& model = ensemble.model(*selected);
  GenerationResult gen =
      generate_adversarial(a_true, model, model.predict(a_true), *pilot, cfg);
  if (!gen.feasible) {
    out.skip_reason = gen.reason;
    return out;
  }
  out.attempted = true;
  out.selected_model = static_cast<int>(*selected);
  out.selected_accuracy = ensemble.internal_accuracy(*selected);
  out.perturbation = gen.perturbation;
  out.surrogate_flip_ok = true;  // re-verified on the projected point
  for (std::size_t j = 0; j < a_true.size(); ++j) out.submitted[j] = a_true[j] + gen.perturbation[j];
  return out;
}

inline double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace specsim
