#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "specsim/common.hpp"
#include "specsim/rng.hpp"

namespace specsim {

struct Sample {
  std::vector<double> features;
  int label = kChannelBusy;
};

struct Hyperplane {
  std::vector<double> weights;
  double bias = 0.0;
};

enum class ClassifierKind {
  MultinomialNB,
  Perceptron,
  SgdHinge,
  PassiveAggressiveI,
  PassiveAggressiveII,
  Mlp,
};

inline const char* kind_name(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::MultinomialNB: return "multinomial_nb";
    case ClassifierKind::Perceptron: return "perceptron";
    case ClassifierKind::SgdHinge: return "sgd_hinge";
    case ClassifierKind::PassiveAggressiveI: return "pa1";
    case ClassifierKind::PassiveAggressiveII: return "pa2";
    case ClassifierKind::Mlp: return "mlp";
  }
  return "?";
}

inline constexpr int kSnapshotVersion = 1;

// Incrementally trainable binary classifier over fixed-width feature vectors.
// predict() never mutates state; fit_one() applies one online update.
class OnlineClassifier {
 public:
  virtual ~OnlineClassifier() = default;
  virtual const char* name() const = 0;
  virtual int dim() const = 0;
  virtual long updates_seen() const = 0;
  virtual int predict(const std::vector<double>& features) const = 0;
  virtual void fit_one(const Sample& sample) = 0;
  // Current (w, b) for linear kinds; nullopt where no hyperplane exists.
  virtual std::optional<Hyperplane> hyperplane() const { return std::nullopt; }
  virtual nlohmann::json snapshot() const = 0;
  virtual std::unique_ptr<OnlineClassifier> clone() const = 0;
};

namespace detail {

inline void check_features(const std::vector<double>& x, int dim) {
  if (static_cast<int>(x.size()) != dim) throw ParameterError("feature dimension mismatch");
  for (double v : x)
    if (!std::isfinite(v)) throw ParameterError("non-finite feature value");
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

// Shared state for the linear kinds. All of them use bias augmentation: the
// update treats [w; b] jointly with a constant-1 feature, so norms include b.
class LinearClassifierBase : public OnlineClassifier {
 public:
  explicit LinearClassifierBase(int dim) : weights_(dim, 0.0) {}

  int dim() const override { return static_cast<int>(weights_.size()); }
  long updates_seen() const override { return updates_seen_; }

  int predict(const std::vector<double>& x) const override {
    detail::check_features(x, dim());
    return sign_pm(detail::dot(weights_, x) + bias_);
  }

  std::optional<Hyperplane> hyperplane() const override {
    return Hyperplane{weights_, bias_};
  }

  nlohmann::json snapshot() const override {
    return {{"format_version", kSnapshotVersion},
            {"kind", name()},
            {"dim", dim()},
            {"weights", weights_},
            {"bias", bias_},
            {"updates_seen", updates_seen_}};
  }

 protected:
  double margin(const std::vector<double>& x) const { return detail::dot(weights_, x) + bias_; }

  void add_scaled(const std::vector<double>& x, double step) {
    for (std::size_t i = 0; i < weights_.size(); ++i) weights_[i] += step * x[i];
    bias_ += step;  // constant-1 augmented coordinate
  }

  void load_linear(const nlohmann::json& j) {
    weights_ = j.at("weights").get<std::vector<double>>();
    bias_ = j.at("bias").get<double>();
    updates_seen_ = j.at("updates_seen").get<long>();
  }

  std::vector<double> weights_;
  double bias_ = 0.0;
  long updates_seen_ = 0;
};

// Mistake-driven perceptron with unit learning rate.
class PerceptronClassifier final : public LinearClassifierBase {
 public:
  using LinearClassifierBase::LinearClassifierBase;
  const char* name() const override { return kind_name(ClassifierKind::Perceptron); }

  void fit_one(const Sample& s) override {
    detail::check_features(s.features, dim());
    if (predict(s.features) != s.label) {
      for (std::size_t i = 0; i < weights_.size(); ++i) weights_[i] += s.label * s.features[i];
      bias_ += s.label;
    }
    ++updates_seen_;
  }

  std::unique_ptr<OnlineClassifier> clone() const override {
    return std::make_unique<PerceptronClassifier>(*this);
  }

  static std::unique_ptr<PerceptronClassifier> restore(const nlohmann::json& j) {
    auto m = std::make_unique<PerceptronClassifier>(j.at("dim").get<int>());
    m->load_linear(j);
    return m;
  }
};

// Hinge-loss SGD with schedule eta_t = 1 / (lambda * (t + t0)); the weight
// decay applies only on margin-violating steps.
class SgdHingeClassifier final : public LinearClassifierBase {
 public:
  explicit SgdHingeClassifier(int dim, double lambda = 1e-4, double t0 = 1.0)
      : LinearClassifierBase(dim), lambda_(lambda), t0_(t0) {}

  const char* name() const override { return kind_name(ClassifierKind::SgdHinge); }

  void fit_one(const Sample& s) override {
    detail::check_features(s.features, dim());
    double eta = 1.0 / (lambda_ * (static_cast<double>(updates_seen_) + t0_));
    if (s.label * margin(s.features) < 1.0) {
      double keep = 1.0 - lambda_ * eta;
      for (std::size_t i = 0; i < weights_.size(); ++i)
        weights_[i] = keep * weights_[i] + eta * s.label * s.features[i];
      bias_ = keep * bias_ + eta * s.label;
    }
    ++updates_seen_;
  }

  std::unique_ptr<OnlineClassifier> clone() const override {
    return std::make_unique<SgdHingeClassifier>(*this);
  }

  nlohmann::json snapshot() const override {
    nlohmann::json j = LinearClassifierBase::snapshot();
    j["lambda"] = lambda_;
    j["t0"] = t0_;
    return j;
  }

  static std::unique_ptr<SgdHingeClassifier> restore(const nlohmann::json& j) {
    auto m = std::make_unique<SgdHingeClassifier>(j.at("dim").get<int>(), j.at("lambda").get<double>(),
                                                  j.at("t0").get<double>());
    m->load_linear(j);
    return m;
  }

 private:
  double lambda_;
  double t0_;
};

// Passive-aggressive updates with hinge loss over the bias-augmented vector:
// PA-I uses tau = min(C, loss/||x~||^2), PA-II tau = loss/(||x~||^2 + 1/(2C)).
class PassiveAggressiveClassifier final : public LinearClassifierBase {
 public:
  PassiveAggressiveClassifier(int dim, bool variant_two, double aggressiveness = 1.0)
      : LinearClassifierBase(dim), variant_two_(variant_two), c_(aggressiveness) {}

  const char* name() const override {
    return kind_name(variant_two_ ? ClassifierKind::PassiveAggressiveII
                                  : ClassifierKind::PassiveAggressiveI);
  }

  void fit_one(const Sample& s) override {
    detail::check_features(s.features, dim());
    double loss = std::max(0.0, 1.0 - s.label * margin(s.features));
    if (loss > 0.0) {
      double sq_norm = detail::dot(s.features, s.features) + 1.0;
      double tau = variant_two_ ? loss / (sq_norm + 1.0 / (2.0 * c_))
                                : std::min(c_, loss / sq_norm);
      for (std::size_t i = 0; i < weights_.size(); ++i)
        weights_[i] += tau * s.label * s.features[i];
      bias_ += tau * s.label;
    }
    ++updates_seen_;
  }

  std::unique_ptr<OnlineClassifier> clone() const override {
    return std::make_unique<PassiveAggressiveClassifier>(*this);
  }

  nlohmann::json snapshot() const override {
    nlohmann::json j = LinearClassifierBase::snapshot();
    j["aggressiveness"] = c_;
    return j;
  }

  static std::unique_ptr<PassiveAggressiveClassifier> restore(const nlohmann::json& j) {
    bool two = j.at("kind").get<std::string>() == kind_name(ClassifierKind::PassiveAggressiveII);
    auto m = std::make_unique<PassiveAggressiveClassifier>(j.at("dim").get<int>(), two,
                                                           j.at("aggressiveness").get<double>());
    m->load_linear(j);
    return m;
  }

 private:
  bool variant_two_;
  double c_;
};

// Multinomial naive Bayes over equal-width bins of the feasible range,
// Laplace smoothing 1. Ties and the untrained model resolve to +1.
class MultinomialNbClassifier final : public OnlineClassifier {
 public:
  explicit MultinomialNbClassifier(int dim, int bins = 16, double lo = kGlobalMinDbm,
                                   double hi = kGlobalMaxDbm)
      : dim_(dim), bins_(bins), lo_(lo), hi_(hi),
        counts_(2, std::vector<long>(static_cast<std::size_t>(dim) * bins, 0)) {}

  const char* name() const override { return kind_name(ClassifierKind::MultinomialNB); }
  int dim() const override { return dim_; }
  long updates_seen() const override { return updates_seen_; }

  int bin_index(double v) const {
    double t = (v - lo_) / (hi_ - lo_) * bins_;
    long b = static_cast<long>(std::floor(t));
    return static_cast<int>(std::clamp<long>(b, 0, bins_ - 1));
  }

  int predict(const std::vector<double>& x) const override {
    detail::check_features(x, dim_);
    double total = static_cast<double>(class_counts_[0] + class_counts_[1]);
    double log_odds = std::log((class_counts_[1] + 1.0) / (total + 2.0)) -
                      std::log((class_counts_[0] + 1.0) / (total + 2.0));
    for (int j = 0; j < dim_; ++j) {
      int b = bin_index(x[j]);
      double pos = (counts_[1][j * bins_ + b] + 1.0) / (class_counts_[1] + static_cast<double>(bins_));
      double neg = (counts_[0][j * bins_ + b] + 1.0) / (class_counts_[0] + static_cast<double>(bins_));
      log_odds += std::log(pos) - std::log(neg);
    }
    return sign_pm(log_odds);
  }

  void fit_one(const Sample& s) override {
    detail::check_features(s.features, dim_);
    if (!is_label(s.label)) throw ParameterError("label must be -1 or +1");
    int c = s.label == kChannelBusy ? 1 : 0;
    for (int j = 0; j < dim_; ++j) ++counts_[c][j * bins_ + bin_index(s.features[j])];
    ++class_counts_[c];
    ++updates_seen_;
  }

  long class_count(int label) const { return class_counts_[label == kChannelBusy ? 1 : 0]; }

  nlohmann::json snapshot() const override {
    return {{"format_version", kSnapshotVersion},
            {"kind", name()},
            {"dim", dim_},
            {"bins", bins_},
            {"lo", lo_},
            {"hi", hi_},
            {"counts_neg", counts_[0]},
            {"counts_pos", counts_[1]},
            {"class_counts", class_counts_},
            {"updates_seen", updates_seen_}};
  }

  std::unique_ptr<OnlineClassifier> clone() const override {
    return std::make_unique<MultinomialNbClassifier>(*this);
  }

  static std::unique_ptr<MultinomialNbClassifier> restore(const nlohmann::json& j) {
    auto m = std::make_unique<MultinomialNbClassifier>(j.at("dim").get<int>(), j.at("bins").get<int>(),
                                                       j.at("lo").get<double>(), j.at("hi").get<double>());
    m->counts_[0] = j.at("counts_neg").get<std::vector<long>>();
    m->counts_[1] = j.at("counts_pos").get<std::vector<long>>();
    auto cc = j.at("class_counts").get<std::vector<long>>();
    m->class_counts_[0] = cc.at(0);
    m->class_counts_[1] = cc.at(1);
    m->updates_seen_ = j.at("updates_seen").get<long>();
    return m;
  }

 private:
  int dim_;
  int bins_;
  double lo_, hi_;
  std::vector<std::vector<long>> counts_;  // [class][feature * bins + bin]
  std::vector<long> class_counts_{0, 0};
  long updates_seen_ = 0;
};

// One hidden layer of tanh units and a logistic output, trained with single
// SGD steps on the log loss. Weights start uniform in [-0.1, 0.1] from the
// seeded stream, so identical seeds give identical models.
class MlpClassifier final : public OnlineClassifier {
 public:
  explicit MlpClassifier(int dim, std::uint64_t seed, int hidden = 8, double lr = 0.05)
      : dim_(dim), hidden_(hidden), lr_(lr), w1_(static_cast<std::size_t>(hidden) * dim),
        b1_(hidden, 0.0), w2_(hidden, 0.0) {
    Rng rng(derive_seed(seed, fnv1a64("mlp")));
    for (double& w : w1_) w = rng.uniform(-0.1, 0.1);
    for (double& w : b1_) w = rng.uniform(-0.1, 0.1);
    for (double& w : w2_) w = rng.uniform(-0.1, 0.1);
    b2_ = rng.uniform(-0.1, 0.1);
  }

  const char* name() const override { return kind_name(ClassifierKind::Mlp); }
  int dim() const override { return dim_; }
  long updates_seen() const override { return updates_seen_; }

  int predict(const std::vector<double>& x) const override {
    detail::check_features(x, dim_);
    return sign_pm(output_logit(x, nullptr));
  }

  void fit_one(const Sample& s) override {
    detail::check_features(s.features, dim_);
    std::vector<double> h(hidden_);
    double z = output_logit(s.features, &h);
    double p = 1.0 / (1.0 + std::exp(-z));
    double target = s.label == kChannelBusy ? 1.0 : 0.0;
    double dz = p - target;
    for (int k = 0; k < hidden_; ++k) {
      double dh = w2_[k] * dz * (1.0 - h[k] * h[k]);
      w2_[k] -= lr_ * dz * h[k];
      for (int j = 0; j < dim_; ++j) w1_[k * dim_ + j] -= lr_ * dh * s.features[j];
      b1_[k] -= lr_ * dh;
    }
    b2_ -= lr_ * dz;
    ++updates_seen_;
  }

  nlohmann::json snapshot() const override {
    return {{"format_version", kSnapshotVersion},
            {"kind", name()},
            {"dim", dim_},
            {"hidden", hidden_},
            {"lr", lr_},
            {"w1", w1_},
            {"b1", b1_},
            {"w2", w2_},
            {"b2", b2_},
            {"updates_seen", updates_seen_}};
  }

  std::unique_ptr<OnlineClassifier> clone() const override {
    return std::make_unique<MlpClassifier>(*this);
  }

  static std::unique_ptr<MlpClassifier> restore(const nlohmann::json& j) {
    auto m = std::make_unique<MlpClassifier>(j.at("dim").get<int>(), 0, j.at("hidden").get<int>(),
                                             j.at("lr").get<double>());
    m->w1_ = j.at("w1").get<std::vector<double>>();
    m->b1_ = j.at("b1").get<std::vector<double>>();
    m->w2_ = j.at("w2").get<std::vector<double>>();
    m->b2_ = j.at("b2").get<double>();
    m->updates_seen_ = j.at("updates_seen").get<long>();
    return m;
  }

 private:
  double output_logit(const std::vector<double>& x, std::vector<double>* h_out) const {
    double z = b2_;
    for (int k = 0; k < hidden_; ++k) {
      double a = b1_[k];
      for (int j = 0; j < dim_; ++j) a += w1_[k * dim_ + j] * x[j];
      double h = std::tanh(a);
      if (h_out) (*h_out)[k] = h;
      z += w2_[k] * h;
    }
    return z;
  }

  int dim_;
  int hidden_;
  double lr_;
  std::vector<double> w1_;  // [hidden][dim]
  std::vector<double> b1_;
  std::vector<double> w2_;
  double b2_ = 0.0;
  long updates_seen_ = 0;
};

// Plain logistic regression trained by SGD; linear in the inputs, so it
// exposes a hyperplane. Used as a fusion-rule core, not as a sub-model kind.
class LogisticSgdClassifier final : public LinearClassifierBase {
 public:
  explicit LogisticSgdClassifier(int dim, double lr = 0.05)
      : LinearClassifierBase(dim), lr_(lr) {}

  const char* name() const override { return "logistic_sgd"; }

  nlohmann::json snapshot() const override {
    nlohmann::json j = LinearClassifierBase::snapshot();
    j["lr"] = lr_;
    return j;
  }

  void fit_one(const Sample& s) override {
    detail::check_features(s.features, dim());
    double p = 1.0 / (1.0 + std::exp(-margin(s.features)));
    double target = s.label == kChannelBusy ? 1.0 : 0.0;
    add_scaled(s.features, -lr_ * (p - target));
    ++updates_seen_;
  }

  std::unique_ptr<OnlineClassifier> clone() const override {
    return std::make_unique<LogisticSgdClassifier>(*this);
  }

  static std::unique_ptr<LogisticSgdClassifier> restore(const nlohmann::json& j) {
    auto m = std::make_unique<LogisticSgdClassifier>(j.at("dim").get<int>(), j.at("lr").get<double>());
    m->load_linear(j);
    return m;
  }

 private:
  double lr_;
};

inline std::unique_ptr<OnlineClassifier> make_classifier(ClassifierKind kind, int dim,
                                                         std::uint64_t seed = 0) {
  switch (kind) {
    case ClassifierKind::MultinomialNB: return std::make_unique<MultinomialNbClassifier>(dim);
    case ClassifierKind::Perceptron: return std::make_unique<PerceptronClassifier>(dim);
    case ClassifierKind::SgdHinge: return std::make_unique<SgdHingeClassifier>(dim);
    case ClassifierKind::PassiveAggressiveI:
      return std::make_unique<PassiveAggressiveClassifier>(dim, false);
    case ClassifierKind::PassiveAggressiveII:
      return std::make_unique<PassiveAggressiveClassifier>(dim, true);
    case ClassifierKind::Mlp: return std::make_unique<MlpClassifier>(dim, seed);
  }
  throw ParameterError("unknown classifier kind");
}

inline std::unique_ptr<OnlineClassifier> restore_classifier(const nlohmann::json& j) {
  if (j.at("format_version").get<int>() != kSnapshotVersion)
    throw FormatError("unsupported classifier snapshot version");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == kind_name(ClassifierKind::MultinomialNB)) return MultinomialNbClassifier::restore(j);
  if (kind == kind_name(ClassifierKind::Perceptron)) return PerceptronClassifier::restore(j);
  if (kind == kind_name(ClassifierKind::SgdHinge)) return SgdHingeClassifier::restore(j);
  if (kind == kind_name(ClassifierKind::PassiveAggressiveI) ||
      kind == kind_name(ClassifierKind::PassiveAggressiveII))
    return PassiveAggressiveClassifier::restore(j);
  if (kind == kind_name(ClassifierKind::Mlp)) return MlpClassifier::restore(j);
  if (kind == "logistic_sgd") return LogisticSgdClassifier::restore(j);
  throw FormatError("unknown classifier kind in snapshot: " + kind);
}

}  // namespace specsim
