#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <vector>

#include "specsim/common.hpp"
#include "specsim/fusion.hpp"

namespace specsim {

struct PolicyParams {
  double c1 = 0.6;   // cost control
  double c2 = 0.08;  // drift (K-S) control
  int eta = 4;       // largest subset size examined
  int window = 64;   // W_inf, estimation window
  int cadence = 16;  // slots between policy re-evaluations

  void validate(int n) const {
    if (!(c1 > 0.0)) throw ParameterError("c1 must be positive");
    if (c2 < 0.0) throw ParameterError("c2 must be >= 0");
    if (eta < 1 || eta > n) throw ParameterError("eta must lie in [1, n]");
    if (window < 1) throw ParameterError("window must be >= 1");
    if (cadence < 1) throw ParameterError("cadence must be >= 1");
  }
};

// Two-sample Kolmogorov-Smirnov statistic: sup over sample points of the
// absolute difference between the two empirical CDFs. train must be sorted.
inline double ks_statistic(const std::vector<double>& train_sorted, std::vector<double> current) {
  if (train_sorted.empty() || current.empty())
    throw ParameterError("ks_statistic requires nonempty samples");
  std::sort(current.begin(), current.end());
  const double p = static_cast<double>(train_sorted.size());
  const double q = static_cast<double>(current.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < train_sorted.size() && j < current.size()) {
    double v = std::min(train_sorted[i], current[j]);
    while (i < train_sorted.size() && train_sorted[i] <= v) ++i;
    while (j < current.size() && current[j] <= v) ++j;
    d = std::max(d, std::fabs(static_cast<double>(i) / p - static_cast<double>(j) / q));
  }
  return d;
}

inline constexpr double kDeltaFloor = 1e-4;

// Drift-aware sigmoid threshold on minority subsets, clamped into the open
// unit interval.
inline double influence_threshold(const PolicyParams& params, int subset_size, double ks_sum,
                                  int n) {
  if (subset_size < 1 || 2 * subset_size > n)
    throw ParameterError("threshold defined for subset sizes in [1, n/2]");
  if (ks_sum < 0.0) throw ParameterError("ks_sum must be >= 0");
  double raw = 1.0 / (1.0 + std::exp(-params.c1 * (subset_size - 0.5 * n))) - params.c2 * ks_sum;
  return std::max(kDeltaFloor, std::min(1.0 - kDeltaFloor, raw));
}

struct InfluenceEstimate {
  std::vector<int> subset;
  long flips = 0;
  long window_len = 0;
  double value = 0.0;
};

namespace influence_detail {

inline void validate_subset(const std::vector<int>& subset, int n) {
  if (subset.empty()) throw ParameterError("subset must be nonempty");
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (subset[i] < 0 || subset[i] >= n) throw ParameterError("subset node id out of range");
    if (i > 0 && subset[i] <= subset[i - 1])
      throw ParameterError("subset must be sorted and duplicate-free");
  }
}

template <typename Fn>
inline void for_each_subset(int n, int k_max, Fn&& fn) {
  std::vector<int> idx;
  for (int k = 1; k <= k_max; ++k) {
    idx.resize(k);
    for (int i = 0; i < k; ++i) idx[i] = i;
    while (true) {
      fn(idx);
      int pos = k - 1;
      while (pos >= 0 && idx[pos] == n - k + pos) --pos;
      if (pos < 0) break;
      ++idx[pos];
      for (int i = pos + 1; i < k; ++i) idx[i] = idx[i - 1] + 1;
    }
  }
}

}  // namespace influence_detail

// Decision-flipping influence of a node subset: the fraction of windowed
// slots whose decision changes when the subset's entries are replaced by the
// feasible maximum or minimum. decide_cf must be a pure decision function.
inline InfluenceEstimate estimate_influence(
    const std::vector<int>& subset, const std::deque<std::vector<double>>& window,
    const std::function<int(const std::vector<double>&)>& decide_cf, double bound_min,
    double bound_max) {
  if (window.empty()) throw ParameterError("influence estimation needs a nonempty window");
  influence_detail::validate_subset(subset, static_cast<int>(window.front().size()));
  InfluenceEstimate est;
  est.subset = subset;
  est.window_len = static_cast<long>(window.size());
  for (const auto& x : window) {
    int y0 = decide_cf(x);
    std::vector<double> hi = x, lo = x;
    for (int j : subset) {
      hi[j] = bound_max;
      lo[j] = bound_min;
    }
    if (decide_cf(hi) != y0 || decide_cf(lo) != y0) ++est.flips;
  }
  est.value = static_cast<double>(est.flips) / static_cast<double>(est.window_len);
  return est;
}

struct WeightCaps {
  std::vector<double> caps;                     // multiplicative, in (0, 1]
  std::vector<std::vector<int>> provenance;     // subset that set each node's cap

  explicit WeightCaps(int n = 0) : caps(n, 1.0), provenance(n) {}
};

struct SubsetAudit {
  std::vector<int> subset;
  double influence = 0.0;
  double delta = 0.0;
  bool capped = false;
  double scale = 1.0;
};

struct EnforceResult {
  WeightCaps caps;
  std::vector<SubsetAudit> audits;   // one entry per violating subset
  long subsets_evaluated = 0;
};

namespace influence_detail {

// Applies the mass rule for one violating subset: scale members uniformly so
// the subset's share of total weight equals delta. Never raises weights.
inline void apply_cap(const std::vector<int>& subset, double influence, double delta,
                      const WeightVector& weights, double total_weight, EnforceResult& out) {
  double mass = 0.0;
  for (int j : subset) mass += weights[j];
  double rest = total_weight - mass;
  double scale = delta * rest / (mass * (1.0 - delta));
  SubsetAudit audit{subset, influence, delta, false, 1.0};
  if (scale < 1.0) {
    audit.capped = true;
    audit.scale = scale;
    for (int j : subset) {
      if (scale < out.caps.caps[j]) {
        out.caps.caps[j] = scale;
        out.caps.provenance[j] = subset;
      }
    }
  }
  out.audits.push_back(std::move(audit));
}

}  // namespace influence_detail

// Reference enforcement over a generic counterfactual decision function.
// Evaluates every subset up to min(eta, n/2) in increasing size order.
inline EnforceResult enforce(const PolicyParams& params, const std::vector<double>& nodes_ks,
                             const std::deque<std::vector<double>>& window,
                             const std::function<int(const std::vector<double>&)>& decide_cf,
                             const WeightVector& current_weights, double bound_min = kGlobalMinDbm,
                             double bound_max = kGlobalMaxDbm) {
  const int n = static_cast<int>(current_weights.size());
  params.validate(n);
  EnforceResult out;
  out.caps = WeightCaps(n);
  double total = 0.0;
  for (double w : current_weights) total += w;
  const int k_max = std::min(params.eta, n / 2);
  influence_detail::for_each_subset(n, k_max, [&](const std::vector<int>& subset) {
    ++out.subsets_evaluated;
    InfluenceEstimate est = estimate_influence(subset, window, decide_cf, bound_min, bound_max);
    double ks_sum = 0.0;
    for (int j : subset) ks_sum += nodes_ks[j];
    double delta = influence_threshold(params, static_cast<int>(subset.size()), ks_sum, n);
    if (est.value >= delta)
      influence_detail::apply_cap(subset, est.value, delta, current_weights, total, out);
  });
  return out;
}

// Precomputed per-slot tables that evaluate a subset substitution in O(|S|)
// per slot instead of re-running the fusion pipeline. Exact for every rule:
// the substituted decision is an affine update of the slot's base statistic.
class InfluenceTables {
 public:
  InfluenceTables(const FusionState& st, const WeightVector& weights,
                  const std::deque<std::vector<double>>& window, double bound_min,
                  double bound_max)
      : n_(st.n), rule_(st.cfg.rule), window_len_(static_cast<long>(window.size())) {
    if (window.empty()) throw ParameterError("influence estimation needs a nonempty window");
    const long w_count = window_len_;
    switch (rule_) {
      case FusionRuleKind::LinearSvm:
      case FusionRuleKind::LogisticRegression: {
        auto hp = st.rule_model->hyperplane();
        if (!hp) throw StateError("trained rule without hyperplane");
        base_.resize(w_count);
        delta_hi_.resize(static_cast<std::size_t>(w_count) * n_);
        delta_lo_.resize(static_cast<std::size_t>(w_count) * n_);
        for (long s = 0; s < w_count; ++s) {
          const auto& x = window[s];
          double score = hp->bias;
          for (int j = 0; j < n_; ++j) {
            double f = weights[j] * x[j] + (1.0 - weights[j]) * st.theta[j];
            score += hp->weights[j] * (f - st.feat_mean[j]) / st.feat_std[j];
            double q = hp->weights[j] * weights[j] / st.feat_std[j];
            delta_hi_[s * n_ + j] = q * (bound_max - x[j]);
            delta_lo_[s * n_ + j] = q * (bound_min - x[j]);
          }
          base_[s] = score;
        }
        break;
      }
      case FusionRuleKind::Majority: {
        base_.resize(w_count);
        member_term_.resize(static_cast<std::size_t>(w_count) * n_);
        weight_ = weights;
        vote_hi_.resize(n_);
        vote_lo_.resize(n_);
        for (int j = 0; j < n_; ++j) {
          vote_hi_[j] = sign_pm(bound_max - st.theta[j]);
          vote_lo_[j] = sign_pm(bound_min - st.theta[j]);
        }
        for (long s = 0; s < w_count; ++s) {
          const auto& x = window[s];
          double sum = 0.0;
          for (int j = 0; j < n_; ++j) {
            double term = weights[j] * sign_pm(x[j] - st.theta[j]);
            member_term_[s * n_ + j] = term;
            sum += term;
          }
          base_[s] = sum;
        }
        break;
      }
      case FusionRuleKind::And:
      case FusionRuleKind::Or: {
        active_.resize(n_);
        for (int j = 0; j < n_; ++j) active_[j] = weights[j] >= 0.5 ? 1 : 0;
        vote_hi_.resize(n_);
        vote_lo_.resize(n_);
        for (int j = 0; j < n_; ++j) {
          vote_hi_[j] = sign_pm(bound_max - st.theta[j]);
          vote_lo_[j] = sign_pm(bound_min - st.theta[j]);
        }
        base_.resize(w_count);
        member_term_.resize(static_cast<std::size_t>(w_count) * n_);
        const int hit_vote = rule_ == FusionRuleKind::And ? kChannelFree : kChannelBusy;
        for (long s = 0; s < w_count; ++s) {
          const auto& x = window[s];
          double count = 0.0;  // And: active dissenters; Or: active assenters
          for (int j = 0; j < n_; ++j) {
            double hit = (active_[j] && sign_pm(x[j] - st.theta[j]) == hit_vote) ? 1.0 : 0.0;
            member_term_[s * n_ + j] = hit;
            count += hit;
          }
          base_[s] = count;
        }
        break;
      }
    }
  }

  long window_len() const { return window_len_; }

  InfluenceEstimate estimate(const std::vector<int>& subset) const {
    influence_detail::validate_subset(subset, n_);
    InfluenceEstimate est;
    est.subset = subset;
    est.window_len = window_len_;
    for (long s = 0; s < window_len_; ++s)
      if (slot_flips(subset, s)) ++est.flips;
    est.value = static_cast<double>(est.flips) / static_cast<double>(window_len_);
    return est;
  }

 private:
  bool slot_flips(const std::vector<int>& subset, long s) const {
    switch (rule_) {
      case FusionRuleKind::LinearSvm:
      case FusionRuleKind::LogisticRegression: {
        double d_hi = 0.0, d_lo = 0.0;
        for (int j : subset) {
          d_hi += delta_hi_[s * n_ + j];
          d_lo += delta_lo_[s * n_ + j];
        }
        int y0 = sign_pm(base_[s]);
        return sign_pm(base_[s] + d_hi) != y0 || sign_pm(base_[s] + d_lo) != y0;
      }
      case FusionRuleKind::Majority: {
        double removed = 0.0, add_hi = 0.0, add_lo = 0.0;
        for (int j : subset) {
          removed += member_term_[s * n_ + j];
          add_hi += weight_[j] * vote_hi_[j];
          add_lo += weight_[j] * vote_lo_[j];
        }
        int y0 = sign_pm(base_[s]);
        return sign_pm(base_[s] - removed + add_hi) != y0 ||
               sign_pm(base_[s] - removed + add_lo) != y0;
      }
      case FusionRuleKind::And:
      case FusionRuleKind::Or: {
        const int hit_vote = rule_ == FusionRuleKind::And ? kChannelFree : kChannelBusy;
        double removed = 0.0, add_hi = 0.0, add_lo = 0.0;
        for (int j : subset) {
          removed += member_term_[s * n_ + j];
          if (active_[j] && vote_hi_[j] == hit_vote) add_hi += 1.0;
          if (active_[j] && vote_lo_[j] == hit_vote) add_lo += 1.0;
        }
        auto decision = [&](double count) {
          bool any_hit = count > 0.5;
          if (rule_ == FusionRuleKind::And) return any_hit ? kChannelFree : kChannelBusy;
          return any_hit ? kChannelBusy : kChannelFree;
        };
        int y0 = decision(base_[s]);
        return decision(base_[s] - removed + add_hi) != y0 ||
               decision(base_[s] - removed + add_lo) != y0;
      }
    }
    return false;
  }

  int n_;
  FusionRuleKind rule_;
  long window_len_;
  std::vector<double> base_;
  std::vector<double> delta_hi_, delta_lo_;  // trained rules
  std::vector<double> member_term_;          // majority / and / or
  std::vector<double> weight_;
  std::vector<int> vote_hi_, vote_lo_;
  std::vector<int> active_;
};

// Stateful policy layer the harness drives: it watches submitted reports,
// refreshes per-node K-S drift statistics, and on each cadence recomputes
// weight caps from scratch against the frozen fusion state.
class InfluencePolicy {
 public:
  InfluencePolicy(const PolicyParams& params, int n,
                  std::vector<std::vector<double>> train_sorted, double bound_min = kGlobalMinDbm,
                  double bound_max = kGlobalMaxDbm)
      : params_(params), n_(n), train_sorted_(std::move(train_sorted)), d_ks_(n, 0.0),
        bound_min_(bound_min), bound_max_(bound_max) {
    params_.validate(n);
    if (static_cast<int>(train_sorted_.size()) != n)
      throw ParameterError("training distributions must cover every node");
  }

  const PolicyParams& params() const { return params_; }
  const std::vector<double>& node_ks() const { return d_ks_; }
  const std::deque<std::vector<double>>& window() const { return window_; }

  void observe(const std::vector<double>& submitted) {
    window_.push_back(submitted);
    while (static_cast<int>(window_.size()) > params_.window) window_.pop_front();
    ++observed_;
  }

  bool due() const { return observed_ > 0 && observed_ % params_.cadence == 0; }

  // Recompute d_ks per node against the stored training distribution; short
  // windows leave the previous values in place.
  void refresh_ks() {
    if (static_cast<int>(window_.size()) < 8) return;
    std::vector<double> col(window_.size());
    for (int j = 0; j < n_; ++j) {
      for (std::size_t t = 0; t < window_.size(); ++t) col[t] = window_[t][j];
      d_ks_[j] = ks_statistic(train_sorted_[j], col);
    }
  }

  // Fresh cap computation against the uncapped defense weights: subsets are
  // processed in increasing size order and each node keeps the smallest cap
  // any violating subset imposes on it.
  EnforceResult enforce_caps(const FusionState& st) const {
    const WeightVector& weights = st.current_weights;
    EnforceResult out;
    out.caps = WeightCaps(n_);
    if (window_.empty()) return out;
    InfluenceTables tables(st, weights, window_, bound_min_, bound_max_);
    double total = 0.0;
    for (double w : weights) total += w;
    const int k_max = std::min(params_.eta, n_ / 2);
    influence_detail::for_each_subset(n_, k_max, [&](const std::vector<int>& subset) {
      ++out.subsets_evaluated;
      InfluenceEstimate est = tables.estimate(subset);
      double ks_sum = 0.0;
      for (int j : subset) ks_sum += d_ks_[j];
      double delta = influence_threshold(params_, static_cast<int>(subset.size()), ks_sum, n_);
      if (est.value >= delta)
        influence_detail::apply_cap(subset, est.value, delta, weights, total, out);
    });
    return out;
  }

 private:
  PolicyParams params_;
  int n_;
  std::vector<std::vector<double>> train_sorted_;
  std::vector<double> d_ks_;
  std::deque<std::vector<double>> window_;
  long observed_ = 0;
  double bound_min_, bound_max_;
};

}  // namespace specsim
