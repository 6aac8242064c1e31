#pragma once

#include <array>
#include <deque>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "specsim/common.hpp"
#include "specsim/learners.hpp"
#include "specsim/linalg.hpp"
#include "specsim/trace.hpp"

namespace specsim {

enum class DefenseKind { Outlier, Lof, EmpCov, RobCov, FzKnn, Dsnd, OcSvm, Trust, None };
enum class FusionRuleKind { LinearSvm, LogisticRegression, And, Or, Majority };

inline const char* defense_name(DefenseKind d) {
  switch (d) {
    case DefenseKind::Outlier: return "outlier";
    case DefenseKind::Lof: return "lof";
    case DefenseKind::EmpCov: return "empcov";
    case DefenseKind::RobCov: return "robcov";
    case DefenseKind::FzKnn: return "fzknn";
    case DefenseKind::Dsnd: return "dsnd";
    case DefenseKind::OcSvm: return "ocsvm";
    case DefenseKind::Trust: return "trust";
    case DefenseKind::None: return "none";
  }
  return "?";
}

inline DefenseKind parse_defense(const std::string& s) {
  for (DefenseKind d : {DefenseKind::Outlier, DefenseKind::Lof, DefenseKind::EmpCov,
                        DefenseKind::RobCov, DefenseKind::FzKnn, DefenseKind::Dsnd,
                        DefenseKind::OcSvm, DefenseKind::Trust, DefenseKind::None})
    if (s == defense_name(d)) return d;
  throw ParameterError("unknown defense: " + s);
}

inline const std::array<DefenseKind, 8>& all_defenses() {
  static const std::array<DefenseKind, 8> kAll = {
      DefenseKind::Outlier, DefenseKind::Lof, DefenseKind::EmpCov, DefenseKind::RobCov,
      DefenseKind::FzKnn,  DefenseKind::Dsnd, DefenseKind::OcSvm,  DefenseKind::Trust};
  return kAll;
}

inline const char* rule_name(FusionRuleKind r) {
  switch (r) {
    case FusionRuleKind::LinearSvm: return "linear_svm";
    case FusionRuleKind::LogisticRegression: return "logistic_regression";
    case FusionRuleKind::And: return "and";
    case FusionRuleKind::Or: return "or";
    case FusionRuleKind::Majority: return "majority";
  }
  return "?";
}

inline FusionRuleKind parse_rule(const std::string& s) {
  for (FusionRuleKind r : {FusionRuleKind::LinearSvm, FusionRuleKind::LogisticRegression,
                           FusionRuleKind::And, FusionRuleKind::Or, FusionRuleKind::Majority})
    if (s == rule_name(r)) return r;
  throw ParameterError("unknown fusion rule: " + s);
}

inline bool is_trained_rule(FusionRuleKind r) {
  return r == FusionRuleKind::LinearSvm || r == FusionRuleKind::LogisticRegression;
}

using SuspicionVector = std::vector<double>;  // per-node scores in [0, 1]
using WeightVector = std::vector<double>;     // per-node weights in (0, 1]

struct FusionConfig {
  DefenseKind defense = DefenseKind::None;
  FusionRuleKind rule = FusionRuleKind::Majority;
  int window_len = 64;        // W_def, history ring for window-based defenses
  double ewma_factor = 0.1;   // outlier z smoothing
  double ridge = 1e-3;        // covariance regularization
  int lof_k = 5;
  double trust_rho = 0.05;
  double weight_floor = 0.01;
  int training_passes = 3;    // online passes when fitting a trained rule
  std::uint64_t seed = 0;     // reserved for trained rules that need init noise
};

struct DecideResult {
  int decision = kChannelBusy;
  WeightVector weights;       // weights actually used (after policy caps)
  SuspicionVector suspicion;
};

// Calibrated decision pipeline: defense scoring -> re-weighting -> fusion.
// All mutation happens through decide(); the counterfactual path is pure.
class FusionState {
 public:
  FusionConfig cfg;
  int n = 0;
  bool calibrated = false;

  std::vector<double> theta;                      // per-node local vote thresholds
  std::vector<std::vector<double>> train_sorted;  // per-node sorted training samples

  // Defense statistics fitted at calibration time.
  std::vector<double> emp_mean, emp_chol;
  std::vector<double> rob_mean, rob_chol;
  std::vector<double> svdd_center;                // window-feature hypersphere
  double svdd_radius = 0.0;
  double dsnd_t_low = 0.0, dsnd_t_high = 0.0;

  // Trained fusion core (LinearSvm / LogisticRegression) over standardized
  // re-calibrated features; untouched after calibration.
  std::unique_ptr<OnlineClassifier> rule_model;
  std::vector<double> feat_mean, feat_std;

  // Evolving state.
  std::deque<std::vector<double>> window;         // last W_def raw report vectors
  std::vector<double> ewma_z;
  std::vector<double> trust;
  WeightVector current_weights;                   // last defense weights, before caps
  std::vector<double> caps;                       // multiplicative caps from the policy layer
  long slots_seen = 0;

  FusionState() = default;
  FusionState(FusionState&&) = default;
  FusionState& operator=(FusionState&&) = default;

  FusionState clone() const {
    FusionState c;
    c.cfg = cfg;
    c.n = n;
    c.calibrated = calibrated;
    c.theta = theta;
    c.train_sorted = train_sorted;
    c.emp_mean = emp_mean;
    c.emp_chol = emp_chol;
    c.rob_mean = rob_mean;
    c.rob_chol = rob_chol;
    c.svdd_center = svdd_center;
    c.svdd_radius = svdd_radius;
    c.dsnd_t_low = dsnd_t_low;
    c.dsnd_t_high = dsnd_t_high;
    if (rule_model) c.rule_model = rule_model->clone();
    c.feat_mean = feat_mean;
    c.feat_std = feat_std;
    c.window = window;
    c.ewma_z = ewma_z;
    c.trust = trust;
    c.current_weights = current_weights;
    c.caps = caps;
    c.slots_seen = slots_seen;
    return c;
  }

  WeightVector effective_weights() const {
    WeightVector w = current_weights;
    for (int j = 0; j < n; ++j) w[j] *= caps[j];
    return w;
  }

  bool any_cap_active() const {
    for (double c : caps)
      if (c < 1.0) return true;
    return false;
  }
};

namespace fusion_detail {

inline constexpr double kTiny = 1e-9;

// Per-node window profile: (mean, stddev, correlation with the slotwise
// cross-sectional median series).
inline std::vector<std::array<double, 3>> window_features(
    const std::deque<std::vector<double>>& window, int n) {
  const std::size_t w = window.size();
  std::vector<double> med_series(w);
  std::vector<double> scratch(n);
  for (std::size_t t = 0; t < w; ++t) {
    scratch.assign(window[t].begin(), window[t].end());
    med_series[t] = median_of(scratch);
  }
  std::vector<std::array<double, 3>> feats(n);
  std::vector<double> series(w);
  for (int j = 0; j < n; ++j) {
    double m = 0.0;
    for (std::size_t t = 0; t < w; ++t) {
      series[t] = window[t][j];
      m += series[t];
    }
    m /= static_cast<double>(w);
    double var = 0.0;
    for (std::size_t t = 0; t < w; ++t) var += (series[t] - m) * (series[t] - m);
    var /= static_cast<double>(w);
    feats[j] = {m, std::sqrt(var), pearson(series, med_series)};
  }
  return feats;
}

inline double feat_dist(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Classic LOF with k neighbors over the n window-feature points. Duplicate
// point clouds (all distances zero) yield LOF = 1, i.e. no outlier.
inline std::vector<double> lof_scores(const std::vector<std::array<double, 3>>& pts, int k) {
  const int n = static_cast<int>(pts.size());
  k = std::min(k, n - 1);
  if (k < 1) return std::vector<double>(n, 1.0);
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) dist[i][j] = dist[j][i] = feat_dist(pts[i], pts[j]);

  std::vector<std::vector<int>> neigh(n);
  std::vector<double> kdist(n);
  for (int i = 0; i < n; ++i) {
    std::vector<int> order;
    order.reserve(n - 1);
    for (int j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (dist[i][a] != dist[i][b]) return dist[i][a] < dist[i][b];
      return a < b;
    });
    order.resize(k);
    neigh[i] = std::move(order);
    kdist[i] = dist[i][neigh[i].back()];
  }
  std::vector<double> lrd(n);
  for (int i = 0; i < n; ++i) {
    double reach_sum = 0.0;
    for (int j : neigh[i]) reach_sum += std::max(kdist[j], dist[i][j]);
    lrd[i] = reach_sum > kTiny ? static_cast<double>(k) / reach_sum : -1.0;  // -1 marks infinite density
  }
  std::vector<double> lof(n);
  for (int i = 0; i < n; ++i) {
    if (lrd[i] < 0.0) {
      lof[i] = 1.0;  // duplicated point: as dense as its neighbors
      continue;
    }
    double s = 0.0;
    bool inf_neighbor = false;
    for (int j : neigh[i]) {
      if (lrd[j] < 0.0) {
        inf_neighbor = true;
        break;
      }
      s += lrd[j];
    }
    lof[i] = inf_neighbor ? 2.0 : s / (static_cast<double>(k) * lrd[i]);
  }
  return lof;
}

inline double squash(double raw, double cap) { return std::min(1.0, std::max(0.0, raw) / cap); }

}  // namespace fusion_detail

// --- calibration -----------------------------------------------------------

inline FusionState calibrate(const FusionConfig& cfg, const TraceDataset& ds) {
  const long train_len = ds.train_len;
  if (train_len <= 0 || train_len > ds.length()) throw CalibrationError("empty training prefix");
  const int n = ds.n_nodes;

  long busy = 0, free_cnt = 0;
  for (long i = 0; i < train_len; ++i)
    (ds.reports[i].truth == kChannelBusy ? busy : free_cnt)++;
  if (busy == 0 || free_cnt == 0)
    throw CalibrationError("training prefix must contain both channel states");

  FusionState st;
  st.cfg = cfg;
  st.n = n;

  // Local thresholds: midpoint of the class-conditional means per node.
  std::vector<double> mean_busy(n, 0.0), mean_free(n, 0.0);
  for (long i = 0; i < train_len; ++i) {
    const auto& r = ds.reports[i];
    auto& acc = (r.truth == kChannelBusy) ? mean_busy : mean_free;
    for (int j = 0; j < n; ++j) acc[j] += r.values[j];
  }
  st.theta.resize(n);
  for (int j = 0; j < n; ++j) {
    mean_busy[j] /= static_cast<double>(busy);
    mean_free[j] /= static_cast<double>(free_cnt);
    st.theta[j] = 0.5 * (mean_busy[j] + mean_free[j]);
  }

  // Per-node training distributions, sorted once for K-S and percentiles.
  st.train_sorted.assign(n, {});
  for (int j = 0; j < n; ++j) {
    st.train_sorted[j].reserve(train_len);
    for (long i = 0; i < train_len; ++i) st.train_sorted[j].push_back(ds.reports[i].values[j]);
    std::sort(st.train_sorted[j].begin(), st.train_sorted[j].end());
  }

  // Covariance whiteners.
  std::vector<const std::vector<double>*> rows;
  rows.reserve(train_len);
  for (long i = 0; i < train_len; ++i) rows.push_back(&ds.reports[i].values);
  std::vector<double> cov;
  fit_mean_cov(rows, n, cfg.ridge, st.emp_mean, cov);
  st.emp_chol = cholesky_lower(cov, n);

  // Robust variant: refit after iteratively trimming the largest-Mahalanobis
  // quarter of the rows, three rounds.
  {
    std::vector<const std::vector<double>*> kept = rows;
    std::vector<double> m, c, l;
    for (int round = 0; round < 3; ++round) {
      fit_mean_cov(kept, n, cfg.ridge, m, c);
      l = cholesky_lower(c, n);
      std::vector<std::pair<double, std::size_t>> scored(kept.size());
      for (std::size_t i = 0; i < kept.size(); ++i)
        scored[i] = {sq_mahalanobis(l, n, *kept[i], m), i};
      std::sort(scored.begin(), scored.end());
      std::size_t keep_count = std::max<std::size_t>(static_cast<std::size_t>(n) + 1,
                                                     kept.size() - kept.size() / 4);
      if (keep_count >= kept.size()) break;
      std::vector<const std::vector<double>*> next;
      next.reserve(keep_count);
      for (std::size_t i = 0; i < keep_count; ++i) next.push_back(kept[scored[i].second]);
      kept = std::move(next);
    }
    fit_mean_cov(kept, n, cfg.ridge, st.rob_mean, cov);
    st.rob_chol = cholesky_lower(cov, n);
  }

  // Window-feature population over non-overlapping training chunks feeds the
  // hypersphere boundary and the pairwise-distance percentiles.
  {
    const long w = std::min<long>(cfg.window_len, train_len);
    std::vector<std::array<double, 3>> pool;
    std::vector<double> pair_dists;
    std::deque<std::vector<double>> chunk;
    for (long start = 0; start + w <= train_len; start += w) {
      chunk.clear();
      for (long i = start; i < start + w; ++i) chunk.push_back(ds.reports[i].values);
      auto feats = fusion_detail::window_features(chunk, n);
      pool.insert(pool.end(), feats.begin(), feats.end());
      // Pairwise per-slot RMS distances between node histories in this chunk.
      for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b) {
          double s = 0.0;
          for (long i = start; i < start + w; ++i) {
            double d = ds.reports[i].values[a] - ds.reports[i].values[b];
            s += d * d;
          }
          pair_dists.push_back(std::sqrt(s / static_cast<double>(w)));
        }
    }
    st.svdd_center.resize(3);
    for (int c = 0; c < 3; ++c) {
      std::vector<double> coord(pool.size());
      for (std::size_t i = 0; i < pool.size(); ++i) coord[i] = pool[i][c];
      st.svdd_center[c] = median_of(std::move(coord));
    }
    std::vector<double> dists(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i)
      dists[i] = fusion_detail::feat_dist(pool[i], {st.svdd_center[0], st.svdd_center[1], st.svdd_center[2]});
    std::sort(dists.begin(), dists.end());
    st.svdd_radius = std::max(percentile_sorted(dists, 95.0), fusion_detail::kTiny);
    std::sort(pair_dists.begin(), pair_dists.end());
    st.dsnd_t_low = std::max(percentile_sorted(pair_dists, 5.0), fusion_detail::kTiny);
    st.dsnd_t_high = std::max(percentile_sorted(pair_dists, 95.0), fusion_detail::kTiny);
  }

  // Trained fusion core on the raw training pairs (weights are all 1 during
  // calibration, so the re-calibrated feature equals the raw report).
  if (is_trained_rule(cfg.rule)) {
    st.feat_mean.assign(n, 0.0);
    st.feat_std.assign(n, 0.0);
    for (long i = 0; i < train_len; ++i)
      for (int j = 0; j < n; ++j) st.feat_mean[j] += ds.reports[i].values[j];
    for (int j = 0; j < n; ++j) st.feat_mean[j] /= static_cast<double>(train_len);
    for (long i = 0; i < train_len; ++i)
      for (int j = 0; j < n; ++j) {
        double d = ds.reports[i].values[j] - st.feat_mean[j];
        st.feat_std[j] += d * d;
      }
    for (int j = 0; j < n; ++j)
      st.feat_std[j] = std::max(std::sqrt(st.feat_std[j] / static_cast<double>(train_len)),
                                fusion_detail::kTiny);

    if (cfg.rule == FusionRuleKind::LinearSvm)
      st.rule_model = std::make_unique<SgdHingeClassifier>(n);
    else
      st.rule_model = std::make_unique<LogisticSgdClassifier>(n);
    Sample s;
    s.features.resize(n);
    for (int pass = 0; pass < cfg.training_passes; ++pass)
      for (long i = 0; i < train_len; ++i) {
        for (int j = 0; j < n; ++j)
          s.features[j] = (ds.reports[i].values[j] - st.feat_mean[j]) / st.feat_std[j];
        s.label = ds.reports[i].truth;
        st.rule_model->fit_one(s);
      }
  }

  // Seed the history ring with the training tail so window defenses have
  // context from the first evaluated slot.
  const long w = std::min<long>(cfg.window_len, train_len);
  for (long i = train_len - w; i < train_len; ++i) st.window.push_back(ds.reports[i].values);

  st.ewma_z.assign(n, 0.0);
  st.trust.assign(n, 1.0);
  st.current_weights.assign(n, 1.0);
  st.caps.assign(n, 1.0);
  st.calibrated = true;
  return st;
}

// --- suspicion scoring (pure) ----------------------------------------------

inline SuspicionVector score_suspicion(const FusionState& st, const std::vector<double>& x) {
  if (!st.calibrated) throw StateError("fusion state not calibrated");
  if (static_cast<int>(x.size()) != st.n) throw ParameterError("report width mismatch");
  if (st.window.empty() &&
      (st.cfg.defense == DefenseKind::Lof || st.cfg.defense == DefenseKind::FzKnn ||
       st.cfg.defense == DefenseKind::Dsnd || st.cfg.defense == DefenseKind::OcSvm))
    throw StateError("window-based defense requires at least one windowed report");
  const int n = st.n;
  SuspicionVector s(n, 0.0);
  using fusion_detail::kTiny;
  using fusion_detail::squash;

  switch (st.cfg.defense) {
    case DefenseKind::None:
      break;
    case DefenseKind::Outlier: {
      std::vector<double> v(x.begin(), x.end());
      double med = median_of(v);
      double mad = std::max(mad_of(x, med), kTiny);
      for (int j = 0; j < n; ++j) {
        double z = (x[j] - med) / mad;
        double blended = (1.0 - st.cfg.ewma_factor) * st.ewma_z[j] + st.cfg.ewma_factor * z;
        s[j] = squash(std::fabs(blended), 3.0);
      }
      break;
    }
    case DefenseKind::EmpCov: {
      std::vector<double> z = solve_lower(st.emp_chol, n, [&] {
        std::vector<double> r(n);
        for (int j = 0; j < n; ++j) r[j] = x[j] - st.emp_mean[j];
        return r;
      }());
      for (int j = 0; j < n; ++j) s[j] = squash(z[j] * z[j], 9.0);
      break;
    }
    case DefenseKind::RobCov: {
      std::vector<double> z = solve_lower(st.rob_chol, n, [&] {
        std::vector<double> r(n);
        for (int j = 0; j < n; ++j) r[j] = x[j] - st.rob_mean[j];
        return r;
      }());
      for (int j = 0; j < n; ++j) s[j] = squash(z[j] * z[j], 9.0);
      break;
    }
    case DefenseKind::Lof: {
      auto feats = fusion_detail::window_features(st.window, n);
      auto lof = fusion_detail::lof_scores(feats, st.cfg.lof_k);
      for (int j = 0; j < n; ++j) s[j] = squash(std::max(0.0, lof[j] - 1.0), 2.0);
      break;
    }
    case DefenseKind::FzKnn: {
      auto feats = fusion_detail::window_features(st.window, n);
      std::array<double, 3> centroid;
      for (int c = 0; c < 3; ++c) {
        std::vector<double> coord(n);
        for (int j = 0; j < n; ++j) coord[j] = feats[j][c];
        centroid[c] = median_of(std::move(coord));
      }
      std::vector<double> d(n);
      for (int j = 0; j < n; ++j) d[j] = fusion_detail::feat_dist(feats[j], centroid);
      double d_med = std::max(median_of(d), kTiny);
      for (int j = 0; j < n; ++j) {
        double mu = 1.0 / (1.0 + (d[j] / d_med) * (d[j] / d_med));
        s[j] = squash(1.0 - mu, 1.0);
      }
      break;
    }
    case DefenseKind::Dsnd: {
      const std::size_t w = st.window.size();
      std::vector<double> med_series(w);
      std::vector<double> scratch(n);
      for (std::size_t t = 0; t < w; ++t) {
        scratch.assign(st.window[t].begin(), st.window[t].end());
        med_series[t] = median_of(scratch);
      }
      auto rms_dist = [&](int a, int b) {
        double acc = 0.0;
        for (std::size_t t = 0; t < w; ++t) {
          double d = st.window[t][a] - st.window[t][b];
          acc += d * d;
        }
        return std::sqrt(acc / static_cast<double>(w));
      };
      for (int j = 0; j < n; ++j) {
        double d_near = std::numeric_limits<double>::infinity();
        for (int k = 0; k < n; ++k)
          if (k != j) d_near = std::min(d_near, rms_dist(j, k));
        double acc = 0.0;
        for (std::size_t t = 0; t < w; ++t) {
          double d = st.window[t][j] - med_series[t];
          acc += d * d;
        }
        double d_far = std::sqrt(acc / static_cast<double>(w));
        double raw = std::max({(st.dsnd_t_low - d_near) / st.dsnd_t_low,
                               (d_far - st.dsnd_t_high) / st.dsnd_t_high, 0.0});
        s[j] = squash(raw, 2.0);
      }
      break;
    }
    case DefenseKind::OcSvm: {
      auto feats = fusion_detail::window_features(st.window, n);
      std::array<double, 3> c = {st.svdd_center[0], st.svdd_center[1], st.svdd_center[2]};
      for (int j = 0; j < n; ++j) {
        double d = fusion_detail::feat_dist(feats[j], c);
        s[j] = squash(std::max(0.0, d / st.svdd_radius - 1.0), 2.0);
      }
      break;
    }
    case DefenseKind::Trust: {
      for (int j = 0; j < n; ++j) s[j] = 1.0 - st.trust[j];
      break;
    }
  }
  return s;
}

// --- re-weighting and fusion ------------------------------------------------

inline WeightVector reweight(const FusionState& st, const SuspicionVector& suspicion) {
  WeightVector w(st.n);
  if (st.cfg.defense == DefenseKind::Trust) {
    for (int j = 0; j < st.n; ++j) w[j] = st.trust[j];
  } else {
    for (int j = 0; j < st.n; ++j) w[j] = std::max(st.cfg.weight_floor, 1.0 - suspicion[j]);
  }
  return w;
}

inline int local_vote(const FusionState& st, double value, int node) {
  return sign_pm(value - st.theta[node]);
}

// Pure decision kernel: fuse the report under the given weights.
inline int fuse(const FusionState& st, const std::vector<double>& x, const WeightVector& w) {
  if (!st.calibrated) throw StateError("fusion state not calibrated");
  if (static_cast<int>(x.size()) != st.n || static_cast<int>(w.size()) != st.n)
    throw ParameterError("fuse: dimension mismatch");
  switch (st.cfg.rule) {
    case FusionRuleKind::Majority: {
      double s = 0.0;
      for (int j = 0; j < st.n; ++j) s += w[j] * local_vote(st, x[j], j);
      return sign_pm(s);
    }
    case FusionRuleKind::And: {
      for (int j = 0; j < st.n; ++j)
        if (w[j] >= 0.5 && local_vote(st, x[j], j) == kChannelFree) return kChannelFree;
      return kChannelBusy;  // vacuously busy when no node carries weight >= 0.5
    }
    case FusionRuleKind::Or: {
      for (int j = 0; j < st.n; ++j)
        if (w[j] >= 0.5 && local_vote(st, x[j], j) == kChannelBusy) return kChannelBusy;
      return kChannelFree;
    }
    case FusionRuleKind::LinearSvm:
    case FusionRuleKind::LogisticRegression: {
      // Down-weighted nodes contribute their decision-neutral threshold.
      std::vector<double> g(st.n);
      for (int j = 0; j < st.n; ++j) {
        double f = w[j] * x[j] + (1.0 - w[j]) * st.theta[j];
        g[j] = (f - st.feat_mean[j]) / st.feat_std[j];
      }
      return st.rule_model->predict(g);
    }
  }
  throw StateError("unreachable fusion rule");
}

// Full pipeline step: score, reweight, apply policy caps, fuse, then commit
// the slot (window append, smoother and trust updates).
inline DecideResult decide(FusionState& st, const ReportVector& report) {
  const std::vector<double>& x = report.values;
  SuspicionVector s = score_suspicion(st, x);
  WeightVector w = reweight(st, s);
  st.current_weights = w;
  WeightVector w_eff(st.n);
  for (int j = 0; j < st.n; ++j) w_eff[j] = w[j] * st.caps[j];
  int y = fuse(st, x, w_eff);

  // Commit phase.
  if (st.cfg.defense == DefenseKind::Outlier) {
    std::vector<double> v(x.begin(), x.end());
    double med = median_of(v);
    double mad = std::max(mad_of(x, med), fusion_detail::kTiny);
    for (int j = 0; j < st.n; ++j)
      st.ewma_z[j] = (1.0 - st.cfg.ewma_factor) * st.ewma_z[j] +
                     st.cfg.ewma_factor * (x[j] - med) / mad;
  }
  if (st.cfg.defense == DefenseKind::Trust) {
    // Capped nodes sit out the trust update so the policy layer cannot
    // distort the agreement statistics.
    for (int j = 0; j < st.n; ++j) {
      if (st.caps[j] < 1.0) continue;
      double agree = local_vote(st, x[j], j) == y ? 1.0 : 0.0;
      st.trust[j] = (1.0 - st.cfg.trust_rho) * st.trust[j] + st.cfg.trust_rho * agree;
    }
  }
  st.window.push_back(x);
  while (static_cast<int>(st.window.size()) > st.cfg.window_len) st.window.pop_front();
  ++st.slots_seen;
  return DecideResult{y, std::move(w_eff), std::move(s)};
}

// Counterfactual query against the deployed state: current weights and caps,
// no commit. Safe to call concurrently with other counterfactuals.
inline int decide_counterfactual(const FusionState& st, const std::vector<double>& x_override) {
  if (static_cast<int>(x_override.size()) != st.n)
    throw ParameterError("counterfactual width mismatch");
  return fuse(st, x_override, st.effective_weights());
}

// --- snapshot ---------------------------------------------------------------

inline nlohmann::json fusion_snapshot(const FusionState& st) {
  nlohmann::json j{{"format_version", kSnapshotVersion},
                   {"defense", defense_name(st.cfg.defense)},
                   {"rule", rule_name(st.cfg.rule)},
                   {"n", st.n},
                   {"calibrated", st.calibrated},
                   {"window_len", st.cfg.window_len},
                   {"theta", st.theta},
                   {"train_sorted", st.train_sorted},
                   {"emp_mean", st.emp_mean},
                   {"emp_chol", st.emp_chol},
                   {"rob_mean", st.rob_mean},
                   {"rob_chol", st.rob_chol},
                   {"svdd_center", st.svdd_center},
                   {"svdd_radius", st.svdd_radius},
                   {"dsnd_t_low", st.dsnd_t_low},
                   {"dsnd_t_high", st.dsnd_t_high},
                   {"feat_mean", st.feat_mean},
                   {"feat_std", st.feat_std},
                   {"window", std::vector<std::vector<double>>(st.window.begin(), st.window.end())},
                   {"ewma_z", st.ewma_z},
                   {"trust", st.trust},
                   {"current_weights", st.current_weights},
                   {"caps", st.caps},
                   {"slots_seen", st.slots_seen}};
  if (st.rule_model) j["rule_model"] = st.rule_model->snapshot();
  return j;
}

inline FusionState fusion_restore(const nlohmann::json& j) {
  if (j.at("format_version").get<int>() != kSnapshotVersion)
    throw FormatError("unsupported fusion snapshot version");
  FusionState st;
  st.cfg.defense = parse_defense(j.at("defense").get<std::string>());
  st.cfg.rule = parse_rule(j.at("rule").get<std::string>());
  st.cfg.window_len = j.at("window_len").get<int>();
  st.n = j.at("n").get<int>();
  st.calibrated = j.at("calibrated").get<bool>();
  st.theta = j.at("theta").get<std::vector<double>>();
  st.train_sorted = j.at("train_sorted").get<std::vector<std::vector<double>>>();
  st.emp_mean = j.at("emp_mean").get<std::vector<double>>();
  st.emp_chol = j.at("emp_chol").get<std::vector<double>>();
  st.rob_mean = j.at("rob_mean").get<std::vector<double>>();
  st.rob_chol = j.at("rob_chol").get<std::vector<double>>();
  st.svdd_center = j.at("svdd_center").get<std::vector<double>>();
  st.svdd_radius = j.at("svdd_radius").get<double>();
  st.dsnd_t_low = j.at("dsnd_t_low").get<double>();
  st.dsnd_t_high = j.at("dsnd_t_high").get<double>();
  st.feat_mean = j.at("feat_mean").get<std::vector<double>>();
  st.feat_std = j.at("feat_std").get<std::vector<double>>();
  for (auto& row : j.at("window")) st.window.push_back(row.get<std::vector<double>>());
  st.ewma_z = j.at("ewma_z").get<std::vector<double>>();
  st.trust = j.at("trust").get<std::vector<double>>();
  st.current_weights = j.at("current_weights").get<std::vector<double>>();
  st.caps = j.at("caps").get<std::vector<double>>();
  st.slots_seen = j.at("slots_seen").get<long>();
  if (j.contains("rule_model")) st.rule_model = restore_classifier(j.at("rule_model"));
  return st;
}

}  // namespace specsim
