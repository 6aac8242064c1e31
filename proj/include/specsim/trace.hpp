#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "specsim/common.hpp"
#include "specsim/rng.hpp"

namespace specsim {

// One piecewise-constant drift regime: from start_slot on, the node's mean is
// shifted by mean_shift_dbm and its noise sigma scaled by sigma_scale.
struct DriftSegment {
  long start_slot = 0;
  double mean_shift_dbm = 0.0;
  double sigma_scale = 1.0;
};

struct NodeProfile {
  int node_id = 0;
  double location_bias_dbm = 0.0;
  double noise_sigma_dbm = 0.0;
  std::vector<DriftSegment> drift_segments{DriftSegment{}};

  void validate() const {
    if (noise_sigma_dbm < 0.0) throw ParameterError("noise_sigma_dbm must be >= 0");
    if (drift_segments.empty() || drift_segments.front().start_slot != 0)
      throw ParameterError("drift_segments must start at slot 0");
    for (std::size_t i = 0; i < drift_segments.size(); ++i) {
      if (drift_segments[i].sigma_scale <= 0.0) throw ParameterError("sigma_scale must be > 0");
      if (i > 0 && drift_segments[i].start_slot <= drift_segments[i - 1].start_slot)
        throw ParameterError("drift_segments must be sorted by start_slot");
    }
  }

  const DriftSegment& segment_at(long slot) const {
    std::size_t k = 0;
    while (k + 1 < drift_segments.size() && drift_segments[k + 1].start_slot <= slot) ++k;
    return drift_segments[k];
  }
};

struct ReportVector {
  long timeslot = 0;
  std::vector<double> values;
  int truth = kChannelBusy;
};

struct TraceDataset {
  int n_nodes = 0;
  std::vector<ReportVector> reports;
  long train_len = 0;

  long length() const { return static_cast<long>(reports.size()); }

  void validate() const {
    if (n_nodes <= 0) throw ParameterError("n_nodes must be positive");
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const ReportVector& r = reports[i];
      if (static_cast<int>(r.values.size()) != n_nodes)
        throw ParameterError("report " + std::to_string(i) + " has wrong width");
      if (r.timeslot != static_cast<long>(i)) throw ParameterError("timeslots must increase from 0");
      if (!is_label(r.truth)) throw ParameterError("ground truth must be -1 or +1");
      for (double v : r.values)
        if (!std::isfinite(v) || v < kGlobalMinDbm || v > kGlobalMaxDbm)
          throw ParameterError("report value outside feasible range");
    }
    if (reports.size() >= 2 && (train_len <= 0 || train_len >= length()))
      throw ParameterError("train_len must satisfy 0 < train_len < length");
  }
};

inline long default_train_len(long length) {
  if (length < 2) return 0;
  return std::min(std::max<long>(1, length / 6), length - 1);
}

// Two-state Markov chain over {-1, +1}; initial state is an unbiased draw.
inline std::vector<int> generate_schedule(long length, double p_stay, std::uint64_t seed) {
  if (length < 1) throw ParameterError("schedule length must be >= 1");
  if (!(p_stay > 0.0 && p_stay < 1.0)) throw ParameterError("p_stay must lie in (0, 1)");
  Rng rng(derive_seed(seed, fnv1a64("schedule")));
  std::vector<int> states(length);
  states[0] = rng.uniform01() < 0.5 ? kChannelFree : kChannelBusy;
  for (long i = 1; i < length; ++i) {
    bool stay = rng.uniform01() < p_stay;
    states[i] = stay ? states[i - 1] : -states[i - 1];
  }
  return states;
}

// Per-node signal: class mean + location bias + drift shift + scaled Gaussian
// noise, clamped to the feasible box. Node streams are independent.
inline TraceDataset generate_trace(const std::vector<int>& schedule,
                                   const std::vector<NodeProfile>& profiles,
                                   double mu_free_dbm, double mu_busy_dbm,
                                   std::uint64_t seed) {
  if (profiles.empty()) throw ParameterError("profiles must be nonempty");
  if (!(mu_busy_dbm > mu_free_dbm)) throw ParameterError("mu_busy_dbm must exceed mu_free_dbm");
  for (const auto& p : profiles) p.validate();
  for (int s : schedule)
    if (!is_label(s)) throw ParameterError("schedule entries must be -1 or +1");

  const int n = static_cast<int>(profiles.size());
  std::vector<Rng> streams;
  streams.reserve(profiles.size());
  for (const auto& p : profiles)
    streams.emplace_back(derive_seed(seed, fnv1a64("node"), static_cast<std::uint64_t>(p.node_id)));

  TraceDataset ds;
  ds.n_nodes = n;
  ds.reports.resize(schedule.size());
  for (long i = 0; i < static_cast<long>(schedule.size()); ++i) {
    ReportVector& r = ds.reports[i];
    r.timeslot = i;
    r.truth = schedule[i];
    r.values.resize(n);
    double mu = (schedule[i] == kChannelBusy) ? mu_busy_dbm : mu_free_dbm;
    for (int j = 0; j < n; ++j) {
      const NodeProfile& p = profiles[j];
      const DriftSegment& seg = p.segment_at(i);
      double noise = streams[j].gaussian(0.0, p.noise_sigma_dbm * seg.sigma_scale);
      r.values[j] = clamp_dbm(mu + p.location_bias_dbm + seg.mean_shift_dbm + noise);
    }
  }
  ds.train_len = default_train_len(ds.length());
  return ds;
}

// Deterministic heterogeneous node population: persistent location biases,
// uneven noise floors and post-warmup drift regimes.
struct ProfileSynthOptions {
  double bias_range_dbm = 6.0;       // biases drawn from [-range, +range]
  double sigma_min_dbm = 1.5;
  double sigma_max_dbm = 4.0;
  double shift_range_dbm = 5.0;      // drift mean shifts from [-range, +range]
  double scale_min = 0.8;
  double scale_max = 1.6;
  int max_extra_segments = 2;
};

inline std::vector<NodeProfile> synth_profiles(int n, long length, long drift_start,
                                               std::uint64_t seed,
                                               const ProfileSynthOptions& opt = {}) {
  if (n <= 0) throw ParameterError("n must be positive");
  std::vector<NodeProfile> profiles(n);
  for (int j = 0; j < n; ++j) {
    Rng rng(derive_seed(seed, fnv1a64("profile"), static_cast<std::uint64_t>(j)));
    NodeProfile& p = profiles[j];
    p.node_id = j;
    p.location_bias_dbm = rng.uniform(-opt.bias_range_dbm, opt.bias_range_dbm);
    p.noise_sigma_dbm = rng.uniform(opt.sigma_min_dbm, opt.sigma_max_dbm);
    p.drift_segments = {DriftSegment{0, 0.0, 1.0}};
    long lo = std::min(drift_start, length);
    if (lo < length) {
      int extra = static_cast<int>(rng.below(static_cast<std::uint64_t>(opt.max_extra_segments) + 1));
      long prev = lo;
      for (int k = 0; k < extra; ++k) {
        long span = length - prev;
        if (span <= 1) break;
        long start = prev + 1 + static_cast<long>(rng.below(static_cast<std::uint64_t>(span - 1)));
        p.drift_segments.push_back(DriftSegment{
            start, rng.uniform(-opt.shift_range_dbm, opt.shift_range_dbm),
            rng.uniform(opt.scale_min, opt.scale_max)});
        prev = start;
      }
    }
    std::sort(p.drift_segments.begin() + 1, p.drift_segments.end(),
              [](const DriftSegment& a, const DriftSegment& b) { return a.start_slot < b.start_slot; });
  }
  return profiles;
}

// Trace CSV: header "timeslot,truth,node_0,...,node_{n-1}", LF endings,
// values printed with six fractional digits.
inline void save_trace_csv(const TraceDataset& ds, std::ostream& out) {
  out << "timeslot,truth";
  for (int j = 0; j < ds.n_nodes; ++j) out << ",node_" << j;
  out << "\n";
  char buf[32];
  for (const ReportVector& r : ds.reports) {
    out << r.timeslot << ',' << r.truth;
    for (double v : r.values) {
      std::snprintf(buf, sizeof(buf), ",%.6f", v);
      out << buf;
    }
    out << "\n";
  }
}

inline void save_trace_csv(const TraceDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path);
  save_trace_csv(ds, out);
}

namespace detail {

inline double parse_cell(const std::string& cell, long line_no) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &pos);
  } catch (const std::exception&) {
    throw FormatError("line " + std::to_string(line_no) + ": non-numeric cell '" + cell + "'");
  }
  if (pos != cell.size())
    throw FormatError("line " + std::to_string(line_no) + ": non-numeric cell '" + cell + "'");
  return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace detail

inline TraceDataset load_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = detail::split_csv(line);
  if (header.size() < 3 || header[0] != "timeslot" || header[1] != "truth")
    throw FormatError("line 1: header must be 'timeslot,truth,node_0,...'");
  const int n = static_cast<int>(header.size()) - 2;
  for (int j = 0; j < n; ++j)
    if (header[j + 2] != "node_" + std::to_string(j))
      throw FormatError("line 1: bad node column name '" + header[j + 2] + "'");

  TraceDataset ds;
  ds.n_nodes = n;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = detail::split_csv(line);
    if (static_cast<int>(cells.size()) != n + 2)
      throw FormatError("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(n + 2) + " cells, got " + std::to_string(cells.size()));
    ReportVector r;
    double slot = detail::parse_cell(cells[0], line_no);
    r.timeslot = static_cast<long>(slot);
    double truth = detail::parse_cell(cells[1], line_no);
    if (truth != -1.0 && truth != 1.0)
      throw FormatError("line " + std::to_string(line_no) + ": truth must be -1 or 1");
    r.truth = static_cast<int>(truth);
    r.values.resize(n);
    for (int j = 0; j < n; ++j) {
      double v = detail::parse_cell(cells[j + 2], line_no);
      if (!std::isfinite(v))
        throw FormatError("line " + std::to_string(line_no) + ": non-finite value");
      r.values[j] = v;
    }
    if (r.timeslot != static_cast<long>(ds.reports.size()))
      throw FormatError("line " + std::to_string(line_no) + ": timeslots must increase from 0");
    ds.reports.push_back(std::move(r));
  }
  if (ds.reports.empty()) throw FormatError("line 2: no data rows");
  ds.train_len = default_train_len(ds.length());
  return ds;
}

inline TraceDataset load_trace_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open trace file: " + path);
  return load_trace_csv(in);
}

}  // namespace specsim
