// Command-line front end: trace generation, scenario runs, parameter sweeps
// and summary reporting. Exit codes: 0 success, 1 configuration/input error,
// 2 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "specsim/harness.hpp"

namespace fs = std::filesystem;
using namespace specsim;

namespace {

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      std::size_t pos = 0;
      double v = std::stod(tok, &pos);
      if (pos != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ParameterError("--values: cannot parse '" + tok + "'");
    }
  }
  if (out.empty()) throw ParameterError("--values: no values given");
  return out;
}

ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ParameterError("config file " + path + ": " + e.what());
  }
  return config_from_json(j);
}

void write_text_file(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << body;
}

struct RunOptions {
  std::string config_path;
  std::string trace_csv;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> defense;
  std::optional<std::string> rule;
  std::optional<int> m;
  std::optional<double> alpha;
  std::optional<bool> policy;
};

ScenarioConfig assemble_run_config(const RunOptions& opt) {
  ScenarioConfig cfg;
  if (!opt.config_path.empty()) cfg = load_config(opt.config_path);
  if (!opt.trace_csv.empty()) {
    cfg.trace.source = TraceSpec::Source::Csv;
    cfg.trace.csv_path = opt.trace_csv;
    TraceDataset probe = load_trace_csv(opt.trace_csv);
    cfg.n = probe.n_nodes;
    if (cfg.m >= cfg.n) cfg.m = cfg.n > 1 ? cfg.n / 2 : 0;
    long total = probe.length();
    if (cfg.train_len + cfg.eval_len > total) {
      cfg.train_len = std::max<long>(1, total / 6);
      cfg.eval_len = total - cfg.train_len;
    }
  }
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.defense) cfg.defense = parse_defense(*opt.defense);
  if (opt.rule) cfg.rule = parse_rule(*opt.rule);
  if (opt.m) cfg.m = *opt.m;
  if (opt.alpha) cfg.alpha = *opt.alpha;
  if (opt.policy) cfg.policy.enabled = *opt.policy;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cooperative spectrum sensing duel simulator"};
  app.require_subcommand(1);

  // gen-trace
  auto* gen = app.add_subcommand("gen-trace", "generate a synthetic trace CSV");
  std::string gen_out = "trace.csv";
  int gen_n = 20;
  long gen_length = 3600;
  std::uint64_t gen_seed = 1;
  double gen_p_stay = 0.95, gen_mu_free = -95.0, gen_mu_busy = -70.0;
  long gen_drift_start = 600;
  gen->add_option("--out", gen_out, "output CSV path");
  gen->add_option("--n", gen_n, "number of nodes");
  gen->add_option("--length", gen_length, "total timeslots");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--p-stay", gen_p_stay, "Markov stay probability");
  gen->add_option("--mu-free", gen_mu_free, "mean level when the channel is free (dBm)");
  gen->add_option("--mu-busy", gen_mu_busy, "mean level when the channel is busy (dBm)");
  gen->add_option("--drift-start", gen_drift_start, "first slot where drift regimes may begin");

  // run
  auto* run = app.add_subcommand("run", "run one scenario");
  RunOptions ro;
  std::string run_seed_str;
  run->add_option("--config", ro.config_path, "scenario config JSON");
  run->add_option("--trace-csv", ro.trace_csv, "trace CSV overriding the config's source");
  run->add_option("--out-dir", ro.out_dir, "output directory");
  std::optional<std::uint64_t> run_seed;
  run->add_option("--seed", run_seed, "seed override");
  std::optional<std::string> run_defense, run_rule;
  run->add_option("--defense", run_defense, "defense override");
  run->add_option("--rule", run_rule, "fusion rule override");
  std::optional<int> run_m;
  run->add_option("--m", run_m, "malicious node count override");
  std::optional<double> run_alpha;
  run->add_option("--alpha", run_alpha, "attacker accuracy gate override");
  std::optional<bool> run_policy;
  run->add_flag("--policy,!--no-policy", run_policy, "enable/disable the influence-limiting policy");

  // sweep
  auto* sw = app.add_subcommand("sweep", "sweep one parameter axis");
  std::string sw_config, sw_axis, sw_values, sw_out_dir = ".";
  int sw_repeats = 10;
  std::optional<std::uint64_t> sw_seed;
  sw->add_option("--config", sw_config, "scenario config JSON");
  sw->add_option("--axis", sw_axis, "one of alpha|m|c1|c2|eta")->required();
  sw->add_option("--values", sw_values, "comma-separated axis values")->required();
  sw->add_option("--repeats", sw_repeats, "seeds per axis value");
  sw->add_option("--seed", sw_seed, "base seed override");
  sw->add_option("--out-dir", sw_out_dir, "output directory");

  // report
  auto* rep = app.add_subcommand("report", "render a summary JSON as text");
  std::string rep_summary;
  rep->add_option("--summary", rep_summary, "summary JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      auto schedule = generate_schedule(gen_length, gen_p_stay, derive_seed(gen_seed, fnv1a64("truth")));
      auto profiles =
          synth_profiles(gen_n, gen_length, gen_drift_start, derive_seed(gen_seed, fnv1a64("nodes")));
      TraceDataset ds = generate_trace(schedule, profiles, gen_mu_free, gen_mu_busy,
                                       derive_seed(gen_seed, fnv1a64("signal")));
      save_trace_csv(ds, gen_out);
      std::cout << "wrote " << gen_out << " (" << ds.length() << " slots, " << ds.n_nodes
                << " nodes)\n";
      return 0;
    }
    if (run->parsed()) {
      ro.seed = run_seed;
      ro.defense = run_defense;
      ro.rule = run_rule;
      ro.m = run_m;
      ro.alpha = run_alpha;
      ro.policy = run_policy;
      ScenarioConfig cfg = assemble_run_config(ro);
      ScenarioResult result = run_scenario(cfg);
      fs::create_directories(ro.out_dir);
      {
        std::ostringstream os;
        write_records_csv(result.records, cfg.n, os);
        write_text_file(fs::path(ro.out_dir) / "records.csv", os.str());
      }
      nlohmann::json summary = summary_to_json(result.metrics, cfg);
      write_text_file(fs::path(ro.out_dir) / "summary.json", summary.dump(2) + "\n");
      if (cfg.policy.enabled) {
        std::ostringstream os;
        write_policy_audit_csv(result.policy_audit, os);
        write_text_file(fs::path(ro.out_dir) / "policy_audit.csv", os.str());
      }
      std::cout << render_report(summary);
      return 0;
    }
    if (sw->parsed()) {
      ScenarioConfig cfg;
      if (!sw_config.empty()) cfg = load_config(sw_config);
      if (sw_seed) cfg.seed = *sw_seed;
      SweepAxis axis = parse_axis(sw_axis);
      std::vector<double> values = parse_values(sw_values);
      std::vector<SweepRow> rows = sweep(cfg, axis, values, sw_repeats);
      fs::create_directories(sw_out_dir);
      std::ostringstream os;
      write_sweep_csv(axis, rows, os);
      write_text_file(fs::path(sw_out_dir) / "sweep.csv", os.str());
      std::cout << os.str();
      return 0;
    }
    if (rep->parsed()) {
      std::ifstream in(rep_summary);
      if (!in) throw ParameterError("cannot open summary file: " + rep_summary);
      nlohmann::json summary;
      in >> summary;
      std::cout << render_report(summary);
      return 0;
    }
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const CalibrationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
