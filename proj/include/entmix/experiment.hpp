#pragma once
//! Quench experiment driver.
//!
//! Ties the evolution, detection and mixing layers into reproducible
//! command-line experiments: a validated configuration, a deterministic
//! evolve/detect/mix loop with CSV output and periodic checkpoints, resume
//! with compatibility checking, time averaging of recorded series, and a
//! free-fermion reference oracle for benchmark curves.
//!
//! Output directory layout of a run:
//!   manifest.ini      resolved configuration echo (reloadable via --config)
//!   timeseries.csv    one row per sampled step
//!   mix_events.csv    one row per accepted mix
//!   detect.csv        one row per evaluated fast-dimension candidate
//!   progress.log      wall-clock progress notes (not part of the data)
//!   ckpt_latest/      most recent state checkpoint (tensors + manifest.txt)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "entmix/gaussian.hpp"
#include "entmix/mix.hpp"
#include "entmix/tebd.hpp"
#include "entmix/umps.hpp"

namespace entmix {

// ---------------------------------------------------------------------------
// Configuration

enum class RunMode { ItebdOnly, Simple, Heuristic, Oracle };

inline const char* run_mode_name(RunMode m) {
  switch (m) {
    case RunMode::ItebdOnly: return "itebd_only";
    case RunMode::Simple: return "simple";
    case RunMode::Heuristic: return "heuristic";
    case RunMode::Oracle: return "oracle";
  }
  return "?";
}

inline RunMode parse_run_mode(const std::string& name) {
  if (name == "itebd_only") return RunMode::ItebdOnly;
  if (name == "simple") return RunMode::Simple;
  if (name == "heuristic") return RunMode::Heuristic;
  if (name == "oracle") return RunMode::Oracle;
  throw std::invalid_argument(fmt::format(
      "unknown mode '{}' (expected itebd_only, simple, heuristic or oracle)", name));
}

struct ExperimentConfig {
  double g = 2.0;          // transverse field after the quench
  double j2 = 0.0;         // second-neighbor zz coupling
  int block_size = 1;      // spins per tensor block
  double dt = 0.01;        // Trotter step
  int trotter_order = 2;   // only the symmetric second-order splitting exists
  long d_max = 64;         // bond dimension cap
  double eta_s = 0.01;     // residual-entropy threshold for mixing
  RunMode mode = RunMode::ItebdOnly;
  long d_p = 2;            // fast-dimension cap handed to the mix controller
  long d_purification_max = 64;  // purifier dimension cap after each mix
  double t_final = 6.0;
  std::string out_dir = "quench-out";
  std::uint64_t seed = 1;  // reserved for stochastic extensions; part of the
                           // compatibility hash so resumed runs cannot mix seeds
  double checkpoint_interval = 1.0;
  double mix_interval = 0.5;  // cadence of mix attempts
  int sample_stride = 1;      // record every this-many steps

  void validate() const;
  long total_steps() const { return static_cast<long>(std::llround(t_final / dt)); }
  long mix_stride_steps() const;
  long checkpoint_stride_steps() const;
};

namespace detail {

inline long interval_steps(double interval, double dt, const char* what) {
  const long k = static_cast<long>(std::llround(interval / dt));
  if (k < 1 || std::abs(static_cast<double>(k) * dt - interval) > 1e-9 * std::max(interval, dt))
    throw std::invalid_argument(
        fmt::format("{} ({}) must be a positive integer multiple of dt ({})", what, interval, dt));
  return k;
}

inline std::uint64_t fnv1a_text(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace detail

inline long ExperimentConfig::mix_stride_steps() const {
  return detail::interval_steps(mix_interval, dt, "mix-interval");
}

inline long ExperimentConfig::checkpoint_stride_steps() const {
  return detail::interval_steps(checkpoint_interval, dt, "checkpoint-interval");
}

inline void ExperimentConfig::validate() const {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (!(t_final > 0.0)) throw std::invalid_argument("t-final must be positive");
  if (block_size < 1) throw std::invalid_argument("block-size must be at least 1");
  if (block_size > 12) throw std::invalid_argument("block-size above 12 is not supported");
  if (trotter_order != 2)
    throw std::invalid_argument("trotter-order must be 2 (symmetric splitting)");
  if (d_max < 1) throw std::invalid_argument("d-max must be at least 1");
  if (!(eta_s >= 0.0)) throw std::invalid_argument("eta-s must be non-negative");
  if (d_p < 2) throw std::invalid_argument("d-p must be at least 2");
  if (d_purification_max < 1)
    throw std::invalid_argument("d-purification-max must be at least 1");
  if (sample_stride < 1) throw std::invalid_argument("sample-stride must be at least 1");
  if (j2 != 0.0 && block_size < 2)
    throw std::invalid_argument(
        "second-neighbor coupling needs blocks of at least two spins (block-size >= 2)");
  if (total_steps() < 1) throw std::invalid_argument("t-final is shorter than one step");
  mix_stride_steps();
  checkpoint_stride_steps();
}

/// Ordered (key, value) form of the configuration. Keys match the long
/// command-line option names, so the manifest written from this list can be
/// passed back through --config.
inline std::vector<std::pair<std::string, std::string>> config_entries(
    const ExperimentConfig& c) {
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("g", fmt::format("{}", c.g));
  kv.emplace_back("j2", fmt::format("{}", c.j2));
  kv.emplace_back("block-size", fmt::format("{}", c.block_size));
  kv.emplace_back("dt", fmt::format("{}", c.dt));
  kv.emplace_back("trotter-order", fmt::format("{}", c.trotter_order));
  kv.emplace_back("d-max", fmt::format("{}", c.d_max));
  kv.emplace_back("eta-s", fmt::format("{}", c.eta_s));
  kv.emplace_back("mode", run_mode_name(c.mode));
  kv.emplace_back("d-p", fmt::format("{}", c.d_p));
  kv.emplace_back("d-purification-max", fmt::format("{}", c.d_purification_max));
  kv.emplace_back("seed", fmt::format("{}", c.seed));
  kv.emplace_back("mix-interval", fmt::format("{}", c.mix_interval));
  kv.emplace_back("sample-stride", fmt::format("{}", c.sample_stride));
  kv.emplace_back("t-final", fmt::format("{}", c.t_final));
  kv.emplace_back("checkpoint-interval", fmt::format("{}", c.checkpoint_interval));
  kv.emplace_back("out", c.out_dir);
  return kv;
}

inline std::string config_text(const ExperimentConfig& c) {
  std::string s;
  for (const auto& [k, v] : config_entries(c)) s += fmt::format("{} = {}\n", k, v);
  return s;
}

/// Applies one manifest entry. Throws on unknown keys or malformed values.
inline void apply_config_entry(ExperimentConfig& c, const std::string& key,
                               const std::string& value) {
  bool known = true;
  try {
    if (key == "g") c.g = std::stod(value);
    else if (key == "j2") c.j2 = std::stod(value);
    else if (key == "block-size") c.block_size = std::stoi(value);
    else if (key == "dt") c.dt = std::stod(value);
    else if (key == "trotter-order") c.trotter_order = std::stoi(value);
    else if (key == "d-max") c.d_max = std::stol(value);
    else if (key == "eta-s") c.eta_s = std::stod(value);
    else if (key == "mode") c.mode = parse_run_mode(value);
    else if (key == "d-p") c.d_p = std::stol(value);
    else if (key == "d-purification-max") c.d_purification_max = std::stol(value);
    else if (key == "seed") c.seed = std::stoull(value);
    else if (key == "mix-interval") c.mix_interval = std::stod(value);
    else if (key == "sample-stride") c.sample_stride = std::stoi(value);
    else if (key == "t-final") c.t_final = std::stod(value);
    else if (key == "checkpoint-interval") c.checkpoint_interval = std::stod(value);
    else if (key == "out") c.out_dir = value;
    else known = false;
  } catch (const std::exception&) {
    throw std::invalid_argument(fmt::format("bad value '{}' for manifest key '{}'", value, key));
  }
  if (!known) throw std::invalid_argument(fmt::format("unknown manifest key '{}'", key));
}

inline ExperimentConfig read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument(fmt::format("cannot open manifest {}", path.string()));
  ExperimentConfig c;
  std::string line;
  while (std::getline(in, line)) {
    const auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == '[') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(fmt::format("malformed manifest line '{}'", t));
    apply_config_entry(c, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return c;
}

/// Names of the fields that must agree between a checkpoint and a resume
/// request. Everything except t-final, checkpoint-interval and out.
inline const std::vector<std::string>& compat_keys() {
  static const std::vector<std::string> keys = {
      "g",    "j2",  "block-size",         "dt",   "trotter-order",
      "d-max", "eta-s", "mode",            "d-p",  "d-purification-max",
      "seed", "mix-interval", "sample-stride"};
  return keys;
}

inline std::vector<std::string> compat_diff(const ExperimentConfig& stored,
                                            const ExperimentConfig& requested) {
  std::vector<std::string> out;
  auto as_map = [](const ExperimentConfig& c) {
    std::vector<std::pair<std::string, std::string>> kv = config_entries(c);
    return std::map<std::string, std::string>(kv.begin(), kv.end());
  };
  const auto a = as_map(stored);
  const auto b = as_map(requested);
  for (const std::string& k : compat_keys())
    if (a.at(k) != b.at(k))
      out.push_back(fmt::format("{}: checkpoint has {}, requested {}", k, a.at(k), b.at(k)));
  return out;
}

/// Hash of the resume-compatibility fields; stable across processes.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  std::vector<std::pair<std::string, std::string>> kv = config_entries(c);
  std::map<std::string, std::string> m(kv.begin(), kv.end());
  std::string text;
  for (const std::string& k : compat_keys()) text += k + "=" + m.at(k) + ";";
  return detail::fnv1a_text(text);
}

// ---------------------------------------------------------------------------
// CSV plumbing

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;  // non-numeric cells parse as NaN

  long column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<long>(i);
    throw std::invalid_argument(fmt::format("no column '{}' in CSV", name));
  }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument(fmt::format("cannot open {}", path.string()));
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (first) {
      t.header = cells;
      first = false;
      continue;
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const std::string& c : cells) {
      try {
        std::size_t pos = 0;
        const double v = std::stod(c, &pos);
        row.push_back(pos == c.size() ? v : std::numeric_limits<double>::quiet_NaN());
      } catch (const std::exception&) {
        row.push_back(std::numeric_limits<double>::quiet_NaN());
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline std::vector<std::pair<double, double>> column_series(const CsvTable& t,
                                                            const std::string& x,
                                                            const std::string& y) {
  const long ix = t.column(x), iy = t.column(y);
  std::vector<std::pair<double, double>> out;
  out.reserve(t.rows.size());
  for (const auto& r : t.rows) out.emplace_back(r[ix], r[iy]);
  return out;
}

/// Mean of a piecewise-linear interpolant of (t, value) samples over
/// [t0, t1] (trapezoidal rule with interpolated endpoints). The window must
/// lie inside the sampled range and contain no gaps (NaN values).
inline double time_average(const std::vector<std::pair<double, double>>& pts, double t0,
                           double t1) {
  if (pts.size() < 2) throw std::invalid_argument("time_average: need at least two samples");
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (!(pts[i].first > pts[i - 1].first))
      throw std::invalid_argument("time_average: sample times must be strictly increasing");
  if (!(t0 < t1)) throw std::invalid_argument("time_average: empty window");
  const double eps = 1e-9 * std::max(1.0, std::abs(t1));
  if (t0 < pts.front().first - eps || t1 > pts.back().first + eps)
    throw std::invalid_argument(
        fmt::format("time_average: window [{}, {}] outside sampled range [{}, {}]", t0, t1,
                    pts.front().first, pts.back().first));
  t0 = std::max(t0, pts.front().first);
  t1 = std::min(t1, pts.back().first);

  const auto value_at = [&pts](double t) {
    const auto it = std::lower_bound(pts.begin(), pts.end(), t,
                                     [](const auto& p, double x) { return p.first < x; });
    if (it == pts.begin()) return it->second;
    if (it == pts.end()) return std::prev(it)->second;
    const auto lo = std::prev(it);
    const double w = (t - lo->first) / (it->first - lo->first);
    return (1.0 - w) * lo->second + w * it->second;
  };

  double integral = 0.0;
  double prev_t = t0, prev_v = value_at(t0);
  if (!std::isfinite(prev_v))
    throw std::invalid_argument("time_average: column has a gap inside the window");
  for (const auto& [t, v] : pts) {
    if (t <= t0) continue;
    if (t >= t1) break;
    if (!std::isfinite(v))
      throw std::invalid_argument("time_average: column has a gap inside the window");
    integral += 0.5 * (v + prev_v) * (t - prev_t);
    prev_t = t;
    prev_v = v;
  }
  const double last_v = value_at(t1);
  if (!std::isfinite(last_v))
    throw std::invalid_argument("time_average: column has a gap inside the window");
  integral += 0.5 * (last_v + prev_v) * (t1 - prev_t);
  return integral / (t1 - t0);
}

// ---------------------------------------------------------------------------
// Run output plumbing

/// Thrown when a sampled quantity stops being finite; the driver aborts the
/// run, keeping the last checkpoint, and the CLI maps it to exit code 2.
class NumericalAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunPaths {
  std::filesystem::path root;
  explicit RunPaths(std::filesystem::path r) : root(std::move(r)) {}
  std::filesystem::path manifest() const { return root / "manifest.ini"; }
  std::filesystem::path timeseries() const { return root / "timeseries.csv"; }
  std::filesystem::path mix_events() const { return root / "mix_events.csv"; }
  std::filesystem::path detect() const { return root / "detect.csv"; }
  std::filesystem::path progress() const { return root / "progress.log"; }
  std::filesystem::path ckpt_latest() const { return root / "ckpt_latest"; }
  std::filesystem::path ckpt_tmp() const { return root / "ckpt_tmp"; }
};

struct RunSummary {
  long steps_done = 0;
  double final_time = 0.0;
  int mix_events = 0;  // events performed by this invocation
};

namespace detail {

inline const char* timeseries_header() {
  return "t,sigma_x,entropy,max_bond,purification_dim,residual_entropy,fast_negativity,"
         "mix_event,truncation_error";
}

inline const char* mix_events_header() {
  return "t,eta_s,chosen_d_fast,pre_bond,post_bond,pre_purification,post_purification,"
         "residual_entropy,marginal_error_ls,marginal_error_sr,optimizer_iterations,"
         "stagnated,discarded_weight";
}

inline const char* detect_header() {
  return "t,d_fast,residual_distance,residual_entropy,fast_negativity,ok,error";
}

/// Block observable sum_i sigma_x(i) / block_size as a (2^l, 2^l) operator.
inline DenseTensor block_sigma_x_op(int block_size) {
  const long d = 1L << block_size;
  DenseTensor op({d, d}, std::vector<std::string>{"out", "in"});
  const double w = 1.0 / static_cast<double>(block_size);
  for (long s = 0; s < d; ++s)
    for (int p = 0; p < block_size; ++p) op.at({s ^ (1L << p), s}) += w;
  return op;
}

inline long max_bond_dim(const UniformMps& s) {
  long m = 0;
  for (int k = 0; k < s.n_sites(); ++k) m = std::max(m, static_cast<long>(s.bond_schmidt(k).size()));
  return m;
}

inline long max_purifier_dim(const UniformMps& s) {
  long m = 1;
  for (int k = 0; k < s.n_sites(); ++k)
    if (s.role(k) == SiteRole::Purification) m = std::max(m, s.site(k).dim(0));
  return m;
}

inline std::vector<int> purifier_dims(const UniformMps& s) {
  std::vector<int> out;
  for (int k = 0; k < s.n_sites(); ++k)
    if (s.role(k) == SiteRole::Purification) out.push_back(static_cast<int>(s.site(k).dim(0)));
  return out;
}

/// Bond index of the half-chain cut: just before the second physical block
/// when the cell holds two, otherwise the cell boundary. Purifiers stay
/// attached to the block on their left.
inline int half_cut_bond(const UniformMps& s) {
  const std::vector<int> phys = physical_positions(s);
  return phys.size() >= 2 ? phys[1] - 1 : s.n_sites() - 1;
}

/// Truncates a CSV written by this driver to rows whose first column (time)
/// is at most t_keep, so a resumed run can re-emit the later rows bit for bit.
inline void truncate_csv_to_time(const std::filesystem::path& path, double t_keep) {
  if (!std::filesystem::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> kept;
  std::string line;
  bool first = true;
  const double cutoff = t_keep + 1e-12 * std::max(1.0, std::abs(t_keep));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      kept.push_back(line);
      first = false;
      continue;
    }
    try {
      if (std::stod(line.substr(0, line.find(','))) <= cutoff) kept.push_back(line);
    } catch (const std::exception&) {
      // Unparseable row: drop it, the rewrite below restores a clean file.
    }
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const std::string& l : kept) out << l << '\n';
}

inline std::string sanitize_cell(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

struct RunStreams {
  std::ofstream timeseries, mix_events, detect, progress;

  static RunStreams fresh(const RunPaths& p) {
    RunStreams s;
    s.timeseries.open(p.timeseries(), std::ios::trunc);
    s.mix_events.open(p.mix_events(), std::ios::trunc);
    s.detect.open(p.detect(), std::ios::trunc);
    s.progress.open(p.progress(), std::ios::trunc);
    s.timeseries << timeseries_header() << '\n';
    s.mix_events << mix_events_header() << '\n';
    s.detect << detect_header() << '\n';
    return s;
  }

  static RunStreams appending(const RunPaths& p) {
    RunStreams s;
    s.timeseries.open(p.timeseries(), std::ios::app);
    s.mix_events.open(p.mix_events(), std::ios::app);
    s.detect.open(p.detect(), std::ios::app);
    s.progress.open(p.progress(), std::ios::app);
    return s;
  }

  void flush_all() {
    timeseries.flush();
    mix_events.flush();
    detect.flush();
    progress.flush();
  }
};

/// The evolve / detect / mix / record loop, shared by fresh and resumed runs.
/// Steps are numbered globally (t = n * dt), so a resumed trajectory emits
/// exactly the rows an uninterrupted run would have emitted.
inline RunSummary evolve_loop(const ExperimentConfig& cfg, const RunPaths& paths,
                              UniformMps state, long n_start, RunStreams& io) {
  const long n_steps = cfg.total_steps();
  const long mix_every = cfg.mix_stride_steps();
  const long ckpt_every = cfg.checkpoint_stride_steps();
  const GateSet gates = build_gates(QuenchHamiltonian{cfg.g, cfg.j2}, cfg.dt, cfg.block_size);
  const DenseTensor op_x = block_sigma_x_op(cfg.block_size);
  // Truncate at the cap only. A relative singular-value cutoff would leave
  // ragged bond dimensions whose gcd quickly drops to 1, starving the mix
  // controller of divisor candidates; with pure-cap truncation bonds stay
  // powers of the block dimension and the recorded truncation_error carries
  // the full discarded weight.
  constexpr double kSvdRelTol = 0.0;
  const auto wall_start = std::chrono::steady_clock::now();

  RunSummary summary;
  summary.steps_done = n_start;
  summary.final_time = static_cast<double>(n_start) * cfg.dt;

  const auto save_checkpoint = [&](double t) {
    CheckpointMeta meta;
    meta.gauge = state.gauge;
    meta.block_size = cfg.block_size;
    meta.time = t;
    meta.purification_dims = purifier_dims(state);
    std::filesystem::remove_all(paths.ckpt_tmp());
    save_state(state, paths.ckpt_tmp(), meta);
    std::filesystem::remove_all(paths.ckpt_latest());
    std::filesystem::rename(paths.ckpt_tmp(), paths.ckpt_latest());
    io.flush_all();
  };

  const auto sample_row = [&](double t, const StepReport& rep, double residual_entropy,
                              double fast_negativity, int mix_flag) {
    const int phys0 = physical_positions(state).front();
    const double sx = local_expectation(state, op_x, phys0);
    const double ent = entanglement_entropy(state.bond_schmidt(half_cut_bond(state)));
    if (!std::isfinite(sx) || !std::isfinite(ent) || !std::isfinite(rep.truncation_error)) {
      io.flush_all();
      throw NumericalAbort(fmt::format(
          "non-finite observable at t = {} (sigma_x = {}, entropy = {}); aborting, last "
          "checkpoint kept",
          t, sx, ent));
    }
    io.timeseries << fmt::format("{},{},{},{},{},{},{},{},{}\n", t, sx, ent,
                                 max_bond_dim(state), max_purifier_dim(state),
                                 residual_entropy, fast_negativity, mix_flag,
                                 rep.truncation_error);
  };

  if (n_start == 0) sample_row(0.0, StepReport{}, std::numeric_limits<double>::quiet_NaN(),
                               std::numeric_limits<double>::quiet_NaN(), 0);

  const bool mixing = cfg.mode == RunMode::Simple || cfg.mode == RunMode::Heuristic;
  for (long n = n_start + 1; n <= n_steps; ++n) {
    const double t = static_cast<double>(n) * cfg.dt;
    StepReport rep;
    try {
      rep = itebd_step(state, gates, cfg.d_max, kSvdRelTol);
    } catch (const std::invalid_argument&) {
      throw;  // malformed state or gates: a configuration error, not divergence
    } catch (const std::runtime_error& e) {
      // A numerical kernel giving up mid-run (NaN input, non-convergence)
      // is a divergence of the trajectory; keep the last checkpoint.
      io.flush_all();
      throw NumericalAbort(fmt::format(
          "numerical failure at t = {} ({}); aborting, last checkpoint kept", t, e.what()));
    }
    if (!std::isfinite(rep.truncation_error) || !std::isfinite(rep.norm_drift)) {
      io.flush_all();
      throw NumericalAbort(
          fmt::format("non-finite step report at t = {}; aborting, last checkpoint kept", t));
    }

    double residual_entropy = std::numeric_limits<double>::quiet_NaN();
    double fast_negativity = std::numeric_limits<double>::quiet_NaN();
    int mix_flag = 0;
    if (mixing && n % mix_every == 0) {
      const MixMode mm = cfg.mode == RunMode::Simple ? MixMode::Simple : MixMode::Heuristic;
      MixOutcome outcome;
      try {
        outcome = mix_controller(state, cfg.eta_s, cfg.d_p, mm);
      } catch (const std::invalid_argument&) {
        throw;
      } catch (const std::runtime_error& e) {
        io.flush_all();
        throw NumericalAbort(fmt::format(
            "mix attempt failed at t = {} ({}); aborting, last checkpoint kept", t, e.what()));
      }
      for (const ResidualPoint& p : outcome.alternatives)
        io.detect << fmt::format("{},{},{},{},{},{},{}\n", t, p.d_fast, p.residual_distance,
                                 p.residual_entropy, p.fast_negativity, p.ok ? 1 : 0,
                                 sanitize_cell(p.error));
      residual_entropy = outcome.residual_entropy;
      for (const ResidualPoint& p : outcome.alternatives)
        if (p.ok) {
          fast_negativity = p.fast_negativity;
          break;
        }
      if (outcome.mixed) {
        state = std::move(outcome.state);
        auto [compressed, discarded] = compress_purification(state, cfg.d_purification_max);
        state = std::move(compressed);
        mix_flag = 1;
        ++summary.mix_events;
        const MixReport& r = outcome.report;
        io.mix_events << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{}\n", t, cfg.eta_s,
                                     outcome.chosen_d_fast, r.pre_bond_dim, r.post_bond_dim,
                                     r.pre_purification_dim, r.post_purification_dim,
                                     r.residual_entropy, r.marginal_error_ls,
                                     r.marginal_error_sr, r.optimizer_iterations,
                                     r.stagnated ? 1 : 0, discarded);
        io.mix_events.flush();
      }
    }

    if (n % cfg.sample_stride == 0 || n == n_steps)
      sample_row(t, rep, residual_entropy, fast_negativity, mix_flag);

    summary.steps_done = n;
    summary.final_time = t;
    if (n % ckpt_every == 0 || n == n_steps) {
      save_checkpoint(t);
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
      io.progress << fmt::format("t = {:.6f}  bond = {}  purifier = {}  wall = {:.1f}s\n", t,
                                 max_bond_dim(state), max_purifier_dim(state), wall);
      io.progress.flush();
    }
  }
  io.flush_all();
  return summary;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Fresh runs and resume

/// Runs a quench experiment from the |x+> product state, overwriting any
/// previous contents of cfg.out_dir.
inline RunSummary run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.mode == RunMode::Oracle)
    throw std::invalid_argument("mode oracle is served by the oracle subcommand, not run");
  const RunPaths paths(cfg.out_dir);
  std::filesystem::create_directories(paths.root);
  {
    std::ofstream m(paths.manifest(), std::ios::trunc);
    m << config_text(cfg);
  }
  const long d = 1L << cfg.block_size;
  const std::vector<cd> amps(static_cast<std::size_t>(d),
                             cd(1.0 / std::sqrt(static_cast<double>(d)), 0.0));
  UniformMps state = product_state_umps(amps);
  detail::RunStreams io = detail::RunStreams::fresh(paths);
  return detail::evolve_loop(cfg, paths, std::move(state), 0, io);
}

/// Continues a checkpointed run. Overrides may change t-final (extending or
/// shortening the run) but any difference in a compatibility field is
/// rejected with a per-field diff. CSV rows past the checkpoint are dropped
/// and re-emitted, so the final files are bitwise identical to those of an
/// uninterrupted run.
inline RunSummary resume_experiment(
    const std::filesystem::path& dir, std::optional<double> t_final_override = std::nullopt,
    const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  const RunPaths paths(dir);
  ExperimentConfig stored = read_manifest(paths.manifest());
  ExperimentConfig requested = stored;
  for (const auto& [k, v] : overrides) apply_config_entry(requested, k, v);
  if (t_final_override) requested.t_final = *t_final_override;

  const std::vector<std::string> diff = compat_diff(stored, requested);
  if (!diff.empty()) {
    std::string msg = "resume rejected; configuration differs from the checkpointed run:";
    for (const std::string& d : diff) msg += "\n  " + d;
    throw std::invalid_argument(msg);
  }
  ExperimentConfig cfg = requested;
  cfg.validate();

  if (!std::filesystem::exists(paths.ckpt_latest() / "manifest.txt"))
    throw std::invalid_argument(
        fmt::format("no checkpoint found under {}", paths.ckpt_latest().string()));
  auto [state, meta] = load_state(paths.ckpt_latest());
  const long n_start = static_cast<long>(std::llround(meta.time / cfg.dt));
  if (std::abs(static_cast<double>(n_start) * cfg.dt - meta.time) >
      1e-9 * std::max(1.0, meta.time))
    throw std::invalid_argument(
        fmt::format("checkpoint time {} is not a multiple of dt = {}", meta.time, cfg.dt));

  // Refresh the manifest (t-final may have changed) and drop rows past the
  // checkpoint; the loop below re-emits them deterministically.
  {
    std::ofstream m(paths.manifest(), std::ios::trunc);
    m << config_text(cfg);
  }
  detail::truncate_csv_to_time(paths.timeseries(), meta.time);
  detail::truncate_csv_to_time(paths.mix_events(), meta.time);
  detail::truncate_csv_to_time(paths.detect(), meta.time);

  detail::RunStreams io = detail::RunStreams::appending(paths);
  return detail::evolve_loop(cfg, paths, std::move(state), n_start, io);
}

// ---------------------------------------------------------------------------
// Free-fermion reference oracle

/// Diagonalizes the quadratic Hamiltonian once, then evaluates observables at
/// arbitrary times in O(n^2) each instead of re-exponentiating per call.
struct ReferenceOracle {
  int n = 0;
  double g = 0.0;
  Eigen::VectorXd w;   // Nambu eigenvalues
  Eigen::MatrixXcd v;  // Nambu eigenvectors (columns)

  ReferenceOracle(int sites, double field, gaussian::Boundary b = gaussian::Boundary::Open)
      : n(sites), g(field) {
    auto [ww, vv] = eigh(gaussian::quadratic_hamiltonian(n, g, b));
    w = std::move(ww);
    v = std::move(vv);
  }

  /// Row `site` of the propagator exp(-i h t).
  Eigen::RowVectorXcd propagator_row(int site, double t) const {
    Eigen::RowVectorXcd phased(w.size());
    for (Eigen::Index j = 0; j < w.size(); ++j)
      phased(j) = v(site, j) * std::exp(cd(0.0, -t * w(j)));
    return phased * v.adjoint();
  }

  /// <a^dag_site a_site> at time t, starting from the fully occupied
  /// correlation matrix (the |x+> product state).
  double occupation(int site, double t) const {
    return propagator_row(site, t).head(n).squaredNorm();
  }

  double sigma_x(int site, double t) const { return 2.0 * occupation(site, t) - 1.0; }

  /// Full correlation matrix at time t (one O(n^3) product; use sparingly).
  gaussian::CorrelationMatrix gamma(double t) const {
    Eigen::MatrixXcd phased = v;
    for (Eigen::Index j = 0; j < w.size(); ++j)
      phased.col(j) *= std::exp(cd(0.0, -t * w(j)));
    const Eigen::MatrixXcd u = phased * v.adjoint();
    gaussian::CorrelationMatrix c;
    c.n_modes = n;
    const Eigen::MatrixXcd left = u.leftCols(n);
    c.gamma = left * left.adjoint();
    return c;
  }
};

struct OracleSummary {
  double tail_average = 0.0;
  double vmax = 0.0;
  int bulk_site = 0;
};

/// Writes the reference curves for a nearest-neighbor quench (j2 must be 0):
/// the bulk sigma_x(t) series, the mode spectrum, the equilibration value
/// (tail average over t in [100, 200]) and the coherence footprint of the
/// dominant long-range mode pair at t-final.
inline OracleSummary reference_run(const ExperimentConfig& cfg, int sites = 800) {
  cfg.validate();
  if (cfg.j2 != 0.0)
    throw std::invalid_argument(
        "the free-fermion oracle covers nearest-neighbor quenches only (j2 = 0)");
  if (sites < 8 || sites % 2 != 0)
    throw std::invalid_argument("oracle sites must be even and at least 8");

  const std::filesystem::path root(cfg.out_dir);
  std::filesystem::create_directories(root);
  {
    std::ofstream m(root / "manifest.ini", std::ios::trunc);
    m << config_text(cfg);
  }

  const ReferenceOracle oracle(sites, cfg.g, gaussian::Boundary::Open);
  OracleSummary out;
  out.bulk_site = sites / 2;
  out.vmax = gaussian::max_group_velocity(cfg.g);

  {
    std::ofstream ts(root / "oracle_timeseries.csv", std::ios::trunc);
    ts << "t,sigma_x\n";
    const long steps = cfg.total_steps();
    for (long k = 0; k <= steps; k += cfg.sample_stride) {
      const double t = static_cast<double>(k) * cfg.dt;
      ts << fmt::format("{},{}\n", t, oracle.sigma_x(out.bulk_site, t));
    }
  }

  {
    std::ofstream sp(root / "spectrum.csv", std::ios::trunc);
    sp << "k,dispersion,velocity,occupation,coherence\n";
    const gaussian::ModeSpectrum ms = gaussian::mode_spectrum(cfg.g, sites);
    for (std::size_t i = 0; i < ms.k.size(); ++i)
      sp << fmt::format("{},{},{},{},{}\n", ms.k[i], ms.dispersion[i], ms.velocity[i],
                        ms.occupation[i], ms.coherence[i]);
  }

  {
    // Tail average over [100, 200] on a coarse grid; the curve is smooth and
    // slowly varying there, so a 0.25 step resolves it comfortably.
    std::vector<std::pair<double, double>> tail;
    for (double t = 100.0; t <= 200.0 + 1e-9; t += 0.25)
      tail.emplace_back(t, oracle.sigma_x(out.bulk_site, t));
    out.tail_average = time_average(tail, 100.0, 200.0);
    std::ofstream eq(root / "equilibration.txt", std::ios::trunc);
    eq << fmt::format("sites = {}\nbulk_site = {}\nvmax = {}\ntail_window = [100, 200]\n"
                      "tail_average = {}\n",
                      sites, out.bulk_site, out.vmax, out.tail_average);
  }

  {
    std::ofstream fp(root / "footprint.csv", std::ios::trunc);
    fp << "i,j,weight\n";
    try {
      const gaussian::CorrelationMatrix c = oracle.gamma(cfg.t_final);
      const int mid = sites / 2;
      const gaussian::LongRangePair pair = gaussian::find_long_range_pair(c, mid - 1, mid);
      const Eigen::MatrixXd grid = gaussian::correlation_footprint(c, pair);
      const int lo = std::max(0, mid - 60), hi = std::min(sites - 1, mid + 60);
      for (int i = lo; i <= hi; ++i)
        for (int j = lo; j <= hi; ++j) fp << fmt::format("{},{},{}\n", i, j, grid(i, j));
    } catch (const std::exception& e) {
      fp << fmt::format("# no long-range pair extracted: {}\n", detail::sanitize_cell(e.what()));
    }
  }
  return out;
}

}  // namespace entmix
