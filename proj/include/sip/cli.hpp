#pragma once

// Experiment runner behind the sip_cli executable. Each subcommand fills a
// Table; the runner writes it as CSV plus a JSON mirror and prints one
// summary line per observable.

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <variant>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sip/coupling.hpp"
#include "sip/dynamics.hpp"
#include "sip/error.hpp"
#include "sip/exact.hpp"
#include "sip/hydro.hpp"
#include "sip/measures.hpp"
#include "sip/nes.hpp"
#include "sip/rng.hpp"
#include "sip/stats.hpp"

#ifndef SIP_VERSION
#define SIP_VERSION "0.0.0"
#endif

namespace sip::cli {

using json = nlohmann::json;
using Cell = std::variant<long, double, std::string>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
  std::vector<std::string> summary;

  void add(std::vector<Cell> row) {
    if (row.size() != columns.size()) throw std::logic_error("Table: row width differs from header");
    rows.push_back(std::move(row));
  }
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_cell(const Cell& c) {
  if (const auto* l = std::get_if<long>(&c)) return std::to_string(*l);
  if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
  return std::get<std::string>(c);
}

inline json cell_json(const Cell& c) {
  return std::visit([](const auto& v) { return json(v); }, c);
}

inline std::string join(const std::vector<long>& xs, char sep = ';') {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += sep;
    s += std::to_string(xs[i]);
  }
  return s;
}

inline std::string estimate_line(const std::string& name, double mean, double se) {
  return name + ": " + format_double(mean) + " +- " + format_double(se);
}

struct Context {
  std::uint64_t seed = 0;
  unsigned threads = 0;
  bool quiet = false;
  std::ostream* err = &std::cerr;

  RngStream master() const { return RngStream(seed, 0); }
  void progress(const std::string& msg) const {
    if (!quiet) *err << msg << '\n' << std::flush;
  }
};

/// Shared flags; only one subcommand runs per invocation.
struct Common {
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string output;
  std::string config;
  bool quiet = false;
};

/// A subcommand plus the echo of its experiment parameters.
class Command {
 public:
  Command(CLI::App& parent, const std::string& name, const std::string& description, Common& common)
      : app_(parent.add_subcommand(name, description)), name_(name) {
    option("seed", common.seed, "master seed (default: SIP_SEED or built-in)");
    app_->add_option("--threads", common.threads, "worker threads, 0 = all cores");
    app_->add_option("--output", common.output, "CSV output path; a .json mirror is written next to it");
    app_->add_option("--config", common.config, "JSON file with option values");
    app_->add_flag("--quiet", common.quiet, "no progress on stderr");
  }

  template <class T>
  CLI::Option* option(const std::string& name, T& var, const std::string& description) {
    echo_.emplace_back(name, [&var] { return json(var); });
    return app_->add_option("--" + name, var, description);
  }
  CLI::Option* flag(const std::string& name, bool& var, const std::string& description) {
    echo_.emplace_back(name, [&var] { return json(var); });
    flags_.insert(name);
    return app_->add_flag("--" + name, var, description);
  }

  CLI::App* app() const { return app_; }
  const std::string& name() const { return name_; }
  bool is_flag(const std::string& key) const { return flags_.count(key) > 0; }
  bool accepts(const std::string& key) const {
    return key != "output" && key != "config" && key != "quiet" &&
           app_->get_option_no_throw("--" + key) != nullptr;
  }
  json echo() const {
    json out = json::object();
    for (const auto& [k, f] : echo_) out[k] = f();
    return out;
  }

  std::function<Table(const Context&)> body;

 private:
  CLI::App* app_;
  std::string name_;
  std::vector<std::pair<std::string, std::function<json()>>> echo_;
  std::set<std::string> flags_;
};

// --- config files ---------------------------------------------------------------

inline std::string normalize_key(std::string key) {
  for (char& c : key) c = c == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return key;
}

// Nested objects become prefixed keys: {"profile": {"low": 0.1}} -> profile-low.
inline void flatten_config(const json& j, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = prefix + normalize_key(k);
    if (v.is_object())
      flatten_config(v, key + "-", out);
    else
      out.emplace_back(key, v);
  }
}

inline void scalar_tokens(const json& v, const std::string& key, std::vector<std::string>& out) {
  if (v.is_array()) {
    for (const auto& e : v) scalar_tokens(e, key, out);
  } else if (v.is_string()) {
    out.push_back(v.get<std::string>());
  } else if (v.is_number()) {
    out.push_back(v.dump());
  } else {
    throw DomainError("config: field '" + key + "' must be a number, string or list");
  }
}

inline json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("config: cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DomainError("config: " + path + ": " + e.what());
  }
}

/// Command-line tokens for the keys of a config file. Keys already given on
/// the command line are skipped so explicit flags win.
inline std::vector<std::string> config_tokens(const Command& cmd, const json& root,
                                              const std::set<std::string>& on_command_line) {
  json body = root;
  // an output JSON mirror can be fed back directly
  if (root.is_object() && root.contains("config") && root.contains("command")) {
    if (root["command"] != cmd.name())
      throw DomainError("config: file was written by '" + root["command"].get<std::string>() + "', not '" +
                        cmd.name() + "'");
    body = root["config"];
  }
  if (!body.is_object()) throw DomainError("config: top level must be an object");
  std::vector<std::pair<std::string, json>> fields;
  flatten_config(body, "", fields);
  std::vector<std::string> tokens;
  for (const auto& [key, value] : fields) {
    if (!cmd.accepts(key)) throw DomainError("config: unknown field '" + key + "' for command '" + cmd.name() + "'");
    if (on_command_line.count(key)) continue;
    if (cmd.is_flag(key)) {
      if (!value.is_boolean()) throw DomainError("config: field '" + key + "' must be true or false");
      if (value.get<bool>()) tokens.push_back("--" + key);
      continue;
    }
    if (value.is_null() || (value.is_array() && value.empty())) continue;
    tokens.push_back("--" + key);
    scalar_tokens(value, key, tokens);
  }
  return tokens;
}

// --- output -----------------------------------------------------------------------

inline std::string csv_text(const Table& t, const std::string& command, std::uint64_t seed, const json& config) {
  std::ostringstream out;
  out << "# sip " << SIP_VERSION << '\n';
  out << "# command: " << command << '\n';
  out << "# seed: " << seed << '\n';
  out << "# config: " << config.dump() << '\n';
  for (std::size_t i = 0; i < t.columns.size(); ++i) out << (i ? "," : "") << t.columns[i];
  out << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_cell(row[i]);
    out << '\n';
  }
  return out.str();
}

inline json json_mirror(const Table& t, const std::string& command, std::uint64_t seed, const json& config,
                        double wall_seconds) {
  json rows = json::array();
  for (const auto& row : t.rows) {
    json r = json::array();
    for (const auto& c : row) r.push_back(cell_json(c));
    rows.push_back(std::move(r));
  }
  return json{{"version", SIP_VERSION}, {"command", command}, {"seed", seed},          {"config", config},
              {"wall_clock_seconds", wall_seconds},              {"columns", t.columns}, {"rows", rows}};
}

inline std::filesystem::path json_path_for(const std::filesystem::path& csv) {
  std::filesystem::path p = csv;
  if (p.extension() == ".csv") return p.replace_extension(".json");
  p += ".json";
  return p;
}

/// Write all files to temporaries first, then rename into place.
inline void write_files_atomically(const std::vector<std::pair<std::filesystem::path, std::string>>& files) {
  std::vector<std::filesystem::path> temps;
  try {
    for (const auto& [path, text] : files) {
      std::filesystem::path tmp = path;
      tmp += ".tmp" + std::to_string(::getpid());
      temps.push_back(tmp);
      std::ofstream out(tmp, std::ios::binary);
      out << text;
      out.close();
      if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    }
    for (std::size_t i = 0; i < files.size(); ++i) std::filesystem::rename(temps[i], files[i].first);
  } catch (...) {
    std::error_code ec;
    for (const auto& t : temps) std::filesystem::remove(t, ec);
    throw;
  }
}

// --- subcommands ----------------------------------------------------------------

inline MacroProfile make_profile(const std::string& family, double low, double high, double center, double width) {
  const std::string f = normalize_key(family);
  if (f == "constant") return MacroProfile::constant(low);
  if (f == "smoothed-step") return MacroProfile::smoothed_step(low, high, center, width);
  if (f == "gaussian-bump") return MacroProfile::gaussian_bump(low, high, center, width);
  throw DomainError("unknown profile family '" + family + "' (constant, smoothed_step, gaussian_bump)");
}

struct ProfileOptions {
  std::string family = "smoothed_step";
  double low = 0.1, high = 0.4, center = 0.0, width = 0.1;

  void attach(Command& c) {
    c.option("profile-family", family, "constant | smoothed_step | gaussian_bump");
    c.option("profile-low", low, "profile value far left (base for gaussian_bump)");
    c.option("profile-high", high, "profile value far right (peak for gaussian_bump)");
    c.option("profile-center", center, "macroscopic center");
    c.option("profile-width", width, "macroscopic width");
  }
  MacroProfile make() const { return make_profile(family, low, high, center, width); }
};

struct DualityOptions {
  long ring = 0, boundary = 0, max_dual = 3, max_occ = 4;
  std::vector<double> m{1.0};
  double rho_l = 0.5, rho_r = 1.5;
  std::vector<double> reservoirs;
};

inline Table run_check_duality(const DualityOptions& o, const Context& ctx) {
  if ((o.ring > 0) == (o.boundary > 0)) throw DomainError("check-duality: give exactly one of --ring or --boundary");
  if (!o.reservoirs.empty() && o.reservoirs.size() != 4)
    throw DomainError("check-duality: --reservoirs takes alpha beta gamma sigma");
  Table t;
  t.columns = {"geometry", "sites", "m", "alpha", "beta", "gamma", "sigma", "max_dual", "max_occ", "pairs", "max_residual"};
  for (double m : o.m) {
    if (o.ring > 0) {
      const auto r = exhaustive_intertwining(o.ring, o.max_dual, o.max_occ, m);
      t.add({std::string("ring"), o.ring, m, 0.0, 0.0, 0.0, 0.0, o.max_dual, o.max_occ,
             static_cast<long>(r.pairs), r.max_residual});
      t.summary.push_back("max_residual ring=" + std::to_string(o.ring) + " m=" + format_double(m) + ": " +
                          format_double(r.max_residual));
    } else {
      const ReservoirParams res =
          o.reservoirs.empty() ? ReservoirParams::canonical(o.rho_l, o.rho_r, m)
                               : ReservoirParams{o.reservoirs[0], o.reservoirs[1], o.reservoirs[2], o.reservoirs[3]};
      const auto r = exhaustive_boundary_intertwining(o.boundary, o.max_dual, o.max_occ, res, m);
      t.add({std::string("boundary"), o.boundary, m, res.alpha, res.beta, res.gamma, res.sigma, o.max_dual, o.max_occ,
             static_cast<long>(r.pairs), r.max_residual});
      t.summary.push_back("max_residual boundary=" + std::to_string(o.boundary) + " m=" + format_double(m) + ": " +
                          format_double(r.max_residual));
    }
    ctx.progress("check-duality: m=" + format_double(m) + " done");
  }
  return t;
}

struct BalanceOptions {
  std::vector<double> lambda{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<double> m{0.5, 1, 2, 4};
  long max_n = 30, max_k = 30, max_moment = 4;
  double series_tol = 1e-12;
};

inline Table run_check_balance(const BalanceOptions& o, const Context&) {
  if (o.max_n < 1 || o.max_k < 0 || o.max_moment < 0) throw DomainError("check-balance: bounds must be non-negative");
  Table t;
  t.columns = {"kind", "m", "lambda", "k", "value", "reference", "error"};
  double worst_balance = 0, worst_moment = 0;
  for (double m : o.m)
    for (double lam : o.lambda) {
      double worst = 0;
      for (long n = 1; n <= o.max_n; ++n)
        for (long k = 0; k <= o.max_k; ++k) worst = std::max(worst, detailed_balance_defect(lam, m, n, k));
      t.add({std::string("balance"), m, lam, o.max_k, worst, 0.0, worst});
      worst_balance = std::max(worst_balance, worst);
      for (long k = 1; k <= o.max_moment; ++k) {
        const double lhs = moment_identity_lhs(k, lam, m, o.series_tol);
        const double ref = std::pow(scale_ratio(lam), static_cast<double>(k));
        t.add({std::string("moment"), m, lam, k, lhs, ref, std::abs(lhs - ref)});
        worst_moment = std::max(worst_moment, std::abs(lhs - ref));
      }
    }
  t.summary.push_back("max detailed balance defect: " + format_double(worst_balance));
  if (o.max_moment > 0) t.summary.push_back("max moment identity error: " + format_double(worst_moment));
  return t;
}

struct SimulateOptions {
  std::string model = "ring";
  std::vector<long> initial;
  double m = 1.0, t = 1.0, rho_l = 0, rho_r = 0;
  bool events = false;
};

inline Table run_simulate(const SimulateOptions& o, const Context& ctx) {
  if (o.initial.empty()) throw DomainError("simulate: --initial is empty");
  RngStream rng = ctx.master();
  Table t;
  std::vector<JumpEvent> events;
  const std::string model = normalize_key(o.model);
  if (model == "ring" || model == "boundary") {
    const long n = static_cast<long>(o.initial.size());
    Trajectory<OccupationConfig> traj =
        model == "ring"
            ? simulate_sip(OccupationConfig::from_dense(SiteRange::ring(n), o.initial), o.m, o.t, rng)
            : simulate_boundary_driven(OccupationConfig::from_dense(SiteRange::segment(n), o.initial),
                                       ReservoirParams::canonical(o.rho_l, o.rho_r, o.m), o.m, o.t, rng);
    const OccupationConfig final_state = replay(traj);
    events = traj.events;
    if (!o.events) {
      t.columns = {"site", "count"};
      for (long x = final_state.range().lo(); x <= final_state.range().hi(); ++x) t.add({x, final_state.at(x)});
    }
    t.summary.push_back("particles at t: " + std::to_string(final_state.total()));
  } else if (model == "labeled" || model == "irw") {
    const LabeledPositions start(o.initial);
    auto traj = model == "labeled" ? simulate_sip(start, o.m, o.t, rng) : simulate_irw(start, o.m, o.t, rng);
    const LabeledPositions final_state = replay(traj);
    events = traj.events;
    if (!o.events) {
      t.columns = {"label", "position"};
      for (std::size_t i = 0; i < final_state.size(); ++i) t.add({static_cast<long>(i), final_state[i]});
    }
  } else {
    throw DomainError("simulate: unknown model '" + o.model + "' (ring, boundary, labeled, irw)");
  }
  if (o.events) {
    t.columns = {"time", "kind", "from", "to", "label"};
    for (const auto& ev : events)
      t.add({ev.time, std::string(to_string(ev.kind)), ev.from, ev.to,
             ev.label ? Cell(static_cast<long>(*ev.label)) : Cell(std::string())});
  }
  t.summary.push_back("events: " + std::to_string(events.size()));
  return t;
}

struct CouplingOptions {
  long particles = 2;
  std::vector<long> start;
  double m = 1.0;
  std::vector<double> t;
  std::size_t replicas = 10000;
};

inline Table run_coupling_scaling(const CouplingOptions& o, const Context& ctx) {
  if (o.particles < 1) throw DomainError("coupling-scaling: need at least one particle");
  if (o.replicas < 2) throw DomainError("coupling-scaling: need at least 2 replicas");
  LabeledPositions start;
  if (o.start.empty()) {
    for (long i = 0; i < o.particles; ++i) start.positions.push_back(i);
  } else {
    if (static_cast<long>(o.start.size()) != o.particles) throw DomainError("coupling-scaling: --start needs one site per particle");
    start.positions = o.start;
  }
  Table t;
  t.columns = {"t", "replicas", "sq_discrepancy_over_t", "sq_discrepancy_over_t_se", "occupation_delta",
               "occupation_delta_se", "occupation_nonbinary", "occupation_nonbinary_se", "max_sq_discrepancy"};
  for (std::size_t idx = 0; idx < o.t.size(); ++idx) {
    const double horizon = o.t[idx];
    if (!(horizon > 0)) throw DomainError("coupling-scaling: times must be positive");
    const auto t0 = std::chrono::steady_clock::now();
    const auto samples = run_replicas(o.replicas, split_stream(ctx.master(), idx), ctx.threads,
                                      [&](std::size_t, RngStream& rng) {
                                        const auto r = simulate_coupling(start, o.m, horizon, rng);
                                        double sq = 0, worst = 0;
                                        for (double d : r.diagnostics.sq_discrepancy) {
                                          sq += d;
                                          worst = std::max(worst, d);
                                        }
                                        return std::array<double, 4>{sq / (static_cast<double>(start.size()) * horizon),
                                                                     r.diagnostics.occupation_delta,
                                                                     r.diagnostics.occupation_nonbinary, worst};
                                      });
    EstimateWithError disc, delta, nonbinary;
    double worst = 0;
    for (const auto& s : samples) {
      disc.add(s[0]);
      delta.add(s[1]);
      nonbinary.add(s[2]);
      worst = std::max(worst, s[3]);
    }
    t.add({horizon, static_cast<long>(o.replicas), disc.mean(), disc.se(), delta.mean(), delta.se(), nonbinary.mean(),
           nonbinary.se(), worst});
    const std::string tag = " T=" + format_double(horizon);
    t.summary.push_back(estimate_line("E|Y-U|^2/T" + tag, disc.mean(), disc.se()));
    t.summary.push_back(estimate_line("occupation Delta" + tag, delta.mean(), delta.se()));
    t.summary.push_back(estimate_line("occupation Delta\\B" + tag, nonbinary.mean(), nonbinary.se()));
    ctx.progress("coupling-scaling: T=" + format_double(horizon) + " done in " +
                 format_double(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");
  }
  return t;
}

struct ZChainOptions {
  double m = 1.0, pull = 2.0;
  long z0 = 0;
  std::vector<double> t;
  std::size_t replicas = 10000;
};

inline Table run_z_chain(const ZChainOptions& o, const Context& ctx) {
  if (o.replicas < 2) throw DomainError("z-chain: need at least 2 replicas");
  Table t;
  t.columns = {"t", "replicas", "occupation_pm1", "occupation_pm1_se", "a2_over_t", "a2_over_t_se"};
  for (std::size_t idx = 0; idx < o.t.size(); ++idx) {
    const double horizon = o.t[idx];
    if (!(horizon > 0)) throw DomainError("z-chain: times must be positive");
    const auto samples =
        run_replicas(o.replicas, split_stream(ctx.master(), idx), ctx.threads, [&](std::size_t, RngStream& rng) {
          const auto f = z_chain_functionals(o.z0, o.m, horizon, rng, o.pull);
          return std::array<double, 2>{f.occupation_pm1, f.additive * f.additive / horizon};
        });
    EstimateWithError occ, a2;
    for (const auto& s : samples) {
      occ.add(s[0]);
      a2.add(s[1]);
    }
    t.add({horizon, static_cast<long>(o.replicas), occ.mean(), occ.se(), a2.mean(), a2.se()});
    const std::string tag = " T=" + format_double(horizon);
    t.summary.push_back(estimate_line("occupation {-1,1}" + tag, occ.mean(), occ.se()));
    t.summary.push_back(estimate_line("A(T)^2/T" + tag, a2.mean(), a2.se()));
    ctx.progress("z-chain: T=" + format_double(horizon) + " done");
  }
  return t;
}

struct HydroOptions {
  ProfileOptions profile;
  std::vector<long> n_scale{25};
  double t = 0.1, m = 1.0;
  std::vector<double> points{0.0};
  std::vector<double> pairs;
  double block_lo = 0, block_hi = 0, block_width = 0.05;
  std::size_t replicas = 10000;
};

inline Table run_hydro_lep(const HydroOptions& o, const Context& ctx) {
  if (o.pairs.size() % 2 != 0) throw DomainError("hydro-lep: --pairs needs an even number of values");
  HydroExperiment e;
  e.profile = o.profile.make();
  e.t = o.t;
  e.m = o.m;
  e.points = o.points;
  for (std::size_t i = 0; i + 1 < o.pairs.size(); i += 2) e.pairs.emplace_back(o.pairs[i], o.pairs[i + 1]);
  e.block_lo = o.block_lo;
  e.block_hi = o.block_hi;
  e.block_width = o.block_width;
  e.replicas = o.replicas;
  Table t;
  t.columns = {"n_scale", "kind", "y1", "y2", "estimate", "se", "pde", "gap"};
  for (std::size_t idx = 0; idx < o.n_scale.size(); ++idx) {
    e.n_scale = o.n_scale[idx];
    const auto t0 = std::chrono::steady_clock::now();
    const auto rows = lep_check(e, split_stream(ctx.master(), idx), ctx.threads);
    for (const auto& r : rows) {
      t.add({r.n_scale, r.kind, r.y1, r.y2, r.estimate, r.se, r.pde, r.gap()});
      if (r.kind != "block")
        t.summary.push_back(estimate_line("N=" + std::to_string(r.n_scale) + " " + r.kind + " " + format_double(r.y1) +
                                              (r.kind == "pair" ? "," + format_double(r.y2) : "") + " gap",
                                          r.gap(), r.se));
    }
    for (const char* kind : {"point", "block"}) {
      const bool any = std::any_of(rows.begin(), rows.end(), [&](const LepRow& r) { return r.kind == kind; });
      if (any)
        t.summary.push_back("N=" + std::to_string(e.n_scale) + " " + kind + " rms error: " +
                            format_double(lep_rms_error(rows, kind)));
    }
    ctx.progress("hydro-lep: N=" + std::to_string(e.n_scale) + " done in " +
                 format_double(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");
  }
  return t;
}

struct NesProfileOptions {
  long n_sites = 0;
  double rho_l = 0, rho_r = 0, m = 1.0;
  std::size_t replicas = 10000;
  std::string method = "dual";
  std::vector<long> tuple;
  double burn_in = -1, averaging = 0;
  std::size_t batches = 20;
};

inline Table run_nes_profile(const NesProfileOptions& o, const Context& ctx) {
  Table t;
  const std::string method = normalize_key(o.method);
  if (method != "dual" && method != "direct" && method != "exact")
    throw DomainError("nes-profile: unknown method '" + o.method + "' (dual, direct, exact)");
  if (!o.tuple.empty()) {
    t.columns = {"sites", "estimate", "se", "exact"};
    const LabeledPositions xs(o.tuple);
    const double exact = nes_correlation_exact(xs, o.n_sites, o.rho_l, o.rho_r, o.m);
    if (method == "dual") {
      const auto est = nes_correlation_dual(xs, o.n_sites, o.rho_l, o.rho_r, o.m, o.replicas, ctx.master(), ctx.threads);
      t.add({join(o.tuple), est.mean(), est.se(), exact});
      t.summary.push_back(estimate_line("correlation " + join(o.tuple, ','), est.mean(), est.se()));
    } else if (method == "exact") {
      t.add({join(o.tuple), exact, 0.0, exact});
      t.summary.push_back("correlation " + join(o.tuple, ',') + ": " + format_double(exact));
    } else {
      for (long x : o.tuple)
        if (x < 1 || x > o.n_sites) throw RangeError("nes-profile: direct method needs sites in {1..N}");
      DirectRunOptions opt{o.burn_in, o.averaging, o.batches};
      if (!(opt.averaging > 0)) opt.averaging = 200.0 * static_cast<double>(o.n_sites * o.n_sites) / o.m;
      RngStream rng = ctx.master();
      const auto est = nes_direct_moments(o.n_sites, o.rho_l, o.rho_r, o.m, {o.tuple}, opt, rng)[0];
      t.add({join(o.tuple), est.mean(), est.se(), exact});
      t.summary.push_back(estimate_line("correlation " + join(o.tuple, ','), est.mean(), est.se()));
    }
    return t;
  }
  if (o.n_sites < 1) throw DomainError("nes-profile: --n-sites must be >= 1");
  t.columns = {"site", "estimate", "se", "exact"};
  std::vector<std::pair<double, double>> est(static_cast<std::size_t>(o.n_sites));
  if (method == "dual") {
    for (long i = 1; i <= o.n_sites; ++i) {
      const auto e = nes_correlation_dual(LabeledPositions{i}, o.n_sites, o.rho_l, o.rho_r, o.m, o.replicas,
                                          split_stream(ctx.master(), static_cast<std::uint64_t>(i)), ctx.threads);
      est[static_cast<std::size_t>(i - 1)] = {e.mean(), e.se()};
    }
  } else if (method == "direct") {
    DirectRunOptions opt{o.burn_in, o.averaging, o.batches};
    if (!(opt.averaging > 0)) opt.averaging = 200.0 * static_cast<double>(o.n_sites * o.n_sites) / o.m;
    RngStream rng = ctx.master();
    const auto prof = nes_profile_direct(o.n_sites, o.rho_l, o.rho_r, o.m, opt, rng);
    for (std::size_t i = 0; i < prof.size(); ++i) est[i] = {prof[i].mean(), prof[i].se()};
  } else {
    for (long i = 1; i <= o.n_sites; ++i)
      est[static_cast<std::size_t>(i - 1)] = {nes_correlation_exact(LabeledPositions{i}, o.n_sites, o.rho_l, o.rho_r, o.m), 0.0};
  }
  for (long i = 1; i <= o.n_sites; ++i) {
    const auto [mean, se] = est[static_cast<std::size_t>(i - 1)];
    t.add({i, mean, se, linear_profile(i, o.n_sites, o.rho_l, o.rho_r)});
    t.summary.push_back(estimate_line("density site " + std::to_string(i), mean, se));
  }
  return t;
}

struct FactorizationOptions {
  std::vector<double> x;
  std::vector<long> n_sites;
  double m = 1.0;
  std::size_t replicas = 10000;
};

inline Table run_nes_factorization(const FactorizationOptions& o, const Context& ctx) {
  if (o.x.empty()) throw DomainError("nes-factorization: --x is empty");
  Table t;
  t.columns = {"n_sites", "sites", "joint", "product", "gap", "gap_se", "discrepancy", "discrepancy_se"};
  const auto rows = lep_factorization_check(o.x, o.n_sites, o.m, o.replicas, ctx.master(), ctx.threads);
  for (std::size_t idx = 0; idx < rows.size(); ++idx) {
    const auto& r = rows[idx];
    const auto disc = coupled_absorption_check(o.x, r.n_sites, o.m, o.replicas,
                                               split_stream(ctx.master(), o.n_sites.size() + idx), ctx.threads);
    t.add({r.n_sites, join(r.sites), r.joint, r.product, r.gap, r.se, disc.mean(), disc.se()});
    const std::string tag = " N=" + std::to_string(r.n_sites);
    t.summary.push_back(estimate_line("joint - product" + tag, r.gap, r.se));
    t.summary.push_back(estimate_line("P(discrepant absorption)" + tag, disc.mean(), disc.se()));
    ctx.progress("nes-factorization: N=" + std::to_string(r.n_sites) + " done");
  }
  return t;
}

struct OracleOptions {
  std::string kind;
  long n_sites = 0, n_scale = 25;
  double m = 1.0, rho_l = 0, rho_r = 1, t = 0.1, y_lo = -1, y_hi = 1, tol = 1e-6;
  std::vector<long> start;
  ProfileOptions profile;
};

inline Table run_oracle(const OracleOptions& o, const Context&) {
  Table t;
  const std::string kind = normalize_key(o.kind);
  if (kind == "absorption") {
    const auto p = absorption_solve_single(o.n_sites, o.m);
    t.columns = {"site", "right_absorption", "linear"};
    for (long x = 0; x <= o.n_sites + 1; ++x)
      t.add({x, p[static_cast<std::size_t>(x)], static_cast<double>(x) / static_cast<double>(o.n_sites + 1)});
    double worst = 0;
    for (long x = 0; x <= o.n_sites + 1; ++x)
      worst = std::max(worst, std::abs(p[static_cast<std::size_t>(x)] - static_cast<double>(x) / static_cast<double>(o.n_sites + 1)));
    t.summary.push_back("max deviation from x/(N+1): " + format_double(worst));
  } else if (kind == "dual-absorption") {
    if (o.start.empty()) throw DomainError("oracle dual-absorption: --start is required");
    const auto d = dual_absorption_solve(LabeledPositions(o.start), o.n_sites, o.m);
    t.columns = {"right_count", "probability"};
    for (std::size_t l = 0; l < d.by_right.size(); ++l) t.add({static_cast<long>(l), d.by_right[l]});
    t.summary.push_back("correlation: " + format_double(d.correlation(o.rho_l, o.rho_r)));
  } else if (kind == "boundary-stationary") {
    const auto s = boundary_stationary_truncated(o.n_sites, ReservoirParams::canonical(o.rho_l, o.rho_r, o.m), o.m, o.tol);
    t.columns = {"site", "density", "linear"};
    for (long i = 1; i <= o.n_sites; ++i)
      t.add({i, s.density[static_cast<std::size_t>(i - 1)], linear_profile(i, o.n_sites, o.rho_l, o.rho_r)});
    t.summary.push_back("truncation cap: " + std::to_string(s.cap));
  } else if (kind == "heat") {
    if (!(o.y_hi > o.y_lo)) throw DomainError("oracle heat: need y-hi > y-lo");
    const ScaleProfile lambda =
        profile_discretize(o.profile.make(), o.n_scale, macro_site(o.y_lo, o.n_scale), macro_site(o.y_hi, o.n_scale));
    const double horizon = static_cast<double>(o.n_scale) * static_cast<double>(o.n_scale) * o.t;
    const LatticeField psi0 = lambda.ratio_field();
    const LatticeField psi = heat_solve_discrete(psi0, o.m, horizon);
    t.columns = {"site", "y", "psi0", "psi"};
    for (long x = lambda.lo(); x <= lambda.hi(); ++x)
      t.add({x, static_cast<double>(x) / static_cast<double>(o.n_scale), psi0.at(x), psi.at(x)});
    t.summary.push_back("sites: " + std::to_string(lambda.hi() - lambda.lo() + 1));
  } else {
    throw DomainError("oracle: unknown kind '" + o.kind + "' (absorption, dual-absorption, boundary-stationary, heat)");
  }
  return t;
}

// --- entry point ----------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Simulation and verification toolkit for the symmetric inclusion process SIP(m)", "sip_cli"};
  app.set_version_flag("--version", std::string(SIP_VERSION));
  app.require_subcommand(1);
  Common common;
  try {
    common.seed = default_seed();
  } catch (const std::exception&) {
    err << "error: SIP_SEED is not an unsigned integer\n";
    return 1;
  }

  std::vector<std::unique_ptr<Command>> commands;
  auto add = [&](const std::string& name, const std::string& desc) -> Command& {
    commands.push_back(std::make_unique<Command>(app, name, desc, common));
    return *commands.back();
  };

  DualityOptions dual;
  {
    Command& c = add("check-duality", "exhaustive generator intertwining residual of the duality function");
    c.option("ring", dual.ring, "sites of the ring");
    c.option("boundary", dual.boundary, "sites N of the reservoir segment");
    c.option("max-dual", dual.max_dual, "largest dual particle number");
    c.option("max-occ", dual.max_occ, "largest occupation per site");
    c.option("m", dual.m, "inclusion parameter(s)");
    c.option("rho-l", dual.rho_l, "left reservoir density (canonical boundary)");
    c.option("rho-r", dual.rho_r, "right reservoir density (canonical boundary)");
    c.option("reservoirs", dual.reservoirs, "explicit alpha beta gamma sigma")->expected(4);
    c.body = [&](const Context& ctx) { return run_check_duality(dual, ctx); };
  }
  BalanceOptions bal;
  {
    Command& c = add("check-balance", "detailed balance and moment identities of the negative binomial measure");
    c.option("lambda", bal.lambda, "scale parameters");
    c.option("m", bal.m, "inclusion parameters");
    c.option("max-n", bal.max_n, "largest n");
    c.option("max-k", bal.max_k, "largest k");
    c.option("max-moment", bal.max_moment, "largest moment order (0 disables)");
    c.option("series-tol", bal.series_tol, "truncation tolerance of the moment series");
    c.body = [&](const Context& ctx) { return run_check_balance(bal, ctx); };
  }
  SimulateOptions sim;
  {
    Command& c = add("simulate", "one exact trajectory");
    c.option("model", sim.model, "ring | boundary | labeled | irw");
    c.option("initial", sim.initial, "occupations per site (ring, boundary) or positions (labeled, irw)")->required();
    c.option("m", sim.m, "inclusion parameter");
    c.option("t", sim.t, "time horizon")->required();
    c.option("rho-l", sim.rho_l, "left reservoir density (boundary)");
    c.option("rho-r", sim.rho_r, "right reservoir density (boundary)");
    c.flag("events", sim.events, "write the event log instead of the final state");
    c.body = [&](const Context& ctx) { return run_simulate(sim, ctx); };
  }
  CouplingOptions coup;
  {
    Command& c = add("coupling-scaling", "discrepancy and collision times of the basic coupling");
    c.option("particles", coup.particles, "number of labeled particles");
    c.option("start", coup.start, "initial positions (default 0..n-1)");
    c.option("m", coup.m, "inclusion parameter");
    c.option("t", coup.t, "time horizons")->required();
    c.option("replicas", coup.replicas, "replicas per horizon");
    c.body = [&](const Context& ctx) { return run_coupling_scaling(coup, ctx); };
  }
  ZChainOptions zc;
  {
    Command& c = add("z-chain", "occupation of {-1,1} and additive functional of the difference chain");
    c.option("m", zc.m, "inclusion parameter");
    c.option("pull", zc.pull, "extra rate from +-1 to 0");
    c.option("z0", zc.z0, "initial position");
    c.option("t", zc.t, "time horizons")->required();
    c.option("replicas", zc.replicas, "replicas per horizon");
    c.body = [&](const Context& ctx) { return run_z_chain(zc, ctx); };
  }
  HydroOptions hyd;
  {
    Command& c = add("hydro-lep", "propagation of local equilibrium against the discrete heat equation");
    hyd.profile.attach(c);
    c.option("n-scale", hyd.n_scale, "scaling parameters N");
    c.option("t", hyd.t, "macroscopic time");
    c.option("m", hyd.m, "inclusion parameter");
    c.option("points", hyd.points, "macroscopic points of single-site observables");
    c.option("pairs", hyd.pairs, "flattened pairs y1 y2 of two-point observables");
    c.option("block-lo", hyd.block_lo, "left end of the block grid");
    c.option("block-hi", hyd.block_hi, "right end of the block grid (<= block-lo disables)");
    c.option("block-width", hyd.block_width, "macroscopic block width");
    c.option("replicas", hyd.replicas, "replicas per N");
    c.body = [&](const Context& ctx) { return run_hydro_lep(hyd, ctx); };
  }
  NesProfileOptions nes;
  {
    Command& c = add("nes-profile", "stationary density profile or correlation of the boundary-driven chain");
    c.option("n-sites", nes.n_sites, "sites N")->required();
    c.option("rho-l", nes.rho_l, "left reservoir density")->required();
    c.option("rho-r", nes.rho_r, "right reservoir density")->required();
    c.option("m", nes.m, "inclusion parameter");
    c.option("replicas", nes.replicas, "dual replicas per observable");
    c.option("method", nes.method, "dual | direct | exact");
    c.option("tuple", nes.tuple, "sites of one correlation E prod eta_x/(m/2) instead of the profile");
    c.option("burn-in", nes.burn_in, "direct method: burn-in time (< 0: 10 N^2/m)");
    c.option("averaging", nes.averaging, "direct method: averaging time (0: 200 N^2/m)");
    c.option("batches", nes.batches, "direct method: batches");
    c.body = [&](const Context& ctx) { return run_nes_profile(nes, ctx); };
  }
  FactorizationOptions fac;
  {
    Command& c = add("nes-factorization", "joint versus product absorption of the dual and the absorbing coupling");
    c.option("x", fac.x, "macroscopic starting points in [0, 1]")->required();
    c.option("n-sites", fac.n_sites, "system sizes N")->required();
    c.option("m", fac.m, "inclusion parameter");
    c.option("replicas", fac.replicas, "replicas per N");
    c.body = [&](const Context& ctx) { return run_nes_factorization(fac, ctx); };
  }
  OracleOptions ora;
  {
    Command& c = add("oracle", "exact reference values");
    c.option("kind", ora.kind, "absorption | dual-absorption | boundary-stationary | heat")->required();
    c.option("n-sites", ora.n_sites, "sites N");
    c.option("n-scale", ora.n_scale, "heat: scaling parameter N");
    c.option("m", ora.m, "inclusion parameter");
    c.option("rho-l", ora.rho_l, "left reservoir density");
    c.option("rho-r", ora.rho_r, "right reservoir density");
    c.option("start", ora.start, "dual-absorption: starting sites");
    c.option("t", ora.t, "heat: macroscopic time");
    c.option("y-lo", ora.y_lo, "heat: left end of the macroscopic interval");
    c.option("y-hi", ora.y_hi, "heat: right end of the macroscopic interval");
    c.option("tol", ora.tol, "boundary-stationary: convergence tolerance of the cap doubling");
    ora.profile.attach(c);
    c.body = [&](const Context& ctx) { return run_oracle(ora, ctx); };
  }

  // argv without the program name; --config is expanded here
  std::vector<std::string> args(argv + (argc > 0 ? 1 : 0), argv + argc);
  Command* selected = nullptr;
  try {
    std::size_t sub_pos = args.size();
    for (std::size_t i = 0; i < args.size() && !selected; ++i)
      for (auto& c : commands)
        if (args[i] == c->name()) {
          selected = c.get();
          sub_pos = i;
          break;
        }
    if (selected != nullptr) {
      std::string config_path;
      std::set<std::string> given;
      std::vector<std::string> kept(args.begin(), args.begin() + static_cast<long>(sub_pos) + 1);
      for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a == "--config" && i + 1 < args.size()) {
          config_path = args[++i];
          continue;
        }
        if (a.rfind("--config=", 0) == 0) {
          config_path = a.substr(9);
          continue;
        }
        if (a.rfind("--", 0) == 0) given.insert(normalize_key(a.substr(2, a.find('=') - 2)));
        kept.push_back(a);
      }
      if (!config_path.empty()) {
        const auto extra = config_tokens(*selected, load_config_file(config_path), given);
        kept.insert(kept.begin() + static_cast<long>(sub_pos) + 1, extra.begin(), extra.end());
      }
      args = std::move(kept);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 1;
  }
  for (auto& c : commands)
    if (c->app()->parsed()) selected = c.get();
  if (selected == nullptr) {
    err << "error: no subcommand\n";
    return 1;
  }

  Context ctx{common.seed, common.threads, common.quiet, &err};
  const json config = selected->echo();
  const auto started = std::chrono::steady_clock::now();
  Table table;
  try {
    table = selected->body(ctx);
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const RangeError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const StateSpaceOverflow& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const SimulationAbort& e) {
    err << "aborted: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return 2;
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  if (!common.output.empty()) {
    try {
      const std::filesystem::path csv = common.output;
      write_files_atomically({{csv, csv_text(table, selected->name(), common.seed, config)},
                              {json_path_for(csv),
                               json_mirror(table, selected->name(), common.seed, config, wall).dump(2) + "\n"}});
    } catch (const std::exception& e) {
      err << "error: cannot write output: " << e.what() << '\n';
      return 2;
    }
  }
  for (const auto& line : table.summary) out << line << '\n';
  out << std::flush;
  return 0;
}

}  // namespace sip::cli
