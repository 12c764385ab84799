// Copyright 2026 the trichord authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "trichord/lookup.hpp"
#include "trichord/simnet.hpp"

namespace trichord {

enum class ModelKind { Flat, Hierarchical };

inline const char* model_name(ModelKind m) {
  return m == ModelKind::Flat ? "flat" : "hierarchical";
}

/// One experiment, as read from a flat `key = value` config file.
struct ExperimentConfig {
  ModelKind model = ModelKind::Hierarchical;
  std::uint64_t peers = 0;   // N
  std::uint64_t ultras = 0;  // U (hierarchical only)
  std::uint64_t supers = 0;  // S (hierarchical only)
  unsigned id_bits = 16;     // m
  double q_local = 0;        // Q: share of lookups aimed at the own group
  std::uint64_t lookups = 0;
  std::uint64_t seed = 1;
  WorkloadMode workload = WorkloadMode::Uniform;
  int keys_per_peer = 1;
  double ping_period_s = 5;
  double stabilize_period_s = 10;
  int fail_threshold = 3;
  double latency_low_ms = 30;
  double latency_high_ms = 100;
  ChurnModel churn;
  double churn_duration_s = 0;
  std::uint64_t churn_max_events = 0;

  void validate() const {
    if (id_bits < 1 || id_bits > IdSpace::kMaxBits)
      throw config_error("m must be in [1, 160]");
    if (peers < 1) throw config_error("N must be at least 1");
    if (model == ModelKind::Hierarchical) {
      if (ultras < 1) throw config_error("hierarchical model needs U >= 1");
      if (supers < ultras) throw config_error("S must be >= U");
      if (peers < supers + ultras)
        throw config_error("N must be >= S + U");
    }
    if (q_local < 0 || q_local > 1) throw config_error("Q must be in [0, 1]");
    if (keys_per_peer < 0) throw config_error("keys_per_peer must be >= 0");
    if (latency_low_ms > latency_high_ms || latency_low_ms < 0)
      throw config_error("latency range must satisfy 0 <= low <= high");
    if (ping_period_s <= 0 || stabilize_period_s <= 0)
      throw config_error("tick periods must be positive");
    if (fail_threshold < 1) throw config_error("fail threshold must be >= 1");
    if (churn.join_rate < 0 || churn.leave_rate < 0)
      throw config_error("churn rates must be >= 0");
    if (churn.fail_fraction < 0 || churn.fail_fraction > 1)
      throw config_error("churn_fail_fraction must be in [0, 1]");
    if (churn_duration_s < 0)
      throw config_error("churn_duration_s must be >= 0");
  }

  void set(const std::string& key, const std::string& value) {
    auto as_u64 = [&] { return std::stoull(value); };
    auto as_dbl = [&] { return std::stod(value); };
    if (key == "model") {
      if (value == "flat")
        model = ModelKind::Flat;
      else if (value == "hierarchical")
        model = ModelKind::Hierarchical;
      else
        throw config_error("model must be flat or hierarchical");
    } else if (key == "N") {
      peers = as_u64();
    } else if (key == "U") {
      ultras = as_u64();
    } else if (key == "S") {
      supers = as_u64();
    } else if (key == "m") {
      id_bits = static_cast<unsigned>(as_u64());
    } else if (key == "Q") {
      q_local = as_dbl();
    } else if (key == "lookups") {
      lookups = as_u64();
    } else if (key == "seed") {
      seed = as_u64();
    } else if (key == "workload") {
      if (value == "uniform")
        workload = WorkloadMode::Uniform;
      else if (value == "local")
        workload = WorkloadMode::Local;
      else if (value == "same_ultra")
        workload = WorkloadMode::SameUltra;
      else if (value == "remote")
        workload = WorkloadMode::Remote;
      else
        throw config_error("unknown workload: " + value);
    } else if (key == "keys_per_peer") {
      keys_per_peer = static_cast<int>(as_u64());
    } else if (key == "ping_period_s") {
      ping_period_s = as_dbl();
    } else if (key == "stabilize_period_s") {
      stabilize_period_s = as_dbl();
    } else if (key == "fail_threshold") {
      fail_threshold = static_cast<int>(as_u64());
    } else if (key == "latency_low_ms") {
      latency_low_ms = as_dbl();
    } else if (key == "latency_high_ms") {
      latency_high_ms = as_dbl();
    } else if (key == "churn_join_rate") {
      churn.join_rate = as_dbl();
    } else if (key == "churn_leave_rate") {
      churn.leave_rate = as_dbl();
    } else if (key == "churn_fail_fraction") {
      churn.fail_fraction = as_dbl();
    } else if (key == "churn_weight_ordinary") {
      churn.weight_ordinary = as_dbl();
    } else if (key == "churn_weight_super") {
      churn.weight_super = as_dbl();
    } else if (key == "churn_weight_ultra") {
      churn.weight_ultra = as_dbl();
    } else if (key == "churn_duration_s") {
      churn_duration_s = as_dbl();
    } else if (key == "churn_max_events") {
      churn_max_events = as_u64();
    } else {
      throw config_error("unknown config key: " + key);
    }
  }

  static ExperimentConfig parse(std::istream& in) {
    ExperimentConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw config_error("config line " + std::to_string(lineno) +
                           ": expected key = value");
      try {
        cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
      } catch (const config_error&) {
        throw;
      } catch (const std::exception& ex) {
        throw config_error("config line " + std::to_string(lineno) + ": " +
                           ex.what());
      }
    }
    return cfg;
  }

  static ExperimentConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    return parse(in);
  }

  std::uint64_t ping_ms() const {
    return static_cast<std::uint64_t>(ping_period_s * 1000.0);
  }
  std::uint64_t stabilize_ms() const {
    return static_cast<std::uint64_t>(stabilize_period_s * 1000.0);
  }
};

struct MetricsReport {
  std::uint64_t total_lookups = 0;
  double mean_hops = 0;
  double p95_hops = 0;
  double mean_latency_ms = 0;
  double p95_latency_ms = 0;
  std::uint64_t case_a_n = 0, case_b_n = 0, case_c_n = 0;
  double case_a_mean_hops = 0, case_b_mean_hops = 0, case_c_mean_hops = 0;
  double case_c_ring_hops_mean = 0;
  double predicted_flat_hops = 0;  // 1/2 * log2(N)
  double predicted_ring_hops = 0;  // 1/2 * log2(U)
  std::uint64_t lost_keys = 0;
  std::uint64_t failed_lookups = 0;

  static const char* csv_header() {
    return "model,N,U,S,m,Q,seed,mean_hops,p95_hops,mean_latency_ms,"
           "p95_latency_ms,caseA_n,caseB_n,caseC_n,caseC_ring_hops_mean,"
           "predicted_flat_hops,predicted_ring_hops,lost_keys,failed_lookups";
  }

  std::string csv_row(const ExperimentConfig& cfg) const {
    char buf[512];
    std::snprintf(
        buf, sizeof(buf),
        "%s,%llu,%llu,%llu,%u,%.6f,%llu,%.6f,%.6f,%.6f,%.6f,%llu,%llu,%llu,"
        "%.6f,%.6f,%.6f,%llu,%llu",
        model_name(cfg.model),
        static_cast<unsigned long long>(cfg.peers),
        static_cast<unsigned long long>(cfg.ultras),
        static_cast<unsigned long long>(cfg.supers), cfg.id_bits, cfg.q_local,
        static_cast<unsigned long long>(cfg.seed), mean_hops, p95_hops,
        mean_latency_ms, p95_latency_ms,
        static_cast<unsigned long long>(case_a_n),
        static_cast<unsigned long long>(case_b_n),
        static_cast<unsigned long long>(case_c_n), case_c_ring_hops_mean,
        predicted_flat_hops, predicted_ring_hops,
        static_cast<unsigned long long>(lost_keys),
        static_cast<unsigned long long>(failed_lookups));
    return buf;
  }

  std::string summary(const ExperimentConfig& cfg) const {
    std::ostringstream os;
    os << "model=" << model_name(cfg.model) << " N=" << cfg.peers;
    if (cfg.model == ModelKind::Hierarchical)
      os << " U=" << cfg.ultras << " S=" << cfg.supers;
    os << " m=" << cfg.id_bits << " seed=" << cfg.seed << "\n";
    char line[256];
    std::snprintf(line, sizeof(line),
                  "lookups=%llu mean_hops=%.3f p95_hops=%.1f "
                  "mean_latency=%.2fms p95_latency=%.2fms\n",
                  static_cast<unsigned long long>(total_lookups), mean_hops,
                  p95_hops, mean_latency_ms, p95_latency_ms);
    os << line;
    if (cfg.model == ModelKind::Hierarchical) {
      std::snprintf(line, sizeof(line),
                    "cases: A n=%llu mean=%.3f | B n=%llu mean=%.3f | C "
                    "n=%llu mean=%.3f ring_mean=%.3f\n",
                    static_cast<unsigned long long>(case_a_n),
                    case_a_mean_hops,
                    static_cast<unsigned long long>(case_b_n),
                    case_b_mean_hops,
                    static_cast<unsigned long long>(case_c_n),
                    case_c_mean_hops, case_c_ring_hops_mean);
      os << line;
      std::snprintf(line, sizeof(line),
                    "predicted: flat 0.5*log2(N)=%.3f hops, O(log N); "
                    "hierarchical ring 0.5*log2(U)=%.3f hops, O(log U + 1 + "
                    "1)\n",
                    predicted_flat_hops, predicted_ring_hops);
      os << line;
    } else {
      std::snprintf(line, sizeof(line),
                    "predicted: 0.5*log2(N)=%.3f hops, O(log N)\n",
                    predicted_flat_hops);
      os << line;
    }
    os << "lost_keys=" << lost_keys << " failed_lookups=" << failed_lookups
       << "\n";
    return os.str();
  }
};

namespace detail {

inline double percentile95(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const std::size_t idx = static_cast<std::size_t>(
      std::ceil(0.95 * static_cast<double>(v.size())));
  return v[idx == 0 ? 0 : idx - 1];
}

inline Id draw_unused_id(RngStream& stream, const IdSpace& space,
                         std::set<Id>& used) {
  for (int attempt = 0; attempt < 4096; ++attempt) {
    const Id id = stream.uniform_id(space);
    if (used.insert(id).second) return id;
  }
  throw config_error("identifier space too small for the requested overlay");
}

}  // namespace detail

/// Builds the scripted time-zero schedule: layer joins in ultra / super /
/// ordinary order, one publish per key per peer, then the first ticks.
/// Superpeer ids are drawn one-per-ultra-arc first so every arc can place
/// ordinaries, then the rest uniformly.
inline Simulation build_simulation(const ExperimentConfig& cfg) {
  cfg.validate();
  const IdSpace space(cfg.id_bits);
  SimParams sp;
  sp.ping_period_ms = cfg.ping_ms();
  sp.stabilize_period_ms = cfg.stabilize_ms();
  sp.latency_low_ms = cfg.latency_low_ms;
  sp.latency_high_ms = cfg.latency_high_ms;
  sp.keys_per_peer = cfg.keys_per_peer;
  sp.q_local = cfg.q_local;
  sp.workload = cfg.workload;

  Simulation sim =
      cfg.model == ModelKind::Hierarchical
          ? Simulation::hierarchical(space, OverlayParams{cfg.fail_threshold},
                                     sp, cfg.seed)
          : Simulation::flat(space, sp, cfg.seed);
  sim.add_meta("# trichord-event-log v1");
  sim.add_meta(std::string("# model=") + model_name(cfg.model) +
               " m=" + std::to_string(cfg.id_bits) +
               " seed=" + std::to_string(cfg.seed) +
               " threshold=" + std::to_string(cfg.fail_threshold) +
               " ping_ms=" + std::to_string(cfg.ping_ms()) +
               " stabilize_ms=" + std::to_string(cfg.stabilize_ms()));

  Streams& st = sim.streams();
  std::set<Id> used;
  std::vector<Id> all_peers;

  auto scripted_join = [&](Id id, Role role) {
    JoinPayload jp;
    jp.role = role;
    jp.profile.capacity =
        st.churn.range(sp.capacity_low, sp.capacity_high);
    jp.profile.availability =
        st.churn.range(sp.availability_low, sp.availability_high);
    jp.profile.firewall_open = st.churn.bernoulli(sp.firewall_open_prob);
    jp.wants_upgrade = st.churn.bernoulli(sp.wants_upgrade_prob);
    jp.latency_ms =
        draw_latency(st.latency, role, sp.latency_low_ms, sp.latency_high_ms);
    sim.schedule(0, EventKind::Join, id, jp);
    all_peers.push_back(id);
  };

  if (cfg.model == ModelKind::Hierarchical) {
    std::vector<Id> ultra_ids;
    for (std::uint64_t i = 0; i < cfg.ultras; ++i)
      ultra_ids.push_back(detail::draw_unused_id(st.ids, space, used));
    std::sort(ultra_ids.begin(), ultra_ids.end());
    for (Id u : ultra_ids) scripted_join(u, Role::UltraSuper);

    // One superpeer inside every ultra arc, so each arc can host peers.
    const Wide modulus = Wide::pow2(cfg.id_bits);
    for (std::size_t i = 0; i < ultra_ids.size(); ++i) {
      const Id prev = ultra_ids[(i + ultra_ids.size() - 1) % ultra_ids.size()];
      const Id u = ultra_ids[i];
      Wide arc = id_distance(prev, u, space);
      if (arc.is_zero()) arc = modulus;  // a single ultra owns the circle
      bool placed = false;
      for (int attempt = 0; attempt < 4096 && !placed; ++attempt) {
        if (arc <= Wide::from_u64(1)) break;
        const Wide offset =
            st.ids.below_wide(arc - Wide::from_u64(1)) + Wide::from_u64(1);
        const Id sid = id_add(prev, offset, space);
        if (used.insert(sid).second) {
          scripted_join(sid, Role::Super);
          placed = true;
        }
      }
      if (!placed)
        throw config_error("cannot place a superpeer in every ultra arc");
    }
    for (std::uint64_t i = cfg.ultras; i < cfg.supers; ++i)
      scripted_join(detail::draw_unused_id(st.ids, space, used), Role::Super);
    const std::uint64_t ordinaries = cfg.peers - cfg.supers - cfg.ultras;
    for (std::uint64_t i = 0; i < ordinaries; ++i)
      scripted_join(detail::draw_unused_id(st.ids, space, used),
                    Role::Ordinary);
  } else {
    for (std::uint64_t i = 0; i < cfg.peers; ++i)
      scripted_join(detail::draw_unused_id(st.ids, space, used),
                    Role::Ordinary);
  }

  for (Id p : all_peers) {
    for (int j = 0; j < cfg.keys_per_peer; ++j) {
      const Id key =
          hash_id("k:" + to_string(p) + ":" + std::to_string(j), space);
      sim.schedule(0, EventKind::Publish, p, PublishPayload{key});
    }
  }
  sim.start_ticks(0);
  return sim;
}

/// Time after which scheduled churn has been detected and repaired: the
/// PING threshold must elapse, then stabilization must settle.
inline std::uint64_t settle_window_ms(const ExperimentConfig& cfg) {
  return static_cast<std::uint64_t>(cfg.fail_threshold + 2) * cfg.ping_ms() +
         3 * cfg.stabilize_ms();
}

struct RunArtifacts {
  std::string event_log;
  std::vector<LookupTrace> traces;
  std::uint64_t churn_events = 0;
  std::size_t violations = 0;
};

inline MetricsReport summarize(const ExperimentConfig& cfg,
                               const Simulation& sim) {
  MetricsReport r;
  const std::vector<LookupTrace>& ts = sim.traces();
  r.total_lookups = ts.size();
  std::vector<double> hops, lat;
  hops.reserve(ts.size());
  lat.reserve(ts.size());
  double hop_sum = 0, lat_sum = 0;
  double a_sum = 0, b_sum = 0, c_sum = 0, c_ring_sum = 0;
  for (const LookupTrace& t : ts) {
    hops.push_back(t.hops);
    lat.push_back(t.latency_ms);
    hop_sum += t.hops;
    lat_sum += t.latency_ms;
    if (!t.found) ++r.failed_lookups;
    switch (t.level) {
      case ResolutionLevel::LocalSuper:
        ++r.case_a_n;
        a_sum += t.hops;
        break;
      case ResolutionLevel::OwnUltra:
        ++r.case_b_n;
        b_sum += t.hops;
        break;
      case ResolutionLevel::Ring:
        ++r.case_c_n;
        c_sum += t.hops;
        c_ring_sum += t.ring_hops;
        break;
    }
  }
  if (!ts.empty()) {
    r.mean_hops = hop_sum / static_cast<double>(ts.size());
    r.mean_latency_ms = lat_sum / static_cast<double>(ts.size());
    r.p95_hops = detail::percentile95(hops);
    r.p95_latency_ms = detail::percentile95(lat);
  }
  if (r.case_a_n > 0) r.case_a_mean_hops = a_sum / static_cast<double>(r.case_a_n);
  if (r.case_b_n > 0) r.case_b_mean_hops = b_sum / static_cast<double>(r.case_b_n);
  if (r.case_c_n > 0) {
    r.case_c_mean_hops = c_sum / static_cast<double>(r.case_c_n);
    r.case_c_ring_hops_mean = c_ring_sum / static_cast<double>(r.case_c_n);
  }
  r.predicted_flat_hops = 0.5 * std::log2(static_cast<double>(cfg.peers));
  r.predicted_ring_hops =
      cfg.ultras >= 1 ? 0.5 * std::log2(static_cast<double>(cfg.ultras)) : 0;

  if (cfg.model == ModelKind::Hierarchical) {
    r.lost_keys = sim.overlay().coverage_gaps().size();
  } else {
    // A key of a live publisher is lost when its row is missing at the
    // current ring owner.
    const FlatModel& net = sim.flat();
    for (const auto& [node, keys] : net.published()) {
      if (!net.ring().contains(node)) continue;
      for (Id k : keys) {
        const auto* pubs = net.stored_at(net.ring().owner_of(k), k);
        if (pubs == nullptr || pubs->count(node) == 0) ++r.lost_keys;
      }
    }
  }
  return r;
}

/// Builds the overlay, runs the configured churn to quiescence, measures
/// the lookup workload, and aggregates the report. Everything is a pure
/// function of (seed, config).
inline MetricsReport run_experiment(const ExperimentConfig& cfg,
                                    RunArtifacts* artifacts = nullptr) {
  Simulation sim = build_simulation(cfg);
  std::uint64_t t = 1000;  // build settles during the first second
  if (cfg.churn.total_rate() > 0 && cfg.churn_duration_s > 0) {
    const std::uint64_t churn_end =
        t + static_cast<std::uint64_t>(cfg.churn_duration_s * 1000.0);
    sim.enable_churn(cfg.churn, t, churn_end, cfg.churn_max_events);
    t = churn_end;
  }
  t += settle_window_ms(cfg);
  sim.run_until(t);
  for (std::uint64_t i = 0; i < cfg.lookups; ++i)
    sim.schedule(t + 1 + i, EventKind::Lookup, std::nullopt, LookupPayload{});
  sim.run_until(t + 1 + cfg.lookups);

  MetricsReport r = summarize(cfg, sim);
  if (artifacts != nullptr) {
    artifacts->event_log = sim.log_text();
    artifacts->traces = sim.traces();
    artifacts->churn_events = sim.churn_events_executed();
    artifacts->violations = cfg.model == ModelKind::Hierarchical
                                ? sim.overlay().validate().size()
                                : 0;
  }
  return r;
}

/// One CSV row per config, header first, in config order.
inline void sweep(const std::vector<ExperimentConfig>& configs,
                  std::ostream& out) {
  if (configs.empty()) throw config_error("sweep: no configs given");
  out << MetricsReport::csv_header() << "\n";
  for (const ExperimentConfig& cfg : configs) {
    const MetricsReport r = run_experiment(cfg);
    out << r.csv_row(cfg) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Oracle checks: routed lookups vs god's-eye linear scans.

struct OracleReport {
  std::uint64_t checked = 0;
  std::vector<std::string> mismatches;
  bool ok() const { return mismatches.empty(); }
};

namespace detail {

/// Linear-scan successor over a plain sorted vector; deliberately shares
/// no code with Ring routing.
inline Id scan_owner(const std::vector<Id>& sorted_ids, Id key) {
  for (Id id : sorted_ids)
    if (!(id < key)) return id;
  return sorted_ids.front();
}

inline std::string describe_trace(const LookupTrace& t) {
  std::string s = "origin=" + to_string(t.origin) + " key=" + to_string(t.key) +
                  " found=" + (t.found ? "1" : "0") +
                  " hops=" + std::to_string(t.hops) + " path=";
  for (std::size_t i = 0; i < t.path.size(); ++i) {
    if (i > 0) s += "->";
    s += to_string(t.path[i].peer);
  }
  return s;
}

}  // namespace detail

/// Compares hierarchical lookups against the live key registry and flat
/// lookups against a linear-scan ownership oracle, for the given (origin,
/// key) pairs.
inline void oracle_check_hier(Overlay& overlay, Id origin, Id key,
                              const std::map<Id, std::set<Id>>& registry,
                              OracleReport& rep) {
  const LookupTrace t = hierarchical_lookup_key(overlay, origin, key);
  ++rep.checked;
  auto it = registry.find(key);
  const bool expect_found = it != registry.end() && !it->second.empty();
  if (t.found != expect_found) {
    rep.mismatches.push_back("hier found mismatch (expected " +
                             std::string(expect_found ? "found" : "absent") +
                             "): " + detail::describe_trace(t));
    return;
  }
  if (t.found) {
    for (Id p : t.publishers) {
      if (it->second.count(p) == 0) {
        rep.mismatches.push_back("hier returned non-publisher " +
                                 to_string(p) + ": " +
                                 detail::describe_trace(t));
        return;
      }
    }
  }
}

inline void oracle_check_flat(FlatModel& net, Id origin, Id key,
                              const std::vector<Id>& sorted_nodes,
                              const std::map<Id, std::set<Id>>& registry,
                              OracleReport& rep) {
  const LookupTrace t = flat_lookup_key(net, origin, key);
  ++rep.checked;
  const Id expected_owner = detail::scan_owner(sorted_nodes, key);
  const Id routed_owner = t.owner;
  if (routed_owner != expected_owner) {
    rep.mismatches.push_back("flat owner mismatch (expected " +
                             to_string(expected_owner) + "): " +
                             detail::describe_trace(t));
    return;
  }
  auto it = registry.find(key);
  const bool expect_found = it != registry.end() && !it->second.empty();
  if (t.found != expect_found)
    rep.mismatches.push_back("flat found mismatch: " +
                             detail::describe_trace(t));
}

inline OracleReport oracle_check_on(Overlay& overlay, FlatModel& net,
                                    std::uint64_t samples, bool exhaustive,
                                    std::uint64_t seed) {
  OracleReport rep;
  const IdSpace& space = overlay.space();
  const std::map<Id, std::set<Id>> hier_registry = overlay.live_key_registry();
  std::map<Id, std::set<Id>> flat_registry;
  for (const auto& [node, keys] : net.published())
    if (net.ring().contains(node))
      for (Id k : keys) flat_registry[k].insert(node);

  const std::vector<Id> origins = overlay.ids_of(Role::Ordinary);
  std::vector<Id> nodes;
  for (const auto& [id, n] : net.ring().nodes()) nodes.push_back(id);

  if (exhaustive) {
    if (space.bits() > 8)
      throw config_error("exhaustive oracle check needs m <= 8");
    const std::uint64_t limit = std::uint64_t{1} << space.bits();
    for (std::uint64_t k = 0; k < limit; ++k) {
      const Id key{k};
      for (Id o : origins) oracle_check_hier(overlay, o, key, hier_registry, rep);
      for (Id n : nodes) oracle_check_flat(net, n, key, nodes, flat_registry, rep);
    }
    return rep;
  }

  RngStream rng(Streams::fork(seed, "oracle"));
  std::vector<Id> hier_keys, flat_keys;
  for (const auto& [k, v] : hier_registry) hier_keys.push_back(k);
  for (const auto& [k, v] : flat_registry) flat_keys.push_back(k);
  for (std::uint64_t i = 0; i < samples; ++i) {
    // Half the draws target published keys, half arbitrary ids.
    const bool published = rng.bernoulli(0.5);
    if (!origins.empty()) {
      const Id o = origins[rng.below(origins.size())];
      const Id key = published && !hier_keys.empty()
                         ? hier_keys[rng.below(hier_keys.size())]
                         : rng.uniform_id(space);
      oracle_check_hier(overlay, o, key, hier_registry, rep);
    }
    if (!nodes.empty()) {
      const Id n = nodes[rng.below(nodes.size())];
      const Id key = published && !flat_keys.empty()
                         ? flat_keys[rng.below(flat_keys.size())]
                         : rng.uniform_id(space);
      oracle_check_flat(net, n, key, nodes, flat_registry, rep);
    }
  }
  return rep;
}

/// Builds both models from the config at quiescence and cross-checks the
/// lookup paths against the oracles.
inline OracleReport oracle_check(const ExperimentConfig& cfg,
                                 std::uint64_t samples, bool exhaustive) {
  ExperimentConfig hier_cfg = cfg;
  hier_cfg.model = ModelKind::Hierarchical;
  hier_cfg.lookups = 0;
  ExperimentConfig flat_cfg = cfg;
  flat_cfg.model = ModelKind::Flat;
  flat_cfg.lookups = 0;
  Simulation hs = build_simulation(hier_cfg);
  Simulation fs = build_simulation(flat_cfg);
  const std::uint64_t settle = 1000 + settle_window_ms(cfg);
  hs.run_until(settle);
  fs.run_until(settle);
  return oracle_check_on(hs.overlay(), fs.flat(), samples, exhaustive,
                         cfg.seed);
}

// ---------------------------------------------------------------------------
// Event-log replay: rebuilds the run from the log and re-executes it,
// verifying that lookups resolve exactly as recorded.

struct ReplayResult {
  std::uint64_t events = 0;
  std::uint64_t lookups = 0;
  std::uint64_t mismatches = 0;
  std::size_t violations = 0;
  std::map<std::string, std::uint64_t> kind_counts;
  bool ok() const { return mismatches == 0 && violations == 0; }
};

namespace detail {

inline std::map<std::string, std::string> parse_detail(
    const std::string& detail) {
  std::map<std::string, std::string> kv;
  std::size_t pos = 0;
  while (pos < detail.size()) {
    std::size_t end = detail.find(';', pos);
    if (end == std::string::npos) end = detail.size();
    const std::string item = detail.substr(pos, end - pos);
    const std::size_t eq = item.find('=');
    if (eq != std::string::npos)
      kv[item.substr(0, eq)] = item.substr(eq + 1);
    pos = end + 1;
  }
  return kv;
}

}  // namespace detail

inline ReplayResult replay_log(std::istream& in) {
  ReplayResult res;
  std::string line;
  std::optional<IdSpace> space;
  bool hierarchical = true;
  int threshold = 3;
  std::unique_ptr<Overlay> overlay;
  std::unique_ptr<FlatModel> flat;

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ms(line.substr(1));
      std::string tok;
      while (ms >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
        if (k == "m") space.emplace(static_cast<unsigned>(std::stoul(v)));
        if (k == "model") hierarchical = (v == "hierarchical");
        if (k == "threshold") threshold = std::stoi(v);
      }
      continue;
    }
    if (!space) throw config_error("replay: log has no '# m=...' meta line");
    if (!overlay && !flat) {
      if (hierarchical)
        overlay = std::make_unique<Overlay>(*space,
                                            OverlayParams{threshold});
      else
        flat = std::make_unique<FlatModel>(*space);
    }

    // time_ms,seq,kind,subject,detail — detail never contains commas.
    std::vector<std::string> f;
    std::size_t pos = 0;
    for (int i = 0; i < 4; ++i) {
      const std::size_t c = line.find(',', pos);
      if (c == std::string::npos)
        throw config_error("replay: malformed log line: " + line);
      f.push_back(line.substr(pos, c - pos));
      pos = c + 1;
    }
    f.push_back(line.substr(pos));
    const std::uint64_t time_ms = std::stoull(f[0]);
    const auto kind = event_kind_from(f[2]);
    if (!kind) throw config_error("replay: unknown event kind: " + f[2]);
    const std::string& subject = f[3];
    const auto kv = detail::parse_detail(f[4]);
    ++res.events;
    ++res.kind_counts[f[2]];

    const bool rejected = kv.count("rejected") != 0;
    switch (*kind) {
      case EventKind::Join: {
        if (subject == "-" || rejected) break;
        const Id id = parse_id(subject);
        const double lat = std::stod(kv.at("lat"));
        if (flat) {
          if (kv.count("direct") != 0 || flat->ring().empty())
            flat->add_node(id, lat);
          else
            flat->join_node(id, flat->ring().nodes().begin()->first, lat);
          break;
        }
        PeerState ps;
        ps.id = id;
        ps.profile.capacity = std::stod(kv.at("cap"));
        ps.profile.availability = std::stod(kv.at("avail"));
        ps.profile.firewall_open = kv.at("fw") == "1";
        ps.wants_upgrade = kv.at("up") == "1";
        ps.link_latency_ms = lat;
        const std::string role = kv.at("role");
        if (role == "ultra") {
          ps.role = Role::UltraSuper;
          overlay->add_ultra(std::move(ps));
        } else if (role == "super") {
          ps.role = Role::Super;
          overlay->add_super(std::move(ps));
        } else {
          ps.role = Role::Ordinary;
          overlay->join(std::move(ps), parse_id(kv.at("boot")), time_ms);
        }
        break;
      }
      case EventKind::Publish: {
        if (subject == "-" || rejected) break;
        if (flat)
          flat->publish_key(parse_id(subject), parse_id(kv.at("key")));
        else
          overlay->publish_key(parse_id(subject), parse_id(kv.at("key")));
        break;
      }
      case EventKind::GracefulLeave: {
        if (subject == "-" || rejected) break;
        const Id id = parse_id(subject);
        if (flat) {
          flat->remove_node(id);
          break;
        }
        const std::string role = kv.at("role");
        if (role == "ultra")
          overlay->ultra_leave(id, Departure::Graceful);
        else if (role == "super")
          overlay->super_leave(id, Departure::Graceful);
        else
          overlay->fail_peer(id);  // silent, as in the live run
        break;
      }
      case EventKind::Fail: {
        if (subject == "-" || rejected) break;
        const Id id = parse_id(subject);
        if (flat)
          flat->remove_node(id);
        else
          overlay->fail_peer(id);
        break;
      }
      case EventKind::PingTick: {
        if (overlay) overlay->ping_tick(time_ms);
        break;
      }
      case EventKind::StabilizeTick: {
        if (overlay) {
          overlay->stabilize_tick();
        } else if (flat) {
          if (!flat->ring().empty()) flat->ring().stabilize_all();
          flat->rehome_keys();
        }
        break;
      }
      case EventKind::Lookup: {
        if (subject == "-" || kv.count("key") == 0) break;
        ++res.lookups;
        const Id origin = parse_id(subject);
        const Id key = parse_id(kv.at("key"));
        LookupTrace t;
        if (overlay)
          t = hierarchical_lookup_key(*overlay, origin, key);
        else
          t = flat_lookup_key(*flat, origin, key);
        const bool found = kv.at("found") == "1";
        const int hops = std::stoi(kv.at("hops"));
        if (t.found != found || t.hops != hops) ++res.mismatches;
        break;
      }
    }
  }
  if (overlay) res.violations = overlay->validate().size();
  return res;
}

}  // namespace trichord
