// Copyright 2026 the trichord authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "trichord/errors.hpp"
#include "trichord/hierarchy.hpp"
#include "trichord/ident.hpp"
#include "trichord/lookup.hpp"

namespace trichord {

// ---------------------------------------------------------------------------
// Seeded randomness. mt19937_64 is fully specified by the standard and the
// uniform draws below avoid std::uniform_*_distribution, whose output is
// implementation-defined; runs are therefore reproducible across toolchains.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

class RngStream {
public:
  explicit RngStream(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform integer in [0, n), n >= 1. Rejection over a power-of-two mask.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    std::uint64_t mask = n - 1;
    mask |= mask >> 1;
    mask |= mask >> 2;
    mask |= mask >> 4;
    mask |= mask >> 8;
    mask |= mask >> 16;
    mask |= mask >> 32;
    for (;;) {
      const std::uint64_t v = gen_() & mask;
      if (v < n) return v;
    }
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double range(double lo, double hi) { return lo + (hi - lo) * unit(); }

  bool bernoulli(double p) { return unit() < p; }

  double exponential(double rate) { return -std::log1p(-unit()) / rate; }

  /// Uniform Wide in [0, n), n >= 1.
  Wide below_wide(const Wide& n) {
    if (n <= Wide::from_u64(1)) return Wide{};
    const Wide top = n - Wide::from_u64(1);
    const unsigned bits = top.bit_width();
    const Wide mask = Wide::pow2(bits) - Wide::from_u64(1);
    for (;;) {
      Wide v{gen_(), gen_(), gen_()};
      v = v & mask;
      if (v <= top) return v;
    }
  }

  Id uniform_id(const IdSpace& space) {
    Wide v{gen_(), gen_(), gen_()};
    return space.truncate(v);
  }

private:
  std::mt19937_64 gen_;
};

/// One master seed forked into named per-purpose streams, so adding draws
/// of one kind does not perturb the others.
struct Streams {
  RngStream ids;
  RngStream latency;
  RngStream churn;
  RngStream workload;

  explicit Streams(std::uint64_t seed)
      : ids(fork(seed, "ids")),
        latency(fork(seed, "latency")),
        churn(fork(seed, "churn")),
        workload(fork(seed, "workload")) {}

  static std::uint64_t fork(std::uint64_t seed, std::string_view name) {
    return splitmix64(seed ^ fnv1a64(name));
  }
};

/// Base link latency, drawn once at peer creation and fixed for the peer's
/// lifetime. Every layer draws from the same distribution; the halved
/// charge for upper-layer receivers is applied at accounting time.
inline double draw_latency(RngStream& stream, Role /*role*/, double lo_ms,
                           double hi_ms) {
  return stream.range(lo_ms, hi_ms);
}

// ---------------------------------------------------------------------------
// Events.

enum class EventKind {
  Join,
  GracefulLeave,
  Fail,
  Publish,
  Lookup,
  PingTick,
  StabilizeTick,
};

inline const char* event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::Join: return "join";
    case EventKind::GracefulLeave: return "graceful-leave";
    case EventKind::Fail: return "fail";
    case EventKind::Publish: return "publish";
    case EventKind::Lookup: return "lookup";
    case EventKind::PingTick: return "ping-tick";
    case EventKind::StabilizeTick: return "stabilize-tick";
  }
  return "?";
}

inline std::optional<EventKind> event_kind_from(std::string_view s) {
  for (EventKind k :
       {EventKind::Join, EventKind::GracefulLeave, EventKind::Fail,
        EventKind::Publish, EventKind::Lookup, EventKind::PingTick,
        EventKind::StabilizeTick}) {
    if (s == event_kind_name(k)) return k;
  }
  return std::nullopt;
}

/// A scripted join carries the full peer description; churn joins draw
/// theirs at execution time.
struct JoinPayload {
  Role role = Role::Ordinary;
  CapabilityProfile profile;
  double latency_ms = 0;
  bool wants_upgrade = false;
  std::optional<Id> bootstrap;  // superpeer fielding the request
  bool draw_at_execution = false;
};

struct LeavePayload {
  std::optional<Id> target;  // none: drawn from live peers at execution
  Role target_role = Role::Ordinary;
};

struct PublishPayload {
  Id key;
};

struct LookupPayload {
  std::optional<Id> origin;  // none: drawn at execution
  std::optional<Id> key;
};

struct TickPayload {};

using EventPayload = std::variant<JoinPayload, LeavePayload, PublishPayload,
                                  LookupPayload, TickPayload>;

struct Event {
  std::uint64_t time_ms = 0;
  std::uint64_t seq = 0;  // unique; breaks ties at equal times
  EventKind kind = EventKind::StabilizeTick;
  std::optional<Id> subject;
  EventPayload payload = TickPayload{};
};

struct EventOrder {
  bool operator()(const Event& a, const Event& b) const {
    if (a.time_ms != b.time_ms) return a.time_ms > b.time_ms;
    return a.seq > b.seq;  // min-heap on (time, seq)
  }
};

/// Departure rates and targeting for churn injection.
struct ChurnModel {
  double join_rate = 0;       // events per sim-second
  double leave_rate = 0;      // events per sim-second
  double fail_fraction = 0;   // of departures, [0, 1]
  double weight_ordinary = 1; // departure role distribution
  double weight_super = 0;
  double weight_ultra = 0;

  double total_rate() const { return join_rate + leave_rate; }
};

enum class WorkloadMode { Uniform, Local, SameUltra, Remote };

inline const char* workload_name(WorkloadMode m) {
  switch (m) {
    case WorkloadMode::Uniform: return "uniform";
    case WorkloadMode::Local: return "local";
    case WorkloadMode::SameUltra: return "same_ultra";
    case WorkloadMode::Remote: return "remote";
  }
  return "?";
}

struct SimParams {
  std::uint64_t ping_period_ms = 5000;
  std::uint64_t stabilize_period_ms = 10000;
  double latency_low_ms = 30;
  double latency_high_ms = 100;
  int keys_per_peer = 1;
  double q_local = 0;  // fraction of lookups aimed at the origin's group
  WorkloadMode workload = WorkloadMode::Uniform;
  // Draw bounds for churn-time capability profiles.
  double capacity_low = 1, capacity_high = 100;
  double availability_low = 60, availability_high = 86400;
  double firewall_open_prob = 0.8;
  double wants_upgrade_prob = 0.3;
};

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// The deterministic event engine. One instance drives exactly one model
/// (hierarchical overlay or flat ring); everything it does is a pure
/// function of (seed, scripted schedule, parameters).
class Simulation {
public:
  static Simulation hierarchical(IdSpace space, OverlayParams op,
                                 SimParams sp, std::uint64_t seed) {
    Simulation s(space, sp, seed);
    s.overlay_ = std::make_unique<Overlay>(space, op);
    return s;
  }

  static Simulation flat(IdSpace space, SimParams sp, std::uint64_t seed) {
    Simulation s(space, sp, seed);
    s.flat_ = std::make_unique<FlatModel>(space);
    return s;
  }

  bool is_hierarchical() const { return overlay_ != nullptr; }
  Overlay& overlay() { return *overlay_; }
  const Overlay& overlay() const { return *overlay_; }
  FlatModel& flat() { return *flat_; }
  const FlatModel& flat() const { return *flat_; }

  Streams& streams() { return streams_; }
  const SimParams& params() const { return params_; }
  std::uint64_t clock_ms() const { return clock_ms_; }
  const std::vector<LookupTrace>& traces() const { return traces_; }
  const std::vector<std::string>& log_lines() const { return log_; }

  std::string log_text() const {
    std::string out;
    for (const std::string& l : meta_) {
      out += l;
      out += '\n';
    }
    for (const std::string& l : log_) {
      out += l;
      out += '\n';
    }
    return out;
  }

  void add_meta(std::string line) { meta_.push_back(std::move(line)); }

  /// Enqueue one event. Events strictly before the current clock are
  /// rejected; equal-time events run in schedule order.
  std::uint64_t schedule(std::uint64_t time_ms, EventKind kind,
                         std::optional<Id> subject, EventPayload payload) {
    if (time_ms < clock_ms_)
      throw scheduling_error("schedule: event at " + std::to_string(time_ms) +
                             "ms is before the clock (" +
                             std::to_string(clock_ms_) + "ms)");
    Event e;
    e.time_ms = time_ms;
    e.seq = next_seq_++;
    e.kind = kind;
    e.subject = subject;
    e.payload = std::move(payload);
    const std::uint64_t seq = e.seq;
    queue_.push(std::move(e));
    return seq;
  }

  void start_ticks(std::uint64_t from_ms) {
    schedule(from_ms, EventKind::StabilizeTick, std::nullopt, TickPayload{});
    schedule(from_ms, EventKind::PingTick, std::nullopt, TickPayload{});
    ticks_on_ = true;
  }

  void stop_ticks_after(std::uint64_t t_ms) { ticks_until_ = t_ms; }

  void enable_churn(const ChurnModel& model, std::uint64_t from_ms,
                    std::uint64_t until_ms, std::uint64_t max_events = 0) {
    churn_ = model;
    churn_until_ms_ = until_ms;
    churn_budget_ = max_events == 0 ? UINT64_MAX : max_events;
    if (model.total_rate() <= 0) return;
    schedule_next_churn(from_ms);
  }

  std::uint64_t churn_events_executed() const { return churn_executed_; }

  /// Runs every event with time <= t_end, then advances the clock to t_end.
  void run_until(std::uint64_t t_end_ms) {
    while (!queue_.empty() && queue_.top().time_ms <= t_end_ms) {
      Event e = queue_.top();
      queue_.pop();
      clock_ms_ = e.time_ms;
      dispatch(e);
    }
    if (t_end_ms > clock_ms_) clock_ms_ = t_end_ms;
  }

private:
  Simulation(IdSpace space, SimParams sp, std::uint64_t seed)
      : space_(space), params_(sp), streams_(seed) {}

  void log_event(const Event& e, const std::string& detail) {
    std::string line = std::to_string(e.time_ms);
    line += ',';
    line += std::to_string(e.seq);
    line += ',';
    line += event_kind_name(e.kind);
    line += ',';
    line += e.subject ? to_string(*e.subject) : std::string("-");
    line += ',';
    line += detail;
    log_.push_back(std::move(line));
  }

  void dispatch(Event& e) {
    const bool is_churn = churn_seqs_.erase(e.seq) > 0;
    if (is_churn) {
      --churn_pending_;
      ++churn_executed_;
    }
    switch (e.kind) {
      case EventKind::Join:
        key_cache_dirty_ = true;
        run_join(e);
        break;
      case EventKind::GracefulLeave:
        key_cache_dirty_ = true;
        run_departure(e, Departure::Graceful);
        break;
      case EventKind::Fail:
        key_cache_dirty_ = true;
        run_departure(e, Departure::Failure);
        break;
      case EventKind::Publish:
        key_cache_dirty_ = true;
        run_publish(e);
        break;
      case EventKind::Lookup: run_lookup(e); break;
      case EventKind::PingTick: run_ping_tick(e); break;
      case EventKind::StabilizeTick: run_stabilize_tick(e); break;
    }
    if (is_churn) schedule_next_churn(clock_ms_);
  }

  // -- joins ----------------------------------------------------------------

  void run_join(Event& e) {
    JoinPayload p = std::get<JoinPayload>(e.payload);
    Id id{};
    if (p.draw_at_execution) {
      // Fresh address: redraw on live collision.
      do {
        id = streams_.ids.uniform_id(space_);
      } while (overlay_ ? overlay_->contains(id) : flat_->ring().contains(id));
      p.profile.capacity =
          streams_.churn.range(params_.capacity_low, params_.capacity_high);
      p.profile.availability = streams_.churn.range(
          params_.availability_low, params_.availability_high);
      p.profile.firewall_open =
          streams_.churn.bernoulli(params_.firewall_open_prob);
      p.wants_upgrade = streams_.churn.bernoulli(params_.wants_upgrade_prob);
      p.latency_ms = draw_latency(streams_.latency, p.role,
                                  params_.latency_low_ms,
                                  params_.latency_high_ms);
      e.subject = id;
    } else {
      id = *e.subject;
    }

    std::string detail = std::string("role=") + role_name(p.role) +
                         ";cap=" + fmt_double(p.profile.capacity) +
                         ";avail=" + fmt_double(p.profile.availability) +
                         ";fw=" + (p.profile.firewall_open ? "1" : "0") +
                         ";up=" + (p.wants_upgrade ? "1" : "0") +
                         ";lat=" + fmt_double(p.latency_ms);
    try {
      if (overlay_) {
        apply_overlay_join(id, p, detail);
      } else {
        apply_flat_join(id, p);
        if (!p.draw_at_execution) detail += ";direct=1";
      }
      log_event(e, detail);
      if (p.draw_at_execution) schedule_join_publishes(id);
    } catch (const error&) {
      detail += ";rejected=1";
      log_event(e, detail);
    }
  }

  void apply_overlay_join(Id id, const JoinPayload& p, std::string& detail) {
    PeerState ps;
    ps.id = id;
    ps.role = p.role;
    ps.profile = p.profile;
    ps.link_latency_ms = p.latency_ms;
    ps.wants_upgrade = p.wants_upgrade;
    switch (p.role) {
      case Role::UltraSuper:
        overlay_->add_ultra(std::move(ps));
        break;
      case Role::Super:
        overlay_->add_super(std::move(ps));
        break;
      case Role::Ordinary: {
        Id boot{};
        if (p.bootstrap) {
          boot = *p.bootstrap;
        } else {
          const std::vector<Id> supers = overlay_->ids_of(Role::Super);
          if (supers.empty()) throw placement_unavailable_error("no superpeers");
          boot = supers[streams_.churn.below(supers.size())];
        }
        detail += ";boot=" + to_string(boot);
        overlay_->join(std::move(ps), boot, clock_ms_);
        break;
      }
    }
  }

  void apply_flat_join(Id id, const JoinPayload& p) {
    if (!p.draw_at_execution || flat_->ring().empty()) {
      // Scripted build joins skip routing; the first stabilization tick
      // wires the pointers for the whole batch.
      flat_->add_node(id, p.latency_ms);
    } else {
      const Id boot = flat_->ring().nodes().begin()->first;
      flat_->join_node(id, boot, p.latency_ms);
    }
  }

  void schedule_join_publishes(Id id) {
    for (int j = 0; j < params_.keys_per_peer; ++j) {
      const Id key =
          hash_id("k:" + to_string(id) + ":" + std::to_string(j), space_);
      schedule(clock_ms_, EventKind::Publish, id, PublishPayload{key});
    }
  }

  // -- departures -----------------------------------------------------------

  void run_departure(Event& e, Departure d) {
    std::optional<Id> target = std::get<LeavePayload>(e.payload).target;
    Role role = std::get<LeavePayload>(e.payload).target_role;
    if (!target) {
      target = draw_departure_target(role);
      if (!target) {
        e.subject.reset();
        log_event(e, "target=none");
        return;
      }
      e.subject = target;
    } else {
      e.subject = target;
      if (overlay_ && overlay_->contains(*target))
        role = overlay_->peer(*target).role;
    }

    std::string detail = std::string("role=") + role_name(role);
    try {
      if (overlay_) {
        apply_overlay_departure(*target, role, d);
      } else {
        flat_->remove_node(*target);
      }
      log_event(e, detail);
    } catch (const error&) {
      detail += ";rejected=1";
      log_event(e, detail);
    }
  }

  void apply_overlay_departure(Id target, Role role, Departure d) {
    if (d == Departure::Failure) {
      // Silent crash; PING/PONG or stabilization will notice.
      overlay_->fail_peer(target);
      return;
    }
    switch (role) {
      case Role::Ordinary:
        // Ordinaries leave without telling anyone; detection is identical
        // to a failure.
        overlay_->fail_peer(target);
        break;
      case Role::Super:
        overlay_->super_leave(target, Departure::Graceful);
        break;
      case Role::UltraSuper:
        overlay_->ultra_leave(target, Departure::Graceful);
        break;
    }
  }

  std::optional<Id> draw_departure_target(Role& role_out) {
    if (!overlay_) {
      if (flat_->ring().size() <= 1) return std::nullopt;
      const auto& nodes = flat_->ring().nodes();
      std::uint64_t idx = streams_.churn.below(nodes.size());
      auto it = nodes.begin();
      std::advance(it, static_cast<long>(idx));
      return it->first;
    }
    // Pick a role by weight among roles that currently have a removable
    // member, then a uniform member of that role.
    struct Opt {
      Role role;
      double w;
      std::vector<Id> ids;
    };
    std::vector<Opt> opts;
    auto add = [&](Role r, double w) {
      if (w <= 0) return;
      std::vector<Id> ids = overlay_->ids_of(r);
      if (r == Role::UltraSuper && ids.size() <= 1) return;  // keep the ring
      if (ids.empty()) return;
      opts.push_back({r, w, std::move(ids)});
    };
    add(Role::Ordinary, churn_.weight_ordinary);
    add(Role::Super, churn_.weight_super);
    add(Role::UltraSuper, churn_.weight_ultra);
    if (opts.empty()) return std::nullopt;
    double total = 0;
    for (const Opt& o : opts) total += o.w;
    double x = streams_.churn.unit() * total;
    const Opt* chosen = &opts.back();
    for (const Opt& o : opts) {
      if (x < o.w) {
        chosen = &o;
        break;
      }
      x -= o.w;
    }
    role_out = chosen->role;
    return chosen->ids[streams_.churn.below(chosen->ids.size())];
  }

  // -- publish --------------------------------------------------------------

  void run_publish(Event& e) {
    const PublishPayload& p = std::get<PublishPayload>(e.payload);
    std::string detail = "key=" + to_string(p.key);
    try {
      if (overlay_)
        overlay_->publish_key(*e.subject, p.key);
      else
        flat_->publish_key(*e.subject, p.key);
      log_event(e, detail);
    } catch (const error&) {
      detail += ";rejected=1";
      log_event(e, detail);
    }
  }

  // -- lookups --------------------------------------------------------------

  void run_lookup(Event& e) {
    const LookupPayload& p = std::get<LookupPayload>(e.payload);
    std::optional<Id> origin = p.origin;
    std::optional<Id> key = p.key;
    if (!origin) origin = draw_lookup_origin();
    if (!origin) {
      log_event(e, "origin=none");
      return;
    }
    if (!key) key = draw_lookup_key(*origin);
    if (!key) {
      log_event(e, "key=none");
      return;
    }
    e.subject = origin;
    LookupTrace t;
    if (overlay_)
      t = hierarchical_lookup_key(*overlay_, *origin, *key);
    else
      t = flat_lookup_key(*flat_, *origin, *key);
    std::string detail = "key=" + to_string(*key) +
                         ";found=" + (t.found ? "1" : "0") +
                         ";hops=" + std::to_string(t.hops) +
                         ";ring=" + std::to_string(t.ring_hops) +
                         ";level=" +
                         (overlay_ ? resolution_name(t.level) : "-");
    log_event(e, detail);
    traces_.push_back(std::move(t));
  }

  std::optional<Id> draw_lookup_origin() {
    if (overlay_) {
      const std::vector<Id> ords = overlay_->ids_of(Role::Ordinary);
      if (ords.empty()) return std::nullopt;
      return ords[streams_.workload.below(ords.size())];
    }
    const auto& nodes = flat_->ring().nodes();
    if (nodes.empty()) return std::nullopt;
    auto it = nodes.begin();
    std::advance(it, static_cast<long>(streams_.workload.below(nodes.size())));
    return it->first;
  }

  /// Key choice: with probability q_local a key from the origin's own
  /// group; otherwise per the configured workload mode. Constrained modes
  /// scan the candidate list circularly from a random start so the draw
  /// stays deterministic and total.
  std::optional<Id> draw_lookup_key(Id origin) {
    refresh_key_cache();
    if (key_cache_.empty()) return std::nullopt;
    if (!overlay_) return key_cache_[streams_.workload.below(key_cache_.size())];

    const PeerState& o = overlay_->peer(origin);
    if (!o.superpeer || !overlay_->contains(*o.superpeer) ||
        !overlay_->peer(*o.superpeer).ultra ||
        !overlay_->contains(*overlay_->peer(*o.superpeer).ultra)) {
      // Mid-churn: the origin's parents are gone; fall back to any key.
      return key_cache_[streams_.workload.below(key_cache_.size())];
    }
    const PeerState& s = overlay_->peer(*o.superpeer);
    if (params_.q_local > 0 && streams_.workload.bernoulli(params_.q_local)) {
      if (!s.super_index.entries.empty()) {
        std::vector<Id> local;
        local.reserve(s.super_index.entries.size());
        for (const auto& [k, v] : s.super_index.entries) local.push_back(k);
        return local[streams_.workload.below(local.size())];
      }
      return std::nullopt;  // nothing local to ask for
    }
    const PeerState& u = overlay_->peer(*s.ultra);
    switch (params_.workload) {
      case WorkloadMode::Uniform:
        return key_cache_[streams_.workload.below(key_cache_.size())];
      case WorkloadMode::Local: {
        if (s.super_index.entries.empty()) return std::nullopt;
        std::vector<Id> local;
        for (const auto& [k, v] : s.super_index.entries) local.push_back(k);
        return local[streams_.workload.below(local.size())];
      }
      case WorkloadMode::SameUltra: {
        std::vector<Id> cands;
        for (const auto& [k, v] : u.ultra_index.entries)
          if (s.super_index.find(k) == nullptr) cands.push_back(k);
        if (cands.empty()) return std::nullopt;
        return cands[streams_.workload.below(cands.size())];
      }
      case WorkloadMode::Remote: {
        const std::uint64_t start =
            streams_.workload.below(key_cache_.size());
        for (std::size_t i = 0; i < key_cache_.size(); ++i) {
          const Id k =
              key_cache_[(start + i) % key_cache_.size()];
          if (s.super_index.find(k) == nullptr &&
              u.ultra_index.find(k) == nullptr)
            return k;
        }
        return std::nullopt;
      }
    }
    return std::nullopt;
  }

  void refresh_key_cache() {
    if (!key_cache_dirty_) return;
    key_cache_.clear();
    if (overlay_) {
      for (const auto& [id, p] : overlay_->peers())
        for (Id k : p.published_keys) key_cache_.push_back(k);
    } else {
      for (const auto& [id, keys] : flat_->published())
        if (flat_->ring().contains(id))
          for (Id k : keys) key_cache_.push_back(k);
    }
    std::sort(key_cache_.begin(), key_cache_.end());
    key_cache_.erase(std::unique(key_cache_.begin(), key_cache_.end()),
                     key_cache_.end());
    key_cache_dirty_ = false;
  }

  // -- ticks ----------------------------------------------------------------

  void run_ping_tick(Event& e) {
    if (overlay_) {
      const auto detected = overlay_->ping_tick(clock_ms_);
      log_event(e, "detected=" + std::to_string(detected.size()));
      if (!detected.empty()) key_cache_dirty_ = true;
    } else {
      log_event(e, "detected=0");
    }
    if (ticks_on_ && clock_ms_ + params_.ping_period_ms <= ticks_until_)
      schedule(clock_ms_ + params_.ping_period_ms, EventKind::PingTick,
               std::nullopt, TickPayload{});
  }

  void run_stabilize_tick(Event& e) {
    if (overlay_) {
      overlay_->stabilize_tick();
    } else {
      if (!flat_->ring().empty()) flat_->ring().stabilize_all();
      flat_->rehome_keys();
    }
    log_event(e, "-");
    if (ticks_on_ && clock_ms_ + params_.stabilize_period_ms <= ticks_until_)
      schedule(clock_ms_ + params_.stabilize_period_ms,
               EventKind::StabilizeTick, std::nullopt, TickPayload{});
  }

  // -- churn ----------------------------------------------------------------

  void schedule_next_churn(std::uint64_t not_before_ms) {
    if (churn_executed_ + churn_pending_ >= churn_budget_) return;
    const double gap_s = streams_.churn.exponential(churn_.total_rate());
    const std::uint64_t t =
        not_before_ms + static_cast<std::uint64_t>(gap_s * 1000.0) + 1;
    if (t > churn_until_ms_) return;
    EventKind kind;
    const double p_join = churn_.join_rate / churn_.total_rate();
    if (streams_.churn.bernoulli(p_join)) {
      kind = EventKind::Join;
    } else {
      kind = streams_.churn.bernoulli(churn_.fail_fraction)
                 ? EventKind::Fail
                 : EventKind::GracefulLeave;
    }
    ++churn_pending_;
    if (kind == EventKind::Join) {
      JoinPayload jp;
      jp.role = Role::Ordinary;
      jp.draw_at_execution = true;
      churn_seqs_.insert(schedule(t, kind, std::nullopt, jp));
    } else {
      churn_seqs_.insert(schedule(t, kind, std::nullopt, LeavePayload{}));
    }
  }

  IdSpace space_;
  SimParams params_;
  Streams streams_;

  std::unique_ptr<Overlay> overlay_;
  std::unique_ptr<FlatModel> flat_;

  std::priority_queue<Event, std::vector<Event>, EventOrder> queue_;
  std::uint64_t next_seq_ = 0;
  std::uint64_t clock_ms_ = 0;

  bool ticks_on_ = false;
  std::uint64_t ticks_until_ = UINT64_MAX;

  ChurnModel churn_;
  std::uint64_t churn_until_ms_ = 0;
  std::uint64_t churn_budget_ = 0;
  std::uint64_t churn_executed_ = 0;
  std::uint64_t churn_pending_ = 0;
  std::set<std::uint64_t> churn_seqs_;

  std::vector<LookupTrace> traces_;
  std::vector<std::string> log_;
  std::vector<std::string> meta_;
  std::vector<Id> key_cache_;
  bool key_cache_dirty_ = true;
};

}  // namespace trichord
