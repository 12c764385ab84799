// Copyright 2026 the trichord authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "trichord/chord.hpp"
#include "trichord/errors.hpp"
#include "trichord/ident.hpp"

namespace trichord {

enum class Role { Ordinary, Super, UltraSuper };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::Ordinary: return "ordinary";
    case Role::Super: return "super";
    case Role::UltraSuper: return "ultra";
  }
  return "?";
}

struct CapabilityProfile {
  double capacity = 0;        // abstract units, higher is better
  double availability = 0;    // expected remaining session time, sim-seconds
  bool firewall_open = true;
};

/// Middle-layer metadata table: key_ID -> publishers.
struct SuperIndex {
  std::map<Id, std::set<Id>> entries;

  void add(Id key, Id peer) { entries[key].insert(peer); }
  void remove(Id key, Id peer) {
    auto it = entries.find(key);
    if (it == entries.end()) return;
    it->second.erase(peer);
    if (it->second.empty()) entries.erase(it);
  }
  const std::set<Id>* find(Id key) const {
    auto it = entries.find(key);
    return it == entries.end() ? nullptr : &it->second;
  }
  std::size_t row_count() const {
    std::size_t n = 0;
    for (const auto& [k, ps] : entries) n += ps.size();
    return n;
  }
};

/// Upper-layer extended row: which peer published the key, and which
/// superpeer indexes it.
struct UltraEntry {
  Id peer;
  Id super;
  friend constexpr auto operator<=>(const UltraEntry&,
                                    const UltraEntry&) = default;
};

struct UltraIndex {
  std::map<Id, std::set<UltraEntry>> entries;

  void add(Id key, UltraEntry e) { entries[key].insert(e); }
  void remove_peer(Id key, Id peer) {
    auto it = entries.find(key);
    if (it == entries.end()) return;
    for (auto e = it->second.begin(); e != it->second.end();) {
      if (e->peer == peer)
        e = it->second.erase(e);
      else
        ++e;
    }
    if (it->second.empty()) entries.erase(it);
  }
  const std::set<UltraEntry>* find(Id key) const {
    auto it = entries.find(key);
    return it == entries.end() ? nullptr : &it->second;
  }
  void merge_from(const UltraIndex& other) {
    for (const auto& [k, es] : other.entries)
      for (const UltraEntry& e : es) entries[k].insert(e);
  }
  std::size_t row_count() const {
    std::size_t n = 0;
    for (const auto& [k, es] : entries) n += es.size();
    return n;
  }
};

/// Parent-side PING/PONG bookkeeping for one group of children.
struct LivenessState {
  std::map<Id, std::uint64_t> last_pong;
  std::map<Id, int> missed;

  void track(Id child, std::uint64_t now) {
    last_pong[child] = now;
    missed[child] = 0;
  }
  void forget(Id child) {
    last_pong.erase(child);
    missed.erase(child);
  }
};

struct PeerState {
  Id id;
  Role role = Role::Ordinary;
  CapabilityProfile profile;
  double link_latency_ms = 0;
  bool wants_upgrade = false;  // sent an upgrade-level request upward

  std::optional<Id> superpeer;  // Ordinary: its middle-layer parent
  std::optional<Id> ultra;      // Super: its upper-layer parent
  std::set<Id> group;           // Super: ordinary members
  std::set<Id> supers;          // UltraSuper: attached superpeers

  std::set<Id> published_keys;
  SuperIndex super_index;  // Super
  UltraIndex ultra_index;  // UltraSuper
  LivenessState liveness;  // Super and UltraSuper: child tracking
};

struct Placement {
  Id ultra;
  Id super;
};

enum class Departure { Graceful, Failure };

enum class ViolationKind {
  GroupLink,         // broken parent/child bidirectional links
  SuperArc,          // a superpeer outside its ultra-superpeer's arc
  OrdinaryArc,       // an ordinary outside its superpeer's arc
  IndexConsistency,  // index rows not backed by the layer below
};

struct Violation {
  ViolationKind kind;
  std::string message;
};

/// Candidate election: firewall-open members only, scored by
/// 0.5 * minmax(capacity) + 0.5 * minmax(availability), ties to the
/// smaller id. Members that asked for an upgrade form the pool consulted
/// first; the whole group is the fallback.
inline std::optional<Id> select_candidate(
    const std::vector<const PeerState*>& members) {
  auto pick = [](const std::vector<const PeerState*>& pool)
      -> std::optional<Id> {
    std::vector<const PeerState*> open;
    for (const PeerState* m : pool)
      if (m->profile.firewall_open) open.push_back(m);
    if (open.empty()) return std::nullopt;
    double cap_lo = open[0]->profile.capacity, cap_hi = cap_lo;
    double av_lo = open[0]->profile.availability, av_hi = av_lo;
    for (const PeerState* m : open) {
      cap_lo = std::min(cap_lo, m->profile.capacity);
      cap_hi = std::max(cap_hi, m->profile.capacity);
      av_lo = std::min(av_lo, m->profile.availability);
      av_hi = std::max(av_hi, m->profile.availability);
    }
    auto norm = [](double v, double lo, double hi) {
      return hi > lo ? (v - lo) / (hi - lo) : 0.0;
    };
    const PeerState* best = nullptr;
    double best_score = -1;
    for (const PeerState* m : open) {
      const double score = 0.5 * norm(m->profile.capacity, cap_lo, cap_hi) +
                           0.5 * norm(m->profile.availability, av_lo, av_hi);
      if (best == nullptr || score > best_score ||
          (score == best_score && m->id < best->id)) {
        best = m;
        best_score = score;
      }
    }
    return best->id;
  };

  std::vector<const PeerState*> upgraders;
  for (const PeerState* m : members)
    if (m->wants_upgrade) upgraders.push_back(m);
  if (auto c = pick(upgraders)) return c;
  return pick(members);
}

struct OverlayParams {
  int fail_threshold = 3;  // consecutive missed PONGs before removal
};

/// The three-layer overlay. Ultra-superpeers sit on a Chord ring; every
/// superpeer hangs off the ultra owning its id; every ordinary peer hangs
/// off the superpeer owning its id within that arc. Departed peers move
/// into a ledger that keeps their final state for latency accounting and
/// god's-eye checks.
class Overlay {
public:
  explicit Overlay(IdSpace space, OverlayParams params = {})
      : space_(space), params_(params), ring_(space) {}

  const IdSpace& space() const { return space_; }
  const OverlayParams& params() const { return params_; }
  Ring& ring() { return ring_; }
  const Ring& ring() const { return ring_; }
  const std::map<Id, PeerState>& peers() const { return peers_; }
  const std::map<Id, PeerState>& ledger() const { return ledger_; }

  bool contains(Id id) const { return peers_.count(id) != 0; }
  PeerState& peer(Id id) { return peers_.at(id); }
  const PeerState& peer(Id id) const { return peers_.at(id); }

  /// Live record, or the departed peer's final record.
  const PeerState* record_of(Id id) const {
    auto it = peers_.find(id);
    if (it != peers_.end()) return &it->second;
    auto lt = ledger_.find(id);
    return lt == ledger_.end() ? nullptr : &lt->second;
  }

  double latency_of(Id id) const {
    const PeerState* r = record_of(id);
    return r == nullptr ? 0.0 : r->link_latency_ms;
  }

  std::vector<Id> ids_of(Role role) const {
    std::vector<Id> out;
    for (const auto& [id, p] : peers_)
      if (p.role == role) out.push_back(id);
    return out;
  }

  std::size_t count_of(Role role) const {
    std::size_t n = 0;
    for (const auto& [id, p] : peers_)
      if (p.role == role) ++n;
    return n;
  }

  /// The ultra-superpeer whose ring arc owns this key.
  Id ring_owner(Id key) const { return ring_.owner_of(key); }

  // ---------------------------------------------------------------------
  // Scripted construction (direct role placement, used by the builder and
  // by tests; protocol joins go through join()).

  void add_ultra(PeerState p) {
    require_free(p.id);
    p.role = Role::UltraSuper;
    p.superpeer.reset();
    p.ultra.reset();
    ring_.insert_direct(p.id);
    peers_.emplace(p.id, std::move(p));
  }

  void add_super(PeerState p) {
    require_free(p.id);
    if (ring_.empty())
      throw placement_unavailable_error("add_super: no ultra-superpeers");
    p.role = Role::Super;
    p.superpeer.reset();
    const Id u = ring_.owner_of(p.id);
    p.ultra = u;
    peers_.emplace(p.id, std::move(p));
    peer(u).supers.insert(p.id);
  }

  // ---------------------------------------------------------------------
  // Placement.

  /// Derived placement for an id: the ultra is the ring owner of the id,
  /// the super is the id's circular successor among that ultra's supers.
  Placement assign_group(Id peer_id) const {
    if (ring_.empty())
      throw placement_unavailable_error("assign_group: no ultra-superpeers");
    const Id u = ring_.owner_of(peer_id);
    const std::set<Id>& supers = peer(u).supers;
    if (supers.empty())
      throw placement_unavailable_error(
          "assign_group: ultra " + to_string(u) + " has no superpeers");
    auto it = supers.lower_bound(peer_id);
    if (it == supers.end()) it = supers.begin();
    return Placement{u, *it};
  }

  /// A new peer always enters as an ordinary; the bootstrap superpeer
  /// fields the joining request and placement follows the id arcs.
  void join(PeerState p, Id bootstrap_super, std::uint64_t now = 0) {
    if (p.role != Role::Ordinary)
      throw error("join: new peers enter the lowest layer");
    require_free(p.id);
    if (!contains(bootstrap_super) ||
        peer(bootstrap_super).role != Role::Super)
      throw error("join: bootstrap is not a live superpeer");
    const Placement pl = assign_group(p.id);  // may throw; overlay untouched
    p.superpeer = pl.super;
    p.ultra.reset();
    const Id id = p.id;
    peers_.emplace(id, std::move(p));
    PeerState& s = peer(pl.super);
    s.group.insert(id);
    s.liveness.track(id, now);  // the ultra learns of the entry with the
                                // first metadata row the peer publishes
  }

  // ---------------------------------------------------------------------
  // Publishing.

  void publish(Id p, std::string_view key_name) {
    publish_key(p, hash_id(key_name, space_));
  }

  /// Inserts metadata for one key: into the publisher's superpeer index,
  /// into the associated ultra-superpeer's extended index, and mirrored to
  /// the ring owner of the key so ring termination stays sound. Supers and
  /// ultras publish at their own layer with themselves as peer_ID.
  void publish_key(Id p, Id key) {
    auto it = peers_.find(p);
    if (it == peers_.end()) throw error("publish: unknown peer " + to_string(p));
    PeerState& ps = it->second;
    ps.published_keys.insert(key);
    switch (ps.role) {
      case Role::Ordinary: {
        const Id s = *ps.superpeer;
        peer(s).super_index.add(key, p);
        const Id u = *peer(s).ultra;
        const UltraEntry e{p, s};
        peer(u).ultra_index.add(key, e);
        peer(ring_owner(key)).ultra_index.add(key, e);
        break;
      }
      case Role::Super: {
        ps.super_index.add(key, p);
        const UltraEntry e{p, p};
        peer(*ps.ultra).ultra_index.add(key, e);
        peer(ring_owner(key)).ultra_index.add(key, e);
        break;
      }
      case Role::UltraSuper: {
        const UltraEntry e{p, p};
        ps.ultra_index.add(key, e);
        peer(ring_owner(key)).ultra_index.add(key, e);
        break;
      }
    }
  }

  // ---------------------------------------------------------------------
  // Liveness.

  /// One PING/PONG sweep over a parent's children. Children whose miss
  /// count reaches the threshold are declared failed and handed to the
  /// matching leave handler.
  std::vector<Id> ping_round(Id parent, std::uint64_t now) {
    PeerState& par = peer(parent);
    if (par.role == Role::Ordinary)
      throw error("ping_round: ordinary peers have no children");
    const std::set<Id> children =
        par.role == Role::Super ? par.group : par.supers;
    std::vector<Id> detected;
    for (Id c : children) {
      if (contains(c)) {
        par.liveness.track(c, now);
      } else {
        const int m = ++par.liveness.missed[c];
        if (m >= params_.fail_threshold) detected.push_back(c);
      }
    }
    for (Id c : detected) {
      if (!contains(parent)) break;  // parent replaced mid-sweep
      peer(parent).liveness.forget(c);
      if (peer(parent).role == Role::Super)
        ordinary_leave(c);
      else
        super_leave(c, Departure::Failure);
    }
    return detected;
  }

  /// Abrupt disappearance: the peer's state moves to the ledger; nobody
  /// else learns until PING/PONG or stabilization notices.
  void fail_peer(Id p) {
    auto it = peers_.find(p);
    if (it == peers_.end()) return;
    if (it->second.role == Role::UltraSuper) ring_.remove(p);
    ledger_[p] = std::move(it->second);
    peers_.erase(it);
  }

  // ---------------------------------------------------------------------
  // Departures.

  /// Ordinary departure cleanup; graceful leave and detected failure are
  /// handled identically, and the call is idempotent.
  void ordinary_leave(Id p) {
    const PeerState* rec = record_of(p);
    if (rec == nullptr) return;
    if (rec->role != Role::Ordinary)
      throw error("ordinary_leave: " + to_string(p) + " is not ordinary");
    const std::optional<Id> super = rec->superpeer;
    const std::set<Id> keys = rec->published_keys;
    if (contains(p)) fail_peer(p);
    if (super && contains(*super)) {
      PeerState& s = peer(*super);
      s.group.erase(p);
      s.liveness.forget(p);
      for (Id k : keys) s.super_index.remove(k, p);
      if (s.ultra && contains(*s.ultra)) {
        PeerState& u = peer(*s.ultra);
        for (Id k : keys) u.ultra_index.remove_peer(k, p);
      }
    }
    if (!ring_.empty()) {
      for (Id k : keys) peer(ring_owner(k)).ultra_index.remove_peer(k, p);
    }
  }

  /// Superpeer departure. Graceful: the full index is transferred to the
  /// elected candidate. Failure: the candidate rebuilds its index from the
  /// ultra's extended rows naming the dead superpeer. Without a candidate
  /// the group re-homes to the surviving superpeers.
  void super_leave(Id s, Departure d) {
    const PeerState* rec = record_of(s);
    if (rec == nullptr) return;
    if (rec->role != Role::Super)
      throw error("super_leave: " + to_string(s) + " is not a superpeer");

    const PeerState snapshot = *rec;
    if (contains(s)) fail_peer(s);
    detach_super(s, snapshot.ultra);

    const std::optional<Id> cand = elect_from_group(snapshot.group);
    if (cand) {
      PeerState& c = peer(*cand);
      const std::optional<Id> old_super_of_c = c.superpeer;
      c.role = Role::Super;
      c.superpeer.reset();
      if (d == Departure::Graceful) {
        c.super_index = snapshot.super_index;
      } else {
        rebuild_super_index_from_ultra(c, s, snapshot.ultra);
      }
      // The candidate publishes at its own layer from now on.
      for (Id k : c.published_keys) c.super_index.add(k, *cand);
      // Adopt the departed superpeer's group (minus the candidate). Live
      // members re-send their metadata to the new superpeer, which covers
      // rows the transfer or rebuild could not recover.
      for (Id g : snapshot.group) {
        if (g == *cand) continue;
        c.group.insert(g);
        c.liveness.track(g, 0);
        if (contains(g)) {
          peer(g).superpeer = *cand;
          for (Id k : peer(g).published_keys) c.super_index.add(k, g);
        }
      }
      if (old_super_of_c && contains(*old_super_of_c)) {
        // normally the departed superpeer itself; erase stale membership
        PeerState& old_s = peer(*old_super_of_c);
        old_s.group.erase(*cand);
        old_s.liveness.forget(*cand);
      }
      attach_super(*cand);
      // Tell the ultra to update rows that still name the departed super.
      rewrite_super_references(s, *cand);
    } else {
      // No candidate: members fall back to the surviving arcs; any member
      // pointing at the departed superpeer is re-homed below.
    }
    rehome();
    refresh_indexes();
  }

  /// Ultra-superpeer departure. Graceful: a candidate superpeer from its
  /// own supers migrates up (its own vacancy cascades), inheriting the
  /// extended index. Failure: the ring successor absorbs the backup copy.
  void ultra_leave(Id u, Departure d) {
    const PeerState* rec = record_of(u);
    if (rec == nullptr) return;
    if (rec->role != Role::UltraSuper)
      throw error("ultra_leave: " + to_string(u) + " is not an ultra-superpeer");

    if (d == Departure::Graceful) {
      if (!contains(u)) throw error("ultra_leave: graceful leave of a dead peer");
      if (ring_.size() == 1)
        throw unsupported_topology_error(
            "ultra_leave: the last ultra-superpeer cannot leave");
      const PeerState snapshot = *rec;
      std::vector<const PeerState*> supers;
      for (Id sid : snapshot.supers)
        if (contains(sid)) supers.push_back(&peer(sid));
      const std::optional<Id> cand = select_candidate(supers);
      if (cand) {
        // Fill the candidate's own middle-layer vacancy first, then move
        // it up and hand over the extended index.
        super_vacate(*cand);
        PeerState& c = peer(*cand);
        c.role = Role::UltraSuper;
        c.ultra.reset();
        ring_.join(c.id, u);
        c.ultra_index = snapshot.ultra_index;
        fail_peer(u);  // departure itself; handover already done
        ring_.stabilize_all();
        // The new ultra announces itself to its successor so backup
        // refresh restarts immediately.
        refresh_backups();
      } else {
        const Id succ = ring_.live_successor_of(u);
        peer(succ).ultra_index.merge_from(snapshot.ultra_index);
        fail_peer(u);
        ring_.stabilize_all();
      }
    } else {
      if (contains(u)) {
        if (ring_.size() == 1)
          throw unsupported_topology_error(
              "ultra_leave: the last ultra-superpeer cannot leave");
        fail_peer(u);
      } else if (ring_.empty()) {
        throw unsupported_topology_error(
            "ultra_leave: no surviving ultra-superpeers");
      }
      absorb_backup_of(u);
      ring_.stabilize_all();
    }
    rehome();
    refresh_indexes();
    refresh_backups();
  }

  // ---------------------------------------------------------------------
  // Periodic maintenance, driven by the simulation ticks.

  /// Every superpeer pings its ordinaries and every ultra its superpeers.
  std::vector<Id> ping_tick(std::uint64_t now) {
    std::vector<Id> parents;
    for (const auto& [id, p] : peers_)
      if (p.role != Role::Ordinary) parents.push_back(id);
    std::vector<Id> detected;
    for (Id id : parents) {
      if (!contains(id)) continue;  // replaced mid-tick
      auto d = ping_round(id, now);
      detected.insert(detected.end(), d.begin(), d.end());
    }
    return detected;
  }

  /// Ring repair plus the anti-entropy pass: absorb dead ultras' backups,
  /// re-home any peer whose arc changed, re-derive the extended indexes,
  /// and refresh the successor backups.
  void stabilize_tick() {
    // Absorb backups whose source died since the last tick.
    std::vector<Id> dead_sources;
    for (const auto& [holder, copies] : backups_) {
      if (!contains(holder)) continue;
      for (const auto& [source, idx] : copies)
        if (!contains(source)) dead_sources.push_back(source);
    }
    std::sort(dead_sources.begin(), dead_sources.end());
    dead_sources.erase(std::unique(dead_sources.begin(), dead_sources.end()),
                       dead_sources.end());
    for (Id s : dead_sources) absorb_backup_of(s);
    if (!ring_.empty()) ring_.stabilize_all();
    rehome();
    refresh_indexes();
    refresh_backups();
  }

  // ---------------------------------------------------------------------
  // Validation and god's-eye checks.

  std::vector<Violation> validate() const {
    std::vector<Violation> out;
    for (const auto& [id, p] : peers_) {
      switch (p.role) {
        case Role::Ordinary: {
          if (!p.superpeer) {
            out.push_back({ViolationKind::GroupLink,
                           "ordinary " + to_string(id) + " has no superpeer"});
            break;
          }
          const Id s = *p.superpeer;
          if (!contains(s) || peer(s).role != Role::Super) {
            out.push_back({ViolationKind::GroupLink,
                           "ordinary " + to_string(id) +
                               " points at missing superpeer " + to_string(s)});
            break;
          }
          if (peer(s).group.count(id) == 0)
            out.push_back({ViolationKind::GroupLink,
                           "superpeer " + to_string(s) + " does not list " +
                               to_string(id)});
          try {
            const Placement pl = assign_group(id);
            if (pl.super != s)
              out.push_back({ViolationKind::OrdinaryArc,
                             "ordinary " + to_string(id) + " outside arc of " +
                                 to_string(s) + " (expected " +
                                 to_string(pl.super) + ")"});
          } catch (const placement_unavailable_error&) {
            out.push_back({ViolationKind::OrdinaryArc,
                           "ordinary " + to_string(id) + " has no valid arc"});
          }
          break;
        }
        case Role::Super: {
          if (!p.ultra) {
            out.push_back({ViolationKind::GroupLink,
                           "superpeer " + to_string(id) + " has no ultra"});
            break;
          }
          const Id u = *p.ultra;
          if (!contains(u) || peer(u).role != Role::UltraSuper) {
            out.push_back({ViolationKind::GroupLink,
                           "superpeer " + to_string(id) +
                               " points at missing ultra " + to_string(u)});
            break;
          }
          if (peer(u).supers.count(id) == 0)
            out.push_back({ViolationKind::GroupLink,
                           "ultra " + to_string(u) + " does not list " +
                               to_string(id)});
          if (!ring_.empty() && ring_.owner_of(id) != u)
            out.push_back({ViolationKind::SuperArc,
                           "superpeer " + to_string(id) + " outside arc of " +
                               to_string(u)});
          for (Id g : p.group)
            if (!contains(g))
              out.push_back({ViolationKind::GroupLink,
                             "group of " + to_string(id) +
                                 " lists departed peer " + to_string(g)});
          for (const auto& [k, pubs] : p.super_index.entries)
            for (Id pub : pubs)
              if (pub != id && p.group.count(pub) == 0)
                out.push_back({ViolationKind::IndexConsistency,
                               "super index of " + to_string(id) +
                                   " names non-member " + to_string(pub)});
          break;
        }
        case Role::UltraSuper: {
          if (!ring_.contains(id))
            out.push_back({ViolationKind::GroupLink,
                           "ultra " + to_string(id) + " missing from ring"});
          for (Id sid : p.supers)
            if (!contains(sid))
              out.push_back({ViolationKind::GroupLink,
                             "ultra " + to_string(id) +
                                 " lists departed superpeer " + to_string(sid)});
          for (const auto& [k, es] : p.ultra_index.entries)
            for (const UltraEntry& e : es) validate_row(id, k, e, out);
          break;
        }
      }
    }
    return out;
  }

  /// (key, live publisher) pairs missing from every extended index; the
  /// upper layer is supposed to collectively cover all metadata.
  std::vector<std::pair<Id, Id>> coverage_gaps() const {
    std::vector<std::pair<Id, Id>> gaps;
    for (const auto& [pid, p] : peers_) {
      for (Id k : p.published_keys) {
        bool covered = false;
        for (const auto& [uid, u] : peers_) {
          if (u.role != Role::UltraSuper) continue;
          if (const auto* es = u.ultra_index.find(k)) {
            for (const UltraEntry& e : *es)
              if (e.peer == pid) {
                covered = true;
                break;
              }
          }
          if (covered) break;
        }
        if (!covered) gaps.emplace_back(k, pid);
      }
    }
    return gaps;
  }

  std::map<Id, std::set<Id>> live_key_registry() const {
    std::map<Id, std::set<Id>> reg;
    for (const auto& [pid, p] : peers_)
      for (Id k : p.published_keys) reg[k].insert(pid);
    return reg;
  }

private:
  void require_free(Id id) const {
    if (contains(id))
      throw collision_error("id collision: " + to_string(id));
  }

  std::optional<Id> elect_from_group(const std::set<Id>& group) {
    std::vector<const PeerState*> members;
    for (Id g : group)
      if (contains(g)) members.push_back(&peer(g));
    return select_candidate(members);
  }

  /// Last-resort pick when every member is firewalled: the group cannot be
  /// stranded without a superpeer, so the filter is waived.
  std::optional<Id> elect_any(const std::vector<const PeerState*>& members) {
    if (auto c = select_candidate(members)) return c;
    const PeerState* best = nullptr;
    double best_score = -1;
    for (const PeerState* m : members) {
      const double score = m->profile.capacity + m->profile.availability;
      if (best == nullptr || score > best_score ||
          (score == best_score && m->id < best->id)) {
        best = m;
        best_score = score;
      }
    }
    return best ? std::optional<Id>(best->id) : std::nullopt;
  }

  void attach_super(Id s) {
    if (ring_.empty()) return;
    const Id u = ring_.owner_of(s);
    peer(s).ultra = u;
    peer(u).supers.insert(s);
  }

  void detach_super(Id s, std::optional<Id> u) {
    if (u && contains(*u)) {
      peer(*u).supers.erase(s);
      peer(*u).liveness.forget(s);
    }
  }

  void rebuild_super_index_from_ultra(PeerState& c, Id dead_super,
                                      std::optional<Id> ultra) {
    c.super_index = SuperIndex{};
    if (!ultra || !contains(*ultra)) return;
    for (const auto& [k, es] : peer(*ultra).ultra_index.entries)
      for (const UltraEntry& e : es)
        if (e.super == dead_super) c.super_index.add(k, e.peer);
  }

  /// Update extended rows still naming a replaced superpeer.
  void rewrite_super_references(Id old_super, Id new_super) {
    for (auto& [uid, u] : peers_) {
      if (u.role != Role::UltraSuper) continue;
      for (auto& [k, es] : u.ultra_index.entries) {
        std::vector<UltraEntry> rewritten;
        for (auto it = es.begin(); it != es.end();) {
          if (it->super == old_super && it->peer != old_super) {
            rewritten.push_back({it->peer, new_super});
            it = es.erase(it);
          } else {
            ++it;
          }
        }
        es.insert(rewritten.begin(), rewritten.end());
      }
    }
  }

  /// Middle-layer vacancy handling when a superpeer migrates upward: its
  /// group and index are handed to a candidate exactly as in a graceful
  /// leave, but the peer itself stays alive for promotion.
  void super_vacate(Id s) {
    PeerState snapshot = peer(s);
    detach_super(s, snapshot.ultra);
    PeerState& self = peer(s);
    self.group.clear();
    self.super_index = SuperIndex{};
    self.liveness = LivenessState{};
    const std::optional<Id> cand = elect_from_group(snapshot.group);
    if (cand) {
      PeerState& c = peer(*cand);
      c.role = Role::Super;
      c.superpeer.reset();
      c.super_index = snapshot.super_index;
      for (Id k : c.published_keys) c.super_index.add(k, *cand);
      for (Id g : snapshot.group) {
        if (g == *cand) continue;
        c.group.insert(g);
        c.liveness.track(g, 0);
        if (contains(g)) {
          peer(g).superpeer = *cand;
          for (Id k : peer(g).published_keys) c.super_index.add(k, g);
        }
      }
      attach_super(*cand);
      rewrite_super_references(s, *cand);
    }
  }

  void absorb_backup_of(Id dead_ultra) {
    for (auto& [holder, copies] : backups_) {
      auto it = copies.find(dead_ultra);
      if (it == copies.end()) continue;
      if (contains(holder))
        peer(holder).ultra_index.merge_from(it->second);
      copies.erase(it);
    }
  }

  void move_ordinary(Id o, Id new_super) {
    PeerState& op = peer(o);
    const std::optional<Id> old_super = op.superpeer;
    if (old_super && contains(*old_super) && *old_super != new_super) {
      PeerState& olds = peer(*old_super);
      olds.group.erase(o);
      olds.liveness.forget(o);
      for (Id k : op.published_keys) olds.super_index.remove(k, o);
    }
    op.superpeer = new_super;
    PeerState& s = peer(new_super);
    s.group.insert(o);
    s.liveness.track(o, 0);
    for (Id k : op.published_keys) s.super_index.add(k, o);
  }

  void move_super(Id s, Id new_ultra) {
    PeerState& sp = peer(s);
    detach_super(s, sp.ultra);
    sp.ultra = new_ultra;
    peer(new_ultra).supers.insert(s);
  }

  void promote_orphan_to_super(Id o) {
    PeerState& op = peer(o);
    if (op.superpeer && contains(*op.superpeer)) {
      PeerState& olds = peer(*op.superpeer);
      olds.group.erase(o);
      olds.liveness.forget(o);
      for (Id k : op.published_keys) olds.super_index.remove(k, o);
    }
    op.role = Role::Super;
    op.superpeer.reset();
    op.super_index = SuperIndex{};
    for (Id k : op.published_keys) op.super_index.add(k, o);
    attach_super(o);
  }

  /// Re-derives every peer's arc after a membership change and moves the
  /// ones whose assignment changed. An arc that has ordinaries but no
  /// superpeer promotes the best orphan (waiving the firewall filter as a
  /// last resort) so nobody is left unplaced.
  void rehome() {
    if (ring_.empty()) return;
    for (;;) {
      for (Id s : ids_of(Role::Super)) {
        const Id u = ring_.owner_of(s);
        if (!peer(s).ultra || *peer(s).ultra != u) move_super(s, u);
      }
      bool promoted = false;
      for (Id o : ids_of(Role::Ordinary)) {
        const Id u = ring_.owner_of(o);
        if (!peer(u).supers.empty()) continue;
        std::vector<const PeerState*> orphans;
        for (Id cand : ids_of(Role::Ordinary))
          if (ring_.owner_of(cand) == u) orphans.push_back(&peer(cand));
        if (const auto c = elect_any(orphans)) {
          promote_orphan_to_super(*c);
          promoted = true;
          break;
        }
      }
      if (!promoted) break;
    }
    for (Id o : ids_of(Role::Ordinary)) {
      if (!contains(o)) continue;
      const Placement pl = assign_group(o);
      if (!peer(o).superpeer || *peer(o).superpeer != pl.super)
        move_ordinary(o, pl.super);
    }
  }

  /// Anti-entropy: the extended indexes are re-derived from the live
  /// superpeer indexes (plus upper-layer self-published keys), landing
  /// each row at the associated ultra and at the ring owner of its key.
  /// Rows naming a dead-but-undetected superpeer are retained until the
  /// PING/PONG threshold removes the superpeer from its ultra's list.
  void refresh_indexes() {
    if (ring_.empty()) return;
    std::map<Id, UltraIndex> next;
    for (const auto& [sid, s] : peers_) {
      if (s.role != Role::Super) continue;
      const Id u = *s.ultra;
      for (const auto& [k, pubs] : s.super_index.entries) {
        for (Id p : pubs) {
          const UltraEntry e{p, sid};
          next[u].add(k, e);
          next[ring_owner(k)].add(k, e);
        }
      }
    }
    // Supers whose failure has not hit the PING threshold yet: their rows
    // cannot be re-derived, so they are retained until detection runs.
    std::set<Id> pending;
    for (const auto& [uid, u] : peers_) {
      if (u.role != Role::UltraSuper) continue;
      for (Id sid : u.supers)
        if (!contains(sid)) pending.insert(sid);
    }
    for (const auto& [uid, u] : peers_) {
      if (u.role != Role::UltraSuper) continue;
      for (Id k : u.published_keys) {
        const UltraEntry e{uid, uid};
        next[uid].add(k, e);
        next[ring_owner(k)].add(k, e);
      }
      for (const auto& [k, es] : u.ultra_index.entries) {
        for (const UltraEntry& e : es) {
          if (pending.count(e.super) != 0) {
            next[uid].add(k, e);
            next[ring_owner(k)].add(k, e);
          }
        }
      }
    }
    for (auto& [uid, u] : peers_) {
      if (u.role != Role::UltraSuper) continue;
      auto it = next.find(uid);
      u.ultra_index = it == next.end() ? UltraIndex{} : std::move(it->second);
    }
  }

  /// Copy every ultra's extended index to its ring successor. A copy is
  /// only as fresh as the last tick; rows added since are lost if the
  /// owner fails before the next one.
  void refresh_backups() {
    backups_.clear();
    for (const auto& [uid, u] : peers_) {
      if (u.role != Role::UltraSuper) continue;
      const Id holder = ring_.live_successor_of(uid);
      if (holder == uid) continue;  // singleton ring: nowhere to copy
      backups_[holder][uid] = u.ultra_index;
    }
  }

  void validate_row(Id holder, Id key, const UltraEntry& e,
                    std::vector<Violation>& out) const {
    const std::string where =
        "row (" + to_string(key) + ", " + to_string(e.peer) + ", " +
        to_string(e.super) + ") at ultra " + to_string(holder);
    if (e.peer == e.super) {
      // Self-published by a superpeer or ultra-superpeer.
      if (!contains(e.peer)) {
        out.push_back({ViolationKind::IndexConsistency,
                       where + ": departed self-publisher"});
        return;
      }
      const PeerState& p = peer(e.peer);
      const bool ok =
          (p.role == Role::Super && p.super_index.find(key) != nullptr) ||
          (p.role == Role::UltraSuper && p.published_keys.count(key) != 0);
      if (!ok)
        out.push_back({ViolationKind::IndexConsistency,
                       where + ": self row not backed by publisher"});
      return;
    }
    if (!contains(e.super)) {
      out.push_back({ViolationKind::IndexConsistency,
                     where + ": names departed superpeer"});
      return;
    }
    const PeerState& s = peer(e.super);
    const auto* pubs = s.super_index.find(key);
    if (pubs == nullptr || pubs->count(e.peer) == 0) {
      out.push_back({ViolationKind::IndexConsistency,
                     where + ": not present in superpeer index"});
      return;
    }
    if (s.group.count(e.peer) == 0)
      out.push_back({ViolationKind::IndexConsistency,
                     where + ": publisher not in superpeer group"});
    const bool placed_here =
        (s.ultra && *s.ultra == holder) || ring_owner(key) == holder;
    if (!placed_here)
      out.push_back({ViolationKind::IndexConsistency,
                     where + ": neither associated nor ring owner"});
  }

  IdSpace space_;
  OverlayParams params_;
  Ring ring_;
  std::map<Id, PeerState> peers_;
  std::map<Id, PeerState> ledger_;
  // holder -> (source ultra -> copy of its index at the last tick)
  std::map<Id, std::map<Id, UltraIndex>> backups_;
};

}  // namespace trichord
