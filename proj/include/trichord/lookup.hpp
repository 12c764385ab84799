// Copyright 2026 the trichord authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <functional>
#include <map>
#include <set>
#include <string_view>
#include <vector>

#include "trichord/chord.hpp"
#include "trichord/errors.hpp"
#include "trichord/hierarchy.hpp"
#include "trichord/ident.hpp"

namespace trichord {

/// Where a hierarchical query resolved: at the origin's superpeer
/// (case A, 1 hop), at its ultra-superpeer (case B, 2 hops), or out on
/// the ring (case C, 2 + ring hops).
enum class ResolutionLevel { LocalSuper, OwnUltra, Ring };

inline const char* resolution_name(ResolutionLevel l) {
  switch (l) {
    case ResolutionLevel::LocalSuper: return "A";
    case ResolutionLevel::OwnUltra: return "B";
    case ResolutionLevel::Ring: return "C";
  }
  return "?";
}

struct PathStep {
  Id peer;
  Role role;
};

struct LookupTrace {
  Id key;
  Id origin;
  bool found = false;
  ResolutionLevel level = ResolutionLevel::Ring;
  int hops = 0;       // query forwardings between distinct peers
  int ring_hops = 0;  // subset of hops spent on the upper-layer ring
  double latency_ms = 0;
  std::vector<PathStep> path;  // path[0] is the origin; forwarding path
  std::set<Id> publishers;     // every peer_ID under the key at the hit index
  Id owner{};                  // node answering for the key's arc
};

enum class LatencyMode { Flat, Hierarchical };

/// Sum of per-link latencies along a path: each link is charged the
/// receiving peer's base latency, halved in hierarchical mode whenever the
/// receiver is a superpeer or ultra-superpeer.
inline double account_latency(const std::vector<PathStep>& path,
                              const std::function<double(Id)>& base_latency,
                              LatencyMode mode) {
  double total = 0;
  for (std::size_t i = 1; i < path.size(); ++i) {
    const PathStep& recv = path[i];
    double l = base_latency(recv.peer);
    if (mode == LatencyMode::Hierarchical && recv.role != Role::Ordinary)
      l *= 0.5;
    total += l;
  }
  return total;
}

inline double account_latency(const std::vector<PathStep>& path,
                              const Overlay& overlay, LatencyMode mode) {
  return account_latency(
      path, [&overlay](Id id) { return overlay.latency_of(id); }, mode);
}

/// The query walks up from the ordinary origin: superpeer index first,
/// then the associated ultra-superpeer's extended index, then
/// finger-routed steps along the ring, checking every ultra-superpeer
/// visited. Not-found means the walk ended at the ring owner of the key
/// without a hit.
inline LookupTrace hierarchical_lookup_key(Overlay& overlay, Id origin,
                                           Id key) {
  if (!overlay.contains(origin))
    throw error("lookup: origin " + to_string(origin) + " is not live");
  if (overlay.peer(origin).role != Role::Ordinary)
    throw error("lookup: origin must be an ordinary peer");
  if (overlay.ring().empty())
    throw no_route_error("lookup: overlay has no ultra-superpeers");

  LookupTrace t;
  t.key = key;
  t.origin = origin;
  t.path.push_back({origin, Role::Ordinary});

  auto role_at = [&overlay](Id id) {
    const PeerState* r = overlay.record_of(id);
    return r == nullptr ? Role::Ordinary : r->role;
  };

  // Step 1: origin -> its superpeer.
  Id super = *overlay.peer(origin).superpeer;
  t.hops += 1;
  t.path.push_back({super, Role::Super});
  if (!overlay.contains(super)) {
    // Parent died undetected; fall back to the arc's current superpeer.
    const Placement pl = overlay.assign_group(origin);
    if (pl.super == super || !overlay.contains(pl.super)) {
      t.latency_ms = account_latency(t.path, overlay, LatencyMode::Hierarchical);
      return t;  // not found: nothing answers in this group right now
    }
    super = pl.super;
    t.hops += 1;
    t.path.push_back({super, Role::Super});
  }
  if (const auto* pubs = overlay.peer(super).super_index.find(key)) {
    t.found = true;
    t.level = ResolutionLevel::LocalSuper;
    t.publishers = *pubs;
    t.owner = super;
    t.latency_ms = account_latency(t.path, overlay, LatencyMode::Hierarchical);
    return t;
  }

  // Step 2: superpeer -> its ultra-superpeer.
  const Id ultra = *overlay.peer(super).ultra;
  t.hops += 1;
  t.path.push_back({ultra, role_at(ultra)});
  if (!overlay.contains(ultra)) {
    t.latency_ms = account_latency(t.path, overlay, LatencyMode::Hierarchical);
    return t;  // upper layer unreachable until stabilization repairs it
  }
  if (const auto* es = overlay.peer(ultra).ultra_index.find(key)) {
    t.found = true;
    t.level = ResolutionLevel::OwnUltra;
    for (const UltraEntry& e : *es) t.publishers.insert(e.peer);
    t.owner = ultra;
    t.latency_ms = account_latency(t.path, overlay, LatencyMode::Hierarchical);
    return t;
  }

  // Step 3: ring walk toward the ultra-superpeer owning the key, checking
  // the extended index at every ultra the query is forwarded to. The walk
  // ends where the owner is resolved; the owner's own index answers the
  // final found/not-found probe.
  t.level = ResolutionLevel::Ring;
  const std::set<UltraEntry>* hit = nullptr;
  RouteResult walk = overlay.ring().route(
      ultra, key, [&overlay, &hit, key](const RingNode& n) {
        if (!overlay.contains(n.id)) return VisitOutcome::Continue;
        if (const auto* es = overlay.peer(n.id).ultra_index.find(key)) {
          hit = es;
          return VisitOutcome::Stop;
        }
        return VisitOutcome::Continue;
      });
  t.ring_hops = walk.hops;
  t.hops += walk.hops;
  t.owner = walk.owner;
  for (std::size_t i = 1; i < walk.path.size(); ++i)
    t.path.push_back({walk.path[i], role_at(walk.path[i])});
  if (hit == nullptr && overlay.contains(walk.owner)) {
    hit = overlay.peer(walk.owner).ultra_index.find(key);
  }
  if (hit != nullptr) {
    t.found = true;
    for (const UltraEntry& e : *hit) t.publishers.insert(e.peer);
  }
  t.latency_ms = account_latency(t.path, overlay, LatencyMode::Hierarchical);
  return t;
}

inline LookupTrace hierarchical_lookup(Overlay& overlay, Id origin,
                                       std::string_view key_name) {
  return hierarchical_lookup_key(overlay, origin,
                                 hash_id(key_name, overlay.space()));
}

/// The flat baseline: one Chord ring where every node is a plain peer.
/// Keys live at their ring owner; latency is charged at full base rate.
class FlatModel {
public:
  explicit FlatModel(IdSpace space) : ring_(space) {}

  Ring& ring() { return ring_; }
  const Ring& ring() const { return ring_; }
  const IdSpace& space() const { return ring_.space(); }

  void add_node(Id id, double latency_ms) {
    ring_.insert_direct(id);
    latency_[id] = latency_ms;
  }

  void join_node(Id id, Id bootstrap, double latency_ms) {
    ring_.join(id, bootstrap);
    latency_[id] = latency_ms;
  }

  void remove_node(Id id) { ring_.remove(id); }

  double latency_of(Id id) const {
    auto it = latency_.find(id);
    return it == latency_.end() ? 0.0 : it->second;
  }

  void publish(Id node, std::string_view key_name) {
    publish_key(node, hash_id(key_name, space()));
  }

  void publish_key(Id node, Id key) {
    if (!ring_.contains(node)) throw error("publish: unknown node");
    published_[node].insert(key);
    store_[ring_.owner_of(key)][key].insert(node);
  }

  /// Owner re-scan after membership changes: every stored key moves to its
  /// current ring owner, and keys of departed publishers are dropped.
  void rehome_keys() {
    std::map<Id, std::map<Id, std::set<Id>>> next;
    for (auto& [node, keys] : store_) {
      for (auto& [key, pubs] : keys) {
        for (Id p : pubs)
          if (ring_.contains(p)) next[ring_.owner_of(key)][key].insert(p);
      }
    }
    store_ = std::move(next);
  }

  const std::map<Id, std::set<Id>>& published() const { return published_; }

  const std::set<Id>* stored_at(Id node, Id key) const {
    auto it = store_.find(node);
    if (it == store_.end()) return nullptr;
    auto kt = it->second.find(key);
    return kt == it->second.end() ? nullptr : &kt->second;
  }

private:
  Ring ring_;
  std::map<Id, double> latency_;
  std::map<Id, std::set<Id>> published_;              // node -> its keys
  std::map<Id, std::map<Id, std::set<Id>>> store_;    // owner -> key -> pubs
};

inline LookupTrace flat_lookup_key(FlatModel& net, Id origin, Id key) {
  if (net.ring().empty()) throw no_route_error("flat lookup: empty ring");
  LookupTrace t;
  t.key = key;
  t.origin = origin;
  t.path.push_back({origin, Role::Ordinary});
  RouteResult rr = net.ring().route(origin, key);
  t.hops = rr.hops;
  t.ring_hops = rr.hops;
  t.owner = rr.owner;
  for (std::size_t i = 1; i < rr.path.size(); ++i)
    t.path.push_back({rr.path[i], Role::Ordinary});
  if (const auto* pubs = net.stored_at(rr.owner, key)) {
    t.found = true;
    t.publishers = *pubs;
  }
  t.latency_ms = account_latency(
      t.path, [&net](Id id) { return net.latency_of(id); }, LatencyMode::Flat);
  return t;
}

inline LookupTrace flat_lookup(FlatModel& net, Id origin,
                               std::string_view key_name) {
  return flat_lookup_key(net, origin, hash_id(key_name, net.space()));
}

}  // namespace trichord
