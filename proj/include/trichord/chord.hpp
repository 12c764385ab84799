// Copyright 2026 the trichord authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "trichord/errors.hpp"
#include "trichord/ident.hpp"

namespace trichord {

/// One finger-table slot: start = owner + 2^(i-1) mod 2^m for slot i
/// (1-based), node = the ring successor of start as of the last refresh.
struct FingerEntry {
  Id start;
  Id node;
  friend constexpr auto operator<=>(const FingerEntry&,
                                    const FingerEntry&) = default;
};

struct RingNode {
  Id id;
  Id successor;  // equals id only in a singleton ring
  std::optional<Id> predecessor;
  std::vector<FingerEntry> fingers;  // m slots, fewer once optimized
  bool optimized = false;
};

/// Removes entries whose node repeats the node of the previous retained
/// entry. The first entry is always kept, order is preserved, and the
/// surviving node set is unchanged, so routing decisions are identical.
inline std::vector<FingerEntry> optimize_finger_table(
    std::vector<FingerEntry> fingers) {
  std::vector<FingerEntry> out;
  out.reserve(fingers.size());
  for (const FingerEntry& f : fingers) {
    if (out.empty() || out.back().node != f.node) out.push_back(f);
  }
  return out;
}

/// Highest finger strictly inside (node.id, target); node.id when none
/// qualifies.
inline Id closest_preceding_finger(const RingNode& node, Id target) {
  for (auto it = node.fingers.rbegin(); it != node.fingers.rend(); ++it) {
    if (in_interval(it->node, node.id, target, Bounds::OpenOpen))
      return it->node;
  }
  return node.id;
}

/// Result of one routed resolution on the ring.
struct RouteResult {
  Id owner;
  int hops = 0;              // inter-node forwardings, dead detours included
  std::vector<Id> path;      // path[0] = origin, then every hop receiver
  bool stopped_early = false;  // a visitor ended the walk before the owner
};

/// What a route visitor tells the router after inspecting a live node.
enum class VisitOutcome { Continue, Stop };

/// The ring as simulated: live members keyed by id. Routing uses only the
/// per-node pointers and fingers; maintenance (stabilize, owner_of) may
/// consult the live membership view directly.
class Ring {
public:
  explicit Ring(IdSpace space) : space_(space) {}

  const IdSpace& space() const { return space_; }
  bool empty() const { return nodes_.empty(); }
  std::size_t size() const { return nodes_.size(); }
  bool contains(Id id) const { return nodes_.count(id) != 0; }
  const std::map<Id, RingNode>& nodes() const { return nodes_; }
  RingNode& node(Id id) { return nodes_.at(id); }
  const RingNode& node(Id id) const { return nodes_.at(id); }

  /// First live node clockwise from target (maintenance view; routing has
  /// to discover the same answer through fingers).
  Id owner_of(Id target) const {
    if (nodes_.empty()) throw no_route_error("owner_of: empty ring");
    auto it = nodes_.lower_bound(target);
    if (it == nodes_.end()) it = nodes_.begin();
    return it->first;
  }

  Id live_successor_of(Id id) const {
    auto it = nodes_.upper_bound(id);
    if (it == nodes_.end()) it = nodes_.begin();
    return it->first;
  }

  Id live_predecessor_of(Id id) const {
    auto it = nodes_.lower_bound(id);
    if (it == nodes_.begin()) it = nodes_.end();
    --it;
    return it->first;
  }

  /// Inserts a node with every pointer already correct. Build-time and
  /// test scaffolding; protocol joins go through join().
  void insert_direct(Id id) {
    if (contains(id)) throw collision_error("ring id collision: " + to_string(id));
    RingNode n;
    n.id = id;
    n.successor = id;
    nodes_.emplace(id, std::move(n));
  }

  /// Protocol join: the newcomer learns only its successor (resolved by
  /// routing from the bootstrap node); everything else is left to later
  /// stabilization rounds.
  void join(Id new_id, Id bootstrap) {
    if (contains(new_id))
      throw collision_error("ring id collision: " + to_string(new_id));
    if (nodes_.empty()) {
      // First member bootstraps off itself.
      insert_direct(new_id);
      stabilize(new_id);
      return;
    }
    if (!contains(bootstrap))
      throw no_route_error("join: bootstrap node is not in the ring");
    const Id succ = route(bootstrap, new_id).owner;
    RingNode n;
    n.id = new_id;
    n.successor = succ;
    n.fingers.reserve(space_.bits());
    for (unsigned i = 1; i <= space_.bits(); ++i)
      n.fingers.push_back(
          {id_add(new_id, Wide::pow2(i - 1), space_), succ});
    nodes_.emplace(new_id, std::move(n));
  }

  void remove(Id id) { nodes_.erase(id); }

  /// Full finger rebuild for one node against the live view.
  std::vector<FingerEntry> build_fingers(Id owner) const {
    std::vector<FingerEntry> fingers;
    fingers.reserve(space_.bits());
    for (unsigned i = 1; i <= space_.bits(); ++i) {
      const Id start = id_add(owner, Wide::pow2(i - 1), space_);
      fingers.push_back({start, owner_of(start)});
    }
    return fingers;
  }

  /// Repairs one node: successor and predecessor snap to the live
  /// circular neighbours, and the finger table is rebuilt in full. A
  /// fixed point under stable membership.
  void stabilize(Id id) {
    RingNode& n = nodes_.at(id);
    n.successor = live_successor_of(id);
    n.predecessor = live_predecessor_of(id);
    n.fingers = build_fingers(id);
    if (n.optimized) n.fingers = optimize_finger_table(std::move(n.fingers));
  }

  void stabilize_all() {
    for (auto& [id, n] : nodes_) stabilize(id);
  }

  void set_optimized(bool on) {
    for (auto& [id, n] : nodes_) {
      n.optimized = on;
      stabilize(id);
    }
  }

  using Visitor = std::function<VisitOutcome(const RingNode&)>;

  /// Iterative successor resolution from `from` toward `target` using
  /// closest-preceding-finger steps. A hop is one forwarding of the query
  /// to another node; the walk ends (without a further hop) at the first
  /// node that can answer locally, i.e. that owns the target or whose
  /// immediate successor does. A forwarding onto a dead pointer is still
  /// charged, the sender stabilizes, and the step retries once. The
  /// optional visitor runs at each node the query is forwarded to and may
  /// stop the walk early.
  RouteResult route(Id from, Id target, const Visitor& visit = {}) {
    if (nodes_.empty()) throw no_route_error("route: empty ring");
    if (!contains(from))
      throw no_route_error("route: origin " + to_string(from) + " not in ring");

    RouteResult r;
    r.path.push_back(from);
    Id current = from;
    // Stale pointers can force detours, but never more than one repair per
    // node; 2*(size+bits) steps means something is wrong.
    const std::size_t step_limit = 2 * (nodes_.size() + space_.bits()) + 4;

    while (true) {
      if (r.path.size() > step_limit)
        throw no_route_error("route: step limit exceeded (routing loop)");
      const RingNode& n = nodes_.at(current);
      if (n.predecessor && contains(*n.predecessor) &&
          in_interval(target, *n.predecessor, current, Bounds::OpenClosed)) {
        r.owner = current;
        return r;
      }
      if (n.successor == current) {  // singleton
        r.owner = current;
        return r;
      }
      if (in_interval(target, current, n.successor, Bounds::OpenClosed)) {
        if (contains(n.successor)) {
          r.owner = n.successor;  // answered locally, no forwarding
          return r;
        }
        // The recorded successor is gone: the probe costs a hop, then the
        // repaired pointer answers.
        r.hops += 1;
        r.path.push_back(n.successor);
        stabilize(current);
        continue;
      }

      Id next = closest_preceding_finger(n, target);
      if (next == current) next = n.successor;

      if (!contains(next)) {
        // The forwarding is spent on the dead peer; repair and retry once.
        r.hops += 1;
        r.path.push_back(next);
        stabilize(current);
        continue;
      }

      r.hops += 1;
      r.path.push_back(next);
      current = next;
      if (visit) {
        if (visit(nodes_.at(current)) == VisitOutcome::Stop) {
          r.owner = current;
          r.stopped_early = true;
          return r;
        }
      }
    }
  }

private:
  IdSpace space_;
  std::map<Id, RingNode> nodes_;
};

}  // namespace trichord
