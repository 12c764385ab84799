// Copyright 2026 the trichord authors. Licensed under the Apache License,
// Version 2.0. See the LICENSE file at the root of this distribution or at
// http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace trichord {

struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid or infeasible experiment configuration.
struct config_error : error {
  using error::error;
};

/// An identifier is already taken by a live peer.
struct collision_error : error {
  using error::error;
};

/// Routing was attempted on an empty ring, or gave up after repair.
struct no_route_error : error {
  using error::error;
};

/// No (ultra, super) placement exists for a peer identifier.
struct placement_unavailable_error : error {
  using error::error;
};

/// An operation would leave the overlay in a shape it cannot represent,
/// e.g. removing the last ring member.
struct unsupported_topology_error : error {
  using error::error;
};

/// An event was scheduled before the current simulation clock.
struct scheduling_error : error {
  using error::error;
};

}  // namespace trichord
