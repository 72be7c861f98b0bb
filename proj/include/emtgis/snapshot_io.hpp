#pragma once

// Versioned JSON snapshot document, so initialization and simulation can run
// as separate invocations.

#include "emtgis/snapshot.hpp"

#include <iosfwd>
#include <string>

namespace emtgis {

inline constexpr int kSnapshotVersion = 1;

std::string snapshot_to_json(const Snapshot& s);
Snapshot snapshot_from_json(const std::string& text);

void save_snapshot(const Snapshot& s, const std::string& path);
Snapshot load_snapshot(const std::string& path);

}  // namespace emtgis
