#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "picdaq/acquisition.hpp"
#include "picdaq/device_sim.hpp"
#include "picdaq/protocol.hpp"

namespace picdaq {

struct SelftestOptions {
  std::uint64_t frames = 10;
  double rate_hz = device::kDefaultRateHz;
  std::array<signal::WaveformSpec, protocol::kChannels> sources = device::demo_sources();
  /// Keep the recording here; otherwise a temporary file is used and removed.
  std::optional<std::filesystem::path> csv_path;
};

struct SelftestResult {
  bool ok = false;
  std::string message;
  std::vector<protocol::Frame> emitted;         // decoded from the bytes the device wrote
  std::vector<acquisition::Sample> recorded;    // loaded back from the CSV
  std::string csv;                              // exact file contents
  acquisition::SessionStats stats;
};

/// device (simulated clock) -> loopback -> acquisition -> CSV -> load, then
/// checks the loaded codes against the emitted ones. Timestamps come from
/// the simulated clock, so the CSV is identical from run to run.
SelftestResult run_selftest(const SelftestOptions& options = {});

}  // namespace picdaq
