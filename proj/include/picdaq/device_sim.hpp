#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <stop_token>
#include <string>

#include "picdaq/protocol.hpp"
#include "picdaq/signal_sources.hpp"
#include "picdaq/transport.hpp"

namespace picdaq::device {

inline constexpr double kVref = 5.0;
inline constexpr double kDefaultRateHz = 1.0;

/// Bits on the wire per frame at 8N1: 18 bytes x 10 bits.
inline constexpr unsigned kBitsPerFrame = protocol::kFrameSize * 10;

enum class Clock { simulated, wall };

struct DeviceConfig {
  double rate_hz = kDefaultRateHz;
  double vref_v = kVref;
  std::array<signal::WaveformSpec, protocol::kChannels> sources{};
  Clock clock = Clock::simulated;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Default channel sources for demos and the selftest: sine, square,
/// triangle and an LM35 ramp.
std::array<signal::WaveformSpec, protocol::kChannels> demo_sources();

/// Checks rate and sources; with `baud` set also checks that a frame per
/// tick fits the serial line budget.
void validate(const DeviceConfig& config, std::optional<unsigned> baud = std::nullopt);

struct DeviceState {
  double t = 0.0;          // seconds since start, == seq / rate_hz
  std::uint64_t seq = 0;   // frames emitted
  bool running = true;
};

/// Ideal 10-bit SAR transfer: 1024 equal bins of vref/1024, top bin
/// absorbing full scale. Out-of-range inputs clamp to 0 or 1023.
std::uint16_t quantize(double volts, double vref = kVref);

/// Reads all four sources at state.t and advances the clock by one period.
protocol::Frame sample_channels(const DeviceState& state, const DeviceConfig& config);
std::string device_tick(DeviceState& state, const DeviceConfig& config);

struct RunLimits {
  std::optional<std::uint64_t> max_frames;
  std::optional<double> duration_s;  // frames at k / rate for k / rate < duration
};

struct RunReport {
  std::uint64_t frames_sent = 0;
  double duration_s = 0.0;  // simulated seconds, or elapsed wall time
  std::optional<std::string> error;
};

/// Emits one frame per period until `stop` is requested or a limit is hit.
/// The simulated clock never sleeps; the wall clock schedules tick k at
/// start + k / rate so errors do not accumulate. A write failure ends the
/// run and is carried in the report.
RunReport run_device(const DeviceConfig& config, transport::ByteStream& stream,
                     std::stop_token stop = {}, RunLimits limits = {});

}  // namespace picdaq::device
