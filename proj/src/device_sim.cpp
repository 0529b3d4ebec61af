#include "picdaq/device_sim.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace picdaq::device {

std::array<signal::WaveformSpec, protocol::kChannels> demo_sources() {
  using signal::WaveformSpec;
  return {WaveformSpec::sine(0.1, 2.0, 2.5), WaveformSpec::square(0.2, 2.5, 2.5),
          WaveformSpec::triangle(0.05, 2.5, 2.5), WaveformSpec::lm35(25.0, 0.5)};
}

void validate(const DeviceConfig& config, std::optional<unsigned> baud) {
  if (!std::isfinite(config.rate_hz) || config.rate_hz <= 0.0) {
    throw ConfigError("device: rate must be > 0 Hz");
  }
  if (!std::isfinite(config.vref_v) || config.vref_v <= 0.0) {
    throw ConfigError("device: vref must be > 0 V");
  }
  for (const auto& s : config.sources) signal::validate(s);
  if (baud && config.rate_hz * kBitsPerFrame > static_cast<double>(*baud)) {
    throw ConfigError("device: " + std::to_string(config.rate_hz) + " Hz needs more than " +
                      std::to_string(*baud) + " baud");
  }
}

std::uint16_t quantize(double volts, double vref) {
  if (!(volts > 0.0)) return 0;
  if (volts >= vref) return protocol::kMaxCode;
  auto code = static_cast<long>(std::floor(volts * 1024.0 / vref));
  // The division can round across a bin edge; settle on the exact bin.
  while (code > 0 && static_cast<double>(code) * vref / 1024.0 > volts) --code;
  while (code < protocol::kMaxCode && static_cast<double>(code + 1) * vref / 1024.0 <= volts) ++code;
  return static_cast<std::uint16_t>(std::clamp<long>(code, 0, protocol::kMaxCode));
}

protocol::Frame sample_channels(const DeviceState& state, const DeviceConfig& config) {
  protocol::Frame frame;
  for (std::size_t ch = 0; ch < protocol::kChannels; ++ch) {
    frame.codes[ch] = quantize(signal::sample_waveform(config.sources[ch], state.t), config.vref_v);
  }
  return frame;
}

std::string device_tick(DeviceState& state, const DeviceConfig& config) {
  std::string bytes = protocol::encode_frame(sample_channels(state, config));
  ++state.seq;
  state.t = static_cast<double>(state.seq) / config.rate_hz;
  return bytes;
}

RunReport run_device(const DeviceConfig& config, transport::ByteStream& stream,
                     std::stop_token stop, RunLimits limits) {
  validate(config, stream.line_baud());

  using clock = std::chrono::steady_clock;
  const auto started = clock::now();
  const auto period = std::chrono::duration<double>(1.0 / config.rate_hz);

  DeviceState state;
  RunReport report;
  auto due = [&](std::uint64_t k) {
    if (limits.max_frames && k >= *limits.max_frames) return false;
    if (limits.duration_s && static_cast<double>(k) / config.rate_hz >= *limits.duration_s) {
      return false;
    }
    return true;
  };

  while (!stop.stop_requested() && due(state.seq)) {
    if (config.clock == Clock::wall) {
      const auto at = started + std::chrono::duration_cast<clock::duration>(
                                    period * static_cast<double>(state.seq));
      // Sleep in short slices so a stop request is honoured promptly.
      while (!stop.stop_requested()) {
        const auto now = clock::now();
        if (now >= at) break;
        std::this_thread::sleep_for(std::min<clock::duration>(at - now, std::chrono::milliseconds(20)));
      }
      if (stop.stop_requested()) break;
    }
    const std::string frame = device_tick(state, config);
    try {
      stream.write(frame);
    } catch (const transport::TransportError& e) {
      report.error = e.what();
      break;
    }
    report.frames_sent = state.seq;
  }

  if (config.clock == Clock::wall && limits.duration_s && !report.error) {
    const auto end = started + std::chrono::duration_cast<clock::duration>(
                                   std::chrono::duration<double>(*limits.duration_s));
    while (!stop.stop_requested() && clock::now() < end) {
      std::this_thread::sleep_for(std::min<clock::duration>(end - clock::now(), std::chrono::milliseconds(20)));
    }
  }

  if (config.clock == Clock::simulated) {
    report.duration_s = static_cast<double>(report.frames_sent) / config.rate_hz;
  } else {
    report.duration_s = std::chrono::duration<double>(clock::now() - started).count();
  }
  return report;
}

}  // namespace picdaq::device
