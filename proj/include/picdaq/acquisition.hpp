#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <boost/circular_buffer.hpp>

#include "picdaq/protocol.hpp"
#include "picdaq/timefmt.hpp"
#include "picdaq/transport.hpp"

namespace picdaq::storage {
class RecordingWriter;
}

namespace picdaq::acquisition {

using protocol::kChannels;

inline constexpr double kFullScaleVolts = 5.0;
inline constexpr std::size_t kDefaultRingCapacity = 4096;

/// Display selection. Never affects what is buffered or recorded.
using ChannelMask = std::array<bool, kChannels>;
inline constexpr ChannelMask kAllChannels{true, true, true, true};

/// code * 5 / 1023, so code 1023 reads exactly 5 V. Throws std::out_of_range
/// for codes outside [0, 1023].
double scale_counts(int code);

struct Sample {
  std::uint64_t seq = 0;
  Timestamp timestamp{};
  std::array<std::uint16_t, kChannels> codes{};
  std::array<double, kChannels> volts{};

  static Sample from_codes(std::uint64_t seq, Timestamp ts,
                           const std::array<std::uint16_t, kChannels>& codes);

  bool operator==(const Sample&) const = default;
};

struct ChannelStats {
  std::uint64_t count = 0;
  std::uint16_t min = 0;
  std::uint16_t max = 0;
  std::uint16_t last = 0;
  std::uint64_t sum = 0;

  double mean() const { return count ? static_cast<double>(sum) / static_cast<double>(count) : 0.0; }
  double min_volts() const { return scale_counts(min); }
  double max_volts() const { return scale_counts(max); }
  double mean_volts() const { return mean() * kFullScaleVolts / protocol::kMaxCode; }
  double last_volts() const { return scale_counts(last); }

  void add(std::uint16_t code);
};

struct SessionStats {
  bool running = false;
  std::uint64_t accepted = 0;
  protocol::DecoderCounters decoder;
  std::array<ChannelStats, kChannels> channels{};
  ChannelMask mask = kAllChannels;
  bool recording_armed = false;
  std::uint64_t recording_rows = 0;  // current recording, or the last one closed
  std::optional<std::string> recording_error;
  std::optional<std::string> transport_error;
  bool stream_ended = false;
  double expected_rate_hz = 1.0;
  std::optional<double> observed_rate_hz;  // from first/last sample timestamps
};

/// Maps a sample's seq to its timestamp; the default ignores seq and reads
/// the host clock at frame completion.
using TimestampSource = std::function<Timestamp(std::uint64_t seq)>;

/// Deterministic timestamps: epoch + seq / rate.
TimestampSource simulated_timestamps(double rate_hz, Timestamp epoch = Timestamp{});

struct SessionConfig {
  std::size_t ring_capacity = kDefaultRingCapacity;
  ChannelMask mask = kAllChannels;
  TimestampSource timestamps;
  double expected_rate_hz = 1.0;
  std::chrono::milliseconds read_timeout{50};
};

class SessionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Host acquisition engine.
///
/// Bytes are pushed in through on_bytes(), either by the caller or by the
/// reception thread started with start(stream). Each decoded frame becomes
/// a Sample with the next seq, is appended to the ring, folded into stats,
/// written to the armed recording and handed to listeners, all under one
/// lock, so readers never see a partially applied sample.
class Session {
 public:
  using Listener = std::function<void(const Sample&, const ChannelMask&)>;
  using ListenerId = std::uint64_t;

  explicit Session(SessionConfig config = {});
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  /// Starts in push mode: the caller feeds bytes through on_bytes().
  void start();
  /// Starts a reception thread that forwards every chunk read from `stream`.
  void start(transport::StreamPtr stream);
  /// Halts reception, closes an armed recording and returns frozen stats.
  SessionStats stop();

  bool running() const;

  /// Throws SessionError if the session is not running.
  std::vector<Sample> on_bytes(std::string_view chunk);

  void set_channel_mask(const ChannelMask& mask);
  ChannelMask channel_mask() const;

  /// Last min(n, buffered) samples, ascending seq.
  std::vector<Sample> read_latest(std::size_t n) const;
  SessionStats stats() const;

  void set_expected_rate(double hz);

  /// Opens a recording; every subsequent sample is appended to it.
  void arm_recording(const std::filesystem::path& path);
  /// Closes the armed recording and returns its row count.
  std::uint64_t disarm_recording();

  /// Listeners run on the reception path while the session lock is held and
  /// must not call back into the session or block.
  ListenerId subscribe(Listener listener);
  void unsubscribe(ListenerId id);

 private:
  void begin_locked();
  void ingest_locked(std::string_view chunk, std::vector<Sample>* out);
  void reception_loop(std::stop_token stop, transport::StreamPtr stream);
  SessionStats stats_locked() const;

  SessionConfig config_;
  mutable std::mutex mu_;
  bool running_ = false;
  protocol::Decoder decoder_;
  std::uint64_t next_seq_ = 0;
  boost::circular_buffer<Sample> ring_;
  std::array<ChannelStats, kChannels> stats_{};
  ChannelMask mask_;
  std::optional<Timestamp> first_ts_;
  std::optional<Timestamp> last_ts_;
  std::unique_ptr<storage::RecordingWriter> recording_;
  std::uint64_t recording_rows_ = 0;
  std::optional<std::string> recording_error_;
  std::optional<std::string> transport_error_;
  bool stream_ended_ = false;
  std::vector<std::pair<ListenerId, Listener>> listeners_;
  ListenerId next_listener_ = 1;
  std::vector<protocol::DecodeEvent> events_;
  std::jthread reception_;
};

}  // namespace picdaq::acquisition
