#include "picdaq/acquisition.hpp"

#include <algorithm>
#include <cmath>

#include "picdaq/storage.hpp"

namespace picdaq::acquisition {

double scale_counts(int code) {
  if (code < 0 || code > protocol::kMaxCode) {
    throw std::out_of_range("scale_counts: code " + std::to_string(code) + " outside 0..1023");
  }
  return static_cast<double>(code) * kFullScaleVolts / protocol::kMaxCode;
}

Sample Sample::from_codes(std::uint64_t seq, Timestamp ts,
                          const std::array<std::uint16_t, kChannels>& codes) {
  Sample s{seq, ts, codes, {}};
  for (std::size_t ch = 0; ch < kChannels; ++ch) s.volts[ch] = scale_counts(codes[ch]);
  return s;
}

void ChannelStats::add(std::uint16_t code) {
  if (count == 0) {
    min = max = code;
  } else {
    min = std::min(min, code);
    max = std::max(max, code);
  }
  last = code;
  sum += code;
  ++count;
}

TimestampSource simulated_timestamps(double rate_hz, Timestamp epoch) {
  return [rate_hz, epoch](std::uint64_t seq) {
    const auto offset = std::chrono::duration<double>(static_cast<double>(seq) / rate_hz);
    return epoch + std::chrono::round<std::chrono::milliseconds>(offset);
  };
}

Session::Session(SessionConfig config)
    : config_(std::move(config)), ring_(std::max<std::size_t>(config_.ring_capacity, 1)),
      mask_(config_.mask) {}

Session::~Session() {
  reception_ = {};
  std::lock_guard lock(mu_);
  if (recording_) recording_->close();
}

void Session::begin_locked() {
  if (running_) throw SessionError("session already running");
  decoder_.reset();
  next_seq_ = 0;
  ring_.clear();
  stats_ = {};
  first_ts_.reset();
  last_ts_.reset();
  transport_error_.reset();
  stream_ended_ = false;
  running_ = true;
}

void Session::start() {
  std::lock_guard lock(mu_);
  begin_locked();
}

void Session::start(transport::StreamPtr stream) {
  if (!stream) throw SessionError("start: null stream");
  {
    std::lock_guard lock(mu_);
    begin_locked();
  }
  reception_ = std::jthread(
      [this, stream = std::move(stream)](std::stop_token st) { reception_loop(st, stream); });
}

void Session::reception_loop(std::stop_token stop, transport::StreamPtr stream) {
  while (!stop.stop_requested()) {
    transport::ReadResult r;
    try {
      r = stream->read(config_.read_timeout);
    } catch (const transport::TransportError& e) {
      std::lock_guard lock(mu_);
      transport_error_ = e.what();
      return;
    }
    if (r.status == transport::ReadResult::Status::data) {
      std::lock_guard lock(mu_);
      if (!running_) return;
      ingest_locked(r.bytes, nullptr);
    } else if (r.eof()) {
      std::lock_guard lock(mu_);
      stream_ended_ = true;
      return;
    }
  }
}

SessionStats Session::stop() {
  {
    std::lock_guard lock(mu_);
    if (!running_) throw SessionError("session not running");
    running_ = false;
  }
  // Joined outside the lock: the reception thread takes it per chunk.
  reception_ = {};
  std::lock_guard lock(mu_);
  if (recording_) {
    try {
      recording_rows_ = recording_->close();
    } catch (const storage::StorageError& e) {
      recording_error_ = e.what();
    }
    recording_.reset();
  }
  return stats_locked();
}

bool Session::running() const {
  std::lock_guard lock(mu_);
  return running_;
}

std::vector<Sample> Session::on_bytes(std::string_view chunk) {
  std::vector<Sample> out;
  std::lock_guard lock(mu_);
  if (!running_) throw SessionError("on_bytes: session not running");
  ingest_locked(chunk, &out);
  return out;
}

void Session::ingest_locked(std::string_view chunk, std::vector<Sample>* out) {
  events_.clear();
  decoder_.feed(chunk, events_);
  for (const auto& ev : events_) {
    const auto* fe = std::get_if<protocol::FrameEvent>(&ev);
    if (!fe) continue;

    const std::uint64_t seq = next_seq_++;
    const Timestamp ts = config_.timestamps ? config_.timestamps(seq) : now_ms();
    Sample s = Sample::from_codes(seq, ts, fe->frame.codes);

    ring_.push_back(s);
    for (std::size_t ch = 0; ch < kChannels; ++ch) stats_[ch].add(s.codes[ch]);
    if (!first_ts_) first_ts_ = ts;
    last_ts_ = ts;

    if (recording_) {
      try {
        recording_->append(s);
        recording_rows_ = recording_->rows();
      } catch (const storage::StorageError& e) {
        recording_error_ = e.what();
        recording_.reset();
      }
    }
    for (const auto& [id, listener] : listeners_) listener(s, mask_);
    if (out) out->push_back(std::move(s));
  }
}

void Session::set_channel_mask(const ChannelMask& mask) {
  std::lock_guard lock(mu_);
  mask_ = mask;
}

ChannelMask Session::channel_mask() const {
  std::lock_guard lock(mu_);
  return mask_;
}

std::vector<Sample> Session::read_latest(std::size_t n) const {
  std::lock_guard lock(mu_);
  const std::size_t k = std::min(n, ring_.size());
  return std::vector<Sample>(ring_.end() - static_cast<std::ptrdiff_t>(k), ring_.end());
}

SessionStats Session::stats() const {
  std::lock_guard lock(mu_);
  return stats_locked();
}

SessionStats Session::stats_locked() const {
  SessionStats s;
  s.running = running_;
  s.accepted = next_seq_;
  s.decoder = decoder_.counters();
  s.channels = stats_;
  s.mask = mask_;
  s.recording_armed = recording_ != nullptr;
  s.recording_rows = recording_rows_;
  s.recording_error = recording_error_;
  s.transport_error = transport_error_;
  s.stream_ended = stream_ended_;
  s.expected_rate_hz = config_.expected_rate_hz;
  if (first_ts_ && last_ts_ && next_seq_ > 1 && *last_ts_ > *first_ts_) {
    const double span = std::chrono::duration<double>(*last_ts_ - *first_ts_).count();
    s.observed_rate_hz = static_cast<double>(next_seq_ - 1) / span;
  }
  return s;
}

void Session::set_expected_rate(double hz) {
  if (!std::isfinite(hz) || hz <= 0.0) throw std::invalid_argument("rate must be > 0 Hz");
  std::lock_guard lock(mu_);
  config_.expected_rate_hz = hz;
}

void Session::arm_recording(const std::filesystem::path& path) {
  std::lock_guard lock(mu_);
  if (recording_) throw SessionError("recording already armed");
  recording_ = std::make_unique<storage::RecordingWriter>(path);
  recording_rows_ = 0;
  recording_error_.reset();
}

std::uint64_t Session::disarm_recording() {
  std::lock_guard lock(mu_);
  if (!recording_) throw SessionError("no recording armed");
  recording_rows_ = recording_->close();
  recording_.reset();
  return recording_rows_;
}

Session::ListenerId Session::subscribe(Listener listener) {
  std::lock_guard lock(mu_);
  const ListenerId id = next_listener_++;
  listeners_.emplace_back(id, std::move(listener));
  return id;
}

void Session::unsubscribe(ListenerId id) {
  std::lock_guard lock(mu_);
  std::erase_if(listeners_, [id](const auto& p) { return p.first == id; });
}

}  // namespace picdaq::acquisition
