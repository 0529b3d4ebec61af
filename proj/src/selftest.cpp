#include "picdaq/selftest.hpp"

#include <fstream>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "picdaq/storage.hpp"
#include "picdaq/transport.hpp"

namespace picdaq {

namespace {

/// Pass-through stream that keeps a copy of everything written.
class TeeStream final : public transport::ByteStream {
 public:
  explicit TeeStream(transport::StreamPtr inner) : inner_(std::move(inner)) {}

  void write(std::string_view bytes) override {
    inner_->write(bytes);
    written_.append(bytes);
  }
  transport::ReadResult read(std::chrono::milliseconds timeout) override {
    return inner_->read(timeout);
  }
  void close() override { inner_->close(); }
  transport::Backend backend() const override { return inner_->backend(); }

  const std::string& written() const { return written_; }

 private:
  transport::StreamPtr inner_;
  std::string written_;
};

}  // namespace

SelftestResult run_selftest(const SelftestOptions& options) {
  SelftestResult result;

  const bool temporary = !options.csv_path;
  const auto csv_path = options.csv_path.value_or(
      std::filesystem::temp_directory_path() /
      ("picdaq-selftest-" + std::to_string(::getpid()) + ".csv"));

  device::DeviceConfig config;
  config.rate_hz = options.rate_hz;
  config.sources = options.sources;
  config.clock = device::Clock::simulated;

  auto [device_end, host_end] = transport::open_loopback();
  TeeStream tee(device_end);

  acquisition::SessionConfig scfg;
  scfg.timestamps = acquisition::simulated_timestamps(options.rate_hz);
  scfg.expected_rate_hz = options.rate_hz;
  scfg.read_timeout = std::chrono::milliseconds(10);
  acquisition::Session session(scfg);
  session.arm_recording(csv_path);
  session.start(host_end);

  const auto report = device::run_device(config, tee, {}, {.max_frames = options.frames, .duration_s = std::nullopt});
  device_end->close();

  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
  while (!session.stats().stream_ended && std::chrono::steady_clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  result.stats = session.stop();

  protocol::Decoder decoder;
  for (const auto& ev : decoder.feed(tee.written())) {
    if (const auto* f = std::get_if<protocol::FrameEvent>(&ev)) result.emitted.push_back(f->frame);
  }

  try {
    result.recorded = storage::load_recording(csv_path);
    std::ifstream in(csv_path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    result.csv = ss.str();
  } catch (const std::exception& e) {
    result.message = std::string("load failed: ") + e.what();
  }
  if (temporary) {
    std::error_code ec;
    std::filesystem::remove(csv_path, ec);
  }
  if (!result.message.empty()) return result;

  if (report.error) {
    result.message = "device error: " + *report.error;
    return result;
  }
  if (report.frames_sent != options.frames || result.emitted.size() != options.frames) {
    result.message = "device emitted " + std::to_string(result.emitted.size()) + " of " +
                     std::to_string(options.frames) + " frames";
    return result;
  }
  if (result.recorded.size() != result.emitted.size()) {
    result.message = "recorded " + std::to_string(result.recorded.size()) + " rows, expected " +
                     std::to_string(result.emitted.size());
    return result;
  }
  for (std::size_t i = 0; i < result.recorded.size(); ++i) {
    const auto& row = result.recorded[i];
    if (row.seq != i || row.codes != result.emitted[i].codes) {
      result.message = "mismatch at row " + std::to_string(i);
      return result;
    }
  }
  result.ok = true;
  result.message = std::to_string(result.recorded.size()) + " frames round-tripped";
  return result;
}

}  // namespace picdaq
