// Acceptance gate: one PASS/FAIL line per criterion. Exit status is the
// number of failures.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "oracles.hpp"
#include "picdaq/acquisition.hpp"
#include "picdaq/device_sim.hpp"
#include "picdaq/gateway.hpp"
#include "picdaq/protocol.hpp"
#include "picdaq/selftest.hpp"
#include "picdaq/storage.hpp"
#include "ws_client.hpp"

using namespace picdaq;
using namespace std::chrono_literals;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances and budgets.
constexpr int kRandomFrames = 100'000;
constexpr double kC1BudgetS = 5.0;
constexpr int kCorruptedStreams = 1000;
constexpr double kC2BudgetS = 10.0;
constexpr int kGridPoints = 100'000;
constexpr double kAdcErrorV = 9.8e-3;
constexpr double kC3BudgetS = 2.0;
constexpr double kC4BudgetS = 1.0;
constexpr double kC5DurationS = 10.0;
constexpr std::uint64_t kC5Frames = 10;
constexpr std::uint64_t kC5FrameSlack = 1;
constexpr double kC5SpacingTol = 0.05;
constexpr int kC6Samples = 60;
constexpr double kC6ToleranceC = 0.5;
constexpr double kC6BudgetS = 2.0;
constexpr double kC7BudgetS = 2.0;
constexpr int kC8Clients = 10;
constexpr int kC8Samples = 1000;
constexpr std::size_t kC8Outbox = 256;
constexpr double kC8BudgetS = 10.0;

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() /
         ("picdaq-acc-" + std::to_string(::getpid()) + "-" + name);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 1. Wire round trip.
Outcome wire_round_trip() {
  const auto t0 = Clock::now();
  const std::array<std::uint16_t, 6> corner{0, 1, 511, 512, 1022, 1023};
  std::uint64_t checked = 0, failures = 0;
  auto check = [&](const protocol::Frame& f) {
    ++checked;
    if (protocol::decode_frame(protocol::encode_frame(f)) != f) ++failures;
  };
  for (auto a : corner)
    for (auto b : corner)
      for (auto c : corner)
        for (auto d : corner) check(protocol::Frame{{a, b, c, d}});
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> code(0, 1023);
  for (int i = 0; i < kRandomFrames; ++i) {
    protocol::Frame f;
    for (auto& x : f.codes) x = static_cast<std::uint16_t>(code(rng));
    check(f);
  }
  const double s = seconds_since(t0);
  return {failures == 0 && s < kC1BudgetS,
          fmt("%llu frames, %llu failures, %.2fs (budget %.0fs)", (unsigned long long)checked,
              (unsigned long long)failures, s, kC1BudgetS)};
}

// 2. Decoder equals the regex oracle on corrupted streams.
Outcome decoder_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2);
  int mismatches = 0;
  std::uint64_t frames = 0;
  for (int i = 0; i < kCorruptedStreams; ++i) {
    const std::string bytes = oracle::corrupted_stream(rng, 30);
    protocol::Decoder dec;
    std::vector<protocol::Frame> got;
    std::uniform_int_distribution<std::size_t> cut(1, 40);
    for (std::size_t pos = 0; pos < bytes.size();) {
      const std::size_t n = std::min(cut(rng), bytes.size() - pos);
      for (const auto& ev : dec.feed(std::string_view(bytes).substr(pos, n))) {
        if (const auto* fe = std::get_if<protocol::FrameEvent>(&ev)) got.push_back(fe->frame);
      }
      pos += n;
    }
    const auto expect = oracle::regex_frames(bytes);
    frames += expect.size();
    if (got != expect) ++mismatches;
  }
  const double s = seconds_since(t0);
  return {mismatches == 0 && s < kC2BudgetS,
          fmt("%d streams, %llu oracle frames, %d mismatches, %.2fs (budget %.0fs)", kCorruptedStreams,
              (unsigned long long)frames, mismatches, s, kC2BudgetS)};
}

// 3. ADC model.
Outcome adc_model() {
  const auto t0 = Clock::now();
  bool monotone = true;
  double worst = 0.0;
  int prev = -1;
  for (int i = 0; i <= kGridPoints; ++i) {
    const double v = 5.0 * i / kGridPoints;
    const int q = device::quantize(v);
    if (q < prev) monotone = false;
    prev = q;
    worst = std::max(worst, std::abs(acquisition::scale_counts(q) - v));
  }
  const bool anchors = device::quantize(0.0) == oracle::boundary_scan_quantize(0.0) &&
                       device::quantize(0.0) == 0 && device::quantize(5.0) == 1023 &&
                       device::quantize(5.0) == oracle::boundary_scan_quantize(5.0) &&
                       device::quantize(2.5) == 512 &&
                       device::quantize(2.5) == oracle::boundary_scan_quantize(2.5);
  const double s = seconds_since(t0);
  return {monotone && anchors && worst <= kAdcErrorV && s < kC3BudgetS,
          fmt("monotone=%s anchors=%s max|err|=%.6f V (limit %.4f), %.2fs (budget %.0fs)",
              monotone ? "yes" : "no", anchors ? "yes" : "no", worst, kAdcErrorV, s, kC3BudgetS)};
}

// 4. Selftest determinism.
Outcome selftest_determinism() {
  const auto t0 = Clock::now();
  const auto a = run_selftest();
  const auto b = run_selftest();
  const double s = seconds_since(t0);
  bool codes_match = a.recorded.size() == a.emitted.size() && a.emitted.size() == 10;
  for (std::size_t i = 0; codes_match && i < a.recorded.size(); ++i) {
    codes_match = a.recorded[i].codes == a.emitted[i].codes;
  }
  const bool identical = a.csv == b.csv;
  return {a.ok && b.ok && codes_match && identical && s < 2 * kC4BudgetS,
          fmt("runs ok=%d/%d, codes==emitted=%s, csv identical=%s (%zu bytes), %.3fs for two runs "
              "(budget %.0fs each)",
              int(a.ok), int(b.ok), codes_match ? "yes" : "no", identical ? "yes" : "no",
              a.csv.size(), s, kC4BudgetS)};
}

// 5. Wall-clock rate.
Outcome wall_clock_rate() {
  device::DeviceConfig dc;
  dc.sources = device::demo_sources();
  dc.rate_hz = 1.0;
  dc.clock = device::Clock::wall;
  auto [dev, host] = transport::open_loopback();
  acquisition::Session session;  // host wall-clock timestamps
  session.start(host);
  const auto t0 = Clock::now();
  const auto rep = device::run_device(dc, *dev, {}, {.max_frames = std::nullopt, .duration_s = kC5DurationS});
  dev->close();
  for (int i = 0; i < 100 && !session.stats().stream_ended; ++i) std::this_thread::sleep_for(10ms);
  const double elapsed = seconds_since(t0);
  session.stop();
  const auto samples = session.read_latest(1000);
  double mean = 0.0;
  if (samples.size() > 1) {
    mean = std::chrono::duration<double>(samples.back().timestamp - samples.front().timestamp).count() /
           static_cast<double>(samples.size() - 1);
  }
  const bool count_ok = samples.size() + kC5FrameSlack >= kC5Frames &&
                        samples.size() <= kC5Frames + kC5FrameSlack;
  const bool spacing_ok = std::abs(mean - 1.0) <= kC5SpacingTol;
  return {count_ok && spacing_ok,
          fmt("%zu frames received (%llu sent, want %llu±%llu), mean spacing %.4fs (±%.0f%%), %.2fs",
              samples.size(), (unsigned long long)rep.frames_sent, (unsigned long long)kC5Frames,
              (unsigned long long)kC5FrameSlack, mean, kC5SpacingTol * 100, elapsed)};
}

// 6. LM35 reconstruction through the full stack.
Outcome lm35_reconstruction() {
  const auto t0 = Clock::now();
  device::DeviceConfig dc;
  for (auto& s : dc.sources) s = signal::WaveformSpec::dc(0.0);
  dc.sources[0] = signal::WaveformSpec::lm35(20.0, 1.0 / 6.0);
  const auto csv = temp_path("lm35.csv");

  acquisition::SessionConfig sc;
  sc.timestamps = acquisition::simulated_timestamps(dc.rate_hz);
  acquisition::Session session(sc);
  auto [dev, host] = transport::open_loopback();
  session.arm_recording(csv);
  session.start(host);
  device::run_device(dc, *dev, {}, {.max_frames = kC6Samples, .duration_s = std::nullopt});
  dev->close();
  for (int i = 0; i < 200 && !session.stats().stream_ended; ++i) std::this_thread::sleep_for(5ms);
  session.stop();

  const auto rows = storage::load_recording(csv);
  std::filesystem::remove(csv);
  const auto series = storage::transform_series(rows, 0, storage::ChannelTransform::lm35_celsius);
  double worst = 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double truth = signal::sample_waveform(dc.sources[0], static_cast<double>(i)) / 0.01;
    worst = std::max(worst, std::abs(series[i].value - truth));
  }
  const double s = seconds_since(t0);
  const bool ok = series.size() == static_cast<std::size_t>(kC6Samples) && worst <= kC6ToleranceC &&
                  s < kC6BudgetS;
  return {ok, fmt("%zu points, %.2f..%.2f C, max|err|=%.3f C (limit %.1f), %.2fs (budget %.0fs)",
                  series.size(), series.empty() ? 0.0 : series.front().value,
                  series.empty() ? 0.0 : series.back().value, worst, kC6ToleranceC, s, kC6BudgetS)};
}

// 7. Mask non-interference.
Outcome mask_non_interference() {
  const auto t0 = Clock::now();
  device::DeviceConfig dc;
  dc.sources = device::demo_sources();
  std::string input;
  {
    device::DeviceState st;
    for (int i = 0; i < 500; ++i) {
      input += device::device_tick(st, dc);
      if (i % 37 == 0) input += "junk\r\n";
    }
  }
  std::vector<std::string> files;
  for (const acquisition::ChannelMask& mask :
       {acquisition::ChannelMask{true, true, true, true}, acquisition::ChannelMask{true, false, false, false}}) {
    acquisition::SessionConfig sc;
    sc.timestamps = acquisition::simulated_timestamps(1.0);
    sc.mask = mask;
    acquisition::Session session(sc);
    const auto csv = temp_path("mask" + std::to_string(files.size()) + ".csv");
    session.start();
    session.arm_recording(csv);
    for (std::size_t pos = 0; pos < input.size(); pos += 13) {
      session.on_bytes(std::string_view(input).substr(pos, 13));
    }
    session.stop();
    files.push_back(slurp(csv));
    std::filesystem::remove(csv);
  }
  const double s = seconds_since(t0);
  const bool same = files[0] == files[1];
  const auto rows = storage::parse_recording(files[0]).size();
  return {same && rows == 500 && s < kC7BudgetS,
          fmt("rows=%zu, recordings byte-identical=%s (%zu bytes), %.2fs (budget %.0fs)", rows,
              same ? "yes" : "no", files[0].size(), s, kC7BudgetS)};
}

// 8. Gateway ordering with a stalled client.
Outcome gateway_ordering() {
  const auto t0 = Clock::now();
  acquisition::SessionConfig sc;
  sc.timestamps = acquisition::simulated_timestamps(1.0);
  acquisition::Session session(sc);
  session.start();
  gateway::GatewayConfig gc;
  gc.outbox_capacity = kC8Outbox;
  gc.send_buffer_bytes = 4096;
  gc.drop_grace = 200ms;
  gateway::Server server(session, gc);

  wsc::Client stalled(server.port(), "/stream", 2048);
  std::vector<std::unique_ptr<wsc::Client>> clients;
  for (int i = 0; i < kC8Clients; ++i) {
    clients.push_back(std::make_unique<wsc::Client>(server.port(), "/stream"));
    clients.back()->recv();  // greeting
  }
  for (int i = 0; i < 500 && server.stream_clients() < kC8Clients + 1; ++i) std::this_thread::sleep_for(5ms);

  std::vector<std::vector<std::uint64_t>> got(clients.size());
  std::vector<std::thread> readers;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    readers.emplace_back([&, i] {
      while (got[i].size() < static_cast<std::size_t>(kC8Samples)) {
        auto m = clients[i]->recv_json();
        if (!m) break;
        if ((*m)["type"] == "sample") got[i].push_back((*m)["seq"].get<std::uint64_t>());
      }
    });
  }
  for (int i = 0; i < kC8Samples; ++i) {
    session.on_bytes(protocol::encode_frame({{static_cast<std::uint16_t>(i % 1024), 0, 0, 0}}));
    std::this_thread::sleep_for(1ms);
  }
  // Bound the wait: stopping the server releases any reader still blocked.
  std::thread watchdog([&] {
    const auto deadline = Clock::now() + std::chrono::duration<double>(kC8BudgetS);
    while (Clock::now() < deadline) {
      bool all = true;
      for (const auto& g : got) all = all && g.size() >= static_cast<std::size_t>(kC8Samples);
      if (all) return;
      std::this_thread::sleep_for(10ms);
    }
    server.stop();
  });
  for (auto& r : readers) r.join();
  watchdog.join();

  int in_order = 0;
  for (const auto& g : got) {
    bool ok = g.size() == static_cast<std::size_t>(kC8Samples);
    for (std::size_t k = 0; ok && k < g.size(); ++k) ok = g[k] == k;
    in_order += ok;
  }
  const auto dropped = server.dropped_clients();
  server.stop();
  const double s = seconds_since(t0);
  return {in_order == kC8Clients && dropped == 1 && s < kC8BudgetS,
          fmt("%d/%d clients got %d samples exactly once in order, stalled clients dropped=%llu "
              "(outbox %zu), %.2fs (budget %.0fs)",
              in_order, kC8Clients, kC8Samples, (unsigned long long)dropped, kC8Outbox, s, kC8BudgetS)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"1 wire round-trip", wire_round_trip},
      {"2 decoder oracle equivalence", decoder_oracle},
      {"3 ADC model", adc_model},
      {"4 end-to-end determinism", selftest_determinism},
      {"5 wall-clock rate", wall_clock_rate},
      {"6 LM35 reconstruction", lm35_reconstruction},
      {"7 mask non-interference", mask_non_interference},
      {"8 gateway ordering", gateway_ordering},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s criterion %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures;
}
