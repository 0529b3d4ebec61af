#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "picdaq/acquisition.hpp"
#include "picdaq/device_sim.hpp"
#include "picdaq/storage.hpp"

using namespace picdaq;
using namespace picdaq::acquisition;
using protocol::encode_frame;
using protocol::Frame;
using namespace std::chrono_literals;

namespace {

std::filesystem::path temp_csv(const std::string& stem) {
  return std::filesystem::temp_directory_path() /
         (stem + "-" + std::to_string(::getpid()) + ".csv");
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SessionConfig sim_config(std::size_t capacity = kDefaultRingCapacity) {
  SessionConfig c;
  c.ring_capacity = capacity;
  c.timestamps = simulated_timestamps(1.0);
  return c;
}

Frame random_frame(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> code(0, 1023);
  Frame f;
  for (auto& c : f.codes) c = static_cast<std::uint16_t>(code(rng));
  return f;
}

}  // namespace

TEST_CASE("scale_counts examples") {
  CHECK(scale_counts(0) == 0.0);
  CHECK(scale_counts(1023) == 5.0);
  // Frozen from oracle::scale_hp(512).
  CHECK(scale_counts(512) == doctest::Approx(2.50244379276637341153).epsilon(1e-15));
  CHECK_THROWS_AS(scale_counts(-1), std::out_of_range);
  CHECK_THROWS_AS(scale_counts(1024), std::out_of_range);
}

TEST_CASE("scale_counts agrees with high-precision evaluation for every code") {
  for (int code = 0; code <= 1023; ++code) {
    const double ref = oracle::scale_hp(code).convert_to<double>();
    REQUIRE(std::abs(scale_counts(code) - ref) <= 1e-15 * std::max(1.0, ref));
  }
}

TEST_CASE("on_bytes examples") {
  Session s(sim_config());
  CHECK_THROWS_AS(s.on_bytes("x"), SessionError);
  s.start();
  CHECK(s.channel_mask() == kAllChannels);
  CHECK(s.read_latest(10).empty());

  auto out = s.on_bytes(encode_frame({{0, 0, 0, 0}}));
  REQUIRE(out.size() == 1);
  CHECK(out[0].volts == std::array<double, 4>{0, 0, 0, 0});
  CHECK(out[0].seq == 0);

  const std::string f = encode_frame({{1, 2, 3, 4}});
  CHECK(s.on_bytes(f.substr(0, 9)).empty());
  out = s.on_bytes(f.substr(9));
  REQUIRE(out.size() == 1);
  CHECK(out[0].seq == 1);
  CHECK(out[0].codes == std::array<std::uint16_t, 4>{1, 2, 3, 4});

  const auto before = s.stats().decoder.frames_rejected;
  out = s.on_bytes("xxxx\r\n" + encode_frame({{512, 512, 512, 512}}));
  REQUIRE(out.size() == 1);
  CHECK(out[0].seq == 2);
  CHECK(s.stats().decoder.frames_rejected == before + 1);
}

TEST_CASE("session state machine") {
  Session s(sim_config());
  CHECK_THROWS_AS(s.stop(), SessionError);
  s.start();
  CHECK_THROWS_AS(s.start(), SessionError);
  for (int i = 0; i < 10; ++i) s.on_bytes(encode_frame({{1, 1, 1, 1}}));
  auto st = s.stop();
  CHECK(st.accepted == 10);
  CHECK(st.channels[0].count == 10);
  CHECK_FALSE(st.running);
  CHECK_THROWS_AS(s.stop(), SessionError);

  s.start();
  CHECK(s.stats().accepted == 0);
  CHECK(s.on_bytes(encode_frame({{1, 1, 1, 1}}))[0].seq == 0);
  s.stop();
}

TEST_CASE("armed recording is closed on stop with one row per accepted frame") {
  const auto path = temp_csv("stop-close");
  Session s(sim_config());
  s.start();
  s.arm_recording(path);
  for (int i = 0; i < 7; ++i) s.on_bytes(encode_frame({{9, 9, 9, 9}}));
  auto st = s.stop();
  CHECK(st.recording_rows == 7);
  CHECK_FALSE(st.recording_armed);
  CHECK(storage::load_recording(path).size() == 7);
  std::filesystem::remove(path);
}

TEST_CASE("channel mask is a view") {
  const auto path = temp_csv("mask-view");
  Session s(sim_config());
  s.start();
  s.set_channel_mask({true, false, false, false});
  s.arm_recording(path);
  for (int i = 0; i < 5; ++i) {
    s.on_bytes(encode_frame({{static_cast<std::uint16_t>(i), 100, 200, 300}}));
  }
  CHECK(s.disarm_recording() == 5);
  for (const auto& row : storage::load_recording(path)) {
    CHECK(row.codes[1] == 100);
    CHECK(row.codes[3] == 300);
  }
  s.set_channel_mask({false, false, false, false});
  s.on_bytes(encode_frame({{1, 2, 3, 4}}));
  s.set_channel_mask(kAllChannels);
  const auto latest = s.read_latest(6);
  REQUIRE(latest.size() == 6);
  CHECK(latest.back().codes[2] == 3);
  CHECK(latest[0].codes[2] == 200);
  CHECK(s.stats().channels[3].count == 6);
  std::filesystem::remove(path);
}

TEST_CASE("read_latest window") {
  Session s(sim_config());
  s.start();
  for (int i = 0; i < 3; ++i) s.on_bytes(encode_frame({{0, 0, 0, 0}}));
  auto two = s.read_latest(2);
  REQUIRE(two.size() == 2);
  CHECK(two[0].seq == 1);
  CHECK(two[1].seq == 2);
  CHECK(s.read_latest(0).empty());
  s.stop();

  Session big(sim_config(4096));
  big.start();
  std::string burst;
  for (int i = 0; i < 5000; ++i) burst += encode_frame({{0, 0, 0, 0}});
  big.on_bytes(burst);
  const auto all = big.read_latest(100'000);
  REQUIRE(all.size() == 4096);
  CHECK(all.front().seq == 5000 - 4096);
  for (std::size_t i = 1; i < all.size(); ++i) REQUIRE(all[i].seq == all[i - 1].seq + 1);
}

TEST_CASE("seq stays dense under corruption") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Session s(sim_config());
    s.start();
    const std::string bytes = oracle::corrupted_stream(rng, 40);
    std::uniform_int_distribution<std::size_t> cut(1, 64);
    std::vector<Sample> got;
    for (std::size_t pos = 0; pos < bytes.size();) {
      const std::size_t n = std::min(cut(rng), bytes.size() - pos);
      auto part = s.on_bytes(std::string_view(bytes).substr(pos, n));
      got.insert(got.end(), part.begin(), part.end());
      pos += n;
    }
    const auto expect = oracle::regex_frames(bytes);
    REQUIRE(got.size() == expect.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      REQUIRE(got[i].seq == i);
      REQUIRE(got[i].codes == expect[i].codes);
    }
  }
}

TEST_CASE("stats agree with the recording file") {
  std::mt19937_64 rng(12);
  const auto path = temp_csv("stats");
  Session s(sim_config());
  s.start();
  s.arm_recording(path);
  for (int i = 0; i < 500; ++i) s.on_bytes(encode_frame(random_frame(rng)));
  const auto st = s.stop();
  const auto rows = storage::load_recording(path);
  REQUIRE(rows.size() == 500);
  for (std::size_t ch = 0; ch < 4; ++ch) {
    double lo = 1e9, hi = -1e9, sum = 0;
    for (const auto& r : rows) {
      lo = std::min(lo, r.volts[ch]);
      hi = std::max(hi, r.volts[ch]);
      sum += r.volts[ch];
    }
    const double mean = sum / static_cast<double>(rows.size());
    const auto& c = st.channels[ch];
    CHECK(c.min_volts() == doctest::Approx(lo).epsilon(1e-9));
    CHECK(c.max_volts() == doctest::Approx(hi).epsilon(1e-9));
    CHECK(c.mean_volts() == doctest::Approx(mean).epsilon(1e-9));
    CHECK(c.min_volts() <= c.mean_volts());
    CHECK(c.mean_volts() <= c.max_volts());
    CHECK(c.last == rows.back().codes[ch]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("end-to-end loopback identity") {
  for (double rate : {1.0, 10.0, 50.0}) {
    device::DeviceConfig dc;
    dc.sources = device::demo_sources();
    dc.rate_hz = rate;

    auto [dev, host] = transport::open_loopback(256);
    Session s(sim_config());
    s.start(host);
    auto rep = device::run_device(dc, *dev, {}, {.max_frames = 300, .duration_s = std::nullopt});
    dev->close();
    for (int i = 0; i < 200 && !s.stats().stream_ended; ++i) std::this_thread::sleep_for(10ms);
    const auto st = s.stop();
    CHECK(st.stream_ended);
    REQUIRE(rep.frames_sent == 300);
    REQUIRE(st.accepted == 300);

    const auto got = s.read_latest(300);
    device::DeviceState ds;
    for (const auto& sample : got) {
      REQUIRE(sample.codes == device::sample_channels(ds, dc).codes);
      device::device_tick(ds, dc);
    }
  }
}

TEST_CASE("recordings are identical under different masks") {
  std::mt19937_64 rng(13);
  std::string input = oracle::corrupted_stream(rng, 200);
  std::vector<std::string> files;
  for (const ChannelMask& mask : {kAllChannels, ChannelMask{true, false, false, false},
                                  ChannelMask{false, false, false, false}}) {
    const auto path = temp_csv("mask-" + std::to_string(files.size()));
    Session s(sim_config());
    s.start();
    s.set_channel_mask(mask);
    s.arm_recording(path);
    for (std::size_t pos = 0; pos < input.size(); pos += 7) {
      s.on_bytes(std::string_view(input).substr(pos, 7));
    }
    s.stop();
    files.push_back(slurp(path));
    std::filesystem::remove(path);
  }
  CHECK(files[0].size() > storage::kHeader.size());
  CHECK(files[0] == files[1]);
  CHECK(files[0] == files[2]);
}

TEST_CASE("listeners see every sample with the mask current at delivery") {
  Session s(sim_config());
  std::vector<std::pair<std::uint64_t, ChannelMask>> seen;
  const auto id = s.subscribe([&](const Sample& x, const ChannelMask& m) { seen.emplace_back(x.seq, m); });
  s.start();
  s.on_bytes(encode_frame({{1, 1, 1, 1}}));
  s.set_channel_mask({false, true, false, false});
  s.on_bytes(encode_frame({{1, 1, 1, 1}}));
  s.unsubscribe(id);
  s.on_bytes(encode_frame({{1, 1, 1, 1}}));
  REQUIRE(seen.size() == 2);
  CHECK(seen[0].second == kAllChannels);
  CHECK(seen[1].second == ChannelMask{false, true, false, false});
}

TEST_CASE("observed rate and expected rate") {
  SessionConfig c = sim_config();
  c.timestamps = simulated_timestamps(4.0);
  Session s(c);
  s.start();
  CHECK_FALSE(s.stats().observed_rate_hz);
  for (int i = 0; i < 9; ++i) s.on_bytes(encode_frame({{0, 0, 0, 0}}));
  REQUIRE(s.stats().observed_rate_hz);
  CHECK(*s.stats().observed_rate_hz == doctest::Approx(4.0));
  s.set_expected_rate(4.0);
  CHECK(s.stats().expected_rate_hz == 4.0);
  CHECK_THROWS(s.set_expected_rate(0.0));
}

TEST_CASE("simulated timestamps") {
  const auto ts = simulated_timestamps(4.0);
  CHECK(format_iso8601(ts(0)) == "1970-01-01T00:00:00.000Z");
  CHECK(format_iso8601(ts(5)) == "1970-01-01T00:00:01.250Z");
}
