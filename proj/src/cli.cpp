#include "picdaq/cli.hpp"

#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "picdaq/acquisition.hpp"
#include "picdaq/device_sim.hpp"
#include "picdaq/gateway.hpp"
#include "picdaq/selftest.hpp"
#include "picdaq/signal_sources.hpp"
#include "picdaq/storage.hpp"
#include "picdaq/transport.hpp"

#ifndef PICDAQ_VERSION
#define PICDAQ_VERSION "dev"
#endif

namespace picdaq::cli {

namespace {

using Clock = std::chrono::steady_clock;

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

struct SignalScope {
  SignalScope() {
    g_interrupted = false;
    prev_int_ = std::signal(SIGINT, on_signal);
    prev_term_ = std::signal(SIGTERM, on_signal);
  }
  ~SignalScope() {
    std::signal(SIGINT, prev_int_);
    std::signal(SIGTERM, prev_term_);
  }

 private:
  void (*prev_int_)(int);
  void (*prev_term_)(int);
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr const char* kGrammarHelp = R"(
Waveforms (--ch1..--ch4):
  sine:f=HZ,amp=V,offset=V      square:f=HZ,amp=V,offset=V
  triangle:f=HZ,amp=V,offset=V  dc:offset=V
  lm35:start=DEGC,slope=DEGC_PER_S   (10 mV per degree C)
  Output is clamped to 0..5 V.

Transports (--transport):
  loopback              in-process device (acquire/serve run the simulator)
  tcp-listen:HOST:PORT  wait for one peer to connect
  tcp:HOST:PORT         connect to a peer
  serial:PATH[:BAUD]    OS serial device, 8N1, default 9600 baud

Wire format: 16 ASCII digits (four zero-padded codes 0000-1023) then CR LF.
)";

transport::TransportSpec parse_transport_or_usage(const std::string& text) {
  try {
    return transport::parse_transport_spec(text);
  } catch (const transport::SpecError& e) {
    throw UsageError(e.what());
  }
}

std::array<signal::WaveformSpec, protocol::kChannels> parse_sources(
    const std::array<std::string, protocol::kChannels>& texts) {
  auto sources = device::demo_sources();
  for (std::size_t ch = 0; ch < protocol::kChannels; ++ch) {
    if (texts[ch].empty()) continue;
    try {
      sources[ch] = signal::parse_waveform(texts[ch]);
    } catch (const signal::WaveformError& e) {
      throw UsageError("--ch" + std::to_string(ch + 1) + ": " + e.what());
    }
  }
  return sources;
}

acquisition::ChannelMask parse_mask(const std::string& text) {
  acquisition::ChannelMask mask{};
  std::size_t i = 0;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (i >= mask.size() || (item != "0" && item != "1")) {
      throw UsageError("--mask: expected four comma-separated 0/1 values, got '" + text + "'");
    }
    mask[i++] = item == "1";
  }
  if (i != mask.size()) {
    throw UsageError("--mask: expected four comma-separated 0/1 values, got '" + text + "'");
  }
  return mask;
}

void require_positive(double v, const char* flag) {
  if (!std::isfinite(v) || v <= 0.0) throw UsageError(std::string(flag) + " must be > 0");
}

std::pair<std::string, std::uint16_t> parse_listen(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0) throw UsageError("--listen: expected HOST:PORT");
  unsigned port = 0;
  try {
    std::size_t pos = 0;
    port = static_cast<unsigned>(std::stoul(text.substr(colon + 1), &pos));
    if (pos != text.size() - colon - 1 || port > 65535) throw std::out_of_range("port");
  } catch (const std::exception&) {
    throw UsageError("--listen: bad port in '" + text + "'");
  }
  return {text.substr(0, colon), static_cast<std::uint16_t>(port)};
}

/// A transport endpoint for the host side, plus the in-process device that
/// feeds it when the transport is `loopback`.
class Station {
 public:
  Station(transport::TransportSpec spec, device::DeviceConfig sim)
      : spec_(std::move(spec)), sim_(std::move(sim)) {}

  ~Station() { stop_device(); }

  transport::StreamPtr open() {
    if (spec_.kind != transport::TransportSpec::Kind::loopback) return transport::open(spec_);
    auto [dev, host] = transport::open_loopback();
    dev_end_ = dev;
    start_device();
    return host;
  }

  void set_rate(double hz) {
    sim_.rate_hz = hz;
    if (dev_end_ && device_.joinable()) {
      stop_device();
      start_device();
    }
  }

  void close() {
    stop_device();
    if (dev_end_) dev_end_->close();
    dev_end_.reset();
  }

 private:
  void start_device() {
    device_ = std::jthread([dev = dev_end_, cfg = sim_](std::stop_token st) {
      device::run_device(cfg, *dev, st);
    });
  }
  void stop_device() { device_ = {}; }

  transport::TransportSpec spec_;
  device::DeviceConfig sim_;
  transport::StreamPtr dev_end_;
  std::jthread device_;
};

void print_summary(std::ostream& err, const acquisition::SessionStats& st) {
  err << "accepted " << st.accepted << " frames, rejected " << st.decoder.frames_rejected
      << ", discarded " << st.decoder.bytes_discarded << " bytes\n";
  for (std::size_t ch = 0; ch < acquisition::kChannels; ++ch) {
    const auto& c = st.channels[ch];
    if (c.count == 0) continue;
    err << "  ch" << ch + 1 << ": min " << c.min << " max " << c.max << " mean " << std::fixed
        << std::setprecision(2) << c.mean() << " (" << std::setprecision(3) << c.mean_volts()
        << " V)\n";
    err.unsetf(std::ios::fixed);
  }
  if (st.observed_rate_hz) {
    err << "observed rate " << std::setprecision(4) << *st.observed_rate_hz << " Hz (expected "
        << st.expected_rate_hz << " Hz)\n";
    if (std::abs(*st.observed_rate_hz - st.expected_rate_hz) > 0.05 * st.expected_rate_hz) {
      err << "warning: observed rate deviates more than 5% from expected\n";
    }
  }
  if (st.transport_error) err << "transport error: " << *st.transport_error << "\n";
  if (st.recording_error) err << "recording error: " << *st.recording_error << "\n";
}

// ---------------------------------------------------------------------------
// subcommands

struct SimulateArgs {
  std::string transport;
  double rate = device::kDefaultRateHz;
  std::array<std::string, protocol::kChannels> ch;
  std::optional<double> duration;
  bool wall_clock = false;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out, std::ostream& err) {
  require_positive(a.rate, "--rate");
  if (a.duration) require_positive(*a.duration, "--duration");
  const auto spec = parse_transport_or_usage(a.transport);
  if (spec.kind == transport::TransportSpec::Kind::loopback) {
    throw UsageError("simulate: loopback has no external peer; use selftest, acquire or serve");
  }
  device::DeviceConfig cfg;
  cfg.rate_hz = a.rate;
  cfg.sources = parse_sources(a.ch);
  cfg.clock = a.wall_clock ? device::Clock::wall : device::Clock::simulated;
  try {
    device::validate(cfg, spec.kind == transport::TransportSpec::Kind::serial
                              ? std::optional<unsigned>(spec.baud)
                              : std::nullopt);
  } catch (const device::ConfigError& e) {
    throw UsageError(e.what());
  }

  SignalScope signals;
  auto stream = transport::open(spec);
  err << "simulate: connected via " << transport::to_string(spec) << "\n";

  std::stop_source stop;
  std::jthread watcher([&stop](std::stop_token st) {
    while (!st.stop_requested()) {
      if (g_interrupted) stop.request_stop();
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  });
  const auto report = device::run_device(cfg, *stream, stop.get_token(), {.max_frames = std::nullopt, .duration_s = a.duration});
  watcher.request_stop();
  stream->close();

  out << "frames_sent=" << report.frames_sent << " duration_s=" << report.duration_s << "\n";
  if (report.error) {
    err << "simulate: transport error: " << *report.error << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

struct AcquireArgs {
  std::string transport;
  std::string out;
  std::optional<double> duration;
  std::string mask = "1,1,1,1";
  double rate_expect = 1.0;
  std::size_t ring = acquisition::kDefaultRingCapacity;
  bool quiet = false;
};

int cmd_acquire(const AcquireArgs& a, std::ostream& out, std::ostream& err) {
  const auto spec = parse_transport_or_usage(a.transport);
  const auto mask = parse_mask(a.mask);
  require_positive(a.rate_expect, "--rate-expect");
  if (a.duration) require_positive(*a.duration, "--duration");
  if (a.ring == 0) throw UsageError("--ring must be > 0");

  device::DeviceConfig sim;
  sim.rate_hz = a.rate_expect;
  sim.sources = device::demo_sources();
  sim.clock = device::Clock::wall;

  acquisition::SessionConfig scfg;
  scfg.ring_capacity = a.ring;
  scfg.mask = mask;
  scfg.expected_rate_hz = a.rate_expect;
  acquisition::Session session(scfg);

  std::mutex out_mu;
  if (!a.quiet) {
    session.subscribe([&](const acquisition::Sample& s, const acquisition::ChannelMask& m) {
      std::ostringstream line;
      line << format_iso8601(s.timestamp) << " seq=" << s.seq;
      line << std::fixed << std::setprecision(3);
      for (std::size_t ch = 0; ch < acquisition::kChannels; ++ch) {
        if (m[ch]) line << " ch" << ch + 1 << '=' << s.codes[ch] << " (" << s.volts[ch] << " V)";
      }
      std::lock_guard lock(out_mu);
      out << line.str() << "\n" << std::flush;
    });
  }

  SignalScope signals;
  Station station(spec, sim);
  auto stream = station.open();
  if (!a.out.empty()) session.arm_recording(a.out);
  session.start(stream);

  const auto deadline = a.duration ? std::optional(Clock::now() + std::chrono::duration_cast<Clock::duration>(
                                                                      std::chrono::duration<double>(*a.duration)))
                                   : std::nullopt;
  while (!g_interrupted) {
    if (deadline && Clock::now() >= *deadline) break;
    if (session.stats().stream_ended) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  station.close();
  const auto st = session.stop();
  stream->close();
  print_summary(err, st);
  if (!a.out.empty()) err << "recorded " << st.recording_rows << " rows to " << a.out << "\n";
  return st.transport_error || st.recording_error ? kExitRuntime : kExitOk;
}

struct ServeArgs {
  std::string listen;
  std::string transport = "loopback";
  std::string ui_dir;
  double rate = device::kDefaultRateHz;
  std::array<std::string, protocol::kChannels> ch;
  std::size_t outbox = gateway::kDefaultOutbox;
};

int cmd_serve(const ServeArgs& a, std::ostream& out, std::ostream& err) {
  const auto [host, port] = parse_listen(a.listen);
  const auto spec = parse_transport_or_usage(a.transport);
  require_positive(a.rate, "--rate");
  if (a.outbox == 0) throw UsageError("--outbox must be > 0");
  if (!a.ui_dir.empty() && !std::filesystem::is_directory(a.ui_dir)) {
    throw UsageError("--ui-dir: not a directory: " + a.ui_dir);
  }

  device::DeviceConfig sim;
  sim.rate_hz = a.rate;
  sim.sources = parse_sources(a.ch);
  sim.clock = device::Clock::wall;

  acquisition::SessionConfig scfg;
  scfg.expected_rate_hz = a.rate;
  acquisition::Session session(scfg);
  Station station(spec, sim);
  std::mutex control_mu;
  transport::StreamPtr stream;

  gateway::ControlHooks hooks;
  hooks.start = [&] {
    std::lock_guard lock(control_mu);
    if (session.running()) throw acquisition::SessionError("session already running");
    stream = station.open();
    session.start(stream);
  };
  hooks.stop = [&] {
    std::lock_guard lock(control_mu);
    auto st = session.stop();
    station.close();
    if (stream) stream->close();
    return st;
  };
  hooks.set_rate = [&](double hz) {
    std::lock_guard lock(control_mu);
    session.set_expected_rate(hz);
    station.set_rate(hz);
  };

  gateway::GatewayConfig gcfg;
  gcfg.host = host;
  gcfg.port = port;
  gcfg.outbox_capacity = a.outbox;
  if (!a.ui_dir.empty()) gcfg.ui_dir = a.ui_dir;

  SignalScope signals;
  auto server = gateway::serve(session, gcfg, hooks);
  out << "listening on " << host << ":" << server->port() << "\n" << std::flush;
  hooks.start();
  err << "acquiring from " << transport::to_string(spec) << "\n";

  std::optional<std::string> reported_error;
  bool reported_end = false;
  while (!g_interrupted) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    const auto st = session.stats();
    if (st.transport_error && st.transport_error != reported_error) {
      reported_error = st.transport_error;
      err << "transport error: " << *st.transport_error << "\n";
      server->publish_error("transport: " + *st.transport_error);
    }
    if (st.running && st.stream_ended && !reported_end) {
      reported_end = true;
      err << "device stream ended\n";
      server->publish_status("stream ended");
    }
    if (!st.stream_ended) reported_end = false;
  }

  server->stop();
  if (session.running()) print_summary(err, hooks.stop());
  return kExitOk;
}

struct ReplayArgs {
  std::string file;
  int channel = 1;
  std::string transform = "volts";
  std::string plot;
  std::string out;
};

int cmd_replay(const ReplayArgs& a, std::ostream& out, std::ostream& err) {
  if (a.channel < 1 || a.channel > 4) throw UsageError("--channel must be 1..4");
  storage::ChannelTransform t;
  try {
    t = storage::parse_transform(a.transform);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const auto samples = storage::load_recording(a.file);
  const auto series = storage::transform_series(samples, static_cast<std::size_t>(a.channel - 1), t);

  if (!a.plot.empty()) {
    storage::PlotOptions opts;
    opts.title = a.file + " ch" + std::to_string(a.channel) + " (" + a.transform + ")";
    storage::render_plot(series, a.plot, opts);
    err << "wrote plot " << a.plot << "\n";
  }
  if (a.out == "-" || (a.out.empty() && a.plot.empty())) {
    out << storage::format_series_csv(series);
  } else if (!a.out.empty()) {
    std::ofstream f(a.out, std::ios::binary | std::ios::trunc);
    f << storage::format_series_csv(series);
    if (!f) throw storage::StorageError("cannot write " + a.out);
    err << "wrote " << series.size() << " rows to " << a.out << "\n";
  }
  return kExitOk;
}

struct SelftestArgs {
  std::uint64_t frames = 10;
  std::string out;
};

int cmd_selftest(const SelftestArgs& a, std::ostream& out, std::ostream& err) {
  if (a.frames == 0) throw UsageError("--frames must be > 0");
  SelftestOptions opts;
  opts.frames = a.frames;
  if (!a.out.empty()) opts.csv_path = a.out;
  const auto r = run_selftest(opts);
  out << "selftest: " << (r.ok ? "PASS" : "FAIL") << " - " << r.message << "\n";
  if (!a.out.empty()) out << "recording: " << a.out << "\n";
  if (!r.ok) {
    err << "selftest failed\n";
    return kExitRuntime;
  }
  return kExitOk;
}

void add_channel_flags(CLI::App* cmd, std::array<std::string, protocol::kChannels>& ch) {
  for (std::size_t i = 0; i < ch.size(); ++i) {
    cmd->add_option("--ch" + std::to_string(i + 1), ch[i],
                    "Waveform for channel " + std::to_string(i + 1) + " (see grammar below)");
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"picdaq - 4-channel 10-bit data acquisition simulator and host", "picdaq"};
  app.set_version_flag("--version", std::string("picdaq ") + PICDAQ_VERSION);
  app.footer(kGrammarHelp);
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run the device simulator on a transport");
  simulate->add_option("--transport", sim.transport, "Transport spec")->required();
  simulate->add_option("--rate", sim.rate, "Sampling rate in Hz")->capture_default_str();
  add_channel_flags(simulate, sim.ch);
  simulate->add_option("--duration", sim.duration, "Stop after this many seconds");
  simulate->add_flag("--wall-clock", sim.wall_clock, "Pace frames in real time");
  simulate->footer(kGrammarHelp);

  AcquireArgs acq;
  auto* acquire = app.add_subcommand("acquire", "Receive, display and record samples");
  acquire->add_option("--transport", acq.transport, "Transport spec")->required();
  acquire->add_option("--out", acq.out, "Record all four channels to this CSV file");
  acquire->add_option("--duration", acq.duration, "Stop after this many seconds");
  acquire->add_option("--mask", acq.mask, "Displayed channels, e.g. 1,0,1,1")->capture_default_str();
  acquire->add_option("--rate-expect", acq.rate_expect, "Expected frame rate in Hz")
      ->capture_default_str();
  acquire->add_option("--ring", acq.ring, "Ring buffer capacity in samples")->capture_default_str();
  acquire->add_flag("--quiet", acq.quiet, "Do not print samples");
  acquire->footer(kGrammarHelp);

  ServeArgs srv;
  auto* serve = app.add_subcommand("serve", "Serve /control and /stream over WebSocket");
  serve->add_option("--listen", srv.listen, "HOST:PORT")->required();
  serve->add_option("--transport", srv.transport, "Transport spec")->capture_default_str();
  serve->add_option("--ui-dir", srv.ui_dir, "Directory of operator UI assets served on /");
  serve->add_option("--rate", srv.rate, "Embedded simulator rate (loopback)")->capture_default_str();
  add_channel_flags(serve, srv.ch);
  serve->add_option("--outbox", srv.outbox, "Per-client stream outbox, in messages")
      ->capture_default_str();
  serve->footer(kGrammarHelp);

  ReplayArgs rep;
  auto* replay = app.add_subcommand("replay", "Reconstruct a channel from a recording");
  replay->add_option("file", rep.file, "Recording CSV")->required();
  replay->add_option("--channel", rep.channel, "Channel 1..4")->capture_default_str();
  replay->add_option("--transform", rep.transform, "raw|volts|lm35")->capture_default_str();
  replay->add_option("--plot", rep.plot, "Write an SVG plot");
  replay->add_option("--out", rep.out, "Write derived CSV ('-' for stdout)");

  SelftestArgs st;
  auto* selftest = app.add_subcommand("selftest", "Loopback end-to-end check");
  selftest->add_option("--frames", st.frames, "Frames to simulate")->capture_default_str();
  selftest->add_option("--out", st.out, "Keep the recording at this path");

  std::vector<std::string> argv_store{"picdaq"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*simulate) return cmd_simulate(sim, out, err);
    if (*acquire) return cmd_acquire(acq, out, err);
    if (*serve) return cmd_serve(srv, out, err);
    if (*replay) return cmd_replay(rep, out, err);
    if (*selftest) return cmd_selftest(st, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace picdaq::cli
