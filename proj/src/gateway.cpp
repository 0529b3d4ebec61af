#include "picdaq/gateway.hpp"

#include <atomic>
#include <cmath>
#include <deque>
#include <fstream>
#include <functional>
#include <future>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "picdaq/transport.hpp"

namespace picdaq::gateway {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// messages

namespace {

json mask_json(const acquisition::ChannelMask& mask) { return json(mask); }

json channel_json(const acquisition::ChannelStats& c) {
  json j{{"count", c.count}};
  if (c.count > 0) {
    j["min"] = c.min;
    j["max"] = c.max;
    j["mean"] = c.mean();
    j["last"] = c.last;
    j["min_volts"] = c.min_volts();
    j["max_volts"] = c.max_volts();
    j["mean_volts"] = c.mean_volts();
    j["last_volts"] = c.last_volts();
  }
  return j;
}

std::string reply_ok(json extra = json::object()) {
  json j{{"ok", true}};
  for (auto& [k, v] : extra.items()) j[k] = v;
  return j.dump();
}

std::string reply_error(std::string_view what) {
  return json{{"ok", false}, {"error", what}}.dump();
}

}  // namespace

json stats_to_json(const acquisition::SessionStats& s) {
  json channels = json::array();
  for (const auto& c : s.channels) channels.push_back(channel_json(c));
  json j{
      {"running", s.running},
      {"accepted", s.accepted},
      {"frames_ok", s.decoder.frames_ok},
      {"frames_rejected", s.decoder.frames_rejected},
      {"bytes_discarded", s.decoder.bytes_discarded},
      {"channels", channels},
      {"mask", mask_json(s.mask)},
      {"recording", {{"armed", s.recording_armed}, {"rows", s.recording_rows}}},
      {"stream_ended", s.stream_ended},
      {"expected_rate_hz", s.expected_rate_hz},
  };
  j["observed_rate_hz"] = s.observed_rate_hz ? json(*s.observed_rate_hz) : json(nullptr);
  if (s.recording_error) j["recording"]["error"] = *s.recording_error;
  if (s.transport_error) j["transport_error"] = *s.transport_error;
  return j;
}

std::string sample_message(const acquisition::Sample& s, const acquisition::ChannelMask& mask) {
  return json{{"type", "sample"},
              {"seq", s.seq},
              {"timestamp", format_iso8601(s.timestamp)},
              {"codes", s.codes},
              {"volts", s.volts},
              {"mask", mask_json(mask)}}
      .dump();
}

std::string status_message(std::string_view state, const acquisition::ChannelMask& mask,
                           bool running) {
  return json{{"type", "status"}, {"state", state}, {"running", running}, {"mask", mask_json(mask)}}
      .dump();
}

std::string error_message(std::string_view what) {
  return json{{"type", "error"}, {"error", what}}.dump();
}

std::string handle_control(std::string_view request, acquisition::Session& engine,
                           const ControlHooks& hooks) {
  json req = json::parse(request, nullptr, false);
  if (req.is_discarded() || !req.is_object() || !req.contains("cmd") || !req["cmd"].is_string()) {
    return reply_error("malformed message");
  }
  const std::string cmd = req["cmd"].get<std::string>();

  try {
    if (cmd == "start") {
      if (hooks.start) {
        hooks.start();
      } else {
        engine.start();
      }
      return reply_ok();
    }
    if (cmd == "stop") {
      const auto stats = hooks.stop ? hooks.stop() : engine.stop();
      return reply_ok({{"stats", stats_to_json(stats)}});
    }
    if (cmd == "set_mask") {
      const auto it = req.find("mask");
      if (it == req.end() || !it->is_array() || it->size() != acquisition::kChannels) {
        return reply_error("invalid arguments: mask must be an array of 4 booleans");
      }
      acquisition::ChannelMask mask{};
      for (std::size_t i = 0; i < acquisition::kChannels; ++i) {
        const auto& v = (*it)[i];
        if (v.is_boolean()) {
          mask[i] = v.get<bool>();
        } else if (v.is_number_integer() && (v.get<int>() == 0 || v.get<int>() == 1)) {
          mask[i] = v.get<int>() == 1;
        } else {
          return reply_error("invalid arguments: mask must be an array of 4 booleans");
        }
      }
      engine.set_channel_mask(mask);
      return reply_ok();
    }
    if (cmd == "set_rate") {
      const auto it = req.find("rate_hz");
      if (it == req.end() || !it->is_number() || !std::isfinite(it->get<double>()) ||
          it->get<double>() <= 0.0) {
        return reply_error("invalid arguments: rate_hz must be a number > 0");
      }
      const double hz = it->get<double>();
      if (hooks.set_rate) {
        hooks.set_rate(hz);
      } else {
        engine.set_expected_rate(hz);
      }
      return reply_ok();
    }
    if (cmd == "arm_recording") {
      const auto it = req.find("path");
      if (it == req.end() || !it->is_string() || it->get<std::string>().empty()) {
        return reply_error("invalid arguments: path must be a non-empty string");
      }
      engine.arm_recording(it->get<std::string>());
      return reply_ok();
    }
    if (cmd == "disarm_recording") {
      const auto rows = engine.disarm_recording();
      return reply_ok({{"rows", rows}});
    }
    if (cmd == "get_stats") {
      return reply_ok({{"stats", stats_to_json(engine.stats())}});
    }
  } catch (const std::exception& e) {
    return reply_error(e.what());
  }
  return reply_error("unknown command");
}

// ---------------------------------------------------------------------------
// server

namespace {

const char* kBuiltinIndex =
    "<!doctype html><html><head><title>picdaq</title></head><body>"
    "<h1>picdaq gateway</h1><p>WebSocket endpoints: <code>/control</code>, "
    "<code>/stream</code>. Start the server with <code>--ui-dir</code> to serve the "
    "operator UI.</p></body></html>";

std::string mime_type(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html";
  if (ext == ".js" || ext == ".mjs") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".ico") return "image/x-icon";
  return "application/octet-stream";
}

}  // namespace

namespace detail {
struct ServerState;

/// Open WebSocket connection that the server can close on shutdown.
struct Connection {
  virtual ~Connection() = default;
  /// Closes the socket on the connection's strand, then calls `done`.
  virtual void force_close(std::function<void()> done) = 0;
};
}  // namespace detail
struct StreamClient;

struct detail::ServerState {
  ServerState(acquisition::Session& e, GatewayConfig c, ControlHooks h)
      : engine(e), config(std::move(c)), hooks(std::move(h)), acceptor(net::make_strand(ioc)) {}

  acquisition::Session& engine;
  GatewayConfig config;
  ControlHooks hooks;
  net::io_context ioc;
  tcp::acceptor acceptor;
  std::uint16_t port = 0;
  std::vector<std::thread> threads;
  std::promise<void> drained;
  std::optional<acquisition::Session::ListenerId> listener;

  mutable std::mutex clients_mu;
  std::vector<std::weak_ptr<StreamClient>> clients;
  std::atomic<std::uint64_t> dropped{0};
  std::atomic<bool> stopped{false};

  std::mutex connections_mu;
  std::vector<std::weak_ptr<detail::Connection>> connections;

  /// False once stop() has begun; the caller then drops the connection.
  bool track(const std::shared_ptr<detail::Connection>& c) {
    std::lock_guard lock(connections_mu);
    if (stopped) return false;
    std::erase_if(connections, [](const auto& w) { return w.expired(); });
    connections.push_back(c);
    return true;
  }

  void do_accept();
  void register_client(const std::shared_ptr<StreamClient>& c);
  void broadcast(const acquisition::Sample& s, const acquisition::ChannelMask& mask);
  void publish(std::string text);
};

/// `/stream` connection. The outbox is guarded by its own mutex so the
/// broadcaster can bound it synchronously; socket work runs on the strand.
struct StreamClient : detail::Connection, std::enable_shared_from_this<StreamClient> {
  StreamClient(websocket::stream<beast::tcp_stream> ws, detail::ServerState& server)
      : ws_(std::move(ws)), server_(server), drop_timer_(ws_.get_executor()) {}

  void accept(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.text(true);
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->read_loop();
      self->server_.register_client(self);
    });
  }

  void enqueue(std::shared_ptr<const std::string> msg, const acquisition::ChannelMask& mask) {
    std::lock_guard lock(mu_);
    if (closed_ || dropped_) return;
    const std::size_t in_flight = inflight_ ? 1 : 0;
    if (queue_.size() + in_flight >= server_.config.outbox_capacity) {
      dropped_ = true;
      queue_.clear();
      queue_.push_back(std::make_shared<const std::string>(
          status_message("dropped: outbox full", mask, true)));
      ++server_.dropped;
      net::post(ws_.get_executor(), [self = shared_from_this()] { self->begin_drop(); });
      if (!writing_) {
        writing_ = true;
        net::post(ws_.get_executor(), [self = shared_from_this()] { self->do_write(); });
      }
      return;
    }
    queue_.push_back(std::move(msg));
    if (!writing_) {
      writing_ = true;
      net::post(ws_.get_executor(), [self = shared_from_this()] { self->do_write(); });
    }
  }

  bool alive() const {
    std::lock_guard lock(mu_);
    return !closed_ && !dropped_;
  }

  void force_close(std::function<void()> done) override {
    net::post(ws_.get_executor(), [self = shared_from_this(), done = std::move(done)] {
      beast::error_code ec;
      beast::get_lowest_layer(self->ws_).socket().close(ec);
      self->drop_timer_.cancel();
      self->mark_closed();
      done();
    });
  }

 private:
  void read_loop() {
    ws_.async_read(rx_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->mark_closed();
        return;
      }
      self->rx_.consume(self->rx_.size());
      self->read_loop();
    });
  }

  void do_write() {
    {
      std::lock_guard lock(mu_);
      if (closed_ || queue_.empty()) {
        writing_ = false;
        if (dropped_ && !closed_) close_after_drop();
        return;
      }
      inflight_ = std::move(queue_.front());
      queue_.pop_front();
    }
    ws_.async_write(net::buffer(*inflight_),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      {
                        std::lock_guard lock(self->mu_);
                        self->inflight_.reset();
                      }
                      if (ec) {
                        self->mark_closed();
                        return;
                      }
                      self->do_write();
                    });
  }

  void begin_drop() {
    drop_timer_.expires_after(server_.config.drop_grace);
    drop_timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      beast::error_code ignored;
      beast::get_lowest_layer(self->ws_).socket().close(ignored);
      self->mark_closed();
    });
  }

  void close_after_drop() {
    // Called on the strand once the status message is flushed.
    ws_.async_close(websocket::close_code::try_again_later,
                    [self = shared_from_this()](beast::error_code) {
                      self->drop_timer_.cancel();
                      beast::error_code ignored;
                      beast::get_lowest_layer(self->ws_).socket().close(ignored);
                      self->mark_closed();
                    });
  }

  void mark_closed() {
    std::lock_guard lock(mu_);
    closed_ = true;
    queue_.clear();
  }

  websocket::stream<beast::tcp_stream> ws_;
  detail::ServerState& server_;
  net::steady_timer drop_timer_;
  beast::flat_buffer rx_;

  mutable std::mutex mu_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  std::shared_ptr<const std::string> inflight_;
  bool writing_ = false;
  bool dropped_ = false;
  bool closed_ = false;
};

namespace {

/// `/control` connection: one JSON request, one JSON reply, in order.
class ControlClient : public detail::Connection,
                      public std::enable_shared_from_this<ControlClient> {
 public:
  ControlClient(websocket::stream<beast::tcp_stream> ws, detail::ServerState& server)
      : ws_(std::move(ws)), server_(server) {}

  void accept(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.text(true);
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (!ec) self->read();
    });
  }

  void force_close(std::function<void()> done) override {
    net::post(ws_.get_executor(), [self = shared_from_this(), done = std::move(done)] {
      beast::error_code ec;
      beast::get_lowest_layer(self->ws_).socket().close(ec);
      done();
    });
  }

 private:
  void read() {
    ws_.async_read(rx_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      const std::string request = beast::buffers_to_string(self->rx_.data());
      self->rx_.consume(self->rx_.size());
      self->reply_ = handle_control(request, self->server_.engine, self->server_.hooks);
      self->announce(request);
      self->ws_.async_write(net::buffer(self->reply_),
                            [self](beast::error_code ec2, std::size_t) {
                              if (!ec2) self->read();
                            });
    });
  }

  /// Tells stream clients about accepted state changes.
  void announce(const std::string& request) {
    const json reply = json::parse(reply_, nullptr, false);
    if (reply.is_discarded() || !reply.value("ok", false)) return;
    const std::string cmd = json::parse(request, nullptr, false).value("cmd", "");
    if (cmd == "start" || cmd == "stop" || cmd == "set_mask") {
      const auto mask = server_.engine.channel_mask();
      const std::string state = cmd == "start" ? "started" : cmd == "stop" ? "stopped" : "mask";
      server_.publish(status_message(state, mask, server_.engine.running()));
    }
  }

  websocket::stream<beast::tcp_stream> ws_;
  detail::ServerState& server_;
  beast::flat_buffer rx_;
  std::string reply_;
};

/// Plain HTTP until a WebSocket upgrade arrives on a known path.
class HttpSession : public detail::Connection,
                    public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, detail::ServerState& server)
      : stream_(std::move(socket)), exec_(stream_.get_executor()), server_(server) {}

  void force_close(std::function<void()> done) override {
    net::post(exec_, [self = shared_from_this(), done = std::move(done)] {
      if (!self->upgraded_) self->stream_.close();
      done();
    });
  }

  void start() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) {
                       if (!ec) self->on_request();
                     });
  }

 private:
  void on_request() {
    const std::string target(req_.target());
    if (websocket::is_upgrade(req_)) {
      if (target != "/control" && target != "/stream") {
        respond(http::status::not_found, "text/plain", "unknown endpoint\n");
        return;
      }
      stream_.expires_never();
      upgraded_ = true;
      websocket::stream<beast::tcp_stream> ws(std::move(stream_));
      if (target == "/control") {
        auto c = std::make_shared<ControlClient>(std::move(ws), server_);
        if (server_.track(c)) c->accept(std::move(req_));
      } else {
        auto c = std::make_shared<StreamClient>(std::move(ws), server_);
        if (server_.track(c)) c->accept(std::move(req_));
      }
      return;
    }
    serve_static(target);
  }

  void serve_static(std::string target) {
    if (req_.method() != http::verb::get && req_.method() != http::verb::head) {
      respond(http::status::method_not_allowed, "text/plain", "method not allowed\n");
      return;
    }
    if (const auto q = target.find('?'); q != std::string::npos) target.resize(q);
    if (target.empty() || target.back() == '/') target += "index.html";
    if (!server_.config.ui_dir) {
      if (target == "/index.html") {
        respond(http::status::ok, "text/html", kBuiltinIndex);
      } else {
        respond(http::status::not_found, "text/plain", "not found\n");
      }
      return;
    }
    if (target.find("..") != std::string::npos || target.front() != '/') {
      respond(http::status::bad_request, "text/plain", "bad path\n");
      return;
    }
    const auto path = *server_.config.ui_dir / target.substr(1);
    std::error_code fec;
    std::ifstream in;
    if (std::filesystem::is_regular_file(path, fec)) in.open(path, std::ios::binary);
    if (!in.is_open()) {
      respond(http::status::not_found, "text/plain", "not found\n");
      return;
    }
    std::ostringstream body;
    body << in.rdbuf();
    respond(http::status::ok, mime_type(path), body.str());
  }

  void respond(http::status status, const std::string& type, std::string body) {
    auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
    res->set(http::field::server, "picdaq");
    res->set(http::field::content_type, type);
    res->keep_alive(false);
    res->body() = std::move(body);
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ec;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
    });
  }

  beast::tcp_stream stream_;
  beast::tcp_stream::executor_type exec_;
  detail::ServerState& server_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  bool upgraded_ = false;
};

}  // namespace

void detail::ServerState::do_accept() {
  acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) {
      if (ec == net::error::operation_aborted || stopped) return;
    } else {
      socket.set_option(tcp::no_delay(true), ec);
      if (config.send_buffer_bytes) {
        socket.set_option(net::socket_base::send_buffer_size(*config.send_buffer_bytes), ec);
      }
      auto session = std::make_shared<HttpSession>(std::move(socket), *this);
      if (!track(session)) return;
      session->start();
    }
    do_accept();
  });
}

void detail::ServerState::register_client(const std::shared_ptr<StreamClient>& c) {
  // Taken before clients_mu: broadcast holds the engine lock while it takes clients_mu.
  const auto stats = engine.stats();
  std::lock_guard lock(clients_mu);
  std::erase_if(clients, [](const auto& w) {
    auto p = w.lock();
    return !p || !p->alive();
  });
  // Greeted under the same lock as broadcast, so the status message
  // precedes every sample on this connection.
  c->enqueue(std::make_shared<const std::string>(status_message("connected", stats.mask, stats.running)),
             stats.mask);
  clients.push_back(c);
}

void detail::ServerState::broadcast(const acquisition::Sample& s, const acquisition::ChannelMask& mask) {
  auto msg = std::make_shared<const std::string>(sample_message(s, mask));
  std::lock_guard lock(clients_mu);
  for (auto it = clients.begin(); it != clients.end();) {
    auto c = it->lock();
    if (!c || !c->alive()) {
      it = clients.erase(it);
      continue;
    }
    c->enqueue(msg, mask);
    ++it;
  }
}

void detail::ServerState::publish(std::string text) {
  const auto mask = engine.channel_mask();
  auto msg = std::make_shared<const std::string>(std::move(text));
  std::lock_guard lock(clients_mu);
  for (const auto& w : clients) {
    if (auto c = w.lock(); c && c->alive()) c->enqueue(msg, mask);
  }
}

Server::Server(acquisition::Session& engine, GatewayConfig config, ControlHooks hooks)
    : impl_(std::make_unique<detail::ServerState>(engine, std::move(config), std::move(hooks))) {
  beast::error_code ec;
  const auto addr = net::ip::make_address(impl_->config.host, ec);
  if (ec) {
    throw transport::TransportError(transport::TransportError::Kind::address,
                                    "gateway: bad listen address '" + impl_->config.host + "'");
  }
  const tcp::endpoint ep{addr, impl_->config.port};
  impl_->acceptor.open(ep.protocol(), ec);
  if (!ec) impl_->acceptor.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) impl_->acceptor.bind(ep, ec);
  if (!ec) impl_->acceptor.listen(net::socket_base::max_listen_connections, ec);
  if (ec) {
    throw transport::TransportError(transport::TransportError::Kind::bind_failure,
                                    "gateway: bind " + impl_->config.host + ":" +
                                        std::to_string(impl_->config.port) + ": " + ec.message());
  }
  impl_->port = impl_->acceptor.local_endpoint().port();
  impl_->do_accept();
  impl_->threads.emplace_back([impl = impl_.get()] {
    impl->ioc.run();
    impl->drained.set_value();
  });
  impl_->listener = engine.subscribe(
      [impl = impl_.get()](const acquisition::Sample& s, const acquisition::ChannelMask& mask) {
        impl->broadcast(s, mask);
      });
}

Server::~Server() { stop(); }

void Server::stop() {
  if (impl_->stopped.exchange(true)) return;
  if (impl_->listener) impl_->engine.unsubscribe(*impl_->listener);
  std::vector<std::future<void>> closed;
  {
    auto done = std::make_shared<std::promise<void>>();
    closed.push_back(done->get_future());
    net::post(impl_->acceptor.get_executor(), [impl = impl_.get(), done] {
      beast::error_code ec;
      impl->acceptor.close(ec);
      done->set_value();
    });
  }
  {
    std::lock_guard lock(impl_->clients_mu);
    impl_->clients.clear();
  }
  {
    std::lock_guard lock(impl_->connections_mu);
    for (auto& w : impl_->connections) {
      if (auto c = w.lock()) {
        auto done = std::make_shared<std::promise<void>>();
        closed.push_back(done->get_future());
        c->force_close([done] { done->set_value(); });
      }
    }
    impl_->connections.clear();
  }
  for (auto& f : closed) f.wait_for(std::chrono::seconds(2));
  // With every socket closed the loop runs out of work once queued
  // completions (including late accepts) have released their sockets.
  if (impl_->drained.get_future().wait_for(std::chrono::seconds(2)) != std::future_status::ready) {
    impl_->ioc.stop();
  }
  for (auto& t : impl_->threads) t.join();
  impl_->threads.clear();
}

std::uint16_t Server::port() const noexcept { return impl_->port; }

void Server::broadcast(const acquisition::Sample& s, const acquisition::ChannelMask& mask) {
  impl_->broadcast(s, mask);
}

void Server::publish_status(std::string_view state) {
  impl_->publish(status_message(state, impl_->engine.channel_mask(), impl_->engine.running()));
}

void Server::publish_error(std::string_view what) { impl_->publish(error_message(what)); }

std::size_t Server::stream_clients() const {
  std::lock_guard lock(impl_->clients_mu);
  std::size_t n = 0;
  for (const auto& w : impl_->clients) {
    if (auto c = w.lock(); c && c->alive()) ++n;
  }
  return n;
}

std::uint64_t Server::dropped_clients() const { return impl_->dropped; }

std::unique_ptr<Server> serve(acquisition::Session& engine, GatewayConfig config,
                              ControlHooks hooks) {
  return std::make_unique<Server>(engine, std::move(config), std::move(hooks));
}

}  // namespace picdaq::gateway
