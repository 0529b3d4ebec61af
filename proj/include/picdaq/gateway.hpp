#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "picdaq/acquisition.hpp"

namespace picdaq::gateway {

inline constexpr std::size_t kDefaultOutbox = 1024;

struct GatewayConfig {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;  // 0 picks a free port
  std::size_t outbox_capacity = kDefaultOutbox;
  std::optional<std::filesystem::path> ui_dir;
  /// SO_SNDBUF for accepted sockets; unset keeps the OS default.
  std::optional<int> send_buffer_bytes;
  /// How long a dropped client gets to receive its status message.
  std::chrono::milliseconds drop_grace{500};
};

/// Session-level actions the gateway cannot perform on its own. Unset hooks
/// fall back to the engine: start() in push mode, stop(), set_expected_rate().
struct ControlHooks {
  std::function<void()> start;
  std::function<acquisition::SessionStats()> stop;
  std::function<void(double)> set_rate;
};

nlohmann::json stats_to_json(const acquisition::SessionStats& stats);

/// `{"type":"sample","seq":..,"timestamp":..,"codes":[..],"volts":[..],"mask":[..]}`
std::string sample_message(const acquisition::Sample& s, const acquisition::ChannelMask& mask);
std::string status_message(std::string_view state, const acquisition::ChannelMask& mask,
                           bool running);
std::string error_message(std::string_view what);

/// Applies one `/control` request and returns the JSON reply text. Rejected
/// requests leave the engine untouched.
std::string handle_control(std::string_view request, acquisition::Session& engine,
                           const ControlHooks& hooks = {});

namespace detail {
struct ServerState;
}

/// WebSocket service: `/control` request/reply, `/stream` sample push, and
/// static UI assets on every other GET path.
class Server {
 public:
  Server(acquisition::Session& engine, GatewayConfig config, ControlHooks hooks = {});
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  std::uint16_t port() const noexcept;

  /// Queues the sample for every connected `/stream` client without
  /// blocking. A client whose outbox is full is sent a status message and
  /// disconnected.
  void broadcast(const acquisition::Sample& s, const acquisition::ChannelMask& mask);

  /// Sends a status or error StreamMessage to every stream client.
  void publish_status(std::string_view state);
  void publish_error(std::string_view what);

  std::size_t stream_clients() const;
  std::uint64_t dropped_clients() const;

  void stop();

 private:
  std::unique_ptr<detail::ServerState> impl_;
};

/// Binds and starts serving; throws transport::TransportError on bind failure.
std::unique_ptr<Server> serve(acquisition::Session& engine, GatewayConfig config,
                              ControlHooks hooks = {});

}  // namespace picdaq::gateway
