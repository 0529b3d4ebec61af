#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace picdaq::transport {

enum class Backend { loopback, tcp_client, tcp_listener, serial_device };

std::string_view backend_name(Backend b);

class TransportError : public std::runtime_error {
 public:
  enum class Kind {
    closed,
    broken_pipe,
    connection_refused,
    bind_failure,
    timeout,
    address,
    device_missing,
    permission_denied,
    unsupported_baud,
    io,
  };

  TransportError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct ReadResult {
  enum class Status { data, timeout, end_of_stream };
  Status status = Status::timeout;
  std::string bytes;

  bool eof() const noexcept { return status == Status::end_of_stream; }
};

/// Ordered, reliable byte channel. Writes may be fragmented or coalesced on
/// the reading side. One reader and one writer may use an endpoint
/// concurrently; close() may be called from any thread and wakes a blocked
/// reader.
class ByteStream {
 public:
  virtual ~ByteStream() = default;

  /// Writes all of `bytes` or throws TransportError.
  virtual void write(std::string_view bytes) = 0;

  /// Waits up to `timeout` for data. Returns end_of_stream once the stream is
  /// closed locally, or the peer closed and all buffered bytes were drained.
  virtual ReadResult read(std::chrono::milliseconds timeout) = 0;

  virtual void close() = 0;
  virtual Backend backend() const = 0;

  /// Line rate for serial backends; empty for packet/pipe transports.
  virtual std::optional<unsigned> line_baud() const { return std::nullopt; }
};

using StreamPtr = std::shared_ptr<ByteStream>;

/// Two connected in-memory endpoints. `capacity` bounds bytes in flight in
/// each direction; writers block while the peer's buffer is full.
std::pair<StreamPtr, StreamPtr> open_loopback(std::size_t capacity = 64 * 1024);

inline constexpr std::chrono::milliseconds kDefaultConnectTimeout{5000};

/// Bound, listening TCP socket. accept() yields one stream per connection.
class TcpListener {
 public:
  TcpListener(const std::string& host, std::uint16_t port);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  StreamPtr accept(std::chrono::milliseconds timeout = kDefaultConnectTimeout);

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

StreamPtr connect_tcp(const std::string& host, std::uint16_t port,
                      std::chrono::milliseconds timeout = kDefaultConnectTimeout);

/// Listens on host:port and returns the first accepted connection.
StreamPtr listen_tcp(const std::string& host, std::uint16_t port,
                     std::chrono::milliseconds timeout = kDefaultConnectTimeout);

inline constexpr unsigned kDefaultBaud = 9600;

/// Opens an OS serial device configured 8N1, raw mode, no flow control.
StreamPtr open_serial_device(const std::string& path, unsigned baud = kDefaultBaud);

bool is_supported_baud(unsigned baud);

/// Parsed form of `loopback`, `tcp-listen:HOST:PORT`, `tcp:HOST:PORT`,
/// `serial:PATH[:BAUD]`.
struct TransportSpec {
  enum class Kind { loopback, tcp_listen, tcp_connect, serial };
  Kind kind = Kind::loopback;
  std::string host;
  std::uint16_t port = 0;
  std::string path;
  unsigned baud = kDefaultBaud;

  bool operator==(const TransportSpec&) const = default;
};

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

TransportSpec parse_transport_spec(std::string_view text);
std::string to_string(const TransportSpec& spec);

/// Opens a non-loopback spec. Loopback has no single endpoint and throws
/// SpecError here; callers pair it with an in-process peer.
StreamPtr open(const TransportSpec& spec,
               std::chrono::milliseconds timeout = kDefaultConnectTimeout);

}  // namespace picdaq::transport
