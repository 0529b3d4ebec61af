#include "picdaq/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <termios.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <charconv>
#include <condition_variable>
#include <cstring>
#include <mutex>

namespace picdaq::transport {

using Kind = TransportError::Kind;

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::loopback: return "loopback";
    case Backend::tcp_client: return "tcp_client";
    case Backend::tcp_listener: return "tcp_listener";
    case Backend::serial_device: return "serial_device";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// loopback

namespace {

struct Pipe {
  explicit Pipe(std::size_t cap) : capacity(cap) {}

  std::mutex mu;
  std::condition_variable cv;
  std::string buf;
  std::size_t capacity;
  bool writer_closed = false;
  bool reader_closed = false;
};

class LoopbackEndpoint final : public ByteStream {
 public:
  LoopbackEndpoint(std::shared_ptr<Pipe> out, std::shared_ptr<Pipe> in)
      : out_(std::move(out)), in_(std::move(in)) {}

  ~LoopbackEndpoint() override { close(); }

  void write(std::string_view bytes) override {
    std::unique_lock lock(out_->mu);
    while (!bytes.empty()) {
      out_->cv.wait(lock, [&] {
        return out_->writer_closed || out_->reader_closed || out_->buf.size() < out_->capacity;
      });
      if (out_->writer_closed) throw TransportError(Kind::closed, "loopback: stream closed");
      if (out_->reader_closed) throw TransportError(Kind::broken_pipe, "loopback: peer closed");
      const std::size_t n = std::min(bytes.size(), out_->capacity - out_->buf.size());
      out_->buf.append(bytes.substr(0, n));
      bytes.remove_prefix(n);
      out_->cv.notify_all();
    }
  }

  ReadResult read(std::chrono::milliseconds timeout) override {
    std::unique_lock lock(in_->mu);
    const bool ready = in_->cv.wait_for(lock, timeout, [&] {
      return in_->reader_closed || in_->writer_closed || !in_->buf.empty();
    });
    if (in_->reader_closed) return {ReadResult::Status::end_of_stream, {}};
    if (!in_->buf.empty()) {
      ReadResult r{ReadResult::Status::data, std::move(in_->buf)};
      in_->buf.clear();
      in_->cv.notify_all();
      return r;
    }
    if (ready && in_->writer_closed) return {ReadResult::Status::end_of_stream, {}};
    return {ReadResult::Status::timeout, {}};
  }

  void close() override {
    {
      std::lock_guard lock(out_->mu);
      out_->writer_closed = true;
    }
    out_->cv.notify_all();
    {
      std::lock_guard lock(in_->mu);
      in_->reader_closed = true;
      in_->buf.clear();
    }
    in_->cv.notify_all();
  }

  Backend backend() const override { return Backend::loopback; }

 private:
  std::shared_ptr<Pipe> out_;
  std::shared_ptr<Pipe> in_;
};

}  // namespace

std::pair<StreamPtr, StreamPtr> open_loopback(std::size_t capacity) {
  if (capacity == 0) capacity = 1;
  auto ab = std::make_shared<Pipe>(capacity);
  auto ba = std::make_shared<Pipe>(capacity);
  return {std::make_shared<LoopbackEndpoint>(ab, ba), std::make_shared<LoopbackEndpoint>(ba, ab)};
}

// ---------------------------------------------------------------------------
// file-descriptor streams (TCP sockets, serial devices)

namespace {

constexpr std::chrono::milliseconds kPollSlice{50};

std::string errno_text(const char* what, int err) {
  return std::string(what) + ": " + std::strerror(err);
}

class FdStream final : public ByteStream {
 public:
  FdStream(int fd, Backend backend, std::optional<unsigned> baud)
      : fd_(fd), backend_(backend), baud_(baud) {}

  ~FdStream() override {
    close();
    ::close(fd_);
  }

  void write(std::string_view bytes) override {
    std::lock_guard lock(write_mu_);
    while (!bytes.empty()) {
      if (closed_) throw TransportError(Kind::closed, "stream closed");
      ssize_t n = is_socket() ? ::send(fd_, bytes.data(), bytes.size(), MSG_NOSIGNAL)
                              : ::write(fd_, bytes.data(), bytes.size());
      if (n < 0) {
        const int err = errno;
        if (err == EINTR) continue;
        if (err == EAGAIN || err == EWOULDBLOCK) {
          pollfd p{fd_, POLLOUT, 0};
          ::poll(&p, 1, static_cast<int>(kPollSlice.count()));
          continue;
        }
        if (closed_) throw TransportError(Kind::closed, "stream closed");
        if (err == EPIPE || err == ECONNRESET) {
          throw TransportError(Kind::broken_pipe, errno_text("write", err));
        }
        throw TransportError(Kind::io, errno_text("write", err));
      }
      bytes.remove_prefix(static_cast<std::size_t>(n));
    }
  }

  ReadResult read(std::chrono::milliseconds timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    char buf[4096];
    for (;;) {
      if (closed_ || peer_eof_) return {ReadResult::Status::end_of_stream, {}};
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      const auto slice = std::clamp(left, std::chrono::milliseconds{0}, kPollSlice);
      pollfd p{fd_, POLLIN, 0};
      const int rc = ::poll(&p, 1, static_cast<int>(slice.count()));
      if (rc < 0 && errno != EINTR) throw TransportError(Kind::io, errno_text("poll", errno));
      if (closed_) return {ReadResult::Status::end_of_stream, {}};
      if (rc > 0) {
        const ssize_t n = ::read(fd_, buf, sizeof buf);
        if (n > 0) return {ReadResult::Status::data, std::string(buf, static_cast<std::size_t>(n))};
        if (n == 0 && is_socket()) {
          peer_eof_ = true;
          return {ReadResult::Status::end_of_stream, {}};
        }
        if (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) {
          if (errno == ECONNRESET) {
            peer_eof_ = true;
            return {ReadResult::Status::end_of_stream, {}};
          }
          throw TransportError(Kind::io, errno_text("read", errno));
        }
        if (p.revents & (POLLHUP | POLLERR)) {
          peer_eof_ = true;
          return {ReadResult::Status::end_of_stream, {}};
        }
      }
      if (std::chrono::steady_clock::now() >= deadline) return {ReadResult::Status::timeout, {}};
    }
  }

  void close() override {
    if (closed_.exchange(true)) return;
    if (is_socket()) ::shutdown(fd_, SHUT_RDWR);
  }

  Backend backend() const override { return backend_; }
  std::optional<unsigned> line_baud() const override { return baud_; }

 private:
  bool is_socket() const { return backend_ != Backend::serial_device; }

  int fd_;
  Backend backend_;
  std::optional<unsigned> baud_;
  std::atomic<bool> closed_{false};
  std::atomic<bool> peer_eof_{false};
  std::mutex write_mu_;
};

addrinfo* resolve(const std::string& host, std::uint16_t port, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &res);
  if (rc != 0) {
    throw TransportError(Kind::address,
                         "resolve " + host + ":" + service + ": " + ::gai_strerror(rc));
  }
  return res;
}

void set_nonblocking(int fd, bool on) {
  const int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, on ? (flags | O_NONBLOCK) : (flags & ~O_NONBLOCK));
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
  addrinfo* res = resolve(host, port, true);
  int last_err = 0;
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) {
      last_err = errno;
      continue;
    }
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 16) == 0) {
      fd_ = fd;
      break;
    }
    last_err = errno;
    ::close(fd);
  }
  ::freeaddrinfo(res);
  if (fd_ < 0) {
    throw TransportError(Kind::bind_failure,
                         errno_text(("bind " + host + ":" + std::to_string(port)).c_str(), last_err));
  }
  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = addr.ss_family == AF_INET6
              ? ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port)
              : ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

StreamPtr TcpListener::accept(std::chrono::milliseconds timeout) {
  pollfd p{fd_, POLLIN, 0};
  int rc;
  do {
    rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
  } while (rc < 0 && errno == EINTR);
  if (rc == 0) throw TransportError(Kind::timeout, "accept: timed out");
  if (rc < 0) throw TransportError(Kind::io, errno_text("poll", errno));
  const int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
  if (fd < 0) throw TransportError(Kind::io, errno_text("accept", errno));
  set_nodelay(fd);
  return std::make_shared<FdStream>(fd, Backend::tcp_listener, std::nullopt);
}

StreamPtr connect_tcp(const std::string& host, std::uint16_t port,
                      std::chrono::milliseconds timeout) {
  addrinfo* res = resolve(host, port, false);
  int last_err = ECONNREFUSED;
  bool timed_out = false;
  int connected = -1;
  for (addrinfo* ai = res; ai != nullptr && connected < 0; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) {
      last_err = errno;
      continue;
    }
    set_nonblocking(fd, true);
    int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    if (rc < 0 && errno == EINPROGRESS) {
      pollfd p{fd, POLLOUT, 0};
      do {
        rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
      } while (rc < 0 && errno == EINTR);
      if (rc == 0) {
        timed_out = true;
        ::close(fd);
        continue;
      }
      int err = 0;
      socklen_t len = sizeof err;
      ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
      rc = err == 0 ? 0 : -1;
      errno = err;
    }
    if (rc == 0) {
      set_nonblocking(fd, false);
      connected = fd;
    } else {
      last_err = errno;
      ::close(fd);
    }
  }
  ::freeaddrinfo(res);
  const std::string where = host + ":" + std::to_string(port);
  if (connected < 0) {
    if (timed_out) throw TransportError(Kind::timeout, "connect " + where + ": timed out");
    if (last_err == ECONNREFUSED) {
      throw TransportError(Kind::connection_refused, "connect " + where + ": connection refused");
    }
    throw TransportError(Kind::io, errno_text(("connect " + where).c_str(), last_err));
  }
  set_nodelay(connected);
  return std::make_shared<FdStream>(connected, Backend::tcp_client, std::nullopt);
}

StreamPtr listen_tcp(const std::string& host, std::uint16_t port,
                     std::chrono::milliseconds timeout) {
  TcpListener listener(host, port);
  return listener.accept(timeout);
}

// ---------------------------------------------------------------------------
// serial

namespace {

std::optional<speed_t> baud_constant(unsigned baud) {
  switch (baud) {
    case 1200: return B1200;
    case 2400: return B2400;
    case 4800: return B4800;
    case 9600: return B9600;
    case 19200: return B19200;
    case 38400: return B38400;
    case 57600: return B57600;
    case 115200: return B115200;
    case 230400: return B230400;
    default: return std::nullopt;
  }
}

}  // namespace

bool is_supported_baud(unsigned baud) { return baud_constant(baud).has_value(); }

StreamPtr open_serial_device(const std::string& path, unsigned baud) {
  const auto speed = baud_constant(baud);
  if (!speed) {
    throw TransportError(Kind::unsupported_baud, "serial: unsupported baud " + std::to_string(baud));
  }
  const int fd = ::open(path.c_str(), O_RDWR | O_NOCTTY | O_NONBLOCK | O_CLOEXEC);
  if (fd < 0) {
    const int err = errno;
    if (err == ENOENT || err == ENODEV || err == ENXIO) {
      throw TransportError(Kind::device_missing, errno_text(("serial: " + path).c_str(), err));
    }
    if (err == EACCES || err == EPERM) {
      throw TransportError(Kind::permission_denied, errno_text(("serial: " + path).c_str(), err));
    }
    throw TransportError(Kind::io, errno_text(("serial: " + path).c_str(), err));
  }
  termios tio{};
  if (::tcgetattr(fd, &tio) != 0) {
    const int err = errno;
    ::close(fd);
    throw TransportError(Kind::io, errno_text(("serial: " + path).c_str(), err));
  }
  ::cfmakeraw(&tio);
  tio.c_cflag &= ~(PARENB | CSTOPB | CSIZE | CRTSCTS);
  tio.c_cflag |= CS8 | CLOCAL | CREAD;
  tio.c_iflag &= ~(IXON | IXOFF | IXANY);
  tio.c_cc[VMIN] = 0;
  tio.c_cc[VTIME] = 0;
  ::cfsetispeed(&tio, *speed);
  ::cfsetospeed(&tio, *speed);
  if (::tcsetattr(fd, TCSANOW, &tio) != 0) {
    const int err = errno;
    ::close(fd);
    throw TransportError(Kind::io, errno_text(("serial: " + path).c_str(), err));
  }
  ::tcflush(fd, TCIOFLUSH);
  set_nonblocking(fd, false);
  return std::make_shared<FdStream>(fd, Backend::serial_device, baud);
}

// ---------------------------------------------------------------------------
// spec grammar

namespace {

template <typename T>
bool parse_uint(std::string_view s, T& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

void parse_host_port(std::string_view rest, TransportSpec& spec, std::string_view text) {
  const auto colon = rest.rfind(':');
  if (colon == std::string_view::npos) {
    throw SpecError("transport: expected HOST:PORT in '" + std::string(text) + "'");
  }
  spec.host = std::string(rest.substr(0, colon));
  if (spec.host.size() >= 2 && spec.host.front() == '[' && spec.host.back() == ']') {
    spec.host = spec.host.substr(1, spec.host.size() - 2);
  }
  if (spec.host.empty()) throw SpecError("transport: empty host in '" + std::string(text) + "'");
  if (!parse_uint(rest.substr(colon + 1), spec.port)) {
    throw SpecError("transport: bad port in '" + std::string(text) + "'");
  }
}

}  // namespace

TransportSpec parse_transport_spec(std::string_view text) {
  TransportSpec spec;
  if (text == "loopback") {
    spec.kind = TransportSpec::Kind::loopback;
  } else if (text.starts_with("tcp-listen:")) {
    spec.kind = TransportSpec::Kind::tcp_listen;
    parse_host_port(text.substr(11), spec, text);
  } else if (text.starts_with("tcp:")) {
    spec.kind = TransportSpec::Kind::tcp_connect;
    parse_host_port(text.substr(4), spec, text);
    if (spec.port == 0) throw SpecError("transport: port 0 is not connectable");
  } else if (text.starts_with("serial:")) {
    spec.kind = TransportSpec::Kind::serial;
    std::string_view rest = text.substr(7);
    const auto colon = rest.rfind(':');
    unsigned baud = 0;
    if (colon != std::string_view::npos && parse_uint(rest.substr(colon + 1), baud)) {
      spec.baud = baud;
      rest = rest.substr(0, colon);
    }
    if (rest.empty()) throw SpecError("transport: serial spec needs a device path");
    spec.path = std::string(rest);
  } else {
    throw SpecError("transport: unrecognised spec '" + std::string(text) + "'");
  }
  return spec;
}

std::string to_string(const TransportSpec& spec) {
  switch (spec.kind) {
    case TransportSpec::Kind::loopback: return "loopback";
    case TransportSpec::Kind::tcp_listen:
      return "tcp-listen:" + spec.host + ":" + std::to_string(spec.port);
    case TransportSpec::Kind::tcp_connect:
      return "tcp:" + spec.host + ":" + std::to_string(spec.port);
    case TransportSpec::Kind::serial:
      return "serial:" + spec.path + ":" + std::to_string(spec.baud);
  }
  return {};
}

StreamPtr open(const TransportSpec& spec, std::chrono::milliseconds timeout) {
  switch (spec.kind) {
    case TransportSpec::Kind::tcp_listen: return listen_tcp(spec.host, spec.port, timeout);
    case TransportSpec::Kind::tcp_connect: return connect_tcp(spec.host, spec.port, timeout);
    case TransportSpec::Kind::serial: return open_serial_device(spec.path, spec.baud);
    case TransportSpec::Kind::loopback: break;
  }
  throw SpecError("transport: loopback needs an in-process peer");
}

}  // namespace picdaq::transport
