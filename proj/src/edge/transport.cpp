#include "wecar/edge/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>

namespace wecar::edge {

namespace {

std::string sys_error(const std::string& what) { return what + ": " + std::strerror(errno); }

sockaddr_in make_addr(const std::string& host, std::uint16_t port) {
  sockaddr_in a{};
  a.sin_family = AF_INET;
  a.sin_port = htons(port);
  const std::string h = host == "localhost" ? "127.0.0.1" : host;
  if (::inet_pton(AF_INET, h.c_str(), &a.sin_addr) != 1) {
    throw TransportError("not an IPv4 address: " + host);
  }
  return a;
}

}  // namespace

Connection& Connection::operator=(Connection&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = std::exchange(o.fd_, -1);
    dec_ = std::move(o.dec_);
  }
  return *this;
}

Connection::~Connection() { close(); }

void Connection::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

void Connection::shutdown_write() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
}

void Connection::send_raw(std::span<const std::uint8_t> bytes) {
  if (fd_ < 0) throw TransportError("send on closed connection");
  std::size_t off = 0;
  while (off < bytes.size()) {
    const ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(sys_error("send"));
    }
    off += static_cast<std::size_t>(n);
  }
}

void Connection::send(const Frame& f) { send_raw(encode_frame(f)); }

std::optional<Frame> Connection::recv() {
  if (fd_ < 0) throw TransportError("recv on closed connection");
  std::array<std::uint8_t, 65536> buf;
  for (;;) {
    if (auto f = dec_.next()) return f;
    const ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(sys_error("recv"));
    }
    if (n == 0) {
      if (dec_.buffered() != 0) throw ProtocolError("stream ended inside a frame");
      return std::nullopt;
    }
    dec_.feed({buf.data(), static_cast<std::size_t>(n)});
  }
}

std::pair<Connection, Connection> socket_pair() {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) throw TransportError(sys_error("socketpair"));
  return {Connection(fds[0]), Connection(fds[1])};
}

TcpListener& TcpListener::operator=(TcpListener&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = std::exchange(o.fd_, -1);
    port_ = o.port_;
  }
  return *this;
}

TcpListener::~TcpListener() { close(); }

void TcpListener::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

TcpListener TcpListener::bind(const std::string& host, std::uint16_t port) {
  auto addr = make_addr(host, port);
  TcpListener l;
  l.fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (l.fd_ < 0) throw TransportError(sys_error("socket"));
  int one = 1;
  ::setsockopt(l.fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(l.fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    throw TransportError(sys_error("bind " + host + ":" + std::to_string(port)));
  }
  if (::listen(l.fd_, 8) != 0) throw TransportError(sys_error("listen"));
  socklen_t len = sizeof addr;
  if (::getsockname(l.fd_, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
    throw TransportError(sys_error("getsockname"));
  }
  l.port_ = ntohs(addr.sin_port);
  return l;
}

Connection TcpListener::accept() {
  for (;;) {
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) {
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return Connection(fd);
    }
    if (errno == EINTR) continue;
    throw TransportError(sys_error("accept"));
  }
}

Connection connect_tcp(const std::string& host, std::uint16_t port) {
  auto addr = make_addr(host, port);
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw TransportError(sys_error("socket"));
  Connection c(fd);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    throw TransportError(sys_error("connect " + host + ":" + std::to_string(port)));
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return c;
}

}  // namespace wecar::edge
