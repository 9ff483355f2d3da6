#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "wecar/core/errors.hpp"
#include "wecar/edge/protocol.hpp"

namespace wecar::edge {

/// Socket-level failure: address in use, refused connection, reset.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Owns a connected stream socket and frames traffic on it.
class Connection {
 public:
  Connection() = default;
  explicit Connection(int fd) : fd_(fd) {}
  Connection(Connection&& o) noexcept : fd_(std::exchange(o.fd_, -1)), dec_(std::move(o.dec_)) {}
  Connection& operator=(Connection&& o) noexcept;
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;
  ~Connection();

  bool open() const { return fd_ >= 0; }
  void send(const Frame& f);
  void send_raw(std::span<const std::uint8_t> bytes);
  /// Blocks for the next frame; nullopt on orderly shutdown by the peer.
  /// Throws ProtocolError on an unusable length prefix.
  std::optional<Frame> recv();
  /// Stops further sends so the peer sees end of stream.
  void shutdown_write();
  void close();

 private:
  int fd_ = -1;
  FrameDecoder dec_;
};

/// Two connected endpoints in one process.
std::pair<Connection, Connection> socket_pair();

class TcpListener {
 public:
  /// Port 0 picks a free port. Throws TransportError when the port is taken.
  static TcpListener bind(const std::string& host, std::uint16_t port);
  TcpListener() = default;
  TcpListener(TcpListener&& o) noexcept : fd_(std::exchange(o.fd_, -1)), port_(o.port_) {}
  TcpListener& operator=(TcpListener&& o) noexcept;
  ~TcpListener();

  std::uint16_t port() const { return port_; }
  Connection accept();
  void close();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

Connection connect_tcp(const std::string& host, std::uint16_t port);

}  // namespace wecar::edge
