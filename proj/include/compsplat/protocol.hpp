#pragma once

// Guidance wire protocol (TCP, all fields little-endian).
//
//   frame   := magic:u32 version:u16 msg_type:u16 payload_len:u32 payload
//   HELLO (1)      u16 client version
//   HELLO_OK (2)   empty
//   HELLO_ERR (3)  u16 server version
//   REQUEST (4)    u32 iteration, f32 timestep, u32 prompt_id,
//                  16 x f32 view matrix (row-major), f32 fov_y_deg,
//                  u32 width, u32 height, width*height*3 x f32 RGB (row-major)
//   RESPONSE (5)   f32 weight, f32 cfg_scale, u32 width, u32 height,
//                  width*height*3 x f32 residual
//   ERROR (6)      u32 code, u32 len, len bytes of UTF-8

#include "compsplat/guidance.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace compsplat::wire {

inline constexpr std::uint32_t kMagic = 0x43475347;  // bytes on the wire: 47 53 47 43
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 12;
inline constexpr std::uint32_t kMaxPayload = 1u << 28;

enum class MsgType : std::uint16_t {
  Hello = 1,
  HelloOk = 2,
  HelloErr = 3,
  Request = 4,
  Response = 5,
  Error = 6,
};

bool known_msg_type(std::uint16_t t);

struct Frame {
  std::uint16_t version = kVersion;
  MsgType type = MsgType::Hello;
  std::vector<std::uint8_t> payload;
};

std::vector<std::uint8_t> encode_frame(const Frame& f);

/// Incremental decoder. Throws ProtocolError on a bad magic, an unknown
/// message type or an oversized payload; the stream is unusable afterwards.
class FrameParser {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  std::optional<Frame> next();
  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

struct ErrorMessage {
  std::uint32_t code = 0;
  std::string message;
};

std::vector<std::uint8_t> encode_hello(std::uint16_t version);
std::uint16_t decode_hello(std::span<const std::uint8_t> payload);

std::vector<std::uint8_t> encode_request(const GuidanceRequest& req);
/// Near/far are not transmitted; the decoded camera keeps Intrinsics defaults.
GuidanceRequest decode_request(std::span<const std::uint8_t> payload);

std::vector<std::uint8_t> encode_response(const GuidanceResponse& resp);
GuidanceResponse decode_response(std::span<const std::uint8_t> payload);

std::vector<std::uint8_t> encode_error(const ErrorMessage& e);
ErrorMessage decode_error(std::span<const std::uint8_t> payload);

/// Blocking socket connection to a guidance server.
class Connection {
 public:
  Connection() = default;
  explicit Connection(int fd) : fd_(fd) {}
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;
  Connection(Connection&& o) noexcept;
  Connection& operator=(Connection&& o) noexcept;
  ~Connection();

  static Connection connect_tcp(const std::string& host, std::uint16_t port);

  bool is_open() const { return fd_ >= 0; }
  void close();
  void send(const Frame& f);
  /// Blocks until a full frame arrives. TransportError on EOF or socket error.
  Frame receive();

 private:
  int fd_ = -1;
  FrameParser parser_;
};

}  // namespace compsplat::wire

namespace compsplat {

/// Guidance provider backed by a remote server. One request in flight at a
/// time; any protocol error closes the connection.
class RemoteGuidanceProvider : public GuidanceProvider {
 public:
  /// Connects and performs the HELLO handshake. Throws TransportError or
  /// HandshakeError (naming both versions).
  RemoteGuidanceProvider(const std::string& host, std::uint16_t port, std::uint16_t version = wire::kVersion);
  /// Takes an already-connected socket and performs the handshake.
  explicit RemoteGuidanceProvider(wire::Connection conn, std::uint16_t version = wire::kVersion);

  GuidanceResponse guide(const GuidanceRequest& req) override;
  std::string name() const override { return "remote"; }
  bool connected() const { return conn_.is_open(); }

 private:
  void handshake(std::uint16_t version);

  wire::Connection conn_;
};

/// Sends one request over an established connection and validates the reply.
GuidanceResponse remote_guidance(RemoteGuidanceProvider& conn, const GuidanceRequest& req);

}  // namespace compsplat
