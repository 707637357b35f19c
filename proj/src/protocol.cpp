#include "compsplat/protocol.hpp"

#include "compsplat/error.hpp"

#include <bit>
#include <cerrno>
#include <cstring>

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

namespace compsplat::wire {

namespace {

class Writer {
 public:
  void u16(std::uint16_t v) {
    out_.push_back(static_cast<std::uint8_t>(v));
    out_.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out_.push_back(static_cast<std::uint8_t>(v >> s));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> in, const char* what) : in_(in), what_(what) {}

  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(in_[pos_ + k]) << (8 * k);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }
  void finish() const {
    if (remaining() != 0)
      throw ProtocolError(std::string(what_) + ": " + std::to_string(remaining()) + " trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw ProtocolError(std::string(what_) + ": truncated payload");
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  const char* what_;
};

void check_image_dims(std::uint32_t w, std::uint32_t h, std::size_t remaining, const char* what) {
  if (w == 0 || h == 0 || w > 16384 || h > 16384)
    throw ProtocolError(std::string(what) + ": bad image size " + std::to_string(w) + "x" + std::to_string(h));
  if (remaining != static_cast<std::size_t>(w) * h * 3 * 4)
    throw ProtocolError(std::string(what) + ": pixel payload length does not match " + std::to_string(w) + "x" +
                        std::to_string(h));
}

}  // namespace

bool known_msg_type(std::uint16_t t) { return t >= 1 && t <= 6; }

std::vector<std::uint8_t> encode_frame(const Frame& f) {
  Writer w;
  w.u32(kMagic);
  w.u16(f.version);
  w.u16(static_cast<std::uint16_t>(f.type));
  w.u32(static_cast<std::uint32_t>(f.payload.size()));
  w.bytes(f.payload);
  return w.take();
}

void FrameParser::feed(std::span<const std::uint8_t> bytes) {
  if (pos_ > 0 && pos_ == buf_.size()) {
    buf_.clear();
    pos_ = 0;
  }
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<Frame> FrameParser::next() {
  if (buffered() < kHeaderSize) return std::nullopt;
  Reader r(std::span<const std::uint8_t>(buf_).subspan(pos_, kHeaderSize), "frame header");
  const std::uint32_t magic = r.u32();
  if (magic != kMagic) throw ProtocolError("bad frame magic");
  const std::uint16_t version = r.u16();
  const std::uint16_t type = r.u16();
  const std::uint32_t len = r.u32();
  if (!known_msg_type(type)) throw ProtocolError("unknown message type " + std::to_string(type));
  if (len > kMaxPayload) throw ProtocolError("payload length " + std::to_string(len) + " exceeds limit");
  if (buffered() < kHeaderSize + len) return std::nullopt;

  Frame f;
  f.version = version;
  f.type = static_cast<MsgType>(type);
  const auto begin = buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + kHeaderSize);
  f.payload.assign(begin, begin + len);
  pos_ += kHeaderSize + len;
  if (pos_ == buf_.size()) {
    buf_.clear();
    pos_ = 0;
  }
  return f;
}

std::vector<std::uint8_t> encode_hello(std::uint16_t version) {
  Writer w;
  w.u16(version);
  return w.take();
}

std::uint16_t decode_hello(std::span<const std::uint8_t> payload) {
  Reader r(payload, "HELLO");
  const auto v = r.u16();
  r.finish();
  return v;
}

std::vector<std::uint8_t> encode_request(const GuidanceRequest& req) {
  const auto& img = req.image;
  if (img.width != req.camera.intr.width || img.height != req.camera.intr.height)
    throw InvalidArgument("request image does not match camera size");
  Writer w;
  w.u32(req.iteration);
  w.f32(req.timestep);
  w.u32(req.prompt_id);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) w.f32(req.camera.world_to_view(i, j));
  w.f32(req.camera.intr.fov_y_deg);
  w.u32(static_cast<std::uint32_t>(img.width));
  w.u32(static_cast<std::uint32_t>(img.height));
  for (double v : img.data) w.f32(v);
  return w.take();
}

GuidanceRequest decode_request(std::span<const std::uint8_t> payload) {
  Reader r(payload, "REQUEST");
  GuidanceRequest req;
  req.iteration = r.u32();
  req.timestep = r.f32();
  req.prompt_id = r.u32();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) req.camera.world_to_view(i, j) = r.f32();
  req.camera.intr.fov_y_deg = r.f32();
  const auto w = r.u32(), h = r.u32();
  check_image_dims(w, h, r.remaining(), "REQUEST");
  req.camera.intr.width = static_cast<int>(w);
  req.camera.intr.height = static_cast<int>(h);
  req.image = RgbImage(static_cast<int>(w), static_cast<int>(h));
  for (double& v : req.image.data) v = r.f32();
  return req;
}

std::vector<std::uint8_t> encode_response(const GuidanceResponse& resp) {
  Writer w;
  w.f32(resp.weight);
  w.f32(resp.cfg_scale);
  w.u32(static_cast<std::uint32_t>(resp.residual.width));
  w.u32(static_cast<std::uint32_t>(resp.residual.height));
  for (double v : resp.residual.data) w.f32(v);
  return w.take();
}

GuidanceResponse decode_response(std::span<const std::uint8_t> payload) {
  Reader r(payload, "RESPONSE");
  GuidanceResponse resp;
  resp.weight = r.f32();
  resp.cfg_scale = r.f32();
  const auto w = r.u32(), h = r.u32();
  check_image_dims(w, h, r.remaining(), "RESPONSE");
  resp.residual = RgbImage(static_cast<int>(w), static_cast<int>(h));
  for (double& v : resp.residual.data) v = r.f32();
  return resp;
}

std::vector<std::uint8_t> encode_error(const ErrorMessage& e) {
  Writer w;
  w.u32(e.code);
  w.u32(static_cast<std::uint32_t>(e.message.size()));
  w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(e.message.data()), e.message.size()));
  return w.take();
}

ErrorMessage decode_error(std::span<const std::uint8_t> payload) {
  Reader r(payload, "ERROR");
  ErrorMessage e;
  e.code = r.u32();
  const auto len = r.u32();
  const auto text = r.bytes(len);
  e.message.assign(text.begin(), text.end());
  r.finish();
  return e;
}

Connection::Connection(Connection&& o) noexcept : fd_(o.fd_), parser_(std::move(o.parser_)) { o.fd_ = -1; }

Connection& Connection::operator=(Connection&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.fd_;
    parser_ = std::move(o.parser_);
    o.fd_ = -1;
  }
  return *this;
}

Connection::~Connection() { close(); }

void Connection::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

Connection Connection::connect_tcp(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0)
    throw TransportError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  int fd = -1;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw TransportError("cannot connect to " + host + ":" + service);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return Connection(fd);
}

void Connection::send(const Frame& f) {
  if (fd_ < 0) throw TransportError("connection is closed");
  const auto bytes = encode_frame(f);
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      close();
      throw TransportError(std::string("send failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

Frame Connection::receive() {
  if (fd_ < 0) throw TransportError("connection is closed");
  std::uint8_t chunk[65536];
  for (;;) {
    try {
      if (auto f = parser_.next()) return std::move(*f);
    } catch (const ProtocolError&) {
      close();
      throw;
    }
    const ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      close();
      throw TransportError(n == 0 ? "connection closed by peer" : std::string("recv failed: ") + std::strerror(errno));
    }
    parser_.feed(std::span(chunk, static_cast<std::size_t>(n)));
  }
}

}  // namespace compsplat::wire

namespace compsplat {

RemoteGuidanceProvider::RemoteGuidanceProvider(const std::string& host, std::uint16_t port, std::uint16_t version)
    : conn_(wire::Connection::connect_tcp(host, port)) {
  handshake(version);
}

RemoteGuidanceProvider::RemoteGuidanceProvider(wire::Connection conn, std::uint16_t version)
    : conn_(std::move(conn)) {
  handshake(version);
}

void RemoteGuidanceProvider::handshake(std::uint16_t version) {
  conn_.send({version, wire::MsgType::Hello, wire::encode_hello(version)});
  const wire::Frame reply = conn_.receive();
  switch (reply.type) {
    case wire::MsgType::HelloOk:
      return;
    case wire::MsgType::HelloErr: {
      std::uint16_t server = 0;
      try {
        server = wire::decode_hello(reply.payload);
      } catch (const ProtocolError&) {
        conn_.close();
        throw;
      }
      conn_.close();
      throw HandshakeError("protocol version mismatch: client " + std::to_string(version) + ", server " +
                           std::to_string(server));
    }
    case wire::MsgType::Error: {
      const auto e = wire::decode_error(reply.payload);
      conn_.close();
      throw HandshakeError("handshake rejected (code " + std::to_string(e.code) + "): " + e.message);
    }
    default:
      conn_.close();
      throw ProtocolError("unexpected message type during handshake");
  }
}

GuidanceResponse RemoteGuidanceProvider::guide(const GuidanceRequest& req) {
  conn_.send({wire::kVersion, wire::MsgType::Request, wire::encode_request(req)});
  const wire::Frame reply = conn_.receive();
  if (reply.type == wire::MsgType::Error) {
    // The server keeps the connection open after reporting a provider failure.
    wire::ErrorMessage e;
    try {
      e = wire::decode_error(reply.payload);
    } catch (const ProtocolError&) {
      conn_.close();
      throw;
    }
    throw ProtocolError("server error " + std::to_string(e.code) + ": " + e.message);
  }
  try {
    if (reply.type != wire::MsgType::Response) throw ProtocolError("expected RESPONSE frame");
    GuidanceResponse resp = wire::decode_response(reply.payload);
    if (!resp.residual.same_shape(req.image))
      throw ProtocolError("response residual is " + std::to_string(resp.residual.width) + "x" +
                          std::to_string(resp.residual.height) + ", request image is " +
                          std::to_string(req.image.width) + "x" + std::to_string(req.image.height));
    if (!(resp.weight >= 0.0) || !resp.residual.all_finite())
      throw ProtocolError("response carries a negative weight or non-finite residual");
    return resp;
  } catch (const ProtocolError&) {
    conn_.close();
    throw;
  }
}

GuidanceResponse remote_guidance(RemoteGuidanceProvider& conn, const GuidanceRequest& req) {
  return conn.guide(req);
}

}  // namespace compsplat
