#pragma once

// Critic wire protocol over TCP. A message is
//   u32 little-endian header length | UTF-8 JSON header | payloads
// where payloads are little-endian float32 arrays in the order and shapes
// listed in header["shapes"].

#include "rigmo/mosds.hpp"

#include <json.hpp>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <bit>
#include <chrono>
#include <cstring>
#include <thread>

namespace rigmo::wire {

inline constexpr const char *format_version = "1.0";
inline constexpr std::uint32_t max_header_bytes = 16u << 20;
inline constexpr std::uint64_t max_payload_bytes = 4ull << 30;

class ProtocolError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct Message {
  nlohmann::json header;
  std::vector<std::vector<float>> payloads;
};

inline std::vector<std::size_t> shape_of(const nlohmann::json &j) {
  if (!j.is_array())
    throw ProtocolError("shape must be an array");
  std::vector<std::size_t> s;
  for (const auto &d : j) {
    if (!d.is_number_integer() || d.get<std::int64_t>() < 0)
      throw ProtocolError("shape entries must be non-negative integers");
    s.push_back(static_cast<std::size_t>(d.get<std::int64_t>()));
  }
  return s;
}

namespace detail {

inline void put_u32(std::string &out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k)
    out.push_back(static_cast<char>((v >> (8 * k)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char *p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

} // namespace detail

/// Serializes a message; header["shapes"] must describe the payloads.
inline std::string encode(const Message &m) {
  const auto shapes = m.header.at("shapes");
  if (shapes.size() != m.payloads.size())
    throw ProtocolError("header lists " + std::to_string(shapes.size()) + " shapes for " +
                        std::to_string(m.payloads.size()) + " payloads");
  for (std::size_t k = 0; k < shapes.size(); ++k)
    if (numel(shape_of(shapes[k])) != m.payloads[k].size())
      throw ProtocolError("payload " + std::to_string(k) + " does not match its shape");
  const std::string head = m.header.dump();
  if (head.size() > max_header_bytes)
    throw ProtocolError("header too large");
  std::string out;
  detail::put_u32(out, static_cast<std::uint32_t>(head.size()));
  out += head;
  for (const auto &p : m.payloads)
    for (float f : p)
      detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

/// Reads one message through `read(buffer, n)`, which must fill exactly n bytes.
template <class Read> Message read_message(Read &&read) {
  unsigned char len[4];
  read(len, 4);
  const std::uint32_t n = detail::get_u32(len);
  if (n == 0 || n > max_header_bytes)
    throw ProtocolError("invalid header length " + std::to_string(n));
  std::string head(n, '\0');
  read(reinterpret_cast<unsigned char *>(head.data()), n);
  Message m;
  try {
    m.header = nlohmann::json::parse(head);
  } catch (const nlohmann::json::exception &e) {
    throw ProtocolError(std::string("malformed header: ") + e.what());
  }
  if (!m.header.is_object() || !m.header.contains("type") || !m.header.contains("shapes"))
    throw ProtocolError("header needs 'type' and 'shapes'");
  if (m.header.value("dtype", std::string("float32")) != "float32")
    throw ProtocolError("unsupported dtype " + m.header["dtype"].dump());
  std::uint64_t total = 0;
  for (const auto &s : m.header["shapes"]) {
    const std::size_t count = numel(shape_of(s));
    total += static_cast<std::uint64_t>(count) * 4;
    if (total > max_payload_bytes)
      throw ProtocolError("payload too large");
    std::vector<unsigned char> raw(count * 4);
    if (count)
      read(raw.data(), raw.size());
    std::vector<float> p(count);
    for (std::size_t i = 0; i < count; ++i)
      p[i] = std::bit_cast<float>(detail::get_u32(&raw[i * 4]));
    m.payloads.push_back(std::move(p));
  }
  return m;
}

inline Message decode(const std::string &bytes) {
  std::size_t pos = 0;
  Message m = read_message([&](unsigned char *buf, std::size_t n) {
    if (pos + n > bytes.size())
      throw ProtocolError("truncated message");
    std::memcpy(buf, bytes.data() + pos, n);
    pos += n;
  });
  if (pos != bytes.size())
    throw ProtocolError("trailing bytes after message");
  return m;
}

inline std::vector<float> to_float(const Tensor &t) {
  std::vector<float> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i)
    out[i] = static_cast<float>(t[i]);
  return out;
}

inline Tensor to_tensor(const std::vector<float> &v, Shape shape) {
  return Tensor(std::move(shape), std::vector<double>(v.begin(), v.end()));
}

inline Message encode_request(const CriticRequest &r) {
  Message m;
  m.header = {{"format_version", format_version},
              {"type", "request"},
              {"op", "critic"},
              {"dtype", "float32"},
              {"shapes", {r.frames.shape()}},
              {"tau", r.tau},
              {"prompt", r.prompt},
              {"cfg_scale", r.cfg_scale},
              {"seed", r.seed}};
  m.payloads = {to_float(r.frames)};
  return m;
}

/// Request for d(sum(latent_grad * encode(frames)))/d(frames).
inline Message encode_vjp_request(const CriticRequest &r, const Tensor &latent_grad) {
  Message m = encode_request(r);
  m.header["op"] = "encoder_vjp";
  m.header["shapes"] = {r.frames.shape(), latent_grad.shape()};
  m.payloads.push_back(to_float(latent_grad));
  return m;
}

inline void check_version(const nlohmann::json &h) {
  const std::string v = h.value("format_version", std::string());
  if (v.substr(0, v.find('.')) != "1")
    throw ProtocolError("unsupported wire format_version '" + v + "'");
}

inline void check_reply(const Message &m) {
  const std::string type = m.header.value("type", std::string());
  if (type == "error")
    throw ProtocolError("critic error: " + m.header.value("message", std::string("(no message)")));
  if (type != "response")
    throw ProtocolError("expected a response, got '" + type + "'");
  check_version(m.header);
}

inline CriticRequest decode_request(const Message &m) {
  check_version(m.header);
  if (m.header.value("type", std::string()) != "request" || m.payloads.empty())
    throw ProtocolError("not a critic request");
  CriticRequest r;
  r.frames = to_tensor(m.payloads[0], shape_of(m.header["shapes"][0]));
  r.prompt = m.header.value("prompt", std::string());
  r.tau = m.header.at("tau").get<double>();
  r.cfg_scale = m.header.at("cfg_scale").get<double>();
  r.seed = m.header.at("seed").get<std::uint64_t>();
  return r;
}

inline Message encode_response(const CriticResponse &r) {
  Message m;
  const Shape s = r.eps_uncond.shape();
  m.header = {{"format_version", format_version},
              {"type", "response"},
              {"dtype", "float32"},
              {"shapes", {s, s, s}},
              {"latent_shape", s},
              {"schedule_weight", r.schedule_weight}};
  m.payloads = {to_float(r.eps_uncond), to_float(r.eps_text), to_float(r.eps_injected)};
  return m;
}

inline CriticResponse decode_response(const Message &m) {
  check_reply(m);
  if (m.payloads.size() != 3)
    throw ProtocolError("critic response needs 3 payloads");
  const auto &shapes = m.header["shapes"];
  CriticResponse r;
  r.eps_uncond = to_tensor(m.payloads[0], shape_of(shapes[0]));
  r.eps_text = to_tensor(m.payloads[1], shape_of(shapes[1]));
  r.eps_injected = to_tensor(m.payloads[2], shape_of(shapes[2]));
  r.schedule_weight = m.header.at("schedule_weight").get<double>();
  r.validate();
  return r;
}

inline Message error_message(const std::string &what) {
  return {{{"format_version", format_version},
           {"type", "error"},
           {"message", what},
           {"shapes", nlohmann::json::array()}},
          {}};
}

/// "host:port" with a numeric port.
inline std::pair<std::string, std::uint16_t> parse_address(const std::string &addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == addr.size())
    throw DataError("bridge address must be host:port, got '" + addr + "'");
  const std::string port = addr.substr(colon + 1);
  if (port.find_first_not_of("0123456789") != std::string::npos || port.size() > 5 ||
      std::stoul(port) == 0 || std::stoul(port) > 65535)
    throw DataError("invalid port in bridge address '" + addr + "'");
  return {addr.substr(0, colon), static_cast<std::uint16_t>(std::stoul(port))};
}

/// Blocking TCP connection.
class Connection {
public:
  Connection() = default;
  explicit Connection(int fd) : fd_(fd) {}
  Connection(const Connection &) = delete;
  Connection &operator=(const Connection &) = delete;
  Connection(Connection &&o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Connection &operator=(Connection &&o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Connection() { close(); }

  static Connection open(const std::string &host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo *res = nullptr;
    if (const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res))
      throw std::runtime_error("cannot resolve " + host + ": " + ::gai_strerror(rc));
    int fd = -1;
    for (addrinfo *a = res; a; a = a->ai_next) {
      fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
      if (fd < 0)
        continue;
      if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0)
        break;
      ::close(fd);
      fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0)
      throw std::runtime_error("cannot connect to " + host + ":" + std::to_string(port));
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return Connection(fd);
  }

  bool is_open() const { return fd_ >= 0; }

  void write(const std::string &bytes) {
    std::size_t sent = 0;
    while (sent < bytes.size()) {
      const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
      if (n <= 0)
        throw std::runtime_error("connection lost while sending");
      sent += static_cast<std::size_t>(n);
    }
  }

  void read_exact(unsigned char *buf, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
      const ssize_t k = ::recv(fd_, buf + got, n - got, 0);
      if (k <= 0)
        throw std::runtime_error("connection closed while receiving");
      got += static_cast<std::size_t>(k);
    }
  }

  Message receive() {
    return read_message([this](unsigned char *b, std::size_t n) { read_exact(b, n); });
  }

  void send(const Message &m) { write(encode(m)); }

  void close() {
    if (fd_ >= 0)
      ::close(fd_);
    fd_ = -1;
  }

private:
  int fd_ = -1;
};

/// Critic served by the external bridge. Transport failures are retried
/// with a fresh connection before giving up.
class BridgeCritic : public Critic {
public:
  explicit BridgeCritic(std::string address, int attempts = 3,
                        std::chrono::milliseconds backoff = std::chrono::milliseconds(200))
      : attempts_(attempts), backoff_(backoff) {
    std::tie(host_, port_) = parse_address(address);
  }

  CriticResponse evaluate(const CriticRequest &req) override {
    return decode_response(round_trip(encode_request(req)));
  }

  bool identity_encoder() const override { return false; }

  Tensor encoder_vjp(const CriticRequest &req, const Tensor &latent_grad) override {
    const Message m = round_trip(encode_vjp_request(req, latent_grad));
    check_reply(m);
    if (m.payloads.size() != 1)
      throw ProtocolError("encoder VJP response needs 1 payload");
    Tensor g = to_tensor(m.payloads[0], shape_of(m.header["shapes"][0]));
    if (g.shape() != req.frames.shape())
      throw ProtocolError("encoder VJP shape " + shape_str(g.shape()) + " differs from frames");
    return g;
  }

private:
  Message round_trip(const Message &request) {
    const std::string bytes = encode(request);
    std::string last;
    for (int attempt = 0; attempt < attempts_; ++attempt) {
      try {
        if (!conn_.is_open())
          conn_ = Connection::open(host_, port_);
        conn_.write(bytes);
        return conn_.receive();
      } catch (const ProtocolError &) {
        conn_.close();
        throw;
      } catch (const std::exception &e) {
        conn_.close();
        last = e.what();
        std::this_thread::sleep_for(backoff_ * (attempt + 1));
      }
    }
    throw std::runtime_error("critic transport failed after " + std::to_string(attempts_) +
                             " attempts: " + last);
  }

  std::string host_;
  std::uint16_t port_ = 0;
  int attempts_;
  std::chrono::milliseconds backoff_;
  Connection conn_;
};

} // namespace rigmo::wire
