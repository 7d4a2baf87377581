#include "lakegrid/overlay/endpoint.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <mutex>
#include <thread>

#include "lakegrid/common/error.hpp"
#include "lakegrid/common/kv.hpp"

namespace lakegrid::overlay {

std::string ip_to_string(std::uint32_t ip) {
  return std::to_string(ip >> 24) + "." + std::to_string((ip >> 16) & 0xff) + "." +
         std::to_string((ip >> 8) & 0xff) + "." + std::to_string(ip & 0xff);
}

std::uint32_t parse_ip(std::string_view text) {
  auto parts = split(text, '.');
  if (parts.size() != 4) throw Error(ErrorKind::Validation, "bad IPv4 address '" + std::string(text) + "'");
  std::uint32_t ip = 0;
  for (const auto& p : parts) {
    auto v = parse_int(p);
    if (!v || *v < 0 || *v > 255 || p.empty() || p[0] == '+') {
      throw Error(ErrorKind::Validation, "bad IPv4 address '" + std::string(text) + "'");
    }
    ip = (ip << 8) | static_cast<std::uint32_t>(*v);
  }
  return ip;
}

std::string Endpoint::str() const { return ip_to_string(ip) + ":" + std::to_string(port); }

Endpoint Endpoint::parse(std::string_view text) {
  auto colon = text.rfind(':');
  if (colon == std::string_view::npos) {
    throw Error(ErrorKind::Validation, "endpoint '" + std::string(text) + "' lacks a port");
  }
  auto port = parse_int(text.substr(colon + 1));
  if (!port || *port < 0 || *port > 65535) {
    throw Error(ErrorKind::Validation, "bad port in endpoint '" + std::string(text) + "'");
  }
  return Endpoint{parse_ip(text.substr(0, colon)), static_cast<std::uint16_t>(*port)};
}

struct UdpSocket::State {
  int fd = -1;
  Endpoint local;
  std::mutex mu;  // guards handler and serializes handler calls against close()
  DatagramHandler handler;
  std::atomic<bool> closing{false};
  std::thread reader;
};

UdpSocket::UdpSocket(const Endpoint& bind) : state_(std::make_shared<State>()) {
  int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd < 0) throw Error(ErrorKind::Transport, std::string("socket: ") + std::strerror(errno));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(bind.ip);
  addr.sin_port = htons(bind.port);
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    int err = errno;
    ::close(fd);
    throw Error(ErrorKind::Transport, "bind " + bind.str() + ": " + std::strerror(err));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  state_->fd = fd;
  state_->local = Endpoint{ntohl(addr.sin_addr.s_addr), ntohs(addr.sin_port)};
  auto st = state_;
  state_->reader = std::thread([st] {
    std::string buf(65536, '\0');
    while (!st->closing) {
      pollfd p{st->fd, POLLIN, 0};
      if (::poll(&p, 1, 100) <= 0) continue;
      sockaddr_in from{};
      socklen_t flen = sizeof(from);
      auto n = ::recvfrom(st->fd, buf.data(), buf.size(), 0, reinterpret_cast<sockaddr*>(&from), &flen);
      if (n < 0) continue;
      std::lock_guard lock(st->mu);
      if (st->handler && !st->closing) {
        st->handler(Endpoint{ntohl(from.sin_addr.s_addr), ntohs(from.sin_port)},
                    std::string(buf.data(), static_cast<std::size_t>(n)));
      }
    }
  });
}

UdpSocket::~UdpSocket() { close(); }

Endpoint UdpSocket::local_endpoint() const { return state_->local; }

void UdpSocket::send_to(const Endpoint& to, std::string data) {
  if (state_->closing) return;
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(to.ip);
  addr.sin_port = htons(to.port);
  // Datagram semantics: a failed send is indistinguishable from loss.
  ::sendto(state_->fd, data.data(), data.size(), 0, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
}

void UdpSocket::set_handler(DatagramHandler handler) {
  std::lock_guard lock(state_->mu);
  state_->handler = std::move(handler);
}

void UdpSocket::close() {
  if (state_->closing.exchange(true)) return;
  if (state_->reader.joinable()) state_->reader.join();
  {
    std::lock_guard lock(state_->mu);
    state_->handler = nullptr;
  }
  ::close(state_->fd);
}

}  // namespace lakegrid::overlay
