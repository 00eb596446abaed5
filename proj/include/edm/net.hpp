#ifndef EDM_NET_HPP
#define EDM_NET_HPP

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include "protocol.hpp"

namespace edm::net
{

class NetError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Owning file descriptor.
class Socket
{
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(Socket &&other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
    Socket &operator=(Socket &&other) noexcept
    {
        if (this != &other) {
            close();
            fd_ = std::exchange(other.fd_, -1);
        }
        return *this;
    }
    Socket(const Socket &) = delete;
    Socket &operator=(const Socket &) = delete;
    ~Socket() { close(); }

    int fd() const { return fd_; }
    bool valid() const { return fd_ >= 0; }

    void close()
    {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

private:
    int fd_ = -1;
};

struct Address {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
};

/// "host:port" or ":port".
inline Address parse_address(std::string_view text)
{
    const auto colon = text.rfind(':');
    if (colon == std::string_view::npos) throw std::invalid_argument("address must be host:port");
    Address a;
    if (colon > 0) a.host = std::string(text.substr(0, colon));
    const std::string port(text.substr(colon + 1));
    try {
        const int p = std::stoi(port);
        if (p < 0 || p > 65535) throw std::out_of_range("port");
        a.port = static_cast<std::uint16_t>(p);
    } catch (const std::exception &) {
        throw std::invalid_argument("invalid port '" + port + "'");
    }
    return a;
}

namespace detail
{

inline sockaddr_in resolve(const Address &a)
{
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(a.port);
    if (inet_pton(AF_INET, a.host.c_str(), &addr.sin_addr) == 1) return addr;

    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo *res = nullptr;
    if (getaddrinfo(a.host.c_str(), nullptr, &hints, &res) != 0 || !res) {
        throw NetError("cannot resolve host '" + a.host + "'");
    }
    addr.sin_addr = reinterpret_cast<sockaddr_in *>(res->ai_addr)->sin_addr;
    freeaddrinfo(res);
    return addr;
}

inline std::string errno_text() { return std::strerror(errno); }

} // namespace detail

/// Listening socket; the bound port is written back into `a.port`.
inline Socket listen_tcp(Address &a, int backlog = 64)
{
    Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s.valid()) throw NetError("socket: " + detail::errno_text());
    int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    auto addr = detail::resolve(a);
    if (::bind(s.fd(), reinterpret_cast<sockaddr *>(&addr), sizeof addr) != 0) {
        throw NetError("bind " + a.host + ":" + std::to_string(a.port) + ": " + detail::errno_text());
    }
    if (::listen(s.fd(), backlog) != 0) throw NetError("listen: " + detail::errno_text());
    socklen_t len = sizeof addr;
    ::getsockname(s.fd(), reinterpret_cast<sockaddr *>(&addr), &len);
    a.port = ntohs(addr.sin_port);
    return s;
}

inline Socket connect_tcp(const Address &a)
{
    Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s.valid()) throw NetError("socket: " + detail::errno_text());
    auto addr = detail::resolve(a);
    if (::connect(s.fd(), reinterpret_cast<sockaddr *>(&addr), sizeof addr) != 0) {
        throw NetError("connect " + a.host + ":" + std::to_string(a.port) + ": " + detail::errno_text());
    }
    int one = 1;
    ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return s;
}

inline void send_all(int fd, std::string_view bytes)
{
    while (!bytes.empty()) {
        const ssize_t n = ::send(fd, bytes.data(), bytes.size(), MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw NetError("send: " + detail::errno_text());
        }
        bytes.remove_prefix(static_cast<std::size_t>(n));
    }
}

inline void send_message(int fd, const proto::Message &m) { send_all(fd, proto::encode(m)); }

/// Reads whatever is available (blocking for at least one byte). Returns
/// false on orderly shutdown by the peer.
inline bool read_some(int fd, proto::FrameBuffer &buffer)
{
    char chunk[65536];
    for (;;) {
        const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw NetError("recv: " + detail::errno_text());
        }
        if (n == 0) return false;
        buffer.append({chunk, static_cast<std::size_t>(n)});
        return true;
    }
}

/// Blocks until one complete message arrives.
inline proto::Message receive_message(int fd, proto::FrameBuffer &buffer)
{
    for (;;) {
        if (auto body = buffer.next()) return proto::decode(*body);
        if (!read_some(fd, buffer)) throw NetError("connection closed by peer");
    }
}

} // namespace edm::net

#endif // EDM_NET_HPP
