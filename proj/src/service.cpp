// SPDX-License-Identifier: Apache-2.0
#include "hets/service.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace hets {
namespace {

// Frames larger than this are refused before any allocation.
constexpr uint64_t kMaxPayload = uint64_t{1} << 34;

std::string errno_text() { return std::strerror(errno); }

void send_all(int fd, std::span<const uint8_t> bytes) {
    std::size_t off = 0;
    while (off < bytes.size()) {
        const ssize_t n = ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
        if (n < 0 && errno == EINTR) {
            continue;
        }
        if (n <= 0) {
            const std::string why = errno_text();
            fail(ErrorCode::Transport, "send failed: " + why);
        }
        off += static_cast<std::size_t>(n);
    }
}

void recv_exact(int fd, uint8_t* out, std::size_t count) {
    std::size_t off = 0;
    while (off < count) {
        const ssize_t n = ::recv(fd, out + off, count - off, 0);
        if (n < 0 && errno == EINTR) {
            continue;
        }
        if (n <= 0) {
            const std::string why = n == 0 ? "connection closed mid-frame" : "recv failed: " + errno_text();
            fail(ErrorCode::Transport, why);
        }
        off += static_cast<std::size_t>(n);
    }
}

std::vector<uint8_t> recv_frame(int fd) {
    std::vector<uint8_t> buf(wire::kHeaderSize);
    recv_exact(fd, buf.data(), buf.size());
    const auto h = wire::decode_header(buf);
    require(h.length <= kMaxPayload, ErrorCode::Truncated, "frame too large");
    buf.resize(wire::kHeaderSize + h.length + wire::kTrailerSize);
    recv_exact(fd, buf.data() + wire::kHeaderSize, h.length + wire::kTrailerSize);
    return buf;
}

class Socket {
public:
    explicit Socket(int fd) : fd_(fd) {}
    ~Socket() {
        if (fd_ >= 0) {
            ::close(fd_);
        }
    }
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    int get() const { return fd_; }

private:
    int fd_;
};

sockaddr_in resolve(const std::string& host, uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const int rc = ::getaddrinfo(host.c_str(), nullptr, &hints, &res);
    require(rc == 0 && res != nullptr, ErrorCode::Transport, "cannot resolve " + host + ": " + gai_strerror(rc));
    sockaddr_in addr{};
    std::memcpy(&addr, res->ai_addr, sizeof(addr));
    ::freeaddrinfo(res);
    addr.sin_port = htons(port);
    return addr;
}

// Error text without the leading "Code: " that Error::what() adds.
std::string bare_message(const Error& e) {
    const std::string what = e.what();
    const std::string prefix = std::string(error_code_name(e.code())) + ": ";
    return what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what;
}

}  // namespace

std::pair<std::string, uint16_t> parse_endpoint(const std::string& endpoint) {
    const auto colon = endpoint.rfind(':');
    require(colon != std::string::npos && colon + 1 < endpoint.size(), ErrorCode::Transport,
            "expected host:port, got '" + endpoint + "'");
    std::string host = endpoint.substr(0, colon);
    if (host.empty()) {
        host = "127.0.0.1";
    }
    unsigned long port = 0;
    try {
        std::size_t used = 0;
        port = std::stoul(endpoint.substr(colon + 1), &used);
        require(used == endpoint.size() - colon - 1, ErrorCode::Transport, "bad port");
    } catch (const std::logic_error&) {
        fail(ErrorCode::Transport, "bad port in '" + endpoint + "'");
    }
    require(port <= 65535, ErrorCode::Transport, "port out of range in '" + endpoint + "'");
    return {host, static_cast<uint16_t>(port)};
}

InferenceService::InferenceService(Context ctx, Model model, std::string host, uint16_t port)
    : ctx_(std::move(ctx)), model_(std::move(model)), host_(std::move(host)), port_(port) {
    model_.validate();
}

InferenceService::~InferenceService() { stop(); }

void InferenceService::start() {
    require(!running_, ErrorCode::InvalidOperand, "service already running");
    const sockaddr_in addr = resolve(host_, port_);
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    require(listen_fd_ >= 0, ErrorCode::Transport, "socket: " + errno_text());
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(listen_fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(listen_fd_, 16) != 0) {
        const std::string why = errno_text();
        ::close(listen_fd_);
        listen_fd_ = -1;
        fail(ErrorCode::Transport, "cannot listen on " + host_ + ":" + std::to_string(port_) + ": " + why);
    }
    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
}

void InferenceService::stop() {
    if (running_.exchange(false)) {
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
    if (acceptor_.joinable()) {
        acceptor_.join();
    }
    std::vector<std::thread> workers;
    {
        std::lock_guard lock(workers_mutex_);
        workers.swap(workers_);
    }
    for (auto& t : workers) {
        t.join();
    }
}

void InferenceService::wait() {
    if (acceptor_.joinable()) {
        acceptor_.join();
    }
}

void InferenceService::accept_loop() {
    while (running_) {
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (errno == EINTR) {
                continue;
            }
            break;
        }
        std::lock_guard lock(workers_mutex_);
        workers_.emplace_back([this, fd] { handle(fd); });
    }
}

void InferenceService::handle(int fd) {
    Socket sock(fd);
    std::vector<uint8_t> reply;
    try {
        const auto request = recv_frame(fd);
        Backend b(ctx_, BackendKind::Real);
        const auto input = wire::deserialize_vector(b, request, wire::FrameKind::InferRequest);
        require(input.level() == b.top_level(), ErrorCode::LevelMismatch,
                "request at level " + std::to_string(input.level()) + ", expected the fresh level " +
                    std::to_string(b.top_level()));
        const auto logits = encrypted_forward(b, model_, input);
        reply = wire::serialize_vector(b, logits, wire::FrameKind::InferResponse);
        ++served_;
    } catch (const Error& e) {
        if (e.code() == ErrorCode::Transport) {
            return;
        }
        reply = wire::serialize_error(e.code(), bare_message(e));
    } catch (const std::exception& e) {
        reply = wire::serialize_error(ErrorCode::InvalidOperand, e.what());
    }
    try {
        send_all(fd, reply);
    } catch (const Error&) {
        // Client went away; nothing left to tell it.
    }
}

InferReply remote_infer(const Backend& b, const EncryptedVector& input, const std::string& host, uint16_t port) {
    const auto request = wire::serialize_vector(b, input, wire::FrameKind::InferRequest);
    const sockaddr_in addr = resolve(host, port);
    Socket sock(::socket(AF_INET, SOCK_STREAM, 0));
    require(sock.get() >= 0, ErrorCode::Transport, "socket: " + errno_text());
    if (::connect(sock.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
        const std::string why = errno_text();
        fail(ErrorCode::Transport, "cannot connect to " + host + ":" + std::to_string(port) + ": " + why);
    }
    send_all(sock.get(), request);
    const auto response = recv_frame(sock.get());
    InferReply out;
    out.bytes_sent = request.size();
    out.bytes_received = response.size();
    out.logits = wire::deserialize_vector(b, response, wire::FrameKind::InferResponse);
    return out;
}

ClientResult client_infer(Backend& b, const Model& model, const PlainTensor& image, const std::string& host,
                          uint16_t port) {
    const auto reply = remote_infer(b, prepare_input(b, model, image), host, port);
    return ClientResult{decrypt_vector(b, reply.logits), reply.bytes_sent, reply.bytes_received};
}

}  // namespace hets
