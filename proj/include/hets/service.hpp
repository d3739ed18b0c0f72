// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "hets/nn.hpp"
#include "hets/wire.hpp"

namespace hets {

/// Encrypted inference over TCP. One request frame per connection, answered by
/// an InferResponse or an Error frame; each connection gets its own thread.
class InferenceService {
public:
    /// The context should be public; port 0 picks a free port.
    InferenceService(Context ctx, Model model, std::string host = "127.0.0.1", uint16_t port = 0);
    ~InferenceService();
    InferenceService(const InferenceService&) = delete;
    InferenceService& operator=(const InferenceService&) = delete;

    /// Binds and starts accepting. Transport when the address is unusable.
    void start();
    void stop();
    /// Blocks until stop() is called from elsewhere.
    void wait();

    uint16_t port() const { return port_; }
    std::size_t requests_served() const { return served_.load(); }

private:
    void accept_loop();
    void handle(int fd);

    Context ctx_;
    Model model_;
    std::string host_;
    uint16_t port_;
    int listen_fd_ = -1;
    std::atomic<bool> running_{false};
    std::atomic<std::size_t> served_{0};
    std::thread acceptor_;
    std::mutex workers_mutex_;
    std::vector<std::thread> workers_;
};

struct InferReply {
    EncryptedVector logits;
    std::size_t bytes_sent = 0;
    std::size_t bytes_received = 0;
};

/// Sends the encrypted input and returns the encrypted logits, bound to b.
/// Transport on connection problems; a remote Error frame is re-raised locally.
InferReply remote_infer(const Backend& b, const EncryptedVector& input, const std::string& host, uint16_t port);

struct ClientResult {
    PlainTensor logits;
    std::size_t bytes_sent = 0;
    std::size_t bytes_received = 0;
};

/// prepare_input, remote_infer and decryption; b must hold the secret key.
ClientResult client_infer(Backend& b, const Model& model, const PlainTensor& image, const std::string& host,
                          uint16_t port);

/// Splits "host:port" (Transport on a malformed address).
std::pair<std::string, uint16_t> parse_endpoint(const std::string& endpoint);

}  // namespace hets
