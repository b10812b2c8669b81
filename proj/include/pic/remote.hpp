#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>

#include "pic/protocol.hpp"

namespace pic {

// Pre-shared transport key: remote frames carry their payload inside an
// authenticated box (nonce prefix + secretbox). Both ends must hold the key.
using TransportKey = std::array<uint8_t, 32>;

TransportKey generate_transport_key();
Bytes seal_frame_payload(const Bytes& plain, const TransportKey& key);
Bytes open_frame_payload(const Bytes& sealed, const TransportKey& key);

// One request/reply per connection over the PIC1 wire protocol.
class TcpChannel : public Channel {
public:
    TcpChannel(std::string host, uint16_t port, AuditLog* log = nullptr,
               std::optional<TransportKey> key = std::nullopt)
        : host_(std::move(host)), port_(port), log_(log), key_(key) {}

    Message request(const Message& m) override;

private:
    std::string host_;
    uint16_t port_;
    AuditLog* log_;
    std::optional<TransportKey> key_;
};

// Hosts one entity behind a listening socket. Port 0 binds an ephemeral port.
class EntityServer {
public:
    EntityServer(Entity& entity, uint16_t port, std::optional<TransportKey> key = std::nullopt);
    ~EntityServer();

    uint16_t port() const { return port_; }

    void run();   // blocking accept loop; returns after stop()
    void start(); // accept loop on a background thread
    void stop();

private:
    Entity& entity_;
    int listen_fd_ = -1;
    uint16_t port_ = 0;
    std::thread thread_;
    std::atomic<bool> stopping_{false};
    std::optional<TransportKey> key_;
};

} // namespace pic
