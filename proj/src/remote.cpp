#include "pic/remote.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>

#include <sodium.h>

#include "pic/errors.hpp"

namespace pic {

TransportKey generate_transport_key() {
    if (sodium_init() < 0) throw Error("libsodium initialization failed");
    TransportKey k;
    randombytes_buf(k.data(), k.size());
    return k;
}

Bytes seal_frame_payload(const Bytes& plain, const TransportKey& key) {
    if (sodium_init() < 0) throw Error("libsodium initialization failed");
    Bytes out(crypto_secretbox_NONCEBYTES + plain.size() + crypto_secretbox_MACBYTES);
    randombytes_buf(out.data(), crypto_secretbox_NONCEBYTES);
    crypto_secretbox_easy(out.data() + crypto_secretbox_NONCEBYTES, plain.data(), plain.size(),
                          out.data(), key.data());
    return out;
}

Bytes open_frame_payload(const Bytes& sealed, const TransportKey& key) {
    if (sodium_init() < 0) throw Error("libsodium initialization failed");
    if (sealed.size() < crypto_secretbox_NONCEBYTES + crypto_secretbox_MACBYTES)
        throw AuthenticationError("transport frame too short");
    Bytes out(sealed.size() - crypto_secretbox_NONCEBYTES - crypto_secretbox_MACBYTES);
    if (crypto_secretbox_open_easy(out.data(), sealed.data() + crypto_secretbox_NONCEBYTES,
                                   sealed.size() - crypto_secretbox_NONCEBYTES, sealed.data(),
                                   key.data()) != 0)
        throw AuthenticationError("transport frame failed authentication");
    return out;
}

namespace {

struct Fd {
    int fd = -1;
    ~Fd() {
        if (fd >= 0) ::close(fd);
    }
};

void write_all(int fd, const uint8_t* p, size_t len) {
    while (len > 0) {
        ssize_t n = ::send(fd, p, len, MSG_NOSIGNAL);
        if (n <= 0) throw ProtocolError("socket write failed");
        p += n;
        len -= size_t(n);
    }
}

bool read_all(int fd, uint8_t* p, size_t len) {
    while (len > 0) {
        ssize_t n = ::recv(fd, p, len, 0);
        if (n == 0) return false;
        if (n < 0) throw ProtocolError("socket read failed");
        p += n;
        len -= size_t(n);
    }
    return true;
}

// Frame header: magic(4) version(1) kind(1) qid(16) length(8).
constexpr size_t kHeaderBytes = 30;

bool read_frame(int fd, Frame& out) {
    uint8_t header[kHeaderBytes];
    if (!read_all(fd, header, kHeaderBytes)) return false;
    ByteReader hr(header, kHeaderBytes);
    hr.expect_magic("PIC1");
    out.version = hr.u8();
    out.kind = hr.u8();
    for (auto& b : out.query_id) b = hr.u8();
    uint64_t len = hr.u64le();
    if (len > (1ull << 32)) throw ProtocolError("wire payload too large");
    out.payload.resize(len);
    if (len > 0 && !read_all(fd, out.payload.data(), len))
        throw ProtocolError("wire: truncated payload");
    return true;
}

} // namespace

Message TcpChannel::request(const Message& m) {
    Fd sock;
    sock.fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (sock.fd < 0) throw ProtocolError("cannot create socket");

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port_);
    if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
        hostent* he = ::gethostbyname(host_.c_str());
        if (!he || he->h_addrtype != AF_INET) throw ProtocolError("cannot resolve " + host_);
        std::memcpy(&addr.sin_addr, he->h_addr_list[0], sizeof(addr.sin_addr));
    }
    if (::connect(sock.fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
        throw ProtocolError("cannot connect to " + host_ + ":" + std::to_string(port_));

    if (log_)
        log_->message(m.sender, m.receiver, static_cast<uint8_t>(m.kind), m.qid, m.content,
                      m.key_tag, m.payload.size());
    Frame out_frame = message_to_frame(m);
    if (key_) out_frame.payload = seal_frame_payload(out_frame.payload, *key_);
    Bytes out = encode_frame(out_frame);
    write_all(sock.fd, out.data(), out.size());

    Frame reply_frame;
    if (!read_frame(sock.fd, reply_frame)) throw ProtocolError("connection closed before reply");
    if (key_) reply_frame.payload = open_frame_payload(reply_frame.payload, *key_);
    Message reply = message_from_frame(reply_frame);
    if (log_)
        log_->message(reply.sender, reply.receiver, static_cast<uint8_t>(reply.kind), reply.qid,
                      reply.content, reply.key_tag, reply.payload.size());
    return reply;
}

EntityServer::EntityServer(Entity& entity, uint16_t port, std::optional<TransportKey> key)
    : entity_(entity), key_(key) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw ProtocolError("cannot create listen socket");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    addr.sin_port = htons(port);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
        throw ProtocolError("cannot bind port " + std::to_string(port));
    if (::listen(listen_fd_, 16) != 0) throw ProtocolError("cannot listen");
    socklen_t alen = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &alen);
    port_ = ntohs(addr.sin_port);
}

EntityServer::~EntityServer() { stop(); }

void EntityServer::run() {
    for (;;) {
        int conn = ::accept(listen_fd_, nullptr, nullptr);
        if (conn < 0) {
            if (stopping_) return;
            continue;
        }
        Fd guard{conn};
        try {
            Frame f;
            if (!read_frame(conn, f)) continue;
            if (key_) f.payload = open_frame_payload(f.payload, *key_);
            Message reply = entity_.handle(message_from_frame(f));
            Frame rf = message_to_frame(reply);
            if (key_) rf.payload = seal_frame_payload(rf.payload, *key_);
            Bytes out = encode_frame(rf);
            write_all(conn, out.data(), out.size());
        } catch (const std::exception&) {
            // drop the connection; the peer sees a closed socket
        }
    }
}

void EntityServer::start() {
    thread_ = std::thread([this] { run(); });
}

void EntityServer::stop() {
    if (listen_fd_ < 0) return;
    stopping_ = true;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
    if (thread_.joinable()) thread_.join();
}

} // namespace pic
