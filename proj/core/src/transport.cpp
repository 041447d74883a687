#include "fedstgd/transport.hpp"

#include "bytes.hpp"

#include <zlib.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <limits>
#include <mutex>
#include <thread>

namespace fedstgd {

namespace {

constexpr std::uint8_t kMagic[4] = {'F', 'S', 'T', 'G'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint32_t kMaxFrameBytes = 1u << 30;

std::uint32_t crc_of(const std::uint8_t* data, std::size_t size)
{
    return static_cast<std::uint32_t>(::crc32(0L, data, static_cast<uInt>(size)));
}

std::vector<std::uint8_t> with_prefix(const ProtocolMessage& msg)
{
    const std::vector<std::uint8_t> frame = encode(msg);
    std::vector<std::uint8_t> out;
    out.reserve(frame.size() + kLengthPrefixBytes);
    detail::put_u32(out, static_cast<std::uint32_t>(frame.size()));
    out.insert(out.end(), frame.begin(), frame.end());
    return out;
}

using Clock = std::chrono::steady_clock;

} // namespace

std::string_view to_string(MsgType type)
{
    switch (type) {
    case MsgType::p_share: return "P_SHARE";
    case MsgType::q_share: return "Q_SHARE";
    case MsgType::p_sum: return "P_SUM";
    case MsgType::q_sum: return "Q_SUM";
    case MsgType::param_up: return "PARAM_UP";
    case MsgType::param_down: return "PARAM_DOWN";
    case MsgType::stats: return "STATS";
    }
    return "UNKNOWN";
}

std::string_view to_string(DecodeErrorKind kind)
{
    switch (kind) {
    case DecodeErrorKind::truncated: return "truncated";
    case DecodeErrorKind::bad_magic: return "bad_magic";
    case DecodeErrorKind::bad_version: return "bad_version";
    case DecodeErrorKind::bad_type: return "bad_type";
    case DecodeErrorKind::bad_rank: return "bad_rank";
    case DecodeErrorKind::length_mismatch: return "length_mismatch";
    case DecodeErrorKind::bad_crc: return "bad_crc";
    case DecodeErrorKind::non_finite: return "non_finite";
    }
    return "unknown";
}

bool ProtocolMessage::identical(const ProtocolMessage& o) const
{
    if (type != o.type || round != o.round || timestep != o.timestep || k != o.k || client_id != o.client_id ||
        tensors.size() != o.tensors.size()) {
        return false;
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (!tensors[i].identical(o.tensors[i])) return false;
    }
    return true;
}

std::size_t tensor_record_bytes(const Dims& dims)
{
    return 1 + 4 * dims.size() + 8 * element_count(dims);
}

std::size_t frame_bytes(std::span<const Dims> tensor_dims)
{
    std::size_t n = kFrameHeaderBytes + kFrameCrcBytes;
    for (const Dims& d : tensor_dims) n += tensor_record_bytes(d);
    return n;
}

std::size_t frame_bytes(const ProtocolMessage& msg)
{
    std::size_t n = kFrameHeaderBytes + kFrameCrcBytes;
    for (const Tensor& t : msg.tensors) n += tensor_record_bytes(t.dims());
    return n;
}

std::vector<std::uint8_t> encode(const ProtocolMessage& msg)
{
    if (msg.tensors.size() > std::numeric_limits<std::uint16_t>::max()) {
        throw ShapeError("encode: too many tensors");
    }
    std::vector<std::uint8_t> out;
    out.reserve(frame_bytes(msg));
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    detail::put_u8(out, kVersion);
    detail::put_u8(out, static_cast<std::uint8_t>(msg.type));
    detail::put_u32(out, msg.round);
    detail::put_u32(out, msg.timestep);
    detail::put_u8(out, msg.k);
    detail::put_u16(out, msg.client_id);
    detail::put_u16(out, static_cast<std::uint16_t>(msg.tensors.size()));
    for (const Tensor& t : msg.tensors) {
        detail::put_u8(out, static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.dims()) {
            if (d > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("encode: extent exceeds u32");
            detail::put_u32(out, static_cast<std::uint32_t>(d));
        }
        detail::put_f64s(out, t.values());
    }
    detail::put_u32(out, crc_of(out.data(), out.size()));
    return out;
}

ProtocolMessage decode(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < kFrameHeaderBytes + kFrameCrcBytes) {
        throw DecodeError(DecodeErrorKind::truncated, "frame shorter than header");
    }
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw DecodeError(DecodeErrorKind::bad_magic, "bad magic");
    }
    detail::ByteReader in(bytes.data() + 4, bytes.size() - 4);
    if (const auto version = in.u8(); version != kVersion) {
        throw DecodeError(DecodeErrorKind::bad_version, "unsupported version " + std::to_string(version));
    }
    const std::uint8_t type = in.u8();
    if (type < 1 || type > 7) {
        throw DecodeError(DecodeErrorKind::bad_type, "unknown message type " + std::to_string(type));
    }
    ProtocolMessage msg;
    msg.type = static_cast<MsgType>(type);
    msg.round = in.u32();
    msg.timestep = in.u32();
    msg.k = in.u8();
    msg.client_id = in.u16();
    const std::uint16_t count = in.u16();

    for (std::uint16_t i = 0; i < count; ++i) {
        const std::uint8_t rank = in.u8();
        if (in.overrun()) break;
        if (rank < 1 || rank > 3) {
            throw DecodeError(DecodeErrorKind::bad_rank, "tensor rank " + std::to_string(rank));
        }
        Dims dims(rank);
        for (auto& d : dims) d = in.u32();
        if (in.overrun()) break;
        // Compare against what is left before allocating anything.
        const std::size_t available = in.remaining() / 8;
        const bool empty = std::find(dims.begin(), dims.end(), std::size_t{0}) != dims.end();
        std::size_t elements = empty ? 0 : 1;
        for (std::size_t d : dims) {
            if (empty) break;
            if (elements > available / d) {
                elements = available + 1;
                break;
            }
            elements *= d;
        }
        if (elements > available) {
            throw DecodeError(DecodeErrorKind::truncated, "tensor payload runs past the frame");
        }
        Tensor t(dims);
        in.f64s(t.values());
        msg.tensors.push_back(std::move(t));
    }
    if (in.overrun() || in.remaining() < kFrameCrcBytes) {
        throw DecodeError(DecodeErrorKind::truncated, "frame ends inside the payload");
    }
    if (in.remaining() != kFrameCrcBytes) {
        throw DecodeError(DecodeErrorKind::length_mismatch, std::to_string(in.remaining() - kFrameCrcBytes) +
                                                                " trailing bytes after the payload");
    }
    const std::size_t body = bytes.size() - kFrameCrcBytes;
    if (static_cast<std::uint32_t>(detail::get_le(bytes.data() + body, 4)) != crc_of(bytes.data(), body)) {
        throw DecodeError(DecodeErrorKind::bad_crc, "CRC mismatch");
    }
    for (const Tensor& t : msg.tensors) {
        if (!t.all_finite()) throw DecodeError(DecodeErrorKind::non_finite, "non-finite tensor value");
    }
    return msg;
}

// ---------------------------------------------------------------------------

namespace {

struct Channel {
    std::mutex mutex;
    std::condition_variable ready;
    std::deque<std::vector<std::uint8_t>> frames;
    bool closed = false;
};

class MemoryEndpoint final : public Endpoint {
public:
    MemoryEndpoint(std::shared_ptr<Channel> in, std::shared_ptr<Channel> out) : in_(std::move(in)), out_(std::move(out))
    {
    }
    ~MemoryEndpoint() override { close(); }

    void send(const ProtocolMessage& msg) override
    {
        std::vector<std::uint8_t> bytes = with_prefix(msg);
        const std::size_t n = bytes.size();
        {
            std::lock_guard lock(out_->mutex);
            if (out_->closed) throw PeerClosedError("memory endpoint: peer closed");
            out_->frames.push_back(std::move(bytes));
        }
        out_->ready.notify_one();
        count_sent(n);
    }

    ProtocolMessage recv(std::chrono::milliseconds timeout) override
    {
        std::vector<std::uint8_t> bytes;
        {
            std::unique_lock lock(in_->mutex);
            const bool ready = in_->ready.wait_for(lock, timeout, [&] { return !in_->frames.empty() || in_->closed; });
            if (!in_->frames.empty()) {
                bytes = std::move(in_->frames.front());
                in_->frames.pop_front();
            } else if (ready) {
                throw PeerClosedError("memory endpoint: peer closed");
            } else {
                throw TimeoutError("memory endpoint: recv timed out");
            }
        }
        count_received(bytes.size());
        const auto length = static_cast<std::size_t>(detail::get_le(bytes.data(), 4));
        if (length + kLengthPrefixBytes != bytes.size()) {
            throw DecodeError(DecodeErrorKind::length_mismatch, "length prefix disagrees with frame");
        }
        return decode(std::span(bytes).subspan(kLengthPrefixBytes));
    }

    void close() override
    {
        for (const auto& ch : {in_, out_}) {
            {
                std::lock_guard lock(ch->mutex);
                ch->closed = true;
            }
            ch->ready.notify_all();
        }
    }

private:
    std::shared_ptr<Channel> in_;
    std::shared_ptr<Channel> out_;
};

class TcpEndpoint final : public Endpoint {
public:
    explicit TcpEndpoint(int fd) : fd_(fd)
    {
        const int one = 1;
        ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    }
    ~TcpEndpoint() override
    {
        close();
        ::close(fd_);
    }

    void send(const ProtocolMessage& msg) override
    {
        const std::vector<std::uint8_t> bytes = with_prefix(msg);
        std::lock_guard lock(send_mutex_);
        std::size_t done = 0;
        while (done < bytes.size()) {
            const ssize_t n = ::send(fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw PeerClosedError(std::string("tcp send: ") + std::strerror(errno));
            }
            done += static_cast<std::size_t>(n);
        }
        count_sent(bytes.size());
    }

    ProtocolMessage recv(std::chrono::milliseconds timeout) override
    {
        const auto deadline = Clock::now() + timeout;
        while (true) {
            if (buffer_.size() >= kLengthPrefixBytes) {
                const auto length = static_cast<std::size_t>(detail::get_le(buffer_.data(), 4));
                if (length > kMaxFrameBytes) {
                    throw DecodeError(DecodeErrorKind::length_mismatch, "tcp recv: frame length " +
                                                                            std::to_string(length) + " too large");
                }
                if (buffer_.size() >= kLengthPrefixBytes + length) {
                    const std::vector<std::uint8_t> frame(buffer_.begin() + kLengthPrefixBytes,
                                                          buffer_.begin() + static_cast<long>(kLengthPrefixBytes + length));
                    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<long>(kLengthPrefixBytes + length));
                    count_received(kLengthPrefixBytes + length);
                    return decode(frame);
                }
            }
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
            pollfd p{fd_, POLLIN, 0};
            const int rc = ::poll(&p, 1, static_cast<int>(std::max<long long>(0, left.count())));
            if (rc < 0) {
                if (errno == EINTR) continue;
                throw ProtocolError(std::string("tcp poll: ") + std::strerror(errno));
            }
            if (rc == 0) throw TimeoutError("tcp endpoint: recv timed out");
            std::uint8_t chunk[65536];
            const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
            if (n < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                throw PeerClosedError(std::string("tcp recv: ") + std::strerror(errno));
            }
            if (n == 0) throw PeerClosedError("tcp endpoint: peer closed");
            buffer_.insert(buffer_.end(), chunk, chunk + n);
        }
    }

    void close() override { ::shutdown(fd_, SHUT_RDWR); }

private:
    int fd_;
    std::mutex send_mutex_;
    std::vector<std::uint8_t> buffer_;
};

sockaddr_in loopback(std::uint16_t port)
{
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    return addr;
}

} // namespace

EndpointPair make_memory_pair()
{
    auto a_to_b = std::make_shared<Channel>();
    auto b_to_a = std::make_shared<Channel>();
    return {std::make_unique<MemoryEndpoint>(b_to_a, a_to_b), std::make_unique<MemoryEndpoint>(a_to_b, b_to_a)};
}

TcpListener::TcpListener()
{
    fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd_ < 0) throw ProtocolError(std::string("socket: ") + std::strerror(errno));
    sockaddr_in addr = loopback(0);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 64) != 0) {
        const std::string err = std::strerror(errno);
        ::close(fd_);
        throw ProtocolError("bind/listen on 127.0.0.1: " + err);
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener()
{
    ::close(fd_);
}

std::unique_ptr<Endpoint> TcpListener::accept(std::chrono::milliseconds timeout)
{
    pollfd p{fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (rc == 0) throw TimeoutError("tcp accept timed out");
    if (rc < 0) throw ProtocolError(std::string("tcp accept poll: ") + std::strerror(errno));
    const int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) throw ProtocolError(std::string("tcp accept: ") + std::strerror(errno));
    return std::make_unique<TcpEndpoint>(fd);
}

std::unique_ptr<Endpoint> tcp_connect(std::uint16_t port, std::chrono::milliseconds timeout)
{
    const auto deadline = Clock::now() + timeout;
    while (true) {
        const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
        if (fd < 0) throw ProtocolError(std::string("socket: ") + std::strerror(errno));
        sockaddr_in addr = loopback(port);
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) {
            return std::make_unique<TcpEndpoint>(fd);
        }
        const std::string err = std::strerror(errno);
        ::close(fd);
        if (Clock::now() >= deadline) throw TimeoutError("tcp connect to port " + std::to_string(port) + ": " + err);
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
}

EndpointPair make_tcp_pair()
{
    TcpListener listener;
    auto client = tcp_connect(listener.port(), std::chrono::seconds(5));
    auto server = listener.accept(std::chrono::seconds(5));
    return {std::move(server), std::move(client)};
}

TransportKind parse_transport(std::string_view name)
{
    if (name == "memory") return TransportKind::memory;
    if (name == "tcp") return TransportKind::tcp;
    throw ConfigError("unknown transport '" + std::string(name) + "' (expected memory or tcp)");
}

std::string_view to_string(TransportKind kind)
{
    return kind == TransportKind::tcp ? "tcp" : "memory";
}

EndpointPair make_pair(TransportKind kind)
{
    return kind == TransportKind::tcp ? make_tcp_pair() : make_memory_pair();
}

} // namespace fedstgd
