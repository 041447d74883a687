#pragma once

#include "fedstgd/errors.hpp"
#include "fedstgd/tensor.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace fedstgd {

enum class MsgType : std::uint8_t {
    p_share = 1,
    q_share = 2,
    p_sum = 3,
    q_sum = 4,
    param_up = 5,
    param_down = 6,
    stats = 7,
};

std::string_view to_string(MsgType type);

struct ProtocolMessage {
    MsgType type = MsgType::stats;
    std::uint32_t round = 0;
    std::uint32_t timestep = 0;
    std::uint8_t k = 0;
    std::uint16_t client_id = 0;
    std::vector<Tensor> tensors;

    /// Header fields equal and every tensor bitwise identical.
    bool identical(const ProtocolMessage& other) const;
};

inline constexpr std::size_t kFrameHeaderBytes = 19; // magic .. tensor count
inline constexpr std::size_t kFrameCrcBytes = 4;
inline constexpr std::size_t kLengthPrefixBytes = 4;

/// Encoded size of one tensor record: rank, dims, values.
std::size_t tensor_record_bytes(const Dims& dims);
/// Size of encode(msg) for a message with the given tensor extents.
std::size_t frame_bytes(std::span<const Dims> tensor_dims);
std::size_t frame_bytes(const ProtocolMessage& msg);

/// Frame bytes without the transport's length prefix.
std::vector<std::uint8_t> encode(const ProtocolMessage& msg);

enum class DecodeErrorKind : std::uint8_t {
    truncated,
    bad_magic,
    bad_version,
    bad_type,
    bad_rank,
    length_mismatch,
    bad_crc,
    non_finite,
};

std::string_view to_string(DecodeErrorKind kind);

class DecodeError : public ProtocolError {
public:
    DecodeError(DecodeErrorKind kind, const std::string& what) : ProtocolError(what), kind_(kind) {}
    DecodeErrorKind kind() const { return kind_; }

private:
    DecodeErrorKind kind_;
};

/// Never reads out of bounds; every malformed input raises DecodeError.
ProtocolMessage decode(std::span<const std::uint8_t> bytes);

/// One side of a bidirectional, per-connection FIFO channel. send() may be
/// called from any thread; recv() belongs to one thread.
class Endpoint {
public:
    virtual ~Endpoint() = default;

    virtual void send(const ProtocolMessage& msg) = 0;
    /// Blocks until a message arrives. Throws TimeoutError when `timeout`
    /// elapses first and PeerClosedError once the peer is gone and the queue
    /// is drained.
    virtual ProtocolMessage recv(std::chrono::milliseconds timeout) = 0;
    virtual void close() = 0;

    /// Wire bytes including the length prefix.
    std::uint64_t bytes_sent() const { return sent_.load(); }
    std::uint64_t bytes_received() const { return received_.load(); }

protected:
    void count_sent(std::size_t n) { sent_ += n; }
    void count_received(std::size_t n) { received_ += n; }

private:
    std::atomic<std::uint64_t> sent_{0};
    std::atomic<std::uint64_t> received_{0};
};

using EndpointPair = std::pair<std::unique_ptr<Endpoint>, std::unique_ptr<Endpoint>>;

/// Connected in-process endpoints. Messages still go through encode/decode.
EndpointPair make_memory_pair();

/// Listening socket on 127.0.0.1 with an ephemeral port.
class TcpListener {
public:
    TcpListener();
    ~TcpListener();
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    std::uint16_t port() const { return port_; }
    std::unique_ptr<Endpoint> accept(std::chrono::milliseconds timeout);

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

std::unique_ptr<Endpoint> tcp_connect(std::uint16_t port, std::chrono::milliseconds timeout);

/// Connected loopback TCP endpoints.
EndpointPair make_tcp_pair();

enum class TransportKind : std::uint8_t { memory, tcp };

TransportKind parse_transport(std::string_view name);
std::string_view to_string(TransportKind kind);
EndpointPair make_pair(TransportKind kind);

} // namespace fedstgd
