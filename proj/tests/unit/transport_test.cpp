#include "fedstgd/codec_fuzz.hpp"
#include "fedstgd/transport.hpp"

#include <gtest/gtest.h>

#include <map>
#include <thread>

using namespace fedstgd;
using namespace std::chrono_literals;

namespace {

ProtocolMessage share_message(std::uint16_t client, std::uint32_t t)
{
    ProtocolMessage m;
    m.type = MsgType::p_share;
    m.round = 3;
    m.timestep = t;
    m.k = 1;
    m.client_id = client;
    m.tensors.push_back(Tensor::matrix({{1.0 * client, 2.0}, {3.0, 4.0 * t}}));
    return m;
}

DecodeErrorKind decode_error(const std::vector<std::uint8_t>& bytes)
{
    try {
        decode(bytes);
    } catch (const DecodeError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected a DecodeError";
    return DecodeErrorKind::truncated;
}

} // namespace

TEST(Codec, MagicAndHeaderLayout)
{
    const auto bytes = encode(share_message(2, 5));
    ASSERT_GE(bytes.size(), 4u);
    EXPECT_EQ(bytes[0], 0x46);
    EXPECT_EQ(bytes[1], 0x53);
    EXPECT_EQ(bytes[2], 0x54);
    EXPECT_EQ(bytes[3], 0x47);
    EXPECT_EQ(bytes[4], 1);              // version
    EXPECT_EQ(bytes[5], 1);              // P_SHARE
    EXPECT_EQ(bytes[6], 3);              // round, little-endian
    EXPECT_EQ(bytes[10], 5);             // timestep
    EXPECT_EQ(bytes[14], 1);             // k
    EXPECT_EQ(bytes[15], 2);             // client id
    EXPECT_EQ(bytes[17], 1);             // tensor count
    EXPECT_EQ(bytes[19], 2);             // rank
    EXPECT_EQ(bytes.size(), frame_bytes(share_message(2, 5)));
}

TEST(Codec, EmptyStatsMessageHasHeaderAndCrc)
{
    ProtocolMessage m;
    m.type = MsgType::stats;
    const auto bytes = encode(m);
    EXPECT_EQ(bytes.size(), kFrameHeaderBytes + kFrameCrcBytes);
    EXPECT_TRUE(decode(bytes).identical(m));
}

TEST(Codec, FuzzRoundTripAndInjectivity)
{
    CounterRng rng(42, 0);
    std::map<std::vector<std::uint8_t>, ProtocolMessage> seen;
    for (int i = 0; i < 1000; ++i) {
        const ProtocolMessage m = random_message(rng);
        const auto bytes = encode(m);
        ASSERT_EQ(bytes.size(), frame_bytes(m));
        ASSERT_TRUE(decode(bytes).identical(m)) << "message " << i;
        EXPECT_EQ(encode(m), bytes);
        const auto [it, inserted] = seen.emplace(bytes, m);
        if (!inserted) EXPECT_TRUE(it->second.identical(m)) << "collision at message " << i;
    }
}

TEST(Codec, MutatedFramesAreRejected)
{
    CounterRng rng(43, 0);
    int rejected = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto frame = encode(random_message(rng));
        const auto bad = mutate_frame(frame, static_cast<Mutation>(i % 4), rng);
        ASSERT_NE(bad, frame);
        try {
            decode(bad);
        } catch (const DecodeError&) {
            ++rejected;
        }
    }
    EXPECT_EQ(rejected, 1000);
}

TEST(Codec, TypedErrors)
{
    const auto good = encode(share_message(1, 1));
    auto crc = good;
    crc.back() ^= 0xff;
    EXPECT_EQ(decode_error(crc), DecodeErrorKind::bad_crc);

    auto payload = good;
    payload[30] ^= 0x01;
    EXPECT_EQ(decode_error(payload), DecodeErrorKind::bad_crc);

    EXPECT_EQ(decode_error({good.begin(), good.end() - 9}), DecodeErrorKind::truncated);
    EXPECT_EQ(decode_error({good.begin(), good.begin() + 10}), DecodeErrorKind::truncated);

    auto longer = good;
    longer.push_back(0);
    EXPECT_EQ(decode_error(longer), DecodeErrorKind::length_mismatch);

    auto magic = good;
    magic[0] = 'X';
    EXPECT_EQ(decode_error(magic), DecodeErrorKind::bad_magic);

    auto version = good;
    version[4] = 2;
    EXPECT_EQ(decode_error(version), DecodeErrorKind::bad_version);

    auto type = good;
    type[5] = 9;
    EXPECT_EQ(decode_error(type), DecodeErrorKind::bad_type);

    auto rank = good;
    rank[19] = 4;
    EXPECT_EQ(decode_error(rank), DecodeErrorKind::bad_rank);

    auto dims = good;
    dims[20] = 200; // first extent claims far more values than present
    EXPECT_EQ(decode_error(dims), DecodeErrorKind::truncated);

    ProtocolMessage nan_msg = share_message(1, 1);
    nan_msg.tensors[0][0] = std::nan("");
    EXPECT_EQ(decode_error(encode(nan_msg)), DecodeErrorKind::non_finite);
}

TEST(Codec, HugeDeclaredExtentsDoNotAllocate)
{
    auto bytes = encode(share_message(0, 0));
    for (int i = 20; i < 28; ++i) bytes[static_cast<std::size_t>(i)] = 0xff;
    EXPECT_EQ(decode_error(bytes), DecodeErrorKind::truncated);
}

class TransportTest : public ::testing::TestWithParam<TransportKind> {};

TEST_P(TransportTest, FifoAndByteCounts)
{
    auto [a, b] = make_pair(GetParam());
    std::size_t expected = 0;
    for (std::uint32_t t = 0; t < 20; ++t) {
        const auto m = share_message(1, t);
        a->send(m);
        expected += frame_bytes(m) + kLengthPrefixBytes;
    }
    for (std::uint32_t t = 0; t < 20; ++t) {
        EXPECT_TRUE(b->recv(1s).identical(share_message(1, t)));
    }
    EXPECT_EQ(a->bytes_sent(), expected);
    EXPECT_EQ(b->bytes_received(), expected);
}

TEST_P(TransportTest, ZeroTimeoutOnEmptyQueue)
{
    auto [a, b] = make_pair(GetParam());
    EXPECT_THROW(b->recv(0ms), TimeoutError);
    a->send(share_message(0, 0));
    EXPECT_NO_THROW(b->recv(1s));
}

TEST_P(TransportTest, PeerClosed)
{
    auto [a, b] = make_pair(GetParam());
    a->send(share_message(0, 7));
    a->close();
    EXPECT_TRUE(b->recv(1s).identical(share_message(0, 7)));
    EXPECT_THROW(b->recv(1s), PeerClosedError);
}

TEST_P(TransportTest, InterleavedSendersKeepPerSenderOrder)
{
    auto [a, b] = make_pair(GetParam());
    Endpoint* tx = a.get();
    std::vector<std::thread> senders;
    for (std::uint16_t s = 0; s < 3; ++s) {
        senders.emplace_back([tx, s] {
            for (std::uint32_t t = 0; t < 50; ++t) tx->send(share_message(s, t));
        });
    }
    std::map<std::uint16_t, std::uint32_t> next;
    for (int i = 0; i < 150; ++i) {
        const ProtocolMessage m = b->recv(5s);
        EXPECT_EQ(m.timestep, next[m.client_id]++);
    }
    for (auto& s : senders) s.join();
}

TEST_P(TransportTest, LargeMessageSurvivesSegmentation)
{
    auto [a, b] = make_pair(GetParam());
    ProtocolMessage m;
    m.type = MsgType::param_down;
    Tensor big({300000});
    for (std::size_t i = 0; i < big.size(); ++i) big[i] = static_cast<double>(i) * 0.5;
    m.tensors.push_back(big);
    std::thread tx([&] { a->send(m); });
    EXPECT_TRUE(b->recv(10s).identical(m));
    tx.join();
}

INSTANTIATE_TEST_SUITE_P(Both, TransportTest, ::testing::Values(TransportKind::memory, TransportKind::tcp),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Transport, SameSequenceOnBothTransports)
{
    CounterRng rng(9, 0);
    std::vector<ProtocolMessage> msgs;
    for (int i = 0; i < 100; ++i) msgs.push_back(random_message(rng));
    std::vector<std::vector<std::uint8_t>> seen[2];
    int which = 0;
    for (TransportKind kind : {TransportKind::memory, TransportKind::tcp}) {
        auto [a, b] = make_pair(kind);
        for (const auto& m : msgs) a->send(m);
        for (std::size_t i = 0; i < msgs.size(); ++i) seen[which].push_back(encode(b->recv(5s)));
        ++which;
    }
    EXPECT_EQ(seen[0], seen[1]);
}
