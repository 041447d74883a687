#include "fedstgd/codec_fuzz.hpp"

namespace fedstgd {

ProtocolMessage random_message(CounterRng& rng)
{
    ProtocolMessage m;
    m.type = static_cast<MsgType>(1 + rng.next_bits() % 7);
    m.round = static_cast<std::uint32_t>(rng.next_bits());
    m.timestep = static_cast<std::uint32_t>(rng.next_bits() % 64);
    m.k = static_cast<std::uint8_t>(rng.next_bits() % 3);
    m.client_id = static_cast<std::uint16_t>(rng.next_bits() % 16);
    const std::size_t count = rng.next_bits() % 5;
    for (std::size_t i = 0; i < count; ++i) {
        Dims dims(1 + rng.next_bits() % 3);
        for (auto& d : dims) d = rng.next_bits() % 5;
        Tensor t(dims);
        for (double& v : t.values()) {
            // Mix ordinary values with signed zeros and extreme magnitudes.
            switch (rng.next_bits() % 8) {
            case 0: v = -0.0; break;
            case 1: v = 1e308 * (rng.next_uniform() - 0.5); break;
            case 2: v = 4.9e-324; break;
            default: v = rng.next_normal() * 100.0; break;
            }
        }
        m.tensors.push_back(std::move(t));
    }
    return m;
}

std::vector<std::uint8_t> mutate_frame(std::vector<std::uint8_t> frame, Mutation kind, CounterRng& rng)
{
    switch (kind) {
    case Mutation::flip_byte: {
        const std::size_t at = rng.next_bits() % frame.size();
        frame[at] ^= static_cast<std::uint8_t>(1 + rng.next_bits() % 255);
        break;
    }
    case Mutation::truncate:
        frame.resize(rng.next_bits() % frame.size());
        break;
    case Mutation::append: {
        const std::size_t extra = 1 + rng.next_bits() % 16;
        for (std::size_t i = 0; i < extra; ++i) frame.push_back(static_cast<std::uint8_t>(rng.next_bits()));
        break;
    }
    case Mutation::burst: {
        const std::size_t at = rng.next_bits() % frame.size();
        const std::size_t len = 1 + rng.next_bits() % 4;
        for (std::size_t i = at; i < std::min(frame.size(), at + len); ++i) {
            frame[i] ^= static_cast<std::uint8_t>(1 + rng.next_bits() % 255);
        }
        break;
    }
    }
    return frame;
}

} // namespace fedstgd
