#pragma once

#include "fedstgd/random.hpp"
#include "fedstgd/transport.hpp"

#include <cstdint>
#include <vector>

namespace fedstgd {

/// Random valid message: any type, random header fields, 0-4 tensors of
/// rank 1-3 with small extents and finite values.
ProtocolMessage random_message(CounterRng& rng);

enum class Mutation : std::uint8_t { flip_byte, truncate, append, burst };

/// Corrupts a valid frame. The result always differs from the input.
std::vector<std::uint8_t> mutate_frame(std::vector<std::uint8_t> frame, Mutation kind, CounterRng& rng);

} // namespace fedstgd
