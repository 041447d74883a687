#pragma once

#include "fedstgd/data.hpp"
#include "fedstgd/keyvalue.hpp"
#include "fedstgd/train.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace fedstgd {

/// Everything a CLI run needs, settable from flat `key=value` text.
struct RunConfig {
    TrainConfig train;
    std::filesystem::path dataset; // manifest; empty means synthesize in memory
    std::filesystem::path output = "run";
    std::filesystem::path checkpoint; // read by eval; defaults to <output>/checkpoint
    PartitionScheme partition = PartitionScheme::contiguous_equal;
    double skew = 0.5;
    SplitRatios split;
    CentralAdjacency adjacency = CentralAdjacency::approximated;
    SynthOptions synth;
    double tolerance = -1.0; // verify: overrides every numeric tolerance when >= 0
    bool fault = false;      // verify: inject the Γ column-order bug

    /// Sets one key. Throws ConfigError for unknown keys or bad values.
    void set(std::string_view key, std::string_view value);
    void apply(const KeyValues& entries);
    /// Every key with its current value, in a stable order.
    KeyValues to_key_values() const;
    void validate() const;

    std::filesystem::path checkpoint_dir() const { return checkpoint.empty() ? output / "checkpoint" : checkpoint; }
};

/// Reads `--key=value` arguments; anything else is a ConfigError.
KeyValues parse_overrides(std::span<const std::string> args);

} // namespace fedstgd
