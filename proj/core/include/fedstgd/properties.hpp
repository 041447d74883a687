#pragma once

#include "fedstgd/model.hpp"
#include "fedstgd/transport.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fedstgd {

struct PropertyResult {
    std::string name;
    bool passed = false;
    double max_error = 0.0;
    double tolerance = 0.0;
    double seconds = 0.0;
    std::string detail;
};

struct PropertyOptions {
    std::uint64_t seed = 1;
    /// Replaces the floating-point tolerance of every numeric check when >= 0.
    double tolerance_override = -1.0;
    /// Column order used by federated clients; l_major_fault injects a bug.
    GammaOrder gamma_order = GammaOrder::k_major;

    double tolerance_or(double fallback) const { return tolerance_override >= 0.0 ? tolerance_override : fallback; }
};

/// Γ_iΓ_jᵀ against (W_iW_jᵀ)⊙(V_iV_jᵀ) on random instances.
PropertyResult check_gamma_identity(const PropertyOptions& opt, std::size_t instances = 1000);

/// Stacked per-client cell traces against the monolithic approximated
/// evaluation for every client count and transport, plus bit identity
/// between transports.
PropertyResult check_distributed_equivalence(const PropertyOptions& opt,
                                             const std::vector<std::size_t>& client_counts = {2, 4, 8});

/// One-client federated training against centralised approximated training,
/// compared after every optimizer step.
PropertyResult check_single_client_reduction(const PropertyOptions& opt, std::size_t global_rounds = 10,
                                             std::size_t local_rounds = 5);

/// Central differences over every parameter group of a 4-node model.
PropertyResult check_gradients(const PropertyOptions& opt);

/// Every hidden coordinate of random rollouts stays within [-1, 1].
PropertyResult check_hidden_bound(const PropertyOptions& opt, std::size_t rollouts = 100, std::size_t steps = 20);

/// Random frames round-trip bit-exactly and corrupted frames are rejected
/// with typed decode errors.
PropertyResult check_codec(const PropertyOptions& opt, std::size_t messages = 1000);

/// Weighted-average examples, identity, convexity and order invariance.
PropertyResult check_fedavg_laws(const PropertyOptions& opt);

/// Measured bytes per local and global round equal the closed form, and
/// share bytes scale exactly linearly in the client count.
PropertyResult check_comm_accounting(const PropertyOptions& opt,
                                     const std::vector<std::size_t>& client_counts = {2, 4, 8},
                                     TransportKind transport = TransportKind::memory);

/// No message of a training run carries a tensor whose per-sample row
/// extent equals a client's node count.
PropertyResult check_locality(const PropertyOptions& opt, std::size_t nodes = 20, std::size_t clients = 4);

/// The `verify` suite: every check above with its default arguments.
std::vector<PropertyResult> run_property_suite(const PropertyOptions& opt);

/// `check=<name> status=<pass|fail> max_error=.. tolerance=.. seconds=.. detail=..`
std::string format_property(const PropertyResult& r);

} // namespace fedstgd
