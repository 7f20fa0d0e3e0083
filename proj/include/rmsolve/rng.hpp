#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace rmsolve {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

// Philox4x32-10 block function (Salmon et al.); pure, no state.
PhiloxCounter philox4x32(PhiloxCounter ctr, PhiloxKey key);

// Counter-based stream keyed by (seed, stream id). Draws are addressed by
// (step, slot), so any value can be regenerated without replaying the stream.
class StreamRng {
public:
    StreamRng(std::uint64_t seed, std::uint64_t stream);

    PhiloxCounter block(std::uint32_t step, std::uint32_t slot) const;
    // Two independent standard normals (Box-Muller on one block).
    std::array<double, 2> normals(std::uint32_t step, std::uint32_t slot) const;
    // Two independent uniforms in the open interval (0, 1).
    std::array<double, 2> uniforms(std::uint32_t step, std::uint32_t slot) const;

private:
    PhiloxKey key_;
    std::uint32_t s0_, s1_;
};

std::uint64_t splitmix64(std::uint64_t& state);

// Named per-stage seed derivation from a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stage);

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);

} // namespace rmsolve
