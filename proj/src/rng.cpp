#include "rmsolve/rng.hpp"

#include <cmath>
#include <numbers>

namespace rmsolve {

namespace {

constexpr std::uint32_t kM0 = 0xD2511F53u;
constexpr std::uint32_t kM1 = 0xCD9E8D57u;
constexpr std::uint32_t kW0 = 0x9E3779B9u;
constexpr std::uint32_t kW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

// 53-bit uniform strictly inside (0, 1).
inline double open_unit(std::uint32_t a, std::uint32_t b) {
    const std::uint64_t u = (static_cast<std::uint64_t>(a) << 21) ^ (b >> 11);
    return (static_cast<double>(u & ((1ull << 53) - 1)) + 0.5) * 0x1p-53;
}

} // namespace

PhiloxCounter philox4x32(PhiloxCounter c, PhiloxKey k) {
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            k[0] += kW0;
            k[1] += kW1;
        }
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kM0, c[0], hi0, lo0);
        mulhilo(kM1, c[2], hi1, lo1);
        c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
    return c;
}

StreamRng::StreamRng(std::uint64_t seed, std::uint64_t stream)
    : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
      s0_(static_cast<std::uint32_t>(stream)),
      s1_(static_cast<std::uint32_t>(stream >> 32)) {}

PhiloxCounter StreamRng::block(std::uint32_t step, std::uint32_t slot) const {
    return philox4x32({s0_, s1_, step, slot}, key_);
}

std::array<double, 2> StreamRng::uniforms(std::uint32_t step, std::uint32_t slot) const {
    const auto b = block(step, slot);
    return {open_unit(b[0], b[1]), open_unit(b[2], b[3])};
}

std::array<double, 2> StreamRng::normals(std::uint32_t step, std::uint32_t slot) const {
    const auto u = uniforms(step, slot);
    const double r = std::sqrt(-2.0 * std::log(u[0]));
    const double th = 2.0 * std::numbers::pi * u[1];
    return {r * std::cos(th), r * std::sin(th)};
}

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view stage) {
    std::uint64_t s = master ^ fnv1a(stage);
    splitmix64(s);
    return splitmix64(s);
}

} // namespace rmsolve
