#include "imm/hash.hpp"

#include <cstdio>

namespace imm {

void Fnv1a::update(std::span<const std::byte> bytes) noexcept {
    for (std::byte b : bytes) {
        state_ ^= static_cast<std::uint64_t>(b);
        state_ *= 0x100000001b3ULL;
    }
}

std::string Fnv1a::hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
    return buf;
}

std::string content_hash(std::string_view s) {
    Fnv1a h;
    h.update(s);
    return h.hex();
}

}  // namespace imm
