#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace imm {

// 64-bit FNV-1a; used for parameter checksums and config/data content hashes.
class Fnv1a {
public:
    void update(std::span<const std::byte> bytes) noexcept;
    void update(std::string_view s) noexcept { update(std::as_bytes(std::span(s.data(), s.size()))); }
    std::uint64_t digest() const noexcept { return state_; }
    std::string hex() const;

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string content_hash(std::string_view s);

}  // namespace imm
