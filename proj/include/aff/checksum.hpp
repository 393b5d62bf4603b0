#pragma once

#include <cstdint>
#include <cstring>
#include <vector>

#include "aff/matrix.hpp"

namespace aff {

// Standard CRC-32 (IEEE 802.3, reflected, init/xor 0xFFFFFFFF), matching
// zlib's crc32().
class Crc32 {
public:
    void update(const void* bytes, std::size_t len);
    void update_float_payload(const Matrix& m);  // little-endian float32 encoding
    std::uint32_t value() const { return state_ ^ 0xFFFFFFFFu; }

private:
    std::uint32_t state_ = 0xFFFFFFFFu;
};

std::uint32_t crc32_bytes(const void* bytes, std::size_t len);

// Serializes one double as the 4 little-endian bytes of its float32 value.
void append_float_le(std::vector<std::uint8_t>& out, double v);

}  // namespace aff
