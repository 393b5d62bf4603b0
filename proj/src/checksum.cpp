#include "aff/checksum.hpp"

namespace aff {

namespace {

const std::uint32_t* crc_table() {
    static std::uint32_t table[256];
    static bool init = [] {
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) {
                c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
            }
            table[i] = c;
        }
        return true;
    }();
    (void)init;
    return table;
}

}  // namespace

void Crc32::update(const void* bytes, std::size_t len) {
    const auto* p = static_cast<const std::uint8_t*>(bytes);
    const std::uint32_t* table = crc_table();
    for (std::size_t i = 0; i < len; ++i) {
        state_ = table[(state_ ^ p[i]) & 0xFFu] ^ (state_ >> 8);
    }
}

void Crc32::update_float_payload(const Matrix& m) {
    std::vector<std::uint8_t> buf;
    buf.reserve(m.size() * 4);
    for (std::size_t i = 0; i < m.size(); ++i) append_float_le(buf, m.at(i));
    update(buf.data(), buf.size());
}

std::uint32_t crc32_bytes(const void* bytes, std::size_t len) {
    Crc32 crc;
    crc.update(bytes, len);
    return crc.value();
}

void append_float_le(std::vector<std::uint8_t>& out, double v) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    out.push_back(static_cast<std::uint8_t>(bits & 0xFFu));
    out.push_back(static_cast<std::uint8_t>((bits >> 8) & 0xFFu));
    out.push_back(static_cast<std::uint8_t>((bits >> 16) & 0xFFu));
    out.push_back(static_cast<std::uint8_t>((bits >> 24) & 0xFFu));
}

}  // namespace aff
