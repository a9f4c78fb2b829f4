#pragma once

// Little-endian encoding helpers for the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "mmon/error.hpp"

namespace mmon::le {

template <typename T>
void put(std::string& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u16(std::string& out, std::uint16_t v) { put(out, v); }
inline void put_u32(std::string& out, std::uint32_t v) { put(out, v); }
inline void put_f64(std::string& out, double v) { put(out, std::bit_cast<std::uint64_t>(v)); }

template <typename T>
T get(std::string_view in, std::size_t offset) {
    if (offset + sizeof(T) > in.size()) throw FormatError("unexpected end of data");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<T>(static_cast<T>(static_cast<unsigned char>(in[offset + i])) << (8 * i));
    }
    return v;
}

inline std::uint16_t get_u16(std::string_view in, std::size_t offset) { return get<std::uint16_t>(in, offset); }
inline std::uint32_t get_u32(std::string_view in, std::size_t offset) { return get<std::uint32_t>(in, offset); }
inline double get_f64(std::string_view in, std::size_t offset) {
    return std::bit_cast<double>(get<std::uint64_t>(in, offset));
}

}  // namespace mmon::le
