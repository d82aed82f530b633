#pragma once

// Little-endian primitive readers/writers shared by the checkpoint formats.
// The host is assumed little-endian (checked at compile time).

#include "meshgs/common.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace meshgs::binio {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw ParseError("unexpected end of binary data");
    return value;
}

inline void write_u32(std::ostream& out, std::uint32_t v) { write_pod(out, v); }
inline void write_u64(std::ostream& out, std::uint64_t v) { write_pod(out, v); }
inline void write_f32(std::ostream& out, float v) { write_pod(out, v); }
inline void write_f64(std::ostream& out, double v) { write_pod(out, v); }
inline std::uint32_t read_u32(std::istream& in) { return read_pod<std::uint32_t>(in); }
inline std::uint64_t read_u64(std::istream& in) { return read_pod<std::uint64_t>(in); }
inline float read_f32(std::istream& in) { return read_pod<float>(in); }
inline double read_f64(std::istream& in) { return read_pod<double>(in); }

inline void write_f64_array(std::ostream& out, std::span<const double> values) {
    write_u64(out, values.size());
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
}

inline std::vector<double> read_f64_array(std::istream& in, std::uint64_t max_count = std::uint64_t{1} << 34) {
    const std::uint64_t n = read_u64(in);
    if (n > max_count) throw ParseError("array length out of range");
    std::vector<double> values(n);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw ParseError("unexpected end of binary data");
    return values;
}

inline void write_string(std::ostream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
    const std::uint64_t n = read_u64(in);
    if (n > (std::uint64_t{1} << 30)) throw ParseError("string length out of range");
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw ParseError("unexpected end of binary data");
    return s;
}

} // namespace meshgs::binio
