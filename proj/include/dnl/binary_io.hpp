#pragma once

// Little-endian primitives shared by the tensor, dataset and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "dnl/errors.hpp"

namespace dnl::io {

class Writer {
public:
    explicit Writer(std::ostream& os) : os_(os) {}

    void bytes(const void* p, std::size_t n) {
        os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!os_) throw Error("write failed");
    }
    void magic(std::string_view m) { bytes(m.data(), m.size()); }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u32(std::uint32_t v) { uint_le(v, 4); }
    void u64(std::uint64_t v) { uint_le(v, 8); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

private:
    void uint_le(std::uint64_t v, int width) {
        unsigned char buf[8];
        for (int i = 0; i < width; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
        bytes(buf, static_cast<std::size_t>(width));
    }
    std::ostream& os_;
};

// Every short read raises CorruptionError.
class Reader {
public:
    explicit Reader(std::istream& is) : is_(is) {}

    void bytes(void* p, std::size_t n) {
        is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n) throw CorruptionError("unexpected end of file");
    }
    void expect_magic(std::string_view m, const char* what) {
        std::string got(m.size(), '\0');
        is_.read(got.data(), static_cast<std::streamsize>(m.size()));
        if (static_cast<std::size_t>(is_.gcount()) != m.size() || got != m) {
            throw FormatError(std::string(what) + ": bad magic, expected \"" + std::string(m) + "\"");
        }
    }
    std::uint8_t u8() {
        std::uint8_t v;
        bytes(&v, 1);
        return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(uint_le(4)); }
    std::uint64_t u64() { return uint_le(8); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(std::size_t max_len = std::size_t{1} << 24) {
        const std::uint32_t n = u32();
        if (n > max_len) throw CorruptionError("string length " + std::to_string(n) + " too large");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }

private:
    std::uint64_t uint_le(int width) {
        unsigned char buf[8];
        bytes(buf, static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = width - 1; i >= 0; --i) v = (v << 8) | buf[i];
        return v;
    }
    std::istream& is_;
};

}  // namespace dnl::io
