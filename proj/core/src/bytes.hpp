#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

namespace fedstgd::detail {

inline void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes)
{
    for (int i = 0; i < bytes; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

inline void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }
inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) { put_le(out, v, 2); }
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) { put_le(out, v, 4); }
inline void put_f64(std::vector<std::uint8_t>& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v), 8); }

inline void put_f64s(std::vector<std::uint8_t>& out, std::span<const double> values)
{
    const std::size_t at = out.size();
    out.resize(at + 8 * values.size());
    if constexpr (std::endian::native == std::endian::little) {
        if (!values.empty()) std::memcpy(out.data() + at, values.data(), 8 * values.size());
    } else {
        for (std::size_t i = 0; i < values.size(); ++i) {
            const auto bits = std::bit_cast<std::uint64_t>(values[i]);
            for (int b = 0; b < 8; ++b) out[at + 8 * i + b] = static_cast<std::uint8_t>(bits >> (8 * b));
        }
    }
}

inline std::uint64_t get_le(const std::uint8_t* p, int bytes)
{
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
        v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    }
    return v;
}

/// Bounds-checked little-endian reader. Reads past the end set `overrun`
/// and return zero instead of touching memory.
class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return size_ - pos_; }
    bool overrun() const { return overrun_; }

    std::uint64_t read(int bytes)
    {
        if (overrun_ || remaining() < static_cast<std::size_t>(bytes)) {
            overrun_ = true;
            return 0;
        }
        const std::uint64_t v = get_le(data_ + pos_, bytes);
        pos_ += static_cast<std::size_t>(bytes);
        return v;
    }
    std::uint8_t u8() { return static_cast<std::uint8_t>(read(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(read(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(read(4)); }
    double f64() { return std::bit_cast<double>(read(8)); }

    void f64s(std::span<double> out)
    {
        if (overrun_ || remaining() / 8 < out.size()) {
            overrun_ = true;
            return;
        }
        if constexpr (std::endian::native == std::endian::little) {
            if (!out.empty()) std::memcpy(out.data(), data_ + pos_, 8 * out.size());
        } else {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<double>(get_le(data_ + pos_ + 8 * i, 8));
        }
        pos_ += 8 * out.size();
    }

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    bool overrun_ = false;
};

} // namespace fedstgd::detail
