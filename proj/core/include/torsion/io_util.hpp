#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace torsion {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts need byte swaps");

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

inline void write_u64(std::ostream& os, uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), 8);
}

inline void write_f32(std::ostream& os, float v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

inline uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw IoError("unexpected end of file");
    return v;
}

inline uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw IoError("unexpected end of file");
    return v;
}

inline float read_f32(std::istream& is) {
    float v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw IoError("unexpected end of file");
    return v;
}

// CRC-32 (IEEE 802.3 polynomial, reflected)
class Crc32 {
  public:
    Crc32() : crc_(0xffffffffu) {}

    void update(const void* data, size_t len) {
        const auto* p = static_cast<const uint8_t*>(data);
        uint32_t c = crc_;
        for (size_t i = 0; i < len; ++i) c = table()[(c ^ p[i]) & 0xffu] ^ (c >> 8);
        crc_ = c;
    }

    uint32_t value() const { return crc_ ^ 0xffffffffu; }

    static uint32_t of(const void* data, size_t len) {
        Crc32 c;
        c.update(data, len);
        return c.value();
    }

  private:
    static const std::array<uint32_t, 256>& table() {
        static const std::array<uint32_t, 256> t = [] {
            std::array<uint32_t, 256> v{};
            for (uint32_t i = 0; i < 256; ++i) {
                uint32_t c = i;
                for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
                v[i] = c;
            }
            return v;
        }();
        return t;
    }

    uint32_t crc_;
};

// Shortest round-trip decimal for a double (17 significant digits).
inline std::string fmt_full(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

} // namespace torsion
