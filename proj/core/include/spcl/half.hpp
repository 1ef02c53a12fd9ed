#pragma once

#include <cstdint>
#include <cstring>

namespace spcl {

/// IEEE 754 binary16 conversion, round-to-nearest-even. Used only as a
/// storage format for heatmaps; all arithmetic happens in float.
inline uint16_t float_to_half(float f) {
    uint32_t x;
    std::memcpy(&x, &f, 4);
    const uint32_t sign = (x >> 16) & 0x8000u;
    uint32_t mag = x & 0x7fffffffu;

    if (mag >= 0x7f800000u) {  // inf / nan
        uint16_t mant = (mag > 0x7f800000u) ? 0x0200 : 0;
        return static_cast<uint16_t>(sign | 0x7c00u | mant);
    }
    if (mag >= 0x477ff000u) return static_cast<uint16_t>(sign | 0x7c00u);  // overflow -> inf

    int32_t exp = static_cast<int32_t>(mag >> 23) - 127 + 15;
    uint32_t mant = mag & 0x007fffffu;
    if (exp <= 0) {
        if (exp < -10) return static_cast<uint16_t>(sign);  // underflow -> 0
        mant |= 0x00800000u;
        const int shift = 14 - exp;
        const uint32_t rounded = (mant + (1u << (shift - 1)) - 1 + ((mant >> shift) & 1)) >> shift;
        return static_cast<uint16_t>(sign | rounded);
    }
    // round mantissa to 10 bits, nearest-even
    const uint32_t round_bit = 1u << 12;
    mant += (round_bit - 1) + ((mant >> 13) & 1);
    if (mant & 0x00800000u) {
        mant = 0;
        ++exp;
        if (exp >= 31) return static_cast<uint16_t>(sign | 0x7c00u);
    }
    return static_cast<uint16_t>(sign | (static_cast<uint32_t>(exp) << 10) | (mant >> 13));
}

inline float half_to_float(uint16_t h) {
    const uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
    const uint32_t exp = (h >> 10) & 0x1fu;
    const uint32_t mant = h & 0x3ffu;
    uint32_t x;
    if (exp == 0) {
        if (mant == 0) {
            x = sign;
        } else {  // subnormal: normalize
            int e = -1;
            uint32_t m = mant;
            do {
                ++e;
                m <<= 1;
            } while ((m & 0x400u) == 0);
            x = sign | static_cast<uint32_t>(127 - 15 - e) << 23 | ((m & 0x3ffu) << 13);
        }
    } else if (exp == 31) {
        x = sign | 0x7f800000u | (mant << 13);
    } else {
        x = sign | ((exp - 15 + 127) << 23) | (mant << 13);
    }
    float f;
    std::memcpy(&f, &x, 4);
    return f;
}

}  // namespace spcl
