#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

namespace radreport::fastmath {

// Polynomial expf (Cephes-style range reduction), relative error ~2e-7.
// Plain arithmetic so the surrounding loops auto-vectorize; the double
// overload stays on libm, keeping the gradient-check path exact.
inline float fast_exp(float x) {
    x = std::min(std::max(x, -88.0f), 88.0f);
    const float log2e = 1.44269504088896341f;
    const float z = x * log2e;
    const float n = std::floor(z + 0.5f);
    const float r = x - n * 0.693359375f + n * 2.12194440e-4f;

    float p = 1.9875691500e-4f;
    p = p * r + 1.3981999507e-3f;
    p = p * r + 8.3334519073e-3f;
    p = p * r + 4.1665795894e-2f;
    p = p * r + 1.6666665459e-1f;
    p = p * r + 5.0000001201e-1f;
    p = p * r * r + r + 1.0f;

    // scale by 2^n via exponent bits
    const auto exponent = static_cast<int32_t>(n) + 127;
    const uint32_t bits = static_cast<uint32_t>(exponent) << 23;
    return p * std::bit_cast<float>(bits);
}

inline double fast_exp(double x) { return std::exp(x); }

// Abramowitz & Stegun 7.1.26 rational erf, absolute error < 1.5e-7.
inline float fast_erf(float x) {
    const float sign = std::copysign(1.0f, x);
    const float a = std::fabs(x);
    const float t = 1.0f / (1.0f + 0.3275911f * a);
    float poly = 1.061405429f;
    poly = poly * t - 1.453152027f;
    poly = poly * t + 1.421413741f;
    poly = poly * t - 0.284496736f;
    poly = poly * t + 0.254829592f;
    poly *= t;
    return sign * (1.0f - poly * fast_exp(-a * a));
}

inline double fast_erf(double x) { return std::erf(x); }

}  // namespace radreport::fastmath
