#include "resfit/format.hpp"

#include <cmath>
#include <cstdio>
#include <string>

namespace resfit {

std::string format_value_sigma(double value, double sigma) {
    char buf[64];
    if (!std::isfinite(sigma) || !(sigma > 0.0) || !std::isfinite(value)) {
        std::snprintf(buf, sizeof(buf), "%.9g", value);
        return buf;
    }
    int d = static_cast<int>(std::floor(std::log10(sigma)));
    long digit = std::lround(sigma / std::pow(10.0, d));
    if (digit == 10) {
        digit = 1;
        d += 1;
    }
    std::string out;
    if (d <= 0) {
        std::snprintf(buf, sizeof(buf), "%.*f", -d, value);
        out = buf;
        out += "(" + std::to_string(digit) + ")";
    } else {
        const double step = std::pow(10.0, d);
        std::snprintf(buf, sizeof(buf), "%.0f", std::round(value / step) * step);
        out = buf;
        out += "(" + std::to_string(digit) + std::string(static_cast<std::size_t>(d), '0') + ")";
    }
    return out;
}

std::string format_ghz(double frequency_hz) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.7f", frequency_hz / 1e9);
    return buf;
}

} // namespace resfit
