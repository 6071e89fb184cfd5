#include "evalroom/money.hpp"

#include <limits>
#include <stdexcept>

namespace evalroom {

Money Money::parse(std::string_view text) {
    if (text.empty()) throw std::invalid_argument("empty amount");
    bool negative = false;
    std::size_t pos = 0;
    if (text[0] == '-') {
        negative = true;
        ++pos;
    }
    constexpr auto kMax = std::numeric_limits<std::int64_t>::max();
    std::int64_t whole = 0;
    std::size_t whole_digits = 0;
    for (; pos < text.size() && text[pos] != '.'; ++pos) {
        const char c = text[pos];
        if (c < '0' || c > '9') throw std::invalid_argument("bad amount '" + std::string(text) + "'");
        if (whole > (kMax / kScale - 9) / 10) throw std::invalid_argument("amount overflow");
        whole = whole * 10 + (c - '0');
        ++whole_digits;
    }
    std::int64_t frac = 0;
    std::size_t frac_digits = 0;
    if (pos < text.size()) {
        ++pos; // '.'
        for (; pos < text.size(); ++pos) {
            const char c = text[pos];
            if (c < '0' || c > '9') throw std::invalid_argument("bad amount '" + std::string(text) + "'");
            if (++frac_digits > 4) throw std::invalid_argument("more than four decimal places");
            frac = frac * 10 + (c - '0');
        }
        if (frac_digits == 0) throw std::invalid_argument("dangling decimal point");
    }
    if (whole_digits == 0) throw std::invalid_argument("missing integer part");
    for (std::size_t i = frac_digits; i < 4; ++i) frac *= 10;
    const std::int64_t units = whole * kScale + frac;
    return Money{negative ? -units : units};
}

std::string Money::to_string() const {
    const std::int64_t magnitude = units_ < 0 ? -units_ : units_;
    std::string frac = std::to_string(magnitude % kScale);
    frac.insert(0, 4 - frac.size(), '0');
    while (frac.size() > 2 && frac.back() == '0') frac.pop_back();
    return (units_ < 0 ? "-" : "") + std::to_string(magnitude / kScale) + "." + frac;
}

Money& Money::operator+=(Money other) {
    if (__builtin_add_overflow(units_, other.units_, &units_)) throw std::overflow_error("money overflow");
    return *this;
}

} // namespace evalroom
