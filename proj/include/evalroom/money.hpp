#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace evalroom {

/// Fixed-point currency amount with four fractional digits. Never constructed
/// from a binary float: the only text entry point is `Money::parse`.
class Money {
public:
    static constexpr std::int64_t kScale = 10'000;

    constexpr Money() = default;
    static constexpr Money from_units(std::int64_t units) { return Money{units}; }

    /// Accepts "12", "0.5", "0.50", "3.1415"; rejects signs other than a
    /// leading '-', exponents, more than four fractional digits and overflow.
    static Money parse(std::string_view text);

    constexpr std::int64_t units() const { return units_; }
    constexpr bool is_positive() const { return units_ > 0; }
    constexpr bool is_negative() const { return units_ < 0; }

    /// Shortest form with at least two fractional digits: "0.50", "1.2345".
    std::string to_string() const;

    Money& operator+=(Money other);
    friend Money operator+(Money a, Money b) { return a += b; }
    constexpr auto operator<=>(const Money&) const = default;

private:
    constexpr explicit Money(std::int64_t units) : units_(units) {}
    std::int64_t units_ = 0;
};

} // namespace evalroom
