#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <cassert>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace haarfact {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

inline double to_double(const Rational& q) { return q.convert_to<double>(); }

inline Rational pow2(long e) {
    if (e >= 0) return Rational(BigInt(1) << e);
    return Rational(1, BigInt(1) << (-e));
}

inline Rational rat_abs(const Rational& q) { return q < 0 ? Rational(-q) : q; }

// Canonical text form "num/den" ("num" when den == 1); parses both forms.
inline std::string format_rational(const Rational& q) {
    std::string s = numerator(q).str();
    if (denominator(q) != 1) s += "/" + denominator(q).str();
    return s;
}

inline Rational parse_rational(const std::string& s) {
    auto slash = s.find('/');
    try {
        if (slash == std::string::npos) return Rational(BigInt(s));
        BigInt num(s.substr(0, slash));
        BigInt den(s.substr(slash + 1));
        if (den == 0) throw std::invalid_argument("zero denominator");
        return Rational(num, den);
    } catch (const std::runtime_error& e) {
        throw std::invalid_argument(std::string("bad rational '") + s + "': " + e.what());
    }
}

// Exact power of two 2^(log2e) with rational exponent.  Closed under products;
// collapses to a Rational exactly when the exponent is an integer.
struct DyadPow {
    Rational log2e;

    static DyadPow one() { return {Rational(0)}; }
    static DyadPow from_log2(Rational e) { return {std::move(e)}; }

    bool integral() const { return denominator(log2e) == 1; }

    Rational rational_value() const {
        assert(integral());
        return pow2(static_cast<long>(numerator(log2e).convert_to<long long>()));
    }

    double double_value() const { return std::exp2(to_double(log2e)); }

    DyadPow operator*(const DyadPow& o) const { return {log2e + o.log2e}; }
    DyadPow inverse() const { return {-log2e}; }
};

// A certified nonnegative upper bound: either an exact rational or a binary64
// value kept as an upper bound by outward rounding on every operation.
struct Bound {
    bool exact = true;
    Rational q;      // authoritative when exact
    double d = 0.0;  // always an upper bound on the true value

    static Bound zero() { return {true, Rational(0), 0.0}; }

    static Bound exact_rational(Rational v) {
        assert(v >= 0);
        Bound b{true, std::move(v), 0.0};
        b.d = inflate(to_double(b.q));
        return b;
    }

    static Bound upper_double(double v) {
        assert(v >= 0);
        return {false, Rational(0), inflate(v)};
    }

    static Bound scaled(const Rational& r, const DyadPow& s) {
        if (s.integral()) return exact_rational(Rational(rat_abs(r) * s.rational_value()));
        return upper_double(std::fabs(to_double(r)) * s.double_value());
    }

    double value() const { return exact ? to_double(q) : d; }

    Rational rational_value() const {
        assert(exact);
        return q;
    }

    Bound operator+(const Bound& o) const {
        if (exact && o.exact) return exact_rational(Rational(q + o.q));
        return upper_double(value_upper() + o.value_upper());
    }

    Bound operator*(const Bound& o) const {
        if (exact && o.exact) return exact_rational(Rational(q * o.q));
        return upper_double(value_upper() * o.value_upper());
    }

    static Bound max(const Bound& a, const Bound& b) {
        if (a.exact && b.exact) return exact_rational(a.q < b.q ? b.q : a.q);
        double m = a.value_upper();
        double n = b.value_upper();
        return upper_double(m < n ? n : m);
    }

    bool leq(const Rational& r) const { return exact ? q <= r : Rational(d) <= r; }
    bool less(const Rational& r) const { return exact ? q < r : Rational(d) < r; }

    double value_upper() const { return exact ? inflate(to_double(q)) : d; }

  private:
    static double inflate(double v) { return v * (1.0 + 1e-13) + 1e-300; }
};

}  // namespace haarfact
