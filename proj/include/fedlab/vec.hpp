#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace fedlab {

// Flat parameter vector in the canonical layout produced by flatten().
using ParamVector = std::vector<double>;

namespace vec {

inline void check_same_size(const ParamVector& a, const ParamVector& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("vector size mismatch: " +
                                    std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()));
}

inline double dot(const ParamVector& a, const ParamVector& b) {
    check_same_size(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const ParamVector& a) {
    return std::sqrt(dot(a, a));
}

inline ParamVector add(const ParamVector& a, const ParamVector& b) {
    check_same_size(a, b);
    ParamVector r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
    return r;
}

inline ParamVector sub(const ParamVector& a, const ParamVector& b) {
    check_same_size(a, b);
    ParamVector r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

inline ParamVector scale(const ParamVector& a, double s) {
    ParamVector r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = s * a[i];
    return r;
}

// y += alpha * x
inline void axpy(ParamVector& y, double alpha, const ParamVector& x) {
    check_same_size(y, x);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

inline double linf_diff(const ParamVector& a, const ParamVector& b) {
    check_same_size(a, b);
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

inline bool has_nan(const ParamVector& a) {
    for (double x : a)
        if (std::isnan(x) || std::isinf(x)) return true;
    return false;
}

inline ParamVector zeros(std::size_t n) { return ParamVector(n, 0.0); }

} // namespace vec
} // namespace fedlab
