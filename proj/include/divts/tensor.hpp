#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "divts/error.hpp"

namespace divts {

// Dense [batch x channels x time] buffer, row-major with time contiguous.
// Flat feature matrices reuse the same type with t == 1.
struct Tensor {
    int n = 0;  // batch
    int c = 0;  // channels (or features when t == 1)
    int t = 0;  // time steps

    std::vector<double> v;

    Tensor() = default;
    Tensor(int n_, int c_, int t_) : n(n_), c(c_), t(t_), v(static_cast<std::size_t>(n_) * c_ * t_, 0.0) {}

    static Tensor flat(int n_, int f_) { return Tensor(n_, f_, 1); }

    std::size_t size() const { return v.size(); }

    double* row(int in, int ic) { return v.data() + (static_cast<std::size_t>(in) * c + ic) * t; }
    const double* row(int in, int ic) const { return v.data() + (static_cast<std::size_t>(in) * c + ic) * t; }

    double& at(int in, int ic, int it) { return v[(static_cast<std::size_t>(in) * c + ic) * t + it]; }
    double at(int in, int ic, int it) const { return v[(static_cast<std::size_t>(in) * c + ic) * t + it]; }

    // Collapse channels x time into a flat feature axis; layout is unchanged.
    Tensor& reshape_flat() {
        c = c * t;
        t = 1;
        return *this;
    }

    bool finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

inline void check_shape(bool ok, const char* what) {
    if (!ok) fail(Err::ShapeMismatch, what);
}

// Plain row-major matrix for embeddings, centroids, and probe features.
struct Mat {
    int rows = 0, cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

    double* row(int i) { return a.data() + static_cast<std::size_t>(i) * cols; }
    const double* row(int i) const { return a.data() + static_cast<std::size_t>(i) * cols; }
};

// Hot-loop kernels. The dot product runs eight independent accumulator
// chains so the compiler can keep the FMA pipeline full without being asked
// to reassociate a single serial reduction.
inline double dot(const double* __restrict a, const double* __restrict b, int n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0, s4 = 0.0, s5 = 0.0, s6 = 0.0, s7 = 0.0;
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        s4 += a[i + 4] * b[i + 4];
        s5 += a[i + 5] * b[i + 5];
        s6 += a[i + 6] * b[i + 6];
        s7 += a[i + 7] * b[i + 7];
    }
    double s = ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline void axpy(double* __restrict y, double alpha, const double* __restrict x, int n) {
    for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace divts
