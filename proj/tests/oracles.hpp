#pragma once
// Test-only reference implementations. Slow and simple on purpose; none of
// this is linked into the library.

#include <array>
#include <cmath>
#include <vector>

#include "toposcope/numeric.hpp"

namespace oracle {

using toposcope::cplx;
using toposcope::Mat;

// Sum over perfect matchings with crossing sign.
inline cplx pfaffian_pairings(const Mat& A, std::vector<int> idx) {
    if (idx.empty()) return 1.0;
    int first = idx[0];
    cplx total = 0.0;
    for (size_t j = 1; j < idx.size(); ++j) {
        std::vector<int> rest;
        for (size_t m = 1; m < idx.size(); ++m)
            if (m != j) rest.push_back(idx[m]);
        double sign = (j % 2 == 1) ? 1.0 : -1.0;
        total += sign * A(first, idx[j]) * pfaffian_pairings(A, rest);
    }
    return total;
}

inline cplx pfaffian_pairings(const Mat& A) {
    std::vector<int> idx;
    for (int i = 0; i < A.rows(); ++i) idx.push_back(i);
    return pfaffian_pairings(A, idx);
}

// Matrix exponential by scaled Taylor series, independent of eigensolvers.
inline Mat expm_taylor(const Mat& X) {
    double nrm = X.cwiseAbs().rowwise().sum().maxCoeff();
    int s = 0;
    while (nrm > 0.25) { nrm /= 2; ++s; }
    Mat Y = X / std::pow(2.0, s);
    Mat term = Mat::Identity(X.rows(), X.cols());
    Mat out = term;
    for (int k = 1; k < 30; ++k) {
        term = term * Y / static_cast<double>(k);
        out += term;
    }
    for (int i = 0; i < s; ++i) out = out * out;
    return out;
}

inline Mat random_antisymmetric(int n, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Mat A = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            A(i, j) = cplx(g(rng), g(rng));
            A(j, i) = -A(i, j);
        }
    return A;
}

// Degree of k -> d(k)/|d(k)| on the 2-torus: triangulate each grid cell into
// two positively oriented triangles and sum signed solid angles
// (Van Oosterom-Strackee).
template <class D>
double sphere_degree(D d_of, int n) {
    auto unit = [&](double k1, double k2) {
        std::array<double, 3> v = d_of(k1, k2);
        double r = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        return std::array<double, 3>{v[0] / r, v[1] / r, v[2] / r};
    };
    auto dot = [](const std::array<double, 3>& a, const std::array<double, 3>& b) {
        return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    };
    auto tri = [&](const std::array<double, 3>& a, const std::array<double, 3>& b, const std::array<double, 3>& c) {
        std::array<double, 3> bc{b[1] * c[2] - b[2] * c[1], b[2] * c[0] - b[0] * c[2], b[0] * c[1] - b[1] * c[0]};
        return 2.0 * std::atan2(dot(a, bc), 1.0 + dot(a, b) + dot(b, c) + dot(c, a));
    };
    const double h = 2.0 * M_PI / n;
    double total = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            auto p00 = unit(i * h, j * h), p10 = unit((i + 1) * h, j * h);
            auto p01 = unit(i * h, (j + 1) * h), p11 = unit((i + 1) * h, (j + 1) * h);
            total += tri(p00, p10, p11) + tri(p00, p11, p01);
        }
    return total / (4.0 * M_PI);
}

}  // namespace oracle
