#pragma once

#include <array>
#include <functional>
#include <vector>

#include "toposcope/numeric.hpp"

namespace toposcope {

// One coordinate axis of a box-shaped 3d region. A periodic axis carries n
// samples lo + i h with h = (hi - lo)/n; a closed axis carries n + 1 samples
// including both ends (n even, n >= 4).
struct Axis {
    double lo = 0.0;
    double hi = 1.0;
    int n = 8;
    bool periodic = true;

    int samples() const { return periodic ? n : n + 1; }
    double step() const { return (hi - lo) / n; }
    double at(int i) const { return lo + i * step(); }
};

using Axes3 = std::array<Axis, 3>;
using UnitaryField3 = std::function<Mat(double, double, double)>;

// Samples stored with the last axis fastest: ((i0 * n1) + i1) * n2 + i2.
std::vector<Mat> sample_field(const UnitaryField3& phi, const Axes3& axes);

struct WzResult {
    double integral = 0.0;   // approximates int (1/12pi) tr(g^-1 dg)^3 over the box
    double max_step = 0.0;   // largest |lambda - 1| over single-step ratios
};

// Discretization: right-trivialized derivatives R_mu = d_mu g g^{-1} from
// fourth-order finite differences of log(g(x + s e_mu) g(x)^{-1}), density
// (1/4pi) tr(R_1 [R_2, R_3]), trapezoid along periodic axes and Simpson
// along closed ones. Throws MeshTooCoarse when a single-step ratio has
// |lambda - 1| >= 1.
WzResult wz_density_integral(const std::vector<Mat>& samples, const Axes3& axes);
WzResult wz_density_integral(const UnitaryField3& phi, const Axes3& axes);

// Principal logarithm of a unitary close to the identity (anti-Hermitian).
Mat log_unitary(const Mat& U);

}  // namespace toposcope
