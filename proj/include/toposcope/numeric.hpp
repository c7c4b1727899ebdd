#pragma once

#include <complex>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "toposcope/errors.hpp"

namespace toposcope {

using cplx = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;
using RVec = Eigen::VectorXd;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

struct Tolerances {
    double hermiticity = 1e-10;
    double unitarity = 1e-9;
    double gap = 1e-6;
};

inline const Tolerances kDefaultTol{};

double hermiticity_defect(const Mat& M);
double unitarity_defect(const Mat& U);

struct Eigh {
    RVec values;   // ascending
    Mat vectors;   // columns
};

Eigh eigh(const Mat& M, double herm_tol = kDefaultTol.hermiticity);

// exp(-i t H) for Hermitian H.
Mat expm_herm(const Mat& H, double t = 1.0);

// Eigen-decomposition of a unitary (normal) matrix through the complex
// Schur form, so the frame is orthonormal even inside degenerate blocks.
struct UnitaryEig {
    Vec lambda;
    Mat frame;
};

UnitaryEig unitary_eig(const Mat& V, double unit_tol = kDefaultTol.unitarity);

// Angle a with e^{-ia} = lambda and eps < a <= eps + 2pi.
double phase_in_window(cplx lambda, double eps);

// Throws BranchCut if some eigenvalue sits within gap_tol of e^{-i eps}.
void check_branch(const UnitaryEig& ue, double eps, double gap_tol = kDefaultTol.gap);

// H with spectrum in (eps, eps+2pi) and exp(-iH) = V.
Mat branch_log(const UnitaryEig& ue, double eps, double gap_tol = kDefaultTol.gap);
Mat branch_log(const Mat& V, double eps, double gap_tol = kDefaultTol.gap);

// Projector onto eigenvalues e^{-ia} with a in (eps1, eps2) mod 2pi, i.e. the
// clockwise arc from e^{-i eps1} to e^{-i eps2}. Needs eps1 <= eps2 <= eps1 + 2pi.
Mat spectral_projector(const UnitaryEig& ue, double eps1, double eps2,
                       double gap_tol = kDefaultTol.gap);
Mat spectral_projector(const Mat& V, double eps1, double eps2,
                       double gap_tol = kDefaultTol.gap);

// Orthonormal frame spanning the range of spectral_projector (columns).
Mat spectral_frame(const UnitaryEig& ue, double eps1, double eps2,
                   double gap_tol = kDefaultTol.gap);

// Pfaffian of an even-dimensional antisymmetric matrix.
cplx pfaffian(const Mat& A, double skew_tol = 1e-9);

using HamiltonianOfTime = std::function<Mat(double)>;

// Time-ordered exp(-i int_0^T H dt), midpoint rule per step.
Mat evolve(const HamiltonianOfTime& H, double T, int steps);

// Same, but returns U(t_j) at t_j = j T / steps for j = 0..steps.
std::vector<Mat> evolve_trajectory(const HamiltonianOfTime& H, double T, int steps);

// Branch angle in (-2pi, 0) at the middle of the widest eigenvalue-free arc.
double gap_center(const Mat& V, double gap_tol = kDefaultTol.gap);
double gap_center(const UnitaryEig& ue, double gap_tol = kDefaultTol.gap);

// Smallest angular distance between e^{-i eps} and the spectrum.
double branch_distance(const UnitaryEig& ue, double eps);

Mat random_hermitian(int n, std::mt19937_64& rng, double scale = 1.0);
Mat random_unitary(int n, std::mt19937_64& rng);

}  // namespace toposcope
