#pragma once

#include <array>
#include <functional>
#include <vector>

#include "toposcope/gerbe.hpp"
#include "toposcope/model.hpp"
#include "toposcope/numeric.hpp"
#include "toposcope/static_invariants.hpp"

namespace toposcope {

// Time-periodic Bloch Hamiltonian H(t, k), t in [0, T). For piecewise-constant
// schedules `breakpoints` lists the switching times including 0 and T, and each
// constant piece is exponentiated exactly; otherwise evolution uses midpoint
// steps on a fixed grid of `steps` per period.
struct FloquetSystem {
    double period = 1.0;
    int dimension = 2;
    int bloch_dim = 0;
    std::function<Mat(double, const KPoint&)> hamiltonian;
    std::vector<double> breakpoints;
};

FloquetSystem floquet_system(const DriveProtocol& drive);

// The system on the sub-torus k_axis = value (one dimension less).
FloquetSystem restrict_system(const FloquetSystem& s, int axis, double value);

// max over an n^d grid and a time grid of |theta H(t,k) theta^-1 - H(-t,-k)|
double drive_trs_defect(const FloquetSystem& s, const AntiUnitary& theta, int n = 8, int nt = 16);

// U(t1, k) U(t0, k)^-1 for 0 <= t0 <= t1 <= T.
Mat propagate(const FloquetSystem& s, const KPoint& k, double t0, double t1, int steps);
// U(t_j, k) at t_j = j T / nt, j = 0..nt.
std::vector<Mat> trajectory(const FloquetSystem& s, const KPoint& k, int nt, int steps);

struct MonodromyField {
    TorusGrid grid;
    double period = 1.0;
    std::vector<Mat> U;  // U(T, k) per grid point
};

MonodromyField monodromy(const FloquetSystem& s, const TorusGrid& grid, int steps);
MonodromyField monodromy(const DriveProtocol& drive, const TorusGrid& grid, int steps);

// max_k |theta U(T,k) theta^-1 - U(T,-k)^-1|
double monodromy_trs_defect(const MonodromyField& m, const AntiUnitary& theta);

// Quasi-energy interval free of spectrum at every grid point. lo and hi are
// not reduced mod 2pi/T, so a gap through the window edge stays one interval.
struct QuasiGap {
    double lo = 0.0, hi = 0.0;
    double mid = 0.0;  // centre reduced into (-2pi/T, 0)
    double center() const { return mid; }
    double width() const { return hi - lo; }
};

struct QuasiEnergyBands {
    TorusGrid grid;
    double period = 1.0;
    std::vector<std::vector<double>> e;  // per grid point, ascending in (-2pi/T, 0]
    std::vector<QuasiGap> gaps;          // common gaps by ascending centre, wider than gap_tol / T
};

QuasiEnergyBands quasienergy_bands(const MonodromyField& m, double gap_tol = kDefaultTol.gap);

// Smallest distance (quasi-energy units) of eps to the quasi-energies, mod 2pi/T.
double gap_distance(const MonodromyField& m, double eps);

// (1/T) branch_log(U(T,k), eps T): spectrum in (eps, eps + 2pi/T). Throws NoGap.
std::vector<Mat> effective_hamiltonian(const MonodromyField& m, double eps, double gap_tol = kDefaultTol.gap);
Mat effective_hamiltonian(const FloquetSystem& s, const KPoint& k, double eps, int steps,
                          double gap_tol = kDefaultTol.gap);

// V_eps(t, k) = U(t, k) exp(i t H^eff_eps(k)), t taken mod T. Throws NoGap.
Mat periodized_evolution(const FloquetSystem& s, double eps, double t, const KPoint& k, int steps,
                         double gap_tol = kDefaultTol.gap);

// (t, k1, k2) -> V_eps for d = 2, with H^eff cached per k. Throws NoGap.
UnitaryField3 periodized_field(const FloquetSystem& s, double eps, int steps, double gap_tol = kDefaultTol.gap);
// k -> V_eps(t, k) on T^3 for d = 3.
UnitaryField3 periodized_slice(const FloquetSystem& s, double eps, double t, int steps,
                               double gap_tol = kDefaultTol.gap);

struct WindingResult {
    int value = 0;
    double raw = 0.0;  // (1/2pi) int V^*H with orientation -dt ^ dk1 ^ dk2
    double residual = 0.0;
    int nt = 0, nk = 0;
};

// Degree of V_eps over [0, T] x T^2; the mesh is doubled (max 3 times) when too coarse.
WindingResult winding_W(const FloquetSystem& s, double eps, int nk = 32, int nt = 32, int steps = 256);

struct FloquetK2dResult {
    int value = 0;                 // K_eps in {0, 1}
    Index3dResult index;           // fundamental domain [0, T/2] x BZ
    Index3dResult cross_check;     // fundamental domain R/TZ x {0 <= k1 <= pi}
    bool consistent = true;
};

struct FloquetOptions {
    int nk = 16;
    int nt = 16;
    int steps = 256;
    bool cross_check = true;
    Index3dOptions index;
    double gap_tol = kDefaultTol.gap;
};

FloquetK2dResult floquet_K2d(const FloquetSystem& s, double eps, const AntiUnitary& theta,
                             const FloquetOptions& opt = {});

struct FloquetK3dResult {
    int strong = 0;
    std::array<std::array<int, 2>, 3> weak{};  // weak[i][a]: sub-torus k_i = a pi
    bool consistent = true;                    // strong = weak[i][1] - weak[i][0] mod 2 for all i
    Index3dResult strong_index;
};

FloquetK3dResult floquet_K3d(const FloquetSystem& s, double eps, const AntiUnitary& theta,
                             const FloquetOptions& opt = {});

// Reference drive on the honeycomb lattice (Kane-Mele geometry, spin-1/2):
// the period is split into six equal steps; in step j only one nearest-
// neighbour bond family carries hopping J, cycling (1,2,3,1,2,3) for spin up
// and (3,2,1,3,2,1) for spin down, which makes the drive time-reversal
// symmetric. J T / 6 = (pi/2) transfer; transfer = 1 moves every bulk
// particle once around a hexagon. A staggered potential M is on throughout.
// A fraction static_fraction of the period is spent in a static Kane-Mele
// model, split evenly before and after the hopping steps.
struct ReferenceDriveParams {
    double period = 1.0;
    double transfer = 1.0;
    double M = 0.5;
    double static_fraction = 0.5;
    KaneMeleParams static_model{};
};

struct ReferenceDrive {
    DriveProtocol drive;
    AntiUnitary theta;
};

ReferenceDrive reference_drive(const ReferenceDriveParams& p = {});

// Hopping steps only (transfer 0.6, M = 1): a single quasi-energy gap, through 0.
ReferenceDriveParams anomalous_drive_params();

}  // namespace toposcope
