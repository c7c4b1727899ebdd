#pragma once

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "toposcope/model.hpp"
#include "toposcope/numeric.hpp"
#include "toposcope/wz.hpp"

namespace toposcope {

// Regular sampling of T^d, point (i_0, .., i_{d-1}) at k_a = 2 pi i_a / n_a.
// Flat index has the last axis fastest.
struct TorusGrid {
    std::vector<int> n;

    int dimension() const { return static_cast<int>(n.size()); }
    size_t size() const;
    size_t index(const std::vector<int>& i) const;
    std::vector<int> coords(size_t idx) const;
    KPoint k(size_t idx) const;
    // index of the grid point at -k
    size_t mirror(size_t idx) const;
    // neighbour along axis with offset (periodic)
    size_t shift(size_t idx, int axis, int off) const;
};

// Rank-m projector field on a torus grid, together with orthonormal frames
// spanning its range at each point (gauge arbitrary).
struct ProjectorField {
    TorusGrid grid;
    int rank = 0;
    std::vector<Mat> P;
    std::vector<Mat> frames;
    double min_gap = INFINITY;  // smallest distance of the spectrum to the cut
};

using FrameFunction = std::function<Mat(const KPoint&)>;

// Builds a field from per-k frames (columns must be orthonormal, constant count).
ProjectorField projector_field(const TorusGrid& grid, const FrameFunction& frame_at);

// Projectors onto eigenvalues below `fermi`. Throws NoGap naming the k-point
// if an eigenvalue is within gap_tol of fermi or the rank changes.
ProjectorField valence_projectors(const BlochField& H, const TorusGrid& grid, double fermi = 0.0,
                                  double gap_tol = kDefaultTol.gap);
ProjectorField valence_projectors(const CrystalModel& m, const TorusGrid& grid, double fermi = 0.0,
                                  double gap_tol = kDefaultTol.gap);

// max_k |theta P(k) theta^{-1} - P(-k)|
double projector_trs_defect(const ProjectorField& f, const AntiUnitary& theta);

struct ChernResult {
    int value = 0;           // lattice field-strength value, integer by construction
    double secondary = 0.0;  // direct discretization of (i/2pi) int tr P dP^dP
    double residual = 0.0;   // |secondary - value|
};

// d = 2 only. c1 = (i/2pi) int tr P (dP)^2 with orientation dk1 ^ dk2.
ChernResult chern_number(const ProjectorField& f);

// Maps on [0,1] x T^2 into U(N) with Phi(0,.) = Phi(1,.) = I.
using LoopMap = std::function<Mat(double t, const KPoint& k)>;

struct DegreeResult {
    int value = 0;
    double raw = 0.0;  // (1/2pi) int Phi^* H, orientation -dt ^ dk1 ^ dk2
    double residual = 0.0;
};

DegreeResult degree_of_loop_map(const LoopMap& phi, int nt, int nk);

// Frame on the grid that is continuous across every grid link including the
// periodic seams: overlap phases |arg det(F(k)^dagger F(k'))| < pi/2 and
// singular values of F(k)^dagger F(k') bounded away from 0.
struct SmoothFrame {
    TorusGrid grid;
    std::vector<Mat> frames;
    double max_step_phase = 0.0;
    double min_overlap = 1.0;
};

// d = 2. Throws Obstruction when the valence bundle has nonzero Chern number
// (detected as winding of the transport holonomy), NonConvergence if the
// resulting frame is not smooth on the given grid.
SmoothFrame smooth_trivialization(const ProjectorField& f);

// Null-homotopy of a closed loop of unitaries with zero determinant winding:
// returns N[j][i] for parameters t_j = j / (samples - 1), with N[0][i] = I and
// N[samples-1][i] = loop[i], continuous in (i, t) with loop index periodic.
std::vector<std::vector<Mat>> null_homotopy(const std::vector<Mat>& loop, int samples);

// w_ij(k) = <psi_i(-k)| theta psi_j(k)>
std::vector<Mat> sewing_matrices(const SmoothFrame& frame, const AntiUnitary& theta);

struct Z2Result {
    int value = 0;          // KM in {0, 1}
    double raw_re = 1.0;    // product prod sqrt(det w)/pf(w) before rounding
    double raw_im = 0.0;
    double residual = 0.0;  // distance of the raw product to +-1
    double path_residual = 0.0;  // disagreement between two TRIM-connecting path systems
    std::vector<int> grid;
    int refinements = 0;
};

using FieldBuilder = std::function<ProjectorField(const TorusGrid&)>;

// 2d Kane-Mele index from sewing matrices of a smooth frame. The grid is
// doubled (up to three times) when a sqrt(det w) step along a path exceeds
// pi/2 or the trivialization is not smooth.
Z2Result kane_mele_2d(const FieldBuilder& build, const AntiUnitary& theta, const TorusGrid& grid);
Z2Result kane_mele_2d(const CrystalModel& m, const AntiUnitary& theta, const TorusGrid& grid);

// Same product evaluated on a fixed field (no refinement).
Z2Result kane_mele_2d_on(const ProjectorField& f, const AntiUnitary& theta);

struct Z2Result3d {
    int strong = 0;
    // weak[i][a]: index on the sub-torus k_i = a*pi (i = 0,1,2; a = 0,1)
    std::array<std::array<int, 2>, 3> weak{};
    double residual = 0.0;
    bool consistent = true;  // strong == weak[i][1] - weak[i][0] mod 2 for all i
    std::vector<int> grid;
};

// Restriction of a 3d Bloch field to the plane k_axis = value; the remaining
// axes keep their order.
BlochField restrict_to_plane(const BlochField& H, int axis, double value);

Z2Result3d kane_mele_3d(const BlochField& H, const AntiUnitary& theta, const TorusGrid& grid);
Z2Result3d kane_mele_3d(const CrystalModel& m, const AntiUnitary& theta, const TorusGrid& grid);

// Independent lattice Z2: field strength summed over half the zone
// (0 <= k2 <= pi) with the time-reversal gauge constraint imposed on the
// two boundary lines, reduced mod 2.
struct LatticeZ2Result {
    int value = 0;
    double raw = 0.0;  // sum of integer plaquette charges before mod 2
};
LatticeZ2Result lattice_z2(const BlochField& H, const AntiUnitary& theta, const TorusGrid& grid,
                           double fermi = 0.0);

}  // namespace toposcope
