#pragma once

#include <array>
#include <functional>
#include <map>
#include <utility>
#include <vector>

#include "toposcope/model.hpp"
#include "toposcope/numeric.hpp"
#include "toposcope/wz.hpp"

namespace toposcope {

// Unitary field on the torus [0, Lu) x [0, Lv), evaluated at arbitrary points.
using SurfaceField = std::function<Mat(double u, double v)>;

struct Quadrature {
    std::vector<double> x;  // nodes in (0, 1)
    std::vector<double> w;  // weights, summing to 1
};

// Gauss-Legendre rule on [0, 1].
Quadrature gauss_legendre(int order);

// Quadrilateral mesh of the torus with the involution (u, v) -> (-u, -v),
// either the whole torus or one of the halves u in [0, Lu/2] / v in [0, Lv/2]
// (a fundamental domain F for the involution). Faces are counter-clockwise in
// (u, v); boundary edges carry the orientation induced from the faces.
struct SurfaceMesh {
    enum class Region { Torus, HalfU, HalfV };

    int nu = 0, nv = 0;
    double period_u = kTwoPi, period_v = kTwoPi;
    Region region = Region::Torus;
    bool ell_upper = false;  // l taken in the second half of each boundary circle

    std::vector<int> vertices;                 // vertices present in the region
    std::vector<std::array<int, 2>> faces;     // lower-left grid corner (i, j)
    std::vector<std::array<int, 2>> boundary;  // directed (from, to) vertex pairs
    std::vector<std::array<int, 2>> ell;       // subset of boundary, half of each circle
    std::vector<int> fixed_points;             // fixed vertices of the involution on the boundary

    int vertex(int i, int j) const;  // wraps periodically
    std::array<int, 2> grid(int v) const;
    std::array<double, 2> coords(int v) const;
    int involution(int v) const;
    double hu() const { return period_u / nu; }
    double hv() const { return period_v / nv; }
    // corners of face f in counter-clockwise order, unwrapped grid coordinates
    std::array<std::array<int, 2>, 4> face_corners(size_t f) const;
    static std::pair<int, int> edge_key(int a, int b) { return a < b ? std::pair{a, b} : std::pair{b, a}; }
};

// nu, nv even and >= 4. Throws ContractViolation otherwise.
SurfaceMesh make_surface_mesh(int nu, int nv, SurfaceMesh::Region region = SurfaceMesh::Region::Torus,
                              double period_u = kTwoPi, double period_v = kTwoPi, bool ell_upper = false);

// Branch angles defining local sections of the gerbe's cover: s_c(k) = (eps_c, phi(k)).
struct GerbeLift {
    std::vector<double> face_eps;                   // per face of the mesh
    std::map<std::pair<int, int>, double> edge_eps;  // per undirected edge
    std::map<int, double> vertex_eps;               // boundary fixed points
};

// L_{from,to} at a mesh vertex. L_{x,y} for x > y is the dual of L_{y,x}.
struct Slot {
    int vertex = -1;
    double from = 0.0;
    double to = 0.0;
};

struct LineElement {
    cplx value{1.0, 0.0};
    std::vector<Slot> anchors;
};

// Eigenbasis of a unitary with columns ordered by ascending angle a in
// (-2pi, 0], lambda = e^{-ia}. Frames of arcs are taken as column blocks, so
// the basis of an arc (a, c) is the concatenation of those of (a, b), (b, c).
struct VertexBasis {
    Mat frame;
    Vec lambda;
    std::vector<double> alpha;
};

VertexBasis vertex_basis(const Mat& V);
// Basis at the mirrored point: columns theta u in reversed order.
VertexBasis reflected_basis(const VertexBasis& b, const AntiUnitary& theta);
Mat arc_frame(const VertexBasis& b, double eps1, double eps2);

struct CurvingOptions {
    int t_order = 8;         // Gauss-Legendre nodes in the homotopy parameter
    int face_order = 4;      // nodes per direction on the face
    double fd_step = 1e-4;   // relative step of the central differences
    double gap_tol = 1e-6;
    double tol = 1e-9;       // adaptive subdivision of the face until two levels agree
    int max_depth = 4;       // 0 disables subdivision
};

// int over the face [u0, u0 + hu] x [v0, v0 + hv] of s^*B for s = (eps, phi),
// B = int_0^1 iota_{d/dt} h^*H dt along h(t) = exp(-i t H_eps(phi)).
double curving_integral(const SurfaceField& phi, double u0, double v0, double hu, double hv, double eps,
                        const CurvingOptions& opt = {});

using PathField = std::function<Mat(double s)>;  // s in [0, 1]

// Parallel transport in L_{eps_from, eps_to} along path(s), s: 0 -> 1,
// relative to the arc frames of the given end-point bases. Anchored at
// (v0: L^-1) and (v1: L). Throws BranchCut when an angle meets the spectrum
// or the arc rank changes along the path. Steps are doubled (with Richardson
// extrapolation) until the phase changes by at most tol or max_samples is hit.
LineElement edge_transport(const PathField& path, const VertexBasis& start, const VertexBasis& end, int v0,
                           int v1, double eps_from, double eps_to, int samples = 8,
                           double gap_tol = kDefaultTol.gap, double tol = 1e-10, int max_samples = 512);

// Cancels slots vertex by vertex using the gluing isomorphisms (all of which
// act as 1 on the concatenated arc bases). Remaining slots are returned.
std::vector<Slot> contract_anchors(const std::vector<Slot>& anchors);

struct HolonomyOptions {
    CurvingOptions curving;
    int edge_samples = 8;       // sub-samples per edge for transports and lift checks
    double transport_tol = 1e-10;
    int max_edge_samples = 512;
    double margin = 0.02;       // minimal distance of branch angles to the spectrum
    int max_refinements = 4;
    unsigned long long lift_seed = 0;  // 0: gap centres; otherwise random admissible angles
};

struct FaceRecord {
    int face = 0;
    double eps = 0.0;
    double curving = 0.0;
};

struct TransportRecord {
    int face = 0;
    int from_vertex = 0, to_vertex = 0;
    double eps_face = 0.0, eps_edge = 0.0;
    int rank = 0;
    cplx value{1.0, 0.0};
};

struct HolonomyResult {
    cplx value{1.0, 0.0};
    double curving_total = 0.0;
    int nu = 0, nv = 0;
    int refinements = 0;
    GerbeLift lift;
    std::vector<FaceRecord> faces;
    std::vector<TransportRecord> transports;
};

// Chooses a lift on the mesh; faces or edges without an admissible angle are
// reported through the return flag (false).
bool choose_lift(const SurfaceField& phi, const SurfaceMesh& mesh, const HolonomyOptions& opt, GerbeLift& out,
                 const AntiUnitary* theta = nullptr);

// Holonomy on a closed torus mesh with a given lift.
HolonomyResult surface_holonomy(const SurfaceField& phi, const SurfaceMesh& mesh, const GerbeLift& lift,
                                const HolonomyOptions& opt = {});
// Automatic lift; the mesh is doubled when no admissible lift exists.
HolonomyResult surface_holonomy(const SurfaceField& phi, int nu, int nv, double period_u = kTwoPi,
                                double period_v = kTwoPi, const HolonomyOptions& opt = {});

struct SqrtHolonomyResult {
    cplx value{1.0, 0.0};
    int nu = 0, nv = 0;
    int refinements = 0;
    bool ell_upper = false;
    double ell_eps = 0.0;               // common angle on l (NaN if per edge)
    std::array<int, 4> fixed_sign{};    // +-1 from the sqrt(det) continuation, per fixed point
    std::array<cplx, 4> pfaffian{};     // pf <u_i|theta u_j> at the fixed points
    HolonomyResult half;                // holonomy data on F
};

// Square root of the holonomy of an equivariant field, phi(-k) = theta phi(k)
// theta^-1, theta^2 = -1. F is the half u in [0, Lu/2] (or v, see region).
SqrtHolonomyResult sqrt_holonomy_equivariant(const SurfaceField& phi, const AntiUnitary& theta, const SurfaceMesh& mesh,
                                             const GerbeLift& lift, const HolonomyOptions& opt = {});
SqrtHolonomyResult sqrt_holonomy_equivariant(const SurfaceField& phi, const AntiUnitary& theta, int nu, int nv,
                                             double period_u = kTwoPi, double period_v = kTwoPi,
                                             SurfaceMesh::Region region = SurfaceMesh::Region::HalfU,
                                             const HolonomyOptions& opt = {});

// 3d torus with periods L and involution x -> -x. The fundamental domain is
// x_a in [0, L_a/2] for the chosen axis a; its boundary tori carry coordinates
// (x_{a+1}, x_{a+2}) (cyclic), positively oriented at x_a = L_a/2.
struct VolumeMesh {
    std::array<double, 3> period{1.0, kTwoPi, kTwoPi};
    std::array<int, 3> n{32, 32, 32};
    int half_axis = 0;
};

struct Index3dResult {
    int value = 1;
    cplx raw{1.0, 0.0};
    double residual = 0.0;      // |raw - value|
    double volume_integral = 0.0;
    cplx sqrt_upper{1.0, 0.0};  // at x_a = L_a/2
    cplx sqrt_lower{1.0, 0.0};  // at x_a = 0
};

struct Index3dOptions {
    HolonomyOptions holonomy;
    int surface_n = 0;          // surface mesh per direction (0: from the volume mesh)
    int max_refinements = 2;    // volume mesh doublings on MeshTooCoarse
};

Index3dResult index3d(const UnitaryField3& Phi, const AntiUnitary& theta, const VolumeMesh& mesh,
                      const Index3dOptions& opt = {});

// Checks Phi(-x) = theta Phi(x) theta^-1 on the grid; returns the largest defect.
double equivariance_defect(const UnitaryField3& Phi, const AntiUnitary& theta, const VolumeMesh& mesh);
double equivariance_defect(const SurfaceField& phi, const AntiUnitary& theta, const SurfaceMesh& mesh);

// Piecewise interpolation of grid samples (n_u x n_v, row-major in u) onto a
// surface field: bilinear in each cell followed by the unitary polar part.
SurfaceField interpolate_samples(const std::vector<Mat>& samples, int nu, int nv, double period_u = kTwoPi,
                                 double period_v = kTwoPi);

}  // namespace toposcope
