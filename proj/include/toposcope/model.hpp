#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "toposcope/numeric.hpp"

namespace toposcope {

// Crystal momentum in reduced coordinates, components in [0, 2pi).
using KPoint = std::vector<double>;

struct Site {
    std::vector<double> position;  // fractional
    int dim = 1;
};

// Amplitude from `source` in cell 0 to `target` in cell `offset`:
// contributes block * e^{i k.offset} to H(k)[target, source].
struct Hopping {
    std::vector<int> offset;
    int source = 0;
    int target = 0;
    Mat block;  // dim(target) x dim(source)
};

struct AntiUnitary {
    Mat U;               // theta = U K
    int squares_to = -1;

    // theta X theta^{-1} for a matrix X
    Mat conjugate(const Mat& X) const { return U * X.conjugate() * U.adjoint(); }
    Vec apply(const Vec& v) const { return U * v.conjugate(); }
    Mat apply(const Mat& frame) const { return U * frame.conjugate(); }
};

AntiUnitary make_antiunitary(const Mat& U, int squares_to);

class CrystalModel {
public:
    CrystalModel() = default;
    // Adds (-n, j, i, B^dagger) for every term lacking its partner; on-site
    // diagonal terms must be Hermitian and are kept once.
    CrystalModel(int dimension, std::vector<std::vector<double>> bravais, std::vector<Site> sites,
                 std::vector<Hopping> hoppings);

    int dimension() const { return dim_; }
    int bloch_dim() const { return n_; }
    int range() const { return range_; }  // max |offset component|
    int range_along(int axis) const;
    const std::vector<Site>& sites() const { return sites_; }
    const std::vector<Hopping>& hoppings() const { return hops_; }
    const std::vector<std::vector<double>>& bravais() const { return bravais_; }
    int site_offset(int s) const { return site_start_[static_cast<size_t>(s)]; }

    Mat bloch(const KPoint& k) const;

    // Linear combination a*this + b*other (same sites); used by drives.
    CrystalModel combined(double a, const CrystalModel& other, double b) const;

    // Full N x N hopping matrix per cell offset (Hermitian-closed).
    std::map<std::vector<int>, Mat> offset_matrices() const;
    static CrystalModel from_offset_matrices(int dimension, std::vector<std::vector<double>> bravais,
                                             std::vector<Site> sites,
                                             const std::map<std::vector<int>, Mat>& blocks);

private:
    int dim_ = 0;
    int n_ = 0;
    int range_ = 0;
    std::vector<std::vector<double>> bravais_;
    std::vector<Site> sites_;
    std::vector<int> site_start_;
    std::vector<Hopping> hops_;
};

using BlochField = std::function<Mat(const KPoint&)>;

inline BlochField field_of(const CrystalModel& m) {
    return [m](const KPoint& k) { return m.bloch(k); };
}

// Haldane model on the honeycomb lattice, sites (A, B), H(k) = d(k).sigma with
//   d_x = t (1 + cos k1 + cos k2), d_y = t (sin k1 + sin k2),
//   d_z = M + 2 t2 sin(phi) (sin k1 - sin(k1 - k2) - sin k2).
CrystalModel haldane_model(double t, double t2, double phi, double M);

struct KaneMeleParams {
    double t = 1.0;
    double t2 = 1.0 / 3.0;
    double phi = kPi / 2;
    double M = 0.0;        // staggered sublattice potential
    double rashba = 0.0;   // Rashba coupling lambda_R
};

// Spin-1/2 doubled Haldane model. Bloch basis is site-major:
// (A up, A down, B up, B down); theta = (I_sites (x) i sigma_y) K.
// Spin up carries Haldane(phi), spin down Haldane(-phi). The Rashba term
// couples the spins on nearest-neighbour bonds as
//   i lambda_R (s_x d_y - s_y d_x)  on the hop A <- B with bond vector d = r_B - r_A,
// using a1 = (sqrt3/2, 3/2), a2 = (-sqrt3/2, 3/2), A at 0, B at (0, 1).
struct KaneMele {
    CrystalModel model;
    AntiUnitary theta;
};
KaneMele kane_mele_model(const KaneMeleParams& p);

// I_{n_doublets} (x) i sigma_y: time reversal for a basis of spin-1/2 doublets.
AntiUnitary spin_half_theta(int n_doublets);

// max_k |theta H(k) theta^{-1} - H(-k)| on an n^d grid
double check_trs(const BlochField& H, const AntiUnitary& theta, int dimension, int n = 12);
double check_trs(const CrystalModel& m, const AntiUnitary& theta, int n = 12);

// Stacks a 2d model along a third axis with on-site interlayer block
// (same for every site, dim x dim) between neighbouring layers.
CrystalModel layered_3d_model(const CrystalModel& base, const Mat& interlayer);
CrystalModel layered_3d_model(const CrystalModel& base, double interlayer);

// Four-band Wilson-Dirac insulator on the cubic lattice (d = 2 or 3):
//   H = sum_i sin k_i G_i + (m - sum_i cos k_i) G_0,
// G_0 = tau_z, G_i = tau_x sigma_i. theta = (I (x) i sigma_y) K.
// In 3d the strong index is 1 for 1 < |m| < 3; in 2d KM = 1 for 0 < |m| < 2.
struct WilsonDirac {
    CrystalModel model;
    AntiUnitary theta;
};
WilsonDirac wilson_dirac_model(int dimension, double m);

// Random finite-range model: `n_sites` sites of `site_dim`, offsets in [-r, r]^d.
CrystalModel random_model(int dimension, int n_sites, int site_dim, int r, std::mt19937_64& rng,
                          double scale = 1.0);

// theta-symmetrized copy: hoppings h_n -> (h_n + U conj(h_{n}) U^dagger)/2 reassembled
// so that theta H(k) theta^{-1} = H(-k).
CrystalModel symmetrize_trs(const CrystalModel& m, const AntiUnitary& theta);

// Adds c*I to every on-site block.
CrystalModel shifted(const CrystalModel& m, double c);

// Piecewise-constant or modulated periodic drive.
class DriveProtocol {
public:
    struct Segment {
        double duration;
        CrystalModel model;
    };
    struct Component {
        CrystalModel model;
        std::function<double(double)> coefficient;  // periodic in t with period T
    };

    static DriveProtocol piecewise(std::vector<Segment> segments);
    static DriveProtocol modulated(double period, std::vector<Component> components);

    double period() const { return T_; }
    int dimension() const;
    int bloch_dim() const;
    bool is_piecewise() const { return !segments_.empty(); }
    const std::vector<Segment>& segments() const { return segments_; }
    const std::vector<Component>& components() const { return components_; }

    // H(t, k) with t taken mod T.
    Mat hamiltonian(double t, const KPoint& k) const;

    // Segment boundaries in [0, T] (empty for modulated drives).
    std::vector<double> breakpoints() const;

private:
    double T_ = 1.0;
    std::vector<Segment> segments_;
    std::vector<Component> components_;
};

// Grid helpers -----------------------------------------------------------

// The 2^d TRIM in reduced coordinates, in binary order over axes.
std::vector<KPoint> trim_points(int dimension);

KPoint negate(const KPoint& k);

}  // namespace toposcope
