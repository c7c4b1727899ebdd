#pragma once

#include <iosfwd>
#include <vector>

#include "toposcope/model.hpp"
#include "toposcope/numeric.hpp"

namespace toposcope {

// Base crystal cut open along one lattice axis and kept W cells wide. Hoppings
// that leave the strip are dropped. The remaining axes stay periodic, in order.
struct StripModel {
    CrystalModel base;
    int open_axis = 0;
    int width = 0;

    int bloch_dim() const { return width * base.bloch_dim(); }
    int parallel_dimension() const { return base.dimension() - 1; }
};

// Throws ContractViolation if width < 2 * range along the open axis.
StripModel make_strip(const CrystalModel& base, int open_axis, int width);

// Strip Bloch matrix, cell-major: row x * N + a is orbital a of cell x.
Mat strip_hamiltonian(const StripModel& strip, const KPoint& k_par);

// The strip as a crystal of dimension d - 1 with W * N orbitals (d >= 2).
CrystalModel strip_crystal(const StripModel& strip);

// Drive with every model replaced by its strip crystal.
DriveProtocol strip_drive(const DriveProtocol& drive, int open_axis, int width);

enum class EdgeSide { bulk, low, high };

const char* side_name(EdgeSide s);

struct EdgeOptions {
    double outer_fraction = 0.2;  // share of cells counted as an edge on each side
    double threshold = 0.6;       // weight above which a state is assigned to that edge
};

// Spectrum of a strip on a list of parallel momenta. For a uniform periodic
// line (one parallel dimension) `next[j][a]` is the state at k_{j+1} with the
// largest overlap with state a at k_j, which is what the counters follow.
struct EdgeSpectrum {
    std::vector<KPoint> k;
    double period = 0.0;               // 0: energies; T: quasi-energies in (-2pi/T, 0]
    std::vector<RVec> values;          // ascending per k
    std::vector<RVec> weight_low;      // probability in the low-side outer cells
    std::vector<RVec> weight_high;
    std::vector<std::vector<EdgeSide>> side;
    std::vector<std::vector<int>> next;  // empty unless uniform periodic line
    EdgeOptions options;

    bool uniform_line() const { return !next.empty(); }
};

EdgeSpectrum edge_spectrum(const StripModel& strip, const std::vector<KPoint>& k_par, const EdgeOptions& opt = {});
// k_j = 2 pi j / nk on a strip with one periodic direction.
EdgeSpectrum edge_spectrum(const StripModel& strip, int nk, const EdgeOptions& opt = {});

// Quasi-energy spectrum of the strip monodromy on a uniform line.
EdgeSpectrum floquet_edge_spectrum(const DriveProtocol& drive, int open_axis, int width, int nk, int steps,
                                   const EdgeOptions& opt = {});

// Signed crossings of the level `energy` by edge-assigned branches, sign of
// the slope dE/dk. Crossings by states on neither edge go to `unassigned`.
struct ChiralCount {
    int low = 0;
    int high = 0;
    int unassigned = 0;
};

// Throws MeshTooCoarse on a crossing with |slope| < 1e-6 or two crossing
// states following the same successor.
ChiralCount count_chiral_modes(const EdgeSpectrum& spec, double energy);

// For a 2d base: the high edge carries c1 when the open axis is 0 and the low
// edge when it is 1 (orientation dk1 ^ dk2).
int edge_chern(const ChiralCount& c, int open_axis);

struct KramersCount {
    int low = 0;   // parity of the number of Kramers pairs crossing on this edge
    int high = 0;
    int crossings_low = 0;
    int crossings_high = 0;
};

// Throws MeshTooCoarse if an edge has an odd number of crossings.
KramersCount count_kramers_pairs(const EdgeSpectrum& spec, double energy);

// CSV columns: k_par (one column per parallel axis), eigenvalue, localization, edge_side.
void write_spectrum_csv(std::ostream& os, const EdgeSpectrum& spec);

}  // namespace toposcope
